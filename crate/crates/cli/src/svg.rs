use std::fmt::Write;

use crate::stats::{summarize, Summary};

/// One box of a box plot.
#[derive(Debug, Clone)]
pub struct BoxGroup {
    pub size: usize,
    pub repeat: usize,
    pub values: Vec<f64>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Box-and-whisker plot (min, quartiles, median, max) of each group, in the
/// given order. Median lines carry `data-size`, `data-repeat` and
/// `data-median` attributes with the exact plotted values.
pub fn box_plot(title: &str, y_label: &str, groups: &[BoxGroup]) -> String {
    let stats: Vec<Option<Summary>> = groups.iter().map(|g| summarize(g.values.iter().copied())).collect();
    let (mut lo, mut hi) = stats
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| {
            (l.min(s.min), h.max(s.max))
        });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1e-300) {
        (lo, hi) = (lo - 0.5 * lo.abs().max(1e-12), hi + 0.5 * hi.abs().max(1e-12));
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1:.2}" x2="{LEFT}" y2="{1:.2}" stroke="black"/><text x="{2}" y="{3:.2}" text-anchor="end">{4:.3e}</text>"#,
            LEFT - 5.0,
            y(v),
            LEFT - 8.0,
            y(v) + 4.0,
            v
        );
    }

    let slot = plot_w / groups.len().max(1) as f64;
    let half = (0.3 * slot).min(30.0);
    for (i, (g, st)) in groups.iter().zip(&stats).enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{0}" text-anchor="middle">n={1}</text><text x="{cx:.2}" y="{2}" text-anchor="middle">rep {3}</text>"#,
            TOP + plot_h + 18.0,
            g.size,
            TOP + plot_h + 34.0,
            g.repeat
        );
        let Some(st) = st else { continue };
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(st.max),
            y(st.min)
        );
        let _ = writeln!(
            s,
            r##"<rect class="box" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y(st.q3),
            2.0 * half,
            (y(st.q1) - y(st.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r##"<line class="median" data-size="{}" data-repeat="{}" data-median="{}" x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="#d62728" stroke-width="2"/>"##,
            g.size,
            g.repeat,
            st.median,
            cx - half,
            cx + half,
            ym = y(st.median),
        );
    }
    s.push_str("</svg>\n");
    s
}
