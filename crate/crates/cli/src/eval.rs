use std::path::Path;

use anyhow::Result;
use goalshape_core::cloud::chamfer;
use goalshape_core::demo::{read_dataset, Demonstration};
use goalshape_core::goalnet::{load_model, ModelParams};
use goalshape_core::servo::{run_episode, GoalSource, ServoConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{EvalArgs, EvalMode};
use crate::predict::predict_goal;
use crate::provenance::{csv_writer, sidecar, write_run_json};
use crate::stats::{summarize, Summary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalRow {
    pub demo: usize,
    pub scene_seed: u64,
    /// Chamfer between predicted and demonstrated goal, m².
    pub chamfer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServoRow {
    pub demo: usize,
    pub scene_seed: u64,
    pub iterations: usize,
    pub initial_metric: f64,
    pub final_metric: f64,
    pub initial_chamfer: f64,
    pub final_chamfer: f64,
    pub termination: String,
    /// Error message of an episode that could not run.
    pub detail: String,
}

pub fn eval_goals(params: &ModelParams, demos: &[Demonstration]) -> Result<Vec<GoalRow>> {
    demos
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let pred = predict_goal(params, &d.current, &d.context)?;
            Ok(GoalRow {
                demo: i,
                scene_seed: d.scene.rng_seed,
                chamfer: chamfer(&pred, &d.goal),
            })
        })
        .collect()
}

/// One servo episode per demonstration scene, toward the predicted goal.
/// An episode that fails to run is recorded with NaN metrics.
pub fn eval_servo(params: &ModelParams, demos: &[Demonstration]) -> Vec<ServoRow> {
    let config = ServoConfig {
        n_points: params.n,
        ..ServoConfig::default()
    };
    demos
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let seed = d.scene.rng_seed;
            let run = predict_goal(params, &d.current, &d.context)
                .and_then(|goal| Ok(run_episode(&d.scene, &goal, GoalSource::Learned, &config)?));
            match run {
                Ok(r) => {
                    info!("scene {seed}: {:.1}% after {} iterations", r.final_metric, r.iterations);
                    ServoRow {
                        demo: i,
                        scene_seed: seed,
                        iterations: r.iterations,
                        initial_metric: r.initial_metric,
                        final_metric: r.final_metric,
                        initial_chamfer: r.initial_chamfer(),
                        final_chamfer: r.final_chamfer(),
                        termination: r.termination.as_str().to_string(),
                        detail: String::new(),
                    }
                }
                Err(e) => {
                    warn!("scene {seed}: episode failed: {e:#}");
                    ServoRow {
                        demo: i,
                        scene_seed: seed,
                        iterations: 0,
                        initial_metric: f64::NAN,
                        final_metric: f64::NAN,
                        initial_chamfer: f64::NAN,
                        final_chamfer: f64::NAN,
                        termination: "error".into(),
                        detail: format!("{e:#}"),
                    }
                }
            }
        })
        .collect()
}

/// Labels of the summary rows appended after the per-demo rows.
pub const SUMMARY_ROWS: [&str; 3] = ["q1", "median", "q3"];

fn pick(s: &Option<Summary>, label: &str) -> String {
    match (s, label) {
        (Some(s), "q1") => s.q1.to_string(),
        (Some(s), "median") => s.median.to_string(),
        (Some(s), "q3") => s.q3.to_string(),
        _ => String::new(),
    }
}

pub fn write_goal_report(path: &Path, rows: &[GoalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["demo", "scene_seed", "chamfer"])?;
    for r in rows {
        w.serialize(r)?;
    }
    let s = summarize(rows.iter().map(|r| r.chamfer));
    for label in SUMMARY_ROWS {
        w.write_record([label, "", &pick(&s, label)])?;
    }
    w.flush()?;
    Ok(())
}

pub const SERVO_COLUMNS: [&str; 9] = [
    "demo",
    "scene_seed",
    "iterations",
    "initial_metric",
    "final_metric",
    "initial_chamfer",
    "final_chamfer",
    "termination",
    "detail",
];

pub fn write_servo_report(path: &Path, rows: &[ServoRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SERVO_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    let stats = [
        summarize(rows.iter().filter(|r| r.detail.is_empty()).map(|r| r.iterations as f64)),
        summarize(rows.iter().map(|r| r.initial_metric)),
        summarize(rows.iter().map(|r| r.final_metric)),
        summarize(rows.iter().map(|r| r.initial_chamfer)),
        summarize(rows.iter().map(|r| r.final_chamfer)),
    ];
    for label in SUMMARY_ROWS {
        let mut rec = vec![label.to_string(), String::new()];
        rec.extend(stats.iter().map(|s| pick(s, label)));
        rec.extend([String::new(), String::new()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (manifest, demos) = read_dataset(&args.test)?;
    let params = load_model(&args.model, Some(manifest.n_points))?;
    match args.mode {
        EvalMode::Goals => {
            let rows = eval_goals(&params, &demos)?;
            write_goal_report(&args.report, &rows)?;
            if let Some(s) = summarize(rows.iter().map(|r| r.chamfer)) {
                info!("median goal chamfer {:.3e} over {} demos", s.median, s.count);
            }
        }
        EvalMode::Servo => {
            let rows = eval_servo(&params, &demos);
            write_servo_report(&args.report, &rows)?;
            if let Some(s) = summarize(rows.iter().map(|r| r.final_metric)) {
                info!(
                    "median final {} metric {:.1}% over {} episodes",
                    manifest.task, s.median, s.count
                );
            }
        }
    }
    write_run_json(&sidecar(&args.report), "eval", args, json!({ "task": manifest.task }))
}
