use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use goalshape_core::demo::{demonstrate, write_dataset, DemoConfig, Demonstration, Manifest};
use goalshape_core::sim::{build_scene, Task};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::GenDataArgs;
use crate::provenance::{csv_writer, write_run_json};

/// Candidate scenes tried per requested demonstration before giving up.
pub const OVERSAMPLE: usize = 5;
/// Scene seeds of one generation seed occupy `[seed·STRIDE, seed·STRIDE + STRIDE)`.
pub const SEED_STRIDE: u64 = 1_000_000;

pub fn scene_seed(seed: u64, candidate: usize) -> Result<u64> {
    seed.checked_mul(SEED_STRIDE)
        .and_then(|s| s.checked_add(candidate as u64))
        .with_context(|| format!("scene seed overflows for generation seed {seed}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub candidate: usize,
    pub scene_seed: u64,
    pub error: String,
}

/// Demonstrations for the first `count` candidate scenes that succeed, in
/// candidate order, plus the failures met on the way. Candidates are tried
/// in rounds of exactly the number still missing, so the result does not
/// depend on the thread count.
pub fn generate(task: Task, count: usize, seed: u64, config: &DemoConfig) -> Result<(Vec<Demonstration>, Vec<Reject>)> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let limit = count * OVERSAMPLE;
    if limit as u64 > SEED_STRIDE {
        bail!("--count {count} too large");
    }
    let mut demos = Vec::with_capacity(count);
    let mut rejects = Vec::new();
    let mut next = 0;
    while demos.len() < count && next < limit {
        let end = (next + count - demos.len()).min(limit);
        let seeds = (next..end)
            .map(|i| scene_seed(seed, i).map(|s| (i, s)))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<_> = seeds
            .par_iter()
            .map(|&(i, s)| (i, s, demonstrate(&build_scene(task, s), config)))
            .collect();
        for (candidate, scene_seed, result) in results {
            match result {
                Ok((_, demo)) => demos.push(demo),
                Err(e) => {
                    warn!("scene {scene_seed} rejected: {e}");
                    rejects.push(Reject {
                        candidate,
                        scene_seed,
                        error: e.to_string(),
                    });
                }
            }
        }
        info!("{} of {count} demonstrations after {end} candidates", demos.len());
        next = end;
    }
    Ok((demos, rejects))
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["candidate", "scene_seed", "error"])?;
    for r in rejects {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Manifest> {
    let (demos, rejects) = generate(args.task, args.count, args.seed, &DemoConfig::default())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_rejects(&args.out.join("rejects.csv"), &rejects)?;
    write_run_json(
        &args.out.join("run.json"),
        "gen-data",
        args,
        json!({ "oversample": OVERSAMPLE, "seed_stride": SEED_STRIDE }),
    )?;
    if demos.len() < args.count {
        bail!(
            "only {} of {} {} demonstrations succeeded in {} candidate scenes (see {})",
            demos.len(),
            args.count,
            args.task,
            args.count * OVERSAMPLE,
            args.out.join("rejects.csv").display()
        );
    }
    let manifest = write_dataset(&demos, &args.out)?;
    info!("wrote {} demonstrations to {}", manifest.count, args.out.display());
    Ok(manifest)
}
