use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use goalshape_core::demo::{read_dataset, Demonstration};
use goalshape_core::goalnet::{save_model, train, LossConfig, TrainConfig, TrainLog, TrainOutcome};
use log::info;
use serde_json::{json, Value};

use crate::args::TrainArgs;
use crate::provenance::{csv_writer, write_run_json};

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        loss: LossConfig {
            lambda_chamfer: args.lambda_chamfer,
            lambda_emd: args.lambda_emd,
            ..LossConfig::default()
        },
        seed: args.seed,
        n: args.n_points,
    }
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "mean_loss", "mean_chamfer"])?;
    for e in &log.epochs {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains on `demos` and writes the checkpoint to `out`, with
/// `train_log.csv` beside it. `details` is stored in the checkpoint header.
pub fn train_to(demos: &[Demonstration], config: &TrainConfig, out: &Path, details: Value) -> Result<TrainOutcome> {
    let outcome = train(demos, config)?;
    let dir = parent_dir(out);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let header = json!({ "train": config, "details": details });
    save_model(&outcome.params, &header, out).with_context(|| format!("writing {}", out.display()))?;
    write_train_log(&dir.join("train_log.csv"), &outcome.log)?;
    if let Some(last) = outcome.log.epochs.last() {
        info!("{}: final mean loss {:.3e}", out.display(), last.mean_loss);
    }
    Ok(outcome)
}

pub fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let (manifest, demos) = read_dataset(&args.data)?;
    let config = train_config(args);
    let details = json!({ "data": args.data, "seeds": manifest.seeds });
    let outcome = train_to(&demos, &config, &args.out, details.clone())?;
    write_run_json(&parent_dir(&args.out).join("run.json"), "train", args, details)?;
    Ok(outcome)
}
