use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use goalshape_core::demo::{read_dataset, subset_indices, Demonstration};
use goalshape_core::goalnet::TrainConfig;
use goalshape_core::sim::Task;
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{GenDataArgs, ReproduceArgs};
use crate::eval::{eval_goals, eval_servo, write_goal_report, write_servo_report, GoalRow, ServoRow};
use crate::gen_data::cmd_gen_data;
use crate::provenance::{csv_writer, write_run_json};
use crate::stats::{summarize, Summary};
use crate::svg::{box_plot, BoxGroup};
use crate::train::train_to;

/// One trained model: a training-set size and a repeat index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub size: usize,
    pub repeat: usize,
    /// Seed of the random subset, absent when the whole pool is used.
    pub subset_seed: Option<u64>,
    pub train_seed: u64,
    /// Indices into the training pool.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub final_loss: f64,
    pub goals: Vec<GoalRow>,
    pub servo: Vec<ServoRow>,
}

impl CellResult {
    pub fn goal_chamfer(&self) -> Option<Summary> {
        summarize(self.goals.iter().map(|r| r.chamfer))
    }

    pub fn final_metric(&self) -> Option<Summary> {
        summarize(self.servo.iter().map(|r| r.final_metric))
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Retraction => "success percentage",
        Task::Wrapping => "coverage percentage",
    }
}

/// Seeds derived from `--seed`: the training pool and the test set use
/// generation seeds `2s` and `2s + 1`; repeat `r` trains with seed
/// `1000s + r` and draws its subsets with the same seed.
fn derived(seed: u64, k: u64, r: u64) -> Result<u64> {
    seed.checked_mul(k)
        .and_then(|s| s.checked_add(r))
        .with_context(|| format!("--seed {seed} too large"))
}

pub fn plan_cells(sizes: &[usize], repeats: usize, pool: usize, seed: u64) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &size in sizes {
        for repeat in 0..repeats {
            let train_seed = derived(seed, 1000, repeat as u64)?;
            let (subset_seed, indices) = if size == pool {
                (None, (0..pool).collect())
            } else {
                (Some(train_seed), subset_indices(pool, size, train_seed)?)
            };
            cells.push(Cell {
                size,
                repeat,
                subset_seed,
                train_seed,
                indices,
            });
        }
    }
    Ok(cells)
}

fn run_cell(
    cell: &Cell,
    pool: &[Demonstration],
    test: &[Demonstration],
    epochs: usize,
    out: &Path,
) -> Result<CellResult> {
    let name = format!("n{}_r{}", cell.size, cell.repeat);
    let demos: Vec<Demonstration> = cell.indices.iter().map(|&i| pool[i].clone()).collect();
    let config = TrainConfig {
        epochs,
        seed: cell.train_seed,
        ..TrainConfig::default()
    };
    let model_dir = out.join("models").join(&name);
    let model = model_dir.join("model.bin");
    info!("{name}: training on {} demonstrations", demos.len());
    let outcome = train_to(&demos, &config, &model, json!({ "cell": cell }))
        .with_context(|| format!("stage train {name} failed"))?;
    write_run_json(&model_dir.join("run.json"), "train", &config, json!({ "cell": cell }))?;

    let reports = out.join("reports");
    info!("{name}: evaluating goals");
    let goals = eval_goals(&outcome.params, test).with_context(|| format!("stage eval goals {name} failed"))?;
    write_goal_report(&reports.join(format!("{name}_goals.csv")), &goals)?;
    info!("{name}: evaluating servo episodes");
    let servo = eval_servo(&outcome.params, test);
    write_servo_report(&reports.join(format!("{name}_servo.csv")), &servo)?;
    Ok(CellResult {
        cell: cell.clone(),
        final_loss: outcome.log.epochs.last().map_or(f64::NAN, |e| e.mean_loss),
        goals,
        servo,
    })
}

pub const COMBINED_COLUMNS: [&str; 12] = [
    "experiment",
    "size",
    "repeat",
    "demo",
    "scene_seed",
    "goal_chamfer",
    "iterations",
    "initial_metric",
    "final_metric",
    "initial_chamfer",
    "final_chamfer",
    "termination",
];

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "size",
    "repeat",
    "subset_seed",
    "train_seed",
    "goal_chamfer_q1",
    "goal_chamfer_median",
    "goal_chamfer_q3",
    "final_metric_q1",
    "final_metric_median",
    "final_metric_q3",
    "servo_failures",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_outputs(args: &ReproduceArgs, results: &[CellResult]) -> Result<()> {
    let path = args.out.join("combined.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(COMBINED_COLUMNS)?;
    for r in results {
        for (g, s) in r.goals.iter().zip(&r.servo) {
            w.write_record([
                args.experiment.as_str().to_string(),
                r.cell.size.to_string(),
                r.cell.repeat.to_string(),
                g.demo.to_string(),
                g.scene_seed.to_string(),
                g.chamfer.to_string(),
                s.iterations.to_string(),
                s.initial_metric.to_string(),
                s.final_metric.to_string(),
                s.initial_chamfer.to_string(),
                s.final_chamfer.to_string(),
                s.termination.clone(),
            ])?;
        }
    }
    w.flush()?;

    let path = args.out.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in results {
        let (c, m) = (r.goal_chamfer(), r.final_metric());
        w.write_record([
            r.cell.size.to_string(),
            r.cell.repeat.to_string(),
            opt(r.cell.subset_seed),
            r.cell.train_seed.to_string(),
            opt(c.map(|s| s.q1)),
            opt(c.map(|s| s.median)),
            opt(c.map(|s| s.q3)),
            opt(m.map(|s| s.q1)),
            opt(m.map(|s| s.median)),
            opt(m.map(|s| s.q3)),
            r.servo.iter().filter(|s| !s.detail.is_empty()).count().to_string(),
        ])?;
    }
    w.flush()?;

    let task = args.experiment.task();
    let groups = |f: &dyn Fn(&CellResult) -> Vec<f64>| -> Vec<BoxGroup> {
        results
            .iter()
            .map(|r| BoxGroup {
                size: r.cell.size,
                repeat: r.cell.repeat,
                values: f(r),
            })
            .collect()
    };
    let chamfers = groups(&|r| r.goals.iter().map(|g| g.chamfer).collect());
    let metrics = groups(&|r| r.servo.iter().map(|s| s.final_metric).collect());
    fs::write(
        args.out.join("goal_chamfer.svg"),
        box_plot(&format!("{task}: predicted goal Chamfer"), "Chamfer (m²)", &chamfers),
    )?;
    fs::write(
        args.out.join("final_metric.svg"),
        box_plot(&format!("{task}: servo {}", metric_name(task)), "%", &metrics),
    )?;
    Ok(())
}

pub fn cmd_reproduce(args: &ReproduceArgs) -> Result<Vec<CellResult>> {
    let sizes: Vec<usize> = args
        .sizes
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    ensure!(!sizes.is_empty() && sizes[0] > 0, "--sizes must be positive");
    ensure!(args.repeats > 0, "--repeats must be at least 1");
    ensure!(args.epochs > 0, "--epochs must be at least 1");
    ensure!(args.test_count > 0, "--test-count must be at least 1");
    let pool_size = *sizes.last().expect("nonempty");
    let task = args.experiment.task();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let pool_args = GenDataArgs {
        task,
        count: pool_size,
        seed: derived(args.seed, 2, 0)?,
        out: args.out.join("data").join("train"),
    };
    let test_args = GenDataArgs {
        task,
        count: args.test_count,
        seed: derived(args.seed, 2, 1)?,
        out: args.out.join("data").join("test"),
    };
    for (what, a) in [("training pool", &pool_args), ("test set", &test_args)] {
        info!("generating the {what}: {} {task} demonstrations", a.count);
        cmd_gen_data(a).with_context(|| format!("stage gen-data ({what}) failed"))?;
    }
    let (_, pool) = read_dataset(&pool_args.out).context("stage gen-data (training pool) failed")?;
    let (_, test) = read_dataset(&test_args.out).context("stage gen-data (test set) failed")?;
    let seen: BTreeSet<u64> = pool.iter().map(|d| d.scene.rng_seed).collect();
    if let Some(d) = test.iter().find(|d| seen.contains(&d.scene.rng_seed)) {
        bail!("test scene {} is also in the training pool", d.scene.rng_seed);
    }

    fs::create_dir_all(args.out.join("reports"))?;
    let cells = plan_cells(&sizes, args.repeats, pool_size, args.seed)?;
    let results = cells
        .par_iter()
        .map(|c| run_cell(c, &pool, &test, args.epochs, &args.out))
        .collect::<Result<Vec<_>>>()?;
    write_outputs(args, &results)?;
    write_run_json(
        &args.out.join("run.json"),
        "reproduce",
        args,
        json!({ "cells": cells, "train_pool_seed": pool_args.seed, "test_seed": test_args.seed }),
    )?;
    for r in &results {
        info!(
            "n={} repeat {}: median goal chamfer {}, median {} {}",
            r.cell.size,
            r.cell.repeat,
            opt(r.goal_chamfer().map(|s| s.median)),
            metric_name(task),
            opt(r.final_metric().map(|s| s.median)),
        );
    }
    Ok(results)
}
