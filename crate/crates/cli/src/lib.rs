//! Command-line pipeline: scripted data generation, goal-network training,
//! prediction, evaluation and dataset-size ablations.

pub mod args;
pub mod eval;
pub mod gen_data;
pub mod predict;
pub mod provenance;
pub mod reproduce;
pub mod stats;
pub mod svg;
pub mod train;

use anyhow::{Context, Result};

use args::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .context("starting worker threads")?;
    pool.install(|| match &cli.command {
        Command::GenData(a) => gen_data::cmd_gen_data(a).map(|_| ()),
        Command::Train(a) => train::cmd_train(a).map(|_| ()),
        Command::Predict(a) => predict::cmd_predict(a).map(|_| ()),
        Command::Eval(a) => eval::cmd_eval(a),
        Command::Reproduce(a) => reproduce::cmd_reproduce(a).map(|_| ()),
    })
}
