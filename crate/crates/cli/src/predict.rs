use anyhow::{bail, Result};
use goalshape_core::cloud::ply::{read_ply, write_ply, PlyFormat};
use goalshape_core::goalnet::{forward_goal, load_model, ModelParams};
use goalshape_core::{fps_downsample, PointCloud};
use serde_json::json;

use crate::args::PredictArgs;
use crate::provenance::{sidecar, write_run_json};

/// Downsamples `cloud` to `n` points by FPS; fewer than `n` is an error.
pub fn fit_count(cloud: &PointCloud, n: usize, what: &str) -> Result<PointCloud> {
    if cloud.len() < n {
        bail!("{what} has {} points, the model expects {n}", cloud.len());
    }
    if cloud.len() == n {
        return Ok(cloud.clone());
    }
    Ok(fps_downsample(cloud, n)?)
}

/// Predicted goal, rounded to the 32-bit precision it is stored with.
pub fn predict_goal(params: &ModelParams, current: &PointCloud, context: &PointCloud) -> Result<PointCloud> {
    let current = fit_count(current, params.n, "current cloud")?;
    let context = fit_count(context, params.n, "context cloud")?;
    Ok(forward_goal(&current, &context, params)?.quantized_f32())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PointCloud> {
    let params = load_model(&args.model, None)?;
    let current = read_ply(&args.current)?;
    let context = read_ply(&args.context)?;
    let goal = predict_goal(&params, &current, &context)?;
    write_ply(&args.out, &goal, PlyFormat::Ascii)?;
    write_run_json(&sidecar(&args.out), "predict", args, json!({ "n_points": params.n }))?;
    Ok(goal)
}
