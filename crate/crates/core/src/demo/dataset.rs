//! Dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/demo_00000/{current.ply, context.ply, goal.ply, scene.json, commands.csv}
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Command, CommandKind, Demonstration};
use crate::cloud::ply::{read_ply, write_ply, PlyFormat};
use crate::cloud::Vec3;
use crate::error::{Error, Result};
use crate::sim::{Scene, Task};

pub const MANIFEST: &str = "manifest.json";
const FORMAT_TAG: &str = "goalshape-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub n_points: usize,
    pub count: usize,
    /// Scene seed of each demonstration, in directory order.
    pub seeds: Vec<u64>,
}

fn demo_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("demo_{i:05}"))
}

/// Writes `demos` under `dir`, creating it if needed. Clouds are stored as
/// 32-bit floats, so demonstrations should already be quantized for an exact
/// round trip.
pub fn write_dataset(demos: &[Demonstration], dir: &Path) -> Result<Manifest> {
    let first = demos
        .first()
        .ok_or_else(|| Error::invalid("cannot write an empty dataset"))?;
    let n = first.current.len();
    for (i, d) in demos.iter().enumerate() {
        if d.task != first.task {
            return Err(Error::invalid(format!("demo {i} task differs from demo 0")));
        }
        for c in [&d.current, &d.context, &d.goal] {
            if c.len() != n {
                return Err(Error::SizeMismatch(c.len(), n));
            }
        }
    }
    fs::create_dir_all(dir)?;
    for (i, d) in demos.iter().enumerate() {
        let sub = demo_dir(dir, i);
        fs::create_dir_all(&sub)?;
        write_ply(&sub.join("current.ply"), &d.current, PlyFormat::Ascii)?;
        write_ply(&sub.join("context.ply"), &d.context, PlyFormat::Ascii)?;
        write_ply(&sub.join("goal.ply"), &d.goal, PlyFormat::Ascii)?;
        let json = serde_json::to_string_pretty(&d.scene).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(sub.join("scene.json"), json + "\n")?;
        write_commands(&sub.join("commands.csv"), &d.commands)?;
    }
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: 1,
        task: first.task,
        n_points: n,
        count: demos.len(),
        seeds: demos.iter().map(|d| d.scene.rng_seed).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::corrupt(&path, format!("cannot read: {e}")))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
    if m.format != FORMAT_TAG || m.version != 1 {
        return Err(Error::corrupt(
            &path,
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    if m.seeds.len() != m.count {
        return Err(Error::corrupt(
            &path,
            format!("count {} but {} seeds", m.count, m.seeds.len()),
        ));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Demonstration>)> {
    let manifest = read_manifest(dir)?;
    let mut demos = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let sub = demo_dir(dir, i);
        let current = read_ply(&sub.join("current.ply"))?;
        let context = read_ply(&sub.join("context.ply"))?;
        let goal = read_ply(&sub.join("goal.ply"))?;
        for (name, c) in [
            ("current.ply", &current),
            ("context.ply", &context),
            ("goal.ply", &goal),
        ] {
            if c.len() != manifest.n_points {
                return Err(Error::corrupt(
                    sub.join(name),
                    format!("{} points, manifest says {}", c.len(), manifest.n_points),
                ));
            }
        }
        let scene_path = sub.join("scene.json");
        let text =
            fs::read_to_string(&scene_path).map_err(|e| Error::corrupt(&scene_path, format!("cannot read: {e}")))?;
        let scene: Scene = serde_json::from_str(&text).map_err(|e| Error::corrupt(&scene_path, e.to_string()))?;
        if scene.rng_seed != manifest.seeds[i] || scene.task != manifest.task {
            return Err(Error::corrupt(&scene_path, "scene does not match the manifest"));
        }
        let commands = read_commands(&sub.join("commands.csv"))?;
        demos.push(Demonstration {
            task: manifest.task,
            current,
            context,
            goal,
            scene,
            commands,
        });
    }
    Ok((manifest, demos))
}

const COMMAND_HEADER: [&str; 11] = [
    "step", "arm", "kind", "rx", "ry", "rz", "tx", "ty", "tz", "substeps", "vertices",
];

pub fn write_commands(path: &Path, commands: &[Command]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    let io = |e: csv::Error| Error::corrupt(path, e.to_string());
    w.write_record(COMMAND_HEADER).map_err(io)?;
    for c in commands {
        let kind = match c.kind {
            CommandKind::Grasp => "grasp",
            CommandKind::Move => "move",
        };
        let vertices: Vec<String> = c.vertices.iter().map(|v| v.to_string()).collect();
        w.write_record([
            c.step.to_string(),
            c.arm.to_string(),
            kind.to_string(),
            c.rotvec.x.to_string(),
            c.rotvec.y.to_string(),
            c.rotvec.z.to_string(),
            c.translation.x.to_string(),
            c.translation.y.to_string(),
            c.translation.z.to_string(),
            c.substeps.to_string(),
            vertices.join(" "),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_commands(path: &Path) -> Result<Vec<Command>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::corrupt(path, e.to_string()))?.clone();
    if header.iter().ne(COMMAND_HEADER) {
        return Err(Error::corrupt(path, "unexpected command log header"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::corrupt(path, e.to_string()))?;
        let bad = |what: &str| Error::corrupt(path, format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let int = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
        let kind = match &rec[2] {
            "grasp" => CommandKind::Grasp,
            "move" => CommandKind::Move,
            _ => return Err(bad("kind")),
        };
        let vertices = rec[10]
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|_| bad("vertex")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Command {
            step: int(0, "step")?,
            arm: int(1, "arm")?,
            kind,
            rotvec: Vec3::new(num(3, "rx")?, num(4, "ry")?, num(5, "rz")?),
            translation: Vec3::new(num(6, "tx")?, num(7, "ty")?, num(8, "tz")?),
            substeps: int(9, "substeps")?,
            vertices,
        });
    }
    Ok(out)
}

/// `size` distinct indices from `0..count`, uniformly at random, sorted.
pub fn subset_indices(count: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size > count {
        return Err(Error::invalid(format!("subset of {size} from {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, count, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
