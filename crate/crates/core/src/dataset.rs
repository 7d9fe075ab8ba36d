//! Trajectories, datasets and their on-disk layout.
//!
//! A dataset directory holds `manifest.json` (graph as an edge list, dims,
//! seeds, environment description) and one `traj_NNNNN.csv` per trajectory.
//! CSV columns are `t,node,o0..o{k-1},a0..a{m-1}`. Row `t` carries the
//! observation `o_t` and the action `a_t` that produced it, so the action
//! cells of the `t = 0` rows are empty. Floats are written in shortest
//! round-trip form and re-read bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::Frame;

/// One episode. Transition `k` maps history `observations[k]` and action
/// `actions[k]` to `observations[k + 1]`, so the history at every step is the
/// previous observation and the first history is the initial observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub observations: Vec<Frame>,
    pub actions: Vec<Frame>,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn history(&self, k: usize) -> &Frame {
        &self.observations[k]
    }

    pub fn next_observation(&self, k: usize) -> &Frame {
        &self.observations[k + 1]
    }

    fn validate(&self, n: usize, obs_dim: usize, action_dim: usize) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(Error::Format(format!(
                "trajectory has {} observation frames for {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        for frame in &self.observations {
            check_frame(frame, n, obs_dim, "observation frame")?;
        }
        for frame in &self.actions {
            check_frame(frame, n, action_dim, "action frame")?;
        }
        Ok(())
    }
}

fn check_frame(frame: &Frame, n: usize, dim: usize, what: &'static str) -> Result<()> {
    crate::error::check_dim(what, n, frame.len())?;
    for v in frame {
        crate::error::check_dim(what, dim, v.len())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub trajectories: Vec<Trajectory>,
    /// Free-form description of the environment that produced the data.
    pub env: serde_json::Value,
    pub master_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    graph: Graph,
    obs_dim: usize,
    action_dim: usize,
    master_seed: u64,
    env: serde_json::Value,
    trajectories: Vec<TrajectoryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryEntry {
    file: String,
    seed: u64,
    steps: usize,
}

const FORMAT_TAG: &str = "gce-dataset/1";

impl Dataset {
    pub fn new(
        graph: Graph,
        obs_dim: usize,
        action_dim: usize,
        trajectories: Vec<Trajectory>,
        env: serde_json::Value,
        master_seed: u64,
    ) -> Result<Self> {
        let ds = Dataset {
            graph,
            obs_dim,
            action_dim,
            trajectories,
            env,
            master_seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.trajectories {
            t.validate(self.graph.n(), self.obs_dim, self.action_dim)?;
        }
        Ok(())
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Dataset restricted to the first `count` trajectories.
    pub fn take(&self, count: usize) -> Dataset {
        Dataset {
            trajectories: self.trajectories.iter().take(count).cloned().collect(),
            ..self.clone()
        }
    }

    /// Every observation vector in the dataset, in (trajectory, step, node) order.
    pub fn observation_vectors(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.trajectories
            .iter()
            .flat_map(|t| t.observations.iter().flatten())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.trajectories.len());
        for (k, traj) in self.trajectories.iter().enumerate() {
            let file = format!("traj_{k:05}.csv");
            write_trajectory_csv(&dir.join(&file), traj, self.obs_dim, self.action_dim)?;
            entries.push(TrajectoryEntry {
                file,
                seed: traj.seed,
                steps: traj.len(),
            });
        }
        let manifest = Manifest {
            format: FORMAT_TAG.into(),
            graph: self.graph.clone(),
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            master_seed: self.master_seed,
            env: self.env.clone(),
            trajectories: entries,
        };
        let mut f = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(fs::File::open(dir.join("manifest.json"))?))?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::Format(format!("unknown dataset format {}", manifest.format)));
        }
        let n = manifest.graph.n();
        let trajectories = manifest
            .trajectories
            .iter()
            .map(|e| {
                read_trajectory_csv(
                    &dir.join(&e.file),
                    e.seed,
                    e.steps,
                    n,
                    manifest.obs_dim,
                    manifest.action_dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            manifest.graph,
            manifest.obs_dim,
            manifest.action_dim,
            trajectories,
            manifest.env,
            manifest.master_seed,
        )
    }
}

/// SHA-256 over every regular file in `dir`, visited in name order.
pub fn directory_checksum(dir: &Path) -> Result<String> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(fs::read(dir.join(&name))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory, obs_dim: usize, action_dim: usize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = String::from("t,node");
    for c in 0..obs_dim {
        header.push_str(&format!(",o{c}"));
    }
    for c in 0..action_dim {
        header.push_str(&format!(",a{c}"));
    }
    writeln!(w, "{header}")?;
    for (t, frame) in traj.observations.iter().enumerate() {
        for (node, o) in frame.iter().enumerate() {
            write!(w, "{t},{node}")?;
            for v in o.iter() {
                write!(w, ",{v}")?;
            }
            if t == 0 {
                for _ in 0..action_dim {
                    write!(w, ",")?;
                }
            } else {
                for v in traj.actions[t - 1][node].iter() {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_trajectory_csv(
    path: &Path,
    seed: u64,
    steps: usize,
    n: usize,
    obs_dim: usize,
    action_dim: usize,
) -> Result<Trajectory> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut observations = vec![vec![DVector::zeros(obs_dim); n]; steps + 1];
    let mut actions = vec![vec![DVector::zeros(action_dim); n]; steps];
    let mut seen = vec![false; (steps + 1) * n];
    let bad = |line: usize, msg: &str| Error::Format(format!("{}:{}: {msg}", path.display(), line + 1));
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 + obs_dim + action_dim {
            return Err(bad(line_no, "wrong column count"));
        }
        let t: usize = cells[0].parse().map_err(|_| bad(line_no, "bad step index"))?;
        let node: usize = cells[1].parse().map_err(|_| bad(line_no, "bad node index"))?;
        if t > steps || node >= n {
            return Err(bad(line_no, "index out of range"));
        }
        for c in 0..obs_dim {
            observations[t][node][c] = cells[2 + c]
                .parse()
                .map_err(|_| bad(line_no, "bad observation value"))?;
        }
        if t > 0 {
            for c in 0..action_dim {
                actions[t - 1][node][c] = cells[2 + obs_dim + c]
                    .parse()
                    .map_err(|_| bad(line_no, "bad action value"))?;
            }
        }
        seen[t * n + node] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::Format(format!("{}: missing rows", path.display())));
    }
    Ok(Trajectory {
        seed,
        observations,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let g = Graph::chain(3).unwrap();
        let traj = |seed: u64| Trajectory {
            seed,
            observations: (0..4)
                .map(|t| {
                    (0..3)
                        .map(|i| DVector::from_vec(vec![t as f64 * 0.1 + i as f64, 1.0 / 3.0 + seed as f64]))
                        .collect()
                })
                .collect(),
            actions: (0..3)
                .map(|t| (0..3).map(|i| DVector::from_vec(vec![(t * i) as f64 - 0.7])).collect())
                .collect(),
        };
        Dataset::new(g, 2, 1, vec![traj(1), traj(2)], serde_json::json!({"kind": "toy"}), 9).unwrap()
    }

    #[test]
    fn save_and_load_are_bit_exact() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds, back);
        let header = fs::read_to_string(dir.path().join("traj_00000.csv")).unwrap();
        assert!(header.starts_with("t,node,o0,o1,a0\n0,0,0,1.3333333333333333,\n"));
    }

    #[test]
    fn checksum_is_stable() {
        let ds = toy();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        ds.save(a.path()).unwrap();
        ds.save(b.path()).unwrap();
        assert_eq!(directory_checksum(a.path()).unwrap(), directory_checksum(b.path()).unwrap());
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let mut ds = toy();
        ds.trajectories[0].observations[1][2] = DVector::zeros(3);
        assert!(ds.validate().is_err());
        let mut ds = toy();
        ds.trajectories[1].actions.pop();
        assert!(ds.validate().is_err());
    }

    #[test]
    fn history_is_previous_observation() {
        let ds = toy();
        let t = &ds.trajectories[0];
        for k in 0..t.len() {
            assert_eq!(t.history(k), &t.observations[k]);
            assert_eq!(t.next_observation(k), &t.observations[k + 1]);
        }
        assert_eq!(ds.take(1).trajectories.len(), 1);
        assert_eq!(ds.num_transitions(), 6);
    }
}
