//! State-only trajectory datasets and their JSON Lines serialization.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One expert rollout stored as residual-coordinate states only.
///
/// No actions are recorded anywhere; downstream consumers see consecutive
/// state pairs and the sampling interval, nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env: String,
    pub dt: f64,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::Dataset(format!(
                "trajectory (env {}, seed {}) has {} states, need at least 2",
                self.env,
                self.seed,
                self.states.len()
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Dataset(format!("bad dt {}", self.dt)));
        }
        let dim = self.states[0].len();
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::Dataset(format!(
                    "state {} has dimension {}, expected {}",
                    i,
                    s.len(),
                    dim
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("non-finite value in state {i}")));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    /// Number of (s, s') pairs this trajectory contributes.
    pub fn transition_count(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Flat arrays of (s, s') pairs pooled from one or more trajectories.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub s: Vec<Vec<f64>>,
    pub s_next: Vec<Vec<f64>>,
    pub dt: f64,
}

impl TransitionBatch {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::Dataset("no trajectories to batch".into()));
        }
        let dt = trajs[0].dt;
        let dim = trajs[0].state_dim();
        let mut s = Vec::new();
        let mut s_next = Vec::new();
        for traj in trajs {
            traj.validate()?;
            if (traj.dt - dt).abs() > 1e-12 {
                return Err(Error::Dataset(format!(
                    "mixed dt in dataset: {} vs {}",
                    traj.dt, dt
                )));
            }
            if traj.state_dim() != dim {
                return Err(Error::Dataset(format!(
                    "mixed state dimension in dataset: {} vs {}",
                    traj.state_dim(),
                    dim
                )));
            }
            for pair in traj.states.windows(2) {
                s.push(pair[0].clone());
                s_next.push(pair[1].clone());
            }
        }
        Ok(TransitionBatch { s, s_next, dt })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.s.first().map_or(0, |s| s.len())
    }

    /// Split into a training and held-out batch. `held_out_frac` of the pairs
    /// (rounded down, at least one when possible) go to the second batch,
    /// taken evenly across the pool so both splits cover early and late
    /// portions of the trajectories.
    pub fn split_held_out(&self, held_out_frac: f64) -> (TransitionBatch, TransitionBatch) {
        let n = self.len();
        let n_held = ((n as f64 * held_out_frac) as usize).clamp(usize::from(n > 1), n / 2);
        let stride = if n_held == 0 { n + 1 } else { n / n_held.max(1) };
        let mut train = TransitionBatch { s: Vec::new(), s_next: Vec::new(), dt: self.dt };
        let mut held = TransitionBatch { s: Vec::new(), s_next: Vec::new(), dt: self.dt };
        for i in 0..n {
            let target = if stride > 0 && i % stride == stride / 2 && held.len() < n_held {
                &mut held
            } else {
                &mut train
            };
            target.s.push(self.s[i].clone());
            target.s_next.push(self.s_next[i].clone());
        }
        (train, held)
    }
}

/// Write one trajectory per line as JSON.
pub fn save_dataset(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for traj in trajs {
        traj.validate()?;
        let line = serde_json::to_string(traj)
            .map_err(|e| Error::Dataset(format!("serialize trajectory: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a JSON Lines dataset back. Blank lines are skipped; any malformed
/// line is reported with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut trajs = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        traj.validate().map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if let Some(d) = dim {
            if traj.state_dim() != d {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("state dimension {} differs from {}", traj.state_dim(), d),
                });
            }
        } else {
            dim = Some(traj.state_dim());
        }
        trajs.push(traj);
    }
    if trajs.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no trajectories",
            path.display()
        )));
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traj(seed: u64) -> Trajectory {
        Trajectory {
            env: "car".into(),
            dt: 0.1,
            seed,
            states: vec![vec![0.5, 0.2, -0.1], vec![0.4, 0.1, -0.05], vec![0.3, 0.05, 0.0]],
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expert.jsonl");
        let trajs = vec![sample_traj(0), sample_traj(1)];
        save_dataset(&trajs, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(trajs, back);
    }

    #[test]
    fn wrong_dimension_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&sample_traj(0)).unwrap();
        let mut bad_traj = sample_traj(1);
        bad_traj.states[1] = vec![1.0, 2.0];
        let bad = serde_json::to_string(&bad_traj).unwrap();
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Dataset(_))));
    }

    #[test]
    fn malformed_json_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mangled.jsonl");
        let good = serde_json::to_string(&sample_traj(0)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json at all\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn serialized_lines_contain_no_action_key() {
        let line = serde_json::to_string(&sample_traj(0)).unwrap();
        assert!(!line.contains("action"));
        assert!(line.contains("states"));
    }

    #[test]
    fn short_trajectory_rejected() {
        let mut t = sample_traj(0);
        t.states.truncate(1);
        assert!(t.validate().is_err());
    }

    #[test]
    fn batch_pools_transitions() {
        let trajs = vec![sample_traj(0), sample_traj(1)];
        let batch = TransitionBatch::from_trajectories(&trajs).unwrap();
        assert_eq!(batch.len(), 4);
        assert_eq!(batch.s[0], vec![0.5, 0.2, -0.1]);
        assert_eq!(batch.s_next[0], vec![0.4, 0.1, -0.05]);
        // pairs never straddle a trajectory boundary
        assert_eq!(batch.s[2], vec![0.5, 0.2, -0.1]);
    }

    #[test]
    fn split_covers_all_pairs() {
        let trajs: Vec<Trajectory> = (0..5).map(sample_traj).collect();
        let batch = TransitionBatch::from_trajectories(&trajs).unwrap();
        let (train, held) = batch.split_held_out(0.2);
        assert_eq!(train.len() + held.len(), batch.len());
        assert!(!held.is_empty());
        assert!(held.len() <= batch.len() / 2);
    }
}
