//! Shared trajectory and ensemble-moment containers used by both the
//! particle simulation and the SDE scheme.

use crate::graph::DensityField;

/// Time series of density snapshots at fixed sample times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<DensityField>,
    /// Event count for jump processes, step count for SDE runs.
    pub events: u64,
}

impl Trajectory {
    pub fn final_frame(&self) -> &DensityField {
        self.frames.last().expect("trajectory has at least one frame")
    }
}

/// Per-(time, deme) moments across replicates.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub times: Vec<f64>,
    /// Row-major `times x demes`.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicates: usize,
    pub n_demes: usize,
}

impl MomentTable {
    pub fn mean_at(&self, time_idx: usize) -> &[f64] {
        &self.mean[time_idx * self.n_demes..(time_idx + 1) * self.n_demes]
    }

    pub fn stderr_at(&self, time_idx: usize) -> &[f64] {
        &self.stderr[time_idx * self.n_demes..(time_idx + 1) * self.n_demes]
    }

    /// Reduce per-replicate frames (`replicate -> time -> deme values`) in
    /// fixed replicate order, so the result does not depend on scheduling.
    pub fn from_frames(times: &[f64], frames: Vec<Vec<Vec<f64>>>, n_demes: usize) -> MomentTable {
        let replicates = frames.len();
        let nt = times.len();
        let mut mean = vec![0.0; nt * n_demes];
        let mut m2 = vec![0.0; nt * n_demes];
        for (r, rep) in frames.iter().enumerate() {
            let count = (r + 1) as f64;
            for ti in 0..nt {
                for x in 0..n_demes {
                    let idx = ti * n_demes + x;
                    let value = rep[ti][x];
                    let delta = value - mean[idx];
                    mean[idx] += delta / count;
                    m2[idx] += delta * (value - mean[idx]);
                }
            }
        }
        let var: Vec<f64> = m2
            .iter()
            .map(|v| if replicates > 1 { v / (replicates as f64 - 1.0) } else { 0.0 })
            .collect();
        let stderr = var.iter().map(|v| (v / replicates as f64).sqrt()).collect();
        MomentTable { times: times.to_vec(), mean, var, stderr, replicates, n_demes }
    }
}
