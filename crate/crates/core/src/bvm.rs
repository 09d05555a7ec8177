//! Event-driven simulation of the biased voter model, lumped to per-deme
//! type-1 counts.
//!
//! Sites within a deme are exchangeable (the neighbor relation only links
//! sites across demes), so the site-level chain lumps exactly onto the
//! vector of per-deme counts. A deme with `k` type-1 sites out of `M` gains
//! one at rate `(M - k) * sum_y k_y (a_{x<-y} + b_{x<-y})` and loses one at
//! rate `k * sum_y (M_y - k_y) a_{x<-y}`. Simulation is exact Gillespie:
//! exponential waiting times at the total rate, categorical event choice by
//! linear scan over cached per-deme rates.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{interpolate, DensityField, DiscretizedGraph};
use crate::rng::stream;
use crate::scaling::MicroParams;
use crate::trajectory::{MomentTable, Trajectory};

/// Per-deme type-1 counts plus the cached event rates.
#[derive(Debug, Clone)]
pub struct BVMState {
    dg: Arc<DiscretizedGraph>,
    counts: Vec<u32>,
    capacity: Vec<u32>,
    clock: f64,
    rng: ChaCha8Rng,
    up: Vec<f64>,
    down: Vec<f64>,
    total: f64,
    events_since_rebuild: u64,
}

/// Deterministic initial state: `k_x = round(u0(x) * M_x)`.
pub fn init_state(
    dg: &Arc<DiscretizedGraph>,
    micro: &MicroParams,
    u0: &DensityField,
    seed: u64,
    replicate: u64,
) -> BVMState {
    let counts: Vec<u32> = (0..dg.n_demes())
        .map(|x| {
            let m = f64::from(micro.capacity_of(dg, x));
            (u0.deme_values()[x] * m).round() as u32
        })
        .collect();
    let capacity = (0..dg.n_demes()).map(|x| micro.capacity_of(dg, x)).collect();
    let mut state = BVMState {
        dg: Arc::clone(dg),
        counts,
        capacity,
        clock: 0.0,
        rng: stream(seed, "bvm", replicate),
        up: Vec::new(),
        down: Vec::new(),
        total: 0.0,
        events_since_rebuild: 0,
    };
    state.rebuild_rates(micro);
    state
}

/// Per-deme (up, down) transition rates of the lumped chain.
pub fn lumped_rates(state: &BVMState, micro: &MicroParams) -> Vec<(f64, f64)> {
    (0..state.dg.n_demes()).map(|x| state.deme_rates(x, micro)).collect()
}

impl BVMState {
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn density(&self, x: usize) -> f64 {
        f64::from(self.counts[x]) / f64::from(self.capacity[x])
    }

    pub fn density_field(&self) -> Result<DensityField> {
        let values = (0..self.counts.len()).map(|x| self.density(x)).collect();
        interpolate(&self.dg, values)
    }

    pub fn total_rate(&self) -> f64 {
        self.total
    }

    fn deme_rates(&self, x: usize, micro: &MicroParams) -> (f64, f64) {
        let m_x = f64::from(self.capacity[x]);
        let k_x = f64::from(self.counts[x]);
        let mut gain = 0.0;
        let mut loss = 0.0;
        for link in self.dg.neighbors(x) {
            let y = link.deme;
            let k_y = f64::from(self.counts[y]);
            let m_y = f64::from(self.capacity[y]);
            let a = micro.voter_rate(&self.dg, x, y, &link.channel);
            let b = micro.bias_rate(&self.dg, x, y, &link.channel);
            gain += k_y * (a + b);
            loss += (m_y - k_y) * a;
        }
        ((m_x - k_x) * gain, k_x * loss)
    }

    fn rebuild_rates(&mut self, micro: &MicroParams) {
        let n = self.dg.n_demes();
        self.up = vec![0.0; n];
        self.down = vec![0.0; n];
        for x in 0..n {
            let (u, d) = self.deme_rates(x, micro);
            self.up[x] = u;
            self.down[x] = d;
        }
        self.total = self.up.iter().sum::<f64>() + self.down.iter().sum::<f64>();
        self.events_since_rebuild = 0;
    }

    /// Refresh the cached rates of a deme and adjust the running total.
    fn refresh_deme(&mut self, x: usize, micro: &MicroParams) {
        let (u, d) = self.deme_rates(x, micro);
        self.total += (u - self.up[x]) + (d - self.down[x]);
        self.up[x] = u;
        self.down[x] = d;
    }

    /// Draw the next event time, or `None` when the chain is absorbed.
    fn propose_event(&mut self) -> Result<Option<f64>> {
        if !self.total.is_finite() {
            return Err(Error::RateOverflow);
        }
        if self.total <= 1e-300 {
            return Ok(None);
        }
        let wait = -(1.0 - self.rng.gen::<f64>()).ln() / self.total;
        Ok(Some(self.clock + wait))
    }

    /// Pick an event by linear scan over the cached rates and apply it.
    fn apply_event(&mut self, micro: &MicroParams) {
        let mut target = self.rng.gen::<f64>() * self.total;
        let mut chosen = None;
        for (x, &r) in self.up.iter().enumerate() {
            if target < r {
                chosen = Some((x, true));
                break;
            }
            target -= r;
        }
        if chosen.is_none() {
            for (x, &r) in self.down.iter().enumerate() {
                if target < r {
                    chosen = Some((x, false));
                    break;
                }
                target -= r;
            }
        }
        // Drift in the running total can push the draw past the end; fall
        // back to the last positive rate.
        let (x, gain) = chosen.unwrap_or_else(|| {
            let up_pos = self.up.iter().rposition(|&r| r > 0.0);
            let down_pos = self.down.iter().rposition(|&r| r > 0.0);
            match (up_pos, down_pos) {
                (_, Some(x)) => (x, false),
                (Some(x), None) => (x, true),
                (None, None) => unreachable!("total rate positive but no event"),
            }
        });
        if gain {
            self.counts[x] += 1;
        } else {
            self.counts[x] -= 1;
        }
        self.refresh_deme(x, micro);
        let links = self.dg.neighbors(x).len();
        for i in 0..links {
            let y = self.dg.neighbors(x)[i].deme;
            self.refresh_deme(y, micro);
        }
        self.events_since_rebuild += 1;
        if self.events_since_rebuild >= 1 << 16 {
            self.rebuild_rates(micro);
        }
    }

    /// Advance by one event, used by waiting-time tests.
    #[cfg(test)]
    fn step(&mut self, micro: &MicroParams, t_max: f64) -> Result<bool> {
        match self.propose_event()? {
            Some(t) if t <= t_max => {
                self.clock = t;
                self.apply_event(micro);
                Ok(true)
            }
            _ => {
                self.clock = t_max;
                Ok(false)
            }
        }
    }
}

/// Exact Gillespie run, snapshotting the interpolated density at each grid
/// time. The grid must be strictly increasing; its last entry is the
/// horizon. The state is piecewise constant and right-continuous, so a
/// sample falling on an event time sees the post-event state.
pub fn run(mut state: BVMState, micro: &MicroParams, sample_times: &[f64]) -> Result<Trajectory> {
    assert!(!sample_times.is_empty(), "need at least one sample time");
    assert!(sample_times.windows(2).all(|w| w[0] < w[1]), "sample times strictly increasing");
    let t_max = *sample_times.last().unwrap();
    let mut times = Vec::with_capacity(sample_times.len());
    let mut frames = Vec::with_capacity(sample_times.len());
    let mut events = 0u64;
    let mut next_sample = 0usize;

    while next_sample < sample_times.len() {
        let t_next = match state.propose_event()? {
            Some(t) => t,
            None => f64::INFINITY,
        };
        // Samples strictly before the next event see the current state.
        while next_sample < sample_times.len() && sample_times[next_sample] < t_next {
            times.push(sample_times[next_sample]);
            frames.push(state.density_field()?);
            next_sample += 1;
        }
        if next_sample >= sample_times.len() || t_next > t_max {
            state.clock = t_max.max(state.clock);
            break;
        }
        state.clock = t_next;
        state.apply_event(micro);
        events += 1;
    }

    Ok(Trajectory { times, frames, events })
}

/// One replicate of `run` from the deterministic initial state.
pub fn run_replicate(
    dg: &Arc<DiscretizedGraph>,
    micro: &MicroParams,
    u0: &DensityField,
    seed: u64,
    replicate: u64,
    sample_times: &[f64],
) -> Result<Trajectory> {
    let state = init_state(dg, micro, u0, seed, replicate);
    run(state, micro, sample_times)
}

/// Independent replicates with streams derived from `(seed, replicate)`.
pub fn ensemble(
    dg: &Arc<DiscretizedGraph>,
    micro: &MicroParams,
    u0: &DensityField,
    seed: u64,
    replicates: usize,
    sample_times: &[f64],
) -> Result<MomentTable> {
    assert!(replicates >= 1);
    let frames: Result<Vec<Vec<Vec<f64>>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let traj = run_replicate(dg, micro, u0, seed, r, sample_times)?;
            Ok(traj.frames.iter().map(|f| f.deme_values().to_vec()).collect())
        })
        .collect();
    Ok(MomentTable::from_frames(sample_times, frames?, dg.n_demes()))
}
