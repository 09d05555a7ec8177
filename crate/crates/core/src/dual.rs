//! The branching-coalescing dual of the biased voter model, and the duality
//! identity that ties expectations of the two processes together.
//!
//! A dual particle at a site of deme `x` traces ancestry backwards: it jumps
//! to a uniformly chosen site of a neighbor deme `y` at per-target-site rate
//! `a_{x<-y}` (the reversed voter arrow) and branches a new particle onto a
//! uniformly chosen site of `y` at per-target-site rate `b_{x<-y}` (the
//! reversed bias arrow). Two particles on one site coalesce instantly.
//!
//! With probe demes `x_1..x_p` (one site each) the identity reads
//!
//! `E prod_i (1 - u_T(x_i))  =  E prod_j (1 - u_0(deme of dual particle j at T))`
//!
//! where the left side runs the voter model forward from an initial state
//! whose sites are independently type 1 with probability `u_0`, and the
//! right side runs the dual from the probe sites. The Monte Carlo check
//! rounds the initial counts deterministically instead, which coincides
//! with the product measure whenever `u_0` is 0/1-valued on demes.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bvm;
use crate::error::{Error, Result};
use crate::exact::SiteSystem;
use crate::graph::{DensityField, DiscretizedGraph};
use crate::rng::stream;
use crate::scaling::MicroParams;

/// Hard cap on the dual population; exceeding it aborts with diagnostics.
pub const PARTICLE_CAP: usize = 1_000_000;

/// Multiset of dual particles at sites `(deme, slot)`. After events resolve
/// there is at most one particle per site.
#[derive(Debug, Clone)]
pub struct DualState {
    particles: Vec<(usize, u32)>,
    clock: f64,
    rng: ChaCha8Rng,
}

impl DualState {
    pub fn particles(&self) -> &[(usize, u32)] {
        &self.particles
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn n(&self) -> usize {
        self.particles.len()
    }

    fn occupied(&self, site: (usize, u32)) -> bool {
        self.particles.iter().any(|p| *p == site)
    }
}

/// Per-deme total jump and branch weights of one particle, cached once.
struct DualRates {
    /// Per deme: (neighbor deme, jump weight `M_y a`, branch weight `M_y b`).
    links: Vec<Vec<(usize, f64, f64)>>,
    /// Per deme: total weight.
    total: Vec<f64>,
    capacity: Vec<u32>,
}

impl DualRates {
    fn new(dg: &DiscretizedGraph, micro: &MicroParams) -> DualRates {
        let n = dg.n_demes();
        let mut links = vec![Vec::new(); n];
        let mut total = vec![0.0; n];
        for x in 0..n {
            for link in dg.neighbors(x) {
                let m_y = f64::from(micro.capacity_of(dg, link.deme));
                let jump = m_y * micro.voter_rate(dg, x, link.deme, &link.channel);
                let branch = m_y * micro.bias_rate(dg, x, link.deme, &link.channel);
                links[x].push((link.deme, jump, branch));
                total[x] += jump + branch;
            }
        }
        let capacity = (0..n).map(|x| micro.capacity_of(dg, x)).collect();
        DualRates { links, total, capacity }
    }
}

/// Exact event-driven run of the dual from distinct initial sites.
pub fn run_dual(
    dg: &DiscretizedGraph,
    micro: &MicroParams,
    initial: &[(usize, u32)],
    t_end: f64,
    seed: u64,
    replicate: u64,
) -> Result<DualState> {
    for (i, a) in initial.iter().enumerate() {
        assert!(
            initial[i + 1..].iter().all(|b| b != a),
            "initial dual sites must be distinct"
        );
    }
    let rates = DualRates::new(dg, micro);
    let mut state = DualState {
        particles: initial.to_vec(),
        clock: 0.0,
        rng: stream(seed, "dual", replicate),
    };

    loop {
        let total: f64 = state.particles.iter().map(|(x, _)| rates.total[*x]).sum();
        if !total.is_finite() {
            return Err(Error::RateOverflow);
        }
        if total <= 1e-300 {
            state.clock = t_end;
            return Ok(state);
        }
        let wait = -(1.0 - state.rng.gen::<f64>()).ln() / total;
        if state.clock + wait > t_end {
            state.clock = t_end;
            return Ok(state);
        }
        state.clock += wait;

        // Pick a particle proportional to its deme rate, then an arrow.
        let mut target = state.rng.gen::<f64>() * total;
        let mut idx = state.particles.len() - 1;
        for (i, (x, _)) in state.particles.iter().enumerate() {
            if target < rates.total[*x] {
                idx = i;
                break;
            }
            target -= rates.total[*x];
        }
        let deme = state.particles[idx].0;
        let mut pick = state.rng.gen::<f64>()
            * rates.links[deme].iter().map(|(_, j, b)| j + b).sum::<f64>();
        let mut chosen = None;
        for &(y, jump, branch) in &rates.links[deme] {
            if pick < jump {
                chosen = Some((y, true));
                break;
            }
            pick -= jump;
            if pick < branch {
                chosen = Some((y, false));
                break;
            }
            pick -= branch;
        }
        let Some((y, is_jump)) = chosen else { continue };
        let slot = state.rng.gen_range(0..rates.capacity[y]);
        let site = (y, slot);
        if is_jump {
            if state.occupied(site) {
                // Move onto an occupied site: the two lineages coalesce.
                state.particles.swap_remove(idx);
            } else {
                state.particles[idx] = site;
            }
        } else if !state.occupied(site) {
            state.particles.push(site);
            if state.particles.len() > PARTICLE_CAP {
                return Err(Error::DualExplosion {
                    cap: PARTICLE_CAP,
                    t: state.clock,
                    n: state.particles.len(),
                });
            }
        }
        // Branching onto an occupied site coalesces instantly: no-op.
    }
}

/// Monte Carlo estimate of both sides of the duality identity.
#[derive(Debug, Clone)]
pub struct GapEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    pub replicates: usize,
}

impl GapEstimate {
    pub fn pooled_stderr(&self) -> f64 {
        (self.lhs_stderr.powi(2) + self.rhs_stderr.powi(2)).sqrt()
    }

    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo duality check. `lhs` runs the voter model forward from the
/// deterministically rounded initial state and evaluates
/// `prod (1 - u_T(probe))`; `rhs` runs the dual from the probe sites and
/// evaluates `prod (1 - u_0(deme of particle))`.
pub fn duality_gap_mc(
    dg: &Arc<DiscretizedGraph>,
    micro: &MicroParams,
    u0: &DensityField,
    probes: &[usize],
    t_end: f64,
    replicates: usize,
    seed: u64,
) -> Result<GapEstimate> {
    assert!(replicates >= 100, "need at least 100 replicates");
    for (i, p) in probes.iter().enumerate() {
        assert!(*p < dg.n_demes(), "probe deme in range");
        assert!(probes[i + 1..].iter().all(|q| q != p), "probe demes distinct");
    }

    let lhs_samples: Result<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let traj = bvm::run_replicate(dg, micro, u0, seed, r, &[t_end])?;
            let frame = traj.final_frame();
            Ok(probes.iter().map(|&x| 1.0 - frame.deme_values()[x]).product())
        })
        .collect();

    let initial: Vec<(usize, u32)> = probes.iter().map(|&x| (x, 0)).collect();
    let rhs_samples: Result<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let state = run_dual(dg, micro, &initial, t_end, seed ^ 0x9e3779b97f4a7c15, r)?;
            Ok(state
                .particles()
                .iter()
                .map(|(x, _)| 1.0 - u0.deme_values()[*x])
                .product())
        })
        .collect();

    let (lhs, lhs_stderr) = mean_stderr(&lhs_samples?);
    let (rhs, rhs_stderr) = mean_stderr(&rhs_samples?);
    Ok(GapEstimate { lhs, rhs, lhs_stderr, rhs_stderr, replicates })
}

/// Both sides of the duality identity by exact matrix exponentials of the
/// site-level chain and of the dual subset chain. The forward side starts
/// from the product measure with per-site probability `u_0(deme)`.
pub fn duality_gap_exact(
    dg: &DiscretizedGraph,
    micro: &MicroParams,
    u0: &DensityField,
    probes: &[usize],
    t_end: f64,
) -> Result<(f64, f64)> {
    let sys = SiteSystem::new(dg, micro)?;

    // lhs: E prod_i (1 - u_T(x_i)) with u_T the deme density at time T.
    let mut h = vec![0.0; sys.n_states()];
    for (s, slot) in h.iter_mut().enumerate() {
        let mut value = 1.0;
        for &x in probes {
            let k = sys.count_in_deme(s as u32, x);
            let m = sys.capacity(x);
            value *= 1.0 - f64::from(k) / f64::from(m);
        }
        *slot = value;
    }
    let lhs = sys.expectation_from_product(u0.deme_values(), &h, t_end);

    // rhs: E prod_j (1 - u_0(deme of dual particle j at T)).
    let mut g = vec![1.0; sys.n_states()];
    for (a, slot) in g.iter_mut().enumerate() {
        let mut value = 1.0;
        for site in 0..sys.n_sites() {
            if a >> site & 1 == 1 {
                value *= 1.0 - u0.deme_values()[sys.site_deme(site)];
            }
        }
        *slot = value;
    }
    let mut start = 0u32;
    for &x in probes {
        start |= 1 << sys.site_index(x, 0);
    }
    let rhs = sys.dual_expectation(start, &g, t_end);

    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, discretize_uniform, interpolate};
    use crate::scaling::{micro_from_macro, MacroParams, ThetaKind};
    use std::collections::HashMap;

    fn path(
        n_demes: u32,
        m: u32,
        beta: f64,
        beta_hat: f64,
    ) -> (Arc<DiscretizedGraph>, MicroParams) {
        let l = 4.0;
        let length = f64::from(n_demes + 1) / l;
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", length)]).unwrap();
        let dg = Arc::new(discretize_uniform(&g, l).unwrap());
        assert_eq!(dg.n_demes(), n_demes as usize);
        let macro_params = MacroParams {
            alpha: vec![1.0],
            beta: vec![beta],
            gamma: vec![0.0],
            beta_hat: vec![beta_hat; 2],
        };
        let mut overrides = HashMap::new();
        overrides.insert("e0".to_string(), m);
        let micro = micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &overrides).unwrap();
        (dg, micro)
    }

    #[test]
    fn pure_coalescing_count_nonincreasing() {
        let (dg, micro) = path(4, 2, 0.0, 0.0);
        let initial = [(0usize, 0u32), (1, 0), (2, 1), (3, 0)];
        for r in 0..50 {
            let state = run_dual(&dg, &micro, &initial, 2.0, 11, r).unwrap();
            assert!(state.n() >= 1 && state.n() <= initial.len());
        }
    }

    #[test]
    fn branching_grows_population_sometimes() {
        let (dg, micro) = path(4, 2, 4.0, 0.0);
        let initial = [(1usize, 0u32)];
        let mut grew = false;
        for r in 0..200 {
            let state = run_dual(&dg, &micro, &initial, 1.5, 13, r).unwrap();
            if state.n() > 1 {
                grew = true;
                break;
            }
        }
        assert!(grew, "bias arrows must branch the dual");
    }

    #[test]
    fn single_particle_marginal_matches_drift_walk() {
        // One dual particle jumps between demes at total rate
        // M_y * a_{x<-y}, i.e. the drift-walk rates.
        let (dg, micro) = path(3, 2, 0.0, 0.0);
        let c = &micro.conductance;
        let gen = crate::walk::drift_rates(&dg, c);
        let t = 0.6;
        let reps = 20_000u64;
        let mut occupancy = vec![0.0f64; dg.n_demes()];
        for r in 0..reps {
            let state = run_dual(&dg, &micro, &[(1, 0)], t, 17, r).unwrap();
            occupancy[state.particles()[0].0] += 1.0;
        }
        for o in occupancy.iter_mut() {
            *o /= reps as f64;
        }
        // Expected occupancy: row of exp(t Q_drift) from deme 1.
        let mut indicator = vec![0.0; dg.n_demes()];
        for target in 0..dg.n_demes() {
            indicator.iter_mut().for_each(|v| *v = 0.0);
            indicator[target] = 1.0;
            let expect = crate::walk::semigroup_apply(&gen, t, &indicator).unwrap()[1];
            let sigma = (expect * (1.0 - expect) / reps as f64).sqrt().max(1e-4);
            assert!(
                (occupancy[target] - expect).abs() < 4.0 * sigma,
                "deme {target}: mc {} vs exact {expect}",
                occupancy[target]
            );
        }
    }

    #[test]
    fn exact_gap_t_zero_is_zero() {
        let (dg, micro) = path(3, 2, 0.5, 0.25);
        let u0 = interpolate(&dg, vec![0.25, 0.5, 0.75]).unwrap();
        let (lhs, rhs) = duality_gap_exact(&dg, &micro, &u0, &[0, 2], 0.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
        // Both sides equal prod (1 - u0(probe)).
        assert!((lhs - 0.75 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_initial_conditions() {
        let (dg, micro) = path(3, 2, 0.5, 0.25);
        // u0 = 0: no type-1 mass ever appears, both sides are 1.
        let zeros = interpolate(&dg, vec![0.0; 3]).unwrap();
        let est = duality_gap_mc(&dg, &micro, &zeros, &[1], 0.5, 100, 3).unwrap();
        assert_eq!(est.lhs, 1.0);
        assert_eq!(est.rhs, 1.0);
        // u0 = 1: absorbing full state, both sides are 0.
        let ones = interpolate(&dg, vec![1.0; 3]).unwrap();
        let est = duality_gap_mc(&dg, &micro, &ones, &[1], 0.5, 100, 3).unwrap();
        assert_eq!(est.lhs, 0.0);
        assert_eq!(est.rhs, 0.0);
    }

    #[test]
    fn exact_gap_two_demes_pure_voter() {
        let (dg, micro) = path(2, 1, 0.0, 0.0);
        let u0 = interpolate(&dg, vec![1.0, 0.0]).unwrap();
        let (lhs, rhs) = duality_gap_exact(&dg, &micro, &u0, &[1], 0.7).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn exact_gap_three_demes_with_bias() {
        let (dg, micro) = path(3, 2, 0.8, 0.5);
        let u0 = interpolate(&dg, vec![1.0, 0.0, 1.0]).unwrap();
        let (lhs, rhs) = duality_gap_exact(&dg, &micro, &u0, &[0, 1], 0.5).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn exact_gap_with_interior_u0_uses_product_measure() {
        let (dg, micro) = path(3, 2, 0.6, 0.0);
        let u0 = interpolate(&dg, vec![0.5, 0.25, 0.75]).unwrap();
        let (lhs, rhs) = duality_gap_exact(&dg, &micro, &u0, &[0, 2], 0.4).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn probe_order_invariance() {
        let (dg, micro) = path(3, 2, 0.8, 0.5);
        let u0 = interpolate(&dg, vec![1.0, 0.0, 1.0]).unwrap();
        let (l1, r1) = duality_gap_exact(&dg, &micro, &u0, &[0, 2], 0.5).unwrap();
        let (l2, r2) = duality_gap_exact(&dg, &micro, &u0, &[2, 0], 0.5).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!((r1 - r2).abs() < 1e-14);
    }

    #[test]
    fn mc_agrees_with_exact_on_zero_one_profile() {
        let (dg, micro) = path(3, 2, 0.8, 0.5);
        let u0 = interpolate(&dg, vec![1.0, 0.0, 1.0]).unwrap();
        let (lhs_exact, rhs_exact) = duality_gap_exact(&dg, &micro, &u0, &[0, 1], 0.5).unwrap();
        let est = duality_gap_mc(&dg, &micro, &u0, &[0, 1], 0.5, 4000, 29).unwrap();
        assert!(
            (est.lhs - lhs_exact).abs() < 4.0 * est.lhs_stderr.max(1e-4),
            "lhs mc {} vs exact {lhs_exact}",
            est.lhs
        );
        assert!(
            (est.rhs - rhs_exact).abs() < 4.0 * est.rhs_stderr.max(1e-4),
            "rhs mc {} vs exact {rhs_exact}",
            est.rhs
        );
    }
}
