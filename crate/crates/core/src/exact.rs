//! Exact finite-state machinery for tiny instances: the site-level voter
//! chain on `{0,1}^sites`, the branching-coalescing dual on subsets of
//! sites, and a uniformized matrix-exponential-times-vector routine. These
//! are the oracles the stochastic simulators are checked against.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::DiscretizedGraph;
use crate::scaling::MicroParams;

/// Largest number of sites the exact state spaces may cover (`2^16` states).
pub const SITE_CAP: usize = 16;

/// `v <- exp(tQ) v` by uniformization: with `P = I + Q/rate`, the result is
/// the Poisson(rate*t) mixture of `P^k v`. The truncated tail is
/// renormalized, so constants are preserved exactly.
pub fn expmv(apply_q: impl Fn(&[f64], &mut [f64]), max_rate: f64, t: f64, v: &[f64]) -> Vec<f64> {
    if t == 0.0 || max_rate == 0.0 {
        return v.to_vec();
    }
    let lam = max_rate * t;
    let n = v.len();
    let terms = (lam + 12.0 * lam.sqrt() + 30.0).ceil() as usize;
    let mut power = v.to_vec();
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut weight = (-lam).exp();
    let mut log_weight = -lam;
    let mut underflow = weight == 0.0;
    let mut cumulative = 0.0;
    if weight > 0.0 {
        for i in 0..n {
            out[i] = weight * power[i];
        }
        cumulative = weight;
    }
    for k in 1..=terms {
        apply_q(&power, &mut scratch);
        for i in 0..n {
            power[i] += scratch[i] / max_rate;
        }
        if underflow {
            log_weight += (lam / k as f64).ln();
            if log_weight > -700.0 {
                weight = log_weight.exp();
                underflow = false;
            }
        } else {
            weight *= lam / k as f64;
        }
        if weight > 0.0 {
            for i in 0..n {
                out[i] += weight * power[i];
            }
            cumulative += weight;
        }
        if cumulative > 0.0 && 1.0 - cumulative < 1e-14 && k as f64 > lam {
            break;
        }
    }
    if cumulative > 0.0 {
        for x in out.iter_mut() {
            *x /= cumulative;
        }
    }
    out
}

/// Site enumeration and cached rates for the exact chains.
#[derive(Debug, Clone)]
pub struct SiteSystem {
    /// Deme of each site, deme-major.
    site_deme: Vec<usize>,
    /// Bitmask of the sites of each deme.
    deme_mask: Vec<u32>,
    /// First site index of each deme.
    deme_offset: Vec<usize>,
    /// Capacity per deme.
    capacity: Vec<u32>,
    /// Per deme: (neighbor deme, voter rate, bias rate) per channel.
    links: Vec<Vec<(usize, f64, f64)>>,
    n_sites: usize,
}

impl SiteSystem {
    pub fn new(dg: &DiscretizedGraph, micro: &MicroParams) -> Result<SiteSystem> {
        let n_demes = dg.n_demes();
        let mut site_deme = Vec::new();
        let mut deme_mask = Vec::with_capacity(n_demes);
        let mut deme_offset = Vec::with_capacity(n_demes);
        let mut capacity = Vec::with_capacity(n_demes);
        for x in 0..n_demes {
            let m = micro.capacity_of(dg, x);
            deme_offset.push(site_deme.len());
            let mut mask = 0u32;
            for _ in 0..m {
                if site_deme.len() >= SITE_CAP {
                    return Err(Error::StateSpaceTooLarge {
                        sites: site_deme.len() + 1,
                        cap: SITE_CAP,
                    });
                }
                mask |= 1 << site_deme.len();
                site_deme.push(x);
            }
            deme_mask.push(mask);
            capacity.push(m);
        }
        let mut links = vec![Vec::new(); n_demes];
        for x in 0..n_demes {
            for link in dg.neighbors(x) {
                let a = micro.voter_rate(dg, x, link.deme, &link.channel);
                let b = micro.bias_rate(dg, x, link.deme, &link.channel);
                links[x].push((link.deme, a, b));
            }
        }
        let n_sites = site_deme.len();
        Ok(SiteSystem { site_deme, deme_mask, deme_offset, capacity, links, n_sites })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_states(&self) -> usize {
        1 << self.n_sites
    }

    pub fn site_deme(&self, site: usize) -> usize {
        self.site_deme[site]
    }

    pub fn site_index(&self, deme: usize, slot: u32) -> usize {
        self.deme_offset[deme] + slot as usize
    }

    pub fn capacity(&self, deme: usize) -> u32 {
        self.capacity[deme]
    }

    pub fn count_in_deme(&self, state: u32, deme: usize) -> u32 {
        (state & self.deme_mask[deme]).count_ones()
    }

    /// Flip rates of one site in one state: `(rate, target_state)` pairs are
    /// not materialized; instead the generator applies directly.
    fn flip_rates(&self, state: u32, site: usize) -> f64 {
        let x = self.site_deme[site];
        let is_one = state >> site & 1 == 1;
        let mut rate = 0.0;
        for &(y, a, b) in &self.links[x] {
            let k_y = f64::from(self.count_in_deme(state, y));
            let m_y = f64::from(self.capacity[y]);
            if is_one {
                rate += (m_y - k_y) * a;
            } else {
                rate += k_y * (a + b);
            }
        }
        rate
    }

    /// Apply the voter generator: `(Qf)(s) = sum rate(s -> s') (f(s') - f(s))`.
    pub fn apply_generator(&self, f: &[f64], out: &mut [f64]) {
        let n_states = self.n_states();
        debug_assert_eq!(f.len(), n_states);
        for s in 0..n_states as u32 {
            let mut acc = 0.0;
            for site in 0..self.n_sites {
                let rate = self.flip_rates(s, site);
                if rate > 0.0 {
                    let target = s ^ (1 << site);
                    acc += rate * (f[target as usize] - f[s as usize]);
                }
            }
            out[s as usize] = acc;
        }
    }

    /// Largest total exit rate over all states.
    pub fn max_exit_rate(&self) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.n_states() as u32 {
            let total: f64 = (0..self.n_sites).map(|site| self.flip_rates(s, site)).sum();
            worst = worst.max(total);
        }
        worst
    }

    /// Dense generator matrix of the site chain (small instances only).
    pub fn generator_matrix(&self) -> Array2<f64> {
        let n = self.n_states();
        let mut q = Array2::zeros((n, n));
        for s in 0..n as u32 {
            let mut total = 0.0;
            for site in 0..self.n_sites {
                let rate = self.flip_rates(s, site);
                if rate > 0.0 {
                    q[(s as usize, (s ^ (1 << site)) as usize)] += rate;
                    total += rate;
                }
            }
            q[(s as usize, s as usize)] = -total;
        }
        q
    }

    /// `E[h(state at T)]` started from the product measure in which each
    /// site of deme `x` is type 1 independently with probability `p[x]`.
    pub fn expectation_from_product(
        &self,
        p: &[f64],
        h: &[f64],
        t: f64,
    ) -> f64 {
        let v = expmv(|f, out| self.apply_generator(f, out), self.max_exit_rate(), t, h);
        let mut total = 0.0;
        for s in 0..self.n_states() as u32 {
            let mut weight = 1.0;
            for site in 0..self.n_sites {
                let px = p[self.site_deme[site]];
                weight *= if s >> site & 1 == 1 { px } else { 1.0 - px };
            }
            total += weight * v[s as usize];
        }
        total
    }

    /// Apply the dual generator on subsets of sites. Each occupied site
    /// jumps along reversed voter arrows (coalescing on collision) and
    /// branches along reversed bias arrows (no-op onto occupied sites).
    pub fn apply_dual_generator(&self, f: &[f64], out: &mut [f64]) {
        let n_states = self.n_states();
        debug_assert_eq!(f.len(), n_states);
        for a in 0..n_states as u32 {
            let mut acc = 0.0;
            for site in 0..self.n_sites {
                if a >> site & 1 == 0 {
                    continue;
                }
                let x = self.site_deme[site];
                for &(y, rate_a, rate_b) in &self.links[x] {
                    let m_y = self.capacity[y];
                    for slot in 0..m_y {
                        let w = self.site_index(y, slot);
                        let wbit = 1u32 << w;
                        if rate_a > 0.0 {
                            let target = (a & !(1 << site)) | wbit;
                            acc += rate_a * (f[target as usize] - f[a as usize]);
                        }
                        if rate_b > 0.0 && a & wbit == 0 {
                            let target = a | wbit;
                            acc += rate_b * (f[target as usize] - f[a as usize]);
                        }
                    }
                }
            }
            out[a as usize] = acc;
        }
    }

    pub fn max_dual_exit_rate(&self) -> f64 {
        // Bound: every site active with every arrow available.
        let mut per_site_max = 0.0f64;
        for x in 0..self.links.len() {
            let total: f64 = self.links[x]
                .iter()
                .map(|(y, a, b)| f64::from(self.capacity[*y]) * (a + b))
                .sum();
            per_site_max = per_site_max.max(total);
        }
        per_site_max * self.n_sites as f64
    }

    /// `E[g(dual subset at T)]` started from the given subset.
    pub fn dual_expectation(&self, start: u32, g: &[f64], t: f64) -> f64 {
        let v = expmv(
            |f, out| self.apply_dual_generator(f, out),
            self.max_dual_exit_rate(),
            t,
            g,
        );
        v[start as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, discretize_uniform};
    use crate::scaling::{micro_from_macro, MacroParams, ThetaKind};
    use std::collections::HashMap;
    use std::sync::Arc;

    fn three_demes(m: u32, beta: f64, beta_hat: f64) -> (Arc<DiscretizedGraph>, MicroParams) {
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = Arc::new(discretize_uniform(&g, 4.0).unwrap());
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
    fn site_cap_enforced() {
        let (dg, micro) = three_demes(6, 0.0, 0.0);
        // 3 demes x 6 sites = 18 > 16.
        assert!(matches!(
            SiteSystem::new(&dg, &micro),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let (dg, micro) = three_demes(2, 0.7, 0.3);
        let sys = SiteSystem::new(&dg, &micro).unwrap();
        let q = sys.generator_matrix();
        for s in 0..sys.n_states() {
            let row_sum: f64 = (0..sys.n_states()).map(|t| q[(s, t)]).sum();
            assert!(row_sum.abs() < 1e-12);
        }
        // All-zeros and all-ones states are absorbing.
        let zero_exit: f64 = (0..sys.n_states()).map(|t| q[(0, t)].abs()).sum();
        assert_eq!(zero_exit, 0.0);
        let full = sys.n_states() - 1;
        let full_exit: f64 = (0..sys.n_states()).map(|t| q[(full, t)].abs()).sum();
        assert_eq!(full_exit, 0.0);
    }

    #[test]
    fn expmv_preserves_constants() {
        let (dg, micro) = three_demes(2, 0.5, 0.25);
        let sys = SiteSystem::new(&dg, &micro).unwrap();
        let ones = vec![1.0; sys.n_states()];
        let out = expmv(|f, o| sys.apply_generator(f, o), sys.max_exit_rate(), 0.8, &ones);
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dual_generator_conserves_nonemptiness() {
        let (dg, micro) = three_demes(2, 0.5, 0.25);
        let sys = SiteSystem::new(&dg, &micro).unwrap();
        // Indicator of the empty set evolves to... the empty set is
        // unreachable from nonempty starts: g = 1_{A nonempty} stays 1.
        let g: Vec<f64> =
            (0..sys.n_states()).map(|a| if a == 0 { 0.0 } else { 1.0 }).collect();
        for start in [1u32, 3, 5] {
            let v = sys.dual_expectation(start, &g, 0.9);
            assert!((v - 1.0).abs() < 1e-10, "start {start}: {v}");
        }
    }
}
