//! The continuous-time random walk on the discretized graph: jump rates,
//! generator application, the uniformized transition kernel, the semigroup,
//! and empirical heat-kernel diagnostics.
//!
//! Two rate normalizations are exposed:
//!
//! - [`walk_rates`] builds the walk whose jump rate from `x` to `y` is
//!   `C_xy / m_n(x)`; this is the reversible walk whose kernel the
//!   heat-kernel estimates and the local CLT are about.
//! - [`drift_rates`] builds the operator that drives the deme densities of
//!   the particle system: `q(x -> y) = 2 C_xy L^{e(y)}`, i.e. the capacity-
//!   weighted voter rate `M_y a_{x<-y}`. On a uniform-resolution graph it is
//!   the walk generator sped up by a factor 2, and on interior demes it acts
//!   exactly as `alpha * (discrete Laplacian)`. The interacting-SDE scheme,
//!   the dual walk, and the mean-density identities all use this operator,
//!   which keeps every simulated system consistent at finite resolution.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::DiscretizedGraph;
use crate::scaling::Conductances;

const KERNEL_DEME_CAP: usize = 5000;

/// Rate table of a continuous-time jump process over demes.
#[derive(Debug, Clone)]
pub struct WalkGenerator {
    /// Per deme: (neighbor, rate), channels already merged.
    rates: Vec<Vec<(usize, f64)>>,
    /// Total exit rate per deme.
    total: Vec<f64>,
    /// Reference measure, kept for kernel normalization.
    measure: Vec<f64>,
}

fn build_generator(
    dg: &DiscretizedGraph,
    rate_of: impl Fn(usize, &crate::graph::NeighborLink) -> f64,
) -> WalkGenerator {
    let n = dg.n_demes();
    let mut rates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for x in 0..n {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for link in dg.neighbors(x) {
            let r = rate_of(x, link);
            if r == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(y, _)| *y == link.deme) {
                Some(entry) => entry.1 += r,
                None => merged.push((link.deme, r)),
            }
        }
        merged.sort_by_key(|(y, _)| *y);
        rates[x] = merged;
    }
    let total = rates.iter().map(|row| row.iter().map(|(_, r)| r).sum()).collect();
    let measure = (0..n).map(|i| dg.measure(i)).collect();
    WalkGenerator { rates, total, measure }
}

/// Jump rates of the reversible walk: `lambda(x, y) = C_xy / m_n(x)`.
pub fn walk_rates(dg: &DiscretizedGraph, c: &Conductances) -> Result<WalkGenerator> {
    for x in 0..dg.n_demes() {
        for link in dg.neighbors(x) {
            let forward = c.get(x, link.deme, &link.channel);
            let back = c.get(link.deme, x, &link.channel);
            if forward != back {
                return Err(Error::AsymmetricConductance {
                    x,
                    y: link.deme,
                    cxy: forward,
                    cyx: back,
                });
            }
        }
    }
    Ok(build_generator(dg, |x, link| {
        c.get(x, link.deme, &link.channel) / dg.measure(x)
    }))
}

/// Rates of the deme-density drift operator of the exchange dynamics:
/// `q(x -> y) = 2 C_xy L^{e(y)}`, the total rate at which deme `x` copies
/// the state of deme `y` per unit density.
pub fn drift_rates(dg: &DiscretizedGraph, c: &Conductances) -> WalkGenerator {
    build_generator(dg, |x, link| {
        2.0 * c.get(x, link.deme, &link.channel) / dg.measure(link.deme)
    })
}

impl WalkGenerator {
    pub fn n_demes(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[x].iter().find(|(z, _)| *z == y).map_or(0.0, |(_, r)| *r)
    }

    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.rates[x]
    }

    pub fn total_rate(&self, x: usize) -> f64 {
        self.total[x]
    }

    pub fn max_total_rate(&self) -> f64 {
        self.total.iter().cloned().fold(0.0, f64::max)
    }

    pub fn measure(&self, x: usize) -> f64 {
        self.measure[x]
    }

    /// Apply the generator: `(Q f)(x) = sum_y lambda(x,y) (f(y) - f(x))`.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        for x in 0..self.rates.len() {
            let mut acc = 0.0;
            for &(y, r) in &self.rates[x] {
                acc += r * (f[y] - f[x]);
            }
            out[x] = acc;
        }
    }

    /// Dense generator matrix.
    pub fn matrix(&self) -> Array2<f64> {
        let n = self.rates.len();
        let mut q = Array2::zeros((n, n));
        for x in 0..n {
            for &(y, r) in &self.rates[x] {
                q[(x, y)] += r;
            }
            q[(x, x)] = -self.total[x];
        }
        q
    }
}

/// Apply the generator and return a fresh vector.
pub fn generator_apply(gen: &WalkGenerator, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    gen.apply(f, &mut out);
    out
}

/// Transition density `p(t, x, y)` of the walk, normalized against the
/// reference measure: row mass `sum_y p(t,x,y) m(y) = 1`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub t: f64,
    p: Array2<f64>,
    measure: Vec<f64>,
}

impl KernelMatrix {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[(x, y)]
    }

    pub fn n_demes(&self) -> usize {
        self.measure.len()
    }

    pub fn measure(&self, y: usize) -> f64 {
        self.measure[y]
    }

    pub fn row_mass(&self, x: usize) -> f64 {
        (0..self.measure.len()).map(|y| self.p[(x, y)] * self.measure[y]).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.measure.len();
        let mut worst = 0.0f64;
        for x in 0..n {
            for y in (x + 1)..n {
                worst = worst.max((self.p[(x, y)] - self.p[(y, x)]).abs());
            }
        }
        worst
    }

    pub fn min_entry(&self) -> f64 {
        self.p.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Chapman-Kolmogorov composition: `sum_z p(s,x,z) q(t,z,y) m(z)`.
    pub fn compose(&self, other: &KernelMatrix) -> KernelMatrix {
        let n = self.measure.len();
        let mut weighted = other.p.clone();
        for z in 0..n {
            let m = self.measure[z];
            for y in 0..n {
                weighted[(z, y)] *= m;
            }
        }
        KernelMatrix {
            t: self.t + other.t,
            p: self.p.dot(&weighted),
            measure: self.measure.clone(),
        }
    }
}

/// Transition probabilities `exp(tQ)` by uniformization: a Poisson mixture
/// of powers of the stochastic matrix `I + Q/rate`, with the time split in
/// powers of two so each factor needs only a short series. Every
/// intermediate matrix is entrywise nonnegative.
fn transition_matrix(gen: &WalkGenerator, t: f64) -> Array2<f64> {
    let n = gen.n_demes();
    let rate = gen.max_total_rate();
    let eye = Array2::eye(n);
    if t == 0.0 || rate == 0.0 {
        return eye;
    }
    let mut splits = 0u32;
    while t * rate / f64::powi(2.0, splits as i32) > 1.0 {
        splits += 1;
    }
    let dt = t / f64::powi(2.0, splits as i32);
    let lam = rate * dt;

    // Jump matrix P = I + Q/rate.
    let mut p = Array2::zeros((n, n));
    for x in 0..n {
        for &(y, r) in gen.neighbors(x) {
            p[(x, y)] += r / rate;
        }
        p[(x, x)] += 1.0 - gen.total_rate(x) / rate;
    }

    // exp(dt Q) = sum_k pois(k; lam) P^k, truncated when the tail < 1e-16.
    let mut weight = (-lam).exp();
    let mut acc = &eye * weight;
    let mut power = eye.clone();
    let mut cumulative = weight;
    let mut k = 0u32;
    while 1.0 - cumulative > 1e-16 && k < 200 {
        k += 1;
        power = power.dot(&p);
        weight *= lam / f64::from(k);
        acc.scaled_add(weight, &power);
        cumulative += weight;
    }

    for _ in 0..splits {
        acc = acc.dot(&acc);
    }
    acc
}

/// Kernel at time `t`: `p(t,x,y) = [exp(tQ)]_{xy} / m(y)`.
pub fn kernel(gen: &WalkGenerator, dg: &DiscretizedGraph, t: f64) -> Result<KernelMatrix> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let n = gen.n_demes();
    if n > KERNEL_DEME_CAP {
        return Err(Error::KernelTooLarge { demes: n, cap: KERNEL_DEME_CAP });
    }
    let mut p = transition_matrix(gen, t);
    for y in 0..n {
        let inv_m = 1.0 / dg.measure(y);
        for x in 0..n {
            p[(x, y)] *= inv_m;
        }
    }
    Ok(KernelMatrix { t, p, measure: (0..n).map(|i| dg.measure(i)).collect() })
}

/// Semigroup action `P_t f (x) = E[f(X_t) | X_0 = x]` by uniformization on
/// the vector, without forming the kernel matrix.
pub fn semigroup_apply(gen: &WalkGenerator, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(crate::exact::expmv(|v, out| gen.apply(v, out), gen.max_total_rate(), t, f))
}

/// Fitted heat-kernel constants for one resolution.
#[derive(Debug, Clone)]
pub struct FittedConstants {
    pub min_resolution: f64,
    pub epsilon: f64,
    /// Gaussian upper bound prefactor and exponent rate for t >= epsilon.
    pub c1: f64,
    pub c2: f64,
    /// Sub-Gaussian small-time prefactor and exponent rate for t <= epsilon.
    pub c3: f64,
    pub c4: f64,
    /// Gaussian lower bound prefactor and exponent rate.
    pub c5: f64,
    pub c6: f64,
    /// Space-time Holder constant and fitted exponent.
    pub c7: f64,
    pub sigma: f64,
    /// Whether every sampled kernel entry was strictly positive.
    pub lower_positive: bool,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub per_resolution: Vec<FittedConstants>,
}

impl DiagnosticsReport {
    /// Flat CSV: `resolution,constant,value`, one row per fitted constant.
    pub fn csv_rows(&self) -> Vec<(f64, &'static str, f64)> {
        let mut rows = Vec::new();
        for fc in &self.per_resolution {
            for (name, value) in [
                ("C1", fc.c1),
                ("C2", fc.c2),
                ("C3", fc.c3),
                ("C4", fc.c4),
                ("C5", fc.c5),
                ("C6", fc.c6),
                ("C7", fc.c7),
                ("sigma", fc.sigma),
            ] {
                rows.push((fc.min_resolution, name, value));
            }
        }
        rows
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::from("heat-kernel diagnostics\n");
        for fc in &self.per_resolution {
            s.push_str(&format!(
                "L = {:>6.1}  eps = {:.4}  C1 = {:.4}  C2 = {:.4}  C3 = {:.4}  C4 = {:.4}  C5 = {:.4}  C6 = {:.4}  C7 = {:.4}  sigma = {:.3}  positive = {}\n",
                fc.min_resolution,
                fc.epsilon,
                fc.c1,
                fc.c2,
                fc.c3,
                fc.c4,
                fc.c5,
                fc.c6,
                fc.c7,
                fc.sigma,
                fc.lower_positive,
            ));
        }
        s
    }
}

/// Least-squares line fit `y = a + b s`, returning `(a, b)`.
fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (points.first().map_or(0.0, |p| p.1), 0.0);
    }
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return (sy / n, 0.0);
    }
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    (a, b)
}

fn fit_bound(points: &[(f64, f64)], upper: bool) -> (f64, f64) {
    let (_, slope) = fit_line(points);
    let rate = (-slope).max(0.0);
    let mut prefactor = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
    for &(s, y) in points {
        let v = y + rate * s;
        prefactor = if upper { prefactor.max(v) } else { prefactor.min(v) };
    }
    (prefactor.exp(), rate)
}

/// Fit the heat-kernel bound constants for a single discretization.
pub fn fit_constants(
    dg: &DiscretizedGraph,
    gen: &WalkGenerator,
    times: &[f64],
) -> Result<FittedConstants> {
    let eps = dg.epsilon();
    let n = dg.n_demes();
    let dist = dg.distance_matrix();

    let large_times: Vec<f64> = times.iter().cloned().filter(|t| *t >= eps).collect();
    let small_times = [0.25 * eps, 0.5 * eps, eps];
    let mut kernels: Vec<(f64, KernelMatrix)> = Vec::new();
    for &t in large_times.iter().chain(small_times.iter()) {
        kernels.push((t, kernel(gen, dg, t)?));
    }

    let mut upper_points = Vec::new();
    let mut small_points = Vec::new();
    let mut lower_points = Vec::new();
    let mut lower_positive = true;
    for (t, k) in &kernels {
        let scale = eps.max(t.sqrt());
        for x in 0..n {
            for y in 0..n {
                let p = k.get(x, y);
                if p <= 0.0 {
                    lower_positive = false;
                    continue;
                }
                let d = dist[x * n + y];
                let logv = (p * scale).ln();
                if *t >= eps {
                    upper_points.push((d * d / t, logv));
                } else {
                    small_points.push((d / t.sqrt(), logv));
                }
                lower_points.push((d * d / t, logv));
            }
        }
    }

    let (c1, c2) = fit_bound(&upper_points, true);
    let (c3, c4) = fit_bound(&small_points, true);
    let (c5, c6) = fit_bound(&lower_points, false);

    // Holder pairs: perturb one coordinate of (t, x, y) at a time.
    let mut holder = Vec::new();
    for w in kernels.windows(2) {
        let (t0, k0) = &w[0];
        let (t1, k1) = &w[1];
        let tmin = t0.min(*t1);
        for x in 0..n {
            for y in 0..n {
                let dp = (k0.get(x, y) - k1.get(x, y)).abs();
                if dp > 1e-14 {
                    let delta = (t1 - t0).abs().sqrt();
                    holder.push((delta.ln() - 0.5 * tmin.ln(), dp.ln() + 0.5 * tmin.ln()));
                }
            }
        }
    }
    for (t, k) in &kernels {
        for x in 0..n {
            for link in dg.neighbors(x) {
                if link.deme < x {
                    continue;
                }
                for y in 0..n {
                    let dp = (k.get(x, y) - k.get(link.deme, y)).abs();
                    if dp > 1e-14 {
                        holder.push((
                            link.distance.ln() - 0.5 * t.ln(),
                            dp.ln() + 0.5 * t.ln(),
                        ));
                    }
                }
            }
        }
    }
    let (log_c7, sigma_raw) = fit_line(&holder);
    let sigma = sigma_raw.clamp(0.05, 2.0);
    let mut log_c7_max = log_c7;
    for &(s, y) in &holder {
        log_c7_max = log_c7_max.max(y - sigma * s);
    }

    Ok(FittedConstants {
        min_resolution: dg.resolutions().iter().cloned().fold(f64::INFINITY, f64::min),
        epsilon: eps,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        c7: log_c7_max.exp(),
        sigma,
        lower_positive,
    })
}

/// Fit heat-kernel constants across several resolutions of the same graph,
/// for side-by-side comparison of their uniformity in the resolution.
pub fn kernel_diagnostics(
    runs: &[(&DiscretizedGraph, &WalkGenerator)],
    times: &[f64],
) -> Result<DiagnosticsReport> {
    if runs.len() < 2 {
        return Err(Error::TooFewResolutions(runs.len()));
    }
    let mut per_resolution = Vec::new();
    for (dg, gen) in runs {
        per_resolution.push(fit_constants(dg, gen, times)?);
    }
    Ok(DiagnosticsReport { per_resolution })
}

/// Sup distance between a coarse kernel and a fine one evaluated at the
/// matching demes. The fine kernel stands in for the continuum density.
pub fn local_clt_error(
    dg_coarse: &DiscretizedGraph,
    gen_coarse: &WalkGenerator,
    dg_fine: &DiscretizedGraph,
    gen_fine: &WalkGenerator,
    t: f64,
) -> Result<f64> {
    let map = dg_coarse.nesting_map(dg_fine)?;
    let kc = kernel(gen_coarse, dg_coarse, t)?;
    let kf = kernel(gen_fine, dg_fine, t)?;
    let n = dg_coarse.n_demes();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            worst = worst.max((kc.get(x, y) - kf.get(map[x], map[y])).abs());
        }
    }
    Ok(worst)
}
