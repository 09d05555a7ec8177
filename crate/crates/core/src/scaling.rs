//! Macroscopic coefficients, microscopic rates, and the maps between them.
//!
//! The macroscopic side carries per-edge diffusion `alpha`, logistic growth
//! `beta`, noise variance `gamma`, and per-vertex boundary growth
//! `beta_hat`. The microscopic side carries the deme resolution `L`, the
//! per-deme site capacity `M`, symmetric conductances over neighbor pairs,
//! and bias rates (an interior rate per edge plus a matrix of rates over
//! ordered edge-end pairs at each vertex).
//!
//! The forward map is built so that every relation holds with zero slack at
//! finite resolution:
//!   - on-edge conductance `C = L * alpha / 2`,
//!   - cross-vertex conductance `C = Theta(alpha_e, alpha_f) / (2 * (gap_x + gap_y))`,
//!   - capacity `M = round(4 L alpha / gamma)`,
//!   - interior bias `B = beta / (2 M)`,
//!   - vertex bias `Bhat = [same end pair] * B + beta_hat * L_target / (4 deg^2 M_source)`.
//! The backward map inverts each relation, netting the interior baseline out
//! of the diagonal vertex rates so the vertex budget is recovered exactly.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Channel, DiscretizedGraph, End};

/// Mean used to combine the diffusion coefficients of two edges meeting at a
/// vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaKind {
    Geometric,
    Power(f64),
}

/// Symmetric mean of two positive numbers: `theta(a, a) = a` and the result
/// always lies between `a` and `b`.
pub fn theta(a: f64, b: f64, kind: ThetaKind) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::ThetaNonPositive { a, b });
    }
    match kind {
        ThetaKind::Geometric => Ok((a * b).sqrt()),
        ThetaKind::Power(p) => {
            if p == 0.0 {
                return Err(Error::ThetaZeroExponent);
            }
            Ok((0.5 * (a.powf(p) + b.powf(p))).powf(1.0 / p))
        }
    }
}

/// Per-edge SPDE coefficients plus per-vertex boundary growth. The density
/// of the reference measure is fixed to 1.
#[derive(Debug, Clone)]
pub struct MacroParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta_hat: Vec<f64>,
}

impl MacroParams {
    pub fn validate(&self, n_edges: usize, n_vertices: usize) -> Result<()> {
        let sized = self.alpha.len() == n_edges
            && self.beta.len() == n_edges
            && self.gamma.len() == n_edges
            && self.beta_hat.len() == n_vertices;
        if !sized {
            return Err(Error::Config("coefficient vectors do not match the graph".into()));
        }
        for (i, a) in self.alpha.iter().enumerate() {
            if !a.is_finite() || *a <= 0.0 {
                return Err(Error::Config(format!("alpha[{i}] = {a} must be positive")));
            }
        }
        for (name, v) in [("beta", &self.beta), ("gamma", &self.gamma), ("beta_hat", &self.beta_hat)] {
            for (i, x) in v.iter().enumerate() {
                if !x.is_finite() || *x < 0.0 {
                    return Err(Error::Config(format!("{name}[{i}] = {x} must be nonnegative")));
                }
            }
        }
        Ok(())
    }

    pub fn uniform(n_edges: usize, n_vertices: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        MacroParams {
            alpha: vec![alpha; n_edges],
            beta: vec![beta; n_edges],
            gamma: vec![gamma; n_edges],
            beta_hat: vec![0.0; n_vertices],
        }
    }
}

/// Key for a conductance entry: unordered deme pair plus the channel it
/// travels through (a loop edge can join the same pair both along the edge
/// and through the vertex).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairKey {
    pub low: usize,
    pub high: usize,
    pub via_vertex: Option<usize>,
}

impl PairKey {
    pub fn new(x: usize, y: usize, channel: &Channel) -> Self {
        let via_vertex = match channel {
            Channel::AlongEdge => None,
            Channel::ThroughVertex { vertex, .. } => Some(*vertex),
        };
        PairKey { low: x.min(y), high: x.max(y), via_vertex }
    }
}

/// Symmetric conductances over neighbor deme pairs.
#[derive(Debug, Clone)]
pub struct Conductances {
    map: HashMap<PairKey, f64>,
}

impl Conductances {
    pub fn get(&self, x: usize, y: usize, channel: &Channel) -> f64 {
        self.map.get(&PairKey::new(x, y, channel)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, x: usize, y: usize, channel: &Channel, value: f64) {
        self.map.insert(PairKey::new(x, y, channel), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PairKey, &f64)> {
        self.map.iter()
    }

    /// Scale every conductance by a constant factor.
    pub fn scaled(&self, factor: f64) -> Conductances {
        Conductances { map: self.map.iter().map(|(k, v)| (*k, v * factor)).collect() }
    }
}

/// Conductances of the reversible walk attached to the diffusion
/// coefficients: `L * alpha / 2` along edges and
/// `Theta(alpha_e, alpha_f) / (2 d(x, y))` through vertices.
pub fn conductances(dg: &DiscretizedGraph, alpha: &[f64], kind: ThetaKind) -> Result<Conductances> {
    assert_eq!(alpha.len(), dg.graph().n_edges());
    for (i, a) in alpha.iter().enumerate() {
        if !(*a > 0.0) {
            return Err(Error::Config(format!("alpha[{i}] = {a} must be positive")));
        }
    }
    let mut map = HashMap::new();
    for x in 0..dg.n_demes() {
        for link in dg.neighbors(x) {
            if link.deme < x {
                continue;
            }
            let value = match link.channel {
                Channel::AlongEdge => {
                    let e = dg.deme(x).edge;
                    dg.resolution(e) * alpha[e] / 2.0
                }
                Channel::ThroughVertex { .. } => {
                    let ex = dg.deme(x).edge;
                    let ey = dg.deme(link.deme).edge;
                    theta(alpha[ex], alpha[ey], kind)? / (2.0 * link.distance)
                }
            };
            map.insert(PairKey::new(x, link.deme, &link.channel), value);
        }
    }
    Ok(Conductances { map })
}

/// Bias rates at a vertex: one entry per ordered pair of edge ends
/// `(target end, source end)`, flattened row-major over the incidence list.
#[derive(Debug, Clone)]
pub struct VertexBias {
    pub rates: Vec<f64>,
    pub degree: usize,
}

impl VertexBias {
    pub fn get(&self, target_end: usize, source_end: usize) -> f64 {
        self.rates[target_end * self.degree + source_end]
    }
}

/// Particle-level rates for one discretization.
#[derive(Debug, Clone)]
pub struct MicroParams {
    /// Demes per unit length, per edge.
    pub resolution: Vec<f64>,
    /// Sites per deme, per edge.
    pub capacity: Vec<u32>,
    /// Symmetric conductances over neighbor pairs.
    pub conductance: Conductances,
    /// Interior bias rate per edge.
    pub interior_bias: Vec<f64>,
    /// Per-vertex bias over ordered edge-end pairs.
    pub vertex_bias: Vec<VertexBias>,
    /// Representative spacing `1 / min_e L^e`.
    pub epsilon: f64,
}

impl MicroParams {
    /// Voter rate for one ordered site pair: a site in deme `target` copies a
    /// site in deme `source` at `2 C L_source / M_source`.
    pub fn voter_rate(&self, dg: &DiscretizedGraph, target: usize, source: usize, channel: &Channel) -> f64 {
        let e = dg.deme(source).edge;
        2.0 * self.conductance.get(target, source, channel) * self.resolution[e]
            / f64::from(self.capacity[e])
    }

    /// Bias rate for one ordered site pair. Interior sources use the edge
    /// rate; vertex-adjacent sources use the vertex matrix of their end.
    pub fn bias_rate(&self, dg: &DiscretizedGraph, target: usize, source: usize, channel: &Channel) -> f64 {
        match channel {
            Channel::ThroughVertex { vertex, my_end, other_end } => {
                let bias = &self.vertex_bias[*vertex];
                let target_slot = incidence_slot(dg, *vertex, dg.deme(target).edge, *my_end);
                let source_slot = incidence_slot(dg, *vertex, dg.deme(source).edge, *other_end);
                bias.get(target_slot, source_slot)
            }
            Channel::AlongEdge => match dg.adjacent_vertex(source) {
                Some(v) => {
                    // Source is the boundary deme of its end; the rate for the
                    // (second deme <- boundary deme) pair sits on the diagonal
                    // of the vertex matrix.
                    let end = boundary_end(dg, source);
                    let slot = incidence_slot(dg, v, dg.deme(source).edge, end);
                    self.vertex_bias[v].get(slot, slot)
                }
                None => self.interior_bias[dg.deme(source).edge],
            },
        }
    }

    pub fn capacity_of(&self, dg: &DiscretizedGraph, deme: usize) -> u32 {
        self.capacity[dg.deme(deme).edge]
    }
}

fn boundary_end(dg: &DiscretizedGraph, deme: usize) -> End {
    let range = dg.edge_demes(dg.deme(deme).edge);
    if deme == range.start {
        End::Initial
    } else {
        End::Terminal
    }
}

fn incidence_slot(dg: &DiscretizedGraph, vertex: usize, edge: usize, end: End) -> usize {
    dg.graph()
        .incidences(vertex)
        .iter()
        .position(|inc| inc.edge == edge && inc.end == end)
        .expect("incidence present at vertex")
}

/// Derive microscopic rates that realize the macroscopic coefficients with
/// zero slack. Edges with `gamma = 0` need an explicit capacity override.
pub fn micro_from_macro(
    macro_params: &MacroParams,
    dg: &DiscretizedGraph,
    kind: ThetaKind,
    capacity_override: &HashMap<String, u32>,
) -> Result<MicroParams> {
    let graph = dg.graph();
    macro_params.validate(graph.n_edges(), graph.n_vertices())?;

    let mut capacity = Vec::with_capacity(graph.n_edges());
    let mut interior_bias = Vec::with_capacity(graph.n_edges());
    for (e, edge) in graph.edges().iter().enumerate() {
        let l = dg.resolution(e);
        let gamma = macro_params.gamma[e];
        let alpha = macro_params.alpha[e];
        let m = if gamma > 0.0 {
            if alpha <= 0.0 {
                return Err(Error::NoiseWithoutDiffusion { edge: edge.id.clone() });
            }
            let target = 4.0 * l * alpha / gamma;
            let rounded = target.round();
            if rounded < 1.0 {
                return Err(Error::ZeroCapacity { edge: edge.id.clone(), value: target });
            }
            rounded as u32
        } else {
            *capacity_override
                .get(&edge.id)
                .ok_or_else(|| Error::MissingCapacityOverride { edge: edge.id.clone() })?
        };
        capacity.push(m);
        interior_bias.push(macro_params.beta[e] / (2.0 * f64::from(m)));
    }

    let mut vertex_bias = Vec::with_capacity(graph.n_vertices());
    for v in 0..graph.n_vertices() {
        let incs = graph.incidences(v);
        let degree = incs.len();
        let budget = macro_params.beta_hat[v];
        let mut rates = vec![0.0; degree * degree];
        for (t, inc_t) in incs.iter().enumerate() {
            for (s, inc_s) in incs.iter().enumerate() {
                let l_target = dg.resolution(inc_t.edge);
                let m_source = f64::from(capacity[inc_s.edge]);
                let baseline = if t == s { interior_bias[inc_t.edge] } else { 0.0 };
                let share = budget * l_target / (4.0 * (degree * degree) as f64 * m_source);
                rates[t * degree + s] = baseline + share;
            }
        }
        vertex_bias.push(VertexBias { rates, degree });
    }

    Ok(MicroParams {
        resolution: dg.resolutions().to_vec(),
        capacity,
        conductance: conductances(dg, &macro_params.alpha, kind)?,
        interior_bias,
        vertex_bias,
        epsilon: dg.epsilon(),
    })
}

/// Recover macroscopic coefficients from microscopic rates by the finite-n
/// plug-in of the limit relations. The vertex budget nets the interior
/// baseline out of the diagonal entries, which makes the round trip through
/// `micro_from_macro` exact.
pub fn macro_from_micro(micro: &MicroParams, dg: &DiscretizedGraph) -> MacroParams {
    let graph = dg.graph();
    let mut alpha = Vec::with_capacity(graph.n_edges());
    let mut gamma = Vec::with_capacity(graph.n_edges());
    let mut beta = Vec::with_capacity(graph.n_edges());
    for e in 0..graph.n_edges() {
        let l = micro.resolution[e];
        let range = dg.edge_demes(e);
        let c_on_edge = micro.conductance.get(range.start, range.start + 1, &Channel::AlongEdge);
        let a = 2.0 * c_on_edge / l;
        alpha.push(a);
        gamma.push(4.0 * a * l / f64::from(micro.capacity[e]));
        beta.push(2.0 * micro.interior_bias[e] * f64::from(micro.capacity[e]));
    }

    let mut beta_hat = Vec::with_capacity(graph.n_vertices());
    for v in 0..graph.n_vertices() {
        let incs = graph.incidences(v);
        let bias = &micro.vertex_bias[v];
        let mut sum = 0.0;
        for (t, inc_t) in incs.iter().enumerate() {
            for (s, inc_s) in incs.iter().enumerate() {
                let baseline = if t == s { micro.interior_bias[inc_t.edge] } else { 0.0 };
                let m_source = f64::from(micro.capacity[inc_s.edge]);
                let l_target = micro.resolution[inc_t.edge];
                sum += (bias.get(t, s) - baseline) * m_source / l_target;
            }
        }
        beta_hat.push(4.0 * sum);
    }

    MacroParams { alpha, beta, gamma, beta_hat }
}

/// Residuals of the five scaling conditions for a micro parameter set
/// against a macroscopic target.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// Worst violation of the boundary-gap bounds `1/L <= gap < 2/L` and of
    /// the deme spacing along edges (zero when the bounds hold).
    pub gap_violation: f64,
    /// Worst `|4 L / M - gamma / alpha|` over edges with noise, and worst
    /// `L / M` over noiseless edges (which must stay below 0.05).
    pub capacity_residual: f64,
    /// Worst `|C - Theta / (2 d)| * L` over neighbor pairs.
    pub conductance_residual: f64,
    /// Worst `|2 B M - beta|` over edges.
    pub interior_bias_residual: f64,
    /// Worst `|4 sum (Bhat - baseline) M / L - beta_hat|` over vertices.
    pub vertex_bias_residual: f64,
    pub pass: bool,
}

impl ConditionReport {
    pub fn lines(&self) -> Vec<String> {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        vec![
            format!("(a) deme gaps            {}  residual {:.3e}", mark(self.gap_violation == 0.0), self.gap_violation),
            format!("(b) capacity ratio       {}  residual {:.3e}", mark(self.capacity_residual <= 0.05), self.capacity_residual),
            format!("(c) conductances         {}  residual {:.3e}", mark(self.conductance_residual <= 1e-9), self.conductance_residual),
            format!("(d) interior bias        {}  residual {:.3e}", mark(self.interior_bias_residual <= 1e-9), self.interior_bias_residual),
            format!("(e) vertex bias budget   {}  residual {:.3e}", mark(self.vertex_bias_residual <= 1e-9), self.vertex_bias_residual),
        ]
    }
}

/// Check a micro parameter set against its macroscopic target. Report-only:
/// residuals are returned, nothing fails hard.
pub fn validate_conditions(
    micro: &MicroParams,
    macro_params: &MacroParams,
    dg: &DiscretizedGraph,
    kind: ThetaKind,
) -> ConditionReport {
    let graph = dg.graph();

    // (a) spacing and gap bounds.
    let mut gap_violation = 0.0f64;
    for e in 0..graph.n_edges() {
        let l = micro.resolution[e];
        let range = dg.edge_demes(e);
        for i in range.clone() {
            if i + 1 < range.end {
                let spacing = dg.deme(i + 1).coord - dg.deme(i).coord;
                gap_violation = gap_violation.max((spacing - 1.0 / l).abs() * l);
            }
        }
    }
    for v in 0..graph.n_vertices() {
        for &d in dg.boundary_demes(v) {
            let l = micro.resolution[dg.deme(d).edge];
            let gap = dg.vertex_gap(d).unwrap_or(0.0);
            if gap < 1.0 / l - 1e-12 {
                gap_violation = gap_violation.max((1.0 / l - gap) * l);
            }
            if gap >= 2.0 / l {
                gap_violation = gap_violation.max((gap - 2.0 / l) * l + f64::EPSILON);
            }
        }
    }

    // (b) capacity ratio.
    let mut capacity_residual = 0.0f64;
    for e in 0..graph.n_edges() {
        let l = micro.resolution[e];
        let m = f64::from(micro.capacity[e]);
        if macro_params.gamma[e] > 0.0 {
            capacity_residual = capacity_residual
                .max((4.0 * l / m - macro_params.gamma[e] / macro_params.alpha[e]).abs());
        } else {
            capacity_residual = capacity_residual.max(l / m);
        }
    }

    // (c) conductance slack against the zero-slack target, scaled by L.
    let mut conductance_residual = 0.0f64;
    for x in 0..dg.n_demes() {
        for link in dg.neighbors(x) {
            if link.deme < x {
                continue;
            }
            let ex = dg.deme(x).edge;
            let ey = dg.deme(link.deme).edge;
            let target = match link.channel {
                Channel::AlongEdge => micro.resolution[ex] * macro_params.alpha[ex] / 2.0,
                Channel::ThroughVertex { .. } => {
                    match theta(macro_params.alpha[ex], macro_params.alpha[ey], kind) {
                        Ok(t) => t / (2.0 * link.distance),
                        Err(_) => f64::NAN,
                    }
                }
            };
            let c = micro.conductance.get(x, link.deme, &link.channel);
            conductance_residual = conductance_residual.max((c - target).abs() * micro.resolution[ex]);
        }
    }

    // (d) interior bias.
    let mut interior_bias_residual = 0.0f64;
    for e in 0..graph.n_edges() {
        let m = f64::from(micro.capacity[e]);
        interior_bias_residual = interior_bias_residual
            .max((2.0 * micro.interior_bias[e] * m - macro_params.beta[e]).abs());
    }

    // (e) vertex budget, net of the interior baseline on diagonal pairs.
    let recovered = macro_from_micro(micro, dg);
    let mut vertex_bias_residual = 0.0f64;
    for v in 0..graph.n_vertices() {
        vertex_bias_residual =
            vertex_bias_residual.max((recovered.beta_hat[v] - macro_params.beta_hat[v]).abs());
    }

    let pass = gap_violation == 0.0
        && capacity_residual <= 0.05
        && conductance_residual <= 1e-9
        && interior_bias_residual <= 1e-9
        && vertex_bias_residual <= 1e-9;

    ConditionReport {
        gap_violation,
        capacity_residual,
        conductance_residual,
        interior_bias_residual,
        vertex_bias_residual,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, discretize_uniform};

    fn star3() -> crate::graph::MetricGraph {
        build_graph(
            &["hub", "a", "b", "c"],
            &[("e0", "hub", "a", 1.0), ("e1", "hub", "b", 1.0), ("e2", "hub", "c", 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(2.0, 2.0, ThetaKind::Geometric).unwrap(), 2.0);
        assert_eq!(theta(2.0, 2.0, ThetaKind::Power(3.0)).unwrap(), 2.0);
        assert!((theta(1.0, 4.0, ThetaKind::Geometric).unwrap() - 2.0).abs() < 1e-15);
        assert!((theta(1.0, 4.0, ThetaKind::Power(1.0)).unwrap() - 2.5).abs() < 1e-15);
        assert!(theta(-1.0, 2.0, ThetaKind::Geometric).is_err());
        assert!(theta(1.0, 2.0, ThetaKind::Power(0.0)).is_err());
    }

    #[test]
    fn on_edge_conductance_value() {
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = discretize_uniform(&g, 10.0).unwrap();
        let c = conductances(&dg, &[2.0], ThetaKind::Geometric).unwrap();
        assert!((c.get(0, 1, &Channel::AlongEdge) - 10.0).abs() < 1e-12, "C = L*alpha/2");
    }

    #[test]
    fn hub_conductance_value() {
        let dg = discretize_uniform(&star3(), 8.0).unwrap();
        let c = conductances(&dg, &[1.0; 3], ThetaKind::Geometric).unwrap();
        let hub = dg.graph().vertex_by_id("hub").unwrap();
        let b = dg.boundary_demes(hub);
        let link = dg.neighbors(b[0]).iter().find(|n| n.deme == b[1]).unwrap();
        assert!((c.get(b[0], b[1], &link.channel) - 2.0).abs() < 1e-12, "Theta/(2*(2/L)) = L/4");
    }

    #[test]
    fn uniform_alpha_gives_equal_on_edge_conductances() {
        let dg = discretize_uniform(&star3(), 8.0).unwrap();
        let c = conductances(&dg, &[1.5; 3], ThetaKind::Geometric).unwrap();
        let mut values = Vec::new();
        for e in 0..3 {
            let range = dg.edge_demes(e);
            values.push(c.get(range.start, range.start + 1, &Channel::AlongEdge));
        }
        assert!(values.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
    }

    #[test]
    fn conductance_symmetry_scan() {
        let dg = discretize_uniform(&star3(), 8.0).unwrap();
        let c = conductances(&dg, &[1.0, 2.0, 3.0], ThetaKind::Geometric).unwrap();
        for x in 0..dg.n_demes() {
            for link in dg.neighbors(x) {
                let forward = c.get(x, link.deme, &link.channel);
                let back = c.get(link.deme, x, &link.channel);
                assert_eq!(forward, back);
                assert!(forward > 0.0);
            }
        }
    }

    #[test]
    fn capacity_from_noise_ratio() {
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = discretize_uniform(&g, 16.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0],
            beta: vec![0.5],
            gamma: vec![1.0],
            beta_hat: vec![0.0, 0.0],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        assert_eq!(micro.capacity[0], 64, "M = 4*L*alpha/gamma");
        assert!((micro.interior_bias[0] - 1.0 / 256.0).abs() < 1e-18, "B = beta/(2M)");
    }

    #[test]
    fn vertex_share_equal_split() {
        let dg = discretize_uniform(&star3(), 16.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0; 3],
            beta: vec![0.0; 3],
            gamma: vec![1.0; 3],
            beta_hat: vec![1.0, 0.0, 0.0, 0.0],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        let hub = dg.graph().vertex_by_id("hub").unwrap();
        let bias = &micro.vertex_bias[hub];
        // beta=0, so every entry is the pure vertex share 16/(36*64) = 1/144.
        for t in 0..3 {
            for s in 0..3 {
                assert!((bias.get(t, s) - 1.0 / 144.0).abs() < 1e-15);
            }
        }
        // Plugging the shares back into the budget sum recovers beta_hat.
        let recovered = macro_from_micro(&micro, &dg);
        assert!((recovered.beta_hat[hub] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let dg = discretize_uniform(&star3(), 16.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0, 2.0, 0.5],
            beta: vec![0.5, 0.0, 1.0],
            gamma: vec![1.0, 2.0, 0.5],
            beta_hat: vec![1.0, 0.0, 0.25, 0.0],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        let back = macro_from_micro(&micro, &dg);
        for e in 0..3 {
            assert!((back.alpha[e] - macro_params.alpha[e]).abs() < 1e-12);
            assert!((back.gamma[e] - macro_params.gamma[e]).abs() < 1e-12);
            assert!((back.beta[e] - macro_params.beta[e]).abs() < 1e-12);
        }
        for v in 0..4 {
            assert!((back.beta_hat[v] - macro_params.beta_hat[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_alpha_exact_on_plain_values() {
        // alpha = 2*C/L with C = 10, L = 10.
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = discretize_uniform(&g, 10.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![2.0],
            beta: vec![0.0],
            gamma: vec![1.0],
            beta_hat: vec![0.0; 2],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        let range = dg.edge_demes(0);
        assert!((micro.conductance.get(range.start, range.start + 1, &Channel::AlongEdge) - 10.0).abs() < 1e-12);
        let back = macro_from_micro(&micro, &dg);
        assert!((back.alpha[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_bias_recovers_zero_growth() {
        let dg = discretize_uniform(&star3(), 8.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0; 3],
            beta: vec![0.0; 3],
            gamma: vec![1.0; 3],
            beta_hat: vec![0.0; 4],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        let back = macro_from_micro(&micro, &dg);
        assert!(back.beta.iter().all(|b| *b == 0.0));
        assert!(back.beta_hat.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn validator_all_zero_on_constructed_micro() {
        let dg = discretize_uniform(&star3(), 16.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0; 3],
            beta: vec![0.5; 3],
            gamma: vec![1.0; 3],
            beta_hat: vec![1.0, 0.0, 0.0, 0.0],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        let report = validate_conditions(&micro, &macro_params, &dg, ThetaKind::Geometric);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.gap_violation, 0.0);
        assert!(report.conductance_residual <= 1e-12);
        assert!(report.interior_bias_residual <= 1e-12);
        assert!(report.vertex_bias_residual <= 1e-12);
    }

    #[test]
    fn validator_flags_halved_capacity() {
        let dg = discretize_uniform(&star3(), 16.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0; 3],
            beta: vec![0.0; 3],
            gamma: vec![1.0; 3],
            beta_hat: vec![0.0; 4],
        };
        let mut micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        for m in &mut micro.capacity {
            *m /= 2;
        }
        let report = validate_conditions(&micro, &macro_params, &dg, ThetaKind::Geometric);
        // 4L/(M/2) = 2 gamma/alpha, so the residual equals gamma/alpha = 1.
        assert!((report.capacity_residual - 1.0).abs() < 1e-12);
        assert!(!report.pass);
    }

    #[test]
    fn validator_flags_bad_gap() {
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = discretize_uniform(&g, 8.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0],
            beta: vec![0.0],
            gamma: vec![1.0],
            beta_hat: vec![0.0; 2],
        };
        let micro =
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()).unwrap();
        // Push the first deme to 2.5/L from the vertex.
        let mut broken = dg.clone();
        broken_first_deme(&mut broken, 2.5 / 8.0);
        let report = validate_conditions(&micro, &macro_params, &broken, ThetaKind::Geometric);
        assert!(report.gap_violation > 0.0);
        assert!(!report.pass);
    }

    fn broken_first_deme(dg: &mut DiscretizedGraph, coord: f64) {
        dg.override_coord_for_tests(0, coord);
    }

    #[test]
    fn epsilon_is_reciprocal_min_resolution() {
        let g = build_graph(
            &["a", "b", "c"],
            &[("e0", "a", "b", 1.0), ("e1", "b", "c", 1.0)],
        )
        .unwrap();
        let mut per_edge = HashMap::new();
        per_edge.insert("e0".to_string(), 8.0);
        per_edge.insert("e1".to_string(), 16.0);
        let dg = crate::graph::discretize(&g, &crate::graph::Resolution::PerEdge(per_edge)).unwrap();
        assert!((dg.epsilon() - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_zero_requires_override() {
        let g = build_graph(&["a", "b"], &[("e0", "a", "b", 1.0)]).unwrap();
        let dg = discretize_uniform(&g, 8.0).unwrap();
        let macro_params = MacroParams {
            alpha: vec![1.0],
            beta: vec![1.0],
            gamma: vec![0.0],
            beta_hat: vec![0.0; 2],
        };
        assert!(matches!(
            micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &HashMap::new()),
            Err(Error::MissingCapacityOverride { .. })
        ));
        let mut overrides = HashMap::new();
        overrides.insert("e0".to_string(), 400u32);
        let micro = micro_from_macro(&macro_params, &dg, ThetaKind::Geometric, &overrides).unwrap();
        let report = validate_conditions(&micro, &macro_params, &dg, ThetaKind::Geometric);
        assert!(report.pass, "L/M = 0.02 <= 0.05");
    }
}

