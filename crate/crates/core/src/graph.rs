//! Finite metric graphs and their deme discretizations.
//!
//! A metric graph is a set of vertices joined by edges of positive length,
//! each edge identified with a real interval carrying arclength. The
//! discretization places demes along every edge at spacing `1/L` (demes per
//! unit length), leaving a gap of exactly `1/L` at both ends, and wires up
//! the neighbor relation: consecutive demes along an edge, plus all pairs of
//! end demes meeting at a common vertex.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Which end of an edge an incidence refers to. Self-loops contribute two
/// incidences at the same vertex, one per end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum End {
    Initial,
    Terminal,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

/// An (edge, end) pair incident to a vertex. `E(v)` is the disjoint union of
/// edge ends meeting `v`, so `deg(v) = incidences(v).len()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Incidence {
    pub edge: usize,
    pub end: End,
}

/// A finite metric graph: vertices, edges with lengths, and the incidence map.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertex_ids: Vec<String>,
    edges: Vec<Edge>,
    incidence: Vec<Vec<Incidence>>,
    vertex_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
}

/// Build a validated metric graph from vertex ids and edge descriptions
/// `(edge id, initial vertex, terminal vertex, length)`.
pub fn build_graph(vertices: &[&str], edges: &[(&str, &str, &str, f64)]) -> Result<MetricGraph> {
    let mut vertex_ids = Vec::with_capacity(vertices.len());
    let mut vertex_index = HashMap::new();
    for v in vertices {
        if vertex_index.insert((*v).to_string(), vertex_ids.len()).is_some() {
            return Err(Error::DuplicateVertexId((*v).to_string()));
        }
        vertex_ids.push((*v).to_string());
    }

    let mut out_edges = Vec::with_capacity(edges.len());
    let mut edge_index = HashMap::new();
    let mut incidence = vec![Vec::new(); vertex_ids.len()];
    for (id, from, to, length) in edges {
        if !length.is_finite() || *length <= 0.0 {
            return Err(Error::NonPositiveLength { edge: (*id).to_string(), length: *length });
        }
        let from_idx = *vertex_index.get(*from).ok_or_else(|| Error::DanglingEndpoint {
            edge: (*id).to_string(),
            vertex: (*from).to_string(),
        })?;
        let to_idx = *vertex_index.get(*to).ok_or_else(|| Error::DanglingEndpoint {
            edge: (*id).to_string(),
            vertex: (*to).to_string(),
        })?;
        let edge_idx = out_edges.len();
        if edge_index.insert((*id).to_string(), edge_idx).is_some() {
            return Err(Error::DuplicateEdgeId((*id).to_string()));
        }
        incidence[from_idx].push(Incidence { edge: edge_idx, end: End::Initial });
        incidence[to_idx].push(Incidence { edge: edge_idx, end: End::Terminal });
        out_edges.push(Edge {
            id: (*id).to_string(),
            from: from_idx,
            to: to_idx,
            length: *length,
        });
    }

    Ok(MetricGraph { vertex_ids, edges: out_edges, incidence, vertex_index, edge_index })
}

impl MetricGraph {
    pub fn n_vertices(&self) -> usize {
        self.vertex_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_id(&self, v: usize) -> &str {
        &self.vertex_ids[v]
    }

    pub fn vertex_by_id(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ends meeting vertex `v` (self-loops appear twice).
    pub fn incidences(&self, v: usize) -> &[Incidence] {
        &self.incidence[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.incidence[v].len()
    }

    /// The vertex at a given end of an edge.
    pub fn endpoint(&self, e: usize, end: End) -> usize {
        match end {
            End::Initial => self.edges[e].from,
            End::Terminal => self.edges[e].to,
        }
    }

    /// All-pairs vertex distances along the graph (shortest path by edge
    /// lengths). Disconnected pairs map to infinity.
    pub fn vertex_distances(&self) -> Vec<Vec<f64>> {
        let n = self.n_vertices();
        let mut dist = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for e in &self.edges {
            let d = dist[e.from][e.to].min(e.length);
            dist[e.from][e.to] = d;
            dist[e.to][e.from] = d;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[i][k] + dist[k][j];
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        dist
    }
}

/// A deme: a lattice point of the discretized graph.
#[derive(Debug, Clone)]
pub struct Deme {
    pub edge: usize,
    /// 1-based position along the edge; coordinate = rank / L.
    pub rank: u32,
    /// Arclength coordinate from the edge's initial vertex.
    pub coord: f64,
}

/// How two neighboring demes are related. Cross-vertex neighbors record the
/// incidences through which they meet, which later index the per-vertex bias
/// rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    AlongEdge,
    ThroughVertex { vertex: usize, my_end: End, other_end: End },
}

#[derive(Debug, Clone, Copy)]
pub struct NeighborLink {
    pub deme: usize,
    pub channel: Channel,
    /// Arclength between the two demes along this channel.
    pub distance: f64,
}

/// The discretized graph: demes, spacings, neighbor lists, and the reference
/// measure assigning mass `1/L^e` to every deme on edge `e`.
#[derive(Debug, Clone)]
pub struct DiscretizedGraph {
    graph: Arc<MetricGraph>,
    resolution: Vec<f64>,
    demes: Vec<Deme>,
    edge_demes: Vec<std::ops::Range<usize>>,
    neighbors: Vec<Vec<NeighborLink>>,
    /// Boundary deme at each incidence of each vertex, aligned with
    /// `MetricGraph::incidences`.
    boundary_demes: Vec<Vec<usize>>,
}

/// Per-edge resolution assignment.
#[derive(Debug, Clone)]
pub enum Resolution {
    Uniform(f64),
    PerEdge(HashMap<String, f64>),
}

impl Resolution {
    fn get(&self, edge: &Edge) -> f64 {
        match self {
            Resolution::Uniform(l) => *l,
            Resolution::PerEdge(map) => map.get(&edge.id).copied().unwrap_or(0.0),
        }
    }
}

/// Discretize a metric graph. Every edge must satisfy `length * L` integral
/// and at least 3, which places `K = length*L - 1` demes at coordinates
/// `k/L` and makes both end gaps exactly `1/L`.
pub fn discretize(graph: &MetricGraph, resolution: &Resolution) -> Result<DiscretizedGraph> {
    let graph = Arc::new(graph.clone());
    let mut res = Vec::with_capacity(graph.n_edges());
    let mut demes = Vec::new();
    let mut edge_demes = Vec::with_capacity(graph.n_edges());

    for (e_idx, edge) in graph.edges().iter().enumerate() {
        let l = resolution.get(edge);
        let product = edge.length * l;
        let rounded = product.round();
        if !product.is_finite() || (product - rounded).abs() > 1e-9 {
            return Err(Error::NonIntegerResolution { edge: edge.id.clone(), product });
        }
        if rounded < 3.0 {
            return Err(Error::ResolutionTooCoarse { edge: edge.id.clone(), product });
        }
        let k = rounded as u32 - 1;
        let start = demes.len();
        for rank in 1..=k {
            demes.push(Deme { edge: e_idx, rank, coord: f64::from(rank) / l });
        }
        edge_demes.push(start..demes.len());
        res.push(l);
    }

    let mut neighbors = vec![Vec::new(); demes.len()];
    for range in &edge_demes {
        for i in range.clone() {
            if i + 1 < range.end {
                let d = demes[i + 1].coord - demes[i].coord;
                neighbors[i].push(NeighborLink { deme: i + 1, channel: Channel::AlongEdge, distance: d });
                neighbors[i + 1].push(NeighborLink { deme: i, channel: Channel::AlongEdge, distance: d });
            }
        }
    }

    // Boundary deme for each incidence: rank 1 at the initial end, rank K at
    // the terminal end.
    let mut boundary_demes = Vec::with_capacity(graph.n_vertices());
    for v in 0..graph.n_vertices() {
        let mut per_incidence = Vec::new();
        for inc in graph.incidences(v) {
            let range = &edge_demes[inc.edge];
            let deme = match inc.end {
                End::Initial => range.start,
                End::Terminal => range.end - 1,
            };
            per_incidence.push(deme);
        }
        boundary_demes.push(per_incidence);
    }

    // Cross-vertex neighbors: all ordered pairs of distinct incidences at a
    // vertex link their boundary demes.
    for v in 0..graph.n_vertices() {
        let incs = graph.incidences(v);
        for (a, inc_a) in incs.iter().enumerate() {
            for (b, inc_b) in incs.iter().enumerate() {
                if a == b {
                    continue;
                }
                let x = boundary_demes[v][a];
                let y = boundary_demes[v][b];
                let gap_x = end_gap(&demes[x], graph.edge(inc_a.edge).length, inc_a.end);
                let gap_y = end_gap(&demes[y], graph.edge(inc_b.edge).length, inc_b.end);
                neighbors[x].push(NeighborLink {
                    deme: y,
                    channel: Channel::ThroughVertex { vertex: v, my_end: inc_a.end, other_end: inc_b.end },
                    distance: gap_x + gap_y,
                });
            }
        }
    }

    Ok(DiscretizedGraph { graph, resolution: res, demes, edge_demes, neighbors, boundary_demes })
}

/// Convenience: one resolution for every edge.
pub fn discretize_uniform(graph: &MetricGraph, l: f64) -> Result<DiscretizedGraph> {
    discretize(graph, &Resolution::Uniform(l))
}

fn end_gap(deme: &Deme, length: f64, end: End) -> f64 {
    match end {
        End::Initial => deme.coord,
        End::Terminal => length - deme.coord,
    }
}

impl DiscretizedGraph {
    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn n_demes(&self) -> usize {
        self.demes.len()
    }

    pub fn deme(&self, i: usize) -> &Deme {
        &self.demes[i]
    }

    pub fn demes(&self) -> &[Deme] {
        &self.demes
    }

    pub fn resolution(&self, edge: usize) -> f64 {
        self.resolution[edge]
    }

    pub fn resolutions(&self) -> &[f64] {
        &self.resolution
    }

    /// Demes on an edge, ordered by coordinate.
    pub fn edge_demes(&self, edge: usize) -> std::ops::Range<usize> {
        self.edge_demes[edge].clone()
    }

    pub fn neighbors(&self, deme: usize) -> &[NeighborLink] {
        &self.neighbors[deme]
    }

    /// Reference measure: `m_n(x) = 1/L^e` for `x` on edge `e`.
    pub fn measure(&self, deme: usize) -> f64 {
        1.0 / self.resolution[self.demes[deme].edge]
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.n_demes()).map(|i| self.measure(i)).sum()
    }

    /// Representative spacing scale: `1 / min_e L^e`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.resolution.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Boundary demes aligned with `graph().incidences(v)`.
    pub fn boundary_demes(&self, v: usize) -> &[usize] {
        &self.boundary_demes[v]
    }

    /// The vertex a deme is adjacent to, if any. Boundary demes are adjacent
    /// to exactly one vertex since every edge carries at least two demes.
    pub fn adjacent_vertex(&self, deme: usize) -> Option<usize> {
        let d = &self.demes[deme];
        let range = &self.edge_demes[d.edge];
        let edge = self.graph.edge(d.edge);
        if deme == range.start {
            Some(edge.from)
        } else if deme == range.end - 1 {
            Some(edge.to)
        } else {
            None
        }
    }

    /// Arclength from a deme to a vertex along its own edge end, when the
    /// deme is the boundary deme of that end.
    pub fn vertex_gap(&self, deme: usize) -> Option<f64> {
        let d = &self.demes[deme];
        let range = &self.edge_demes[d.edge];
        let edge = self.graph.edge(d.edge);
        if deme == range.start {
            Some(d.coord)
        } else if deme == range.end - 1 {
            Some(edge.length - d.coord)
        } else {
            None
        }
    }

    /// Shortest-path arclength between two demes.
    pub fn deme_distance(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return 0.0;
        }
        let dx = &self.demes[x];
        let dy = &self.demes[y];
        let vdist = self.graph.vertex_distances();
        let ex = self.graph.edge(dx.edge);
        let ey = self.graph.edge(dy.edge);
        let mut best = if dx.edge == dy.edge { (dx.coord - dy.coord).abs() } else { f64::INFINITY };
        // Through vertices: deme -> endpoint -> ... -> endpoint -> deme.
        let x_ends = [(ex.from, dx.coord), (ex.to, ex.length - dx.coord)];
        let y_ends = [(ey.from, dy.coord), (ey.to, ey.length - dy.coord)];
        for (vx, gx) in x_ends {
            for (vy, gy) in y_ends {
                let via = gx + vdist[vx][vy] + gy;
                if via < best {
                    best = via;
                }
            }
        }
        best
    }

    /// Dense deme-to-deme distance matrix (row-major, `n*n`).
    pub fn distance_matrix(&self) -> Vec<f64> {
        let n = self.n_demes();
        let vdist = self.graph.vertex_distances();
        let mut out = vec![0.0; n * n];
        for x in 0..n {
            let dx = &self.demes[x];
            let ex = self.graph.edge(dx.edge);
            let x_ends = [(ex.from, dx.coord), (ex.to, ex.length - dx.coord)];
            for y in (x + 1)..n {
                let dy = &self.demes[y];
                let ey = self.graph.edge(dy.edge);
                let mut best =
                    if dx.edge == dy.edge { (dx.coord - dy.coord).abs() } else { f64::INFINITY };
                let y_ends = [(ey.from, dy.coord), (ey.to, ey.length - dy.coord)];
                for (vx, gx) in x_ends {
                    for (vy, gy) in y_ends {
                        let via = gx + vdist[vx][vy] + gy;
                        if via < best {
                            best = via;
                        }
                    }
                }
                out[x * n + y] = best;
                out[y * n + x] = best;
            }
        }
        out
    }

    /// Index of the deme on `edge` nearest to arclength `coord`.
    pub fn nearest_deme(&self, edge: usize, coord: f64) -> Option<usize> {
        let range = &self.edge_demes[edge];
        if range.is_empty() {
            return None;
        }
        let l = self.resolution[edge];
        let k_max = (range.end - range.start) as f64;
        let k = (coord * l).round().clamp(1.0, k_max) as usize;
        Some(range.start + k - 1)
    }

    /// True when the two discretizations come from identical metric graphs
    /// and every deme of `self` coincides with a deme of `fine` (within
    /// 1e-9 arclength).
    pub fn nested_in(&self, fine: &DiscretizedGraph) -> Result<()> {
        for d in &self.demes {
            let edge = self.graph.edge(d.edge);
            let fine_edge = fine.graph.edge_by_id(&edge.id).ok_or_else(|| Error::NotNested {
                edge: edge.id.clone(),
                coord: d.coord,
            })?;
            let near = fine.nearest_deme(fine_edge, d.coord).ok_or_else(|| Error::NotNested {
                edge: edge.id.clone(),
                coord: d.coord,
            })?;
            if (fine.demes[near].coord - d.coord).abs() > 1e-9 {
                return Err(Error::NotNested { edge: edge.id.clone(), coord: d.coord });
            }
        }
        Ok(())
    }

    /// Map each deme of `self` to the fine deme at the same position.
    pub fn nesting_map(&self, fine: &DiscretizedGraph) -> Result<Vec<usize>> {
        self.nested_in(fine)?;
        let mut map = Vec::with_capacity(self.n_demes());
        for d in &self.demes {
            let edge = self.graph.edge(d.edge);
            let fine_edge = fine.graph.edge_by_id(&edge.id).unwrap();
            map.push(fine.nearest_deme(fine_edge, d.coord).unwrap());
        }
        Ok(map)
    }
}

#[cfg(test)]
impl DiscretizedGraph {
    /// Test hook: move one deme so the gap bounds can be violated on purpose.
    pub(crate) fn override_coord_for_tests(&mut self, deme: usize, coord: f64) {
        self.demes[deme].coord = coord;
    }
}

/// A density profile on the discretized graph: per-deme values in `[0,1]`,
/// vertex values given by the unweighted mean over adjacent demes, and
/// piecewise-linear evaluation everywhere in between.
#[derive(Debug, Clone)]
pub struct DensityField {
    dg: Arc<DiscretizedGraph>,
    deme_values: Vec<f64>,
    vertex_values: Vec<f64>,
}

/// Build a density field from per-deme values.
pub fn interpolate(dg: &Arc<DiscretizedGraph>, deme_values: Vec<f64>) -> Result<DensityField> {
    assert_eq!(deme_values.len(), dg.n_demes(), "one value per deme");
    for (i, v) in deme_values.iter().enumerate() {
        if !v.is_finite() || *v < 0.0 || *v > 1.0 {
            return Err(Error::DensityOutOfRange { value: *v, location: format!("deme {i}") });
        }
    }
    let mut vertex_values = Vec::with_capacity(dg.graph().n_vertices());
    for v in 0..dg.graph().n_vertices() {
        let adj = dg.boundary_demes(v);
        let value = if adj.is_empty() {
            0.0
        } else {
            adj.iter().map(|&d| deme_values[d]).sum::<f64>() / adj.len() as f64
        };
        vertex_values.push(value);
    }
    Ok(DensityField { dg: Arc::clone(dg), deme_values, vertex_values })
}

impl DensityField {
    pub fn deme_values(&self) -> &[f64] {
        &self.deme_values
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex_values
    }

    pub fn dg(&self) -> &Arc<DiscretizedGraph> {
        &self.dg
    }

    /// Evaluate at arclength `coord` on `edge` by linear interpolation
    /// between demes, and between vertices and their boundary demes.
    pub fn eval(&self, edge: usize, coord: f64) -> f64 {
        let dg = &self.dg;
        let range = dg.edge_demes(edge);
        let l = dg.resolution(edge);
        let length = dg.graph().edge(edge).length;
        let first = range.start;
        let last = range.end - 1;
        let first_coord = dg.deme(first).coord;
        let last_coord = dg.deme(last).coord;
        if coord <= first_coord {
            let v = dg.graph().edge(edge).from;
            let t = (coord / first_coord).clamp(0.0, 1.0);
            return self.vertex_values[v] * (1.0 - t) + self.deme_values[first] * t;
        }
        if coord >= last_coord {
            let v = dg.graph().edge(edge).to;
            let gap = length - last_coord;
            let t = ((coord - last_coord) / gap).clamp(0.0, 1.0);
            return self.deme_values[last] * (1.0 - t) + self.vertex_values[v] * t;
        }
        let k = ((coord - first_coord) * l).floor() as usize;
        let i = (first + k).min(last - 1);
        let c0 = dg.deme(i).coord;
        let t = ((coord - c0) * l).clamp(0.0, 1.0);
        self.deme_values[i] * (1.0 - t) + self.deme_values[i + 1] * t
    }
}

/// Sup norm of a field over all demes and vertices. The graph is compact so
/// the local-uniform metric collapses to a plain supremum.
pub fn graph_norm(field: &DensityField) -> f64 {
    field
        .deme_values
        .iter()
        .chain(field.vertex_values.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Sup norm of the difference of two fields on the same discretization.
pub fn field_distance(a: &DensityField, b: &DensityField) -> f64 {
    assert_eq!(a.deme_values.len(), b.deme_values.len(), "fields live on the same graph");
    let demes = a
        .deme_values
        .iter()
        .zip(&b.deme_values)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    a.vertex_values
        .iter()
        .zip(&b.vertex_values)
        .fold(demes, |acc, (x, y)| acc.max((x - y).abs()))
}
