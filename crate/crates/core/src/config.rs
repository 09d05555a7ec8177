//! Configuration files: the graph description (vertices, edges with lengths
//! and coefficients, vertex growth) and the experiment configuration
//! (ladder, horizon, replicates, seeds, output). Both are TOML with every
//! physical quantity written as a decimal string, and unknown keys are
//! rejected.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{build_graph, MetricGraph};
use crate::scaling::{MacroParams, ThetaKind};

fn parse_decimal(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{what}: `{s}` is not a decimal number")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    vertices: Vec<String>,
    edges: Vec<EdgeEntry>,
    #[serde(default)]
    vertex_growth: HashMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeEntry {
    id: String,
    from: String,
    to: String,
    length: String,
    alpha: String,
    #[serde(default)]
    beta: Option<String>,
    #[serde(default)]
    gamma: Option<String>,
    /// Sites per deme; required for edges with zero noise.
    #[serde(default)]
    capacity: Option<u32>,
}

/// A parsed graph description: the metric graph, its coefficients, and any
/// capacity overrides.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub graph: MetricGraph,
    pub macro_params: MacroParams,
    pub capacity_override: HashMap<String, u32>,
}

/// Parse a graph description from TOML text.
pub fn parse_graph(text: &str) -> Result<GraphSpec> {
    let file: GraphFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("graph file: {e}")))?;
    let mut edges = Vec::new();
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut gamma = Vec::new();
    let mut capacity_override = HashMap::new();
    for e in &file.edges {
        let length = parse_decimal(&e.length, &format!("edge {} length", e.id))?;
        edges.push((e.id.as_str(), e.from.as_str(), e.to.as_str(), length));
        alpha.push(parse_decimal(&e.alpha, &format!("edge {} alpha", e.id))?);
        beta.push(match &e.beta {
            Some(s) => parse_decimal(s, &format!("edge {} beta", e.id))?,
            None => 0.0,
        });
        gamma.push(match &e.gamma {
            Some(s) => parse_decimal(s, &format!("edge {} gamma", e.id))?,
            None => 0.0,
        });
        if let Some(m) = e.capacity {
            capacity_override.insert(e.id.clone(), m);
        }
    }
    let vertex_refs: Vec<&str> = file.vertices.iter().map(String::as_str).collect();
    let graph = build_graph(&vertex_refs, &edges)?;

    let mut beta_hat = vec![0.0; graph.n_vertices()];
    for (vid, value) in &file.vertex_growth {
        let v = graph
            .vertex_by_id(vid)
            .ok_or_else(|| Error::Config(format!("vertex_growth: unknown vertex `{vid}`")))?;
        beta_hat[v] = parse_decimal(value, &format!("vertex_growth {vid}"))?;
    }
    let macro_params = MacroParams { alpha, beta, gamma, beta_hat };
    macro_params.validate(graph.n_edges(), graph.n_vertices())?;
    Ok(GraphSpec { graph, macro_params, capacity_override })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    graph: String,
    ladder: Vec<f64>,
    t_end: f64,
    #[serde(default)]
    sample_times: Option<Vec<f64>>,
    #[serde(default)]
    replicates: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    threshold: Option<f64>,
    #[serde(default)]
    theta: Option<String>,
    #[serde(default)]
    out_dir: Option<String>,
    initial: InitialEntry,
    #[serde(default)]
    dual: Option<DualEntry>,
    #[serde(default)]
    front_edge: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialEntry {
    kind: String,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    edge: Option<String>,
    #[serde(default)]
    from: Option<String>,
    #[serde(default)]
    to: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualEntry {
    probes: Vec<ProbeEntry>,
    #[serde(default)]
    t: Option<f64>,
    #[serde(default)]
    replicates: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeEntry {
    edge: String,
    coord: String,
}

/// Initial density profile, evaluated per deme at discretization time.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    Constant(f64),
    /// Density 1 on `[from, to]` of one edge, 0 elsewhere.
    Block { edge: String, from: f64, to: f64 },
}

impl InitialCondition {
    pub fn deme_values(&self, dg: &crate::graph::DiscretizedGraph) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Constant(v) => {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Config(format!("initial value {v} outside [0,1]")));
                }
                Ok(vec![*v; dg.n_demes()])
            }
            InitialCondition::Block { edge, from, to } => {
                let e = dg
                    .graph()
                    .edge_by_id(edge)
                    .ok_or_else(|| Error::Config(format!("initial block: unknown edge `{edge}`")))?;
                Ok((0..dg.n_demes())
                    .map(|x| {
                        let d = dg.deme(x);
                        if d.edge == e && d.coord >= *from && d.coord <= *to {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect())
            }
        }
    }
}

/// A dual-check probe: the deme nearest `coord` on `edge`.
#[derive(Debug, Clone)]
pub struct Probe {
    pub edge: String,
    pub coord: f64,
}

/// Fully parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub graph_path: PathBuf,
    pub graph_spec: GraphSpec,
    pub ladder: Vec<f64>,
    pub t_end: f64,
    pub sample_times: Vec<f64>,
    pub replicates: usize,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub threshold: f64,
    pub theta: ThetaKind,
    pub out_dir: PathBuf,
    pub initial: InitialCondition,
    pub dual_probes: Vec<Probe>,
    pub dual_t: f64,
    pub dual_replicates: usize,
    pub front_edge: Option<String>,
    /// Raw bytes of the config file, hashed into output metadata.
    pub raw: String,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Load and validate an experiment config; the graph file path is resolved
/// relative to the config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let raw = read_file(path)?;
    let file: ConfigFile =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("config: {e}")))?;

    if file.ladder.is_empty() {
        return Err(Error::Config("ladder must not be empty".into()));
    }
    if !file.ladder.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("ladder must be strictly increasing".into()));
    }
    if !(file.t_end > 0.0) {
        return Err(Error::Config("t_end must be positive".into()));
    }
    let replicates = file.replicates.unwrap_or(1);
    if replicates < 1 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let sample_times = match &file.sample_times {
        Some(times) => {
            if times.is_empty() || !times.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config("sample_times must be strictly increasing".into()));
            }
            if (times.last().unwrap() - file.t_end).abs() > 1e-12 {
                return Err(Error::Config("sample_times must end at t_end".into()));
            }
            times.clone()
        }
        None => vec![file.t_end],
    };

    let theta = match file.theta.as_deref() {
        None | Some("geometric") => ThetaKind::Geometric,
        Some(s) => match s.strip_prefix("power:") {
            Some(p) => ThetaKind::Power(parse_decimal(p, "theta power")?),
            None => return Err(Error::Config(format!("theta: unknown kind `{s}`"))),
        },
    };

    let initial = match file.initial.kind.as_str() {
        "constant" => {
            let v = file
                .initial
                .value
                .as_deref()
                .ok_or_else(|| Error::Config("initial constant needs `value`".into()))?;
            InitialCondition::Constant(parse_decimal(v, "initial value")?)
        }
        "block" => {
            let edge = file
                .initial
                .edge
                .clone()
                .ok_or_else(|| Error::Config("initial block needs `edge`".into()))?;
            let from = parse_decimal(
                file.initial
                    .from
                    .as_deref()
                    .ok_or_else(|| Error::Config("initial block needs `from`".into()))?,
                "initial from",
            )?;
            let to = parse_decimal(
                file.initial
                    .to
                    .as_deref()
                    .ok_or_else(|| Error::Config("initial block needs `to`".into()))?,
                "initial to",
            )?;
            InitialCondition::Block { edge, from, to }
        }
        other => return Err(Error::Config(format!("initial kind `{other}` unknown"))),
    };

    let graph_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&file.graph);
    let graph_spec = parse_graph(&read_file(&graph_path)?)?;

    let mut dual_probes = Vec::new();
    let mut dual_t = file.t_end;
    let mut dual_replicates = 10_000;
    if let Some(dual) = &file.dual {
        for p in &dual.probes {
            dual_probes.push(Probe {
                edge: p.edge.clone(),
                coord: parse_decimal(&p.coord, "dual probe coord")?,
            });
        }
        if let Some(t) = dual.t {
            dual_t = t;
        }
        if let Some(r) = dual.replicates {
            dual_replicates = r;
        }
    }

    Ok(ExperimentConfig {
        graph_path,
        graph_spec,
        ladder: file.ladder,
        t_end: file.t_end,
        sample_times,
        replicates,
        seed: file.seed,
        dt: file.dt,
        threshold: file.threshold.unwrap_or(0.5),
        theta,
        out_dir: PathBuf::from(file.out_dir.unwrap_or_else(|| "out".into())),
        initial,
        dual_probes,
        dual_t,
        dual_replicates,
        front_edge: file.front_edge,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAR: &str = r#"
vertices = ["hub", "a", "b", "c"]

[[edges]]
id = "e0"
from = "hub"
to = "a"
length = "1.0"
alpha = "1.0"
beta = "1.0"
gamma = "1.0"

[[edges]]
id = "e1"
from = "hub"
to = "b"
length = "1.0"
alpha = "1.0"
beta = "1.0"
gamma = "1.0"

[[edges]]
id = "e2"
from = "hub"
to = "c"
length = "1.0"
alpha = "1.0"
beta = "1.0"
gamma = "1.0"

[vertex_growth]
hub = "1.0"
"#;

    #[test]
    fn parses_star_graph() {
        let spec = parse_graph(STAR).unwrap();
        assert_eq!(spec.graph.n_edges(), 3);
        let hub = spec.graph.vertex_by_id("hub").unwrap();
        assert_eq!(spec.macro_params.beta_hat[hub], 1.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = STAR.replace("[vertex_growth]", "typo_key = \"1\"\n[vertex_growth]");
        assert!(parse_graph(&bad).is_err());
    }

    #[test]
    fn rejects_non_decimal_length() {
        let bad = STAR.replace("length = \"1.0\"", "length = \"one\"");
        assert!(parse_graph(&bad).is_err());
    }

    #[test]
    fn rejects_unknown_growth_vertex() {
        let bad = STAR.replace("hub = \"1.0\"", "nope = \"1.0\"");
        assert!(parse_graph(&bad).is_err());
    }
}
