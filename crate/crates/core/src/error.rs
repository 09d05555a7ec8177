use thiserror::Error;

/// Errors produced while building graphs, deriving parameters, or running
/// simulations. Validation failures (bad inputs, schema violations) are kept
/// separate from runtime failures so the CLI can map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge}: nonpositive length {length}")]
    NonPositiveLength { edge: String, length: f64 },

    #[error("edge {edge}: endpoint {vertex} is not a declared vertex")]
    DanglingEndpoint { edge: String, vertex: String },

    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(String),

    #[error("duplicate vertex id {0}")]
    DuplicateVertexId(String),

    #[error("edge {edge}: length*resolution = {product} is not an integer (tolerance 1e-9)")]
    NonIntegerResolution { edge: String, product: f64 },

    #[error("edge {edge}: length*resolution = {product} must be at least 3")]
    ResolutionTooCoarse { edge: String, product: f64 },

    #[error("density value {value} at {location} outside [0,1]")]
    DensityOutOfRange { value: f64, location: String },

    #[error("theta: nonpositive input ({a}, {b})")]
    ThetaNonPositive { a: f64, b: f64 },

    #[error("theta: power mean exponent must be nonzero")]
    ThetaZeroExponent,

    #[error("edge {edge}: gamma > 0 requires alpha > 0")]
    NoiseWithoutDiffusion { edge: String },

    #[error("edge {edge}: site capacity rounded to zero (4*L*alpha/gamma = {value})")]
    ZeroCapacity { edge: String, value: f64 },

    #[error("edge {edge}: gamma = 0 requires an explicit site capacity override")]
    MissingCapacityOverride { edge: String },

    #[error("asymmetric conductance between demes {x} and {y}: {cxy} vs {cyx}")]
    AsymmetricConductance { x: usize, y: usize, cxy: f64, cyx: f64 },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("kernel request for {demes} demes exceeds the {cap}-deme cap; use Monte Carlo paths instead")]
    KernelTooLarge { demes: usize, cap: usize },

    #[error("kernel diagnostics need at least 2 resolutions, got {0}")]
    TooFewResolutions(usize),

    #[error("resolutions not nested: deme at {coord} on edge {edge} has no counterpart within 1e-9")]
    NotNested { edge: String, coord: f64 },

    #[error("fine resolution {fine} must be at least {factor}x the coarse resolution {coarse}")]
    ResolutionRatio { coarse: f64, fine: f64, factor: f64 },

    #[error("total event rate is not finite")]
    RateOverflow,

    #[error("time step {dt} violates stability guard {guard}")]
    TimeStepTooLarge { dt: f64, guard: f64 },

    #[error("state contains a nonfinite value at deme {0}")]
    NonFiniteState(usize),

    #[error("noise interval [{lo}, {hi}] on edge {edge} is not a union of lattice intervals")]
    NonNestedInterval { edge: String, lo: f64, hi: f64 },

    #[error("probe at edge {edge} coordinate {coord} is off the graph")]
    ProbeOffGraph { edge: String, coord: f64 },

    #[error("dual population exceeded the cap of {cap} particles at t = {t} (n = {n})")]
    DualExplosion { cap: usize, t: f64, n: usize },

    #[error("site-level state space 2^{sites} exceeds the 2^{cap} cap")]
    StateSpaceTooLarge { sites: usize, cap: usize },

    #[error("front never forms: no density reached the threshold {0} in the fit window")]
    NoFront(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that indicate invalid inputs rather than runtime
    /// failures; the CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::RateOverflow
                | Error::NonFiniteState(_)
                | Error::DualExplosion { .. }
                | Error::Io { .. }
        )
    }
}
