use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // engine
    #[error("no binding supplied for input `{0}`")]
    MissingBinding(String),
    #[error("shape mismatch at node {node}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        node: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("dtype mismatch for `{0}`")]
    DTypeMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("stencil kernels must have odd length, got {0}")]
    EvenKernel(usize),
    #[error("gradient requires a scalar output, graph produces shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("gradient requires a real-valued output")]
    NonRealOutput,
    #[error("operation `{0}` does not support complex operands")]
    UnsupportedDType(&'static str),
    #[error("graph input `{0}` declared twice with different shapes or dtypes")]
    InputConflict(String),
    #[error("graph is not differentiable: {0}")]
    NonDifferentiableGraph(String),

    // geometry / discretization
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("points have dimension {got}, domain has dimension {expected}")]
    PointDimensionMismatch { expected: usize, got: usize },
    #[error("family has no collocation grid")]
    NoGrid,
    #[error("parameters do not match the family contract: {0}")]
    InvalidParams(String),

    // operators
    #[error("expression refers to unknown field `{0}`")]
    UnknownFieldName(String),
    #[error("incompatible families: {0}")]
    IncompatibleFamilies(String),
    #[error("`{node}` is not supported on the {family} family")]
    UnsupportedNodeForFamily { node: &'static str, family: String },
    #[error("field is not a Fourier series")]
    NotFourier,
    #[error("finite-difference stencil needs {points} points but the grid axis has {extent}")]
    AccuracyTooHighForGrid { points: usize, extent: usize },
    #[error("invalid finite-difference accuracy {0}: must be even and at least 2")]
    InvalidAccuracy(usize),
    #[error("component mismatch: expected {expected}, got {got}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error("family mismatch when composing: {0}")]
    FamilyMismatch(String),
    #[error("expression does not depend on any field")]
    ConstantExpression,
    #[error("operator parameter `{0}` registered twice with different shapes")]
    ParamShapeConflict(String),

    // solvers
    #[error("NaN encountered in {0}")]
    NaNEncountered(String),
    #[error("linear system has no adjoint map")]
    AdjointUnavailable,
    #[error("operator does not map its input family to itself")]
    NonEndomorphicOperator,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    // problems
    #[error("lens region {0} does not fit inside the interior of the grid")]
    RegionOutOfBounds(String),

    // io
    #[error("bad magic number in field file")]
    BadMagic,
    #[error("field file truncated: {0}")]
    Truncated(String),
    #[error("unsupported field file version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed field file: {0}")]
    Malformed(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
