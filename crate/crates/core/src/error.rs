use alloc::string::String;
use core::fmt;

/// Errors raised anywhere in the toolkit core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch { op: &'static str, detail: String },
    UnboundInput(String),
    NonFinite { op: &'static str },
    NotScalar { shape: alloc::vec::Vec<usize> },
    NotEvaluated,
    MissingGradient(String),
    DimensionMismatch { expected: usize, found: usize },
    DegenerateProjection,
    NonInvertible,
    UnknownSpec(String),
    InvalidSize(String),
    LabelAbsent(usize),
    NoCandidates(String),
    EmptyInput(&'static str),
    InvalidConfig(String),
    OverlappingManeuvers { first: usize, second: usize },
    SingularCovariance,
    ZeroBaseline(&'static str),
    NoEvents,
    LimitTooLarge { requested: usize, available: usize },
    ModeMismatch(String),
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::UnboundInput(name) => write!(f, "input `{name}` is not bound"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::NotScalar { shape } => write!(f, "loss must be scalar, got shape {shape:?}"),
            Error::NotEvaluated => write!(f, "graph has not been evaluated"),
            Error::MissingGradient(name) => write!(f, "no gradient for parameter `{name}`"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::DegenerateProjection => write!(f, "projective denominator is too close to zero"),
            Error::NonInvertible => write!(f, "transformation matrix is not invertible"),
            Error::UnknownSpec(s) => write!(f, "unknown architecture `{s}`"),
            Error::InvalidSize(s) => write!(f, "invalid size: {s}"),
            Error::LabelAbsent(l) => write!(f, "label {l} is absent from the source domain"),
            Error::NoCandidates(s) => write!(f, "no source sequence for {s}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InvalidConfig(s) => write!(f, "invalid configuration: {s}"),
            Error::OverlappingManeuvers { first, second } => write!(
                f,
                "maneuvers executing at frames {first} and {second} overlap their label windows"
            ),
            Error::SingularCovariance => write!(f, "covariance matrix is singular"),
            Error::ZeroBaseline(metric) => write!(f, "baseline {metric} is zero"),
            Error::NoEvents => write!(f, "no ground-truth lane changes to score against"),
            Error::LimitTooLarge { requested, available } => {
                write!(f, "cannot limit to {requested} samples, only {available} available")
            }
            Error::ModeMismatch(s) => write!(f, "train mode mismatch: {s}"),
            Error::Format(s) => write!(f, "format error: {s}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
