use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("speaker `{0}` has no voiced frames")]
    NoVoicedFrames(String),

    #[error("voiced frame {index} has non-positive f0 {f0}")]
    NonPositiveF0 { index: usize, f0: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("speaker mismatch: stats for `{stats}` applied to stream of `{stream}`")]
    SpeakerMismatch { stats: String, stream: String },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("cannot form {bins} equal-mass bins from {distinct} distinct values")]
    TooFewDistinct { bins: usize, distinct: usize },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("delay {delay} is not smaller than sequence length {len}")]
    DelayTooLarge { delay: usize, len: usize },

    #[error("utterance {index} has {segments} segments, more than max_segments_per_batch={max}; raise the limit or truncate utterances")]
    UtteranceTooLong {
        index: usize,
        segments: usize,
        max: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
