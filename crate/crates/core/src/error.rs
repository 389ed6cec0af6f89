use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box (x0={x0}, x1={x1}, y0={y0}, y1={y1}): need x0 < x1 and y0 < y1")]
    InvalidBox { x0: f64, x1: f64, y0: f64, y1: f64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("tube IoU is undefined for two empty tubes")]
    EmptyTubes,

    #[error("track {track_id} in video {video_id} spans object classes {first:?} and {second:?}")]
    ClassConflict {
        video_id: String,
        track_id: u64,
        first: String,
        second: String,
    },

    #[error("track {track_id} in video {video_id} has two boxes on frame {frame}")]
    DuplicateTrackFrame {
        video_id: String,
        track_id: u64,
        frame: u32,
    },

    #[error("detection on frame {frame} of video {video_id} has no track id")]
    MissingTrackId { video_id: String, frame: u32 },

    #[error("frame size mismatch: expected {expected:?}, got {got:?}")]
    SizeMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },

    #[error("no foreground masks in window [{t0}, {t1}) of video {video_id}")]
    MissingMasks { video_id: String, t0: u32, t1: u32 },

    #[error("cube [{t0}, {t1}) of video {video_id} has no foreground score")]
    MissingForegroundScore { video_id: String, t0: u32, t1: u32 },

    #[error("no foreground threshold for object class {0:?}")]
    MissingThreshold(String),

    #[error("activity class {0:?} has no positive instances")]
    NoPositives(String),

    #[error("activity class {0:?} has no negative instances (positive-negative weight is zero)")]
    AllPositive(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("window [{t0}, {t1}) is shorter than {segments} segments")]
    WindowTooShort { t0: u32, t1: u32, segments: usize },

    #[error("unknown activity class {0:?}")]
    UnknownClass(String),

    #[error("no scores for {} proposal(s), first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingScores(Vec<String>),

    #[error("duplicate score key {0}")]
    DuplicateScore(String),

    #[error("score sets do not cover the same proposals: {0}")]
    ScoreCoverage(String),

    #[error("fusion weights for class {class} sum to {sum}, expected 1")]
    FusionWeights { class: usize, sum: f64 },

    #[error("cube [{t0}, {t1}) is off the stride grid (stride {stride}, duration {duration})")]
    OffGrid {
        t0: u32,
        t1: u32,
        stride: u32,
        duration: u32,
    },

    #[error("instances [{a0}, {a1}) and [{b0}, {b1}) overlap")]
    Overlap { a0: u32, a1: u32, b0: u32, b1: u32 },

    #[error("invalid stage chain: {0}")]
    StageChain(String),

    #[error("stage {stage} failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error, or the stage error wrapping it, came from the filesystem.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
