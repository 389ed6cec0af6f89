//! Line-delimited record files and configuration.
//!
//! Every record file starts with a header line naming the schema, version and
//! record kind, followed by one JSON object per line. Field layouts are
//! documented in `docs/record-schema.md`.

mod config;
mod mask;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, PipelineConfig};
pub use mask::{encode_runs, MaskFrame, RowRuns};

use crate::dedup::ActivityInstance;
use crate::error::{Error, Result};
use crate::evaluation::{DetCurve, EvaluationReport};
use crate::geometry::{BBox, Cube, Frame, TrackId, Tube};
use crate::scoring::ScoredCube;

pub const SCHEMA_NAME: &str = "cubeprop";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Detections,
    Annotations,
    Masks,
    Proposals,
    ScoredProposals,
    Instances,
    DetCurves,
    Reports,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Detections => "detections",
            RecordKind::Annotations => "annotations",
            RecordKind::Masks => "masks",
            RecordKind::Proposals => "proposals",
            RecordKind::ScoredProposals => "scored-proposals",
            RecordKind::Instances => "instances",
            RecordKind::DetCurves => "det-curves",
            RecordKind::Reports => "reports",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub kind: RecordKind,
}

impl Header {
    pub fn new(kind: RecordKind) -> Self {
        Header {
            schema: SCHEMA_NAME.to_string(),
            version: SCHEMA_VERSION,
            kind,
        }
    }
}

/// A record type that can live in a record file.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: RecordKind;

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    /// `(video, frame)` for kinds that must be frame-ordered within a video.
    fn frame_key(&self) -> Option<(&str, Frame)> {
        None
    }
}

/// One detected object on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: Frame,
    pub object_class: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default)]
    pub track_id: Option<TrackId>,
}

impl Record for DetectionRecord {
    const KIND: RecordKind = RecordKind::Detections;

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidRecord(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if self.bbox.x0 < 0.0 || self.bbox.y0 < 0.0 {
            return Err(Error::InvalidRecord("box extends past the frame origin".into()));
        }
        Ok(())
    }

    fn frame_key(&self) -> Option<(&str, Frame)> {
        Some((&self.video_id, self.frame))
    }
}

/// A reference activity instance. Its location is either a per-frame tube or
/// a single box applied to every frame of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityAnnotation {
    pub video_id: String,
    pub activity_class: String,
    pub t0: Frame,
    pub t1: Frame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<Tube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

impl ActivityAnnotation {
    pub fn with_box(video_id: impl Into<String>, class: impl Into<String>, t0: Frame, t1: Frame, bbox: BBox) -> Self {
        ActivityAnnotation {
            video_id: video_id.into(),
            activity_class: class.into(),
            t0,
            t1,
            tube: None,
            bbox: Some(bbox),
        }
    }

    pub fn with_tube(video_id: impl Into<String>, class: impl Into<String>, t0: Frame, t1: Frame, tube: Tube) -> Self {
        ActivityAnnotation {
            video_id: video_id.into(),
            activity_class: class.into(),
            t0,
            t1,
            tube: Some(tube),
            bbox: None,
        }
    }

    pub fn window(&self) -> (Frame, Frame) {
        (self.t0, self.t1)
    }

    pub fn duration(&self) -> u32 {
        self.t1 - self.t0
    }

    /// Boxes with frames in `[t0, t1)`.
    pub fn boxes_in(&self, t0: Frame, t1: Frame) -> Vec<BBox> {
        match (&self.tube, &self.bbox) {
            (Some(tube), _) => tube
                .iter()
                .filter(|(f, _)| *f >= t0 && *f < t1)
                .map(|&(_, b)| b)
                .collect(),
            (None, Some(b)) if t0.max(self.t0) < t1.min(self.t1) => vec![*b],
            _ => Vec::new(),
        }
    }

    /// Box on the annotated frame nearest to `frame`.
    pub fn nearest_box(&self, frame: Frame) -> BBox {
        match (&self.tube, &self.bbox) {
            (Some(tube), _) => {
                tube.iter()
                    .min_by_key(|(f, _)| f.abs_diff(frame))
                    .expect("validated tube is non-empty")
                    .1
            }
            (None, Some(b)) => *b,
            (None, None) => unreachable!("validated annotation has a location"),
        }
    }

    /// The tube as explicit per-frame boxes.
    pub fn dense_tube(&self) -> Tube {
        match (&self.tube, &self.bbox) {
            (Some(tube), _) => tube.clone(),
            (None, Some(b)) => (self.t0..self.t1).map(|f| (f, *b)).collect(),
            (None, None) => Vec::new(),
        }
    }
}

impl Record for ActivityAnnotation {
    const KIND: RecordKind = RecordKind::Annotations;

    fn validate(&self) -> Result<()> {
        if self.t0 >= self.t1 {
            return Err(Error::InvalidRecord(format!(
                "annotation window [{}, {}) is empty",
                self.t0, self.t1
            )));
        }
        match (&self.tube, &self.bbox) {
            (Some(_), Some(_)) => Err(Error::InvalidRecord(
                "annotation has both a tube and a box".into(),
            )),
            (None, None) => Err(Error::InvalidRecord("annotation has no location".into())),
            (None, Some(_)) => Ok(()),
            (Some(tube), None) => {
                if tube.is_empty() {
                    return Err(Error::InvalidRecord("annotation tube is empty".into()));
                }
                let mut prev: Option<Frame> = None;
                for &(f, _) in tube {
                    if f < self.t0 || f >= self.t1 {
                        return Err(Error::InvalidRecord(format!(
                            "tube frame {f} outside [{}, {})",
                            self.t0, self.t1
                        )));
                    }
                    if prev.is_some_and(|p| p >= f) {
                        return Err(Error::InvalidRecord(format!(
                            "tube frames not strictly increasing at {f}"
                        )));
                    }
                    prev = Some(f);
                }
                Ok(())
            }
        }
    }
}

impl Record for MaskFrame {
    const KIND: RecordKind = RecordKind::Masks;

    fn validate(&self) -> Result<()> {
        MaskFrame::validate(self)
    }

    fn frame_key(&self) -> Option<(&str, Frame)> {
        Some((&self.video_id, self.frame))
    }
}

impl Record for Cube {
    const KIND: RecordKind = RecordKind::Proposals;

    fn validate(&self) -> Result<()> {
        Cube::validate(self)
    }
}

impl Record for ScoredCube {
    const KIND: RecordKind = RecordKind::ScoredProposals;

    fn validate(&self) -> Result<()> {
        self.cube.validate()?;
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidRecord("score outside [0, 1]".into()));
        }
        Ok(())
    }
}

impl Record for ActivityInstance {
    const KIND: RecordKind = RecordKind::Instances;

    fn validate(&self) -> Result<()> {
        if self.t0 >= self.t1 {
            return Err(Error::InvalidRecord(format!(
                "instance window [{}, {}) is empty",
                self.t0, self.t1
            )));
        }
        Ok(())
    }
}

impl Record for DetCurve {
    const KIND: RecordKind = RecordKind::DetCurves;
}

impl Record for EvaluationReport {
    const KIND: RecordKind = RecordKind::Reports;
}

/// Streaming reader over a record file. Yields records in file order and
/// checks per-video frame order for frame-keyed kinds.
pub struct RecordReader<T, R = BufReader<File>> {
    path: PathBuf,
    lines: std::io::Lines<R>,
    line_no: usize,
    last_frame: HashMap<String, Frame>,
    failed: bool,
    _kind: PhantomData<T>,
}

impl<T: Record> RecordReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(path, BufReader::new(file))
    }
}

impl<T: Record, R: BufRead> RecordReader<T, R> {
    pub fn from_reader(path: impl Into<PathBuf>, reader: R) -> Result<Self> {
        let path = path.into();
        let mut lines = reader.lines();
        let mut line_no = 0;
        // An empty file is an empty stream; otherwise the first non-blank line
        // must be a header for this record kind.
        for line in lines.by_ref() {
            line_no += 1;
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let header: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: line_no,
                message: format!("bad header: {e}"),
            })?;
            if header.schema != SCHEMA_NAME || header.version != SCHEMA_VERSION {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    message: format!(
                        "unsupported schema {} v{}",
                        header.schema, header.version
                    ),
                });
            }
            if header.kind != T::KIND {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    message: format!(
                        "expected {} records, file holds {}",
                        T::KIND.as_str(),
                        header.kind.as_str()
                    ),
                });
            }
            break;
        }
        Ok(RecordReader {
            path,
            lines,
            line_no,
            last_frame: HashMap::new(),
            failed: false,
            _kind: PhantomData,
        })
    }

    fn parse_line(&mut self, line: &str) -> Result<T> {
        let err = |message: String| Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            message,
        };
        let record: T = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(|e| err(e.to_string()))?;
        if let Some((video, frame)) = record.frame_key() {
            match self.last_frame.get_mut(video) {
                Some(last) if frame < *last => {
                    return Err(err(format!(
                        "frame {frame} of video {video} follows frame {last}"
                    )));
                }
                Some(last) => *last = frame,
                None => {
                    self.last_frame.insert(video.to_string(), frame);
                }
            }
        }
        Ok(record)
    }
}

impl<T: Record, R: BufRead> Iterator for RecordReader<T, R> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let out = self.parse_line(&line);
            self.failed = out.is_err();
            return Some(out);
        }
    }
}

pub fn read_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    RecordReader::<T>::open(path)?.collect()
}

/// Buffered writer that emits the header on creation.
pub struct RecordWriter<T, W: Write = BufWriter<File>> {
    path: PathBuf,
    out: W,
    _kind: PhantomData<T>,
}

impl<T: Record> RecordWriter<T> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::from_writer(path, BufWriter::new(file))
    }
}

impl<T: Record, W: Write> RecordWriter<T, W> {
    pub fn from_writer(path: impl Into<PathBuf>, out: W) -> Result<Self> {
        let mut w = RecordWriter {
            path: path.into(),
            out,
            _kind: PhantomData,
        };
        let header = serde_json::to_string(&Header::new(T::KIND)).expect("header serializes");
        w.write_line(&header)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidRecord(format!("cannot serialize record: {e}")))?;
        self.write_line(&line)
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.out)
    }
}

pub fn write_records<'a, T: Record + 'a>(
    records: impl IntoIterator<Item = &'a T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = RecordWriter::<T>::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}
