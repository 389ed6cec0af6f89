//! Baseline greedy IoU tracker and grouping of detections into tracks.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{bbox_iou, BBox, Frame, TrackId};
use crate::ingest::DetectionRecord;

/// All boxes of one tracked object within one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub video_id: String,
    pub track_id: TrackId,
    pub object_class: String,
    pub boxes: BTreeMap<Frame, BBox>,
}

impl Track {
    pub fn first_frame(&self) -> Option<Frame> {
        self.boxes.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<Frame> {
        self.boxes.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes_in(&self, t0: Frame, t1: Frame) -> impl Iterator<Item = (Frame, &BBox)> {
        self.boxes.range(t0..t1).map(|(f, b)| (*f, b))
    }

    /// The annotated frame closest to `frame` within `tolerance` frames.
    /// Ties go to the earlier frame.
    pub fn nearest_frame(&self, frame: Frame, tolerance: u32) -> Option<Frame> {
        let lo = frame.saturating_sub(tolerance);
        let hi = frame.saturating_add(tolerance);
        self.boxes
            .range(lo..=hi)
            .map(|(f, _)| *f)
            .min_by_key(|f| (f.abs_diff(frame), *f))
    }
}

struct LiveTrack {
    id: TrackId,
    class: String,
    last_box: BBox,
    last_frame: Frame,
}

/// Assigns track ids with a per-frame greedy IoU matcher.
///
/// Detections are matched to live tracks of the same class in descending IoU
/// order; pairs below `iou_gate` never match and leftover detections start
/// new tracks. Tracks unseen for more than `max_gap` frames are closed. Ids
/// are dense per video starting at 1. Output keeps the input order.
pub fn greedy_iou_track(
    detections: &[DetectionRecord],
    iou_gate: f64,
    max_gap: u32,
) -> Vec<DetectionRecord> {
    let mut out = detections.to_vec();
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        by_video.entry(d.video_id.as_str()).or_default().push(i);
    }
    for indices in by_video.values() {
        let ids = track_video(detections, indices, iou_gate, max_gap);
        for (&i, id) in indices.iter().zip(ids) {
            out[i].track_id = Some(id);
        }
    }
    out
}

fn track_video(
    detections: &[DetectionRecord],
    indices: &[usize],
    iou_gate: f64,
    max_gap: u32,
) -> Vec<TrackId> {
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by_key(|&k| detections[indices[k]].frame);

    let mut ids = vec![0; indices.len()];
    let mut live: Vec<LiveTrack> = Vec::new();
    let mut next_id: TrackId = 1;

    let mut start = 0;
    while start < order.len() {
        let frame = detections[indices[order[start]]].frame;
        let mut end = start;
        while end < order.len() && detections[indices[order[end]]].frame == frame {
            end += 1;
        }
        live.retain(|t| frame - t.last_frame <= max_gap);

        // confidence rank: highest confidence first, then lower x0
        let mut frame_dets: Vec<usize> = order[start..end].to_vec();
        frame_dets.sort_by(|&a, &b| {
            let (da, db) = (&detections[indices[a]], &detections[indices[b]]);
            db.confidence
                .partial_cmp(&da.confidence)
                .unwrap_or(Ordering::Equal)
                .then(da.bbox.x0.total_cmp(&db.bbox.x0))
                .then(a.cmp(&b))
        });

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (rank, &k) in frame_dets.iter().enumerate() {
            let d = &detections[indices[k]];
            for (ti, t) in live.iter().enumerate() {
                if t.class != d.object_class {
                    continue;
                }
                let iou = bbox_iou(&t.last_box, &d.bbox);
                if iou > 0.0 && iou >= iou_gate {
                    pairs.push((iou, rank, ti));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(live[a.2].id.cmp(&live[b.2].id))
        });

        let mut det_taken = vec![false; frame_dets.len()];
        let mut track_taken = vec![false; live.len()];
        for (_, rank, ti) in pairs {
            if det_taken[rank] || track_taken[ti] {
                continue;
            }
            det_taken[rank] = true;
            track_taken[ti] = true;
            let k = frame_dets[rank];
            let d = &detections[indices[k]];
            ids[k] = live[ti].id;
            live[ti].last_box = d.bbox;
            live[ti].last_frame = frame;
        }
        for (rank, &k) in frame_dets.iter().enumerate() {
            if det_taken[rank] {
                continue;
            }
            let d = &detections[indices[k]];
            ids[k] = next_id;
            live.push(LiveTrack {
                id: next_id,
                class: d.object_class.clone(),
                last_box: d.bbox,
                last_frame: frame,
            });
            next_id += 1;
        }
        start = end;
    }
    ids
}

/// Groups tracked detections into tracks ordered by `(video, track id)`.
pub fn tracks_from_records(detections: &[DetectionRecord]) -> Result<Vec<Track>> {
    let mut tracks: BTreeMap<(String, TrackId), Track> = BTreeMap::new();
    for d in detections {
        let id = d.track_id.ok_or_else(|| Error::MissingTrackId {
            video_id: d.video_id.clone(),
            frame: d.frame,
        })?;
        let track = tracks
            .entry((d.video_id.clone(), id))
            .or_insert_with(|| Track {
                video_id: d.video_id.clone(),
                track_id: id,
                object_class: d.object_class.clone(),
                boxes: BTreeMap::new(),
            });
        if track.object_class != d.object_class {
            return Err(Error::ClassConflict {
                video_id: d.video_id.clone(),
                track_id: id,
                first: track.object_class.clone(),
                second: d.object_class.clone(),
            });
        }
        if track.boxes.insert(d.frame, d.bbox).is_some() {
            return Err(Error::DuplicateTrackFrame {
                video_id: d.video_id.clone(),
                track_id: id,
                frame: d.frame,
            });
        }
    }
    Ok(tracks.into_values().collect())
}

/// Tracks grouped per video.
pub fn tracks_by_video(tracks: Vec<Track>) -> HashMap<String, Vec<Track>> {
    let mut out: HashMap<String, Vec<Track>> = HashMap::new();
    for t in tracks {
        out.entry(t.video_id.clone()).or_default().push(t);
    }
    out
}
