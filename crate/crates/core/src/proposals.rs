//! Dense overlapping cube proposals seeded from tracks at each window's
//! central frame.

use crate::geometry::{bbox_enlarge, bbox_union, BBox, Cube, Frame, TrackId};
use crate::ingest::PipelineConfig;
use crate::tracking::Track;

/// Temporal windows of `duration` frames every `stride` frames.
///
/// Videos shorter than `duration` get one truncated window. When the stride
/// grid does not reach the end of the video, one extra window is anchored at
/// the video end.
pub fn sample_windows(video_len: u32, duration: u32, stride: u32) -> Vec<(Frame, Frame)> {
    assert!(duration > 0 && stride > 0, "duration and stride must be positive");
    if video_len == 0 {
        return Vec::new();
    }
    if video_len < duration {
        return vec![(0, video_len)];
    }
    let mut windows: Vec<(Frame, Frame)> = (0..)
        .map(|k| k * stride)
        .take_while(|t0| t0 + duration <= video_len)
        .map(|t0| (t0, t0 + duration))
        .collect();
    let reaches_end = windows.last().is_some_and(|w| w.1 == video_len);
    if video_len % stride != 0 && !reaches_end {
        windows.push((video_len - duration, video_len));
    }
    windows
}

pub fn central_frame(window: (Frame, Frame)) -> Frame {
    ((u64::from(window.0) + u64::from(window.1)) / 2) as Frame
}

/// Tracks with a box on the frame nearest to the window's central frame,
/// within `s_det / 2` frames. Returns `(track index, seed frame)` pairs.
pub fn central_seeds(window: (Frame, Frame), tracks: &[Track], s_det: u32) -> Vec<(usize, Frame)> {
    let tc = central_frame(window);
    let tolerance = s_det / 2;
    tracks
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let (first, last) = (t.first_frame()?, t.last_frame()?);
            if last.saturating_add(tolerance) < tc || first > tc.saturating_add(tolerance) {
                return None;
            }
            let f = t.nearest_frame(tc, tolerance)?;
            (f >= window.0 && f < window.1).then_some((i, f))
        })
        .collect()
}

/// Union of the seed track's boxes inside the window, `None` if it has none.
pub fn refine_union(seed: &Track, window: (Frame, Frame)) -> Option<BBox> {
    seed.boxes_in(window.0, window.1)
        .map(|(_, b)| *b)
        .reduce(|acc, b| bbox_union(&acc, &b))
}

/// One enlarged cube per window and central seed of an allowed object class,
/// ordered by `(t0, seed track)`.
pub fn generate_proposals(tracks: &[Track], video_id: &str, video_len: u32, config: &PipelineConfig) -> Vec<Cube> {
    let allowed = |t: &Track| t.video_id == video_id && config.object_classes.contains(&t.object_class);
    let mut cubes = Vec::new();
    for window in sample_windows(video_len, config.d_prop, config.s_prop) {
        let mut seeds: Vec<(TrackId, Cube)> = central_seeds(window, tracks, config.s_det)
            .into_iter()
            .filter(|&(i, _)| allowed(&tracks[i]))
            .filter_map(|(i, _)| {
                let track = &tracks[i];
                let union = refine_union(track, window)?;
                let bbox = bbox_enlarge(&union, config.r_enl, config.frame_width, config.frame_height);
                let mut cube = Cube::new(video_id, window.0, window.1, bbox, track.object_class.clone());
                cube.seed_track = Some(track.track_id);
                Some((track.track_id, cube))
            })
            .collect();
        seeds.sort_by_key(|(id, _)| *id);
        cubes.extend(seeds.into_iter().map(|(_, c)| c));
    }
    cubes
}
