//! Seeded synthetic scenes: detections, reference annotations and foreground
//! masks for objects moving along piecewise-linear trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_iou, BBox, Frame};
use crate::ingest::{ActivityAnnotation, DetectionRecord, MaskFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: Frame,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Foreground for the object's whole lifetime.
    #[default]
    Always,
    /// Foreground only while one of its activities is under way.
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: String,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub mask: MaskMode,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySpec {
    /// Index into the scene's objects.
    pub object: usize,
    pub class: String,
    pub t0: Frame,
    pub t1: Frame,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of per-coordinate box jitter, in pixels.
    pub jitter_sigma: f64,
    /// Probability that a detection is dropped.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub video_id: String,
    pub frames: u32,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    /// Detection interval in frames.
    #[serde(default = "default_interval")]
    pub s_det: u32,
    /// Mask interval in frames.
    #[serde(default = "default_interval")]
    pub s_bg: u32,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub activities: Vec<ActivitySpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> u32 {
    1920
}

fn default_height() -> u32 {
    1080
}

fn default_interval() -> u32 {
    8
}

impl ObjectSpec {
    pub fn lifetime(&self) -> (Frame, Frame) {
        let first = self.waypoints.first().map_or(0, |w| w.frame);
        let last = self.waypoints.last().map_or(0, |w| w.frame);
        (first, last + 1)
    }

    /// Linearly interpolated box, `None` outside the lifetime.
    pub fn box_at(&self, frame: Frame) -> Option<BBox> {
        let i = self.waypoints.partition_point(|w| w.frame <= frame);
        if i == 0 {
            return None;
        }
        let a = self.waypoints[i - 1];
        if a.frame == frame {
            return Some(a.bbox);
        }
        let b = self.waypoints.get(i)?;
        let t = f64::from(frame - a.frame) / f64::from(b.frame - a.frame);
        let lerp = |p: f64, q: f64| p + (q - p) * t;
        Some(BBox {
            x0: lerp(a.bbox.x0, b.bbox.x0),
            x1: lerp(a.bbox.x1, b.bbox.x1),
            y0: lerp(a.bbox.y0, b.bbox.y0),
            y1: lerp(a.bbox.y1, b.bbox.y1),
        })
    }
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scene {}: {msg}", self.video_id)));
        if self.frames == 0 || self.width == 0 || self.height == 0 || self.s_det == 0 || self.s_bg == 0 {
            return bad("frames, size and intervals must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise.dropout) || !(self.noise.jitter_sigma >= 0.0) {
            return bad("dropout must lie in [0, 1] and jitter must be non-negative".into());
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        for (i, o) in self.objects.iter().enumerate() {
            if o.waypoints.is_empty() {
                return bad(format!("object {i} has no waypoints"));
            }
            if o.waypoints.windows(2).any(|p| p[0].frame >= p[1].frame) {
                return bad(format!("object {i} waypoints are not strictly increasing"));
            }
            for p in &o.waypoints {
                if p.frame >= self.frames || p.bbox.x0 < 0.0 || p.bbox.y0 < 0.0 || p.bbox.x1 > w || p.bbox.y1 > h {
                    return bad(format!("object {i} waypoint on frame {} leaves the video", p.frame));
                }
            }
            if !(0.0..=1.0).contains(&o.confidence) {
                return bad(format!("object {i} confidence outside [0, 1]"));
            }
        }
        for (k, a) in self.activities.iter().enumerate() {
            let Some(o) = self.objects.get(a.object) else {
                return bad(format!("activity {k} refers to missing object {}", a.object));
            };
            let (first, end) = o.lifetime();
            if a.t0 >= a.t1 || a.t0 < first || a.t1 > end {
                return bad(format!(
                    "activity {k} [{}, {}) is outside object {} lifetime [{first}, {end})",
                    a.t0, a.t1, a.object
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub video_len: u32,
    pub detections: Vec<DetectionRecord>,
    pub annotations: Vec<ActivityAnnotation>,
    pub masks: Vec<MaskFrame>,
}

/// Row-major run-length mask with the given pixel rectangles as foreground.
fn rect_mask(video_id: &str, frame: Frame, width: u32, height: u32, rects: &[(u32, u32, u32, u32)]) -> MaskFrame {
    let mut rle = vec![0u32];
    let mut fg = false;
    let mut push = |value: bool, n: u32| {
        if n == 0 {
            return;
        }
        if value == fg {
            *rle.last_mut().expect("starts with a run") += n;
        } else {
            rle.push(n);
            fg = value;
        }
    };
    let mut spans: Vec<(u32, u32)> = Vec::new();
    for row in 0..height {
        spans.clear();
        spans.extend(rects.iter().filter(|r| r.2 <= row && row < r.3).map(|r| (r.0, r.1)));
        spans.sort_unstable();
        let mut pos = 0;
        for &(a, b) in &spans {
            let a = a.max(pos);
            if b <= a {
                continue;
            }
            push(false, a - pos);
            push(true, b - a);
            pos = b;
        }
        push(false, width - pos);
    }
    MaskFrame {
        video_id: video_id.to_string(),
        frame,
        width,
        height,
        rle,
    }
}

fn pixel_rect(b: &BBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, max: u32| (v.max(0.0) as u32).min(max);
    (
        clamp(b.x0.floor(), width),
        clamp(b.x1.ceil(), width),
        clamp(b.y0.floor(), height),
        clamp(b.y1.ceil(), height),
    )
}

fn jitter(b: BBox, noise: &Normal<f64>, rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    let mut d = || noise.sample(rng);
    let (dx0, dx1, dy0, dy1) = (d(), d(), d(), d());
    let x0 = (b.x0 + dx0).clamp(0.0, width);
    let x1 = (b.x1 + dx1).clamp(0.0, width);
    let y0 = (b.y0 + dy0).clamp(0.0, height);
    let y1 = (b.y1 + dy1).clamp(0.0, height);
    BBox::new(x0, x1, y0, y1).unwrap_or(b)
}

/// Renders a scene. Detections fall on every `s_det`-th frame with track id
/// `object index + 1`; annotations carry the clean interpolated tube; masks
/// fall on every `s_bg`-th frame.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.jitter_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));

    let mut detections = Vec::new();
    for frame in (0..spec.frames).step_by(spec.s_det as usize) {
        for (i, o) in spec.objects.iter().enumerate() {
            let Some(clean) = o.box_at(frame) else {
                continue;
            };
            if spec.noise.dropout > 0.0 && rng.random_bool(spec.noise.dropout) {
                continue;
            }
            let bbox = if spec.noise.jitter_sigma > 0.0 {
                jitter(clean, &noise, &mut rng, w, h)
            } else {
                clean
            };
            detections.push(DetectionRecord {
                video_id: spec.video_id.clone(),
                frame,
                object_class: o.class.clone(),
                bbox,
                confidence: o.confidence,
                track_id: Some(i as u64 + 1),
            });
        }
    }

    let annotations = spec
        .activities
        .iter()
        .map(|a| {
            let o = &spec.objects[a.object];
            let tube = (a.t0..a.t1).filter_map(|f| o.box_at(f).map(|b| (f, b))).collect();
            ActivityAnnotation::with_tube(&spec.video_id, &a.class, a.t0, a.t1, tube)
        })
        .collect();

    let masks = (0..spec.frames)
        .step_by(spec.s_bg as usize)
        .map(|frame| {
            let rects: Vec<_> = spec
                .objects
                .iter()
                .enumerate()
                .filter(|(i, o)| match o.mask {
                    MaskMode::Always => true,
                    MaskMode::Active => spec
                        .activities
                        .iter()
                        .any(|a| a.object == *i && a.t0 <= frame && frame < a.t1),
                })
                .filter_map(|(_, o)| o.box_at(frame))
                .map(|b| pixel_rect(&b, spec.width, spec.height))
                .collect();
            rect_mask(&spec.video_id, frame, spec.width, spec.height, &rects)
        })
        .collect();

    Ok(Scene {
        video_len: spec.frames,
        detections,
        annotations,
        masks,
    })
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneParams {
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    /// Objects that perform activities.
    pub actors: usize,
    /// Objects that never perform an activity.
    pub idle: usize,
    pub activities_per_actor: usize,
    pub activity_classes: Vec<String>,
    pub object_class: String,
    pub min_activity: u32,
    pub max_activity: u32,
    /// Largest displacement of an object over the whole video, in pixels.
    pub max_motion: f64,
    pub mask: MaskMode,
    pub noise: NoiseSpec,
    pub s_det: u32,
    pub s_bg: u32,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            frames: 1024,
            width: 640,
            height: 360,
            actors: 3,
            idle: 0,
            activities_per_actor: 2,
            activity_classes: vec!["walk".into(), "talk".into()],
            object_class: "person".into(),
            min_activity: 32,
            max_activity: 160,
            max_motion: 60.0,
            mask: MaskMode::Always,
            noise: NoiseSpec::default(),
            s_det: 8,
            s_bg: 8,
        }
    }
}

/// A seeded random scene: each object slides between two random boxes over
/// the whole video; actors get non-overlapping activities of random length.
pub fn random_scene(video_id: &str, params: &RandomSceneParams, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (f64::from(params.width), f64::from(params.height));
    let last = params.frames - 1;
    let random_box = |rng: &mut ChaCha8Rng| {
        let bw = rng.random_range(24.0..(w / 4.0).max(25.0)).min(w);
        let bh = rng.random_range(24.0..(h / 3.0).max(25.0)).min(h);
        let x0 = rng.random_range(0.0..=(w - bw));
        let y0 = rng.random_range(0.0..=(h - bh));
        BBox { x0, x1: x0 + bw, y0, y1: y0 + bh }
    };
    let mut objects = Vec::new();
    for i in 0..params.actors + params.idle {
        let start = random_box(&mut rng);
        let dx = rng.random_range(-params.max_motion..=params.max_motion);
        let dy = rng.random_range(-params.max_motion..=params.max_motion);
        let dx = dx.clamp(-start.x0, w - start.x1);
        let dy = dy.clamp(-start.y0, h - start.y1);
        let end = BBox {
            x0: start.x0 + dx,
            x1: start.x1 + dx,
            y0: start.y0 + dy,
            y1: start.y1 + dy,
        };
        let waypoints = if last == 0 {
            vec![Waypoint { frame: 0, bbox: start }]
        } else {
            vec![Waypoint { frame: 0, bbox: start }, Waypoint { frame: last, bbox: end }]
        };
        objects.push(ObjectSpec {
            class: params.object_class.clone(),
            waypoints,
            mask: if i < params.actors { params.mask } else { MaskMode::Active },
            confidence: default_confidence(),
        });
    }
    let mut activities: Vec<ActivitySpec> = Vec::new();
    let max_len = params.max_activity.min(params.frames);
    let min_len = params.min_activity.clamp(1, max_len);
    for object in 0..params.actors {
        let mut placed: Vec<(Frame, Frame)> = Vec::new();
        for _ in 0..params.activities_per_actor {
            for _attempt in 0..20 {
                let len = rng.random_range(min_len..=max_len);
                let t0 = rng.random_range(0..=params.frames - len);
                let t1 = t0 + len;
                if placed.iter().all(|&(a, b)| t1 <= a || b <= t0) {
                    placed.push((t0, t1));
                    let class = params.activity_classes[rng.random_range(0..params.activity_classes.len())].clone();
                    activities.push(ActivitySpec { object, class, t0, t1 });
                    break;
                }
            }
        }
    }
    activities.sort_by_key(|a| (a.t0, a.object));
    SceneSpec {
        video_id: video_id.to_string(),
        frames: params.frames,
        width: params.width,
        height: params.height,
        s_det: params.s_det,
        s_bg: params.s_bg,
        objects,
        activities,
        noise: params.noise,
        seed,
    }
}

/// Mean per-frame IoU between jittered and clean boxes, by simulation.
pub fn jitter_iou(bbox: BBox, sigma: f64, frames: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let (w, h) = (bbox.x1 + 10.0 * sigma + 1.0, bbox.y1 + 10.0 * sigma + 1.0);
    let total: f64 = (0..frames)
        .map(|_| bbox_iou(&jitter(bbox, &noise, &mut rng, w, h), &bbox))
        .sum();
    total / frames as f64
}
