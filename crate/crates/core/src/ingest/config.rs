use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of the pipeline. Keys absent from a config file take the
/// defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detection stride in frames.
    pub s_det: u32,
    /// Proposal duration in frames.
    pub d_prop: u32,
    /// Proposal stride in frames.
    pub s_prop: u32,
    /// Spatial enlargement rate applied to proposal boxes.
    pub r_enl: f64,
    /// Foreground mask stride in frames.
    pub s_bg: u32,
    /// Fraction of positive proposals the foreground filter may drop.
    pub p_pos: f64,
    /// Label assignment IoU thresholds.
    pub s_high: f64,
    pub s_low: f64,
    /// Adjacent-instance merging: score threshold and minimum kept duration.
    pub s_merg: f64,
    pub l_merg: u32,
    pub object_classes: Vec<String>,
    pub activity_classes: Vec<String>,
    /// Frames of temporal overlap needed to match a prediction with a
    /// reference instance. Defaults to one second of video.
    pub min_temporal_overlap: Option<u32>,
    pub video_fps: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub track_iou_gate: f64,
    /// Frames a track may go unseen before it is closed. Defaults to `s_det`.
    pub track_max_gap: Option<u32>,
    /// Frames sampled per clip for classifiers.
    pub clip_frames: usize,
    pub naudc_limit: f64,
    pub tfa_budgets: Vec<f64>,
    pub map_thresholds: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            s_det: 8,
            d_prop: 64,
            s_prop: 16,
            r_enl: 0.13,
            s_bg: 8,
            p_pos: 0.05,
            s_high: 0.5,
            s_low: 0.0,
            s_merg: 0.5,
            l_merg: 32,
            object_classes: vec!["person".into(), "vehicle".into(), "traffic_light".into()],
            activity_classes: Vec::new(),
            min_temporal_overlap: None,
            video_fps: 30.0,
            frame_width: 1920.0,
            frame_height: 1080.0,
            track_iou_gate: 0.3,
            track_max_gap: None,
            clip_frames: 16,
            naudc_limit: 0.2,
            tfa_budgets: vec![0.02, 0.15, 0.2],
            map_thresholds: vec![0.1, 0.2, 0.5],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn min_temporal_overlap(&self) -> u32 {
        self.min_temporal_overlap
            .unwrap_or_else(|| self.video_fps.round().max(1.0) as u32)
    }

    pub fn track_max_gap(&self) -> u32 {
        self.track_max_gap.unwrap_or(self.s_det)
    }

    /// Number of proposal groups, `d_prop / s_prop`.
    pub fn groups(&self) -> u32 {
        self.d_prop / self.s_prop
    }

    pub fn activity_index(&self, class: &str) -> Option<usize> {
        self.activity_classes.iter().position(|c| c == class)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("s_det", self.s_det),
            ("d_prop", self.d_prop),
            ("s_prop", self.s_prop),
            ("s_bg", self.s_bg),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.s_prop > self.d_prop {
            return fail(format!(
                "s_prop ({}) must not exceed d_prop ({})",
                self.s_prop, self.d_prop
            ));
        }
        if self.d_prop % self.s_prop != 0 {
            return fail(format!(
                "d_prop ({}) must be a multiple of s_prop ({})",
                self.d_prop, self.s_prop
            ));
        }
        if !(self.r_enl >= 0.0 && self.r_enl.is_finite()) {
            return fail(format!("r_enl must be >= 0, got {}", self.r_enl));
        }
        if !(0.0..=1.0).contains(&self.p_pos) {
            return fail(format!("p_pos must lie in [0, 1], got {}", self.p_pos));
        }
        if !(self.s_low <= self.s_high) {
            return fail(format!(
                "s_low ({}) must not exceed s_high ({})",
                self.s_low, self.s_high
            ));
        }
        if !(self.video_fps > 0.0 && self.video_fps.is_finite()) {
            return fail(format!("video_fps must be positive, got {}", self.video_fps));
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return fail("frame size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.track_iou_gate) {
            return fail(format!("track_iou_gate must lie in [0, 1], got {}", self.track_iou_gate));
        }
        if self.clip_frames == 0 {
            return fail("clip_frames must be positive".into());
        }
        if !(self.naudc_limit > 0.0 && self.naudc_limit <= 1.0) {
            return fail(format!("naudc_limit must lie in (0, 1], got {}", self.naudc_limit));
        }
        if self.map_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return fail("map_thresholds must lie in [0, 1]".into());
        }
        for (i, c) in self.activity_classes.iter().enumerate() {
            if self.activity_classes[..i].contains(c) {
                return fail(format!("duplicate activity class {c:?}"));
            }
        }
        Ok(())
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c.s_det, 8);
        assert_eq!(c.d_prop, 64);
        assert_eq!(c.s_prop, 16);
        assert_eq!(c.r_enl, 0.13);
        assert_eq!(c.p_pos, 0.05);
        assert_eq!(c.s_high, 0.5);
        assert_eq!(c.s_low, 0.0);
        assert_eq!(c.s_bg, 8);
        assert_eq!(c.s_merg, 0.5);
        assert_eq!(c.l_merg, 32);
        assert_eq!(c.min_temporal_overlap(), 30);
        assert_eq!(c.track_max_gap(), 8);
    }

    #[test]
    fn divisible_duration_accepted() {
        let c = PipelineConfig::from_toml_str("d_prop = 96\ns_prop = 32\n").unwrap();
        assert_eq!(c.groups(), 3);
    }

    #[test]
    fn indivisible_duration_rejected() {
        let err = PipelineConfig::from_toml_str("d_prop = 64\ns_prop = 48\n").unwrap_err();
        assert!(err.to_string().contains("multiple"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("d_porp = 64\n").is_err());
    }

    #[test]
    fn threshold_order_enforced() {
        assert!(PipelineConfig::from_toml_str("s_low = 0.6\ns_high = 0.5\n").is_err());
        assert!(PipelineConfig::from_toml_str("s_prop = 128\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.activity_classes = vec!["walk".into(), "talk".into()];
        c.min_temporal_overlap = Some(12);
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_config("/nonexistent/cubeprop.toml").unwrap_err();
        assert!(err.is_io());
    }
}
