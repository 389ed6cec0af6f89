//! The classifier boundary: score vectors from oracles, external files or
//! late fusion, plus clip sampling and weighted BCE utilities for training
//! classifiers outside this crate.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cube, CubeKey, Frame};
use crate::labeling::LabelOutcome;

/// A cube with one confidence per activity class, ordered like the
/// configured activity class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCube {
    #[serde(flatten)]
    pub cube: Cube,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Center,
    Random,
}

/// Sparse clip sampling: `segments` equal segments, one frame from each.
pub fn sample_frames(t0: Frame, t1: Frame, segments: usize, mode: SampleMode, seed: u64) -> Result<Vec<Frame>> {
    let len = t1.saturating_sub(t0) as usize;
    if segments == 0 || len < segments {
        return Err(Error::WindowTooShort { t0, t1, segments });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..segments)
        .map(|s| {
            let lo = t0 + (s * len / segments) as Frame;
            let hi = t0 + ((s + 1) * len / segments) as Frame;
            match mode {
                SampleMode::Center => lo + (hi - lo) / 2,
                SampleMode::Random => rng.random_range(lo..hi),
            }
        })
        .collect())
}

/// Binary instance-by-class label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub classes: Vec<String>,
    rows: Vec<Vec<bool>>,
}

impl LabelMatrix {
    pub fn new(classes: Vec<String>, rows: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != classes.len()) {
            return Err(Error::Shape(format!(
                "label row has {} entries for {} classes",
                r.len(),
                classes.len()
            )));
        }
        Ok(LabelMatrix { classes, rows })
    }

    /// Rows from positive label sets; negative and unassigned rows are all zero.
    pub fn from_outcomes<'a>(classes: &[String], outcomes: impl IntoIterator<Item = &'a LabelOutcome>) -> Result<Self> {
        let rows = outcomes
            .into_iter()
            .map(|o| {
                let mut row = vec![false; classes.len()];
                for c in o.classes() {
                    let i = classes
                        .iter()
                        .position(|k| k == c)
                        .ok_or_else(|| Error::UnknownClass(c.clone()))?;
                    row[i] = true;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        LabelMatrix::new(classes.to_vec(), rows)
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVectors {
    /// Activity-wise weights; they sum to the number of classes.
    pub activity: Vec<f64>,
    /// Positive-negative weights: negatives over positives per class.
    pub positive: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// A class without negatives is an error.
    Strict,
    /// A class without negatives gets positive weight 1.
    Lenient,
}

/// Class-balancing weights for weighted binary cross entropy.
///
/// With `P_c` positives and `N_c` negatives of class `c` over all rows:
/// `w_a^c = n * (1/P_c) / sum_k (1/P_k)` and `w_p^c = N_c / P_c`.
pub fn wbce_weights(labels: &LabelMatrix, mode: WeightMode) -> Result<WeightVectors> {
    let n = labels.n_classes();
    let rows = labels.rows().len();
    let mut positives = vec![0usize; n];
    for row in labels.rows() {
        for (c, &y) in row.iter().enumerate() {
            positives[c] += usize::from(y);
        }
    }
    if let Some(c) = positives.iter().position(|&p| p == 0) {
        return Err(Error::NoPositives(labels.classes[c].clone()));
    }
    let inverse: Vec<f64> = positives.iter().map(|&p| 1.0 / p as f64).collect();
    let total: f64 = inverse.iter().sum();
    let activity = inverse.iter().map(|w| n as f64 * w / total).collect();
    let positive = positives
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let negatives = rows - p;
            match (negatives, mode) {
                (0, WeightMode::Strict) => Err(Error::AllPositive(labels.classes[c].clone())),
                (0, WeightMode::Lenient) => Ok(1.0),
                _ => Ok(negatives as f64 / p as f64),
            }
        })
        .collect::<Result<_>>()?;
    Ok(WeightVectors { activity, positive })
}

pub const BCE_EPSILON: f64 = 1e-7;

/// Mean over rows and classes of
/// `w_a^c * (w_p^c * y * -ln p + (1 - y) * -ln(1 - p))`, with `p` clipped to
/// `[eps, 1 - eps]`.
pub fn wbce_loss(scores: &[Vec<f64>], labels: &LabelMatrix, weights: &WeightVectors) -> Result<f64> {
    let n = labels.n_classes();
    if scores.len() != labels.rows().len() {
        return Err(Error::Shape(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.rows().len()
        )));
    }
    if weights.activity.len() != n || weights.positive.len() != n {
        return Err(Error::Shape(format!("weights do not have {n} classes")));
    }
    if scores.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("score row without {n} classes")));
    }
    if scores.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (row, ys) in scores.iter().zip(labels.rows()) {
        for c in 0..n {
            let p = row[c].clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            let term = if ys[c] {
                weights.positive[c] * -p.ln()
            } else {
                -(1.0 - p).ln()
            };
            sum += weights.activity[c] * term;
        }
    }
    Ok(sum / (scores.len() * n) as f64)
}

/// Perfect-classifier scores: 1 for each assigned positive class, 0 elsewhere.
pub fn oracle_scores(cubes: &[Cube], activity_classes: &[String]) -> Result<Vec<ScoredCube>> {
    let index: HashMap<&str, usize> = activity_classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    cubes
        .iter()
        .map(|c| {
            let mut scores = vec![0.0; activity_classes.len()];
            if let Some(outcome) = &c.labels {
                for class in outcome.classes() {
                    let i = index
                        .get(class.as_str())
                        .ok_or_else(|| Error::UnknownClass(class.clone()))?;
                    scores[*i] = 1.0;
                }
            }
            Ok(ScoredCube {
                cube: c.clone(),
                scores,
            })
        })
        .collect()
}

/// Joins externally produced score records onto proposals by
/// `(video, t0, t1, seed track)`. Unmatched proposals are an error; score
/// records without a proposal are logged and ignored.
pub fn join_external_scores(proposals: &[Cube], scored: Vec<ScoredCube>, n_classes: usize) -> Result<Vec<ScoredCube>> {
    let mut by_key: HashMap<CubeKey, Vec<f64>> = HashMap::with_capacity(scored.len());
    for s in scored {
        if s.scores.len() != n_classes {
            return Err(Error::Shape(format!(
                "score vector for {} has {} entries, expected {n_classes}",
                s.cube.key(),
                s.scores.len()
            )));
        }
        let key = s.cube.key();
        if by_key.contains_key(&key) {
            return Err(Error::DuplicateScore(key.to_string()));
        }
        by_key.insert(key, s.scores);
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(proposals.len());
    for p in proposals {
        match by_key.remove(&p.key()) {
            Some(scores) => out.push(ScoredCube {
                cube: p.clone(),
                scores,
            }),
            None => missing.push(p.key().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    if !by_key.is_empty() {
        let mut extra: Vec<String> = by_key.keys().map(|k| k.to_string()).collect();
        extra.sort();
        log::warn!(
            "ignoring {} score record(s) without a matching proposal, first: {}",
            extra.len(),
            extra[0]
        );
    }
    Ok(out)
}

pub fn load_external_scores(path: impl AsRef<std::path::Path>, proposals: &[Cube], n_classes: usize) -> Result<Vec<ScoredCube>> {
    let scored = crate::ingest::read_records::<ScoredCube>(path)?;
    join_external_scores(proposals, scored, n_classes)
}

/// Action-wise late fusion: class `c` of the result is
/// `sum_m weights[m][c] * sets[m].scores[c]`. Every set must score the same
/// proposals; the first set fixes the output order.
pub fn fuse_scores(sets: &[Vec<ScoredCube>], weights: &[Vec<f64>]) -> Result<Vec<ScoredCube>> {
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    if weights.len() != sets.len() {
        return Err(Error::Shape(format!(
            "{} weight rows for {} score sets",
            weights.len(),
            sets.len()
        )));
    }
    let n = weights[0].len();
    if weights.iter().any(|w| w.len() != n) {
        return Err(Error::Shape("weight rows differ in length".into()));
    }
    for c in 0..n {
        let sum: f64 = weights.iter().map(|w| w[c]).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::FusionWeights { class: c, sum });
        }
    }
    let lookups: Vec<BTreeMap<CubeKey, &Vec<f64>>> = sets
        .iter()
        .map(|set| set.iter().map(|s| (s.cube.key(), &s.scores)).collect())
        .collect();
    for (m, set) in sets.iter().enumerate() {
        if set.len() != sets[0].len() || lookups[m].len() != set.len() {
            return Err(Error::ScoreCoverage(format!(
                "set {m} scores {} proposals, set 0 scores {}",
                set.len(),
                sets[0].len()
            )));
        }
    }
    sets[0]
        .iter()
        .map(|base| {
            let key = base.cube.key();
            let mut fused = vec![0.0; n];
            for (m, lookup) in lookups.iter().enumerate() {
                let scores = lookup
                    .get(&key)
                    .ok_or_else(|| Error::ScoreCoverage(format!("set {m} lacks {key}")))?;
                if scores.len() != n {
                    return Err(Error::Shape(format!("set {m} has {} classes, expected {n}", scores.len())));
                }
                for c in 0..n {
                    fused[c] += weights[m][c] * scores[c];
                }
            }
            for v in &mut fused {
                *v = v.clamp(0.0, 1.0);
            }
            Ok(ScoredCube {
                cube: base.cube.clone(),
                scores: fused,
            })
        })
        .collect()
}
