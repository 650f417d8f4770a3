//! Inductive conformal calibration with the conditional log-density as the
//! conformity score.
//!
//! A candidate label `y` belongs to the prediction set at significance `ε`
//! iff `(|{i : α_i ≤ α*}| + 1) / (l + 1) > ε`, where `α*` is the score of
//! `y` and `α_1..α_l` are the calibration scores. Ties count toward
//! membership. The same set is obtained by comparing `α*` against a single
//! threshold read off the sorted calibration scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::flow::FlowModel;

pub const RECORD_FORMAT: &str = "ccnf-calibration";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ConformityScore(pub f64);

/// Sorted calibration scores tied to the model that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub scores: Vec<f64>,
    pub model_hash: String,
    /// Scores are log-densities in standardised label space.
    pub standardized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ThresholdRepr", into = "ThresholdRepr")]
pub struct Threshold {
    pub epsilon: f64,
    /// Smallest accepted score; `-inf` when `include_all` is set.
    pub q_epsilon: f64,
    pub include_all: bool,
}

/// JSON cannot carry `-inf`, so an absent threshold is written as `null`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRepr {
    epsilon: f64,
    q_epsilon: Option<f64>,
    include_all: bool,
}

impl From<ThresholdRepr> for Threshold {
    fn from(r: ThresholdRepr) -> Self {
        Self {
            epsilon: r.epsilon,
            q_epsilon: r.q_epsilon.unwrap_or(f64::NEG_INFINITY),
            include_all: r.include_all,
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        Self {
            epsilon: t.epsilon,
            q_epsilon: t.q_epsilon.is_finite().then_some(t.q_epsilon),
            include_all: t.include_all,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub epsilon: f64,
    pub hits: usize,
    pub total: usize,
    pub coverage: f64,
    pub mean_score: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Input(format!("significance level must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// The rank condition itself, shared by both membership routes.
#[inline]
fn rank_passes(count: usize, l: usize, epsilon: f64) -> bool {
    (count + 1) as f64 / (l + 1) as f64 > epsilon
}

/// Membership by direct evaluation of the rank rule over unsorted scores.
pub fn rank_rule_member(scores: &[f64], alpha: f64, epsilon: f64) -> bool {
    let count = scores.iter().filter(|&&a| a <= alpha).count();
    rank_passes(count, scores.len(), epsilon)
}

impl Threshold {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon).map_err(|e| Error::Format(e.to_string()))?;
        if !self.include_all && !self.q_epsilon.is_finite() {
            return Err(Error::Format("threshold without include_all needs a finite score".into()));
        }
        Ok(())
    }

    pub fn accepts(&self, alpha: f64) -> bool {
        self.include_all || alpha >= self.q_epsilon
    }
}

impl CalibrationRecord {
    pub fn new(mut scores: Vec<f64>, model_hash: String) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Input("calibration set is empty".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("calibration scores must be finite".into()));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self {
            scores,
            model_hash,
            standardized: true,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::Format("calibration record has no scores".into()));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Format("calibration record has non-finite scores".into()));
        }
        if self.scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("calibration scores are not sorted".into()));
        }
        Ok(())
    }

    /// Fails when the record was calibrated against a different model.
    pub fn check_model(&self, model: &FlowModel) -> Result<()> {
        let hash = model.hash();
        if hash != self.model_hash {
            return Err(Error::HashMismatch {
                expected: self.model_hash.clone(),
                found: hash,
            });
        }
        Ok(())
    }
}

/// Log-density of the true future of `series` given its context.
pub fn conformity_score(model: &FlowModel, series: &[Vec<f64>]) -> Result<ConformityScore> {
    let t = model.context_len;
    if series.len() != t + model.horizon {
        return Err(Error::Shape(format!(
            "series has {} steps, model expects {}",
            series.len(),
            t + model.horizon
        )));
    }
    let h = model.condition(&series[..t])?;
    let future: Vec<f64> = series[t..].iter().flatten().copied().collect();
    model.log_prob_raw_label(&h, &future).map(ConformityScore)
}

pub fn calibrate(model: &FlowModel, cal_set: &SeriesDataset) -> Result<CalibrationRecord> {
    if cal_set.is_empty() {
        return Err(Error::Input("calibration set is empty".into()));
    }
    let scores = cal_set
        .series
        .iter()
        .map(|s| conformity_score(model, s).map(|c| c.0))
        .collect::<Result<Vec<_>>>()?;
    CalibrationRecord::new(scores, model.hash())
}

/// Converts the rank rule into a score threshold.
///
/// With `c` the smallest count satisfying the rank condition, a score is
/// accepted iff at least `c` calibration scores lie at or below it, i.e. iff
/// it is at least the `c`-th smallest score. `c = 0` accepts everything.
pub fn threshold(record: &CalibrationRecord, epsilon: f64) -> Result<Threshold> {
    check_epsilon(epsilon)?;
    let l = record.len();
    let c = (0..=l)
        .find(|&c| rank_passes(c, l, epsilon))
        .expect("count l always passes for epsilon < 1");
    Ok(if c == 0 {
        Threshold {
            epsilon,
            q_epsilon: f64::NEG_INFINITY,
            include_all: true,
        }
    } else {
        Threshold {
            epsilon,
            q_epsilon: record.scores[c - 1],
            include_all: false,
        }
    })
}

/// Whether raw label `y` lies in the prediction set for a raw `context`.
pub fn is_member(
    model: &FlowModel,
    context: &[Vec<f64>],
    y: &[f64],
    record: &CalibrationRecord,
    epsilon: f64,
) -> Result<bool> {
    check_epsilon(epsilon)?;
    let h = model.condition(context)?;
    let alpha = model.log_prob_raw_label(&h, y)?;
    Ok(rank_rule_member(&record.scores, alpha, epsilon))
}

/// Fraction of test series whose true future is accepted at level `epsilon`.
pub fn evaluate_coverage(
    model: &FlowModel,
    record: &CalibrationRecord,
    test_set: &SeriesDataset,
    epsilon: f64,
) -> Result<CoverageResult> {
    if test_set.is_empty() {
        return Err(Error::Input("test set is empty".into()));
    }
    let th = threshold(record, epsilon)?;
    let scores = test_set
        .series
        .iter()
        .map(|s| conformity_score(model, s).map(|c| c.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(coverage_from_scores(&th, &scores))
}

/// Coverage of precomputed test scores against a threshold.
pub fn coverage_from_scores(th: &Threshold, scores: &[f64]) -> CoverageResult {
    let hits = scores.iter().filter(|&&s| th.accepts(s)).count();
    let total = scores.len();
    CoverageResult {
        epsilon: th.epsilon,
        hits,
        total,
        coverage: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        mean_score: scores.iter().sum::<f64>() / total.max(1) as f64,
    }
}

/// Versioned calibration record document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFile {
    pub format: String,
    pub version: u32,
    pub record: CalibrationRecord,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl RecordFile {
    pub fn new(record: CalibrationRecord) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            record,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serialises");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: RecordFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("calibration record: {e}")))?;
        if file.format != RECORD_FORMAT || file.version != RECORD_VERSION {
            return Err(Error::Format(format!(
                "unsupported calibration record {} v{}",
                file.format, file.version
            )));
        }
        file.record.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
