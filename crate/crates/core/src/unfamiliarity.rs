//! Familiarity metrics and the quantile bucketing behind every evaluation.
//!
//! Three interchangeable metrics, all oriented so that higher means more
//! unfamiliar: the pretrained model's answer uncertainty (`pretrain-nll`),
//! a finetuned model's uncertainty about its own top prediction
//! (`sft-nll`), and inverse corpus mention counts (`mention-count`,
//! stored as 1/(1+count)). No cross-metric equivalence is assumed beyond
//! a rank-correlation sanity check in the test suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{forward, HeadId, ModelParams};
use crate::world::{mention_count, CorpusIndex, Example, Task, MC_ANSWERS};

/// Which operationalization of unfamiliarity produced a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    PretrainNll,
    SftNll,
    MentionCount,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::PretrainNll => "pretrain-nll",
            Metric::SftNll => "sft-nll",
            Metric::MentionCount => "mention-count",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Metric> {
        match s {
            "pretrain-nll" => Ok(Metric::PretrainNll),
            "sft-nll" => Ok(Metric::SftNll),
            "mention-count" => Ok(Metric::MentionCount),
            other => Err(Error::Config {
                field: "metric",
                reason: format!(
                    "unknown metric `{other}` (expected pretrain-nll|sft-nll|mention-count)"
                ),
            }),
        }
    }
}

/// A nonnegative unfamiliarity value; higher = more unfamiliar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfamiliarityScore {
    pub value: f64,
    pub metric: Metric,
}

/// Threshold paired with the metric it applies to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Familiarity {
    Familiar,
    Unfamiliar,
}

/// The pretrained model's answer distribution over A–D for a concept:
/// the slot-0 value distribution marginalized through the value→letter
/// map. This is the model's direct prediction normalized over answer
/// tokens; no answer head is consulted because pretraining never trains
/// one.
pub fn pretrained_answer_dist(pretrained: &ModelParams, concept: usize) -> Result<Vec<f64>> {
    let values = forward(pretrained, concept, HeadId::SlotValue(0))?;
    let mut letters = vec![0.0; MC_ANSWERS];
    for (v, p) in values.probs.iter().enumerate() {
        letters[v % MC_ANSWERS] += p;
    }
    Ok(letters)
}

/// Negative log likelihood of the pretrained model's top answer.
pub fn nll_top_prediction(pretrained: &ModelParams, concept: usize) -> Result<UnfamiliarityScore> {
    let letters = pretrained_answer_dist(pretrained, concept)?;
    let top = letters.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(UnfamiliarityScore { value: -top.ln(), metric: Metric::PretrainNll })
}

/// NLL of a finetuned model's top predicted claim, averaged over slots for
/// long-form examples, single-token for multiple choice.
pub fn sft_avg_nll(sft_model: &ModelParams, example: &Example) -> Result<UnfamiliarityScore> {
    let value = match example.task {
        Task::Mc => {
            let p = forward(sft_model, example.concept_id, HeadId::Mc)
                .map_err(|_| Error::Mismatch("sft-nll on an MC example needs an MC head".into()))?;
            -p.max_prob().ln()
        }
        Task::LongForm => {
            let slots: Vec<u16> = sft_model
                .heads
                .keys()
                .filter_map(|id| match id {
                    HeadId::SlotClaim(s) => Some(*s),
                    _ => None,
                })
                .collect();
            if slots.is_empty() {
                return Err(Error::Mismatch(
                    "sft-nll on a long-form example needs slot-claim heads".into(),
                ));
            }
            let mut total = 0.0;
            for &s in &slots {
                let p = forward(sft_model, example.concept_id, HeadId::SlotClaim(s))?;
                total += -p.max_prob().ln();
            }
            total / slots.len() as f64
        }
    };
    Ok(UnfamiliarityScore { value, metric: Metric::SftNll })
}

/// 1/(1+count) of corpus mentions, so orientation matches the NLL metrics.
pub fn mention_score(index: &CorpusIndex, concept_id: usize) -> Result<UnfamiliarityScore> {
    let count = mention_count(index, concept_id)?;
    Ok(UnfamiliarityScore { value: 1.0 / (1.0 + count as f64), metric: Metric::MentionCount })
}

/// Strictly-greater comparison: a score exactly at the threshold counts
/// as familiar. Errors when the metrics disagree.
pub fn classify_familiar(score: UnfamiliarityScore, threshold: Threshold) -> Result<Familiarity> {
    if score.metric != threshold.metric {
        return Err(Error::Mismatch(format!(
            "score metric {} does not match threshold metric {}",
            score.metric.as_str(),
            threshold.metric.as_str()
        )));
    }
    Ok(if score.value > threshold.value { Familiarity::Unfamiliar } else { Familiarity::Familiar })
}

/// Equal-count quantile bucket assignment, ordered by increasing
/// unfamiliarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    pub assignment: Vec<usize>,
    pub n_buckets: usize,
}

impl Buckets {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_buckets];
        for &b in &self.assignment {
            counts[b] += 1;
        }
        counts
    }

    /// Buckets left empty by tie merging; flagged in reports.
    pub fn empty_buckets(&self) -> Vec<usize> {
        self.counts()
            .into_iter()
            .enumerate()
            .filter_map(|(i, c)| (c == 0).then_some(i))
            .collect()
    }

    /// Indices of the inputs assigned to bucket `b`, in input order.
    pub fn members(&self, b: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &x)| (x == b).then_some(i))
            .collect()
    }
}

/// Assign scores to `n_buckets` equal-count buckets in increasing order,
/// splitting the remainder over the leading buckets. Equal scores always
/// share a bucket (the earliest the group overlaps), so the assignment is
/// a pure function of the value multiset; ties inside a group are ordered
/// by stable input position.
pub fn quantile_buckets(scores: &[f64], n_buckets: usize) -> Result<Buckets> {
    if n_buckets < 2 {
        return Err(Error::Config { field: "n_buckets", reason: "must be ≥ 2".into() });
    }
    if scores.len() < n_buckets {
        return Err(Error::Empty(format!(
            "{} scores cannot fill {} buckets",
            scores.len(),
            n_buckets
        )));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::Mismatch("scores must be finite".into()));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    let base = n / n_buckets;
    let rem = n % n_buckets;
    let mut provisional = Vec::with_capacity(n);
    for bucket in 0..n_buckets {
        let size = base + usize::from(bucket < rem);
        provisional.extend(std::iter::repeat(bucket).take(size));
    }

    let mut assignment = vec![0usize; n];
    let mut prev_value = f64::NAN;
    let mut prev_bucket = 0usize;
    for (pos, &idx) in order.iter().enumerate() {
        let bucket = if pos > 0 && scores[idx] == prev_value { prev_bucket } else { provisional[pos] };
        assignment[idx] = bucket;
        prev_value = scores[idx];
        prev_bucket = bucket;
    }
    Ok(Buckets { assignment, n_buckets })
}

/// Export scores as CSV: concept_id, metric, value, bucket.
pub fn export_scores_csv(
    path: &Path,
    concept_ids: &[usize],
    scores: &[UnfamiliarityScore],
    buckets: &Buckets,
) -> Result<()> {
    if concept_ids.len() != scores.len() || scores.len() != buckets.assignment.len() {
        return Err(Error::Mismatch("score export inputs have unequal lengths".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["concept_id", "metric", "value", "bucket"])?;
    for ((id, s), b) in concept_ids.iter().zip(scores).zip(&buckets.assignment) {
        wtr.write_record([
            id.to_string(),
            s.metric.as_str().to_string(),
            format!("{}", s.value),
            b.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
