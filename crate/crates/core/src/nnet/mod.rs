//! Minimal trainable-model core: a concept-embedding table feeding
//! per-task linear readout heads (optionally through one shared tanh
//! hidden layer), with exact analytic gradients and plain optimizers.
//!
//! The same parameter container backs policies and reward models; they
//! differ only in which heads they carry. All math is 64-bit; softmax is
//! computed with max subtraction.

mod checkpoint;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_params, save_params};
pub use loss::{finite_difference_max_rel_err, grad, loss_only, CeTarget, Grads, LossItem};
pub use optim::{OptAlgo, Optimizer};
pub use train::{pretrain, train, EpochSampler, TrainConfig, TrainLog};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Identifies a readout head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadId {
    /// Multiple-choice answer head over 4 tokens (A–D) or 5 (with E).
    Mc,
    /// Pretraining head for one slot: predicts the stated value.
    SlotValue(u16),
    /// Long-form policy head for one slot: claim a value or abstain (last).
    SlotClaim(u16),
    /// Reward-model head for one slot: per-value claim-correctness logit.
    RmClaim(u16),
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadId::Mc => write!(f, "mc"),
            HeadId::SlotValue(s) => write!(f, "slot_value_{s}"),
            HeadId::SlotClaim(s) => write!(f, "slot_claim_{s}"),
            HeadId::RmClaim(s) => write!(f, "rm_claim_{s}"),
        }
    }
}

/// One linear readout: `rep_dim × k` weights plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn k(&self) -> usize {
        self.bias.len()
    }
}

/// Shared tanh hidden layer between embeddings and heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// `dim × units` weights.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Embeddings plus readout heads; the f_θ of policies and reward models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    /// `num_concepts × dim` embedding table.
    pub embeddings: Matrix,
    /// Optional shared hidden layer (linear readout when absent).
    pub hidden: Option<HiddenLayer>,
    pub heads: BTreeMap<HeadId, Head>,
}

/// A probability vector over a head's output tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionDist {
    pub probs: Vec<f64>,
}

impl PredictionDist {
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ModelParams {
    pub fn num_concepts(&self) -> usize {
        self.embeddings.rows
    }

    /// Dimensionality the heads read from (hidden units, or `dim`).
    pub fn rep_dim(&self) -> usize {
        self.hidden.as_ref().map(|h| h.bias.len()).unwrap_or(self.dim)
    }

    pub fn head(&self, id: HeadId) -> Result<&Head> {
        self.heads.get(&id).ok_or_else(|| Error::Lookup(format!("model has no head `{id}`")))
    }

    fn embedding(&self, concept: usize) -> Result<&[f64]> {
        if concept >= self.embeddings.rows {
            return Err(Error::Lookup(format!("concept {concept} not in embedding table")));
        }
        Ok(self.embeddings.row(concept))
    }

    /// Representation the heads read: the embedding row, or tanh of the
    /// hidden layer applied to it.
    pub fn representation(&self, concept: usize) -> Result<Vec<f64>> {
        let z = self.embedding(concept)?;
        match &self.hidden {
            None => Ok(z.to_vec()),
            Some(h) => {
                let units = h.bias.len();
                let mut u = h.bias.clone();
                for (j, uj) in u.iter_mut().enumerate().take(units) {
                    let mut acc = 0.0;
                    for (i, &zi) in z.iter().enumerate() {
                        acc += h.weights.get(i, j) * zi;
                    }
                    *uj += acc;
                }
                Ok(u.into_iter().map(f64::tanh).collect())
            }
        }
    }

    /// Raw head outputs before any squashing.
    pub fn logits(&self, concept: usize, head: HeadId) -> Result<Vec<f64>> {
        let r = self.representation(concept)?;
        let h = self.head(head)?;
        let mut out = h.bias.clone();
        for (j, oj) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &ri) in r.iter().enumerate() {
                acc += h.weights.get(i, j) * ri;
            }
            *oj += acc;
        }
        Ok(out)
    }

    /// Add an answer token with zero weights (e.g. widen A–D to A–E).
    pub fn widen_head(&mut self, id: HeadId, new_k: usize) -> Result<()> {
        let rep_dim = self.rep_dim();
        let head = self.heads.get_mut(&id).ok_or_else(|| Error::Lookup(format!("no head `{id}`")))?;
        let old_k = head.k();
        if new_k < old_k {
            return Err(Error::Mismatch(format!("cannot shrink head `{id}` from {old_k} to {new_k}")));
        }
        if new_k == old_k {
            return Ok(());
        }
        let mut w = Matrix::zeros(rep_dim, new_k);
        for i in 0..rep_dim {
            for j in 0..old_k {
                w.set(i, j, head.weights.get(i, j));
            }
        }
        head.weights = w;
        head.bias.resize(new_k, 0.0);
        Ok(())
    }
}

/// Softmax prediction of a head for a concept.
pub fn forward(params: &ModelParams, concept: usize, head: HeadId) -> Result<PredictionDist> {
    let logits = params.logits(concept, head)?;
    Ok(PredictionDist { probs: softmax(&logits) })
}

/// Shape requests for [`init_params`].
#[derive(Clone, Debug)]
pub struct HeadSpec {
    pub id: HeadId,
    pub k: usize,
}

/// Fresh parameters: embeddings i.i.d. Gaussian with standard deviation
/// 1/√d (so squared row norms are 1 in expectation), zero readouts.
pub fn init_params(
    num_concepts: usize,
    dim: usize,
    heads: &[HeadSpec],
    hidden_units: Option<usize>,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    if dim < 2 {
        return Err(Error::Config { field: "dim", reason: format!("must be ≥ 2, got {dim}") });
    }
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
    let mut embeddings = Matrix::zeros(num_concepts, dim);
    for v in &mut embeddings.data {
        *v = normal.sample(rng);
    }
    let hidden = match hidden_units {
        None => None,
        Some(units) => {
            let mut weights = Matrix::zeros(dim, units);
            for v in &mut weights.data {
                *v = normal.sample(rng);
            }
            Some(HiddenLayer { weights, bias: vec![0.0; units] })
        }
    };
    let rep_dim = hidden.as_ref().map(|h| h.bias.len()).unwrap_or(dim);
    let heads = heads
        .iter()
        .map(|hs| (hs.id, Head { weights: Matrix::zeros(rep_dim, hs.k), bias: vec![0.0; hs.k] }))
        .collect();
    Ok(ModelParams { dim, embeddings, hidden, heads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn test_params() -> ModelParams {
        let mut rng = rng_from_seed(1);
        init_params(
            10,
            8,
            &[
                HeadSpec { id: HeadId::Mc, k: 4 },
                HeadSpec { id: HeadId::SlotValue(0), k: 8 },
            ],
            None,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn zero_readout_gives_uniform_forward() {
        let params = test_params();
        for c in 0..10 {
            let p = forward(&params, c, HeadId::Mc).unwrap();
            for x in &p.probs {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = {
            let mut rng = rng_from_seed(9);
            init_params(5, 4, &[HeadSpec { id: HeadId::Mc, k: 4 }], None, &mut rng).unwrap()
        };
        let b = {
            let mut rng = rng_from_seed(9);
            init_params(5, 4, &[HeadSpec { id: HeadId::Mc, k: 4 }], None, &mut rng).unwrap()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_row_norms_near_one() {
        let mut rng = rng_from_seed(3);
        let params = init_params(400, 32, &[], None, &mut rng).unwrap();
        let mean_sq: f64 = (0..400)
            .map(|c| params.embeddings.row(c).iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / 400.0;
        assert!((mean_sq - 1.0).abs() < 0.1, "mean squared norm {mean_sq}");
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p, vec![0.25; 4]);
        let p = softmax(&[2.0_f64.ln(), 0.0, 0.0, 0.0]);
        let expect = [0.4, 0.2, 0.2, 0.2];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = [0.3, -1.2, 2.4, 0.0, 5.5];
        let base = softmax(&logits);
        for shift in [-100.0, -1.0, 3.7, 250.0] {
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let p = softmax(&shifted);
            let tv: f64 = 0.5 * base.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(tv <= 1e-12, "tv {tv} at shift {shift}");
        }
    }

    #[test]
    fn softmax_sums_to_one_for_random_logits() {
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn unknown_concept_and_head_error() {
        let params = test_params();
        assert!(matches!(forward(&params, 99, HeadId::Mc), Err(Error::Lookup(_))));
        assert!(matches!(forward(&params, 0, HeadId::RmClaim(0)), Err(Error::Lookup(_))));
    }

    #[test]
    fn widen_head_preserves_old_logits() {
        let mut params = test_params();
        // give the Mc head some nonzero weights first
        for v in &mut params.heads.get_mut(&HeadId::Mc).unwrap().weights.data {
            *v = 0.37;
        }
        let before = params.logits(0, HeadId::Mc).unwrap();
        params.widen_head(HeadId::Mc, 5).unwrap();
        let after = params.logits(0, HeadId::Mc).unwrap();
        assert_eq!(after.len(), 5);
        assert_eq!(&after[..4], &before[..]);
        assert_eq!(after[4], 0.0);
    }

    #[test]
    fn hidden_layer_forward_is_uniform_at_zero_heads() {
        let mut rng = rng_from_seed(2);
        let params =
            init_params(6, 8, &[HeadSpec { id: HeadId::Mc, k: 5 }], Some(12), &mut rng).unwrap();
        assert_eq!(params.rep_dim(), 12);
        let p = forward(&params, 3, HeadId::Mc).unwrap();
        for x in &p.probs {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }
}
