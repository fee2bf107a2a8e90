//! Descent updates: plain SGD and an Adam-style adaptive variant.
//!
//! Updates touch only the parameters present in the gradient container, so
//! embedding rows of concepts absent from a batch — including concepts
//! never seen in pretraining — keep their values bit-for-bit. Weight decay
//! is coupled (`g + λw`) and follows the same touched-only rule. Adam
//! moments are kept per embedding row with per-row step counts, so rarely
//! seen concepts get properly bias-corrected first steps.

use std::collections::BTreeMap;

use super::{Grads, HeadId, Matrix, ModelParams};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OptAlgo {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptAlgo {
    type Err = Error;
    fn from_str(s: &str) -> Result<OptAlgo> {
        match s {
            "sgd" => Ok(OptAlgo::Sgd),
            "adam" => Ok(OptAlgo::Adam),
            other => Err(Error::Config {
                field: "optimizer",
                reason: format!("unknown optimizer `{other}` (expected sgd|adam)"),
            }),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Optimizer state for one model.
#[derive(Clone, Debug)]
pub struct Optimizer {
    algo: OptAlgo,
    lr: f64,
    weight_decay: f64,
    /// Learning-rate multiplier for embedding rows (finetuning uses < 1).
    embedding_lr_scale: f64,
    emb_rows: BTreeMap<usize, Moments>,
    hidden: Option<Moments>,
    heads: BTreeMap<HeadId, Moments>,
}

impl Optimizer {
    pub fn new(algo: OptAlgo, lr: f64, weight_decay: f64, embedding_lr_scale: f64) -> Optimizer {
        Optimizer {
            algo,
            lr,
            weight_decay,
            embedding_lr_scale,
            emb_rows: BTreeMap::new(),
            hidden: None,
            heads: BTreeMap::new(),
        }
    }

    /// Apply one descent update in place. Errors on non-finite gradients.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Training { step: 0, reason: "non-finite gradient".into() });
        }
        let algo = self.algo;
        let wd = self.weight_decay;
        let emb_lr = self.lr * self.embedding_lr_scale;
        for (&c, grow) in &grads.emb_rows {
            if c >= params.embeddings.rows {
                return Err(Error::Lookup(format!("gradient names unknown concept {c}")));
            }
            let row = params.embeddings.row_mut(c);
            let state = self.emb_rows.entry(c).or_default();
            update_slice(algo, emb_lr, wd, row, grow, state);
        }
        if let Some((gw, gb)) = &grads.hidden {
            let h = params.hidden.as_mut().ok_or_else(|| {
                Error::Mismatch("hidden gradient for a model without a hidden layer".into())
            })?;
            let state = self.hidden.get_or_insert_with(Moments::default);
            update_tensor_pair(algo, self.lr, wd, &mut h.weights, &mut h.bias, gw, gb, state)?;
        }
        for (id, (gw, gb)) in &grads.heads {
            let head = params
                .heads
                .get_mut(id)
                .ok_or_else(|| Error::Lookup(format!("gradient names unknown head `{id}`")))?;
            let state = self.heads.entry(*id).or_default();
            update_tensor_pair(algo, self.lr, wd, &mut head.weights, &mut head.bias, gw, gb, state)?;
        }
        Ok(())
    }
}

fn update_slice(algo: OptAlgo, lr: f64, wd: f64, w: &mut [f64], g: &[f64], state: &mut Moments) {
    match algo {
        OptAlgo::Sgd => {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * (gi + wd * *wi);
            }
        }
        OptAlgo::Adam => {
            if state.m.is_empty() {
                state.m = vec![0.0; w.len()];
                state.v = vec![0.0; w.len()];
            }
            state.t += 1;
            let bc1 = 1.0 - BETA1.powi(state.t as i32);
            let bc2 = 1.0 - BETA2.powi(state.t as i32);
            for i in 0..w.len() {
                let gi = g[i] + wd * w[i];
                state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * gi;
                state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * gi * gi;
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor_pair(
    algo: OptAlgo,
    lr: f64,
    wd: f64,
    w: &mut Matrix,
    b: &mut Vec<f64>,
    gw: &Matrix,
    gb: &[f64],
    state: &mut Moments,
) -> Result<()> {
    if gw.data.len() != w.data.len() || gb.len() != b.len() {
        return Err(Error::Mismatch(format!(
            "gradient shape {}x{} does not match parameter shape {}x{}",
            gw.rows, gw.cols, w.rows, w.cols
        )));
    }
    // weights and bias share one moment buffer, laid out [weights | bias]
    let n = w.data.len();
    match algo {
        OptAlgo::Sgd => {
            for (wi, gi) in w.data.iter_mut().zip(&gw.data) {
                *wi -= lr * (gi + wd * *wi);
            }
            // bias traditionally skips weight decay
            for (bi, gi) in b.iter_mut().zip(gb) {
                *bi -= lr * gi;
            }
        }
        OptAlgo::Adam => {
            if state.m.is_empty() {
                state.m = vec![0.0; n + b.len()];
                state.v = vec![0.0; n + b.len()];
            }
            state.t += 1;
            let bc1 = 1.0 - BETA1.powi(state.t as i32);
            let bc2 = 1.0 - BETA2.powi(state.t as i32);
            for i in 0..n + b.len() {
                let (wi, gi) = if i < n {
                    (&mut w.data[i], gw.data[i] + wd * w.data[i])
                } else {
                    (&mut b[i - n], gb[i - n])
                };
                state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * gi;
                state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * gi * gi;
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                *wi -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_params, HeadSpec};
    use crate::rng::rng_from_seed;

    /// One concept, one dim, one single-unit head: a scalar test bench.
    fn scalar_params(w0: f64) -> ModelParams {
        let mut rng = rng_from_seed(0);
        let mut p =
            init_params(1, 2, &[HeadSpec { id: HeadId::Mc, k: 1 }], None, &mut rng).unwrap();
        p.heads.get_mut(&HeadId::Mc).unwrap().weights.set(0, 0, w0);
        p
    }

    fn scalar_grads(g: f64) -> Grads {
        let mut grads = Grads::default();
        let mut gw = Matrix::zeros(2, 1);
        gw.set(0, 0, g);
        grads.heads.insert(HeadId::Mc, (gw, vec![0.0]));
        grads
    }

    #[test]
    fn sgd_update_matches_definition() {
        // w' = w − lr·g: (1, 2, 0.1) → 0.8
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptAlgo::Sgd, 0.1, 0.0, 1.0);
        opt.step(&mut p, &scalar_grads(2.0)).unwrap();
        let w = p.heads[&HeadId::Mc].weights.get(0, 0);
        assert!((w - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_matches_definition() {
        // w' = w − lr·(g + λw): (1, 0, 0.1, 0.5) → 0.95
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptAlgo::Sgd, 0.1, 0.5, 1.0);
        opt.step(&mut p, &scalar_grads(0.0)).unwrap();
        let w = p.heads[&HeadId::Mc].weights.get(0, 0);
        assert!((w - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = scalar_params(0.63);
        let before = p.clone();
        for algo in [OptAlgo::Sgd, OptAlgo::Adam] {
            let mut opt = Optimizer::new(algo, 0.0, 0.0, 1.0);
            opt.step(&mut p, &scalar_grads(17.0)).unwrap();
            assert_eq!(p, before, "{algo:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptAlgo::Adam, 0.01, 0.0, 1.0);
        opt.step(&mut p, &scalar_grads(3.0)).unwrap();
        let w = p.heads[&HeadId::Mc].weights.get(0, 0);
        // bias-corrected first step is lr·g/(|g| + eps') ≈ lr
        assert!((w - (1.0 - 0.01)).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn untouched_embedding_rows_stay_bitwise_identical() {
        let mut rng = rng_from_seed(2);
        let mut p =
            init_params(5, 4, &[HeadSpec { id: HeadId::Mc, k: 4 }], None, &mut rng).unwrap();
        let frozen: Vec<f64> = p.embeddings.row(3).to_vec();
        let mut grads = Grads::default();
        grads.emb_rows.insert(1, vec![0.5; 4]);
        let mut opt = Optimizer::new(OptAlgo::Adam, 0.05, 0.01, 1.0);
        for _ in 0..10 {
            opt.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p.embeddings.row(3), &frozen[..]);
        assert_ne!(p.embeddings.row(1), &[0.0; 4][..]);
    }

    #[test]
    fn embedding_lr_scale_shrinks_embedding_steps() {
        let mut rng = rng_from_seed(2);
        let make = || {
            let mut r = rng_from_seed(7);
            init_params(2, 4, &[HeadSpec { id: HeadId::Mc, k: 4 }], None, &mut r).unwrap()
        };
        let _ = &mut rng;
        let mut grads = Grads::default();
        grads.emb_rows.insert(0, vec![1.0; 4]);
        let mut full = make();
        let mut scaled = make();
        let start = make();
        Optimizer::new(OptAlgo::Sgd, 0.1, 0.0, 1.0).step(&mut full, &grads).unwrap();
        Optimizer::new(OptAlgo::Sgd, 0.1, 0.0, 0.1).step(&mut scaled, &grads).unwrap();
        for i in 0..4 {
            let d_full = full.embeddings.get(0, i) - start.embeddings.get(0, i);
            let d_scaled = scaled.embeddings.get(0, i) - start.embeddings.get(0, i);
            assert!((d_scaled - 0.1 * d_full).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar_params(1.0);
        let mut opt = Optimizer::new(OptAlgo::Sgd, 0.1, 0.0, 1.0);
        let err = opt.step(&mut p, &scalar_grads(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Training { .. }));
    }
}
