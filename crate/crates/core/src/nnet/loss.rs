//! Loss items and exact analytic gradients.
//!
//! A batch is a list of [`LossItem`]s; [`grad`] returns the summed loss and
//! a gradient container sparse over embedding rows. Every item kind is
//! covered by the central finite-difference audit in
//! [`finite_difference_max_rel_err`].

use std::collections::BTreeMap;

use super::{HeadId, Matrix, ModelParams};
use crate::error::{Error, Result};

/// Hard or soft cross-entropy target.
#[derive(Clone, Debug, PartialEq)]
pub enum CeTarget {
    Hard(usize),
    Soft(Vec<f64>),
}

/// One loss term on one (concept, head) pair.
#[derive(Clone, Debug, PartialEq)]
pub enum LossItem {
    /// `weight · CE(softmax(logits), target)`
    Ce { concept: usize, head: HeadId, target: CeTarget, weight: f64 },
    /// Bernoulli cross-entropy on a single sigmoid output unit.
    BinCe { concept: usize, head: HeadId, unit: usize, label: f64, weight: f64 },
    /// `weight/2 · (logit[unit] − target)²` on a linear output unit.
    Sq { concept: usize, head: HeadId, unit: usize, target: f64, weight: f64 },
    /// Policy-gradient surrogate `−coeff · ln softmax(logits)[action]`.
    Pg { concept: usize, head: HeadId, action: usize, coeff: f64 },
    /// Clipped importance-ratio surrogate
    /// `−min(r·adv, clip(r, 1−ε, 1+ε)·adv)` with `r = p(action)/exp(logp_old)`.
    PpoClip {
        concept: usize,
        head: HeadId,
        action: usize,
        advantage: f64,
        logp_old: f64,
        clip: f64,
    },
    /// `coeff · KL(softmax(logits) ‖ ref_probs)`.
    KlToRef { concept: usize, head: HeadId, ref_probs: Vec<f64>, coeff: f64 },
}

impl LossItem {
    fn concept(&self) -> usize {
        match self {
            LossItem::Ce { concept, .. }
            | LossItem::BinCe { concept, .. }
            | LossItem::Sq { concept, .. }
            | LossItem::Pg { concept, .. }
            | LossItem::PpoClip { concept, .. }
            | LossItem::KlToRef { concept, .. } => *concept,
        }
    }

    fn head(&self) -> HeadId {
        match self {
            LossItem::Ce { head, .. }
            | LossItem::BinCe { head, .. }
            | LossItem::Sq { head, .. }
            | LossItem::Pg { head, .. }
            | LossItem::PpoClip { head, .. }
            | LossItem::KlToRef { head, .. } => *head,
        }
    }
}

/// Gradient container: dense per touched head, sparse over embedding rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    pub emb_rows: BTreeMap<usize, Vec<f64>>,
    /// Hidden-layer gradient, if the model has one and it was touched.
    pub hidden: Option<(Matrix, Vec<f64>)>,
    pub heads: BTreeMap<HeadId, (Matrix, Vec<f64>)>,
}

impl Grads {
    pub fn is_finite(&self) -> bool {
        self.emb_rows.values().all(|r| r.iter().all(|x| x.is_finite()))
            && self
                .hidden
                .as_ref()
                .map(|(w, b)| {
                    w.data.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite())
                })
                .unwrap_or(true)
            && self.heads.values().all(|(w, b)| {
                w.data.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite())
            })
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for r in self.emb_rows.values() {
            sq += r.iter().map(|x| x * x).sum::<f64>();
        }
        if let Some((w, b)) = &self.hidden {
            sq += w.data.iter().map(|x| x * x).sum::<f64>();
            sq += b.iter().map(|x| x * x).sum::<f64>();
        }
        for (w, b) in self.heads.values() {
            sq += w.data.iter().map(|x| x * x).sum::<f64>();
            sq += b.iter().map(|x| x * x).sum::<f64>();
        }
        sq.sqrt()
    }
}

/// Loss and gradient of one item given the precomputed logits.
/// Returns (loss, dlogits).
fn item_loss_dlogits(item: &LossItem, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    match item {
        LossItem::Ce { target, weight, .. } => {
            let p = super::softmax(logits);
            match target {
                CeTarget::Hard(t) => {
                    if *t >= k {
                        return Err(Error::Mismatch(format!("target {t} out of range {k}")));
                    }
                    let loss = -weight * p[*t].max(f64::MIN_POSITIVE).ln();
                    let mut d: Vec<f64> = p.iter().map(|&x| weight * x).collect();
                    d[*t] -= weight;
                    Ok((loss, d))
                }
                CeTarget::Soft(t) => {
                    if t.len() != k {
                        return Err(Error::Mismatch(format!(
                            "soft target has {} entries, head has {k}",
                            t.len()
                        )));
                    }
                    let mut loss = 0.0;
                    let mut d = Vec::with_capacity(k);
                    for (pk, tk) in p.iter().zip(t) {
                        if *tk > 0.0 {
                            loss -= weight * tk * pk.max(f64::MIN_POSITIVE).ln();
                        }
                        d.push(weight * (pk - tk));
                    }
                    Ok((loss, d))
                }
            }
        }
        LossItem::BinCe { unit, label, weight, .. } => {
            if *unit >= k {
                return Err(Error::Mismatch(format!("unit {unit} out of range {k}")));
            }
            let y = super::sigmoid(logits[*unit]);
            let eps = 1e-15;
            let loss =
                -weight * (label * (y + eps).ln() + (1.0 - label) * (1.0 - y + eps).ln());
            let mut d = vec![0.0; k];
            d[*unit] = weight * (y - label);
            Ok((loss, d))
        }
        LossItem::Sq { unit, target, weight, .. } => {
            if *unit >= k {
                return Err(Error::Mismatch(format!("unit {unit} out of range {k}")));
            }
            let e = logits[*unit] - target;
            let mut d = vec![0.0; k];
            d[*unit] = weight * e;
            Ok((weight * 0.5 * e * e, d))
        }
        LossItem::Pg { action, coeff, .. } => {
            if *action >= k {
                return Err(Error::Mismatch(format!("action {action} out of range {k}")));
            }
            let p = super::softmax(logits);
            let loss = -coeff * p[*action].max(f64::MIN_POSITIVE).ln();
            let mut d: Vec<f64> = p.iter().map(|&x| coeff * x).collect();
            d[*action] -= coeff;
            Ok((loss, d))
        }
        LossItem::PpoClip { action, advantage, logp_old, clip, .. } => {
            if *action >= k {
                return Err(Error::Mismatch(format!("action {action} out of range {k}")));
            }
            let p = super::softmax(logits);
            let logp = p[*action].max(f64::MIN_POSITIVE).ln();
            let ratio = (logp - logp_old).exp();
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
            let surrogate = (ratio * advantage).min(clipped * advantage);
            // unclipped branch active iff it attains the min
            let active = ratio * advantage <= clipped * advantage;
            let mut d = vec![0.0; k];
            if active {
                // d(−r·A)/dlogit_j = −A·r·(1{j=a} − p_j)
                for (j, dj) in d.iter_mut().enumerate() {
                    let ind = if j == *action { 1.0 } else { 0.0 };
                    *dj = -advantage * ratio * (ind - p[j]);
                }
            }
            Ok((-surrogate, d))
        }
        LossItem::KlToRef { ref_probs, coeff, .. } => {
            if ref_probs.len() != k {
                return Err(Error::Mismatch(format!(
                    "ref dist has {} entries, head has {k}",
                    ref_probs.len()
                )));
            }
            if ref_probs.iter().any(|&q| q <= 0.0) {
                return Err(Error::Mismatch("ref dist must be strictly positive".into()));
            }
            let p = super::softmax(logits);
            let mut kl = 0.0;
            for (pk, qk) in p.iter().zip(ref_probs) {
                if *pk > 0.0 {
                    kl += pk * (pk.ln() - qk.ln());
                }
            }
            let mut d = Vec::with_capacity(k);
            for (pk, qk) in p.iter().zip(ref_probs) {
                let term = if *pk > 0.0 { pk.ln() - qk.ln() } else { 0.0 };
                d.push(coeff * pk * (term - kl));
            }
            Ok((coeff * kl, d))
        }
    }
}

/// Summed loss and exact gradients for a batch. The batch is processed in
/// input order; gradients are sums of per-item contributions, so batching
/// is linear: grad(a ++ b) = grad(a) + grad(b).
pub fn grad(params: &ModelParams, batch: &[LossItem]) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient of an empty batch".into()));
    }
    let mut total = 0.0;
    let mut grads = Grads::default();
    for item in batch {
        let concept = item.concept();
        let head_id = item.head();
        if concept >= params.embeddings.rows {
            return Err(Error::Lookup(format!("concept {concept} not in embedding table")));
        }
        let z = params.embeddings.row(concept).to_vec();
        // forward through the optional hidden layer, keeping what backward needs
        let rep: Vec<f64> = match &params.hidden {
            None => z.clone(),
            Some(_) => params.representation(concept)?,
        };
        let head = params.head(head_id)?;
        let mut logits = head.bias.clone();
        for (j, lj) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &ri) in rep.iter().enumerate() {
                acc += head.weights.get(i, j) * ri;
            }
            *lj += acc;
        }

        let (loss, dlogits) = item_loss_dlogits(item, &logits)?;
        total += loss;

        // head gradients: dW = rep ⊗ dlogits, db = dlogits
        let k = head.k();
        let rep_dim = rep.len();
        let (hw, hb) = grads
            .heads
            .entry(head_id)
            .or_insert_with(|| (Matrix::zeros(rep_dim, k), vec![0.0; k]));
        for (i, &ri) in rep.iter().enumerate() {
            for (j, &dj) in dlogits.iter().enumerate() {
                hw.data[i * k + j] += ri * dj;
            }
        }
        for (bj, &dj) in hb.iter_mut().zip(&dlogits) {
            *bj += dj;
        }

        // backprop to the representation
        let mut drep = vec![0.0; rep_dim];
        for (i, di) in drep.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &dj) in dlogits.iter().enumerate() {
                acc += head.weights.get(i, j) * dj;
            }
            *di = acc;
        }

        let dz: Vec<f64> = match &params.hidden {
            None => drep,
            Some(h) => {
                // rep = tanh(u); du = drep ⊙ (1 − rep²)
                let du: Vec<f64> =
                    drep.iter().zip(&rep).map(|(d, r)| d * (1.0 - r * r)).collect();
                let units = h.bias.len();
                let (hw, hb) = grads.hidden.get_or_insert_with(|| {
                    (Matrix::zeros(params.dim, units), vec![0.0; units])
                });
                for (i, &zi) in z.iter().enumerate() {
                    for (j, &dj) in du.iter().enumerate() {
                        hw.data[i * units + j] += zi * dj;
                    }
                }
                for (bj, &dj) in hb.iter_mut().zip(&du) {
                    *bj += dj;
                }
                let mut dz = vec![0.0; params.dim];
                for (i, di) in dz.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, &dj) in du.iter().enumerate() {
                        acc += h.weights.get(i, j) * dj;
                    }
                    *di = acc;
                }
                dz
            }
        };

        let row = grads.emb_rows.entry(concept).or_insert_with(|| vec![0.0; params.dim]);
        for (ri, di) in row.iter_mut().zip(&dz) {
            *ri += di;
        }
    }
    Ok((total, grads))
}

/// Batch loss without gradients (used by the finite-difference audit).
pub fn loss_only(params: &ModelParams, batch: &[LossItem]) -> Result<f64> {
    let mut total = 0.0;
    for item in batch {
        let logits = params.logits(item.concept(), item.head())?;
        total += item_loss_dlogits(item, &logits)?.0;
    }
    Ok(total)
}

/// Audit the analytic gradient against central finite differences over
/// every trainable coordinate. Returns the maximum relative error, with
/// the denominator guarded at `max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_difference_max_rel_err(
    params: &ModelParams,
    batch: &[LossItem],
    step: f64,
) -> Result<f64> {
    let (_, grads) = grad(params, batch)?;
    let mut max_rel = 0.0f64;

    let mut check = |analytic: f64, params_mut: &mut dyn FnMut(&mut ModelParams, f64)| -> Result<()> {
        let mut plus = params.clone();
        params_mut(&mut plus, step);
        let mut minus = params.clone();
        params_mut(&mut minus, -step);
        let numeric = (loss_only(&plus, batch)? - loss_only(&minus, batch)?) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
        Ok(())
    };

    for (&c, row) in &grads.emb_rows {
        for (i, &g) in row.iter().enumerate() {
            check(g, &mut |p, h| {
                let v = p.embeddings.get(c, i);
                p.embeddings.set(c, i, v + h);
            })?;
        }
    }
    if let Some((hw, hb)) = &grads.hidden {
        for idx in 0..hw.data.len() {
            let g = hw.data[idx];
            check(g, &mut |p, h| {
                p.hidden.as_mut().unwrap().weights.data[idx] += h;
            })?;
        }
        for (j, &g) in hb.iter().enumerate() {
            check(g, &mut |p, h| {
                p.hidden.as_mut().unwrap().bias[j] += h;
            })?;
        }
    }
    for (&id, (gw, gb)) in &grads.heads {
        for idx in 0..gw.data.len() {
            let g = gw.data[idx];
            check(g, &mut |p, h| {
                p.heads.get_mut(&id).unwrap().weights.data[idx] += h;
            })?;
        }
        for (j, &g) in gb.iter().enumerate() {
            check(g, &mut |p, h| {
                p.heads.get_mut(&id).unwrap().bias[j] += h;
            })?;
        }
    }
    Ok(max_rel)
}
