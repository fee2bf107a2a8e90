//! Supervised finetuning and the dataset interventions that steer a
//! model's hedge: relabeling unfamiliar examples with an abstain response,
//! injecting a chosen label distribution over unfamiliar examples, and
//! rebalancing the familiar/unfamiliar mix.
//!
//! Interventions never touch familiar examples. Classification into
//! familiar/unfamiliar happens against precomputed per-example scores so
//! the transforms stay pure.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hedging::{SlotTarget, SupervisionSignal, TargetResponse};
use crate::nnet::{
    train, CeTarget, EpochSampler, Head, HeadId, HeadSpec, LossItem, Matrix, ModelParams,
    TrainConfig, TrainLog,
};
use crate::unfamiliarity::{classify_familiar, Familiarity, Threshold, UnfamiliarityScore};
use crate::world::{answer_letter, Example, Task, ABSTAIN_TOKEN, MC_ANSWERS};

/// How unfamiliar examples are relabeled before finetuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelabelRule {
    None,
    /// Replace the target with the abstain token E (multiple choice).
    AbstainToken,
    /// Replace the target with an all-slots-abstain response (long-form).
    AbstainResponse,
}

impl std::str::FromStr for RelabelRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<RelabelRule> {
        match s {
            "none" => Ok(RelabelRule::None),
            "abstain-token" | "abstain" => Ok(RelabelRule::AbstainToken),
            "abstain-response" => Ok(RelabelRule::AbstainResponse),
            other => Err(Error::Config {
                field: "relabel",
                reason: format!("unknown relabel rule `{other}`"),
            }),
        }
    }
}

/// Full SFT stage configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub train: TrainConfig,
    /// Subsample the majority class to this familiar fraction, if set.
    pub rebalance_familiar_fraction: Option<f64>,
    pub relabel: RelabelRule,
    /// Required whenever relabeling, injection, or rebalancing is on.
    pub threshold: Option<Threshold>,
    /// Resample unfamiliar targets from this distribution, if set.
    pub injected_label_dist: Option<Vec<f64>>,
}

impl SftConfig {
    pub fn plain(train: TrainConfig) -> SftConfig {
        SftConfig {
            train,
            rebalance_familiar_fraction: None,
            relabel: RelabelRule::None,
            threshold: None,
            injected_label_dist: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let needs_threshold = self.relabel != RelabelRule::None
            || self.injected_label_dist.is_some()
            || self.rebalance_familiar_fraction.is_some();
        if needs_threshold && self.threshold.is_none() {
            return Err(Error::Config {
                field: "threshold",
                reason: "relabel/inject/rebalance require an unfamiliarity threshold".into(),
            });
        }
        if let Some(f) = self.rebalance_familiar_fraction {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::Config {
                    field: "rebalance_familiar_fraction",
                    reason: format!("must lie in (0,1), got {f}"),
                });
            }
        }
        if let Some(d) = &self.injected_label_dist {
            validate_dist(d)?;
        }
        Ok(())
    }
}

fn validate_dist(d: &[f64]) -> Result<()> {
    if d.is_empty() || d.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config {
            field: "injected_label_dist",
            reason: "entries must lie in [0,1]".into(),
        });
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config {
            field: "injected_label_dist",
            reason: format!("must sum to 1, got {sum}"),
        });
    }
    Ok(())
}

/// Classify every example against a threshold using its precomputed score.
pub fn classify_dataset(
    dataset: &[Example],
    scores: &[UnfamiliarityScore],
    threshold: Threshold,
) -> Result<Vec<Familiarity>> {
    if dataset.len() != scores.len() {
        return Err(Error::Mismatch(format!(
            "{} examples but {} scores",
            dataset.len(),
            scores.len()
        )));
    }
    scores.iter().map(|&s| classify_familiar(s, threshold)).collect()
}

fn abstain_supervision(example: &Example, replacement: RelabelRule) -> Result<SupervisionSignal> {
    match (example.task, replacement) {
        (Task::Mc, RelabelRule::AbstainToken) => {
            Ok(SupervisionSignal::Target(TargetResponse::Token(ABSTAIN_TOKEN)))
        }
        (Task::LongForm, RelabelRule::AbstainResponse) => {
            let slots = match &example.supervision {
                SupervisionSignal::Target(TargetResponse::Facts(fs)) => fs.len(),
                _ => {
                    return Err(Error::Mismatch(
                        "long-form relabel needs fact-list supervision".into(),
                    ))
                }
            };
            Ok(SupervisionSignal::Target(TargetResponse::Facts(vec![SlotTarget::Abstain; slots])))
        }
        (task, rule) => Err(Error::Mismatch(format!(
            "replacement {rule:?} is incompatible with task {task:?}"
        ))),
    }
}

/// Replace every unfamiliar example's target with an abstain response.
/// Familiar examples pass through untouched. Returns the transformed
/// dataset and the number of relabeled examples.
pub fn relabel_unfamiliar(
    dataset: &[Example],
    scores: &[UnfamiliarityScore],
    threshold: Threshold,
    replacement: RelabelRule,
) -> Result<(Vec<Example>, usize)> {
    if replacement == RelabelRule::None {
        return Err(Error::Config {
            field: "relabel",
            reason: "relabel_unfamiliar requires an abstain replacement rule".into(),
        });
    }
    let classes = classify_dataset(dataset, scores, threshold)?;
    let mut out = Vec::with_capacity(dataset.len());
    let mut relabeled = 0;
    for (example, class) in dataset.iter().zip(classes) {
        match class {
            Familiarity::Familiar => out.push(example.clone()),
            Familiarity::Unfamiliar => {
                let supervision = abstain_supervision(example, replacement)?;
                relabeled += 1;
                out.push(Example { supervision, ..example.clone() });
            }
        }
    }
    Ok((out, relabeled))
}

/// Resample every unfamiliar example's target i.i.d. from `dist` (over
/// answer tokens). Familiar targets are untouched.
pub fn inject_unfamiliar_label_dist(
    dataset: &[Example],
    scores: &[UnfamiliarityScore],
    threshold: Threshold,
    dist: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<Example>> {
    validate_dist(dist)?;
    let classes = classify_dataset(dataset, scores, threshold)?;
    let mut out = Vec::with_capacity(dataset.len());
    for (example, class) in dataset.iter().zip(classes) {
        if example.task != Task::Mc {
            return Err(Error::Mismatch("label injection applies to the MC task".into()));
        }
        match class {
            Familiarity::Familiar => out.push(example.clone()),
            Familiarity::Unfamiliar => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut token = dist.len() - 1;
                for (i, &p) in dist.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        token = i;
                        break;
                    }
                }
                out.push(Example {
                    supervision: SupervisionSignal::Target(TargetResponse::Token(token)),
                    ..example.clone()
                });
            }
        }
    }
    Ok(out)
}

/// Subsample the majority class (without replacement) so the familiar
/// fraction matches `familiar_fraction` within one example. Original
/// dataset order is preserved for the survivors.
pub fn rebalance(
    dataset: &[Example],
    scores: &[UnfamiliarityScore],
    threshold: Threshold,
    familiar_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Example>> {
    if !(0.0 < familiar_fraction && familiar_fraction < 1.0) {
        return Err(Error::Config {
            field: "rebalance_familiar_fraction",
            reason: format!("must lie in (0,1), got {familiar_fraction}"),
        });
    }
    let classes = classify_dataset(dataset, scores, threshold)?;
    let familiar: Vec<usize> = (0..dataset.len())
        .filter(|&i| classes[i] == Familiarity::Familiar)
        .collect();
    let unfamiliar: Vec<usize> = (0..dataset.len())
        .filter(|&i| classes[i] == Familiarity::Unfamiliar)
        .collect();
    if familiar.is_empty() || unfamiliar.is_empty() {
        return Err(Error::Rebalance(format!(
            "need both classes nonempty, got {} familiar / {} unfamiliar",
            familiar.len(),
            unfamiliar.len()
        )));
    }
    let f = familiar_fraction;
    let (nf, nu) = (familiar.len() as f64, unfamiliar.len() as f64);
    let mut keep: Vec<usize> = Vec::new();
    if nf * (1.0 - f) > nu * f {
        // familiar is over target: subsample it
        let target = (nu * f / (1.0 - f)).round() as usize;
        let mut pool = familiar;
        pool.shuffle(rng);
        keep.extend(&pool[..target.min(pool.len())]);
        keep.extend(&unfamiliar);
    } else {
        let target = (nf * (1.0 - f) / f).round() as usize;
        let mut pool = unfamiliar;
        pool.shuffle(rng);
        keep.extend(&pool[..target.min(pool.len())]);
        keep.extend(&familiar);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| dataset[i].clone()).collect())
}

/// Loss items for one example's target supervision.
fn target_items(example: &Example, mc_k: usize) -> Result<Vec<LossItem>> {
    let target = match &example.supervision {
        SupervisionSignal::Target(t) => t,
        SupervisionSignal::Reward(_) => {
            return Err(Error::Mismatch("train_sft requires target-response supervision".into()))
        }
    };
    match target {
        TargetResponse::Token(t) => {
            if *t >= mc_k {
                return Err(Error::Mismatch(format!("target token {t} outside MC head {mc_k}")));
            }
            Ok(vec![LossItem::Ce {
                concept: example.concept_id,
                head: HeadId::Mc,
                target: CeTarget::Hard(*t),
                weight: 1.0,
            }])
        }
        TargetResponse::Soft(d) => Ok(vec![LossItem::Ce {
            concept: example.concept_id,
            head: HeadId::Mc,
            target: CeTarget::Soft(d.clone()),
            weight: 1.0,
        }]),
        TargetResponse::Facts(facts) => Ok(facts
            .iter()
            .enumerate()
            .map(|(slot, st)| LossItem::Ce {
                concept: example.concept_id,
                head: HeadId::SlotClaim(slot as u16),
                target: CeTarget::Hard(match st {
                    SlotTarget::Value(v) => *v as usize,
                    SlotTarget::Abstain => usize::MAX, // patched below with k
                }),
                weight: 1.0,
            })
            .collect()),
    }
}

/// Ensure the heads a dataset needs exist, creating zero-initialized ones
/// and widening the MC head to include E when any target uses it.
pub fn ensure_task_heads(params: &mut ModelParams, dataset: &[Example]) -> Result<()> {
    let rep_dim = params.rep_dim();
    let values_per_slot = params
        .heads
        .iter()
        .find_map(|(id, h)| matches!(id, HeadId::SlotValue(_)).then(|| h.k()))
        .ok_or_else(|| Error::Mismatch("model carries no pretraining slot heads".into()))?;
    let mut needs_abstain_token = false;
    let mut num_slots = 0usize;
    let mut saw_mc = false;
    for e in dataset {
        match (&e.task, &e.supervision) {
            (Task::Mc, SupervisionSignal::Target(TargetResponse::Token(t))) => {
                saw_mc = true;
                needs_abstain_token |= *t >= MC_ANSWERS;
            }
            (Task::Mc, SupervisionSignal::Target(TargetResponse::Soft(d))) => {
                saw_mc = true;
                needs_abstain_token |= d.len() > MC_ANSWERS;
            }
            (Task::LongForm, SupervisionSignal::Target(TargetResponse::Facts(fs))) => {
                num_slots = num_slots.max(fs.len());
            }
            _ => {}
        }
    }
    if saw_mc {
        let k = if needs_abstain_token { MC_ANSWERS + 1 } else { MC_ANSWERS };
        match params.heads.get(&HeadId::Mc) {
            None => {
                params
                    .heads
                    .insert(HeadId::Mc, Head { weights: Matrix::zeros(rep_dim, k), bias: vec![0.0; k] });
            }
            Some(h) if h.k() < k => params.widen_head(HeadId::Mc, k)?,
            Some(_) => {}
        }
    }
    for slot in 0..num_slots {
        let id = HeadId::SlotClaim(slot as u16);
        if !params.heads.contains_key(&id) {
            let k = values_per_slot + 1; // abstain is the last index
            params.heads.insert(id, Head { weights: Matrix::zeros(rep_dim, k), bias: vec![0.0; k] });
        }
    }
    Ok(())
}

/// Index of the abstain action in a slot-claim head with `k` outputs.
pub fn slot_abstain_index(k: usize) -> usize {
    k - 1
}

/// Supervised finetuning: cross-entropy on the dataset targets, starting
/// from `init`. Creates any missing task heads (zero-initialized) and
/// widens the MC head to include E when the dataset uses it.
pub fn train_sft(
    init: &ModelParams,
    dataset: &[Example],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Empty("finetuning dataset is empty".into()));
    }
    let mut params = init.clone();
    ensure_task_heads(&mut params, dataset)?;
    let mc_k = params.heads.get(&HeadId::Mc).map(|h| h.k()).unwrap_or(MC_ANSWERS);
    let claim_k = params
        .heads
        .iter()
        .find_map(|(id, h)| matches!(id, HeadId::SlotClaim(_)).then(|| h.k()));

    // pre-expand items so the training closure stays cheap
    let mut per_example: Vec<Vec<LossItem>> = Vec::with_capacity(dataset.len());
    for e in dataset {
        let mut items = target_items(e, mc_k)?;
        for item in &mut items {
            if let LossItem::Ce { head: HeadId::SlotClaim(_), target: CeTarget::Hard(t), .. } = item
            {
                if *t == usize::MAX {
                    let k = claim_k.ok_or_else(|| {
                        Error::Mismatch("abstain fact target without slot-claim heads".into())
                    })?;
                    *t = slot_abstain_index(k);
                }
            }
        }
        per_example.push(items);
    }

    let mut sampler = EpochSampler::new(dataset.len());
    let log = train(&mut params, config, |_, rng| {
        sampler
            .next_batch(config.batch_size, rng)
            .into_iter()
            .flat_map(|i| per_example[i].iter().cloned())
            .collect()
    })?;
    Ok((params, log))
}

/// Persist a (possibly transformed) dataset as CSV:
/// concept_id, target, familiar_flag.
pub fn export_dataset_csv(
    path: &Path,
    dataset: &[Example],
    classes: &[Familiarity],
) -> Result<()> {
    if dataset.len() != classes.len() {
        return Err(Error::Mismatch("dataset and class lengths differ".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["concept_id", "target", "familiar_flag"])?;
    for (e, class) in dataset.iter().zip(classes) {
        let target = match &e.supervision {
            SupervisionSignal::Target(TargetResponse::Token(t)) => answer_letter(*t).to_string(),
            SupervisionSignal::Target(TargetResponse::Soft(d)) => format!(
                "soft:{}",
                d.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join("|")
            ),
            SupervisionSignal::Target(TargetResponse::Facts(fs)) => fs
                .iter()
                .map(|f| match f {
                    SlotTarget::Value(v) => v.to_string(),
                    SlotTarget::Abstain => "abstain".to_string(),
                })
                .collect::<Vec<_>>()
                .join(";"),
            SupervisionSignal::Reward(h) => format!("reward:{}", h.0),
        };
        let flag = match class {
            Familiarity::Familiar => "1",
            Familiarity::Unfamiliar => "0",
        };
        wtr.write_record([e.concept_id.to_string(), target, flag.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{forward, init_params, OptAlgo};
    use crate::rng::rng_from_seed;
    use crate::unfamiliarity::Metric;

    fn mc_example(concept_id: usize, token: usize) -> Example {
        Example {
            concept_id,
            task: Task::Mc,
            supervision: SupervisionSignal::Target(TargetResponse::Token(token)),
        }
    }

    fn scores(values: &[f64]) -> Vec<UnfamiliarityScore> {
        values
            .iter()
            .map(|&value| UnfamiliarityScore { value, metric: Metric::SftNll })
            .collect()
    }

    fn sft_threshold(value: f64) -> Threshold {
        Threshold { value, metric: Metric::SftNll }
    }

    #[test]
    fn relabel_flips_unfamiliar_to_abstain() {
        // score 0.05 against threshold 0.045 → unfamiliar → E
        let data = vec![mc_example(0, 1), mc_example(1, 2)];
        let s = scores(&[0.01, 0.05]);
        let (out, n) =
            relabel_unfamiliar(&data, &s, sft_threshold(0.045), RelabelRule::AbstainToken).unwrap();
        assert_eq!(n, 1);
        assert_eq!(out[0], data[0]);
        assert_eq!(
            out[1].supervision,
            SupervisionSignal::Target(TargetResponse::Token(ABSTAIN_TOKEN))
        );
    }

    #[test]
    fn relabel_all_familiar_is_identity() {
        let data = vec![mc_example(0, 1), mc_example(1, 2)];
        let s = scores(&[0.01, 0.02]);
        let (out, n) =
            relabel_unfamiliar(&data, &s, sft_threshold(0.045), RelabelRule::AbstainToken).unwrap();
        assert_eq!(n, 0);
        assert_eq!(out, data);
    }

    #[test]
    fn relabel_is_idempotent() {
        let data = vec![mc_example(0, 1), mc_example(1, 2), mc_example(2, 3)];
        let s = scores(&[0.01, 0.9, 1.2]);
        let t = sft_threshold(0.2);
        let (once, n1) = relabel_unfamiliar(&data, &s, t, RelabelRule::AbstainToken).unwrap();
        let (twice, n2) = relabel_unfamiliar(&once, &s, t, RelabelRule::AbstainToken).unwrap();
        assert_eq!(once, twice);
        assert_eq!(n1, 2);
        assert_eq!(n2, 2);
    }

    #[test]
    fn relabel_rejects_incompatible_replacement() {
        let data = vec![mc_example(0, 1)];
        let s = scores(&[0.9]);
        let err = relabel_unfamiliar(&data, &s, sft_threshold(0.2), RelabelRule::AbstainResponse)
            .unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)));
    }

    #[test]
    fn relabel_longform_abstains_every_slot() {
        let data = vec![Example {
            concept_id: 0,
            task: Task::LongForm,
            supervision: SupervisionSignal::Target(TargetResponse::Facts(vec![
                SlotTarget::Value(3),
                SlotTarget::Value(1),
            ])),
        }];
        let s = scores(&[0.9]);
        let (out, n) =
            relabel_unfamiliar(&data, &s, sft_threshold(0.2), RelabelRule::AbstainResponse)
                .unwrap();
        assert_eq!(n, 1);
        assert_eq!(
            out[0].supervision,
            SupervisionSignal::Target(TargetResponse::Facts(vec![SlotTarget::Abstain; 2]))
        );
    }

    #[test]
    fn inject_point_mass_sets_every_unfamiliar_target() {
        let data: Vec<Example> = (0..50).map(|i| mc_example(i, i % 4)).collect();
        let s = scores(&vec![0.9; 50]);
        let mut rng = rng_from_seed(1);
        let out = inject_unfamiliar_label_dist(
            &data,
            &s,
            sft_threshold(0.2),
            &[1.0, 0.0, 0.0, 0.0],
            &mut rng,
        )
        .unwrap();
        for e in &out {
            assert_eq!(e.supervision, SupervisionSignal::Target(TargetResponse::Token(0)));
        }
    }

    #[test]
    fn inject_half_b_half_c_matches_binomial() {
        let data: Vec<Example> = (0..1000).map(|i| mc_example(i, 0)).collect();
        let s = scores(&vec![0.9; 1000]);
        let mut rng = rng_from_seed(2);
        let out = inject_unfamiliar_label_dist(
            &data,
            &s,
            sft_threshold(0.2),
            &[0.0, 0.5, 0.5, 0.0],
            &mut rng,
        )
        .unwrap();
        let b_count = out
            .iter()
            .filter(|e| e.supervision == SupervisionSignal::Target(TargetResponse::Token(1)))
            .count() as f64;
        // binomial: 500 ± 4σ, σ ≈ 15.8
        assert!((b_count - 500.0).abs() < 4.0 * 15.812, "B count {b_count}");
        assert!(out.iter().all(|e| matches!(
            &e.supervision,
            SupervisionSignal::Target(TargetResponse::Token(t)) if *t == 1 || *t == 2
        )));
    }

    #[test]
    fn inject_uniform_marginal_near_quarter_each() {
        let data: Vec<Example> = (0..2000).map(|i| mc_example(i, 0)).collect();
        let s = scores(&vec![0.9; 2000]);
        let mut rng = rng_from_seed(3);
        let out =
            inject_unfamiliar_label_dist(&data, &s, sft_threshold(0.2), &[0.25; 4], &mut rng)
                .unwrap();
        for token in 0..4 {
            let n = out
                .iter()
                .filter(|e| {
                    e.supervision == SupervisionSignal::Target(TargetResponse::Token(token))
                })
                .count() as f64;
            let sigma = (2000.0 * 0.25 * 0.75).sqrt();
            assert!((n - 500.0).abs() < 4.0 * sigma, "token {token}: {n}");
        }
    }

    #[test]
    fn interventions_never_touch_familiar_examples() {
        let data: Vec<Example> = (0..100).map(|i| mc_example(i, i % 4)).collect();
        let values: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.01 } else { 0.9 }).collect();
        let s = scores(&values);
        let t = sft_threshold(0.2);
        let mut rng = rng_from_seed(4);
        let (relabeled, _) = relabel_unfamiliar(&data, &s, t, RelabelRule::AbstainToken).unwrap();
        let injected =
            inject_unfamiliar_label_dist(&data, &s, t, &[0.0, 0.5, 0.5, 0.0], &mut rng).unwrap();
        for i in (0..100).step_by(2) {
            assert_eq!(relabeled[i], data[i]);
            assert_eq!(injected[i], data[i]);
        }
    }

    #[test]
    fn rebalance_fifty_fifty_subsamples_majority() {
        let data: Vec<Example> = (0..1000).map(|i| mc_example(i, 0)).collect();
        let values: Vec<f64> = (0..1000).map(|i| if i < 800 { 0.01 } else { 0.9 }).collect();
        let s = scores(&values);
        let mut rng = rng_from_seed(5);
        let out = rebalance(&data, &s, sft_threshold(0.2), 0.5, &mut rng).unwrap();
        assert_eq!(out.len(), 400);
        let familiar = out.iter().filter(|e| e.concept_id < 800).count();
        assert_eq!(familiar, 200);
    }

    #[test]
    fn rebalance_balanced_input_is_unchanged() {
        let data: Vec<Example> = (0..10).map(|i| mc_example(i, 0)).collect();
        let values: Vec<f64> = (0..10).map(|i| if i < 5 { 0.01 } else { 0.9 }).collect();
        let s = scores(&values);
        let mut rng = rng_from_seed(6);
        let out = rebalance(&data, &s, sft_threshold(0.2), 0.5, &mut rng).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn rebalance_extreme_majority() {
        let data: Vec<Example> = (0..1000).map(|i| mc_example(i, 0)).collect();
        let values: Vec<f64> = (0..1000).map(|i| if i < 999 { 0.01 } else { 0.9 }).collect();
        let s = scores(&values);
        let mut rng = rng_from_seed(7);
        let out = rebalance(&data, &s, sft_threshold(0.2), 0.5, &mut rng).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn rebalance_empty_class_errors() {
        let data: Vec<Example> = (0..10).map(|i| mc_example(i, 0)).collect();
        let s = scores(&vec![0.01; 10]);
        let mut rng = rng_from_seed(8);
        let err = rebalance(&data, &s, sft_threshold(0.2), 0.5, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Rebalance(_)));
    }

    fn pretrained_stub(num_concepts: usize) -> ModelParams {
        let mut rng = rng_from_seed(10);
        init_params(
            num_concepts,
            8,
            &[HeadSpec { id: HeadId::SlotValue(0), k: 8 }],
            None,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn train_sft_fits_a_single_example() {
        let init = pretrained_stub(1);
        let data = vec![mc_example(0, 2)];
        let config = TrainConfig {
            learning_rate: 0.05,
            steps: 400,
            batch_size: 1,
            optimizer: OptAlgo::Adam,
            weight_decay: 0.0,
            embedding_lr_scale: 0.1,
            seed: 1,
        };
        let (model, log) = train_sft(&init, &data, &config).unwrap();
        assert_eq!(log.losses.len(), 400);
        let p = forward(&model, 0, HeadId::Mc).unwrap();
        let mut onehot = vec![0.0; 4];
        onehot[2] = 1.0;
        let tv: f64 = 0.5 * p.probs.iter().zip(&onehot).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 0.05, "tv {tv}");
    }

    #[test]
    fn train_sft_widens_head_for_abstain_targets() {
        let init = pretrained_stub(2);
        let data = vec![mc_example(0, 1), mc_example(1, ABSTAIN_TOKEN)];
        let config = TrainConfig {
            learning_rate: 0.05,
            steps: 10,
            batch_size: 2,
            optimizer: OptAlgo::Adam,
            weight_decay: 0.0,
            embedding_lr_scale: 0.1,
            seed: 2,
        };
        let (model, _) = train_sft(&init, &data, &config).unwrap();
        assert_eq!(model.heads[&HeadId::Mc].k(), 5);
    }

    #[test]
    fn train_sft_longform_builds_claim_heads() {
        let init = pretrained_stub(2);
        let data = vec![Example {
            concept_id: 0,
            task: Task::LongForm,
            supervision: SupervisionSignal::Target(TargetResponse::Facts(vec![
                SlotTarget::Value(1),
                SlotTarget::Abstain,
            ])),
        }];
        let config = TrainConfig {
            learning_rate: 0.05,
            steps: 5,
            batch_size: 1,
            optimizer: OptAlgo::Adam,
            weight_decay: 0.0,
            embedding_lr_scale: 0.1,
            seed: 3,
        };
        let (model, _) = train_sft(&init, &data, &config).unwrap();
        // claim heads carry values + abstain
        assert_eq!(model.heads[&HeadId::SlotClaim(0)].k(), 9);
        assert_eq!(model.heads[&HeadId::SlotClaim(1)].k(), 9);
    }

    #[test]
    fn sft_config_requires_threshold_for_interventions() {
        let train = TrainConfig {
            learning_rate: 0.05,
            steps: 1,
            batch_size: 1,
            optimizer: OptAlgo::Adam,
            weight_decay: 0.0,
            embedding_lr_scale: 0.1,
            seed: 0,
        };
        let mut config = SftConfig::plain(train);
        config.relabel = RelabelRule::AbstainToken;
        assert!(matches!(
            config.validate().unwrap_err(),
            Error::Config { field: "threshold", .. }
        ));
    }
}
