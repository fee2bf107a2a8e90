//! Reward models for long-form factuality: data generation (conservative
//! and standard), two-stage training (per-claim correctness, then a fixed
//! linear aggregation), prediction, and overestimation calibration.
//!
//! A conservative reward model is trained on responses sampled from an
//! SFT finetune of its own base model, so unfamiliar training examples
//! carry low reward labels and the model's hedge underestimates. A
//! standard reward model is trained on responses whose quality is
//! independent of familiarity, so its hedge inflates unfamiliar rewards.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{
    sigmoid, train, EpochSampler, Head, HeadId, LossItem, Matrix, ModelParams, TrainConfig,
    TrainLog,
};
use crate::rl::{sample_response, score_response, Response, RewardOracle, RewardSpec, SlotClaim};
use crate::sft::train_sft;
use crate::stats::mean;
use crate::unfamiliarity::{mention_score, quantile_buckets, Buckets};
use crate::world::{CorpusIndex, Example, Task, World};

/// One labeled response for reward-model training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmExample {
    pub concept_id: usize,
    pub response: Vec<SlotClaim>,
    /// Per-slot correctness; `None` for abstained slots.
    pub labels: Vec<Option<bool>>,
    /// Ground-truth reward of the response under the per-fact spec.
    pub total_reward: f64,
}

impl RmExample {
    /// Build from a response and the world truth, enforcing the label/
    /// reward consistency invariant.
    pub fn labeled(
        concept_id: usize,
        response: Vec<SlotClaim>,
        world: &World,
        spec: &RewardSpec,
    ) -> Result<RmExample> {
        let concept = world.concept(concept_id)?;
        if response.len() != concept.truth.len() {
            return Err(Error::Mismatch(format!(
                "response has {} slots, world has {}",
                response.len(),
                concept.truth.len()
            )));
        }
        let labels: Vec<Option<bool>> = response
            .iter()
            .zip(&concept.truth)
            .map(|(claim, &truth)| match claim {
                SlotClaim::Abstain => None,
                SlotClaim::Value(v) => Some(*v == truth),
            })
            .collect();
        let total_reward =
            score_response(spec, concept_id, &Response::LongForm(response.clone()), &RewardOracle::World(world))?;
        Ok(RmExample { concept_id, response, labels, total_reward })
    }

    pub fn true_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Some(true)).count()
    }

    pub fn false_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Some(false)).count()
    }
}

/// A trained reward model: per-claim correctness heads over the shared
/// base, plus the fixed linear aggregation constants.
#[derive(Clone, Debug, PartialEq)]
pub struct RmParams {
    pub model: ModelParams,
    pub r_true: f64,
    pub r_false: f64,
}

impl RmParams {
    /// Probability that claiming `value` for `slot` is correct.
    pub fn claim_prob(&self, concept_id: usize, slot: u16, value: u16) -> Result<f64> {
        let logits = self.model.logits(concept_id, HeadId::RmClaim(slot))?;
        let v = value as usize;
        if v >= logits.len() {
            return Err(Error::Mismatch(format!("claim value {value} out of range")));
        }
        Ok(sigmoid(logits[v]))
    }

    /// Per-claim predicted contribution: `r_true·p̂ + r_false·(1−p̂)`.
    /// Positive exactly when p̂ clears the break-even point
    /// `−r_false/(r_true − r_false)` (0.6 for +2/−3).
    pub fn claim_contribution(&self, concept_id: usize, slot: u16, value: u16) -> Result<f64> {
        let p = self.claim_prob(concept_id, slot, value)?;
        Ok(self.r_true * p + self.r_false * (1.0 - p))
    }
}

/// Predicted reward of a response: sum of per-claim contributions;
/// abstained slots contribute exactly zero.
pub fn predict_reward(rm: &RmParams, concept_id: usize, response: &Response) -> Result<f64> {
    let claims = match response {
        Response::LongForm(claims) => claims,
        Response::Mc(_) => {
            return Err(Error::Mismatch("reward models score long-form responses".into()))
        }
    };
    let mut total = 0.0;
    for (slot, claim) in claims.iter().enumerate() {
        if let SlotClaim::Value(v) = claim {
            total += rm.claim_contribution(concept_id, slot as u16, *v)?;
        }
    }
    Ok(total)
}

/// Sample `n` responses from a policy over the prompt cycle and label them
/// with the ground-truth reward.
pub fn sample_labeled_responses(
    policy: &ModelParams,
    prompts: &[Example],
    world: &World,
    spec: &RewardSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RmExample>> {
    if prompts.is_empty() && n > 0 {
        return Err(Error::Empty("no prompts to sample from".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prompt = &prompts[i % prompts.len()];
        let response = match sample_response(policy, prompt.concept_id, Task::LongForm, rng)? {
            Response::LongForm(claims) => claims,
            Response::Mc(_) => unreachable!("long-form sampling"),
        };
        out.push(RmExample::labeled(prompt.concept_id, response, world, spec)?);
    }
    Ok(out)
}

/// Conservative reward-model data: finetune the shared base model with
/// standard SFT, sample responses from the finetuned policy, and label
/// them with ground-truth rewards. Returns the data and the SFT policy so
/// callers can reuse it for evaluation and RL initialization.
pub fn gen_conservative_data(
    pretrained: &ModelParams,
    finetune: &[Example],
    sft_train: &TrainConfig,
    prompts: &[Example],
    world: &World,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RmExample>, ModelParams)> {
    let (policy, _) = train_sft(pretrained, finetune, sft_train)?;
    let data = sample_labeled_responses(&policy, prompts, world, &RewardSpec::fact_default(), n, rng)?;
    Ok((data, policy))
}

/// Standard reward-model data: an independent generator whose claims are
/// correct with probability `q` regardless of concept familiarity, over
/// the same prompt set.
pub fn gen_standard_data(
    independent_accuracy: f64,
    prompts: &[Example],
    world: &World,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<RmExample>> {
    if !(0.0 < independent_accuracy && independent_accuracy < 1.0) {
        return Err(Error::Config {
            field: "independent_accuracy",
            reason: format!("must lie in (0,1), got {independent_accuracy}"),
        });
    }
    if prompts.is_empty() && n > 0 {
        return Err(Error::Empty("no prompts to sample from".into()));
    }
    let values = world.spec.values_per_slot as u16;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prompt = &prompts[i % prompts.len()];
        let concept = world.concept(prompt.concept_id)?;
        let claims: Vec<SlotClaim> = concept
            .truth
            .iter()
            .map(|&truth| {
                if rng.gen::<f64>() < independent_accuracy {
                    SlotClaim::Value(truth)
                } else {
                    let w = rng.gen_range(0..values - 1);
                    SlotClaim::Value(if w >= truth { w + 1 } else { w })
                }
            })
            .collect();
        out.push(RmExample::labeled(prompt.concept_id, claims, world, &RewardSpec::fact_default())?);
    }
    Ok(out)
}

/// Train the per-claim correctness heads on labeled data, starting from
/// the shared pretrained base.
pub fn train_rm(
    pretrained: &ModelParams,
    data: &[RmExample],
    config: &TrainConfig,
) -> Result<(RmParams, TrainLog)> {
    if data.is_empty() {
        return Err(Error::Empty("reward-model data is empty".into()));
    }
    let mut model = pretrained.clone();
    let rep_dim = model.rep_dim();
    let values_per_slot = model
        .heads
        .iter()
        .find_map(|(id, h)| matches!(id, HeadId::SlotValue(_)).then(|| h.k()))
        .ok_or_else(|| Error::Mismatch("reward model base carries no pretraining heads".into()))?;
    let num_slots = data.iter().map(|e| e.response.len()).max().unwrap_or(0);
    for slot in 0..num_slots {
        let id = HeadId::RmClaim(slot as u16);
        if !model.heads.contains_key(&id) {
            model.heads.insert(
                id,
                Head {
                    weights: Matrix::zeros(rep_dim, values_per_slot),
                    bias: vec![0.0; values_per_slot],
                },
            );
        }
    }

    let per_example: Vec<Vec<LossItem>> = data
        .iter()
        .map(|e| {
            e.response
                .iter()
                .zip(&e.labels)
                .enumerate()
                .filter_map(|(slot, (claim, label))| match (claim, label) {
                    (SlotClaim::Value(v), Some(correct)) => Some(LossItem::BinCe {
                        concept: e.concept_id,
                        head: HeadId::RmClaim(slot as u16),
                        unit: *v as usize,
                        label: if *correct { 1.0 } else { 0.0 },
                        weight: 1.0,
                    }),
                    _ => None,
                })
                .collect()
        })
        .collect();

    let mut sampler = EpochSampler::new(data.len());
    let log = train(&mut model, config, |_, rng| {
        let mut items = Vec::with_capacity(config.batch_size * num_slots);
        // skip all-abstain examples, which carry no claims to learn from
        let mut picked = 0;
        let mut guard = 0;
        while picked < config.batch_size && guard < config.batch_size * 64 {
            let i = sampler.next_index(rng);
            guard += 1;
            if per_example[i].is_empty() {
                continue;
            }
            items.extend(per_example[i].iter().cloned());
            picked += 1;
        }
        items
    })?;
    Ok((RmParams { model, r_true: 2.0, r_false: -3.0 }, log))
}

/// One unfamiliarity bucket of the calibration report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBucket {
    pub bucket: usize,
    pub count: usize,
    pub mean_predicted: f64,
    pub mean_true: f64,
    /// predicted − true; positive means overestimation.
    pub gap: f64,
}

/// Per-bucket predicted vs ground-truth rewards for held-out samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub buckets: Vec<CalibrationBucket>,
    pub empty_buckets: Vec<usize>,
    /// Per-example rows: (concept, bucket, predicted, true).
    pub samples: Vec<(usize, usize, f64, f64)>,
}

impl CalibrationReport {
    pub fn max_gap(&self) -> f64 {
        self.buckets.iter().map(|b| b.gap).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gap_of_most_unfamiliar(&self) -> f64 {
        self.buckets.last().map(|b| b.gap).unwrap_or(f64::NAN)
    }
}

/// Evaluate a reward model on fresh samples from `eval_policy` over the
/// prompt set, bucketed by corpus mention counts.
pub fn calibration_report(
    rm: &RmParams,
    eval_policy: &ModelParams,
    prompts: &[Example],
    world: &World,
    index: &CorpusIndex,
    n_buckets: usize,
    samples_per_prompt: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CalibrationReport> {
    if samples_per_prompt == 0 {
        return Err(Error::Config { field: "samples_per_prompt", reason: "must be ≥ 1".into() });
    }
    let scores: Vec<f64> = prompts
        .iter()
        .map(|p| mention_score(index, p.concept_id).map(|s| s.value))
        .collect::<Result<_>>()?;
    let buckets: Buckets = quantile_buckets(&scores, n_buckets)?;

    let mut samples = Vec::with_capacity(prompts.len() * samples_per_prompt);
    for (prompt, &bucket) in prompts.iter().zip(&buckets.assignment) {
        for _ in 0..samples_per_prompt {
            let response = sample_response(eval_policy, prompt.concept_id, Task::LongForm, rng)?;
            let predicted = predict_reward(rm, prompt.concept_id, &response)?;
            let truth = score_response(
                &RewardSpec::fact_default(),
                prompt.concept_id,
                &response,
                &RewardOracle::World(world),
            )?;
            samples.push((prompt.concept_id, bucket, predicted, truth));
        }
    }

    let mut rows = Vec::with_capacity(n_buckets);
    for b in 0..n_buckets {
        let pred: Vec<f64> =
            samples.iter().filter(|s| s.1 == b).map(|s| s.2).collect();
        let truth: Vec<f64> =
            samples.iter().filter(|s| s.1 == b).map(|s| s.3).collect();
        if pred.is_empty() {
            continue;
        }
        let mean_predicted = mean(&pred);
        let mean_true = mean(&truth);
        rows.push(CalibrationBucket {
            bucket: b,
            count: pred.len(),
            mean_predicted,
            mean_true,
            gap: mean_predicted - mean_true,
        });
    }
    Ok(CalibrationReport { buckets: rows, empty_buckets: buckets.empty_buckets(), samples })
}

/// Bucket-level and per-example reward trends of a reward-model dataset,
/// against corpus mention counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmDataSummary {
    pub name: String,
    pub bucket_counts: Vec<usize>,
    pub bucket_mean_rewards: Vec<f64>,
    /// Spearman of bucket index vs bucket mean reward (nonempty buckets).
    pub bucket_spearman: f64,
    /// Spearman of per-example unfamiliarity vs reward label.
    pub per_example_spearman: f64,
}

/// Summarize how a dataset's reward labels trend with unfamiliarity.
pub fn summarize_rm_data(
    name: &str,
    data: &[RmExample],
    index: &CorpusIndex,
    n_buckets: usize,
) -> Result<RmDataSummary> {
    if data.is_empty() {
        return Err(Error::Empty("cannot summarize an empty dataset".into()));
    }
    let scores: Vec<f64> = data
        .iter()
        .map(|e| mention_score(index, e.concept_id).map(|s| s.value))
        .collect::<Result<_>>()?;
    let rewards: Vec<f64> = data.iter().map(|e| e.total_reward).collect();
    let buckets = quantile_buckets(&scores, n_buckets)?;
    let mut bucket_counts = vec![0usize; n_buckets];
    let mut bucket_sums = vec![0.0; n_buckets];
    for (e, &b) in data.iter().zip(&buckets.assignment) {
        bucket_counts[b] += 1;
        bucket_sums[b] += e.total_reward;
    }
    let mut idx = Vec::new();
    let mut means = Vec::new();
    for b in 0..n_buckets {
        if bucket_counts[b] > 0 {
            idx.push(b as f64);
            means.push(bucket_sums[b] / bucket_counts[b] as f64);
        }
    }
    Ok(RmDataSummary {
        name: name.to_string(),
        bucket_counts,
        bucket_mean_rewards: means.clone(),
        bucket_spearman: crate::stats::spearman(&idx, &means),
        per_example_spearman: crate::stats::spearman(&scores, &rewards),
    })
}

/// Persist reward-model data as CSV:
/// concept_id, slot, claimed_value, correct_flag, total_reward.
pub fn export_rm_data_csv(path: &Path, data: &[RmExample]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["concept_id", "slot", "claimed_value", "correct_flag", "total_reward"])?;
    for e in data {
        for (slot, (claim, label)) in e.response.iter().zip(&e.labels).enumerate() {
            let (value, flag) = match (claim, label) {
                (SlotClaim::Value(v), Some(correct)) => {
                    (v.to_string(), if *correct { "1" } else { "0" }.to_string())
                }
                _ => ("abstain".to_string(), "".to_string()),
            };
            wtr.write_record([
                e.concept_id.to_string(),
                slot.to_string(),
                value,
                flag,
                format!("{}", e.total_reward),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read reward-model data back from CSV.
pub fn import_rm_data_csv(path: &Path, world: &World) -> Result<Vec<RmExample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut grouped: Vec<(usize, Vec<SlotClaim>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let concept_id: usize = record[0].parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            reason: format!("bad concept_id `{}`", &record[0]),
        })?;
        let slot: usize = record[1].parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            reason: format!("bad slot `{}`", &record[1]),
        })?;
        let claim = if &record[2] == "abstain" {
            SlotClaim::Abstain
        } else {
            SlotClaim::Value(record[2].parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                reason: format!("bad claimed_value `{}`", &record[2]),
            })?)
        };
        if slot == 0 {
            grouped.push((concept_id, Vec::new()));
        }
        let current = grouped.last_mut().ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "rows must start at slot 0".into(),
        })?;
        if current.1.len() != slot {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("slot {slot} out of order"),
            });
        }
        current.1.push(claim);
    }
    grouped
        .into_iter()
        .map(|(concept_id, response)| {
            RmExample::labeled(concept_id, response, world, &RewardSpec::fact_default())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hedging::{SupervisionSignal, TargetResponse};
    use crate::nnet::{init_params, HeadSpec, OptAlgo};
    use crate::rng::rng_from_seed;
    use crate::world::{build_world, WorldSpec};

    fn tiny_world(seed: u64) -> World {
        build_world(&WorldSpec {
            num_concepts: 20,
            corpus_size: 100,
            seed,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    fn longform_prompts(world: &World) -> Vec<Example> {
        world
            .concepts
            .iter()
            .map(|c| Example {
                concept_id: c.id,
                task: Task::LongForm,
                supervision: SupervisionSignal::Target(TargetResponse::Facts(
                    c.truth.iter().map(|&v| crate::hedging::SlotTarget::Value(v)).collect(),
                )),
            })
            .collect()
    }

    /// Reward model whose claim heads put chosen probabilities on value 0.
    fn rm_with_probs(world: &World, probs: &[f64]) -> RmParams {
        let mut rng = rng_from_seed(1);
        let heads: Vec<HeadSpec> = (0..world.spec.num_slots)
            .map(|s| HeadSpec { id: HeadId::RmClaim(s as u16), k: world.spec.values_per_slot })
            .collect();
        let mut model = init_params(world.num_concepts(), 8, &heads, None, &mut rng).unwrap();
        for v in &mut model.embeddings.data {
            *v = 0.0;
        }
        for (s, &p) in probs.iter().enumerate() {
            let logit = if p <= 0.0 {
                -700.0
            } else if p >= 1.0 {
                700.0
            } else {
                (p / (1.0 - p)).ln()
            };
            let head = model.heads.get_mut(&HeadId::RmClaim(s as u16)).unwrap();
            for b in &mut head.bias {
                *b = logit;
            }
        }
        RmParams { model, r_true: 2.0, r_false: -3.0 }
    }

    #[test]
    fn all_abstain_predicts_zero() {
        let world = tiny_world(1);
        let rm = rm_with_probs(&world, &[0.9; 5]);
        let response = Response::LongForm(vec![SlotClaim::Abstain; 5]);
        assert_eq!(predict_reward(&rm, 0, &response).unwrap(), 0.0);
    }

    #[test]
    fn certain_claims_predict_two_per_claim() {
        let world = tiny_world(2);
        let rm = rm_with_probs(&world, &[1.0; 5]);
        for k in 1..=5usize {
            let claims: Vec<SlotClaim> = (0..5)
                .map(|s| if s < k { SlotClaim::Value(0) } else { SlotClaim::Abstain })
                .collect();
            let r = predict_reward(&rm, 0, &Response::LongForm(claims)).unwrap();
            assert!((r - 2.0 * k as f64).abs() < 1e-9, "k={k}: {r}");
        }
    }

    #[test]
    fn half_confident_claim_predicts_minus_half() {
        let world = tiny_world(3);
        let rm = rm_with_probs(&world, &[0.5; 5]);
        let mut claims = vec![SlotClaim::Abstain; 5];
        claims[2] = SlotClaim::Value(1);
        let r = predict_reward(&rm, 0, &Response::LongForm(claims)).unwrap();
        // 2·0.5 − 3·0.5 = −0.5
        assert!((r + 0.5).abs() < 1e-12, "{r}");
    }

    #[test]
    fn predicted_reward_decomposes_exactly() {
        let world = tiny_world(4);
        let rm = rm_with_probs(&world, &[0.2, 0.5, 0.7, 0.9, 0.35]);
        let claims = vec![
            SlotClaim::Value(0),
            SlotClaim::Abstain,
            SlotClaim::Value(3),
            SlotClaim::Value(5),
            SlotClaim::Abstain,
        ];
        let total = predict_reward(&rm, 0, &Response::LongForm(claims.clone())).unwrap();
        let mut sum = 0.0;
        for (slot, claim) in claims.iter().enumerate() {
            let mut single = vec![SlotClaim::Abstain; 5];
            single[slot] = *claim;
            sum += predict_reward(&rm, 0, &Response::LongForm(single)).unwrap();
        }
        assert_eq!(total, sum);
    }

    #[test]
    fn break_even_at_point_six() {
        let world = tiny_world(5);
        for i in 0..=10 {
            let p = i as f64 / 10.0;
            let rm = rm_with_probs(&world, &[p; 5]);
            let contribution = rm.claim_contribution(0, 0, 0).unwrap();
            let positive = contribution > 1e-9;
            assert_eq!(positive, p > 0.6, "p̂={p}: contribution {contribution}");
        }
    }

    #[test]
    fn labeled_invariant_reward_matches_labels() {
        let world = tiny_world(6);
        let truth = world.concepts[2].truth.clone();
        let claims: Vec<SlotClaim> = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| match i {
                0 | 1 => SlotClaim::Value(t),
                2 => SlotClaim::Value((t + 1) % 8),
                _ => SlotClaim::Abstain,
            })
            .collect();
        let e = RmExample::labeled(2, claims, &world, &RewardSpec::fact_default()).unwrap();
        assert_eq!(e.true_count(), 2);
        assert_eq!(e.false_count(), 1);
        assert_eq!(e.total_reward, 2.0 * 2.0 - 3.0);
    }

    #[test]
    fn standard_data_q_one_gives_max_reward() {
        let world = tiny_world(7);
        let prompts = longform_prompts(&world);
        let mut rng = rng_from_seed(2);
        let data = gen_standard_data(1.0 - 1e-12, &prompts, &world, 50, &mut rng).unwrap();
        for e in &data {
            assert_eq!(e.total_reward, 2.0 * world.spec.num_slots as f64);
        }
    }

    #[test]
    fn standard_data_mean_reward_matches_arithmetic() {
        // q=0.8, 5 slots: E[reward] = 5·(0.8·2 + 0.2·(−3)) = 5
        let world = tiny_world(8);
        let prompts = longform_prompts(&world);
        let mut rng = rng_from_seed(3);
        let n = 4000;
        let data = gen_standard_data(0.8, &prompts, &world, n, &mut rng).unwrap();
        let m = mean(&data.iter().map(|e| e.total_reward).collect::<Vec<_>>());
        // per-example sd = √(5·Var(claim)) = √20; 4σ tolerance on the mean
        let tol = 4.0 * (20.0_f64).sqrt() / (n as f64).sqrt();
        assert!((m - 5.0).abs() < tol, "mean {m}");
    }

    #[test]
    fn empty_data_request_gives_empty_dataset() {
        let world = tiny_world(9);
        let prompts = longform_prompts(&world);
        let mut rng = rng_from_seed(4);
        let data = gen_standard_data(0.8, &prompts, &world, 0, &mut rng).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn train_rm_fits_a_single_example() {
        let world = tiny_world(10);
        let mut rng = rng_from_seed(5);
        let base = init_params(
            world.num_concepts(),
            8,
            &[HeadSpec { id: HeadId::SlotValue(0), k: 8 }],
            None,
            &mut rng,
        )
        .unwrap();
        let truth = world.concepts[0].truth.clone();
        let claims: Vec<SlotClaim> = truth.iter().map(|&v| SlotClaim::Value(v)).collect();
        let e = RmExample::labeled(0, claims.clone(), &world, &RewardSpec::fact_default()).unwrap();
        let config = TrainConfig {
            learning_rate: 0.05,
            steps: 400,
            batch_size: 1,
            optimizer: OptAlgo::Adam,
            weight_decay: 0.0,
            embedding_lr_scale: 0.1,
            seed: 6,
        };
        let (rm, _) = train_rm(&base, &[e.clone()], &config).unwrap();
        let predicted = predict_reward(&rm, 0, &Response::LongForm(claims)).unwrap();
        assert!((predicted - e.total_reward).abs() <= 0.5, "predicted {predicted} vs {}", e.total_reward);
    }

    #[test]
    fn rm_data_csv_round_trips() {
        let world = tiny_world(11);
        let prompts = longform_prompts(&world);
        let mut rng = rng_from_seed(7);
        let mut data = gen_standard_data(0.8, &prompts, &world, 12, &mut rng).unwrap();
        data[3].response[1] = SlotClaim::Abstain;
        data[3] = RmExample::labeled(
            data[3].concept_id,
            data[3].response.clone(),
            &world,
            &RewardSpec::fact_default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rm.csv");
        export_rm_data_csv(&path, &data).unwrap();
        let back = import_rm_data_csv(&path, &world).unwrap();
        assert_eq!(back, data);
    }
}
