//! Experiment orchestration: declarative configs, the six end-to-end
//! pipelines, evaluation tables, and report emission.
//!
//! Every pipeline runs world → pretrain → finetune(s) → eval and fills an
//! [`EvalReport`]. All randomness is keyed by the master seed through
//! per-stage derived seeds, so identical configs produce byte-identical
//! reports.

mod config;
mod report;
pub mod svg;

pub use config::parse_experiment_config;
pub use report::emit_report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hedging::{hedge_distance, hedge_rl, hedge_sft, HedgedPrediction, SupervisionSignal, TargetResponse};
use crate::nnet::{
    forward, init_params, pretrain, HeadId, HeadSpec, ModelParams, OptAlgo, TrainConfig, TrainLog,
};
use crate::rl::{
    mc_reward_matrix, train_rl, RewardOracle, RewardSpec, RlConfig, RlLog,
};
use crate::rmod::{
    calibration_report, gen_standard_data, sample_labeled_responses, summarize_rm_data,
    train_rm, CalibrationReport, RmDataSummary,
};
use crate::rng::{rng_from_seed, stage_seed};
use crate::sft::{
    inject_unfamiliar_label_dist, rebalance, relabel_unfamiliar, train_sft, RelabelRule, SftConfig,
};
use crate::unfamiliarity::{
    mention_score, nll_top_prediction, quantile_buckets, sft_avg_nll, Buckets, Metric, Threshold,
    UnfamiliarityScore,
};
use crate::world::{
    make_datasets, CorpusIndex, Document, Example, Task, World, WorldSpec, ABSTAIN_TOKEN,
    MC_ANSWERS,
};

/// Which figure-scale experiment a config reproduces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineKind {
    Fig1Relabel,
    Fig3SftLabels,
    Fig4RlRewards,
    Fig5RmCalibration,
    Fig7Factuality,
    Table1Summary,
}

impl PipelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Fig1Relabel => "fig1-relabel",
            PipelineKind::Fig3SftLabels => "fig3-sft-labels",
            PipelineKind::Fig4RlRewards => "fig4-rl-rewards",
            PipelineKind::Fig5RmCalibration => "fig5-rm-calibration",
            PipelineKind::Fig7Factuality => "fig7-factuality",
            PipelineKind::Table1Summary => "table1-summary",
        }
    }
}

/// Fully resolved experiment configuration; echoed verbatim into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: PipelineKind,
    pub master_seed: u64,
    pub out_dir: Option<String>,
    pub world: WorldSpec,
    pub dim: usize,
    pub hidden: Option<usize>,
    pub n_buckets: usize,
    pub split_fractions: (f64, f64),
    pub eval_samples_per_prompt: usize,
    pub pretrain: TrainConfig,
    pub sft: SftConfig,
    pub rl: RlConfig,
    pub rm_train: TrainConfig,
    pub rm_n: usize,
    pub rm_q: f64,
}

impl ExperimentConfig {
    /// Desk-scale defaults for one pipeline, keyed by the master seed.
    /// Chosen for learnability of the default world; every value is echoed
    /// into the report.
    pub fn default_for(pipeline: PipelineKind, master_seed: u64) -> ExperimentConfig {
        let seed = |stage: &str| stage_seed(master_seed, stage);
        let mut config = ExperimentConfig {
            pipeline,
            master_seed,
            out_dir: None,
            world: WorldSpec { seed: seed("world"), ..WorldSpec::default() },
            dim: 32,
            hidden: None,
            n_buckets: 5,
            split_fractions: (0.5, 0.5),
            eval_samples_per_prompt: 4,
            pretrain: TrainConfig {
                learning_rate: 0.03,
                steps: 1600,
                batch_size: 64,
                optimizer: OptAlgo::Adam,
                weight_decay: 1e-4,
                embedding_lr_scale: 1.0,
                seed: seed("pretrain"),
            },
            sft: SftConfig::plain(TrainConfig {
                learning_rate: 0.02,
                steps: 1200,
                batch_size: 32,
                optimizer: OptAlgo::Adam,
                weight_decay: 3e-3,
                embedding_lr_scale: 0.1,
                seed: seed("sft"),
            }),
            rl: RlConfig {
                learning_rate: 0.02,
                iterations: 250,
                prompts_per_iter: 128,
                seed: seed("rl"),
                ..RlConfig::default()
            },
            rm_train: TrainConfig {
                learning_rate: 0.02,
                steps: 2000,
                batch_size: 32,
                optimizer: OptAlgo::Adam,
                weight_decay: 1e-3,
                embedding_lr_scale: 0.1,
                seed: seed("rm-train"),
            },
            rm_n: 10_000,
            rm_q: 0.8,
        };
        match pipeline {
            PipelineKind::Fig1Relabel => {
                config.sft.relabel = RelabelRule::AbstainToken;
                config.sft.threshold = Some(Threshold { value: 0.2, metric: Metric::SftNll });
            }
            PipelineKind::Fig3SftLabels => {
                config.sft.rebalance_familiar_fraction = Some(0.5);
                config.sft.threshold = Some(Threshold { value: 0.7, metric: Metric::PretrainNll });
                config.sft.injected_label_dist = Some(vec![0.0, 0.5, 0.5, 0.0]);
            }
            PipelineKind::Fig4RlRewards => {
                config.sft.threshold = Some(Threshold { value: 0.7, metric: Metric::PretrainNll });
            }
            PipelineKind::Fig5RmCalibration
            | PipelineKind::Fig7Factuality
            | PipelineKind::Table1Summary => {
                config.sft.train.steps = 1500;
            }
        }
        config
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.pretrain.validate()?;
        self.sft.validate()?;
        self.rl.validate()?;
        self.rm_train.validate()?;
        if self.dim < 2 {
            return Err(Error::Config { field: "dim", reason: "must be ≥ 2".into() });
        }
        if self.n_buckets < 2 {
            return Err(Error::Config { field: "n_buckets", reason: "must be ≥ 2".into() });
        }
        if !(0.0 < self.rm_q && self.rm_q < 1.0) {
            return Err(Error::Config { field: "rm_q", reason: "must lie in (0,1)".into() });
        }
        if self.eval_samples_per_prompt == 0 {
            return Err(Error::Config {
                field: "eval_samples_per_prompt",
                reason: "must be ≥ 1".into(),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evaluation tables
// ---------------------------------------------------------------------------

/// One evaluated MC query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEvalRow {
    pub concept_id: usize,
    pub bucket: usize,
    pub score: f64,
    pub truth: usize,
    pub probs: Vec<f64>,
}

/// Per-bucket MC statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McBucketRow {
    pub bucket: usize,
    pub count: usize,
    pub mean_probs: Vec<f64>,
    /// Fraction with argmax equal to the ground-truth letter.
    pub accuracy: f64,
    /// Mean probability mass on the abstain token (0 for 4-token heads).
    pub abstain_rate: f64,
    /// Fraction with argmax on a wrong letter (abstain is not wrong).
    pub false_rate: f64,
    /// Count-weighted TV between truth-conditioned mean predictions and
    /// the model's hedge.
    pub hedge_tv: f64,
}

/// Full MC evaluation of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McModelEval {
    pub name: String,
    pub metric: Metric,
    pub hedge: HedgedPrediction,
    pub rows: Vec<McEvalRow>,
    pub buckets: Vec<McBucketRow>,
    pub empty_buckets: Vec<usize>,
}

/// Pure aggregation of MC rows into bucket statistics; the report is
/// exactly this function applied to the persisted per-example rows.
pub fn aggregate_mc_buckets(
    rows: &[McEvalRow],
    n_buckets: usize,
    hedge: &[f64],
) -> Vec<McBucketRow> {
    let mut out = Vec::new();
    for b in 0..n_buckets {
        let members: Vec<&McEvalRow> = rows.iter().filter(|r| r.bucket == b).collect();
        if members.is_empty() {
            continue;
        }
        let k = members[0].probs.len();
        let count = members.len();
        let mut mean_probs = vec![0.0; k];
        let mut correct = 0usize;
        let mut abstain_mass = 0.0;
        let mut wrong = 0usize;
        for r in &members {
            for (m, p) in mean_probs.iter_mut().zip(&r.probs) {
                *m += p;
            }
            let argmax = r
                .probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == r.truth {
                correct += 1;
            } else if !(k > MC_ANSWERS && argmax == ABSTAIN_TOKEN) {
                wrong += 1;
            }
            if k > MC_ANSWERS {
                abstain_mass += r.probs[ABSTAIN_TOKEN];
            }
        }
        for m in &mut mean_probs {
            *m /= count as f64;
        }
        // hedge distance on truth-conditioned means, weighted by group size
        let mut hedge_tv = 0.0;
        for t in 0..MC_ANSWERS {
            let group: Vec<&&McEvalRow> = members.iter().filter(|r| r.truth == t).collect();
            if group.is_empty() {
                continue;
            }
            let mut cond = vec![0.0; k];
            for r in &group {
                for (c, p) in cond.iter_mut().zip(&r.probs) {
                    *c += p;
                }
            }
            for c in &mut cond {
                *c /= group.len() as f64;
            }
            let tv = hedge_distance(&cond, hedge).unwrap_or(f64::NAN);
            hedge_tv += tv * group.len() as f64 / count as f64;
        }
        out.push(McBucketRow {
            bucket: b,
            count,
            mean_probs,
            accuracy: correct as f64 / count as f64,
            abstain_rate: abstain_mass / count as f64,
            false_rate: wrong as f64 / count as f64,
            hedge_tv,
        });
    }
    out
}

/// Evaluate an MC model over the eval set with precomputed bucketing.
pub fn eval_mc_model(
    name: &str,
    model: &ModelParams,
    eval_examples: &[Example],
    scores: &[f64],
    metric: Metric,
    buckets: &Buckets,
    hedge: HedgedPrediction,
    world: &World,
) -> Result<McModelEval> {
    let mut rows = Vec::with_capacity(eval_examples.len());
    for (i, e) in eval_examples.iter().enumerate() {
        let probs = forward(model, e.concept_id, HeadId::Mc)?.probs;
        rows.push(McEvalRow {
            concept_id: e.concept_id,
            bucket: buckets.assignment[i],
            score: scores[i],
            truth: world.concept(e.concept_id)?.mc_answer(),
            probs,
        });
    }
    let bucket_rows = aggregate_mc_buckets(&rows, buckets.n_buckets, &hedge.dist);
    Ok(McModelEval {
        name: name.to_string(),
        metric,
        hedge,
        rows,
        buckets: bucket_rows,
        empty_buckets: buckets.empty_buckets(),
    })
}

/// One evaluated long-form query: expected fact counts under the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfEvalRow {
    pub concept_id: usize,
    pub bucket: usize,
    pub score: f64,
    pub expected_true: f64,
    pub expected_false: f64,
    pub abstain_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfBucketRow {
    pub bucket: usize,
    pub count: usize,
    pub true_facts: f64,
    pub false_facts: f64,
    pub fraction_true: Option<f64>,
    pub abstain_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfModelEval {
    pub name: String,
    pub metric: Metric,
    pub rows: Vec<LfEvalRow>,
    pub buckets: Vec<LfBucketRow>,
    pub empty_buckets: Vec<usize>,
    pub total_true_facts: f64,
    pub total_false_facts: f64,
    pub fraction_true: Option<f64>,
}

/// Pure aggregation of long-form rows into bucket statistics.
pub fn aggregate_lf_buckets(rows: &[LfEvalRow], n_buckets: usize) -> Vec<LfBucketRow> {
    let mut out = Vec::new();
    for b in 0..n_buckets {
        let members: Vec<&LfEvalRow> = rows.iter().filter(|r| r.bucket == b).collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len();
        let sum_true: f64 = members.iter().map(|r| r.expected_true).sum();
        let sum_false: f64 = members.iter().map(|r| r.expected_false).sum();
        let abstain: f64 = members.iter().map(|r| r.abstain_prob).sum();
        out.push(LfBucketRow {
            bucket: b,
            count,
            true_facts: sum_true / count as f64,
            false_facts: sum_false / count as f64,
            fraction_true: fraction_true(sum_true, sum_false).unwrap_or(None),
            abstain_rate: abstain / count as f64,
        });
    }
    out
}

/// Evaluate a long-form policy: expected true/false fact counts per query
/// under the factored per-slot policy (exact, no sampling noise).
pub fn eval_lf_model(
    name: &str,
    model: &ModelParams,
    eval_examples: &[Example],
    scores: &[f64],
    metric: Metric,
    buckets: &Buckets,
    world: &World,
) -> Result<LfModelEval> {
    let mut rows = Vec::with_capacity(eval_examples.len());
    for (i, e) in eval_examples.iter().enumerate() {
        let concept = world.concept(e.concept_id)?;
        let mut expected_true = 0.0;
        let mut expected_false = 0.0;
        let mut abstain = 0.0;
        for (slot, &truth) in concept.truth.iter().enumerate() {
            let probs = forward(model, e.concept_id, HeadId::SlotClaim(slot as u16))?.probs;
            let k = probs.len();
            let p_abstain = probs[k - 1];
            let p_true = probs[truth as usize];
            expected_true += p_true;
            expected_false += 1.0 - p_true - p_abstain;
            abstain += p_abstain;
        }
        let slots = concept.truth.len() as f64;
        rows.push(LfEvalRow {
            concept_id: e.concept_id,
            bucket: buckets.assignment[i],
            score: scores[i],
            expected_true,
            expected_false,
            abstain_prob: abstain / slots,
        });
    }
    let bucket_rows = aggregate_lf_buckets(&rows, buckets.n_buckets);
    let total_true: f64 = rows.iter().map(|r| r.expected_true).sum();
    let total_false: f64 = rows.iter().map(|r| r.expected_false).sum();
    Ok(LfModelEval {
        name: name.to_string(),
        metric,
        rows,
        buckets: bucket_rows,
        empty_buckets: buckets.empty_buckets(),
        total_true_facts: total_true,
        total_false_facts: total_false,
        fraction_true: fraction_true(total_true, total_false)?,
    })
}

/// true/(true+false); absent when no facts were generated at all.
pub fn fraction_true(true_count: f64, false_count: f64) -> Result<Option<f64>> {
    if true_count < 0.0 || false_count < 0.0 {
        return Err(Error::Mismatch("fact counts must be nonnegative".into()));
    }
    if true_count == 0.0 && false_count == 0.0 {
        return Ok(None);
    }
    Ok(Some(true_count / (true_count + false_count)))
}

/// Evaluate several long-form checkpoints on one eval set with shared
/// bucketing. All models must expose compatible slot-claim heads.
pub fn compare_models(
    models: &[(&str, &ModelParams)],
    eval_examples: &[Example],
    scores: &[f64],
    metric: Metric,
    buckets: &Buckets,
    world: &World,
) -> Result<Vec<LfModelEval>> {
    if models.len() < 2 {
        return Err(Error::Empty("compare_models needs at least two checkpoints".into()));
    }
    let shape = |m: &ModelParams| -> Vec<(u16, usize)> {
        m.heads
            .iter()
            .filter_map(|(id, h)| match id {
                HeadId::SlotClaim(s) => Some((*s, h.k())),
                _ => None,
            })
            .collect()
    };
    let reference = shape(models[0].1);
    if reference.is_empty() {
        return Err(Error::Mismatch("compared models carry no slot-claim heads".into()));
    }
    for (name, m) in models {
        if shape(m) != reference {
            return Err(Error::Mismatch(format!(
                "model `{name}` does not share the reference head shape"
            )));
        }
    }
    models
        .iter()
        .map(|(name, m)| eval_lf_model(name, m, eval_examples, scores, metric, buckets, world))
        .collect()
}

// ---------------------------------------------------------------------------
// Report container
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCalibration {
    pub name: String,
    pub calibration: CalibrationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedRlLog {
    pub name: String,
    pub log: RlLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionTrueRow {
    pub model: String,
    pub true_facts: f64,
    pub false_facts: f64,
    pub fraction_true: Option<f64>,
}

/// Everything a pipeline run reports. Sections not applicable to a
/// pipeline stay empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub artifact_version: String,
    pub pipeline: String,
    pub config: ExperimentConfig,
    pub pretrain_final_loss: f64,
    pub notes: Vec<String>,
    pub mc_models: Vec<McModelEval>,
    pub lf_models: Vec<LfModelEval>,
    pub rm_data: Vec<RmDataSummary>,
    pub calibrations: Vec<NamedCalibration>,
    pub rl_logs: Vec<NamedRlLog>,
    pub fraction_true: Vec<FractionTrueRow>,
}

impl EvalReport {
    fn new(config: &ExperimentConfig) -> EvalReport {
        EvalReport {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            pipeline: config.pipeline.as_str().to_string(),
            config: config.clone(),
            pretrain_final_loss: f64::NAN,
            notes: Vec::new(),
            mc_models: Vec::new(),
            lf_models: Vec::new(),
            rm_data: Vec::new(),
        calibrations: Vec::new(),
            rl_logs: Vec::new(),
            fraction_true: Vec::new(),
        }
    }

    pub fn mc_model(&self, name: &str) -> Option<&McModelEval> {
        self.mc_models.iter().find(|m| m.name == name)
    }

    pub fn lf_model(&self, name: &str) -> Option<&LfModelEval> {
        self.lf_models.iter().find(|m| m.name == name)
    }

    pub fn calibration(&self, name: &str) -> Option<&CalibrationReport> {
        self.calibrations.iter().find(|c| c.name == name).map(|c| &c.calibration)
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline stages
// ---------------------------------------------------------------------------

/// World, corpus, pretrained base model, and datasets for one run.
pub struct Prepared {
    pub world: World,
    pub docs: Vec<Document>,
    pub index: CorpusIndex,
    pub pretrained: ModelParams,
    pub pretrain_log: TrainLog,
    pub finetune: Vec<Example>,
    pub eval: Vec<Example>,
}

/// Run the stages every pipeline shares: generate the world and corpus,
/// pretrain the base model, and split datasets.
pub fn prepare(config: &ExperimentConfig, task: Task) -> Result<Prepared> {
    config.validate()?;
    let (mut world, docs) =
        World::generate(&config.world).map_err(|e| e.in_stage("world"))?;
    let index = CorpusIndex::build(world.num_concepts(), &docs);
    let heads: Vec<HeadSpec> = (0..config.world.num_slots)
        .map(|s| HeadSpec { id: HeadId::SlotValue(s as u16), k: config.world.values_per_slot })
        .collect();
    let mut init_rng = rng_from_seed(stage_seed(config.master_seed, "init"));
    let mut pretrained = init_params(
        world.num_concepts(),
        config.dim,
        &heads,
        config.hidden,
        &mut init_rng,
    )
    .map_err(|e| e.in_stage("init"))?;
    let pretrain_log =
        pretrain(&mut pretrained, &docs, &config.pretrain).map_err(|e| e.in_stage("pretrain"))?;
    let mut split_rng = rng_from_seed(stage_seed(config.master_seed, "split"));
    let (finetune, eval) = make_datasets(&world, task, config.split_fractions, &mut split_rng)
        .map_err(|e| e.in_stage("split"))?;
    // realized counts are part of the world contract
    let _ = &mut world;
    Ok(Prepared { world, docs, index, pretrained, pretrain_log, finetune, eval })
}

fn pretrain_nll_values(pretrained: &ModelParams, examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .iter()
        .map(|e| nll_top_prediction(pretrained, e.concept_id).map(|s| s.value))
        .collect()
}

fn pretrain_nll_scores(
    pretrained: &ModelParams,
    examples: &[Example],
) -> Result<Vec<UnfamiliarityScore>> {
    examples.iter().map(|e| nll_top_prediction(pretrained, e.concept_id)).collect()
}

fn mention_values(index: &CorpusIndex, examples: &[Example]) -> Result<Vec<f64>> {
    examples.iter().map(|e| mention_score(index, e.concept_id).map(|s| s.value)).collect()
}

/// The SFT hedge of a dataset's unfamiliar targets.
fn hedge_of_unfamiliar_targets(
    dataset: &[Example],
    scores: &[UnfamiliarityScore],
    threshold: Threshold,
    k: usize,
) -> Result<HedgedPrediction> {
    let targets: Vec<TargetResponse> = dataset
        .iter()
        .zip(scores)
        .filter(|(_, s)| s.value > threshold.value)
        .filter_map(|(e, _)| match &e.supervision {
            SupervisionSignal::Target(t) => Some(t.clone()),
            SupervisionSignal::Reward(_) => None,
        })
        .collect();
    hedge_sft(&targets, k)
}

fn note_empty_buckets(report: &mut EvalReport, buckets: &Buckets) {
    for b in buckets.empty_buckets() {
        report.notes.push(format!("bucket {b} is empty (tie merging)"));
    }
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

/// Execute a pipeline and return its report. Writes nothing; pair with
/// [`emit_report`] to persist.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<EvalReport> {
    match config.pipeline {
        PipelineKind::Fig1Relabel => run_fig1(config),
        PipelineKind::Fig3SftLabels => run_fig3(config),
        PipelineKind::Fig4RlRewards => run_fig4(config),
        PipelineKind::Fig5RmCalibration => run_fig5(config, false),
        PipelineKind::Fig7Factuality => run_fig5(config, true),
        PipelineKind::Table1Summary => run_fig5(config, true),
    }
}

/// Standard SFT vs relabel-to-abstain SFT, evaluated by mention counts.
fn run_fig1(config: &ExperimentConfig) -> Result<EvalReport> {
    let prep = prepare(config, Task::Mc)?;
    let mut report = EvalReport::new(config);
    report.pretrain_final_loss = prep.pretrain_log.final_loss();
    let threshold = config.sft.threshold.ok_or_else(|| Error::Config {
        field: "threshold",
        reason: "fig1 needs an sft-nll threshold".into(),
    })?;

    let (sft_standard, _) = train_sft(&prep.pretrained, &prep.finetune, &config.sft.train)
        .map_err(|e| e.in_stage("sft-standard"))?;

    // score finetune examples with the finetuned model, then relabel
    let ft_scores: Vec<UnfamiliarityScore> = prep
        .finetune
        .iter()
        .map(|e| sft_avg_nll(&sft_standard, e))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("relabel-score"))?;
    let (relabeled, n_relabeled) =
        relabel_unfamiliar(&prep.finetune, &ft_scores, threshold, RelabelRule::AbstainToken)
            .map_err(|e| e.in_stage("relabel"))?;
    report.notes.push(format!("relabeled {n_relabeled} of {} examples", relabeled.len()));
    let (sft_relabeled, _) = train_sft(&prep.pretrained, &relabeled, &config.sft.train)
        .map_err(|e| e.in_stage("sft-relabeled"))?;

    // evaluation buckets by corpus mention counts
    let eval_values = mention_values(&prep.index, &prep.eval)?;
    let buckets = quantile_buckets(&eval_values, config.n_buckets)?;
    note_empty_buckets(&mut report, &buckets);

    let hedge_standard = hedge_of_unfamiliar_targets(&prep.finetune, &ft_scores, threshold, MC_ANSWERS)?;
    let hedge_relabeled =
        hedge_of_unfamiliar_targets(&relabeled, &ft_scores, threshold, MC_ANSWERS + 1)?;

    report.mc_models.push(eval_mc_model(
        "sft-standard",
        &sft_standard,
        &prep.eval,
        &eval_values,
        Metric::MentionCount,
        &buckets,
        hedge_standard,
        &prep.world,
    )?);
    report.mc_models.push(eval_mc_model(
        "sft-relabeled",
        &sft_relabeled,
        &prep.eval,
        &eval_values,
        Metric::MentionCount,
        &buckets,
        hedge_relabeled,
        &prep.world,
    )?);
    Ok(report)
}

/// Uniform labels vs injected 50/50 labels on unfamiliar examples.
fn run_fig3(config: &ExperimentConfig) -> Result<EvalReport> {
    let prep = prepare(config, Task::Mc)?;
    let mut report = EvalReport::new(config);
    report.pretrain_final_loss = prep.pretrain_log.final_loss();
    let threshold = config.sft.threshold.ok_or_else(|| Error::Config {
        field: "threshold",
        reason: "fig3 needs a pretrain-nll threshold".into(),
    })?;
    let inject_dist = config.sft.injected_label_dist.clone().ok_or_else(|| Error::Config {
        field: "injected_label_dist",
        reason: "fig3 needs an injected label distribution".into(),
    })?;
    let familiar_fraction = config.sft.rebalance_familiar_fraction.unwrap_or(0.5);

    let ft_scores =
        pretrain_nll_scores(&prep.pretrained, &prep.finetune).map_err(|e| e.in_stage("classify"))?;

    // model A: ground-truth (uniform) labels, rebalanced
    let mut rng_bal = rng_from_seed(stage_seed(config.master_seed, "rebalance"));
    let data_uniform = rebalance(&prep.finetune, &ft_scores, threshold, familiar_fraction, &mut rng_bal)
        .map_err(|e| e.in_stage("rebalance"))?;
    let (model_uniform, _) = train_sft(&prep.pretrained, &data_uniform, &config.sft.train)
        .map_err(|e| e.in_stage("sft-uniform"))?;

    // model B: unfamiliar labels resampled from the injected distribution,
    // then the identical rebalance (same seed, same classes)
    let mut rng_inject = rng_from_seed(stage_seed(config.master_seed, "inject"));
    let injected =
        inject_unfamiliar_label_dist(&prep.finetune, &ft_scores, threshold, &inject_dist, &mut rng_inject)
            .map_err(|e| e.in_stage("inject"))?;
    let mut rng_bal2 = rng_from_seed(stage_seed(config.master_seed, "rebalance"));
    let data_injected = rebalance(&injected, &ft_scores, threshold, familiar_fraction, &mut rng_bal2)
        .map_err(|e| e.in_stage("rebalance"))?;
    let (model_injected, _) = train_sft(&prep.pretrained, &data_injected, &config.sft.train)
        .map_err(|e| e.in_stage("sft-injected"))?;

    // hedges are the marginals of each training set's unfamiliar targets
    let scores_uniform: Vec<UnfamiliarityScore> =
        pretrain_nll_scores(&prep.pretrained, &data_uniform)?;
    let hedge_uniform = hedge_of_unfamiliar_targets(&data_uniform, &scores_uniform, threshold, MC_ANSWERS)?;
    let scores_injected: Vec<UnfamiliarityScore> =
        pretrain_nll_scores(&prep.pretrained, &data_injected)?;
    let hedge_injected =
        hedge_of_unfamiliar_targets(&data_injected, &scores_injected, threshold, MC_ANSWERS)?;

    let eval_values = pretrain_nll_values(&prep.pretrained, &prep.eval)?;
    let buckets = quantile_buckets(&eval_values, config.n_buckets)?;
    note_empty_buckets(&mut report, &buckets);

    report.mc_models.push(eval_mc_model(
        "sft-uniform-labels",
        &model_uniform,
        &prep.eval,
        &eval_values,
        Metric::PretrainNll,
        &buckets,
        hedge_uniform,
        &prep.world,
    )?);
    report.mc_models.push(eval_mc_model(
        "sft-injected-labels",
        &model_injected,
        &prep.eval,
        &eval_values,
        Metric::PretrainNll,
        &buckets,
        hedge_injected,
        &prep.world,
    )?);
    Ok(report)
}

/// RL against RF1 (guessing beats abstaining) and RF2 (abstaining beats
/// guessing), from a half-correct/half-abstain SFT initialization.
fn run_fig4(config: &ExperimentConfig) -> Result<EvalReport> {
    let prep = prepare(config, Task::Mc)?;
    let mut report = EvalReport::new(config);
    report.pretrain_final_loss = prep.pretrain_log.final_loss();
    let threshold = config.sft.threshold.ok_or_else(|| Error::Config {
        field: "threshold",
        reason: "fig4 needs a pretrain-nll threshold".into(),
    })?;

    // RL initialization: predict E half the time, the correct answer half
    let init_dataset: Vec<Example> = prep
        .finetune
        .iter()
        .map(|e| {
            let correct = prep.world.concepts[e.concept_id].mc_answer();
            let mut soft = vec![0.0; MC_ANSWERS + 1];
            soft[correct] = 0.5;
            soft[ABSTAIN_TOKEN] = 0.5;
            Example {
                concept_id: e.concept_id,
                task: Task::Mc,
                supervision: SupervisionSignal::Target(TargetResponse::Soft(soft)),
            }
        })
        .collect();
    let (rl_init, _) = train_sft(&prep.pretrained, &init_dataset, &config.sft.train)
        .map_err(|e| e.in_stage("rl-init-sft"))?;

    let oracle = RewardOracle::World(&prep.world);
    let (model_rf1, log_rf1) = train_rl(&rl_init, &prep.finetune, &RewardSpec::rf1(), &oracle, &config.rl)
        .map_err(|e| e.in_stage("rl-rf1"))?;
    let (model_rf2, log_rf2) = train_rl(&rl_init, &prep.finetune, &RewardSpec::rf2(), &oracle, &config.rl)
        .map_err(|e| e.in_stage("rl-rf2"))?;
    report.rl_logs.push(NamedRlLog { name: "rl-rf1".into(), log: log_rf1 });
    report.rl_logs.push(NamedRlLog { name: "rl-rf2".into(), log: log_rf2 });

    // reward hedges over the unfamiliar finetuning prompts
    let ft_values = pretrain_nll_values(&prep.pretrained, &prep.finetune)?;
    let unfamiliar_correct: Vec<usize> = prep
        .finetune
        .iter()
        .zip(&ft_values)
        .filter(|(_, &v)| v > threshold.value)
        .map(|(e, _)| prep.world.concepts[e.concept_id].mc_answer())
        .collect();
    if unfamiliar_correct.is_empty() {
        return Err(Error::Empty("no unfamiliar finetune prompts at this threshold".into())
            .in_stage("hedge"));
    }
    let hedge_rf1 = hedge_rl(&mc_reward_matrix(&RewardSpec::rf1(), &unfamiliar_correct, 5)?)?;
    let hedge_rf2 = hedge_rl(&mc_reward_matrix(&RewardSpec::rf2(), &unfamiliar_correct, 5)?)?;
    // the init model's own hedge is the mean of its soft targets
    let init_targets: Vec<TargetResponse> = init_dataset
        .iter()
        .zip(&ft_values)
        .filter(|(_, &v)| v > threshold.value)
        .filter_map(|(e, _)| match &e.supervision {
            SupervisionSignal::Target(t) => Some(t.clone()),
            _ => None,
        })
        .collect();
    let hedge_init = hedge_sft(&init_targets, MC_ANSWERS + 1)?;

    let eval_values = pretrain_nll_values(&prep.pretrained, &prep.eval)?;
    let buckets = quantile_buckets(&eval_values, config.n_buckets)?;
    note_empty_buckets(&mut report, &buckets);

    for (name, model, hedge) in [
        ("rl-init", &rl_init, hedge_init),
        ("rl-rf1", &model_rf1, hedge_rf1),
        ("rl-rf2", &model_rf2, hedge_rf2),
    ] {
        report.mc_models.push(eval_mc_model(
            name,
            model,
            &prep.eval,
            &eval_values,
            Metric::PretrainNll,
            &buckets,
            hedge,
            &prep.world,
        )?);
    }
    Ok(report)
}

/// Reward-model data properties and calibration (fig5); with
/// `with_rl = true` also the RL factuality comparison (fig7 / table1).
fn run_fig5(config: &ExperimentConfig, with_rl: bool) -> Result<EvalReport> {
    let prep = prepare(config, Task::LongForm)?;
    let mut report = EvalReport::new(config);
    report.pretrain_final_loss = prep.pretrain_log.final_loss();

    // standard SFT on ground-truth fact lists; shared by data generation,
    // calibration evaluation, and RL initialization
    let (sft_policy, _) = train_sft(&prep.pretrained, &prep.finetune, &config.sft.train)
        .map_err(|e| e.in_stage("sft"))?;

    let mut rng_cons = rng_from_seed(stage_seed(config.master_seed, "rm-data-conservative"));
    let conservative_data = sample_labeled_responses(
        &sft_policy,
        &prep.finetune,
        &prep.world,
        &RewardSpec::fact_default(),
        config.rm_n,
        &mut rng_cons,
    )
    .map_err(|e| e.in_stage("rm-data-conservative"))?;
    let mut rng_std = rng_from_seed(stage_seed(config.master_seed, "rm-data-standard"));
    let standard_data =
        gen_standard_data(config.rm_q, &prep.finetune, &prep.world, config.rm_n, &mut rng_std)
            .map_err(|e| e.in_stage("rm-data-standard"))?;

    report.rm_data.push(summarize_rm_data(
        "conservative",
        &conservative_data,
        &prep.index,
        config.n_buckets,
    )?);
    report.rm_data.push(summarize_rm_data(
        &format!("standard-q{}", config.rm_q),
        &standard_data,
        &prep.index,
        config.n_buckets,
    )?);

    let (rm_conservative, _) = train_rm(&prep.pretrained, &conservative_data, &config.rm_train)
        .map_err(|e| e.in_stage("rm-train-conservative"))?;
    let (rm_standard, _) = train_rm(&prep.pretrained, &standard_data, &config.rm_train)
        .map_err(|e| e.in_stage("rm-train-standard"))?;

    // held-out calibration: same sampled responses for both reward models
    for (name, rm) in [("conservative", &rm_conservative), ("standard", &rm_standard)] {
        let mut rng_cal = rng_from_seed(stage_seed(config.master_seed, "calibration"));
        let calibration = calibration_report(
            rm,
            &sft_policy,
            &prep.eval,
            &prep.world,
            &prep.index,
            config.n_buckets,
            config.eval_samples_per_prompt,
            &mut rng_cal,
        )
        .map_err(|e| e.in_stage("calibration"))?;
        for b in &calibration.empty_buckets {
            report.notes.push(format!("calibration bucket {b} is empty"));
        }
        report
            .calibrations
            .push(NamedCalibration { name: name.to_string(), calibration });
    }

    if with_rl {
        let (policy_conservative, log_cons) = train_rl(
            &sft_policy,
            &prep.finetune,
            &RewardSpec::Learned,
            &RewardOracle::Learned(&rm_conservative),
            &config.rl,
        )
        .map_err(|e| e.in_stage("rl-conservative"))?;
        let (policy_standard, log_std) = train_rl(
            &sft_policy,
            &prep.finetune,
            &RewardSpec::Learned,
            &RewardOracle::Learned(&rm_standard),
            &config.rl,
        )
        .map_err(|e| e.in_stage("rl-standard"))?;
        report.rl_logs.push(NamedRlLog { name: "rl-conservative-rm".into(), log: log_cons });
        report.rl_logs.push(NamedRlLog { name: "rl-standard-rm".into(), log: log_std });

        let eval_values = mention_values(&prep.index, &prep.eval)?;
        let buckets = quantile_buckets(&eval_values, config.n_buckets)?;
        note_empty_buckets(&mut report, &buckets);
        let evals = compare_models(
            &[
                ("sft", &sft_policy),
                ("rl-standard-rm", &policy_standard),
                ("rl-conservative-rm", &policy_conservative),
            ],
            &prep.eval,
            &eval_values,
            Metric::MentionCount,
            &buckets,
            &prep.world,
        )
        .map_err(|e| e.in_stage("compare"))?;
        for ev in &evals {
            report.fraction_true.push(FractionTrueRow {
                model: ev.name.clone(),
                true_facts: ev.total_true_facts,
                false_facts: ev.total_false_facts,
                fraction_true: ev.fraction_true,
            });
        }
        report.lf_models = evals;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_true_hand_values() {
        assert_eq!(fraction_true(3.0, 1.0).unwrap(), Some(0.75));
        assert_eq!(fraction_true(0.0, 5.0).unwrap(), Some(0.0));
        assert_eq!(fraction_true(47.0, 53.0).unwrap(), Some(0.47));
        assert_eq!(fraction_true(0.0, 0.0).unwrap(), None);
        assert!(fraction_true(-1.0, 3.0).is_err());
    }

    #[test]
    fn default_configs_validate() {
        for kind in [
            PipelineKind::Fig1Relabel,
            PipelineKind::Fig3SftLabels,
            PipelineKind::Fig4RlRewards,
            PipelineKind::Fig5RmCalibration,
            PipelineKind::Fig7Factuality,
            PipelineKind::Table1Summary,
        ] {
            ExperimentConfig::default_for(kind, 0).validate().unwrap();
        }
    }

    #[test]
    fn stage_seeds_differ_per_stage() {
        let c = ExperimentConfig::default_for(PipelineKind::Fig3SftLabels, 5);
        assert_ne!(c.world.seed, c.pretrain.seed);
        assert_ne!(c.pretrain.seed, c.sft.train.seed);
    }

    #[test]
    fn aggregate_mc_buckets_basic() {
        let rows = vec![
            McEvalRow { concept_id: 0, bucket: 0, score: 0.1, truth: 0, probs: vec![0.7, 0.1, 0.1, 0.1] },
            McEvalRow { concept_id: 1, bucket: 0, score: 0.2, truth: 1, probs: vec![0.1, 0.7, 0.1, 0.1] },
            McEvalRow { concept_id: 2, bucket: 1, score: 0.9, truth: 2, probs: vec![0.25; 4] },
        ];
        let buckets = aggregate_mc_buckets(&rows, 2, &[0.25; 4]);
        assert_eq!(buckets.len(), 2);
        assert_eq!(buckets[0].count, 2);
        assert_eq!(buckets[0].accuracy, 1.0);
        assert_eq!(buckets[0].false_rate, 0.0);
        // bucket 1: prediction uniform, argmax index 0 ≠ truth 2 → false
        assert_eq!(buckets[1].accuracy, 0.0);
        assert_eq!(buckets[1].false_rate, 1.0);
        // conditioned mean of bucket 1 equals the hedge
        assert!(buckets[1].hedge_tv < 1e-12);
        // bucket 0 conditioned means are far from uniform
        assert!(buckets[0].hedge_tv > 0.4);
    }

    #[test]
    fn aggregate_lf_buckets_basic() {
        let rows = vec![
            LfEvalRow { concept_id: 0, bucket: 0, score: 0.0, expected_true: 4.0, expected_false: 1.0, abstain_prob: 0.0 },
            LfEvalRow { concept_id: 1, bucket: 1, score: 1.0, expected_true: 1.0, expected_false: 3.0, abstain_prob: 0.2 },
        ];
        let buckets = aggregate_lf_buckets(&rows, 2);
        assert_eq!(buckets[0].fraction_true, Some(0.8));
        assert_eq!(buckets[1].fraction_true, Some(0.25));
    }
}
