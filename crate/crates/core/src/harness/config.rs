//! Plain-text experiment configs.
//!
//! Grammar (line oriented):
//!
//! ```text
//! # comment (also after values)
//! pipeline = fig3-sft-labels        # top-level keys come before sections
//! master_seed = 42
//!
//! [world]                           # one section per module
//! num_concepts = 1000
//! zipf_exponent = 1.2
//!
//! [sft]
//! relabel = abstain-token
//! inject = 0,0.5,0.5,0              # lists are comma separated
//! ```
//!
//! Unknown sections or keys are errors, so typos cannot silently fall back
//! to defaults. Every value not set here comes from the pipeline's
//! defaults and is echoed into the report.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, PipelineKind};
use crate::rng::stage_seed;
use crate::unfamiliarity::{Metric, Threshold};

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::ConfigParse { line, reason: reason.into() }
}

struct RawConfig {
    /// (line, key, value) for top-level entries.
    top: Vec<(usize, String, String)>,
    /// section name → entries.
    sections: BTreeMap<String, Vec<(usize, String, String)>>,
}

fn tokenize(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig { top: Vec::new(), sections: BTreeMap::new() };
    let mut current: Option<String> = None;
    for (i, line_text) in text.lines().enumerate() {
        let line_no = i + 1;
        let stripped = match line_text.find('#') {
            Some(pos) => &line_text[..pos],
            None => line_text,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(name) = stripped.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(parse_err(line_no, "empty section name"));
            }
            raw.sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected `key = value`"))?;
        let entry = (line_no, key.trim().to_string(), value.trim().to_string());
        match &current {
            None => raw.top.push(entry),
            Some(section) => raw.sections.get_mut(section).unwrap().push(entry),
        }
    }
    Ok(raw)
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_f64_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("cannot parse list entry in `{key}`")))
        })
        .collect()
}

impl std::str::FromStr for PipelineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<PipelineKind> {
        match s {
            "fig1-relabel" => Ok(PipelineKind::Fig1Relabel),
            "fig3-sft-labels" => Ok(PipelineKind::Fig3SftLabels),
            "fig4-rl-rewards" => Ok(PipelineKind::Fig4RlRewards),
            "fig5-rm-calibration" => Ok(PipelineKind::Fig5RmCalibration),
            "fig7-factuality" => Ok(PipelineKind::Fig7Factuality),
            "table1-summary" => Ok(PipelineKind::Table1Summary),
            other => Err(Error::Config {
                field: "pipeline",
                reason: format!("unknown pipeline kind `{other}`"),
            }),
        }
    }
}

/// Parse an experiment config. Defaults come from the pipeline kind and
/// master seed; every `key = value` entry overrides one field.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let raw = tokenize(text)?;

    let mut pipeline: Option<PipelineKind> = None;
    let mut master_seed: u64 = 0;
    let mut out_dir: Option<String> = None;
    for (line, key, value) in &raw.top {
        match key.as_str() {
            "pipeline" => {
                pipeline =
                    Some(value.parse().map_err(|_| {
                        parse_err(*line, format!("unknown pipeline `{value}`"))
                    })?)
            }
            "master_seed" => master_seed = parse(*line, key, value)?,
            "out_dir" => out_dir = Some(value.clone()),
            other => return Err(parse_err(*line, format!("unknown top-level key `{other}`"))),
        }
    }
    let pipeline = pipeline.ok_or_else(|| parse_err(0, "missing required key `pipeline`"))?;
    let mut config = ExperimentConfig::default_for(pipeline, master_seed);
    config.out_dir = out_dir;

    for (section, entries) in &raw.sections {
        for (line, key, value) in entries {
            let line = *line;
            match (section.as_str(), key.as_str()) {
                ("world", "num_concepts") => config.world.num_concepts = parse(line, key, value)?,
                ("world", "num_answer_tokens") => {
                    config.world.num_answer_tokens = parse(line, key, value)?
                }
                ("world", "num_slots") => config.world.num_slots = parse(line, key, value)?,
                ("world", "values_per_slot") => {
                    config.world.values_per_slot = parse(line, key, value)?
                }
                ("world", "zipf_exponent") => config.world.zipf_exponent = parse(line, key, value)?,
                ("world", "corpus_size") => config.world.corpus_size = parse(line, key, value)?,
                ("world", "doc_noise") => config.world.doc_noise = parse(line, key, value)?,
                ("world", "seed") => config.world.seed = parse(line, key, value)?,

                ("model", "dim") => config.dim = parse(line, key, value)?,
                ("model", "hidden") => {
                    let units: usize = parse(line, key, value)?;
                    config.hidden = (units > 0).then_some(units);
                }

                ("pretrain", _) => apply_train_key(&mut config.pretrain, line, key, value)?,
                ("sft", "relabel") => config.sft.relabel = parse(line, key, value)?,
                ("sft", "threshold") => {
                    let v: f64 = parse(line, key, value)?;
                    let metric = config
                        .sft
                        .threshold
                        .map(|t| t.metric)
                        .unwrap_or(Metric::SftNll);
                    config.sft.threshold = Some(Threshold { value: v, metric });
                }
                ("sft", "metric") => {
                    let metric: Metric = parse(line, key, value)?;
                    let v = config.sft.threshold.map(|t| t.value).unwrap_or(0.0);
                    config.sft.threshold = Some(Threshold { value: v, metric });
                }
                ("sft", "inject") => {
                    config.sft.injected_label_dist = Some(parse_f64_list(line, key, value)?)
                }
                ("sft", "rebalance") => {
                    config.sft.rebalance_familiar_fraction = Some(parse(line, key, value)?)
                }
                ("sft", _) => apply_train_key(&mut config.sft.train, line, key, value)?,

                ("rl", "algorithm") | ("rl", "algo") => {
                    config.rl.algorithm = parse(line, key, value)?
                }
                ("rl", "clip_ratio") => config.rl.clip_ratio = parse(line, key, value)?,
                ("rl", "kl_coefficient") => config.rl.kl_coefficient = parse(line, key, value)?,
                ("rl", "rollouts_per_prompt") => {
                    config.rl.rollouts_per_prompt = parse(line, key, value)?
                }
                ("rl", "iterations") => config.rl.iterations = parse(line, key, value)?,
                ("rl", "prompts_per_iter") => {
                    config.rl.prompts_per_iter = parse(line, key, value)?
                }
                ("rl", "inner_steps") => config.rl.inner_steps = parse(line, key, value)?,
                ("rl", "learning_rate") => config.rl.learning_rate = parse(line, key, value)?,
                ("rl", "weight_decay") => config.rl.weight_decay = parse(line, key, value)?,
                ("rl", "embedding_lr_scale") => {
                    config.rl.embedding_lr_scale = parse(line, key, value)?
                }
                ("rl", "seed") => config.rl.seed = parse(line, key, value)?,

                ("rmod", "n") => config.rm_n = parse(line, key, value)?,
                ("rmod", "q") => config.rm_q = parse(line, key, value)?,
                ("rmod", _) => apply_train_key(&mut config.rm_train, line, key, value)?,

                ("eval", "n_buckets") => config.n_buckets = parse(line, key, value)?,
                ("eval", "samples_per_prompt") => {
                    config.eval_samples_per_prompt = parse(line, key, value)?
                }
                ("eval", "split") => {
                    let fs = parse_f64_list(line, key, value)?;
                    if fs.len() != 2 {
                        return Err(parse_err(line, "split needs two fractions"));
                    }
                    config.split_fractions = (fs[0], fs[1]);
                }

                (section, key) => {
                    return Err(parse_err(
                        line,
                        format!("unknown key `{key}` in section `[{section}]`"),
                    ))
                }
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn apply_train_key(
    train: &mut crate::nnet::TrainConfig,
    line: usize,
    key: &str,
    value: &str,
) -> Result<()> {
    match key {
        "learning_rate" => train.learning_rate = parse(line, key, value)?,
        "steps" => train.steps = parse(line, key, value)?,
        "batch_size" => train.batch_size = parse(line, key, value)?,
        "optimizer" => train.optimizer = parse(line, key, value)?,
        "weight_decay" => train.weight_decay = parse(line, key, value)?,
        "embedding_lr_scale" => train.embedding_lr_scale = parse(line, key, value)?,
        "seed" => train.seed = parse(line, key, value)?,
        other => return Err(parse_err(line, format!("unknown training key `{other}`"))),
    }
    Ok(())
}

/// Seeds every stage config derives from the master seed unless overridden.
pub fn derive_stage_seeds(config: &mut ExperimentConfig, master: u64) {
    config.world.seed = stage_seed(master, "world");
    config.pretrain.seed = stage_seed(master, "pretrain");
    config.sft.train.seed = stage_seed(master, "sft");
    config.rl.seed = stage_seed(master, "rl");
    config.rm_train.seed = stage_seed(master, "rm-train");
}
