//! Synthetic long-tailed knowledge worlds.
//!
//! A world is a set of concepts, each carrying one ground-truth value per
//! slot. Concept frequency follows a Zipf law over rank, the pretraining
//! corpus is sampled from those frequencies (with optional label noise),
//! and finetune/eval datasets are disjoint concept splits stratified by
//! frequency decile so both span the whole familiarity spectrum.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hedging::{SlotTarget, SupervisionSignal, TargetResponse};
use crate::rng::{item_seed, rng_from_seed, stage_seed, SplitMix64};
use crate::stats::pairwise_sum;

/// Number of regular answer letters (A–D).
pub const MC_ANSWERS: usize = 4;
/// Token index of the abstain option E when the answer head has 5 tokens.
pub const ABSTAIN_TOKEN: usize = 4;
/// Number of frequency deciles used for stratified splits.
pub const NUM_DECILES: usize = 10;

/// Answer token index to display letter.
pub fn answer_letter(token: usize) -> char {
    (b'A' + token as u8) as char
}

/// Parameters of a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_concepts: usize,
    /// 4 for A–D, 5 when the abstain token E is enabled.
    pub num_answer_tokens: usize,
    /// Long-form fact slots per concept.
    pub num_slots: usize,
    pub values_per_slot: usize,
    pub zipf_exponent: f64,
    /// Number of pretraining documents to sample.
    pub corpus_size: usize,
    /// Probability a document states a wrong value.
    pub doc_noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            num_concepts: 1000,
            num_answer_tokens: MC_ANSWERS,
            num_slots: 5,
            values_per_slot: 8,
            zipf_exponent: 1.2,
            corpus_size: 50_000,
            doc_noise: 0.05,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_concepts == 0 {
            return Err(Error::Config {
                field: "num_concepts",
                reason: "must be positive".into(),
            });
        }
        if self.num_answer_tokens != 4 && self.num_answer_tokens != 5 {
            return Err(Error::Config {
                field: "num_answer_tokens",
                reason: format!("must be 4 or 5, got {}", self.num_answer_tokens),
            });
        }
        if self.num_slots == 0 {
            return Err(Error::Config { field: "num_slots", reason: "must be positive".into() });
        }
        // The answer letter is the slot-0 value reduced mod 4; requiring a
        // multiple of 4 keeps ground-truth letters exactly uniform in law.
        if self.values_per_slot < MC_ANSWERS || self.values_per_slot % MC_ANSWERS != 0 {
            return Err(Error::Config {
                field: "values_per_slot",
                reason: format!("must be a positive multiple of 4, got {}", self.values_per_slot),
            });
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::Config {
                field: "zipf_exponent",
                reason: format!("must be nonnegative, got {}", self.zipf_exponent),
            });
        }
        if self.corpus_size == 0 {
            return Err(Error::Config { field: "corpus_size", reason: "must be positive".into() });
        }
        if !(0.0..0.5).contains(&self.doc_noise) {
            return Err(Error::Config {
                field: "doc_noise",
                reason: format!("must lie in [0, 0.5), got {}", self.doc_noise),
            });
        }
        Ok(())
    }
}

/// A knowledge item: ground-truth values per slot plus realized frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    /// 1-based frequency rank; weights are proportional to rank^(−zipf).
    pub rank: usize,
    pub truth: Vec<u16>,
    /// Documents mentioning this concept in the sampled corpus.
    pub pretrain_count: u64,
}

impl Concept {
    /// Ground-truth answer token for the multiple-choice task.
    pub fn mc_answer(&self) -> usize {
        self.truth[0] as usize % MC_ANSWERS
    }
}

/// One pretraining document: a (concept, slot, value) statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Document {
    pub concept_id: u32,
    pub slot: u16,
    pub stated_value: u16,
}

/// Query task tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Mc,
    LongForm,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mc => "mc",
            Task::LongForm => "longform",
        }
    }
}

/// A query plus its supervision signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub concept_id: usize,
    pub task: Task,
    pub supervision: SupervisionSignal,
}

/// Disjoint finetune/eval concept splits, both spanning every decile.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub finetune_ids: Vec<usize>,
    pub eval_ids: Vec<usize>,
}

/// A generated world: concepts plus their Zipf frequency weights.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub concepts: Vec<Concept>,
    /// Normalized sampling weights, nonincreasing in rank.
    pub weights: Vec<f64>,
}

/// Normalized Zipf weights over `n` ranks: w_r ∝ r^(−exponent).
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let z = pairwise_sum(&raw);
    raw.into_iter().map(|w| w / z).collect()
}

/// Build a world from a spec. Deterministic given the spec's seed.
pub fn build_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let weights = zipf_weights(spec.num_concepts, spec.zipf_exponent);
    let mut rng = rng_from_seed(stage_seed(spec.seed, "world.truth"));
    let concepts = (0..spec.num_concepts)
        .map(|id| {
            let truth = (0..spec.num_slots)
                .map(|_| rng.gen_range(0..spec.values_per_slot) as u16)
                .collect();
            Concept { id, rank: id + 1, truth, pretrain_count: 0 }
        })
        .collect();
    Ok(World { spec: spec.clone(), concepts, weights })
}

impl World {
    pub fn concept(&self, id: usize) -> Result<&Concept> {
        self.concepts
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("concept {id} not in world")))
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Convenience: build the world and sample its corpus in one step.
    pub fn generate(spec: &WorldSpec) -> Result<(World, Vec<Document>)> {
        let mut world = build_world(spec)?;
        let corpus_seed = stage_seed(spec.seed, "world.corpus");
        let docs = sample_corpus(&mut world, corpus_seed);
        Ok((world, docs))
    }
}

/// Sample the pretraining corpus and record realized mention counts.
///
/// Each document draws from its own splitmix stream keyed by (seed, index),
/// so the output is identical no matter how generation is sharded.
pub fn sample_corpus(world: &mut World, corpus_seed: u64) -> Vec<Document> {
    let spec = world.spec.clone();
    let cdf: Vec<f64> = world
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    for c in &mut world.concepts {
        c.pretrain_count = 0;
    }
    let mut docs = Vec::with_capacity(spec.corpus_size);
    for i in 0..spec.corpus_size {
        let mut g = SplitMix64::new(item_seed(corpus_seed, i as u64));
        let u = g.next_f64();
        let concept_id = cdf.partition_point(|&c| c <= u).min(spec.num_concepts - 1);
        let slot = g.next_below(spec.num_slots as u64) as u16;
        let truth = world.concepts[concept_id].truth[slot as usize];
        let stated_value = if g.next_f64() < spec.doc_noise {
            // uniform over the wrong values
            let w = g.next_below(spec.values_per_slot as u64 - 1) as u16;
            if w >= truth {
                w + 1
            } else {
                w
            }
        } else {
            truth
        };
        world.concepts[concept_id].pretrain_count += 1;
        docs.push(Document { concept_id: concept_id as u32, slot, stated_value });
    }
    docs
}

/// Exact mention counts per concept, built in one pass over the corpus.
#[derive(Clone, Debug)]
pub struct CorpusIndex {
    counts: Vec<u64>,
}

impl CorpusIndex {
    pub fn build(num_concepts: usize, docs: &[Document]) -> CorpusIndex {
        let mut counts = vec![0u64; num_concepts];
        for d in docs {
            counts[d.concept_id as usize] += 1;
        }
        CorpusIndex { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Number of corpus documents mentioning the concept.
pub fn mention_count(index: &CorpusIndex, concept_id: usize) -> Result<u64> {
    index
        .counts
        .get(concept_id)
        .copied()
        .ok_or_else(|| Error::Lookup(format!("concept {concept_id} not in corpus index")))
}

/// Rank-order deciles: concepts chunked into ten nearly equal groups.
pub fn decile_groups(num_concepts: usize) -> Vec<std::ops::Range<usize>> {
    (0..NUM_DECILES)
        .map(|g| {
            let lo = g * num_concepts / NUM_DECILES;
            let hi = (g + 1) * num_concepts / NUM_DECILES;
            lo..hi
        })
        .collect()
}

/// Supervision for an example under a task: the ground-truth answer token
/// for multiple choice, the full fact list for long-form.
pub fn ground_truth_supervision(concept: &Concept, task: Task) -> SupervisionSignal {
    match task {
        Task::Mc => SupervisionSignal::Target(TargetResponse::Token(concept.mc_answer())),
        Task::LongForm => SupervisionSignal::Target(TargetResponse::Facts(
            concept.truth.iter().map(|&v| SlotTarget::Value(v)).collect(),
        )),
    }
}

/// Split concepts into disjoint finetune/eval example sets, stratified so
/// each frequency decile contributes the same fraction to each split.
pub fn make_datasets(
    world: &World,
    task: Task,
    split_fractions: (f64, f64),
    rng: &mut impl Rng,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let (f_ft, f_ev) = split_fractions;
    for (name, f) in [("finetune fraction", f_ft), ("eval fraction", f_ev)] {
        if !(0.0 < f && f < 1.0) {
            return Err(Error::Config {
                field: "split_fractions",
                reason: format!("{name} must lie in (0,1), got {f}"),
            });
        }
    }
    if f_ft + f_ev > 1.0 + 1e-12 {
        return Err(Error::Config {
            field: "split_fractions",
            reason: format!("fractions sum to {} > 1", f_ft + f_ev),
        });
    }
    let mut finetune_ids = Vec::new();
    let mut eval_ids = Vec::new();
    for group in decile_groups(world.num_concepts()) {
        let mut ids: Vec<usize> = group.clone().collect();
        let n_ft = (ids.len() as f64 * f_ft).round() as usize;
        let n_ev = (ids.len() as f64 * f_ev).round() as usize;
        if n_ft == 0 || n_ev == 0 || n_ft + n_ev > ids.len() {
            return Err(Error::Stratification(format!(
                "decile {:?} has {} concepts, cannot take {}+{} disjoint",
                group,
                ids.len(),
                n_ft,
                n_ev
            )));
        }
        ids.shuffle(rng);
        finetune_ids.extend_from_slice(&ids[..n_ft]);
        eval_ids.extend_from_slice(&ids[n_ft..n_ft + n_ev]);
    }
    finetune_ids.sort_unstable();
    eval_ids.sort_unstable();
    let to_examples = |ids: &[usize]| -> Vec<Example> {
        ids.iter()
            .map(|&id| Example {
                concept_id: id,
                task,
                supervision: ground_truth_supervision(&world.concepts[id], task),
            })
            .collect()
    };
    Ok((to_examples(&finetune_ids), to_examples(&eval_ids)))
}

// ---------------------------------------------------------------------------
// Persistence: versioned binary "HLW1" (world + corpus), CSV export.
// ---------------------------------------------------------------------------

const WORLD_MAGIC: &[u8; 4] = b"HLW1";
const WORLD_VERSION: u32 = 1;

/// Write world and corpus to a single versioned little-endian binary file.
pub fn save_world(path: &Path, world: &World, docs: &[Document]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.write_all(WORLD_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(WORLD_VERSION).map_err(io_err)?;
    let s = &world.spec;
    w.write_u64::<LittleEndian>(s.num_concepts as u64).map_err(io_err)?;
    w.write_u64::<LittleEndian>(s.num_answer_tokens as u64).map_err(io_err)?;
    w.write_u64::<LittleEndian>(s.num_slots as u64).map_err(io_err)?;
    w.write_u64::<LittleEndian>(s.values_per_slot as u64).map_err(io_err)?;
    w.write_f64::<LittleEndian>(s.zipf_exponent).map_err(io_err)?;
    w.write_u64::<LittleEndian>(s.corpus_size as u64).map_err(io_err)?;
    w.write_f64::<LittleEndian>(s.doc_noise).map_err(io_err)?;
    w.write_u64::<LittleEndian>(s.seed).map_err(io_err)?;
    for c in &world.concepts {
        for &v in &c.truth {
            w.write_u16::<LittleEndian>(v).map_err(io_err)?;
        }
        w.write_u64::<LittleEndian>(c.pretrain_count).map_err(io_err)?;
    }
    w.write_u64::<LittleEndian>(docs.len() as u64).map_err(io_err)?;
    for d in docs {
        w.write_u32::<LittleEndian>(d.concept_id).map_err(io_err)?;
        w.write_u16::<LittleEndian>(d.slot).map_err(io_err)?;
        w.write_u16::<LittleEndian>(d.stated_value).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Load a world and corpus written by [`save_world`].
pub fn load_world(path: &Path) -> Result<(World, Vec<Document>)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let fmt_err = |reason: &str| Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != WORLD_MAGIC {
        return Err(fmt_err("bad magic, not a world file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != WORLD_VERSION {
        return Err(fmt_err(&format!("unsupported version {version}")));
    }
    let spec = WorldSpec {
        num_concepts: r.read_u64::<LittleEndian>().map_err(io_err)? as usize,
        num_answer_tokens: r.read_u64::<LittleEndian>().map_err(io_err)? as usize,
        num_slots: r.read_u64::<LittleEndian>().map_err(io_err)? as usize,
        values_per_slot: r.read_u64::<LittleEndian>().map_err(io_err)? as usize,
        zipf_exponent: r.read_f64::<LittleEndian>().map_err(io_err)?,
        corpus_size: r.read_u64::<LittleEndian>().map_err(io_err)? as usize,
        doc_noise: r.read_f64::<LittleEndian>().map_err(io_err)?,
        seed: r.read_u64::<LittleEndian>().map_err(io_err)?,
    };
    spec.validate()?;
    let mut concepts = Vec::with_capacity(spec.num_concepts);
    for id in 0..spec.num_concepts {
        let mut truth = Vec::with_capacity(spec.num_slots);
        for _ in 0..spec.num_slots {
            let v = r.read_u16::<LittleEndian>().map_err(io_err)?;
            if v as usize >= spec.values_per_slot {
                return Err(fmt_err(&format!("truth value {v} out of range")));
            }
            truth.push(v);
        }
        let pretrain_count = r.read_u64::<LittleEndian>().map_err(io_err)?;
        concepts.push(Concept { id, rank: id + 1, truth, pretrain_count });
    }
    let ndocs = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let mut docs = Vec::with_capacity(ndocs);
    for _ in 0..ndocs {
        let concept_id = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let slot = r.read_u16::<LittleEndian>().map_err(io_err)?;
        let stated_value = r.read_u16::<LittleEndian>().map_err(io_err)?;
        if concept_id as usize >= spec.num_concepts {
            return Err(fmt_err("document references unknown concept"));
        }
        docs.push(Document { concept_id, slot, stated_value });
    }
    let weights = zipf_weights(spec.num_concepts, spec.zipf_exponent);
    Ok((World { spec, concepts, weights }, docs))
}

/// Export concepts as CSV: id, rank, count, then one column per slot truth.
pub fn export_world_csv(path: &Path, world: &World) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "rank".to_string(), "count".to_string()];
    header.extend((0..world.spec.num_slots).map(|s| format!("truth_{s}")));
    wtr.write_record(&header)?;
    for c in &world.concepts {
        let mut row = vec![c.id.to_string(), c.rank.to_string(), c.pretrain_count.to_string()];
        row.extend(c.truth.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
