//! The four task-adapter training regimes, the MLM and multi-label
//! objectives, and the round-robin scheduler that cycles language adapters
//! while a task adapter trains.

use crate::adapter::{
    apply_freeze, make_adapter, swap_language_adapter, AdapterModule, AdapterRole, AdapterStack,
    BottleneckSpec, FreezeMask, StackEntry, TrainObjective,
};
use crate::data::{FamilyPartition, LabeledExample, Vocab, CLS_ID, MASK_ID, PAD_ID, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::graph::{sigmoid_scalar, Graph, TensorId};
use crate::model::{
    bind_model, classify_logits, encode, mlm_logits, EncoderModel, ModelBinding, TokenBatch,
};
use crate::optim::{AdamConfig, AdamState};
use crate::seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Tag given to every task adapter.
pub const TASK_TAG: &str = "emotion";

/// Column order regimes take in result tables.
pub const REGIME_COLUMN_ORDER: [&str; 4] = ["source_la_ta", "task_only", "tlr", "family_tlr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleGranularity {
    #[default]
    PerBatch,
    PerEpoch,
}

/// How TLR training pairs batches with the active language adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlrBatching {
    /// Draw from the active language's labeled data when it exists, else
    /// from the pooled multilingual set.
    #[default]
    LanguageMatched,
    Pooled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub max_epochs: usize,
    pub mask_rate: f64,
    pub seed: u64,
    pub threshold: f64,
    #[serde(default)]
    pub bottleneck: BottleneckSpec,
    #[serde(default)]
    pub tlr_cycle: CycleGranularity,
    #[serde(default)]
    pub tlr_batching: TlrBatching,
}

impl TrainConfig {
    /// Desk-scale profile: small budgets, lr 1e-3.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 8,
            lr: 1e-3,
            max_steps: 2_000,
            max_epochs: 100,
            mask_rate: 0.15,
            seed: 0,
            threshold: 0.5,
            bottleneck: BottleneckSpec::default(),
            tlr_cycle: CycleGranularity::default(),
            tlr_batching: TlrBatching::default(),
        }
    }

    /// Production-scale profile: lr 1e-5, batch 8, 100 epochs or 100k steps.
    pub fn paper() -> Self {
        TrainConfig { lr: 1e-5, max_steps: 100_000, ..TrainConfig::desk() }
    }

    /// Production-scale low-resource profile: 30k steps.
    pub fn paper_low_resource() -> Self {
        TrainConfig { max_steps: 30_000, ..TrainConfig::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::invalid(format!(
                "mask_rate {} outside the open interval (0,1)",
                self.mask_rate
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold {} outside the open interval (0,1)",
                self.threshold
            )));
        }
        if self.max_steps == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("max_steps and max_epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive and finite"));
        }
        Ok(())
    }
}

/// One of the four task-adapter training setups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Task adapter stacked on one frozen source-language adapter.
    SourceLaTa { source_tag: String },
    /// Task adapter alone, no language adapter.
    TaskOnly,
    /// Task adapter trained while cycling the frozen language adapters of
    /// all the given tags.
    Tlr { tags: Vec<String> },
    /// Cycling restricted to the language adapters of one family.
    FamilyTlr { family: Vec<String> },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::SourceLaTa { .. } => "source_la_ta",
            Regime::TaskOnly => "task_only",
            Regime::Tlr { .. } => "tlr",
            Regime::FamilyTlr { .. } => "family_tlr",
        }
    }

    pub fn scheduled_tags(&self) -> Option<&[String]> {
        match self {
            Regime::Tlr { tags } => Some(tags),
            Regime::FamilyTlr { family } => Some(family),
            _ => None,
        }
    }
}

/// Deterministic per-batch assignment of the active language adapter:
/// round-robin over a seeded initial permutation of the tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlrSchedule {
    order: Vec<String>,
    len: usize,
}

impl TlrSchedule {
    pub fn tag_at(&self, step: usize) -> &str {
        &self.order[step % self.order.len()]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn expanded(&self) -> Vec<String> {
        (0..self.len).map(|i| self.tag_at(i).to_string()).collect()
    }
}

pub fn make_tlr_schedule(tags: &[String], n_batches: usize, schedule_seed: u64) -> Result<TlrSchedule> {
    if tags.is_empty() {
        return Err(Error::invalid("TLR schedule needs at least one language tag"));
    }
    let unique: std::collections::HashSet<&String> = tags.iter().collect();
    if unique.len() != tags.len() {
        return Err(Error::invalid("TLR schedule tags must be unique"));
    }
    let mut order = tags.to_vec();
    let mut rng = seed::stream(schedule_seed, &["tlr-permutation"]);
    order.shuffle(&mut rng);
    Ok(TlrSchedule { order, len: n_batches })
}

/// The schedule a TLR training run with this config will follow; exposed so
/// audits can reconstruct it independently.
pub fn tlr_schedule_for(config: &TrainConfig, tags: &[String], n_batches: usize) -> Result<TlrSchedule> {
    make_tlr_schedule(tags, n_batches, seed::subseed(config.seed, &["tlr-schedule"]))
}

/// Result of applying the 80/10/10 masking policy to one batch.
#[derive(Debug, Clone)]
pub struct MlmMasking {
    pub masked: Vec<Vec<usize>>,
    /// (sequence index, token position) of each selected target.
    pub positions: Vec<(usize, usize)>,
    pub targets: Vec<usize>,
}

/// Select each eligible position independently with probability
/// `mask_rate`; of the selected, 80% become the mask token, 10% a random
/// vocabulary id, 10% stay unchanged. Pad, cls, and mask tokens are never
/// selectable. Zero selections is a legal outcome the caller skips.
pub fn mlm_mask(
    batch: &[Vec<usize>],
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MlmMasking> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::invalid(format!(
            "mask_rate {mask_rate} outside the open interval (0,1)"
        )));
    }
    for seq in batch {
        if seq.contains(&MASK_ID) {
            return Err(Error::invalid("batch already contains masked tokens"));
        }
    }
    let mut masked: Vec<Vec<usize>> = batch.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, seq) in batch.iter().enumerate() {
        for (j, &id) in seq.iter().enumerate() {
            if id == PAD_ID || id == CLS_ID || id == MASK_ID {
                continue;
            }
            if rng.gen::<f64>() >= mask_rate {
                continue;
            }
            positions.push((i, j));
            targets.push(id);
            let r = rng.gen::<f64>();
            if r < 0.8 {
                masked[i][j] = MASK_ID;
            } else if r < 0.9 && vocab_size > RESERVED_TOKENS {
                masked[i][j] = rng.gen_range(RESERVED_TOKENS..vocab_size);
            }
            // else: keep the original token; it is still a prediction target
        }
    }
    Ok(MlmMasking { masked, positions, targets })
}

/// Mean per-label binary cross-entropy with sigmoid, from logits of shape
/// [batch, labels].
pub fn bce_multilabel_loss(graph: &mut Graph, logits: TensorId, targets: &[f64]) -> Result<TensorId> {
    let shape = graph.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid(format!(
            "bce_multilabel_loss expects [batch, labels] logits, got {:?}",
            shape
        )));
    }
    graph.bce_with_logits(logits, targets)
}

/// One `step, active_la_tag, loss` record; the audit surface for schedule
/// conformance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub step: usize,
    pub active_la_tag: String,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainLogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, step: usize, active_la_tag: &str, loss: f64) {
        self.records.push(TrainLogRecord { step, active_la_tag: active_la_tag.to_string(), loss });
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn active_tags(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.active_la_tag.as_str()).collect()
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::from("step,active_la_tag,loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.step, r.active_la_tag, r.loss);
        }
        out
    }
}

/// Deterministic epoch-shuffled index stream.
struct BatchStream {
    indices: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(range: std::ops::Range<usize>, mut rng: ChaCha8Rng) -> Self {
        let mut indices: Vec<usize> = range.collect();
        indices.shuffle(&mut rng);
        BatchStream { indices, pos: 0, rng }
    }

    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        if self.pos >= self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + batch_size).min(self.indices.len());
        let batch = self.indices[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Pull trainable gradients out of the graph into the external tensors,
/// apply one optimizer step, and clear the grad buffers.
fn apply_gradients(
    model: &mut EncoderModel,
    stack: &mut AdapterStack,
    graph: &Graph,
    binding: &ModelBinding,
    freeze: &FreezeMask,
    opt: &mut AdamState,
    opt_cfg: &AdamConfig,
) -> Result<()> {
    let mut grads: BTreeMap<&str, &[f64]> = BTreeMap::new();
    for (name, id) in binding.named_ids() {
        if !freeze.is_frozen(name) {
            if let Some(g) = graph.grad(*id) {
                grads.insert(name.as_str(), g);
            }
        }
    }
    let mut all: Vec<(String, &mut Tensor)> = model.named_tensors_mut();
    for entry in stack.entries_mut() {
        all.extend(entry.adapter.named_tensors_mut());
    }
    for (name, tensor) in all.iter_mut() {
        if let Some(g) = grads.get(name.as_str()) {
            tensor.accumulate_grad(g)?;
        }
    }
    {
        let mut trainable: Vec<(&str, &mut Tensor)> = all
            .iter_mut()
            .filter(|(name, _)| !freeze.is_frozen(name))
            .map(|(name, tensor)| (name.as_str(), &mut **tensor))
            .collect();
        opt.step(opt_cfg, &mut trainable)?;
    }
    for (_, tensor) in all.iter_mut() {
        tensor.zero_grad();
    }
    Ok(())
}

#[derive(Debug)]
pub struct LaTrainResult {
    pub adapter: AdapterModule,
    pub log: TrainLog,
}

/// Pretrain a fresh language adapter with the masked-LM objective; only the
/// adapter and the MLM head receive updates. The MLM head is re-seeded at
/// the start of the run so two runs with one seed are bitwise identical.
pub fn train_language_adapter(
    corpus: &[String],
    tag: &str,
    model: &mut EncoderModel,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<LaTrainResult> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::data(format!("empty unlabeled corpus for language `{tag}`")));
    }
    let adapter = make_adapter(
        AdapterRole::Language,
        tag,
        &model.config,
        config.bottleneck,
        seed::subseed(config.seed, &["la-init", tag]),
    )?;
    model.reset_mlm_head(seed::subseed(config.seed, &["mlm-head", tag]));
    let mut stack = AdapterStack::new(vec![StackEntry { adapter, frozen: false }])?;
    let freeze = apply_freeze(model, &stack, TrainObjective::MaskedLm)?;

    let sequences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| crate::data::tokenize(s, vocab, model.config.max_seq_len))
        .collect();

    let mut mask_rng = seed::stream(config.seed, &["mlm-mask", tag]);
    let mut dropout_rng = seed::stream(config.seed, &["dropout", tag]);
    let mut stream =
        BatchStream::new(0..sequences.len(), seed::stream(config.seed, &["la-batches", tag]));
    let steps_per_epoch = sequences.len().div_ceil(config.batch_size);
    let opt_cfg = AdamConfig::with_lr(config.lr);
    let mut opt = AdamState::new();
    let mut log = TrainLog::default();
    let mut step = 0usize;

    'outer: for _epoch in 0..config.max_epochs {
        for _ in 0..steps_per_epoch {
            if step >= config.max_steps {
                break 'outer;
            }
            let batch_idx = stream.next_batch(config.batch_size);
            let batch: Vec<Vec<usize>> =
                batch_idx.iter().map(|&i| sequences[i].clone()).collect();
            let masking = mlm_mask(&batch, config.mask_rate, model.config.vocab_size, &mut mask_rng)?;
            if masking.positions.is_empty() {
                continue; // nothing to predict in this batch
            }
            let token_batch = TokenBatch::new(&masking.masked, &model.config)?;
            let mut graph = Graph::new();
            let binding = bind_model(&mut graph, model, &stack, &freeze)?;
            let dropout = if model.config.dropout > 0.0 { Some(&mut dropout_rng) } else { None };
            let hidden = encode(&mut graph, &binding, &token_batch, dropout)?;
            let logits = mlm_logits(&mut graph, &binding, hidden)?;
            let rows: Vec<usize> =
                masking.positions.iter().map(|&(i, j)| i * token_batch.seq + j).collect();
            let loss = graph.masked_cross_entropy(logits, &rows, &masking.targets)?;
            graph.backward(loss)?;
            apply_gradients(model, &mut stack, &graph, &binding, &freeze, &mut opt, &opt_cfg)?;
            step += 1;
            log.push(step, tag, graph.value(loss));
        }
    }

    let adapter = stack
        .take_language()
        .ok_or_else(|| Error::invalid("language adapter vanished from its own stack"))?;
    Ok(LaTrainResult { adapter, log })
}

#[derive(Debug)]
pub struct TaTrainResult {
    pub adapter: AdapterModule,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub log: TrainLog,
    /// Languages whose labeled data entered training; eval protocol guards
    /// read this.
    pub trained_on_tags: Vec<String>,
}

struct TokenizedPool {
    /// (token ids, flat label targets) per example.
    examples: Vec<(Vec<usize>, Vec<f64>)>,
    /// index ranges per tag, in insertion order of `datasets`.
    ranges: BTreeMap<String, std::ops::Range<usize>>,
}

fn tokenize_pool(
    datasets: &BTreeMap<String, Vec<LabeledExample>>,
    vocab: &Vocab,
    model: &EncoderModel,
) -> Result<TokenizedPool> {
    let n_labels = model.label_space.len();
    let mut examples = Vec::new();
    let mut ranges = BTreeMap::new();
    for (tag, data) in datasets {
        let start = examples.len();
        for ex in data {
            if ex.labels.len() != n_labels {
                return Err(Error::data(format!(
                    "example `{}` has {} labels, model label space has {}",
                    ex.id,
                    ex.labels.len(),
                    n_labels
                )));
            }
            let tokens = crate::data::tokenize(&ex.text, vocab, model.config.max_seq_len);
            let targets: Vec<f64> =
                ex.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            examples.push((tokens, targets));
        }
        ranges.insert(tag.clone(), start..examples.len());
    }
    if examples.is_empty() {
        return Err(Error::data("no labeled training data provided"));
    }
    Ok(TokenizedPool { examples, ranges })
}

/// Train a task adapter plus classification head under one of the four
/// regimes. Cycling regimes swap the scheduled frozen language adapter in
/// before each batch; the base model and every language adapter stay
/// bitwise unchanged.
pub fn train_task_adapter(
    regime: &Regime,
    datasets: &BTreeMap<String, Vec<LabeledExample>>,
    la_bank: &BTreeMap<String, AdapterModule>,
    model: &mut EncoderModel,
    vocab: &Vocab,
    partition: Option<&FamilyPartition>,
    config: &TrainConfig,
) -> Result<TaTrainResult> {
    config.validate()?;

    // regime prevalidation, before any training state is touched
    let scheduled: Option<Vec<String>> = match regime {
        Regime::SourceLaTa { source_tag } => {
            if !la_bank.contains_key(source_tag) {
                return Err(Error::data(format!(
                    "no language adapter for source language `{source_tag}`"
                )));
            }
            if !datasets.contains_key(source_tag) {
                return Err(Error::data(format!(
                    "no labeled dataset for source language `{source_tag}`"
                )));
            }
            None
        }
        Regime::TaskOnly => None,
        Regime::Tlr { tags } | Regime::FamilyTlr { family: tags } => {
            if tags.is_empty() {
                return Err(Error::invalid("cycling regime needs at least one language tag"));
            }
            for tag in tags {
                if !la_bank.contains_key(tag) {
                    return Err(Error::data(format!(
                        "no language adapter for scheduled tag `{tag}`"
                    )));
                }
            }
            if let Regime::FamilyTlr { family } = regime {
                let partition = partition.ok_or_else(|| {
                    Error::invalid("family-restricted cycling needs a family partition")
                })?;
                let mut families: Vec<&str> = family
                    .iter()
                    .map(|t| {
                        partition.family_of(t).ok_or_else(|| {
                            Error::invalid(format!("tag `{t}` is not in the family partition"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                families.dedup();
                if families.len() > 1 {
                    return Err(Error::invalid(format!(
                        "family-restricted cycling tags span families {:?}",
                        families
                    )));
                }
            }
            Some(tags.clone())
        }
    };
    for tag in la_bank.keys() {
        if la_bank[tag].role != AdapterRole::Language {
            return Err(Error::invalid(format!("bank adapter `{tag}` is not a language adapter")));
        }
    }

    let pool = tokenize_pool(datasets, vocab, model)?;
    let steps_per_epoch = pool.examples.len().div_ceil(config.batch_size);
    let total_steps = config.max_steps.min(config.max_epochs * steps_per_epoch);

    let schedule = match &scheduled {
        Some(tags) => {
            let n = match config.tlr_cycle {
                CycleGranularity::PerBatch => total_steps,
                CycleGranularity::PerEpoch => config.max_epochs,
            };
            Some(tlr_schedule_for(config, tags, n)?)
        }
        None => None,
    };

    let task_adapter = make_adapter(
        AdapterRole::Task,
        TASK_TAG,
        &model.config,
        config.bottleneck,
        seed::subseed(config.seed, &["ta-init", regime.name()]),
    )?;
    model.reset_cls_head(seed::subseed(config.seed, &["cls-head", regime.name()]));

    let mut stack = match regime {
        Regime::SourceLaTa { source_tag } => AdapterStack::new(vec![
            StackEntry { adapter: la_bank[source_tag].clone(), frozen: true },
            StackEntry { adapter: task_adapter, frozen: false },
        ])?,
        Regime::TaskOnly => {
            AdapterStack::new(vec![StackEntry { adapter: task_adapter, frozen: false }])?
        }
        Regime::Tlr { .. } | Regime::FamilyTlr { .. } => {
            let schedule = schedule.as_ref().expect("cycling regime has a schedule");
            AdapterStack::new(vec![
                StackEntry { adapter: la_bank[schedule.tag_at(0)].clone(), frozen: true },
                StackEntry { adapter: task_adapter, frozen: false },
            ])?
        }
    };

    // one stream per language with data, plus the pooled fallback
    let mut pooled_stream = BatchStream::new(
        0..pool.examples.len(),
        seed::stream(config.seed, &["ta-batches", regime.name(), "pooled"]),
    );
    let mut tag_streams: BTreeMap<String, BatchStream> = BTreeMap::new();
    for (tag, range) in &pool.ranges {
        if !range.is_empty() {
            tag_streams.insert(
                tag.clone(),
                BatchStream::new(
                    range.clone(),
                    seed::stream(config.seed, &["ta-batches", regime.name(), tag]),
                ),
            );
        }
    }

    let mut dropout_rng = seed::stream(config.seed, &["dropout-ta", regime.name()]);
    let opt_cfg = AdamConfig::with_lr(config.lr);
    let mut opt = AdamState::new();
    let mut log = TrainLog::default();

    for step in 0..total_steps {
        // swap the scheduled language adapter in, if this step changes it
        let mut active_tag: Option<String> = stack.language().map(|e| e.adapter.tag.clone());
        if let Some(schedule) = &schedule {
            let cycle_index = match config.tlr_cycle {
                CycleGranularity::PerBatch => step,
                CycleGranularity::PerEpoch => step / steps_per_epoch,
            };
            let desired = schedule.tag_at(cycle_index);
            if active_tag.as_deref() != Some(desired) {
                stack = swap_language_adapter(&stack, la_bank[desired].clone())?;
                active_tag = Some(desired.to_string());
            }
        }

        let batch_idx = match (regime, config.tlr_batching) {
            (Regime::SourceLaTa { source_tag }, _) => tag_streams
                .get_mut(source_tag)
                .expect("validated above")
                .next_batch(config.batch_size),
            (Regime::TaskOnly, _) | (_, TlrBatching::Pooled) => {
                pooled_stream.next_batch(config.batch_size)
            }
            (_, TlrBatching::LanguageMatched) => {
                let tag = active_tag.as_deref().expect("cycling regime has an active tag");
                match tag_streams.get_mut(tag) {
                    Some(s) => s.next_batch(config.batch_size),
                    None => pooled_stream.next_batch(config.batch_size),
                }
            }
        };

        let batch: Vec<Vec<usize>> =
            batch_idx.iter().map(|&i| pool.examples[i].0.clone()).collect();
        let targets: Vec<f64> =
            batch_idx.iter().flat_map(|&i| pool.examples[i].1.iter().copied()).collect();

        let freeze = apply_freeze(model, &stack, TrainObjective::MultiLabel)?;
        let token_batch = TokenBatch::new(&batch, &model.config)?;
        let mut graph = Graph::new();
        let binding = bind_model(&mut graph, model, &stack, &freeze)?;
        let dropout = if model.config.dropout > 0.0 { Some(&mut dropout_rng) } else { None };
        let hidden = encode(&mut graph, &binding, &token_batch, dropout)?;
        let logits = classify_logits(&mut graph, &binding, hidden)?;
        let loss = bce_multilabel_loss(&mut graph, logits, &targets)?;
        graph.backward(loss)?;
        apply_gradients(model, &mut stack, &graph, &binding, &freeze, &mut opt, &opt_cfg)?;
        log.push(step + 1, active_tag.as_deref().unwrap_or("none"), graph.value(loss));
    }

    let adapter = stack
        .take_task()
        .ok_or_else(|| Error::invalid("task adapter vanished from its own stack"))?;
    let trained_on_tags = match regime {
        Regime::SourceLaTa { source_tag } => vec![source_tag.clone()],
        _ => datasets.keys().cloned().collect(),
    };
    Ok(TaTrainResult {
        adapter,
        head_w: model.cls_w.clone(),
        head_b: model.cls_b.clone(),
        log,
        trained_on_tags,
    })
}

/// Threshold sigmoid label probabilities: label predicted iff
/// `sigmoid(logit) >= threshold` (ties predict).
pub fn predict(
    model: &EncoderModel,
    stack: &AdapterStack,
    seqs: &[Vec<usize>],
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<Vec<bool>>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside the open interval (0,1)"
        )));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let freeze = FreezeMask::all(model, stack);
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(batch_size) {
        let token_batch = TokenBatch::new(chunk, &model.config)?;
        let mut graph = Graph::new();
        let binding = bind_model(&mut graph, model, stack, &freeze)?;
        let hidden = encode(&mut graph, &binding, &token_batch, None)?;
        let logits = classify_logits(&mut graph, &binding, hidden)?;
        let data = graph.data(logits);
        let n_labels = model.label_space.len();
        for i in 0..chunk.len() {
            out.push(
                (0..n_labels)
                    .map(|l| sigmoid_scalar(data[i * n_labels + l]) >= threshold)
                    .collect(),
            );
        }
    }
    Ok(out)
}
