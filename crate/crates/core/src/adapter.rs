//! Creation, stacking, freezing, swapping, and serialization of language and
//! task adapters.

use crate::checkpoint::{self, TensorMeta};
use crate::error::{Error, Result};
use crate::model::{
    is_base_name, is_cls_head_name, is_mlm_head_name, EncoderModel, ModelConfig, ModelSignature,
};
use crate::seed;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const ADAPTER_META_FILE: &str = "adapter.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterRole {
    Language,
    Task,
}

impl std::fmt::Display for AdapterRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdapterRole::Language => write!(f, "language"),
            AdapterRole::Task => write!(f, "task"),
        }
    }
}

/// Bottleneck width given either directly or as a divisor of d_model. The
/// default reads the conventional "size 16" as a reduction factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckSpec {
    Dimension(usize),
    ReductionFactor(usize),
}

impl Default for BottleneckSpec {
    fn default() -> Self {
        BottleneckSpec::ReductionFactor(16)
    }
}

impl BottleneckSpec {
    pub fn resolve(&self, d_model: usize) -> Result<usize> {
        match *self {
            BottleneckSpec::Dimension(n) => {
                if n == 0 {
                    return Err(Error::invalid("bottleneck dimension must be positive"));
                }
                Ok(n)
            }
            BottleneckSpec::ReductionFactor(r) => {
                if r == 0 || d_model % r != 0 {
                    return Err(Error::invalid(format!(
                        "reduction factor {r} does not divide d_model {d_model}"
                    )));
                }
                Ok(d_model / r)
            }
        }
    }
}

/// One layer's bottleneck weights: down [d, b], up [b, d] plus biases.
#[derive(Debug, Clone)]
pub struct AdapterLayerWeights {
    pub down_w: Tensor,
    pub down_b: Tensor,
    pub up_w: Tensor,
    pub up_b: Tensor,
}

/// A bottleneck adapter with one set of weights per encoder layer. The up
/// projection and all biases start at exactly zero, so a fresh adapter is
/// the identity.
#[derive(Debug, Clone)]
pub struct AdapterModule {
    pub role: AdapterRole,
    pub tag: String,
    pub bottleneck: usize,
    pub signature: ModelSignature,
    pub seed: u64,
    pub layers: Vec<AdapterLayerWeights>,
}

impl AdapterModule {
    pub fn name_prefix(&self) -> String {
        format!("adapter.{}.{}", self.role, self.tag)
    }

    pub fn params_per_layer(&self) -> usize {
        let d = self.signature.d_model;
        let b = self.bottleneck;
        d * b + b + b * d + d
    }

    pub fn param_count(&self) -> usize {
        self.params_per_layer() * self.layers.len()
    }

    /// Qualified tensor names as used in freeze masks and graph bindings.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let p = self.name_prefix();
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{p}.layer.{i}.down_w"), &l.down_w));
            out.push((format!("{p}.layer.{i}.down_b"), &l.down_b));
            out.push((format!("{p}.layer.{i}.up_w"), &l.up_w));
            out.push((format!("{p}.layer.{i}.up_b"), &l.up_b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let p = self.name_prefix();
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{p}.layer.{i}.down_w"), &mut l.down_w));
            out.push((format!("{p}.layer.{i}.down_b"), &mut l.down_b));
            out.push((format!("{p}.layer.{i}.up_w"), &mut l.up_w));
            out.push((format!("{p}.layer.{i}.up_b"), &mut l.up_b));
        }
        out
    }

    /// File-relative tensor names, without the role/tag prefix.
    fn file_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.down_w"), &l.down_w));
            out.push((format!("layer.{i}.down_b"), &l.down_b));
            out.push((format!("layer.{i}.up_w"), &l.up_w));
            out.push((format!("layer.{i}.up_b"), &l.up_b));
        }
        out
    }

    pub fn bitwise_eq(&self, other: &AdapterModule) -> bool {
        self.role == other.role
            && self.tag == other.tag
            && self.bottleneck == other.bottleneck
            && self.signature == other.signature
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(other.layers.iter()).all(|(a, b)| {
                a.down_w.bitwise_eq(&b.down_w)
                    && a.down_b.bitwise_eq(&b.down_b)
                    && a.up_w.bitwise_eq(&b.up_w)
                    && a.up_b.bitwise_eq(&b.up_b)
            })
    }

    pub fn check_signature(&self, config: &ModelConfig) -> Result<()> {
        if self.signature != config.signature() {
            return Err(Error::SignatureMismatch(format!(
                "adapter `{}` was built for {}, model is {}",
                self.tag,
                self.signature,
                config.signature()
            )));
        }
        Ok(())
    }
}

/// Build a fresh adapter: down weights from a seeded normal (std 0.02), up
/// weights and every bias exactly zero.
pub fn make_adapter(
    role: AdapterRole,
    tag: &str,
    config: &ModelConfig,
    bottleneck: BottleneckSpec,
    adapter_seed: u64,
) -> Result<AdapterModule> {
    if tag.is_empty() {
        return Err(Error::invalid("adapter tag must not be empty"));
    }
    config.validate()?;
    let b = bottleneck.resolve(config.d_model)?;
    let d = config.d_model;
    let mut rng = seed::stream(adapter_seed, &["adapter-init", tag]);
    let layers = (0..config.n_layers)
        .map(|_| AdapterLayerWeights {
            down_w: Tensor::randn(vec![d, b], crate::model::WEIGHT_INIT_STD, &mut rng),
            down_b: Tensor::zeros(vec![b]),
            up_w: Tensor::zeros(vec![b, d]),
            up_b: Tensor::zeros(vec![d]),
        })
        .collect();
    Ok(AdapterModule {
        role,
        tag: tag.to_string(),
        bottleneck: b,
        signature: config.signature(),
        seed: adapter_seed,
        layers,
    })
}

#[derive(Debug, Clone)]
pub struct StackEntry {
    pub adapter: AdapterModule,
    pub frozen: bool,
}

/// Ordered adapter composition at every layer slot: at most one language
/// adapter and at most one task adapter, language first.
#[derive(Debug, Clone)]
pub struct AdapterStack {
    entries: Vec<StackEntry>,
    pub base_frozen: bool,
}

impl AdapterStack {
    pub fn empty() -> Self {
        AdapterStack { entries: Vec::new(), base_frozen: true }
    }

    pub fn new(entries: Vec<StackEntry>) -> Result<Self> {
        let stack = AdapterStack { entries, base_frozen: true };
        stack.validate()?;
        Ok(stack)
    }

    fn validate(&self) -> Result<()> {
        let roles: Vec<AdapterRole> = self.entries.iter().map(|e| e.adapter.role).collect();
        let n_lang = roles.iter().filter(|r| **r == AdapterRole::Language).count();
        let n_task = roles.iter().filter(|r| **r == AdapterRole::Task).count();
        if n_lang > 1 || n_task > 1 {
            return Err(Error::invalid(
                "stack may hold at most one language adapter and one task adapter",
            ));
        }
        if roles == [AdapterRole::Task, AdapterRole::Language] {
            return Err(Error::invalid("language adapter must precede the task adapter"));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn language(&self) -> Option<&StackEntry> {
        self.entries.iter().find(|e| e.adapter.role == AdapterRole::Language)
    }

    pub fn task(&self) -> Option<&StackEntry> {
        self.entries.iter().find(|e| e.adapter.role == AdapterRole::Task)
    }

    pub fn task_mut(&mut self) -> Option<&mut StackEntry> {
        self.entries.iter_mut().find(|e| e.adapter.role == AdapterRole::Task)
    }

    pub fn language_mut(&mut self) -> Option<&mut StackEntry> {
        self.entries.iter_mut().find(|e| e.adapter.role == AdapterRole::Language)
    }

    pub fn entries_mut(&mut self) -> &mut [StackEntry] {
        &mut self.entries
    }

    /// Remove and return the task adapter, e.g. after training completes.
    pub fn take_task(&mut self) -> Option<AdapterModule> {
        let pos = self.entries.iter().position(|e| e.adapter.role == AdapterRole::Task)?;
        Some(self.entries.remove(pos).adapter)
    }

    /// Remove and return the language adapter.
    pub fn take_language(&mut self) -> Option<AdapterModule> {
        let pos = self.entries.iter().position(|e| e.adapter.role == AdapterRole::Language)?;
        Some(self.entries.remove(pos).adapter)
    }
}

/// Replace (or insert) the language adapter, leaving every other entry
/// untouched. The incoming adapter is always frozen in the returned stack.
pub fn swap_language_adapter(stack: &AdapterStack, new_la: AdapterModule) -> Result<AdapterStack> {
    if new_la.role != AdapterRole::Language {
        return Err(Error::invalid(format!(
            "swap_language_adapter needs a language adapter, got role `{}`",
            new_la.role
        )));
    }
    for entry in stack.entries() {
        if entry.adapter.signature != new_la.signature {
            return Err(Error::SignatureMismatch(format!(
                "incoming adapter `{}` is {}, stack is {}",
                new_la.tag, new_la.signature, entry.adapter.signature
            )));
        }
    }
    let mut entries = stack.entries.clone();
    match entries.iter().position(|e| e.adapter.role == AdapterRole::Language) {
        Some(pos) => entries[pos] = StackEntry { adapter: new_la, frozen: true },
        None => entries.insert(0, StackEntry { adapter: new_la, frozen: true }),
    }
    AdapterStack::new(entries).map(|mut s| {
        s.base_frozen = stack.base_frozen;
        s
    })
}

/// Which head trains alongside the stack's unfrozen adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainObjective {
    MaskedLm,
    MultiLabel,
}

/// The set of tensor names excluded from gradient updates.
#[derive(Debug, Clone, Default)]
pub struct FreezeMask {
    frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    /// Mask that freezes the model and the whole stack; the inference
    /// configuration.
    pub fn all(model: &EncoderModel, stack: &AdapterStack) -> Self {
        let mut frozen = BTreeSet::new();
        for (name, _) in model.named_tensors() {
            frozen.insert(name);
        }
        for entry in stack.entries() {
            for (name, _) in entry.adapter.named_tensors() {
                frozen.insert(name);
            }
        }
        FreezeMask { frozen }
    }
}

/// Compute the freeze mask for a training objective: the base model is
/// always frozen, frozen stack entries stay frozen, and only the head the
/// objective trains stays live. For MLM that leaves the unfrozen adapters
/// plus the MLM head; for multi-label classification the unfrozen adapters
/// plus the classification head.
pub fn apply_freeze(
    model: &EncoderModel,
    stack: &AdapterStack,
    objective: TrainObjective,
) -> Result<FreezeMask> {
    stack.validate()?;
    if !stack.base_frozen {
        return Err(Error::invalid("unfrozen base models are not supported; adapters only"));
    }
    for entry in stack.entries() {
        entry.adapter.check_signature(&model.config)?;
    }
    let mut frozen = BTreeSet::new();
    for (name, _) in model.named_tensors() {
        let head_live = match objective {
            TrainObjective::MaskedLm => is_mlm_head_name(&name),
            TrainObjective::MultiLabel => is_cls_head_name(&name),
        };
        if is_base_name(&name) || !head_live {
            frozen.insert(name);
        }
    }
    for entry in stack.entries() {
        if entry.frozen {
            for (name, _) in entry.adapter.named_tensors() {
                frozen.insert(name);
            }
        }
    }
    Ok(FreezeMask { frozen })
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterMeta {
    role: AdapterRole,
    tag: String,
    bottleneck: usize,
    signature: ModelSignature,
    seed: u64,
    tensors: BTreeMap<String, TensorMeta>,
}

/// Write an adapter checkpoint: `adapter.json` with role, tag, bottleneck,
/// model signature, creation seed, and the tensor manifest, next to
/// `weights.bin`.
pub fn save_adapter(adapter: &AdapterModule, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (tensors, blob) = checkpoint::encode_tensors(&adapter.file_tensors())?;
    let meta = AdapterMeta {
        role: adapter.role,
        tag: adapter.tag.clone(),
        bottleneck: adapter.bottleneck,
        signature: adapter.signature,
        seed: adapter.seed,
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(dir.join(ADAPTER_META_FILE), text)?;
    std::fs::write(dir.join(checkpoint::WEIGHTS_FILE), blob)?;
    Ok(())
}

pub fn load_adapter(dir: &Path) -> Result<AdapterModule> {
    let meta_path = dir.join(ADAPTER_META_FILE);
    let meta_name = meta_path.display().to_string();
    let text = std::fs::read_to_string(&meta_path)?;
    let meta: AdapterMeta = serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint {
        file: meta_name.clone(),
        field: "adapter.json".into(),
        detail: e.to_string(),
    })?;
    if meta.tag.is_empty() {
        return Err(Error::CorruptCheckpoint {
            file: meta_name.clone(),
            field: "tag".into(),
            detail: "empty".into(),
        });
    }
    let blob = std::fs::read(dir.join(checkpoint::WEIGHTS_FILE))?;
    let tensors = checkpoint::read_manifest_blob(&meta.tensors, &blob, &meta_name)?;
    let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();

    let d = meta.signature.d_model;
    let b = meta.bottleneck;
    let mut layers = Vec::with_capacity(meta.signature.n_layers);
    for i in 0..meta.signature.n_layers {
        let mut take = |part: &str, shape: &[usize]| -> Result<Tensor> {
            let name = format!("layer.{i}.{part}");
            let t = by_name.remove(&name).ok_or_else(|| Error::CorruptCheckpoint {
                file: meta_name.clone(),
                field: name.clone(),
                detail: "tensor missing".into(),
            })?;
            if t.shape != shape {
                return Err(Error::CorruptCheckpoint {
                    file: meta_name.clone(),
                    field: format!("{name}.shape"),
                    detail: format!("expected {:?}, got {:?}", shape, t.shape),
                });
            }
            Ok(t)
        };
        layers.push(AdapterLayerWeights {
            down_w: take("down_w", &[d, b])?,
            down_b: take("down_b", &[b])?,
            up_w: take("up_w", &[b, d])?,
            up_b: take("up_b", &[d])?,
        });
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::CorruptCheckpoint {
            file: meta_name,
            field: name,
            detail: "unexpected extra tensor".into(),
        });
    }
    Ok(AdapterModule {
        role: meta.role,
        tag: meta.tag,
        bottleneck: meta.bottleneck,
        signature: meta.signature,
        seed: meta.seed,
        layers,
    })
}

/// Load an adapter and verify it fits the model.
pub fn load_adapter_for(dir: &Path, config: &ModelConfig) -> Result<AdapterModule> {
    let adapter = load_adapter(dir)?;
    adapter.check_signature(config)?;
    Ok(adapter)
}
