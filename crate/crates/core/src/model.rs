//! Miniature transformer encoder with per-layer adapter slots, an MLM head,
//! and a multi-label classification head pooled from the first position.

use crate::adapter::{AdapterStack, FreezeMask};
use crate::checkpoint;
use crate::data::{CLS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::seed;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const WEIGHT_INIT_STD: f64 = 0.02;
const ATTENTION_MASK_BIAS: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    /// When true the MLM projection reuses the transposed token embedding
    /// and only the MLM bias is a separate tensor.
    #[serde(default)]
    pub tie_mlm_head: bool,
}

impl ModelConfig {
    /// Desk-scale defaults; the configurable ceiling for sequence length is
    /// whatever the caller sets (production-scale setups use 256).
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 64,
            max_seq_len: 32,
            dropout: 0.0,
            tie_mlm_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::invalid("max_seq_len must be at least 2"));
        }
        if self.vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn signature(&self) -> ModelSignature {
        ModelSignature { d_model: self.d_model, n_layers: self.n_layers }
    }
}

/// The shape-determining identity adapters are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSignature {
    pub d_model: usize,
    pub n_layers: usize,
}

impl std::fmt::Display for ModelSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "d_model={}, n_layers={}", self.d_model, self.n_layers)
    }
}

/// Ordered emotion labels. The six-label default is fixed; a five-label
/// variant without `disgust` exists for label sets that lack it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn six() -> Self {
        LabelSpace {
            names: ["anger", "disgust", "fear", "joy", "sadness", "surprise"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn five() -> Self {
        LabelSpace {
            names: ["anger", "fear", "joy", "sadness", "surprise"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("label space must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n.is_empty() || !seen.insert(n) {
                return Err(Error::invalid(format!("invalid or duplicate label name `{n}`")));
            }
        }
        Ok(LabelSpace { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for LabelSpace {
    fn default() -> Self {
        LabelSpace::six()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub label_space: LabelSpace,
    pub token_embed: Tensor,
    pub pos_embed: Tensor,
    pub layers: Vec<EncoderLayer>,
    /// Untied MLM projection [d, vocab]; `None` when the head is tied.
    pub mlm_w: Option<Tensor>,
    pub mlm_b: Tensor,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
}

impl EncoderModel {
    pub fn new(config: ModelConfig, label_space: LabelSpace, model_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(model_seed, &["model-init"]);
        let d = config.d_model;
        let v = config.vocab_size;
        let f = config.ffn_dim;
        let l = label_space.len();

        let token_embed = Tensor::randn(vec![v, d], WEIGHT_INIT_STD, &mut rng);
        let pos_embed = Tensor::randn(vec![config.max_seq_len, d], WEIGHT_INIT_STD, &mut rng);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(EncoderLayer {
                wq: Tensor::randn(vec![d, d], WEIGHT_INIT_STD, &mut rng),
                bq: Tensor::zeros(vec![d]),
                wk: Tensor::randn(vec![d, d], WEIGHT_INIT_STD, &mut rng),
                bk: Tensor::zeros(vec![d]),
                wv: Tensor::randn(vec![d, d], WEIGHT_INIT_STD, &mut rng),
                bv: Tensor::zeros(vec![d]),
                wo: Tensor::randn(vec![d, d], WEIGHT_INIT_STD, &mut rng),
                bo: Tensor::zeros(vec![d]),
                ln1_gamma: Tensor::full(vec![d], 1.0),
                ln1_beta: Tensor::zeros(vec![d]),
                w1: Tensor::randn(vec![d, f], WEIGHT_INIT_STD, &mut rng),
                b1: Tensor::zeros(vec![f]),
                w2: Tensor::randn(vec![f, d], WEIGHT_INIT_STD, &mut rng),
                b2: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::full(vec![d], 1.0),
                ln2_beta: Tensor::zeros(vec![d]),
            });
        }
        let mlm_w = if config.tie_mlm_head {
            None
        } else {
            Some(Tensor::randn(vec![d, v], WEIGHT_INIT_STD, &mut rng))
        };
        let mlm_b = Tensor::zeros(vec![v]);
        let cls_w = Tensor::randn(vec![d, l], WEIGHT_INIT_STD, &mut rng);
        let cls_b = Tensor::zeros(vec![l]);

        Ok(EncoderModel {
            config,
            label_space,
            token_embed,
            pos_embed,
            layers,
            mlm_w,
            mlm_b,
            cls_w,
            cls_b,
        })
    }

    /// Re-initialize the MLM head from a derived seed; each MLM training run
    /// starts from its own head.
    pub fn reset_mlm_head(&mut self, run_seed: u64) {
        let mut rng = seed::stream(run_seed, &["mlm-head"]);
        if !self.config.tie_mlm_head {
            self.mlm_w = Some(Tensor::randn(
                vec![self.config.d_model, self.config.vocab_size],
                WEIGHT_INIT_STD,
                &mut rng,
            ));
        }
        self.mlm_b = Tensor::zeros(vec![self.config.vocab_size]);
    }

    /// Re-initialize the classification head from a derived seed; each task
    /// training run owns a fresh head.
    pub fn reset_cls_head(&mut self, run_seed: u64) {
        let mut rng = seed::stream(run_seed, &["cls-head"]);
        self.cls_w = Tensor::randn(
            vec![self.config.d_model, self.label_space.len()],
            WEIGHT_INIT_STD,
            &mut rng,
        );
        self.cls_b = Tensor::zeros(vec![self.label_space.len()]);
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.token".to_string(), &self.token_embed),
            ("embed.pos".to_string(), &self.pos_embed),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (part, t) in layer_parts(l) {
                out.push((format!("layer.{i}.{part}"), t));
            }
        }
        if let Some(w) = &self.mlm_w {
            out.push(("mlm.w".to_string(), w));
        }
        out.push(("mlm.b".to_string(), &self.mlm_b));
        out.push(("cls.w".to_string(), &self.cls_w));
        out.push(("cls.b".to_string(), &self.cls_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.token".to_string(), &mut self.token_embed),
            ("embed.pos".to_string(), &mut self.pos_embed),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (part, t) in layer_parts_mut(l) {
                out.push((format!("layer.{i}.{part}"), t));
            }
        }
        if let Some(w) = &mut self.mlm_w {
            out.push(("mlm.w".to_string(), w));
        }
        out.push(("mlm.b".to_string(), &mut self.mlm_b));
        out.push(("cls.w".to_string(), &mut self.cls_w));
        out.push(("cls.b".to_string(), &mut self.cls_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Frozen-base tensors are everything outside the two heads.
pub fn is_base_name(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("layer.")
}

pub fn is_mlm_head_name(name: &str) -> bool {
    name.starts_with("mlm.")
}

pub fn is_cls_head_name(name: &str) -> bool {
    name.starts_with("cls.")
}

fn layer_parts(l: &EncoderLayer) -> Vec<(&'static str, &Tensor)> {
    vec![
        ("attn.wq", &l.wq),
        ("attn.bq", &l.bq),
        ("attn.wk", &l.wk),
        ("attn.bk", &l.bk),
        ("attn.wv", &l.wv),
        ("attn.bv", &l.bv),
        ("attn.wo", &l.wo),
        ("attn.bo", &l.bo),
        ("ln1.gamma", &l.ln1_gamma),
        ("ln1.beta", &l.ln1_beta),
        ("ffn.w1", &l.w1),
        ("ffn.b1", &l.b1),
        ("ffn.w2", &l.w2),
        ("ffn.b2", &l.b2),
        ("ln2.gamma", &l.ln2_gamma),
        ("ln2.beta", &l.ln2_beta),
    ]
}

fn layer_parts_mut(l: &mut EncoderLayer) -> Vec<(&'static str, &mut Tensor)> {
    vec![
        ("attn.wq", &mut l.wq),
        ("attn.bq", &mut l.bq),
        ("attn.wk", &mut l.wk),
        ("attn.bk", &mut l.bk),
        ("attn.wv", &mut l.wv),
        ("attn.bv", &mut l.bv),
        ("attn.wo", &mut l.wo),
        ("attn.bo", &mut l.bo),
        ("ln1.gamma", &mut l.ln1_gamma),
        ("ln1.beta", &mut l.ln1_beta),
        ("ffn.w1", &mut l.w1),
        ("ffn.b1", &mut l.b1),
        ("ffn.w2", &mut l.w2),
        ("ffn.b2", &mut l.b2),
        ("ln2.gamma", &mut l.ln2_gamma),
        ("ln2.beta", &mut l.ln2_beta),
    ]
}

/// A padded batch of token id sequences plus the attention mask that
/// excludes pad positions.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
    /// 1.0 at visible positions, 0.0 at pads; shape [batch, seq].
    pub mask: Vec<f64>,
}

impl TokenBatch {
    pub fn new(seqs: &[Vec<usize>], config: &ModelConfig) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut seq = 0;
        for s in seqs {
            if s.is_empty() {
                return Err(Error::invalid("empty sequence in batch; tokenizer always emits cls"));
            }
            if s.len() > config.max_seq_len {
                return Err(Error::invalid(format!(
                    "sequence of {} tokens exceeds max_seq_len {}",
                    s.len(),
                    config.max_seq_len
                )));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= config.vocab_size) {
                return Err(Error::invalid(format!(
                    "token id {} out of range for vocab size {}",
                    bad, config.vocab_size
                )));
            }
            seq = seq.max(s.len());
        }
        let batch = seqs.len();
        let mut ids = vec![PAD_ID; batch * seq];
        let mut mask = vec![0.0; batch * seq];
        for (i, s) in seqs.iter().enumerate() {
            for (j, &id) in s.iter().enumerate() {
                ids[i * seq + j] = id;
                mask[i * seq + j] = 1.0;
            }
        }
        Ok(TokenBatch { ids, batch, seq, mask })
    }

    /// Convenience for inputs that are plain cls-prefixed sequences.
    pub fn single(tokens: Vec<usize>, config: &ModelConfig) -> Result<Self> {
        if tokens.first() != Some(&CLS_ID) {
            return Err(Error::invalid("sequence must start with the cls token"));
        }
        TokenBatch::new(&[tokens], config)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterLayerBinding {
    pub down_w: TensorId,
    pub down_b: TensorId,
    pub up_w: TensorId,
    pub up_b: TensorId,
}

#[derive(Debug, Clone)]
pub struct AdapterBinding {
    pub layers: Vec<AdapterLayerBinding>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerBinding {
    wq: TensorId,
    bq: TensorId,
    wk: TensorId,
    bk: TensorId,
    wv: TensorId,
    bv: TensorId,
    wo: TensorId,
    bo: TensorId,
    ln1_gamma: TensorId,
    ln1_beta: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    ln2_gamma: TensorId,
    ln2_beta: TensorId,
}

/// All graph leaves for one forward/backward pass: the model tensors plus
/// the active stack's adapters, with `requires_grad` taken from the freeze
/// mask.
pub struct ModelBinding {
    pub config: ModelConfig,
    token_embed: TensorId,
    pos_embed: TensorId,
    layers: Vec<LayerBinding>,
    mlm_w: Option<TensorId>,
    mlm_b: TensorId,
    cls_w: TensorId,
    cls_b: TensorId,
    pub adapters: Vec<AdapterBinding>,
    named: Vec<(String, TensorId)>,
}

impl ModelBinding {
    pub fn named_ids(&self) -> &[(String, TensorId)] {
        &self.named
    }
}

/// Clone model and stack tensors into graph leaves. Frozen tensors become
/// constants, so backward never materializes their gradients.
pub fn bind_model(
    graph: &mut Graph,
    model: &EncoderModel,
    stack: &AdapterStack,
    freeze: &FreezeMask,
) -> Result<ModelBinding> {
    let sig = model.config.signature();
    for entry in stack.entries() {
        if entry.adapter.signature != sig {
            return Err(Error::SignatureMismatch(format!(
                "adapter `{}` was built for {}, model is {}",
                entry.adapter.tag, entry.adapter.signature, sig
            )));
        }
    }

    let mut named = Vec::new();
    let mut bind =
        |graph: &mut Graph, name: String, t: &Tensor| -> Result<TensorId> {
            let id = graph.leaf_from(t.shape.clone(), t.data.clone(), !freeze.is_frozen(&name))?;
            named.push((name, id));
            Ok(id)
        };

    let token_embed = bind(graph, "embed.token".into(), &model.token_embed)?;
    let pos_embed = bind(graph, "embed.pos".into(), &model.pos_embed)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        layers.push(LayerBinding {
            wq: bind(graph, format!("layer.{i}.attn.wq"), &l.wq)?,
            bq: bind(graph, format!("layer.{i}.attn.bq"), &l.bq)?,
            wk: bind(graph, format!("layer.{i}.attn.wk"), &l.wk)?,
            bk: bind(graph, format!("layer.{i}.attn.bk"), &l.bk)?,
            wv: bind(graph, format!("layer.{i}.attn.wv"), &l.wv)?,
            bv: bind(graph, format!("layer.{i}.attn.bv"), &l.bv)?,
            wo: bind(graph, format!("layer.{i}.attn.wo"), &l.wo)?,
            bo: bind(graph, format!("layer.{i}.attn.bo"), &l.bo)?,
            ln1_gamma: bind(graph, format!("layer.{i}.ln1.gamma"), &l.ln1_gamma)?,
            ln1_beta: bind(graph, format!("layer.{i}.ln1.beta"), &l.ln1_beta)?,
            w1: bind(graph, format!("layer.{i}.ffn.w1"), &l.w1)?,
            b1: bind(graph, format!("layer.{i}.ffn.b1"), &l.b1)?,
            w2: bind(graph, format!("layer.{i}.ffn.w2"), &l.w2)?,
            b2: bind(graph, format!("layer.{i}.ffn.b2"), &l.b2)?,
            ln2_gamma: bind(graph, format!("layer.{i}.ln2.gamma"), &l.ln2_gamma)?,
            ln2_beta: bind(graph, format!("layer.{i}.ln2.beta"), &l.ln2_beta)?,
        });
    }
    let mlm_w = match &model.mlm_w {
        Some(w) => Some(bind(graph, "mlm.w".into(), w)?),
        None => None,
    };
    let mlm_b = bind(graph, "mlm.b".into(), &model.mlm_b)?;
    let cls_w = bind(graph, "cls.w".into(), &model.cls_w)?;
    let cls_b = bind(graph, "cls.b".into(), &model.cls_b)?;

    let mut adapters = Vec::new();
    for entry in stack.entries() {
        if entry.adapter.layers.len() != model.config.n_layers {
            return Err(Error::SignatureMismatch(format!(
                "adapter `{}` has {} layers, model has {}",
                entry.adapter.tag,
                entry.adapter.layers.len(),
                model.config.n_layers
            )));
        }
        let mut layer_binds = Vec::with_capacity(entry.adapter.layers.len());
        for (i, lw) in entry.adapter.layers.iter().enumerate() {
            let p = entry.adapter.name_prefix();
            layer_binds.push(AdapterLayerBinding {
                down_w: bind(graph, format!("{p}.layer.{i}.down_w"), &lw.down_w)?,
                down_b: bind(graph, format!("{p}.layer.{i}.down_b"), &lw.down_b)?,
                up_w: bind(graph, format!("{p}.layer.{i}.up_w"), &lw.up_w)?,
                up_b: bind(graph, format!("{p}.layer.{i}.up_b"), &lw.up_b)?,
            });
        }
        adapters.push(AdapterBinding { layers: layer_binds });
    }

    Ok(ModelBinding {
        config: model.config.clone(),
        token_embed,
        pos_embed,
        layers,
        mlm_w,
        mlm_b,
        cls_w,
        cls_b,
        adapters,
        named,
    })
}

/// Bottleneck adapters in stack order at one layer slot: each applies
/// `x + up(relu(down(x)))` to the running value.
pub fn apply_adapter_stack(
    graph: &mut Graph,
    adapters: &[AdapterBinding],
    layer: usize,
    input: TensorId,
) -> Result<TensorId> {
    let mut x = input;
    for binding in adapters {
        let a = &binding.layers[layer];
        let down = graph.matmul(x, a.down_w)?;
        let down = graph.add(down, a.down_b)?;
        let hidden = graph.relu(down)?;
        let up = graph.matmul(hidden, a.up_w)?;
        let up = graph.add(up, a.up_b)?;
        x = graph.add(x, up)?;
    }
    Ok(x)
}

/// Full encoder forward: embeddings, then per layer self-attention
/// (residual + layer norm) and FFN with the adapter stack applied to the
/// FFN output before the final residual + layer norm. Returns hidden states
/// of shape [batch, seq, d_model].
pub fn encode(
    graph: &mut Graph,
    binding: &ModelBinding,
    batch: &TokenBatch,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    let cfg = &binding.config;
    let (b, s, d) = (batch.batch, batch.seq, cfg.d_model);
    let h = cfg.n_heads;
    let hd = d / h;

    let tok = graph.embedding(binding.token_embed, &batch.ids, &[b, s])?;
    let positions: Vec<usize> = (0..s).collect();
    let pos = graph.embedding(binding.pos_embed, &positions, &[s])?;
    let mut x = graph.add(tok, pos)?;
    x = maybe_dropout(graph, x, cfg.dropout, &mut dropout_rng)?;

    // additive attention bias: 0 at visible keys, a large negative at pads
    let bias: Vec<f64> = batch.mask.iter().map(|&m| (1.0 - m) * ATTENTION_MASK_BIAS).collect();
    let mask_bias = graph.constant(vec![b, 1, 1, s], bias)?;

    for (layer_index, layer) in binding.layers.iter().enumerate() {
        // self-attention sublayer
        let q = linear(graph, x, layer.wq, layer.bq)?;
        let k = linear(graph, x, layer.wk, layer.bk)?;
        let v = linear(graph, x, layer.wv, layer.bv)?;
        let q = split_heads(graph, q, b, s, h, hd)?;
        let k = split_heads(graph, k, b, s, h, hd)?;
        let v = split_heads(graph, v, b, s, h, hd)?;
        let kt = graph.permute(k, &[0, 1, 3, 2])?;
        let scores = graph.matmul(q, kt)?;
        let scores = graph.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let scores = graph.add(scores, mask_bias)?;
        let attn = graph.softmax(scores)?;
        let ctx = graph.matmul(attn, v)?;
        let ctx = graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = graph.reshape(ctx, vec![b, s, d])?;
        let attn_out = linear(graph, ctx, layer.wo, layer.bo)?;
        let attn_out = maybe_dropout(graph, attn_out, cfg.dropout, &mut dropout_rng)?;
        let res = graph.add(x, attn_out)?;
        x = graph.layer_norm(res, layer.ln1_gamma, layer.ln1_beta)?;

        // FFN sublayer with the adapter slot on its output
        let hidden = linear(graph, x, layer.w1, layer.b1)?;
        let hidden = graph.gelu(hidden)?;
        let ffn_out = linear(graph, hidden, layer.w2, layer.b2)?;
        let adapted = apply_adapter_stack(graph, &binding.adapters, layer_index, ffn_out)?;
        let adapted = maybe_dropout(graph, adapted, cfg.dropout, &mut dropout_rng)?;
        let res = graph.add(x, adapted)?;
        x = graph.layer_norm(res, layer.ln2_gamma, layer.ln2_beta)?;
    }
    Ok(x)
}

fn linear(graph: &mut Graph, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
    let xw = graph.matmul(x, w)?;
    graph.add(xw, b)
}

fn split_heads(
    graph: &mut Graph,
    x: TensorId,
    b: usize,
    s: usize,
    h: usize,
    hd: usize,
) -> Result<TensorId> {
    let x = graph.reshape(x, vec![b, s, h, hd])?;
    graph.permute(x, &[0, 2, 1, 3])
}

fn maybe_dropout(
    graph: &mut Graph,
    x: TensorId,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    match rng {
        Some(r) if rate > 0.0 => graph.dropout(x, rate, *r),
        _ => Ok(x),
    }
}

/// Project every position to vocabulary logits: [batch, seq, vocab].
pub fn mlm_logits(graph: &mut Graph, binding: &ModelBinding, hidden: TensorId) -> Result<TensorId> {
    let proj = match binding.mlm_w {
        Some(w) => w,
        None => graph.permute(binding.token_embed, &[1, 0])?,
    };
    let logits = graph.matmul(hidden, proj)?;
    graph.add(logits, binding.mlm_b)
}

/// Pool the reserved first position through the linear head:
/// [batch, labels].
pub fn classify_logits(
    graph: &mut Graph,
    binding: &ModelBinding,
    hidden: TensorId,
) -> Result<TensorId> {
    let pooled = graph.pool_first(hidden)?;
    let logits = graph.matmul(pooled, binding.cls_w)?;
    graph.add(logits, binding.cls_b)
}

/// Parameter accounting for a model plus an adapter stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    /// Every model tensor: embeddings, encoder layers, and both heads.
    pub base_params: usize,
    /// Every adapter tensor in the stack, over all layers.
    pub adapter_params: usize,
    /// Tensors whose freeze flag is off.
    pub trainable_params: usize,
}

pub fn param_report(model: &EncoderModel, stack: &AdapterStack, freeze: &FreezeMask) -> ParamReport {
    let base_params = model.param_count();
    let adapter_params: usize =
        stack.entries().iter().map(|e| e.adapter.param_count()).sum();
    let mut trainable = 0usize;
    for (name, t) in model.named_tensors() {
        if !freeze.is_frozen(&name) {
            trainable += t.numel();
        }
    }
    for entry in stack.entries() {
        for (name, t) in entry.adapter.named_tensors() {
            if !freeze.is_frozen(&name) {
                trainable += t.numel();
            }
        }
    }
    ParamReport { base_params, adapter_params, trainable_params: trainable }
}

/// Write a model checkpoint: tensor directory plus `config.json` carrying
/// the model config and label space.
pub fn save_model(dir: &Path, model: &EncoderModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let named = model.named_tensors();
    checkpoint::save_tensors(dir, &named.iter().map(|(n, t)| (n.clone(), *t)).collect::<Vec<_>>())?;
    let config = serde_json::json!({
        "model": model.config,
        "label_space": model.label_space,
    });
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    std::fs::write(dir.join("config.json"), text)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<EncoderModel> {
    let config_path = dir.join("config.json");
    let text = std::fs::read_to_string(&config_path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let config: ModelConfig = serde_json::from_value(
        value
            .get("model")
            .cloned()
            .ok_or_else(|| Error::CorruptCheckpoint {
                file: config_path.display().to_string(),
                field: "model".into(),
                detail: "missing".into(),
            })?,
    )?;
    let label_space: LabelSpace = serde_json::from_value(
        value
            .get("label_space")
            .cloned()
            .ok_or_else(|| Error::CorruptCheckpoint {
                file: config_path.display().to_string(),
                field: "label_space".into(),
                detail: "missing".into(),
            })?,
    )?;

    let mut model = EncoderModel::new(config, label_space, 0)?;
    let loaded = checkpoint::load_tensors(dir)?;
    let mut by_name: std::collections::BTreeMap<String, Tensor> = loaded.into_iter().collect();
    for (name, slot) in model.named_tensors_mut() {
        let tensor = by_name.remove(&name).ok_or_else(|| Error::CorruptCheckpoint {
            file: dir.join(checkpoint::MANIFEST_FILE).display().to_string(),
            field: name.clone(),
            detail: "tensor missing from checkpoint".into(),
        })?;
        if tensor.shape != slot.shape {
            return Err(Error::CorruptCheckpoint {
                file: dir.join(checkpoint::MANIFEST_FILE).display().to_string(),
                field: name.clone(),
                detail: format!("shape {:?} does not match model {:?}", tensor.shape, slot.shape),
            });
        }
        *slot = tensor;
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::CorruptCheckpoint {
            file: dir.join(checkpoint::MANIFEST_FILE).display().to_string(),
            field: name,
            detail: "unexpected extra tensor".into(),
        });
    }
    Ok(model)
}
