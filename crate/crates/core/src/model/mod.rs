//! Tubelet-token spatio-temporal transformer that maps a window of `C`
//! clips to one anomaly score in (0, 1).
//!
//! Token sequence: `[z_cls, f_{1,1}, …, f_{C,N_t}]`, each tubelet feature
//! passed through an input projection. `L` pre-LN layers
//! (`ẑ = MSA(LN(z)) + z`, `z' = FFN(LN(ẑ)) + ẑ`) with a per-head 3D relative
//! position bias added to the attention logits, then a final LayerNorm and a
//! `d → 128 → 32 → 1` regressor (ReLU, ReLU, Sigmoid) on the CLS token.

mod bias;
mod checkpoint;
mod tokens;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use bias::{bias_lookup, BiasLayout, BiasTable};
pub use checkpoint::{
    checkpoint_sidecar_path, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint,
    CheckpointMeta, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC,
};
pub use tokens::{tokenize, tubelet_partition, window_tags, PositionTag, TokenSequence, TubeletGrid};

use crate::data::GridShape;
use crate::tensor::{Graph, NodeId, ParamSet, Tensor};
use crate::{Error, Result};

pub const FFN_MULTIPLIER: usize = 4;
pub const REGRESSOR_HIDDEN: [usize; 2] = [128, 32];
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const CLS_INIT_STD: f64 = 0.02;

/// Name prefix of the anomaly regressor; everything else is "transformer".
pub const REGRESSOR_PREFIX: &str = "regressor.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    /// Clips per input window (`C`).
    pub clips: usize,
    pub grid: GridShape,
    pub layers: usize,
    pub heads: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.clips == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::config("model", format!("extents must be positive: {self:?}")));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(Error::config("grid", format!("extents must be positive, got {}", self.grid)));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("d = {} is not divisible by {} heads", self.d, self.heads),
            ));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d / self.heads
    }

    /// Tokens per window including CLS: `1 + C·N_t`.
    pub fn tokens(&self) -> usize {
        1 + self.clips * self.grid.tubelets()
    }

    pub fn bias_layout(&self) -> BiasLayout {
        BiasLayout::new(self.clips, self.grid)
    }
}

/// Per layer, per head attention matrices of one window: `layers[l]` is
/// `[heads, N, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor>,
}

/// Graph handles produced by [`ModelParams::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[B]` anomaly scores.
    pub scores: NodeId,
    /// Per layer `[B, heads, N, N]` post-softmax attention.
    pub attention: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn uniform(dims: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(dims, |_| rng.random_range(-bound..=bound))
}

fn linear_init(p: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    p.insert(format!("{prefix}.weight"), uniform(vec![fan_in, fan_out], fan_in, rng));
    p.insert(format!("{prefix}.bias"), uniform(vec![fan_out], fan_in, rng));
}

fn norm_init(p: &mut ParamSet, prefix: &str, d: usize) {
    p.insert(format!("{prefix}.gamma"), Tensor::full(vec![d], 1.0));
    p.insert(format!("{prefix}.beta"), Tensor::zeros(vec![d]));
}

/// Deterministic initialization: linear weights and biases uniform in
/// `±1/√fan_in`, bias tables zero, `z_cls ~ N(0, 0.02²)`, LayerNorm
/// affines at identity.
pub fn init_params(seed: u64, config: ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d;
    let mut p = ParamSet::new();
    linear_init(&mut p, "embed", d, d, &mut rng);
    let cls = Normal::new(0.0, CLS_INIT_STD).expect("valid std");
    p.insert("cls_token", Tensor::from_fn(vec![d], |_| cls.sample(&mut rng)));
    for l in 0..config.layers {
        norm_init(&mut p, &format!("layers.{l}.ln1"), d);
        for proj in ["q", "k", "v", "o"] {
            linear_init(&mut p, &format!("layers.{l}.attn.{proj}"), d, d, &mut rng);
        }
        p.insert(
            format!("layers.{l}.attn.rel_bias"),
            Tensor::zeros(vec![config.heads, config.bias_layout().entries()]),
        );
        norm_init(&mut p, &format!("layers.{l}.ln2"), d);
        linear_init(&mut p, &format!("layers.{l}.ffn.fc1"), d, FFN_MULTIPLIER * d, &mut rng);
        linear_init(&mut p, &format!("layers.{l}.ffn.fc2"), FFN_MULTIPLIER * d, d, &mut rng);
    }
    norm_init(&mut p, "norm", d);
    let [h1, h2] = REGRESSOR_HIDDEN;
    linear_init(&mut p, "regressor.fc1", d, h1, &mut rng);
    linear_init(&mut p, "regressor.fc2", h1, h2, &mut rng);
    linear_init(&mut p, "regressor.fc3", h2, 1, &mut rng);
    Ok(ModelParams { config, params: p })
}

impl ModelParams {
    fn linear(&self, g: &mut Graph, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = g.param(&format!("{prefix}.weight"), self.params.get(&format!("{prefix}.weight"))?);
        let b = g.param(&format!("{prefix}.bias"), self.params.get(&format!("{prefix}.bias"))?);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }

    fn norm(&self, g: &mut Graph, x: NodeId, prefix: &str) -> Result<NodeId> {
        let gamma = g.param(&format!("{prefix}.gamma"), self.params.get(&format!("{prefix}.gamma"))?);
        let beta = g.param(&format!("{prefix}.beta"), self.params.get(&format!("{prefix}.beta"))?);
        let y = g.layer_norm(x, LAYER_NORM_EPS)?;
        let y = g.mul(y, gamma)?;
        Ok(g.add(y, beta)?)
    }

    /// `[B, N, d] → [B, heads, N, d/heads]`
    fn split_heads(&self, g: &mut Graph, x: NodeId, batch: usize, n: usize) -> Result<NodeId> {
        let c = &self.config;
        let y = g.reshape(x, &[batch, n, c.heads, c.head_width()])?;
        Ok(g.permute(y, &[0, 2, 1, 3])?)
    }

    fn attention(
        &self,
        g: &mut Graph,
        x: NodeId,
        layer: usize,
        bias_index: &[Option<usize>],
        batch: usize,
        n: usize,
    ) -> Result<(NodeId, NodeId)> {
        let c = &self.config;
        let prefix = format!("layers.{layer}.attn");
        let q = self.linear(g, x, &format!("{prefix}.q"))?;
        let k = self.linear(g, x, &format!("{prefix}.k"))?;
        let v = self.linear(g, x, &format!("{prefix}.v"))?;
        let q = self.split_heads(g, q, batch, n)?;
        let k = self.split_heads(g, k, batch, n)?;
        let v = self.split_heads(g, v, batch, n)?;
        let logits = g.matmul_t(q, k)?;
        let logits = g.scale(logits, 1.0 / (c.head_width() as f64).sqrt())?;
        let name = format!("{prefix}.rel_bias");
        let table = g.param(&name, self.params.get(&name)?);
        let bias = g.gather(table, bias_index)?;
        let bias = g.reshape(bias, &[c.heads, n, n])?;
        let logits = g.add(logits, bias)?;
        let attn = g.softmax(logits)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch, n, c.d])?;
        let out = self.linear(g, ctx, &format!("{prefix}.o"))?;
        Ok((out, attn))
    }

    /// Scores a batch of windows.
    ///
    /// `features` is `[B, C·N_t, d]` in token order; `tags` has `1 + C·N_t`
    /// entries starting with CLS and applies to every window in the batch.
    pub fn forward(&self, g: &mut Graph, features: Tensor, tags: &[PositionTag]) -> Result<ForwardOutput> {
        let c = &self.config;
        let dims = features.dims().to_vec();
        if dims.len() != 3 || dims[2] != c.d || dims[1] + 1 != c.tokens() {
            return Err(Error::incompatible(
                "window features",
                format!("{dims:?}"),
                format!("[B, {}, {}]", c.tokens() - 1, c.d),
            ));
        }
        if tags.len() != c.tokens() || tags[0] != PositionTag::Cls {
            return Err(Error::Data(format!(
                "expected {} position tags starting with CLS, got {}",
                c.tokens(),
                tags.len()
            )));
        }
        let (batch, n) = (dims[0], c.tokens());
        let bias_index = c.bias_layout().index_matrix(tags)?;

        let x = g.constant(features);
        let x = self.linear(g, x, "embed")?;
        let cls = g.param("cls_token", self.params.get("cls_token")?);
        let cls = g.broadcast_to(cls, &[batch, 1, c.d])?;
        let mut z = g.concat(&[cls, x], 1)?;

        let mut attention = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let h = self.norm(g, z, &format!("layers.{l}.ln1"))?;
            let (a, attn) = self.attention(g, h, l, &bias_index, batch, n)?;
            attention.push(attn);
            z = g.add(z, a)?;
            let h = self.norm(g, z, &format!("layers.{l}.ln2"))?;
            let h = self.linear(g, h, &format!("layers.{l}.ffn.fc1"))?;
            let h = g.relu(h)?;
            let h = self.linear(g, h, &format!("layers.{l}.ffn.fc2"))?;
            z = g.add(z, h)?;
        }

        let cls_out = g.narrow(z, 1, 0, 1)?;
        let cls_out = g.reshape(cls_out, &[batch, c.d])?;
        let h = self.norm(g, cls_out, "norm")?;
        let h = self.linear(g, h, "regressor.fc1")?;
        let h = g.relu(h)?;
        let h = self.linear(g, h, "regressor.fc2")?;
        let h = g.relu(h)?;
        let h = self.linear(g, h, "regressor.fc3")?;
        let s = g.sigmoid(h)?;
        let scores = g.reshape(s, &[batch])?;
        Ok(ForwardOutput { scores, attention })
    }

    /// Scores one window and returns its attention matrices.
    pub fn score_window(&self, tokens: &TokenSequence) -> Result<(f64, AttentionRecord)> {
        let fd = tokens.features.dims();
        let features = tokens.features.clone().reshape(vec![1, fd[0], fd[1]])?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, features, &tokens.tags)?;
        let s = g.value(out.scores).data()[0];
        let n = self.config.tokens();
        let layers = out
            .attention
            .iter()
            .map(|&a| g.value(a).clone().reshape(vec![self.config.heads, n, n]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((s, AttentionRecord { layers }))
    }

    pub fn bias_table(&self, layer: usize) -> Result<BiasTable> {
        Ok(BiasTable {
            layout: self.config.bias_layout(),
            values: self.params.get(&format!("layers.{layer}.attn.rel_bias"))?.clone(),
        })
    }
}

/// Scores one window; see [`ModelParams::score_window`].
pub fn score_window(params: &ModelParams, tokens: &TokenSequence) -> Result<(f64, AttentionRecord)> {
    params.score_window(tokens)
}

/// Slices window `index` out of a batched `[B, heads, N, N]` attention stack.
pub fn window_attention(g: &Graph, attention: &[NodeId], index: usize) -> Result<AttentionRecord> {
    let layers = attention
        .iter()
        .map(|&a| {
            let dims = g.dims(a);
            let per = dims[1] * dims[2] * dims[3];
            let data = g.value(a).data()[index * per..(index + 1) * per].to_vec();
            Tensor::new(vec![dims[1], dims[2], dims[3]], data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AttentionRecord { layers })
}
