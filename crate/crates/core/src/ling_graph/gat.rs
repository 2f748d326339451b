//! Edge-featured graph attention over dependency graphs.
//!
//! For receiver `i` and each `j` in its closed neighbourhood the logit is
//! `LeakyReLU(ω_src·Θxᵢ + ω_dst·Θxⱼ + ω_edge·Θₑeᵢⱼ)`, i.e. `ωᵀ[Θxᵢ ‖ Θxⱼ ‖ Θₑeᵢⱼ]`
//! with `ω` split into its three blocks. Weights are softmax-normalized over
//! the neighbourhood and the layer output is `Σⱼ αᵢⱼ Θxⱼ`. Layers are
//! stacked without an extra nonlinearity.

use autograd::ndarray::{ArrayD, Axis};
use autograd::{ParamId, ParamStore, Real, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{mask_column, Ctx};

use super::graph::GraphBatch;
use super::vocab::RelationVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct GatConfig {
    pub layers: usize,
    /// Node feature width, shared by every layer.
    pub width: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub upos_gains: bool,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            width: 64,
            edge_dim: 16,
            heads: 1,
            leaky_slope: 0.2,
            upos_gains: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatLayerParams {
    /// Node transform `Θ`, `[F, F]`.
    pub theta: ParamId,
    /// Edge transform `Θₑ`, `[Dₑ, F]`.
    pub theta_e: ParamId,
    /// Attention vector `ω` as `[3, heads, F/heads]` (receiver, sender, edge).
    pub omega: ParamId,
}

/// Parameters of the whole stack plus the edge embedding.
#[derive(Debug, Clone)]
pub struct GatStack {
    pub cfg: GatConfig,
    /// `φₑ`: one row per relation, `[R, Dₑ]`.
    pub edge_table: ParamId,
    /// `β_r`: one scalar gain per relation, `[R, 1]`.
    pub relation_gains: ParamId,
    /// One scalar gain per part-of-speech tag, `[U, 1]`.
    pub upos_gains: Option<ParamId>,
    pub layers: Vec<GatLayerParams>,
}

/// Per-layer word features `W₁ … W_L` (shallow to deep), `[B, N, F]` each.
pub struct HierarchicalTextFeatures<'t, S: Real> {
    pub layers: Vec<Var<'t, S>>,
    /// `[B, N]`, true on real words.
    pub word_mask: ArrayD<bool>,
}

impl<'t, S: Real> HierarchicalTextFeatures<'t, S> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn mask_column(&self) -> ArrayD<S> {
        mask_column(&self.word_mask)
    }
}

impl GatStack {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: GatConfig,
        vocab: &RelationVocab,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(Error::Config("GAT needs at least one layer".into()));
        }
        if cfg.heads == 0 || !cfg.width.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "GAT width {} not divisible by {} heads",
                cfg.width, cfg.heads
            )));
        }
        let r = vocab.relations.len();
        let f = cfg.width;
        let dh = f / cfg.heads;
        let edge_table = store.uniform(format!("{name}.edge_table"), &[r, cfg.edge_dim], 1.0, rng);
        let relation_gains = store.filled(format!("{name}.relation_gains"), &[r, 1], 1.0);
        let upos_gains = cfg
            .upos_gains
            .then(|| store.filled(format!("{name}.upos_gains"), &[vocab.upos_tags.len(), 1], 1.0));
        let layers = (0..cfg.layers)
            .map(|l| GatLayerParams {
                theta: store.uniform(format!("{name}.l{l}.theta"), &[f, f], (1.0 / f as f64).sqrt(), rng),
                theta_e: store.uniform(
                    format!("{name}.l{l}.theta_e"),
                    &[cfg.edge_dim, f],
                    (1.0 / cfg.edge_dim as f64).sqrt(),
                    rng,
                ),
                omega: store.uniform(
                    format!("{name}.l{l}.omega"),
                    &[3, cfg.heads, dh],
                    (1.0 / dh as f64).sqrt(),
                    rng,
                ),
            })
            .collect();
        Ok(Self {
            cfg,
            edge_table,
            relation_gains,
            upos_gains,
            layers,
        })
    }

    /// `β_r · φₑ(onehot(r))` for every directed entry, `[B·N·N, Dₑ]`; zero rows
    /// where there is no edge.
    pub fn edge_features<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, batch: &GraphBatch) -> Var<'t, S> {
        let rows = ctx.p(self.edge_table).gather_rows(&batch.relation_index);
        let gains = ctx.p(self.relation_gains).gather_rows(&batch.relation_index);
        rows * gains
    }

    /// Scales each node's input features by its tag gain.
    pub fn apply_upos_gains<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        x: Var<'t, S>,
        batch: &GraphBatch,
    ) -> Var<'t, S> {
        match self.upos_gains {
            Some(g) => {
                let gains = ctx
                    .p(g)
                    .gather_rows(&batch.upos_index)
                    .reshape(&[batch.batch, batch.max_nodes, 1]);
                x * gains
            }
            None => x,
        }
    }

    /// One attention layer. Returns the new node features `[B, N, F]` and the
    /// attention weights `[B, heads, N, N]` (receiver rows, sender columns).
    pub fn layer<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        index: usize,
        x: Var<'t, S>,
        batch: &GraphBatch,
        edge_feats: Var<'t, S>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let p = &self.layers[index];
        let (b, n) = (batch.batch, batch.max_nodes);
        let (h, f) = (self.cfg.heads, self.cfg.width);
        let dh = f / h;

        let projected = x.linear(ctx.p(p.theta));
        let per_head = projected.reshape(&[b, n, h, dh]);
        let omega = ctx.p(p.omega);
        let w_src = omega.narrow(0, 0, 1).reshape(&[h, dh]);
        let w_dst = omega.narrow(0, 1, 1).reshape(&[h, dh]);
        let w_edge = omega.narrow(0, 2, 1).reshape(&[h, dh]);

        // [B, N, h] -> [B, h, N, 1] and [B, h, 1, N]
        let s_src = (per_head * w_src)
            .sum_axis(3, false)
            .permute(&[0, 2, 1])
            .reshape(&[b, h, n, 1]);
        let s_dst = (per_head * w_dst)
            .sum_axis(3, false)
            .permute(&[0, 2, 1])
            .reshape(&[b, h, 1, n]);
        let s_edge = (edge_feats.linear(ctx.p(p.theta_e)).reshape(&[b, n, n, h, dh]) * w_edge)
            .sum_axis(4, false)
            .permute(&[0, 3, 1, 2]);

        let logits = (s_src + s_dst + s_edge).leaky_relu(self.cfg.leaky_slope);
        check_logits(&logits.value(), batch)?;
        let alpha = logits.softmax(Some(&batch.adjacency));

        let values = per_head.permute(&[0, 2, 1, 3]);
        let out = alpha
            .matmul(values)
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, n, f]);
        let out = out * ctx.constant(mask_column(&batch.word_mask));
        Ok((out, alpha))
    }

    /// Runs every layer on `[B, N, F]` word features, collecting each output.
    pub fn forward<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        words: Var<'t, S>,
        batch: &GraphBatch,
    ) -> Result<HierarchicalTextFeatures<'t, S>> {
        let shape = words.shape();
        if shape != [batch.batch, batch.max_nodes, self.cfg.width] {
            return Err(Error::Contract(format!(
                "word features {shape:?} do not match graph batch [{}, {}, {}]",
                batch.batch, batch.max_nodes, self.cfg.width
            )));
        }
        let edge_feats = self.edge_features(ctx, batch);
        let mut x = self.apply_upos_gains(ctx, words, batch);
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            x = self.layer(ctx, l, x, batch, edge_feats)?.0;
            layers.push(x);
        }
        Ok(HierarchicalTextFeatures {
            layers,
            word_mask: batch.word_mask.clone(),
        })
    }
}

fn check_logits<S: Real>(logits: &ArrayD<S>, batch: &GraphBatch) -> Result<()> {
    // [B, h, N, N]
    for (bi, per_b) in logits.axis_iter(Axis(0)).enumerate() {
        for per_h in per_b.axis_iter(Axis(0)) {
            for (i, row) in per_h.axis_iter(Axis(0)).enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if batch.adjacency[[bi, 0, i, j]] && !v.is_finite() {
                        return Err(Error::Numeric {
                            location: format!("attention logits of node {i} in graph {bi}"),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Features for the "no linguistic structure" ablation: the masked mean of
/// the word embeddings repeated at every word position, once per layer.
pub fn repeated_sentence_features<'t, S: Real>(
    ctx: Ctx<'t, '_, S>,
    words: Var<'t, S>,
    word_mask: &ArrayD<bool>,
    depth: usize,
) -> HierarchicalTextFeatures<'t, S> {
    let mask = mask_column::<S>(word_mask);
    let counts = mask.sum_axis(Axis(1)).mapv(|c| S::one() / c.max(S::one()));
    let counts = counts.insert_axis(Axis(1));
    let mask_v = ctx.constant(mask);
    let mean = (words * mask_v).sum_axis(1, true) * ctx.constant(counts);
    let repeated = mean * mask_v;
    HierarchicalTextFeatures {
        layers: vec![repeated; depth],
        word_mask: word_mask.clone(),
    }
}

