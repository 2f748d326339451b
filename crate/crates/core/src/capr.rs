//! The motion denoiser: a stack of blocks that each fuse a sentence-level
//! text summary into the motion stream, run self-attention over frames and
//! cross-attend to one layer of word features.

use autograd::ndarray::{ArrayD, Axis, IxDyn};
use autograd::{ParamId, ParamStore, Real, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ling_graph::HierarchicalTextFeatures;
use crate::nn::{mask_column, sinusoid, sinusoid_table, Ctx, LayerNorm, Linear, Mlp};

/// Which text layer each block reads, counted from the block nearest the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOrder {
    /// Block 1 reads the deepest layer, the last block the shallowest.
    DeepFirst,
    ShallowFirst,
}

impl BlockOrder {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deep_first" => Ok(Self::DeepFirst),
            "shallow_first" => Ok(Self::ShallowFirst),
            other => Err(Error::Config(format!(
                "unknown block order {other:?} (expected deep_first or shallow_first)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeepFirst => "deep_first",
            Self::ShallowFirst => "shallow_first",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaprConfig {
    /// Motion channels `D`.
    pub channels: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub lambda: f64,
    pub order: BlockOrder,
    pub mlp_ratio: usize,
    /// Skip the sentence-level fusion.
    pub capr1_off: bool,
    /// Skip the word-level cross-attention.
    pub capr2_off: bool,
}

impl Default for CaprConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            width: 64,
            heads: 4,
            blocks: 3,
            lambda: 0.1,
            order: BlockOrder::DeepFirst,
            mlp_ratio: 2,
            capr1_off: false,
            capr2_off: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    /// No bias, so a zero value map makes the whole readout zero.
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        kv_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, false, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_width, width, false, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_width, width, false, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, false, rng),
            heads,
        }
    }

    /// Multi-head attention of `[B, T, W]` queries over `[B, N, F]` keys.
    /// `key_mask` is `[B, 1, 1, N]` when some keys are padding. Returns the
    /// readout `[B, T, W]` and the weights `[B, h, T, N]`.
    pub fn forward<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        x: Var<'t, S>,
        kv: Var<'t, S>,
        key_mask: Option<&ArrayD<bool>>,
        what: &str,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let (xs, ks) = (x.shape(), kv.shape());
        let (b, t, w) = (xs[0], xs[1], xs[2]);
        let n = ks[1];
        let h = self.heads;
        let dh = w / h;
        let split = |v: Var<'t, S>, len: usize| v.reshape(&[b, len, h, dh]).permute(&[0, 2, 1, 3]);
        let q = split(self.q.forward(ctx, x), t);
        let k = split(self.k.forward(ctx, kv), n);
        let v = split(self.v.forward(ctx, kv), n);
        let logits = q.matmul_t(k, false, true).scale(1.0 / (dh as f64).sqrt());
        if logits.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                location: format!("{what} logits"),
            });
        }
        let alpha = logits.softmax(key_mask);
        let read = alpha.matmul(v).permute(&[0, 2, 1, 3]).reshape(&[b, t, w]);
        Ok((self.out.forward(ctx, read), alpha))
    }
}

/// Width-preserving 1-d convolution along the word axis (kernel 3), a mean
/// over real words and a linear map to the model width.
#[derive(Debug, Clone)]
pub struct SentenceProjection {
    pub conv: Linear,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct CaprBlock {
    pub sentence: SentenceProjection,
    pub self_norm: LayerNorm,
    pub self_attn: Attention,
    pub cross_norm: LayerNorm,
    pub cross_attn: Attention,
    pub mlp_norm: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct MotionDenoiser {
    pub cfg: CaprConfig,
    pub text_width: usize,
    pub input: Linear,
    pub time_mlp: Mlp,
    pub blocks: Vec<CaprBlock>,
    pub out_norm: LayerNorm,
    pub output: Linear,
}

/// Everything one block needs from the text side.
pub struct BlockText<'t, 'a, S: Real> {
    pub words: Var<'t, S>,
    pub word_mask: &'a ArrayD<bool>,
}

/// Per-block intermediate values, kept for inspection in tests.
pub struct BlockTrace<'t, S: Real> {
    pub sentence: Var<'t, S>,
    pub self_alpha: Var<'t, S>,
    pub cross_alpha: Option<Var<'t, S>>,
}

fn check_mask(mask: &ArrayD<bool>) -> Result<()> {
    for (b, row) in mask.axis_iter(Axis(0)).enumerate() {
        if !row.iter().any(|&m| m) {
            return Err(Error::Contract(format!("caption {b} has no unmasked words")));
        }
    }
    Ok(())
}

/// `[B, 1, 1, N]` key mask for attention over words.
pub fn key_mask(word_mask: &ArrayD<bool>) -> ArrayD<bool> {
    let s = word_mask.shape();
    word_mask
        .clone()
        .into_shape_with_order(IxDyn(&[s[0], 1, 1, s[1]]))
        .unwrap()
}

/// Base sinusoid of each step passed through the two-layer embedder, `[B, 1, W]`.
pub fn timestep_embedding<'t, S: Real>(ctx: Ctx<'t, '_, S>, t: &[usize], width: usize, mlp: &Mlp) -> Var<'t, S> {
    let data = t
        .iter()
        .flat_map(|&s| sinusoid(s as f64, width))
        .map(S::lit)
        .collect();
    let base = ArrayD::from_shape_vec(IxDyn(&[t.len(), 1, width]), data).unwrap();
    mlp.forward(ctx, ctx.constant(base))
}

impl SentenceProjection {
    /// `S` for each caption, `[B, 1, W]`. The convolution wraps around within
    /// each caption's real words, so padding never enters a window and a
    /// caption repeated end to end yields the same summary.
    pub fn forward<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        words: Var<'t, S>,
        word_mask: &ArrayD<bool>,
    ) -> Result<Var<'t, S>> {
        check_mask(word_mask)?;
        let s = words.shape();
        let (b, n, f) = (s[0], s[1], s[2]);
        let mut prev = vec![None; b * n];
        let mut next = vec![None; b * n];
        for bi in 0..b {
            let len = (0..n).filter(|&k| word_mask[[bi, k]]).count();
            for k in 0..len {
                prev[bi * n + k] = Some(bi * n + (k + len - 1) % len);
                next[bi * n + k] = Some(bi * n + (k + 1) % len);
            }
        }
        let flat = words.reshape(&[b * n, f]);
        let window = Var::concat(&[flat.gather_rows(&prev), flat, flat.gather_rows(&next)], 1);
        let conv = self.conv.forward(ctx, window).reshape(&[b, n, f]);
        let mask = mask_column::<S>(word_mask);
        let inv_len = mask
            .sum_axis(Axis(1))
            .mapv(|c| S::one() / c)
            .insert_axis(Axis(1));
        let pooled = (conv * ctx.constant(mask)).sum_axis(1, true) * ctx.constant(inv_len);
        Ok(self.proj.forward(ctx, pooled))
    }
}

/// `X + λ (X ⊙ σ(X Sᵀ))`, with one relevance score per frame.
pub fn sentence_fusion<'t, S: Real>(x: Var<'t, S>, sentence: Var<'t, S>, lambda: f64) -> Result<Var<'t, S>> {
    let (xs, ss) = (x.shape(), sentence.shape());
    if xs.len() != 3 || ss.len() != 3 || ss[1] != 1 || xs[0] != ss[0] || xs[2] != ss[2] {
        return Err(Error::Contract(format!(
            "sentence fusion of {xs:?} with sentence feature {ss:?}"
        )));
    }
    if lambda == 0.0 {
        return Ok(x);
    }
    let relevance = x.matmul_t(sentence, false, true).sigmoid();
    Ok(x + (x * relevance).scale(lambda))
}

impl CaprBlock {
    fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: &CaprConfig,
        text_width: usize,
        rng: &mut R,
    ) -> Self {
        let w = cfg.width;
        Self {
            sentence: SentenceProjection {
                conv: Linear::new(store, &format!("{name}.sentence.conv"), 3 * text_width, text_width, true, rng),
                proj: Linear::new(store, &format!("{name}.sentence.proj"), text_width, w, true, rng),
            },
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), w),
            self_attn: Attention::new(store, &format!("{name}.self_attn"), w, w, cfg.heads, rng),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), w),
            cross_attn: Attention::new(store, &format!("{name}.cross_attn"), w, text_width, cfg.heads, rng),
            mlp_norm: LayerNorm::new(store, &format!("{name}.mlp_norm"), w),
            mlp: Mlp::new(store, &format!("{name}.mlp"), w, cfg.mlp_ratio * w, w, rng),
        }
    }

    /// Sentence fusion, then residual self-attention, residual word
    /// cross-attention and a residual MLP.
    pub fn forward<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        cfg: &CaprConfig,
        x: Var<'t, S>,
        text: &BlockText<'t, '_, S>,
    ) -> Result<(Var<'t, S>, BlockTrace<'t, S>)> {
        let sentence = self.sentence.forward(ctx, text.words, text.word_mask)?;
        let mut h = if cfg.capr1_off {
            x
        } else {
            sentence_fusion(x, sentence, cfg.lambda)?
        };
        let normed = self.self_norm.forward(ctx, h);
        let (sa, self_alpha) = self.self_attn.forward(ctx, normed, normed, None, "self-attention")?;
        h = h + sa;
        let mut cross_alpha = None;
        if !cfg.capr2_off {
            let normed = self.cross_norm.forward(ctx, h);
            let mask = key_mask(text.word_mask);
            let (ca, alpha) = self
                .cross_attn
                .forward(ctx, normed, text.words, Some(&mask), "cross-attention")?;
            h = h + ca;
            cross_alpha = Some(alpha);
        }
        h = h + self.mlp.forward(ctx, self.mlp_norm.forward(ctx, h));
        Ok((
            h,
            BlockTrace {
                sentence,
                self_alpha,
                cross_alpha,
            },
        ))
    }
}

impl MotionDenoiser {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: CaprConfig,
        text_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.heads == 0 || !cfg.width.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "model width {} not divisible by {} heads",
                cfg.width, cfg.heads
            )));
        }
        if cfg.blocks == 0 {
            return Err(Error::Config("the denoiser needs at least one block".into()));
        }
        if cfg.lambda < 0.0 {
            return Err(Error::Config(format!("negative fusion gain {}", cfg.lambda)));
        }
        if text_width != cfg.width {
            return Err(Error::Config(format!(
                "text width {text_width} must equal model width {} (the step embedding is added to both)",
                cfg.width
            )));
        }
        let w = cfg.width;
        let input = Linear::new(store, &format!("{name}.input"), cfg.channels, w, true, rng);
        let time_mlp = Mlp::new(store, &format!("{name}.time"), w, w, w, rng);
        let blocks = (0..cfg.blocks)
            .map(|b| CaprBlock::new(store, &format!("{name}.block{b}"), &cfg, text_width, rng))
            .collect();
        let out_norm = LayerNorm::new(store, &format!("{name}.out_norm"), w);
        let output = Linear::new(store, &format!("{name}.output"), w, cfg.channels, true, rng);
        Ok(Self {
            cfg,
            text_width,
            input,
            time_mlp,
            blocks,
            out_norm,
            output,
        })
    }

    /// Text layer (0-based) read by block `b` (0-based) out of `depth` layers.
    pub fn layer_for_block(&self, b: usize, depth: usize) -> usize {
        match self.cfg.order {
            BlockOrder::DeepFirst => depth - 1 - b,
            BlockOrder::ShallowFirst => b,
        }
    }

    /// Zeroes every cross-attention value map.
    pub fn zero_cross_values<S: Real>(&self, store: &mut ParamStore<S>) {
        for b in &self.blocks {
            store.get_mut(b.cross_attn.v.weight).fill(S::zero());
        }
    }

    pub fn param_ids(&self, store: &ParamStore<impl Real>, prefix: &str) -> Vec<ParamId> {
        store.ids().filter(|&id| store.name(id).starts_with(prefix)).collect()
    }

    /// Predicts `x₀` from `x_t` `[B, T, D]`, step indices and per-layer text features.
    pub fn forward<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        x_t: Var<'t, S>,
        t: &[usize],
        feats: &HierarchicalTextFeatures<'t, S>,
    ) -> Result<Var<'t, S>> {
        self.forward_traced(ctx, x_t, t, feats).map(|(y, _)| y)
    }

    pub fn forward_traced<'t, S: Real>(
        &self,
        ctx: Ctx<'t, '_, S>,
        x_t: Var<'t, S>,
        t: &[usize],
        feats: &HierarchicalTextFeatures<'t, S>,
    ) -> Result<(Var<'t, S>, Vec<BlockTrace<'t, S>>)> {
        let xs = x_t.shape();
        if xs.len() != 3 || xs[2] != self.cfg.channels || t.len() != xs[0] {
            return Err(Error::Contract(format!(
                "denoiser input {xs:?} with {} step indices, expected [B, T, {}]",
                t.len(),
                self.cfg.channels
            )));
        }
        if feats.depth() != self.blocks.len() {
            return Err(Error::Config(format!(
                "{} text layers for {} denoiser blocks",
                feats.depth(),
                self.blocks.len()
            )));
        }
        let (frames, w) = (xs[1], self.cfg.width);
        let emb = timestep_embedding(ctx, t, w, &self.time_mlp);
        let mut h = self.input.forward(ctx, x_t) + ctx.constant(sinusoid_table(frames, w));
        let mask = ctx.constant(feats.mask_column());
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let layer = feats.layers[self.layer_for_block(b, feats.depth())];
            h = h + emb;
            let text = BlockText {
                words: (layer + emb) * mask,
                word_mask: &feats.word_mask,
            };
            let (next, trace) = block.forward(ctx, &self.cfg, h, &text)?;
            h = next;
            traces.push(trace);
        }
        let y = self.output.forward(ctx, self.out_norm.forward(ctx, h));
        Ok((y, traces))
    }
}
