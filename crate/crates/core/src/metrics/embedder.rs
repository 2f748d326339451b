//! A small text/motion embedder trained contrastively on the toy corpus,
//! used as the feature extractor behind every metric.

use autograd::ndarray::{s, Array2, ArrayD, Axis, IxDyn};
use autograd::{Adam, ParamStore, Tape, Var};
use log::info;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffusion::stack_motions;
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::ling_graph::{GatConfig, GatStack, RelationVocab};
use crate::model::TextBatch;
use crate::nn::{Ctx, Mlp};
use crate::text::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    /// Shared embedding width `E`.
    pub dim: usize,
    pub hidden: usize,
    pub word_width: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub holdout_fraction: f64,
    pub max_words: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 64,
            word_width: 32,
            epochs: 30,
            batch: 64,
            lr: 1e-3,
            temperature: 1.0,
            holdout_fraction: 0.1,
            max_words: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointEmbedder {
    pub cfg: EmbedderConfig,
    pub params: ParamStore<f32>,
    pub channels: usize,
    words: EmbeddingProvider,
    gat: GatStack,
    text_mlp: Mlp,
    frame_mlp: Mlp,
    motion_mlp: Mlp,
}

/// Matched and mismatched distance medians on held-out pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub matched_median: f64,
    pub mismatched_median: f64,
}

impl Separation {
    pub fn holds(&self) -> bool {
        self.matched_median < self.mismatched_median
    }
}

/// `[x, Δx]` per frame, with a zero difference at the first frame.
fn with_velocity(x: &ArrayD<f32>) -> ArrayD<f32> {
    let s = x.shape();
    let (b, t, d) = (s[0], s[1], s[2]);
    let mut out = ArrayD::<f32>::zeros(IxDyn(&[b, t, 2 * d]));
    out.slice_mut(s![.., .., ..d]).assign(x);
    if t > 1 {
        let dx = &x.slice(s![.., 1.., ..]) - &x.slice(s![.., ..t - 1, ..]);
        out.slice_mut(s![.., 1.., d..]).assign(&dx);
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn to_f64(a: &ArrayD<f32>) -> Array2<f64> {
    let s = a.shape();
    Array2::from_shape_vec((s[0], s[1]), a.iter().map(|&v| v as f64).collect()).unwrap()
}

impl JointEmbedder {
    pub fn new<R: Rng + ?Sized>(
        cfg: EmbedderConfig,
        vocab: &RelationVocab,
        lexicon: &[String],
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let words = EmbeddingProvider::trainable(&mut params, "eval.words", lexicon, cfg.word_width, rng);
        let gat_cfg = GatConfig {
            layers: 1,
            width: cfg.word_width,
            edge_dim: 8,
            heads: 1,
            ..GatConfig::default()
        };
        let gat = GatStack::new(&mut params, "eval.gat", gat_cfg, vocab, rng)?;
        let text_mlp = Mlp::new(&mut params, "eval.text", cfg.word_width, cfg.hidden, cfg.dim, rng);
        let frame_mlp = Mlp::new(&mut params, "eval.frame", 2 * channels, cfg.hidden, cfg.hidden, rng);
        let motion_mlp = Mlp::new(&mut params, "eval.motion", 2 * cfg.hidden, cfg.hidden, cfg.dim, rng);
        Ok(Self {
            cfg,
            params,
            channels,
            words,
            gat,
            text_mlp,
            frame_mlp,
            motion_mlp,
        })
    }

    fn text_var<'t>(&self, ctx: Ctx<'t, '_, f32>, text: &TextBatch) -> Result<Var<'t, f32>> {
        let refs: Vec<Vec<&str>> = text
            .tokens
            .iter()
            .map(|t| t.iter().map(String::as_str).collect())
            .collect();
        let words = self.words.embed(ctx, &refs, text.graphs.max_nodes);
        let feats = self.gat.forward(ctx, words, &text.graphs)?;
        let mask = feats.mask_column();
        let inv = mask
            .sum_axis(Axis(1))
            .mapv(|c| 1.0 / c.max(1.0))
            .insert_axis(Axis(1));
        let pooled = (feats.layers[0] * ctx.constant(mask)).sum_axis(1, false) * ctx.constant(inv.remove_axis(Axis(2)));
        Ok(self.text_mlp.forward(ctx, pooled))
    }

    fn motion_var<'t>(&self, ctx: Ctx<'t, '_, f32>, motion: &ArrayD<f32>) -> Result<Var<'t, f32>> {
        let s = motion.shape();
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::Contract(format!(
                "embedder expects [B, T, {}] motions, got {s:?}",
                self.channels
            )));
        }
        let h = self.frame_mlp.forward(ctx, ctx.constant(with_velocity(motion))).silu();
        let mean = h.mean_axis(1, true);
        let centered = h - mean;
        let std = centered.square().mean_axis(1, false).add_scalar(1e-6).sqrt();
        let pooled = Var::concat(&[mean.reshape(&[s[0], self.cfg.hidden]), std], 1);
        Ok(self.motion_mlp.forward(ctx, pooled))
    }

    /// Text features, `[B, E]`.
    pub fn embed_text(&self, text: &TextBatch) -> Result<Array2<f64>> {
        let tape = Tape::inference();
        let v = self.text_var(Ctx::new(&tape, &self.params), text)?;
        Ok(to_f64(&v.value()))
    }

    /// Motion features for `[B, T, D]` motions, `[B, E]`.
    pub fn embed_motion(&self, motion: &ArrayD<f32>) -> Result<Array2<f64>> {
        let tape = Tape::inference();
        let v = self.motion_var(Ctx::new(&tape, &self.params), motion)?;
        Ok(to_f64(&v.value()))
    }

    /// Symmetric cross-entropy over negative squared distances.
    fn loss<'t>(&self, ctx: Ctx<'t, '_, f32>, text: &TextBatch, motion: &ArrayD<f32>) -> Result<Var<'t, f32>> {
        let t = self.text_var(ctx, text)?;
        let m = self.motion_var(ctx, motion)?;
        let b = text.len();
        let tn = t.square().sum_axis(1, true);
        let mn = m.square().sum_axis(1, true).reshape(&[1, b]);
        let d2 = tn + mn - t.matmul_t(m, false, true).scale(2.0);
        let logits = d2.scale(-1.0 / self.cfg.temperature);
        let eye = ctx.constant(Array2::<f32>::eye(b).into_dyn());
        let rows = (logits.log_softmax() * eye).sum();
        let cols = (logits.transpose_last().log_softmax() * eye).sum();
        Ok((rows + cols).scale(-0.5 / b as f64))
    }

    pub fn separation(&self, text: &TextBatch, motion: &ArrayD<f32>) -> Result<Separation> {
        let t = self.embed_text(text)?;
        let m = self.embed_motion(motion)?;
        let n = t.nrows();
        let mut matched = Vec::with_capacity(n);
        let mut mismatched = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let d = (&t.row(i) - &m.row(j)).mapv(|v| v * v).sum().sqrt();
                if i == j {
                    matched.push(d);
                } else if text.tokens[i] != text.tokens[j] {
                    mismatched.push(d);
                }
            }
        }
        if matched.is_empty() || mismatched.is_empty() {
            return Err(Error::Input("separation needs at least two distinct captions".into()));
        }
        Ok(Separation {
            matched_median: median(matched),
            mismatched_median: median(mismatched),
        })
    }
}

pub fn text_batch(records: &[&DatasetRecord], vocab: &RelationVocab, max_words: usize) -> Result<TextBatch> {
    let parses: Vec<_> = records.iter().map(|r| &r.parse).collect();
    TextBatch::from_parses(&parses, vocab, max_words)
}

pub fn motion_batch(records: &[&DatasetRecord]) -> Result<ArrayD<f32>> {
    let motions: Vec<_> = records.iter().map(|r| &r.motion).collect();
    stack_motions(&motions)
}

/// Trains the embedder on all but a held-out tail of `records`, then checks
/// that matched pairs sit closer than mismatched ones on that tail.
pub fn train_joint_embedder<R: Rng + ?Sized>(
    records: &[DatasetRecord],
    vocab: &RelationVocab,
    lexicon: &[String],
    cfg: EmbedderConfig,
    rng: &mut R,
) -> Result<(JointEmbedder, Separation)> {
    if records.len() < 512 {
        return Err(Error::Input(format!(
            "embedder training needs at least 512 records, got {}",
            records.len()
        )));
    }
    let channels = records[0].motion.channels();
    let mut emb = JointEmbedder::new(cfg.clone(), vocab, lexicon, channels, rng)?;
    let held = ((records.len() as f64 * cfg.holdout_fraction) as usize).max(32);
    let (train, test) = records.split_at(records.len() - held);
    let mut adam = Adam::new(&emb.params, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch).filter(|c| c.len() > 1) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let text = text_batch(&batch, vocab, cfg.max_words)?;
            let motion = motion_batch(&batch)?;
            let tape = Tape::new();
            let loss = emb.loss(Ctx::new(&tape, &emb.params), &text, &motion)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "embedder loss became {value} in epoch {epoch}"
                )));
            }
            let grads = tape.backward(loss).dense(&emb.params);
            adam.step(&mut emb.params, &grads);
            total += value as f64;
            steps += 1;
        }
        log::debug!("embedder epoch {epoch}: loss {:.4}", total / steps as f64);
    }
    let test_refs: Vec<&DatasetRecord> = test.iter().collect();
    let sep = emb.separation(&text_batch(&test_refs, vocab, cfg.max_words)?, &motion_batch(&test_refs)?)?;
    info!(
        "embedder held-out distance medians: matched {:.4}, mismatched {:.4}",
        sep.matched_median, sep.mismatched_median
    );
    if !sep.holds() {
        return Err(Error::TrainingFailure(format!(
            "embedder failed to separate held-out pairs after {} epochs (matched median {:.4}, mismatched median {:.4})",
            cfg.epochs, sep.matched_median, sep.mismatched_median
        )));
    }
    Ok((emb, sep))
}
