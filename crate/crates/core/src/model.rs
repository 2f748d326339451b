//! The full text-to-motion model: word embeddings, the dependency-graph
//! attention stack and the motion denoiser.

use autograd::ndarray::ArrayD;
use autograd::{ParamStore, Real, Tape, Var};
use rand::Rng;

use crate::capr::{CaprConfig, MotionDenoiser};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::ling_graph::{
    build_graph, repeated_sentence_features, DependencyParse, GatConfig, GatStack, GraphBatch,
    HierarchicalTextFeatures, ParseGraph, RelationVocab,
};
use crate::nn::Ctx;
use crate::text::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub gat: GatConfig,
    pub capr: CaprConfig,
    /// Replace the graph features with the caption's mean word embedding.
    pub lsam_off: bool,
    pub max_words: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gat: GatConfig::default(),
            capr: CaprConfig::default(),
            lsam_off: false,
            max_words: 16,
        }
    }
}

/// Captions ready for the text path: graphs plus the token strings.
#[derive(Debug, Clone)]
pub struct TextBatch {
    pub graphs: GraphBatch,
    pub tokens: Vec<Vec<String>>,
}

impl TextBatch {
    pub fn new(items: &[(&ParseGraph, &[String])], max_words: usize) -> Result<Self> {
        let graphs: Vec<&ParseGraph> = items.iter().map(|(g, _)| *g).collect();
        let longest = graphs.iter().map(|g| g.n_nodes()).max().unwrap_or(0);
        let graphs = GraphBatch::new(&graphs, Some(longest.min(max_words)))?;
        let tokens = items
            .iter()
            .map(|(_, t)| t.iter().take(graphs.max_nodes).cloned().collect())
            .collect();
        Ok(Self { graphs, tokens })
    }

    pub fn from_parses(parses: &[&DependencyParse], vocab: &RelationVocab, max_words: usize) -> Result<Self> {
        let graphs: Vec<ParseGraph> = parses.iter().map(|p| build_graph(p, vocab)).collect();
        let tokens: Vec<Vec<String>> = parses
            .iter()
            .map(|p| p.forms().into_iter().map(str::to_string).collect())
            .collect();
        let items: Vec<(&ParseGraph, &[String])> =
            graphs.iter().zip(&tokens).map(|(g, t)| (g, t.as_slice())).collect();
        Self::new(&items, max_words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FgT2M {
    pub cfg: ModelConfig,
    pub embeddings: EmbeddingProvider,
    pub gat: GatStack,
    pub denoiser: MotionDenoiser,
}

impl FgT2M {
    /// Builds the model with a trainable embedding table over `words`.
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        cfg: ModelConfig,
        vocab: &RelationVocab,
        words: &[String],
        rng: &mut R,
    ) -> Result<Self> {
        let embeddings = EmbeddingProvider::trainable(store, "embed", words, cfg.gat.width, rng);
        Self::with_embeddings(store, cfg, vocab, embeddings, rng)
    }

    pub fn with_embeddings<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        cfg: ModelConfig,
        vocab: &RelationVocab,
        embeddings: EmbeddingProvider,
        rng: &mut R,
    ) -> Result<Self> {
        if embeddings.dim() != cfg.gat.width {
            return Err(Error::Config(format!(
                "embedding width {} differs from graph width {}",
                embeddings.dim(),
                cfg.gat.width
            )));
        }
        if !cfg.lsam_off && cfg.gat.layers != cfg.capr.blocks {
            return Err(Error::Config(format!(
                "{} graph layers but {} denoiser blocks; each block reads one layer",
                cfg.gat.layers, cfg.capr.blocks
            )));
        }
        let gat = GatStack::new(store, "gat", cfg.gat.clone(), vocab, rng)?;
        let denoiser = MotionDenoiser::new(store, "denoiser", cfg.capr.clone(), cfg.gat.width, rng)?;
        Ok(Self {
            cfg,
            embeddings,
            gat,
            denoiser,
        })
    }

    pub fn encode_text<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, text: &TextBatch) -> Result<HierarchicalTextFeatures<'t, S>> {
        let refs: Vec<Vec<&str>> = text
            .tokens
            .iter()
            .map(|t| t.iter().map(String::as_str).collect())
            .collect();
        let words = self.embeddings.embed(ctx, &refs, text.graphs.max_nodes);
        if self.cfg.lsam_off {
            return Ok(repeated_sentence_features(
                ctx,
                words,
                &text.graphs.word_mask,
                self.cfg.capr.blocks,
            ));
        }
        self.gat.forward(ctx, words, &text.graphs)
    }

    pub fn bind<'a, S: Real>(&'a self, params: &'a ParamStore<S>) -> Bound<'a, S> {
        Bound { model: self, params }
    }
}

/// A model paired with parameter values, usable as a [`Denoiser`].
pub struct Bound<'a, S: Real> {
    pub model: &'a FgT2M,
    pub params: &'a ParamStore<S>,
}

impl<S: Real> Denoiser<S> for Bound<'_, S> {
    type Cond = TextBatch;

    fn predict_x0<'t>(&self, tape: &'t Tape<S>, x_t: Var<'t, S>, t: &[usize], cond: &TextBatch) -> Result<Var<'t, S>> {
        let ctx = Ctx::new(tape, self.params);
        let feats = self.model.encode_text(ctx, cond)?;
        self.model.denoiser.forward(ctx, x_t, t, &feats)
    }
}

/// Text features computed once and replayed at every sampling step.
pub struct FrozenText<S: Real> {
    pub layers: Vec<ArrayD<S>>,
    pub word_mask: ArrayD<bool>,
}

impl<S: Real> FrozenText<S> {
    pub fn encode(model: &FgT2M, params: &ParamStore<S>, text: &TextBatch) -> Result<Self> {
        let tape = Tape::inference();
        let feats = model.encode_text(Ctx::new(&tape, params), text)?;
        Ok(Self {
            layers: feats.layers.iter().map(|v| v.value().as_ref().clone()).collect(),
            word_mask: feats.word_mask,
        })
    }

    pub fn on<'t>(&self, tape: &'t Tape<S>) -> HierarchicalTextFeatures<'t, S> {
        HierarchicalTextFeatures {
            layers: self.layers.iter().map(|a| tape.constant(a.clone())).collect(),
            word_mask: self.word_mask.clone(),
        }
    }
}

/// Denoiser over pre-encoded text; the condition is the frozen features.
pub struct FrozenDenoiser<'a, S: Real> {
    pub model: &'a FgT2M,
    pub params: &'a ParamStore<S>,
}

impl<S: Real> Denoiser<S> for FrozenDenoiser<'_, S> {
    type Cond = FrozenText<S>;

    fn predict_x0<'t>(&self, tape: &'t Tape<S>, x_t: Var<'t, S>, t: &[usize], cond: &FrozenText<S>) -> Result<Var<'t, S>> {
        let feats = cond.on(tape);
        self.model
            .denoiser
            .forward(Ctx::new(tape, self.params), x_t, t, &feats)
    }
}
