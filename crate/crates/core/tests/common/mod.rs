//! Tiny models, random parses and measurement routines shared by the
//! integration tests and the acceptance runner. Each `measure_*` function
//! returns the observed quantity; callers decide on the threshold.
#![allow(dead_code)]

use autograd::gradcheck::{check_params, worst};
use autograd::ndarray::{ArrayD, Axis, Dimension, IxDyn};
use autograd::{ParamId, ParamStore, Tape, Var};
use fgt2m::capr::{BlockOrder, BlockText, CaprConfig};
use fgt2m::diffusion::{gaussian, make_linear_schedule, q_sample_batch};
use fgt2m::ling_graph::{
    build_graph, DependencyParse, GatConfig, GraphBatch, ParseGraph, RelationVocab, Token, UD_RELATIONS, UD_UPOS,
};
use fgt2m::model::{FgT2M, ModelConfig, TextBatch};
use fgt2m::nn::Ctx;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 12] = [
    "a", "person", "walks", "forward", "waves", "left", "hand", "twice", "then", "jumps", "turns", "while",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lexicon() -> Vec<String> {
    WORDS.iter().map(|s| s.to_string()).collect()
}

/// Random single-root tree over `n` tokens with random labels. Token 0 is not
/// necessarily the root: heads are drawn over a shuffled order.
pub fn random_parse<R: Rng>(rng: &mut R, n: usize, vocab: &RelationVocab) -> DependencyParse {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![None; n];
    for k in 1..n {
        heads[order[k]] = Some(order[rng.random_range(0..k)]);
    }
    let tokens = (0..n)
        .map(|i| Token {
            form: WORDS[rng.random_range(0..WORDS.len())].to_string(),
            upos: vocab.upos_id(UD_UPOS[rng.random_range(0..UD_UPOS.len())]),
            head: heads[i],
            deprel: vocab.relation_id(UD_RELATIONS[rng.random_range(0..UD_RELATIONS.len())]),
        })
        .collect();
    DependencyParse::new(tokens).unwrap()
}

/// Chain `0 - 1 - ... - n-1` rooted at the last token.
pub fn chain_parse(n: usize, vocab: &RelationVocab) -> DependencyParse {
    let tokens = (0..n)
        .map(|i| Token {
            form: WORDS[i % WORDS.len()].to_string(),
            upos: vocab.upos_id("NOUN"),
            head: (i + 1 < n).then_some(i + 1),
            deprel: vocab.relation_id(if i % 2 == 0 { "nmod" } else { "obj" }),
        })
        .collect();
    DependencyParse::new(tokens).unwrap()
}

pub fn tokens_of(p: &DependencyParse) -> Vec<String> {
    p.forms().into_iter().map(String::from).collect()
}

pub fn text_batch(parses: &[&DependencyParse], vocab: &RelationVocab, max_nodes: Option<usize>) -> TextBatch {
    let graphs: Vec<ParseGraph> = parses.iter().map(|p| build_graph(p, vocab)).collect();
    let refs: Vec<&ParseGraph> = graphs.iter().collect();
    TextBatch {
        graphs: GraphBatch::new(&refs, max_nodes).unwrap(),
        tokens: parses.iter().map(|p| tokens_of(p)).collect(),
    }
}

/// Model config of the tiny gradient-check instance: D=2 channels, width 8.
pub fn tiny_config(lambda: f64) -> ModelConfig {
    ModelConfig {
        gat: GatConfig {
            layers: 2,
            width: 8,
            edge_dim: 4,
            heads: 1,
            leaky_slope: 0.2,
            upos_gains: true,
        },
        capr: CaprConfig {
            channels: 2,
            width: 8,
            heads: 2,
            blocks: 2,
            lambda,
            order: BlockOrder::DeepFirst,
            mlp_ratio: 2,
            capr1_off: false,
            capr2_off: false,
        },
        lsam_off: false,
        max_words: 16,
    }
}

pub fn tiny_model(seed: u64, cfg: ModelConfig) -> (ParamStore<f64>, FgT2M, RelationVocab) {
    let vocab = RelationVocab::universal();
    let mut store = ParamStore::new();
    let model = FgT2M::new(&mut store, cfg, &vocab, &lexicon(), &mut rng(seed)).unwrap();
    (store, model, vocab)
}

/// Weighted sum with fixed, entry-specific weights.
pub fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Var<'t, f64> {
    let shape = y.shape();
    let w = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
        let flat: usize = ix.slice().iter().fold(0, |acc, &i| acc * 31 + i);
        ((flat % 11) as f64 - 5.0) / 6.0 + 0.01 * flat as f64
    });
    (y * tape.constant(w)).sum()
}

const H: f64 = 1e-6;

fn ids_with(store: &ParamStore<f64>, prefixes: &[&str]) -> Vec<ParamId> {
    store
        .ids()
        .filter(|&id| prefixes.iter().any(|p| store.name(id).starts_with(p)))
        .collect()
}

/// Worst relative gradient error of a single graph-attention layer, with
/// respect to its own parameters, the edge table and its input features.
pub fn measure_gat_layer_grad() -> f64 {
    let (mut store, model, vocab) = tiny_model(11, tiny_config(0.1));
    let mut r = rng(12);
    let parses = [random_parse(&mut r, 3, &vocab), random_parse(&mut r, 2, &vocab)];
    let text = text_batch(&[&parses[0], &parses[1]], &vocab, Some(3));
    let x = store.uniform("input", &[2, 3, 8], 1.0, &mut r);
    let ids = ids_with(&store, &["gat.l0.", "gat.edge_table", "gat.relation_gains", "input"]);
    let reports = check_params(&store, &ids, H, |tape, s| {
        let ctx = Ctx::new(tape, s);
        let edges = model.gat.edge_features(ctx, &text.graphs);
        let (out, _) = model.gat.layer(ctx, 0, ctx.p(x), &text.graphs, edges).unwrap();
        probe(tape, out)
    });
    worst(&reports)
}

/// Worst relative gradient error of the whole stack (all layers, tag gains
/// and word embeddings), probing every layer's output.
pub fn measure_gat_stack_grad() -> f64 {
    let (store, model, vocab) = tiny_model(21, tiny_config(0.1));
    let mut r = rng(22);
    let parses = [random_parse(&mut r, 3, &vocab), random_parse(&mut r, 2, &vocab)];
    let text = text_batch(&[&parses[0], &parses[1]], &vocab, Some(3));
    let ids = ids_with(&store, &["gat.", "embed."]);
    let reports = check_params(&store, &ids, H, |tape, s| {
        let feats = model.encode_text(Ctx::new(tape, s), &text).unwrap();
        let mut total = probe(tape, feats.layers[0]);
        for l in &feats.layers[1..] {
            total = total + probe(tape, *l);
        }
        total
    });
    worst(&reports)
}

/// Worst relative gradient error of one decoder block (sentence fusion,
/// self-attention, cross-attention, MLP) including its two inputs.
pub fn measure_block_grad() -> f64 {
    let (mut store, model, _) = tiny_model(31, tiny_config(0.5));
    let mut r = rng(32);
    let x = store.uniform("frames", &[2, 4, 8], 1.0, &mut r);
    let words = store.uniform("words", &[2, 3, 8], 1.0, &mut r);
    let mut mask = ArrayD::from_elem(IxDyn(&[2, 3]), true);
    mask[[1, 2]] = false;
    let cfg = model.denoiser.cfg.clone();
    let ids = ids_with(&store, &["denoiser.block0.", "frames", "words"]);
    let block = &model.denoiser.blocks[0];
    let reports = check_params(&store, &ids, H, |tape, s| {
        let ctx = Ctx::new(tape, s);
        let m = ctx.constant(fgt2m::nn::mask_column(&mask));
        let text = BlockText {
            words: ctx.p(words) * m,
            word_mask: &mask,
        };
        let (y, _) = block.forward(ctx, &cfg, ctx.p(x), &text).unwrap();
        probe(tape, y)
    });
    worst(&reports)
}

/// Worst relative gradient error of the full model's `x₀` prediction over
/// every parameter: embeddings, graph stack and denoiser.
pub fn measure_denoiser_grad() -> f64 {
    let (mut store, model, vocab) = tiny_model(41, tiny_config(0.5));
    let mut r = rng(42);
    let parses = [random_parse(&mut r, 3, &vocab), random_parse(&mut r, 2, &vocab)];
    let text = text_batch(&[&parses[0], &parses[1]], &vocab, Some(3));
    let x = store.uniform("x_t", &[2, 4, 2], 1.0, &mut r);
    let reports = check_params(&store, &[], H, |tape, s| {
        let ctx = Ctx::new(tape, s);
        let feats = model.encode_text(ctx, &text).unwrap();
        let y = model.denoiser.forward(ctx, ctx.p(x), &[3, 700], &feats).unwrap();
        probe(tape, y)
    });
    worst(&reports)
}

/// Exact `ᾱ_T` by an independent running product of `1 − β_t` with
/// `β_t = β₁ + (t−1)(β_T − β₁)/(T−1)`.
pub fn oracle_alpha_bar(steps: usize, beta_start: f64, beta_end: f64, t: usize) -> f64 {
    let mut prod = 1.0f64;
    for s in 1..=t {
        let beta = beta_start + (s - 1) as f64 * (beta_end - beta_start) / (steps - 1) as f64;
        prod *= 1.0 - beta;
    }
    prod
}

/// Standardized forward-process moments at step `t` from `n` draws of a
/// fixed clip: returns (|mean error| in units of its standard error,
/// relative variance error).
pub fn measure_q_moments(t: usize, n: usize, seed: u64) -> (f64, f64) {
    let sched = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
    let mut r = rng(seed);
    let clip: ArrayD<f64> = gaussian(&[1, 8, 8], &mut r);
    let x0 = clip.broadcast(IxDyn(&[n, 8, 8])).unwrap().to_owned();
    let eps: ArrayD<f64> = gaussian(&[n, 8, 8], &mut r);
    let xt = q_sample_batch(&x0, &vec![t; n], &eps, &sched).unwrap();
    let ab = oracle_alpha_bar(1000, 1e-4, 0.02, t);
    let (m, sd) = (ab.sqrt(), (1.0 - ab).sqrt());
    // residuals relative to the closed-form mean and spread
    let z: Vec<f64> = xt
        .iter()
        .zip(x0.iter())
        .map(|(&v, &c)| (v - m * c) / sd)
        .collect();
    let count = z.len() as f64;
    let mean = z.iter().sum::<f64>() / count;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
    (mean.abs() / (1.0 / count.sqrt()), (var - 1.0).abs())
}

/// Max |row sum − 1| over every real attention row (graph, self and cross
/// attention) of `instances` random captions; rows of padded graph nodes
/// must be all zero and count as a deviation of their sum otherwise.
pub fn measure_attention_rows(instances: usize, seed: u64) -> f64 {
    let (store, model, vocab) = tiny_model(51, tiny_config(0.1));
    let mut r = rng(seed);
    let mut worst_dev = 0.0f64;
    for _ in 0..instances {
        let n1 = r.random_range(1..=6);
        let n2 = r.random_range(1..=6);
        let parses = [random_parse(&mut r, n1, &vocab), random_parse(&mut r, n2, &vocab)];
        let text = text_batch(&[&parses[0], &parses[1]], &vocab, None);
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &store);
        let refs: Vec<Vec<&str>> = text
            .tokens
            .iter()
            .map(|t| t.iter().map(String::as_str).collect())
            .collect();
        let words = model.embeddings.embed(ctx, &refs, text.graphs.max_nodes);
        let edges = model.gat.edge_features(ctx, &text.graphs);
        let (_, alpha) = model.gat.layer(ctx, 0, words, &text.graphs, edges).unwrap();
        let alpha = alpha.value();
        for b in 0..2 {
            for i in 0..text.graphs.max_nodes {
                let s: f64 = alpha.index_axis(Axis(0), b).index_axis(Axis(0), 0).index_axis(Axis(0), i).sum();
                let target = if i < text.graphs.lengths[b] { 1.0 } else { 0.0 };
                worst_dev = worst_dev.max((s - target).abs());
            }
        }
        let feats = model.encode_text(ctx, &text).unwrap();
        let x = tape.constant(gaussian(&[2, 4, 2], &mut r));
        let (_, traces) = model.denoiser.forward_traced(ctx, x, &[1, 999], &feats).unwrap();
        for tr in &traces {
            let mut alphas = vec![tr.self_alpha];
            alphas.extend(tr.cross_alpha);
            for a in alphas {
                let v = a.value();
                let n = *v.shape().last().unwrap();
                for row in v.as_slice().unwrap().chunks(n) {
                    worst_dev = worst_dev.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
            if let Some(c) = tr.cross_alpha {
                // no weight may land on a padded word
                let v = c.value();
                for ((b, _, _, k), &w) in v.view().into_dimensionality::<autograd::ndarray::Ix4>().unwrap().indexed_iter() {
                    if !text.graphs.word_mask[[b, k]] {
                        worst_dev = worst_dev.max(w.abs());
                    }
                }
            }
        }
    }
    worst_dev
}

/// Max change of the model's `x₀` prediction (and of every graph layer on
/// real words) when a caption is padded with extra empty positions, over
/// `instances` random captions.
pub fn measure_pad_invariance(instances: usize, seed: u64) -> f64 {
    let (store, model, vocab) = tiny_model(61, tiny_config(0.1));
    let mut r = rng(seed);
    let mut worst_diff = 0.0f64;
    for _ in 0..instances {
        let n = r.random_range(1..=6);
        let pad = r.random_range(1..=4);
        let parse = random_parse(&mut r, n, &vocab);
        let x: ArrayD<f64> = gaussian(&[1, 4, 2], &mut r);
        let t = r.random_range(1..=1000);
        let run = |max_nodes: usize| {
            let text = text_batch(&[&parse], &vocab, Some(max_nodes));
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store);
            let feats = model.encode_text(ctx, &text).unwrap();
            let layers: Vec<ArrayD<f64>> = feats
                .layers
                .iter()
                .map(|l| {
                    l.value()
                        .slice_axis(Axis(1), autograd::ndarray::Slice::from(0..n))
                        .to_owned()
                })
                .collect();
            let y = model
                .denoiser
                .forward(ctx, tape.constant(x.clone()), &[t], &feats)
                .unwrap()
                .value()
                .as_ref()
                .clone();
            (layers, y)
        };
        let (la, ya) = run(n);
        let (lb, yb) = run(n + pad);
        for (a, b) in la.iter().zip(&lb).chain(std::iter::once((&ya, &yb))) {
            let d = (a - b).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
            worst_diff = worst_diff.max(d);
        }
    }
    worst_diff
}

/// Max |GAT(Px) − P·GAT(x)| over every layer for `instances` random graphs
/// and node permutations.
pub fn measure_permutation_equivariance(instances: usize, seed: u64) -> f64 {
    let (store, model, vocab) = tiny_model(71, tiny_config(0.1));
    let mut r = rng(seed);
    let mut worst_diff = 0.0f64;
    for _ in 0..instances {
        let n = r.random_range(2..=7);
        let parse = random_parse(&mut r, n, &vocab);
        let g = build_graph(&parse, &vocab);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let gp = g.permuted(&perm);
        let x: ArrayD<f64> = gaussian(&[1, n, 8], &mut r);
        let mut xp = ArrayD::<f64>::zeros(IxDyn(&[1, n, 8]));
        for (i, &p) in perm.iter().enumerate() {
            xp.index_axis_mut(Axis(1), p).assign(&x.index_axis(Axis(1), i));
        }
        let run = |graph: &ParseGraph, input: &ArrayD<f64>| {
            let batch = GraphBatch::new(&[graph], None).unwrap();
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store);
            let feats = model.gat.forward(ctx, tape.constant(input.clone()), &batch).unwrap();
            feats
                .layers
                .iter()
                .map(|l| l.value().as_ref().clone())
                .collect::<Vec<_>>()
        };
        let base = run(&g, &x);
        let moved = run(&gp, &xp);
        for (a, b) in base.iter().zip(&moved) {
            for (i, &p) in perm.iter().enumerate() {
                let d = (&a.index_axis(Axis(1), i) - &b.index_axis(Axis(1), p))
                    .mapv(f64::abs)
                    .fold(0.0, |m: f64, &v| m.max(v));
                worst_diff = worst_diff.max(d);
            }
        }
    }
    worst_diff
}

/// On chain graphs, perturbs one node's input and checks every layer `l`:
/// nodes farther than `l` hops must be bit-for-bit unchanged and nodes within
/// `l` hops must change. Returns the number of violations.
pub fn measure_receptive_field(seed: u64) -> usize {
    let (store, model, vocab) = tiny_model(81, tiny_config(0.1));
    let mut r = rng(seed);
    let mut violations = 0;
    for n in [5usize, 8] {
        let g = build_graph(&chain_parse(n, &vocab), &vocab);
        let batch = GraphBatch::new(&[&g], None).unwrap();
        for source in 0..n {
            let x: ArrayD<f64> = gaussian(&[1, n, 8], &mut r);
            let mut y = x.clone();
            for d in 0..8 {
                y[[0, source, d]] += 0.5 + d as f64 * 0.1;
            }
            let run = |input: &ArrayD<f64>| {
                let tape = Tape::inference();
                let ctx = Ctx::new(&tape, &store);
                let feats = model.gat.forward(ctx, tape.constant(input.clone()), &batch).unwrap();
                feats
                    .layers
                    .iter()
                    .map(|l| l.value().as_ref().clone())
                    .collect::<Vec<_>>()
            };
            let (a, b) = (run(&x), run(&y));
            for (l, (la, lb)) in a.iter().zip(&b).enumerate() {
                let hops = l + 1;
                for i in 0..n {
                    let same = la.index_axis(Axis(1), i) == lb.index_axis(Axis(1), i);
                    let near = i.abs_diff(source) <= hops;
                    if near == same {
                        violations += 1;
                    }
                }
            }
        }
    }
    violations
}

/// With `λ = 0` and every cross-attention value map zeroed, the largest
/// output change between two different captions over `instances` trials.
pub fn measure_disabled_text_path(instances: usize, seed: u64) -> f64 {
    let (mut store, model, vocab) = tiny_model(91, tiny_config(0.0));
    model.denoiser.zero_cross_values(&mut store);
    let mut r = rng(seed);
    let mut worst_diff = 0.0f64;
    for _ in 0..instances {
        let (n1, n2) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = random_parse(&mut r, n1, &vocab);
        let b = random_parse(&mut r, n2, &vocab);
        let x: ArrayD<f64> = gaussian(&[1, 4, 2], &mut r);
        let t = r.random_range(1..=1000);
        let run = |p: &DependencyParse| {
            let text = text_batch(&[p], &vocab, None);
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store);
            let feats = model.encode_text(ctx, &text).unwrap();
            model
                .denoiser
                .forward(ctx, tape.constant(x.clone()), &[t], &feats)
                .unwrap()
                .value()
                .as_ref()
                .clone()
        };
        let d = (&run(&a) - &run(&b)).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        worst_diff = worst_diff.max(d);
    }
    worst_diff
}

/// Largest output change of a trained model between pairs of records with
/// different captions, holding the noisy input and step fixed.
pub fn measure_caption_sensitivity(
    model: &FgT2M,
    params: &ParamStore<f32>,
    vocab: &RelationVocab,
    records: &[fgt2m::dataset::DatasetRecord],
    pairs: usize,
    seed: u64,
) -> f64 {
    use fgt2m::diffusion::Denoiser;
    let mut r = rng(seed);
    let frames = records[0].motion.frames();
    let mut worst_diff = 0.0f64;
    let mut done = 0;
    while done < pairs {
        let i = r.random_range(0..records.len());
        let j = r.random_range(0..records.len());
        if records[i].caption == records[j].caption {
            continue;
        }
        done += 1;
        let x: ArrayD<f32> = gaussian(&[1, frames, records[0].motion.channels()], &mut r);
        let t = r.random_range(1..=1000);
        let run = |k: usize| {
            let text = TextBatch::from_parses(&[&records[k].parse], vocab, 16).unwrap();
            let tape = Tape::inference();
            model
                .bind(params)
                .predict_x0(&tape, tape.constant(x.clone()), &[t], &text)
                .unwrap()
                .value()
                .as_ref()
                .clone()
        };
        let d = (&run(i) - &run(j)).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
        worst_diff = worst_diff.max(d as f64);
    }
    worst_diff
}

/// Outcome of the metric unit checks: (name, measured, passes).
pub fn metric_suite() -> Vec<(&'static str, f64, bool)> {
    use autograd::ndarray::Array2;
    use fgt2m::metrics::{diversity, fid, mm_dist, multimodality, r_precision, GaussianStats};
    use nalgebra::{DMatrix, DVector};

    let one_d = |mu: f64, var: f64| {
        GaussianStats::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap()
    };
    let mut r = rng(1234);
    let x: Array2<f64> = Array2::from_shape_fn((300, 6), |(i, j)| {
        let g: f64 = r.sample(rand_distr::StandardNormal);
        g * (1.0 + j as f64) + (i % 7) as f64 * 0.1
    });
    let stats = GaussianStats::from_features(&x).unwrap();
    let self_fid = fid(&stats, &stats).unwrap();
    let shifted = fid(&one_d(0.0, 1.0), &one_d(1.0, 1.0)).unwrap();
    let widened = fid(&one_d(0.0, 1.0), &one_d(0.0, 4.0)).unwrap();
    let retrieval = r_precision(&x, &x, &[1, 2, 3], &mut r).unwrap();
    let same: Array2<f64> = Array2::from_shape_fn((40, 6), |(_, j)| j as f64 * 0.3);
    let div = diversity(&same, 20, &mut r).unwrap();
    let mm = multimodality(&[same.clone(), same.clone()], 10, &mut r).unwrap();
    let mmd = mm_dist(&x, &x).unwrap();
    vec![
        ("fid(X,X)", self_fid, self_fid.abs() < 1e-8),
        ("fid 1-D mean shift", shifted, (shifted - 1.0).abs() < 1e-12),
        ("fid 1-D variance 1->4", widened, (widened - 1.0).abs() < 1e-12),
        ("perfect retrieval R@1", retrieval[0], retrieval.iter().all(|&v| v == 1.0)),
        ("mm dist of identical pairs", mmd, mmd == 0.0),
        ("diversity of identical set", div, div == 0.0),
        ("multimodality of identical set", mm, mm == 0.0),
    ]
}
