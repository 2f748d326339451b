//! Training loop, generation and held-out evaluation.

use std::time::Instant;

use autograd::ndarray::{ArrayD, Axis, IxDyn};
use autograd::{Adam, ParamStore, Tape};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{build_model, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{DatasetRecord, CHANNELS};
use crate::diffusion::{
    gaussian, make_linear_schedule, sample_loop_respaced, stack_motions, training_loss, SamplerOptions,
};
use crate::error::{Error, Result};
use crate::ling_graph::{build_graph, ParseGraph, RelationVocab};
use crate::metrics::{
    diversity, fid, mm_dist, motion_batch, multimodality, r_precision, text_batch, train_joint_embedder, GaussianStats,
    JointEmbedder, Separation,
};
use crate::model::{FgT2M, FrozenDenoiser, FrozenText, TextBatch};

/// Splits off the last `heldout` records.
pub fn split_heldout(records: &[DatasetRecord], heldout: usize) -> Result<(&[DatasetRecord], &[DatasetRecord])> {
    if heldout >= records.len() {
        return Err(Error::Input(format!(
            "{} records cannot hold out {heldout}",
            records.len()
        )));
    }
    Ok(records.split_at(records.len() - heldout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub r_top1: Option<f64>,
    pub r_top3: Option<f64>,
    pub fid: Option<f64>,
}

pub fn format_log(rows: &[LogRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.loss.to_string(),
                opt(r.r_top1),
                opt(r.r_top3),
                opt(r.fid),
            ]
        })
        .collect();
    crate::io::format_csv(&["iteration", "loss", "r_top1", "r_top3", "fid"], &body)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub iterations: usize,
    pub seconds: f64,
}

struct Prepared {
    graphs: Vec<ParseGraph>,
    tokens: Vec<Vec<String>>,
}

impl Prepared {
    fn new(records: &[DatasetRecord], vocab: &RelationVocab) -> Self {
        Self {
            graphs: records.iter().map(|r| build_graph(&r.parse, vocab)).collect(),
            tokens: records
                .iter()
                .map(|r| r.parse.forms().into_iter().map(String::from).collect())
                .collect(),
        }
    }

    fn batch(&self, idx: &[usize], max_words: usize) -> Result<TextBatch> {
        let items: Vec<(&ParseGraph, &[String])> = idx
            .iter()
            .map(|&i| (&self.graphs[i], self.tokens[i].as_slice()))
            .collect();
        TextBatch::new(&items, max_words)
    }
}

/// Trains a fresh model on `train`. `on_log` sees every log row as it is
/// produced. When `evaluator` is given and `train.eval_every > 0`, held-out
/// R-precision and FID are added at that interval together with the current
/// checkpoint, and training stops early once `train.early_stop_r_top1` is
/// reached.
pub fn train(
    cfg: &RunConfig,
    train: &[DatasetRecord],
    heldout: &[DatasetRecord],
    vocab: &RelationVocab,
    lexicon: &[String],
    evaluator: Option<&JointEmbedder>,
    mut on_log: impl FnMut(&LogRow, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Input("no training records".into()));
    }
    let start = Instant::now();
    let mut params = ParamStore::new();
    let model = build_model(cfg, vocab, lexicon, &mut params, cfg.train.seed)?;
    info!("model has {} parameters in {} tensors", params.numel(), params.len());
    let sched = make_linear_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)?;
    let mut adam = Adam::new(&params, cfg.train.lr).with_clip(cfg.train.grad_clip);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let prepared = Prepared::new(train, vocab);
    let motions: Vec<ArrayD<f32>> = train
        .iter()
        .map(|r| r.motion.data.clone().into_dyn())
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.train.batch.min(train.len());
    let mut log = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0;
    let mut done = 0;
    for it in 1..=cfg.train.iters {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let text = prepared.batch(idx, cfg.text.max_words)?;
        let views: Vec<_> = idx.iter().map(|&i| motions[i].view()).collect();
        let x0 = autograd::ndarray::stack(Axis(0), &views).unwrap();
        let t: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=sched.num_steps())).collect();
        let eps: ArrayD<f32> = gaussian(x0.shape(), &mut rng);

        let tape = Tape::new();
        let loss = training_loss(&tape, &model.bind(&params), &x0, &t, &text, &eps, &sched)?;
        let value = loss.item() as f64;
        if !value.is_finite() {
            return Err(Error::TrainingFailure(format!("loss became {value} at iteration {it}")));
        }
        let grads = tape.backward(loss).dense(&params);
        adam.step(&mut params, &grads);
        if !params.all_finite() {
            return Err(Error::TrainingFailure(format!(
                "parameters became non-finite at iteration {it}"
            )));
        }
        running += value;
        running_n += 1;
        done = it;

        let log_now = cfg.train.log_every > 0 && it % cfg.train.log_every == 0;
        let eval_now = evaluator.is_some() && cfg.train.eval_every > 0 && it % cfg.train.eval_every == 0;
        if log_now || eval_now || it == cfg.train.iters {
            let mut row = LogRow {
                iteration: it,
                loss: running / running_n as f64,
                r_top1: None,
                r_top3: None,
                fid: None,
            };
            running = 0.0;
            running_n = 0;
            let mut stop = false;
            let mut snapshot = None;
            if let (true, Some(emb)) = (eval_now, evaluator) {
                let mut erng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
                erng.set_stream(it as u64);
                let quick = quick_eval(cfg, &model, &params, vocab, heldout, emb, &mut erng)?;
                row.r_top1 = Some(quick.r_top[0]);
                row.r_top3 = Some(quick.r_top[2]);
                row.fid = Some(quick.fid);
                snapshot = Some(Checkpoint {
                    config: cfg.clone(),
                    vocab: vocab.clone(),
                    lexicon: lexicon.to_vec(),
                    params: params.clone(),
                });
                stop = cfg.train.early_stop_r_top1.is_some_and(|target| quick.r_top[0] >= target);
            }
            info!(
                "iter {it}: loss {:.5}{}",
                row.loss,
                row.r_top1
                    .map(|r| format!(", R@1 {r:.3}, FID {:.4}", row.fid.unwrap()))
                    .unwrap_or_default()
            );
            on_log(&row, snapshot.as_ref())?;
            log.push(row);
            if stop {
                info!("early stop at iteration {it}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            vocab: vocab.clone(),
            lexicon: lexicon.to_vec(),
            params,
        },
        log,
        iterations: done,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains the metric embedder on the training split, seeded by `eval.seed`.
pub fn train_evaluator(
    cfg: &RunConfig,
    train: &[DatasetRecord],
    vocab: &RelationVocab,
    lexicon: &[String],
) -> Result<(JointEmbedder, Separation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    rng.set_stream(3);
    train_joint_embedder(train, vocab, lexicon, cfg.embedder_config(), &mut rng)
}

/// Samples one motion per caption in `text`, `[B, frames, CHANNELS]`.
pub fn generate<R: Rng + ?Sized>(
    cfg: &RunConfig,
    model: &FgT2M,
    params: &ParamStore<f32>,
    text: &TextBatch,
    frames: usize,
    rng: &mut R,
) -> Result<ArrayD<f32>> {
    let sched = make_linear_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)?;
    let frozen = FrozenText::encode(model, params, text)?;
    let den = FrozenDenoiser { model, params };
    let opts = SamplerOptions {
        clamp_x0: cfg.diffusion.clamp_x0,
    };
    sample_loop_respaced(
        &den,
        &frozen,
        text.len(),
        frames,
        CHANNELS,
        &sched,
        cfg.diffusion.sample_steps,
        rng,
        opts,
    )
}

/// Generates for every record in `records`, in chunks of `eval.sample_batch`.
pub fn generate_for<R: Rng + ?Sized>(
    cfg: &RunConfig,
    model: &FgT2M,
    params: &ParamStore<f32>,
    vocab: &RelationVocab,
    records: &[&DatasetRecord],
    rng: &mut R,
) -> Result<ArrayD<f32>> {
    let frames = records
        .first()
        .map(|r| r.motion.frames())
        .ok_or_else(|| Error::Input("nothing to generate".into()))?;
    let mut parts = Vec::new();
    for chunk in records.chunks(cfg.eval.sample_batch.max(1)) {
        let text = text_batch(chunk, vocab, cfg.text.max_words)?;
        parts.push(generate(cfg, model, params, &text, frames, rng)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(autograd::ndarray::concatenate(Axis(0), &views).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuickEval {
    pub r_top: [f64; 3],
    pub fid: f64,
}

fn quick_eval<R: Rng + ?Sized>(
    cfg: &RunConfig,
    model: &FgT2M,
    params: &ParamStore<f32>,
    vocab: &RelationVocab,
    heldout: &[DatasetRecord],
    emb: &JointEmbedder,
    rng: &mut R,
) -> Result<QuickEval> {
    let n = cfg.eval.samples.min(heldout.len());
    let refs: Vec<&DatasetRecord> = heldout[..n].iter().collect();
    let gen = generate_for(cfg, model, params, vocab, &refs, rng)?;
    let text = emb.embed_text(&text_batch(&refs, vocab, cfg.text.max_words)?)?;
    let gen_f = emb.embed_motion(&gen)?;
    let real_f = emb.embed_motion(&motion_batch(&refs)?)?;
    let r = r_precision(&text, &gen_f, &[1, 2, 3], rng)?;
    let fid = fid(
        &GaussianStats::from_features(&gen_f)?,
        &GaussianStats::from_features(&real_f)?,
    )?;
    Ok(QuickEval {
        r_top: [r[0], r[1], r[2]],
        fid,
    })
}

/// Held-out metrics averaged over `eval.repeats` generation rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub r_top: [f64; 3],
    pub fid: f64,
    pub fid_noise: f64,
    pub mm_dist: f64,
    pub diversity: f64,
    pub multimodality: f64,
    /// The same retrieval and distance metrics on the real held-out motions.
    pub real_r_top: [f64; 3],
    pub real_mm_dist: f64,
    pub real_diversity: f64,
    pub samples: usize,
    pub repeats: usize,
}

impl EvalReport {
    pub fn pairs(&self) -> Vec<(String, f64)> {
        vec![
            ("r_precision_top1".into(), self.r_top[0]),
            ("r_precision_top2".into(), self.r_top[1]),
            ("r_precision_top3".into(), self.r_top[2]),
            ("fid".into(), self.fid),
            ("fid_noise".into(), self.fid_noise),
            ("mm_dist".into(), self.mm_dist),
            ("diversity".into(), self.diversity),
            ("multimodality".into(), self.multimodality),
            ("real_r_precision_top1".into(), self.real_r_top[0]),
            ("real_r_precision_top2".into(), self.real_r_top[1]),
            ("real_r_precision_top3".into(), self.real_r_top[2]),
            ("real_mm_dist".into(), self.real_mm_dist),
            ("real_diversity".into(), self.real_diversity),
            ("samples".into(), self.samples as f64),
            ("repeats".into(), self.repeats as f64),
        ]
    }
}

pub fn evaluate(
    cfg: &RunConfig,
    model: &FgT2M,
    params: &ParamStore<f32>,
    vocab: &RelationVocab,
    heldout: &[DatasetRecord],
    emb: &JointEmbedder,
) -> Result<EvalReport> {
    let n = cfg.eval.samples.min(heldout.len());
    let repeats = cfg.eval.repeats.max(1);
    let refs: Vec<&DatasetRecord> = heldout[..n].iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    rng.set_stream(7);

    let text = emb.embed_text(&text_batch(&refs, vocab, cfg.text.max_words)?)?;
    let real_motion = motion_batch(&refs)?;
    let real_f = emb.embed_motion(&real_motion)?;
    let real_stats = GaussianStats::from_features(&real_f)?;
    let real_r = r_precision(&text, &real_f, &[1, 2, 3], &mut rng)?;
    let real_mm = mm_dist(&text, &real_f)?;
    let real_div = diversity(&real_f, cfg.eval.diversity_subset, &mut rng)?;

    let noise: ArrayD<f32> = gaussian(real_motion.shape(), &mut rng);
    let fid_noise = fid(&GaussianStats::from_features(&emb.embed_motion(&noise)?)?, &real_stats)?;

    let mut acc = [0.0f64; 6];
    for rep in 0..repeats {
        let gen = generate_for(cfg, model, params, vocab, &refs, &mut rng)?;
        let gen_f = emb.embed_motion(&gen)?;
        let r = r_precision(&text, &gen_f, &[1, 2, 3], &mut rng)?;
        let f = fid(&GaussianStats::from_features(&gen_f)?, &real_stats)?;
        let mm = mm_dist(&text, &gen_f)?;
        let div = diversity(&gen_f, cfg.eval.diversity_subset, &mut rng)?;
        info!("eval round {rep}: R@1 {:.3} R@3 {:.3} FID {f:.4} MM {mm:.4} div {div:.4}", r[0], r[2]);
        for (a, v) in acc.iter_mut().zip([r[0], r[1], r[2], f, mm, div]) {
            *a += v;
        }
    }
    let k = repeats as f64;

    let mm_texts = cfg.eval.mm_texts.min(n);
    let mut per_text = Vec::with_capacity(mm_texts);
    for r in refs.iter().take(mm_texts) {
        let copies: Vec<&DatasetRecord> = vec![*r; cfg.eval.mm_generations.max(2)];
        let gen = generate_for(cfg, model, params, vocab, &copies, &mut rng)?;
        per_text.push(emb.embed_motion(&gen)?);
    }
    let mmod = multimodality(&per_text, cfg.eval.mm_pairs, &mut rng)?;

    Ok(EvalReport {
        r_top: [acc[0] / k, acc[1] / k, acc[2] / k],
        fid: acc[3] / k,
        fid_noise,
        mm_dist: acc[4] / k,
        diversity: acc[5] / k,
        multimodality: mmod,
        real_r_top: [real_r[0], real_r[1], real_r[2]],
        real_mm_dist: real_mm,
        real_diversity: real_div,
        samples: n,
        repeats,
    })
}

/// Writes `[B, T, D]` features or motions as a shape header line followed
/// by little-endian `f32` values.
pub fn encode_array(a: &ArrayD<f32>) -> Vec<u8> {
    let dims: Vec<String> = a.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!("f32 {}\n", dims.join(" ")).into_bytes();
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> Result<ArrayD<f32>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: "missing header line".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format {
        offset: 0,
        message: "header is not UTF-8".into(),
    })?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("f32") {
        return Err(Error::Format {
            offset: 0,
            message: "header must start with f32".into(),
        });
    }
    let shape: Vec<usize> = parts
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format {
            offset: 0,
            message: format!("bad shape in header {header:?}"),
        })?;
    let body = &bytes[nl + 1..];
    let n: usize = shape.iter().product();
    if body.len() != n * 4 {
        return Err(Error::Format {
            offset: (nl + 1 + body.len().min(n * 4)) as u64,
            message: format!("expected {} payload bytes, found {}", n * 4, body.len()),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap())
}

/// Motions of every record stacked to `[B, T, D]`.
pub fn stack_records(records: &[DatasetRecord]) -> Result<ArrayD<f32>> {
    let m: Vec<_> = records.iter().map(|r| &r.motion).collect();
    stack_motions(&m)
}
