use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fgt2m::checkpoint::Checkpoint;
use fgt2m::config::RunConfig;
use fgt2m::dataset::{generate_dataset, read_dataset, write_dataset, DatasetRecord};
use fgt2m::io::{atomic_write, format_csv, format_report};
use fgt2m::ling_graph::{build_graph, load_conllu, DependencyParse, RelationVocab};
use fgt2m::model::TextBatch;
use fgt2m::pipeline::{self, encode_array, format_log, LogRow};
use fgt2m::text::ToyGrammar;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::svg;
use crate::Common;

fn load_config(common: &Common) -> Result<RunConfig> {
    Ok(RunConfig::load(common.config.as_deref(), &common.overrides)?)
}

fn corpus(cfg: &RunConfig, data: Option<&Path>, vocab: &RelationVocab) -> Result<Vec<DatasetRecord>> {
    match data {
        Some(p) => Ok(read_dataset(p, vocab)?),
        None => {
            info!(
                "generating {} records of {} frames with seed {}",
                cfg.data.records, cfg.data.frames, cfg.data.seed
            );
            Ok(generate_dataset(
                cfg.data.records,
                cfg.data.frames,
                cfg.data.seed,
                &ToyGrammar::new(),
                vocab,
            )?)
        }
    }
}

pub fn gen_data(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let vocab = RelationVocab::universal();
    let records = corpus(&cfg, None, &vocab)?;
    write_dataset(out, &records, &vocab)?;
    info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

pub fn train(common: &Common, data: Option<&Path>, out_dir: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let vocab = RelationVocab::universal();
    let lexicon = ToyGrammar::new().lexicon();
    let records = corpus(&cfg, data, &vocab)?;
    let (train, heldout) = pipeline::split_heldout(&records, cfg.data.heldout)?;
    let evaluator = if cfg.train.eval_every > 0 {
        let (emb, sep) = pipeline::train_evaluator(&cfg, train, &vocab, &lexicon)?;
        info!(
            "metric embedder ready: matched median {:.4} < mismatched median {:.4}",
            sep.matched_median, sep.mismatched_median
        );
        Some(emb)
    } else {
        None
    };

    atomic_write(&out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let ckpt_path = out_dir.join("model.ckpt");
    let log_path = out_dir.join("metrics.csv");
    let mut rows: Vec<LogRow> = Vec::new();
    let outcome = pipeline::train(
        &cfg,
        train,
        heldout,
        &vocab,
        &lexicon,
        evaluator.as_ref(),
        |row, snapshot| {
            rows.push(row.clone());
            if let Some(ck) = snapshot {
                ck.save(&ckpt_path)?;
            }
            atomic_write(&log_path, format_log(&rows).as_bytes())
        },
    )?;
    outcome.checkpoint.save(&ckpt_path)?;
    info!(
        "trained {} iterations in {:.1}s; checkpoint {}",
        outcome.iterations,
        outcome.seconds,
        ckpt_path.display()
    );
    Ok(())
}

fn parse_input(caption: Option<&str>, conllu: Option<&Path>, vocab: &RelationVocab) -> Result<DependencyParse> {
    match (caption, conllu) {
        (Some(c), None) => Ok(ToyGrammar::new().parse(c, vocab)?),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            Ok(load_conllu(&text, vocab)?)
        }
        _ => bail!("give exactly one of --caption or --conllu"),
    }
}

pub fn sample(
    common: &Common,
    checkpoint: &Path,
    captions: &[String],
    conllu: Option<&Path>,
    count: usize,
    out: &Path,
) -> Result<()> {
    if count == 0 {
        bail!("--count must be positive");
    }
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = with_overrides(&ck.config, common)?;
    let model = ck.model()?;
    let mut parses = Vec::new();
    if let Some(p) = conllu {
        if !captions.is_empty() {
            bail!("give either --caption or --conllu, not both");
        }
        parses.push(parse_input(None, Some(p), &ck.vocab)?);
    } else {
        if captions.is_empty() {
            bail!("nothing to sample: pass --caption or --conllu");
        }
        for c in captions {
            parses.push(parse_input(Some(c), None, &ck.vocab)?);
        }
    }
    let repeated: Vec<&DependencyParse> = parses.iter().flat_map(|p| std::iter::repeat_n(p, count)).collect();
    let text = TextBatch::from_parses(&repeated, &ck.vocab, cfg.text.max_words)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let motions = pipeline::generate(&cfg, &model, &ck.params, &text, cfg.data.frames, &mut rng)?;
    atomic_write(out, &encode_array(&motions))?;
    info!("wrote {:?} motions to {}", motions.shape(), out.display());
    Ok(())
}

/// The checkpoint's config with command-line overrides and the seed
/// variable applied. Model keys cannot change after training.
fn with_overrides(base: &RunConfig, common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| p.display().to_string())?,
        None => base.to_toml(),
    };
    let mut cfg = RunConfig::from_toml_with(&text, &common.overrides)?;
    cfg.apply_seed_env()?;
    if cfg.model_config()? != base.model_config()? || cfg.text != base.text {
        bail!("model and text settings are fixed by the checkpoint");
    }
    Ok(cfg)
}

pub fn eval(common: &Common, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = with_overrides(&ck.config, common)?;
    let model = ck.model()?;
    let records = corpus(&cfg, data, &ck.vocab)?;
    let (train, heldout) = pipeline::split_heldout(&records, cfg.data.heldout)?;
    let (emb, sep) = pipeline::train_evaluator(&cfg, train, &ck.vocab, &ck.lexicon)?;
    let report = pipeline::evaluate(&cfg, &model, &ck.params, &ck.vocab, heldout, &emb)?;
    let mut pairs = report.pairs();
    pairs.push(("embedder_matched_median".into(), sep.matched_median));
    pairs.push(("embedder_mismatched_median".into(), sep.mismatched_median));
    atomic_write(out, format_report(&pairs).as_bytes())?;
    info!(
        "R@1 {:.3}, FID {:.4} (noise {:.2}); report {}",
        report.r_top[0],
        report.fid,
        report.fid_noise,
        out.display()
    );
    Ok(())
}

pub fn parse(caption: Option<&str>, conllu: Option<&Path>) -> Result<()> {
    let vocab = RelationVocab::universal();
    let parse = parse_input(caption, conllu, &vocab)?;
    let graph = build_graph(&parse, &vocab);
    print!("{}", parse.to_conllu(&vocab));
    let mut by_relation: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, _, r) in graph.edges() {
        *by_relation.entry(vocab.relations.label(r)).or_default() += 1;
    }
    println!("tokens: {}", parse.len());
    println!("root: {}", parse.tokens()[parse.root()].form);
    println!("depth: {}", parse.depth());
    println!("directed edges (with self-loops): {}", graph.num_directed_edges());
    let rels: Vec<String> = by_relation.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("relations: {}", rels.join(" "));
    Ok(())
}

struct Series {
    run: String,
    points: Vec<(f64, f64)>,
}

/// Header and rows of a metric log; empty cells are `None`.
type Log = (Vec<String>, Vec<Vec<Option<f64>>>);

fn read_log(path: &Path) -> Result<Log> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .with_context(|| format!("{}: empty log", path.display()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("iteration") {
        bail!("{}: first column must be iteration", path.display());
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            bail!(
                "{} line {}: {} fields, expected {}",
                path.display(),
                i + 2,
                cells.len(),
                header.len()
            );
        }
        let row = cells
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some)
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} line {}: not a number", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn plot(logs: &[std::path::PathBuf], out_dir: &Path) -> Result<()> {
    let mut metrics: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    let mut long_rows = Vec::new();
    for path in logs {
        let run = path
            .parent()
            .and_then(|p| p.file_name())
            .or(path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let (header, rows) = read_log(path)?;
        for (col, name) in header.iter().enumerate().skip(1) {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| Some((r[0]?, r[col]?)))
                .collect();
            for (x, y) in &points {
                long_rows.push(vec![run.clone(), name.clone(), x.to_string(), y.to_string()]);
            }
            if !points.is_empty() {
                metrics.entry(name.clone()).or_default().push(Series {
                    run: run.clone(),
                    points,
                });
            }
        }
    }
    atomic_write(
        &out_dir.join("metrics.csv"),
        format_csv(&["run", "metric", "iteration", "value"], &long_rows).as_bytes(),
    )?;
    for (name, series) in &metrics {
        let lines: Vec<(&str, &[(f64, f64)])> = series.iter().map(|s| (s.run.as_str(), s.points.as_slice())).collect();
        let doc = svg::line_chart(name, "iteration", &lines);
        atomic_write(&out_dir.join(format!("{name}.svg")), doc.as_bytes())?;
    }
    info!("wrote {} charts to {}", metrics.len(), out_dir.display());
    Ok(())
}
