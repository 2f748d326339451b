mod common;

use fgt2m::checkpoint::Checkpoint;
use fgt2m::config::RunConfig;
use fgt2m::dataset::generate_dataset;
use fgt2m::ling_graph::RelationVocab;
use fgt2m::pipeline::{
    decode_array, encode_array, evaluate, format_log, generate_for, split_heldout, train, train_evaluator,
};
use fgt2m::text::ToyGrammar;

const TINY: &str = r#"
[diffusion]
sample_steps = 5
[model]
width = 8
heads = 2
[data]
records = 600
frames = 16
heldout = 64
[train]
batch = 8
iters = 30
log_every = 10
eval_every = 15
lr = 1e-3
[eval]
samples = 64
repeats = 1
mm_generations = 4
mm_texts = 2
embedder_epochs = 2
diversity_subset = 10
"#;

#[test]
fn train_save_load_evaluate() {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let vocab = RelationVocab::universal();
    let grammar = ToyGrammar::new();
    let lexicon = grammar.lexicon();
    let records = generate_dataset(cfg.data.records, cfg.data.frames, cfg.data.seed, &grammar, &vocab).unwrap();
    let (tr, held) = split_heldout(&records, cfg.data.heldout).unwrap();
    assert_eq!((tr.len(), held.len()), (536, 64));
    let (emb, _) = train_evaluator(&cfg, tr, &vocab, &lexicon).unwrap();

    let mut seen = Vec::new();
    let out = train(&cfg, tr, held, &vocab, &lexicon, Some(&emb), |row, snap| {
        seen.push((row.iteration, snap.is_some()));
        Ok(())
    })
    .unwrap();
    assert_eq!(out.iterations, 30);
    assert_eq!(seen, [(10, false), (15, true), (20, false), (30, true)]);
    let csv = format_log(&out.log);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,loss,r_top1,r_top3,fid"));
    assert_eq!(lines.count(), 4);
    assert!(out.log.iter().all(|r| r.loss.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.encode(), out.checkpoint.encode());
    assert_eq!(back.config, cfg);

    let model = back.model().unwrap();
    let refs: Vec<_> = held[..4].iter().collect();
    let a = generate_for(&cfg, &model, &back.params, &vocab, &refs, &mut common::rng(1)).unwrap();
    let b = generate_for(&cfg, &model, &back.params, &vocab, &refs, &mut common::rng(1)).unwrap();
    assert_eq!(a.shape(), &[4, 16, 8]);
    assert_eq!(a, b);
    assert_eq!(decode_array(&encode_array(&a)).unwrap(), a);

    let r1 = evaluate(&cfg, &model, &back.params, &vocab, held, &emb).unwrap();
    let r2 = evaluate(&cfg, &model, &back.params, &vocab, held, &emb).unwrap();
    assert_eq!(r1, r2);
    assert!(r1.fid.is_finite() && r1.fid_noise > 0.0);
    assert!(r1.r_top[0] <= r1.r_top[1] && r1.r_top[1] <= r1.r_top[2]);
}

#[test]
fn failing_callback_stops_training() {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let vocab = RelationVocab::universal();
    let grammar = ToyGrammar::new();
    let records = generate_dataset(40, 16, 0, &grammar, &vocab).unwrap();
    let err = train(&cfg, &records, &[], &vocab, &grammar.lexicon(), None, |_, _| {
        Err(fgt2m::error::Error::Input("stop".into()))
    });
    assert!(err.is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let vocab = RelationVocab::universal();
    let grammar = ToyGrammar::new();
    let mut store = autograd::ParamStore::new();
    fgt2m::checkpoint::build_model(&cfg, &vocab, &grammar.lexicon(), &mut store, 0).unwrap();
    let ck = Checkpoint {
        config: cfg,
        vocab,
        lexicon: grammar.lexicon(),
        params: store,
    };
    let bytes = ck.encode();
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut {cut}");
    }
}
