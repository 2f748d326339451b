mod common;

use common::*;

#[test]
fn gat_layer_gradients() {
    let e = measure_gat_layer_grad();
    assert!(e < 1e-4, "relative error {e}");
}

#[test]
fn gat_stack_gradients() {
    let e = measure_gat_stack_grad();
    assert!(e < 1e-4, "relative error {e}");
}

#[test]
fn decoder_block_gradients() {
    let e = measure_block_grad();
    assert!(e < 1e-4, "relative error {e}");
}

#[test]
fn full_model_gradients() {
    let e = measure_denoiser_grad();
    assert!(e < 1e-4, "relative error {e}");
}

#[test]
fn attention_rows_are_distributions() {
    let d = measure_attention_rows(100, 1);
    assert!(d < 1e-6, "row sums off by {d}");
}

#[test]
fn padding_does_not_change_outputs() {
    let d = measure_pad_invariance(100, 2);
    assert!(d < 1e-5, "padding moved outputs by {d}");
}

#[test]
fn graph_attention_is_permutation_equivariant() {
    let d = measure_permutation_equivariance(50, 3);
    assert!(d < 1e-5, "{d}");
}

#[test]
fn receptive_field_grows_one_hop_per_layer() {
    assert_eq!(measure_receptive_field(4), 0);
}

#[test]
fn disabled_text_path_ignores_the_caption() {
    let d = measure_disabled_text_path(30, 5);
    assert!(d < 1e-6, "{d}");
}

#[test]
fn live_text_path_reacts_to_the_caption() {
    // same model with fusion and cross-attention active
    let (store, model, vocab) = tiny_model(91, tiny_config(0.1));
    let mut r = rng(6);
    let a = random_parse(&mut r, 4, &vocab);
    let b = random_parse(&mut r, 3, &vocab);
    let x: autograd::ndarray::ArrayD<f64> = fgt2m::diffusion::gaussian(&[1, 4, 2], &mut r);
    let run = |p| {
        let text = text_batch(&[p], &vocab, None);
        let tape = autograd::Tape::inference();
        let ctx = fgt2m::nn::Ctx::new(&tape, &store);
        let feats = model.encode_text(ctx, &text).unwrap();
        model
            .denoiser
            .forward(ctx, tape.constant(x.clone()), &[10], &feats)
            .unwrap()
            .value()
            .as_ref()
            .clone()
    };
    let d = (&run(&a) - &run(&b)).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
    assert!(d > 1e-3, "{d}");
}

#[test]
fn lsam_off_repeats_one_vector_per_caption() {
    let mut cfg = tiny_config(0.1);
    cfg.lsam_off = true;
    let (store, model, vocab) = tiny_model(7, cfg);
    let mut r = rng(8);
    let p = random_parse(&mut r, 4, &vocab);
    let text = text_batch(&[&p], &vocab, Some(6));
    let tape = autograd::Tape::inference();
    let feats = model.encode_text(fgt2m::nn::Ctx::new(&tape, &store), &text).unwrap();
    assert_eq!(feats.depth(), 2);
    let v = feats.layers[0].value();
    for k in 1..4 {
        for d in 0..8 {
            assert_eq!(v[[0, k, d]], v[[0, 0, d]]);
        }
    }
    for d in 0..8 {
        assert_eq!(v[[0, 5, d]], 0.0);
    }
    assert_eq!(*feats.layers[1].value(), *v);
}
