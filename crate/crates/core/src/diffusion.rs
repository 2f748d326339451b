//! Forward noising, the x₀-prediction objective, and the ancestral sampler.
//!
//! Step indices are 1-based and end-inclusive: `t ∈ 1..=T`.

use autograd::ndarray::{Array2, ArrayD, Axis, IxDyn};
use autograd::{Real, Tape, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Precomputed per-step quantities of a variance schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
}

impl NoiseSchedule {
    /// `β` linearly spaced from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("diffusion steps must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_variances = (0..betas.len())
            .map(|i| {
                if i == 0 {
                    betas[0]
                } else {
                    betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i])
                }
            })
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            Err(Error::StepIndex {
                index: t,
                max: self.num_steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bars[t - 2]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variances[t - 1]
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·x̂₀ + ct·xₜ`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }

    /// A shorter chain over `k` of the original steps, evenly spaced and
    /// always including `1` and `T`. Returns the new schedule and, for each of
    /// its steps, the original step index it stands for.
    pub fn respaced(&self, k: usize) -> Result<(NoiseSchedule, Vec<usize>)> {
        let n = self.num_steps();
        if k == 0 || k > n {
            return Err(Error::Parameter(format!("cannot respace {n} steps to {k}")));
        }
        let kept: Vec<usize> = if k == 1 {
            vec![n]
        } else {
            let mut v: Vec<usize> = (0..k)
                .map(|i| 1 + ((n - 1) as f64 * i as f64 / (k - 1) as f64).round() as usize)
                .collect();
            v.dedup();
            v
        };
        let mut prev = 1.0;
        let betas = kept
            .iter()
            .map(|&t| {
                let ab = self.alpha_bar(t);
                let b = 1.0 - ab / prev;
                prev = ab;
                b
            })
            .collect();
        Ok((Self::from_betas(betas), kept))
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_variances
    }
}

pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

/// One motion clip: `frames × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub data: Array2<f32>,
}

impl MotionSequence {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Contract(format!(
                "motion must have at least one frame and channel, got {:?}",
                data.shape()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite motion value at flat index {pos}")));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel_mean(&self, c: usize) -> f32 {
        self.data.column(c).mean().unwrap_or(0.0)
    }
}

/// Stacks clips of equal shape into a `[B, T, D]` array.
pub fn stack_motions<S: Real>(motions: &[&MotionSequence]) -> Result<ArrayD<S>> {
    let first = motions
        .first()
        .ok_or_else(|| Error::Contract("empty motion batch".into()))?;
    let (t, d) = (first.frames(), first.channels());
    let mut out = ArrayD::zeros(IxDyn(&[motions.len(), t, d]));
    for (i, m) in motions.iter().enumerate() {
        if m.data.dim() != (t, d) {
            return Err(Error::Contract(format!(
                "motion {i} has shape {:?}, batch expects ({t}, {d})",
                m.data.dim()
            )));
        }
        out.index_axis_mut(Axis(0), i)
            .assign(&m.data.mapv(|v| S::lit(v as f64)).into_dyn());
    }
    Ok(out)
}

/// Closed-form `xₜ = √ᾱₜ·x₀ + √(1−ᾱₜ)·ε`.
pub fn q_sample<S: Real>(
    x0: &ArrayD<S>,
    t: usize,
    eps: &ArrayD<S>,
    sched: &NoiseSchedule,
) -> Result<ArrayD<S>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Contract(format!(
            "noise shape {:?} differs from data shape {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()));
    Ok(x0.mapv(|v| v * a) + &eps.mapv(|v| v * b))
}

/// [`q_sample`] with one step index per leading-axis item.
pub fn q_sample_batch<S: Real>(
    x0: &ArrayD<S>,
    ts: &[usize],
    eps: &ArrayD<S>,
    sched: &NoiseSchedule,
) -> Result<ArrayD<S>> {
    if x0.shape()[0] != ts.len() {
        return Err(Error::Contract(format!(
            "{} step indices for a batch of {}",
            ts.len(),
            x0.shape()[0]
        )));
    }
    let mut out = ArrayD::zeros(x0.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let xi = x0.index_axis(Axis(0), i).to_owned();
        let ei = eps.index_axis(Axis(0), i).to_owned();
        out.index_axis_mut(Axis(0), i)
            .assign(&q_sample(&xi, t, &ei, sched)?);
    }
    Ok(out)
}

pub fn gaussian<S: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> ArrayD<S> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || S::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Anything that maps `(xₜ, t, condition)` to an estimate of `x₀`.
pub trait Denoiser<S: Real> {
    type Cond: ?Sized;

    /// `x_t` is `[B, T, D]`; `t` holds one step index per batch item.
    fn predict_x0<'t>(
        &self,
        tape: &'t Tape<S>,
        x_t: Var<'t, S>,
        t: &[usize],
        cond: &Self::Cond,
    ) -> Result<Var<'t, S>>;
}

/// Adapts a closure into an unconditional [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<F> FnDenoiser<F> {
    /// Pins the closure's signature so it is generic over the tape lifetime.
    pub fn new<S: Real>(f: F) -> Self
    where
        F: for<'t> Fn(&'t Tape<S>, Var<'t, S>, &[usize]) -> Var<'t, S>,
    {
        Self(f)
    }
}

impl<S, F> Denoiser<S> for FnDenoiser<F>
where
    S: Real,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>, &[usize]) -> Var<'t, S>,
{
    type Cond = ();

    fn predict_x0<'t>(
        &self,
        tape: &'t Tape<S>,
        x_t: Var<'t, S>,
        t: &[usize],
        _cond: &(),
    ) -> Result<Var<'t, S>> {
        Ok((self.0)(tape, x_t, t))
    }
}

/// Mean squared error between `x₀` and the denoiser's reconstruction from
/// the noised input, averaged over every element.
pub fn training_loss<'t, S: Real, D: Denoiser<S> + ?Sized>(
    tape: &'t Tape<S>,
    denoiser: &D,
    x0: &ArrayD<S>,
    t: &[usize],
    cond: &D::Cond,
    eps: &ArrayD<S>,
    sched: &NoiseSchedule,
) -> Result<Var<'t, S>> {
    let x_t = q_sample_batch(x0, t, eps, sched)?;
    let pred = denoiser.predict_x0(tape, tape.constant(x_t), t, cond)?;
    if pred.shape() != x0.shape() {
        return Err(Error::Contract(format!(
            "denoiser returned {:?} for data of shape {:?}",
            pred.shape(),
            x0.shape()
        )));
    }
    let target = tape.constant(x0.clone());
    Ok((pred - target).square().mean())
}

/// `μₜ(x̂₀, xₜ)` of the forward-process posterior.
pub fn posterior_mean<S: Real>(
    x0_hat: &ArrayD<S>,
    x_t: &ArrayD<S>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<ArrayD<S>> {
    sched.check_step(t)?;
    let (c0, ct) = sched.posterior_mean_coefs(t);
    let (c0, ct) = (S::lit(c0), S::lit(ct));
    Ok(x0_hat.mapv(|v| v * c0) + &x_t.mapv(|v| v * ct))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SamplerOptions {
    /// Clamp `x̂₀` to `[-c, c]` before forming the posterior mean.
    pub clamp_x0: Option<f64>,
}

/// One ancestral step `xₜ → xₜ₋₁`; no noise is added at `t = 1`.
pub fn p_sample_step<S: Real, D: Denoiser<S> + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x_t: &ArrayD<S>,
    t: usize,
    cond: &D::Cond,
    sched: &NoiseSchedule,
    rng: &mut R,
    opts: SamplerOptions,
) -> Result<ArrayD<S>> {
    sched.check_step(t)?;
    let tape = Tape::inference();
    let ts = vec![t; x_t.shape()[0]];
    let pred = denoiser.predict_x0(&tape, tape.constant(x_t.clone()), &ts, cond)?;
    let mut x0_hat = (*pred.value()).clone();
    if x0_hat.shape() != x_t.shape() {
        return Err(Error::Contract(format!(
            "denoiser returned {:?} for input {:?}",
            x0_hat.shape(),
            x_t.shape()
        )));
    }
    if let Some(c) = opts.clamp_x0 {
        let c = S::lit(c);
        x0_hat.mapv_inplace(|v| v.max(-c).min(c));
    }
    let mean = posterior_mean(&x0_hat, x_t, t, sched)?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = S::lit(sched.posterior_variance(t).sqrt());
    let z: ArrayD<S> = gaussian(x_t.shape(), rng);
    Ok(mean + &z.mapv(|v| v * sigma))
}

/// Full reverse chain from `x_T ~ N(0, I)` down to `x₀`, for a batch of
/// `batch` clips of `frames × channels`.
#[allow(clippy::too_many_arguments)]
pub fn sample_loop<S: Real, D: Denoiser<S> + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &D::Cond,
    batch: usize,
    frames: usize,
    channels: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
    opts: SamplerOptions,
) -> Result<ArrayD<S>> {
    let mut x: ArrayD<S> = gaussian(&[batch, frames, channels], rng);
    for t in (1..=sched.num_steps()).rev() {
        x = p_sample_step(denoiser, &x, t, cond, sched, rng, opts)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                location: format!("sampling step t={t}"),
            });
        }
    }
    Ok(x)
}

/// Runs a denoiser trained on the full chain inside a respaced one.
struct Remapped<'a, D: ?Sized> {
    inner: &'a D,
    steps: &'a [usize],
}

impl<S: Real, D: Denoiser<S> + ?Sized> Denoiser<S> for Remapped<'_, D> {
    type Cond = D::Cond;

    fn predict_x0<'t>(&self, tape: &'t Tape<S>, x_t: Var<'t, S>, t: &[usize], cond: &D::Cond) -> Result<Var<'t, S>> {
        let mapped: Vec<usize> = t.iter().map(|&i| self.steps[i - 1]).collect();
        self.inner.predict_x0(tape, x_t, &mapped, cond)
    }
}

/// Reverse chain over `steps` evenly spaced steps of `sched`. With
/// `steps == sched.num_steps()` this is exactly [`sample_loop`].
#[allow(clippy::too_many_arguments)]
pub fn sample_loop_respaced<S: Real, D: Denoiser<S> + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &D::Cond,
    batch: usize,
    frames: usize,
    channels: usize,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
    opts: SamplerOptions,
) -> Result<ArrayD<S>> {
    if steps == sched.num_steps() {
        return sample_loop(denoiser, cond, batch, frames, channels, sched, rng, opts);
    }
    let (short, kept) = sched.respaced(steps)?;
    let remapped = Remapped {
        inner: denoiser,
        steps: &kept,
    };
    sample_loop(&remapped, cond, batch, frames, channels, &short, rng, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_schedule_endpoints() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.num_steps(), 1000);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(matches!(make_linear_schedule(0, 1e-4, 0.02), Err(Error::Parameter(_))));
        assert!(matches!(make_linear_schedule(10, 0.0, 0.02), Err(Error::Parameter(_))));
        assert!(matches!(make_linear_schedule(10, 0.03, 0.02), Err(Error::Parameter(_))));
        assert!(matches!(make_linear_schedule(10, 0.1, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn schedule_invariants() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 1..=1000 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert!(s.posterior_variance(t) >= 0.0 && s.posterior_variance(t) <= s.beta(t));
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() < 1e-15);
                let snr = |t: usize| s.alpha_bar(t) / (1.0 - s.alpha_bar(t));
                assert!(snr(t) < snr(t - 1));
            }
        }
    }

    #[test]
    fn q_sample_degenerate_inputs() {
        let s = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let x0 = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let zeros = ArrayD::<f64>::zeros(IxDyn(&[2, 2]));
        let out = q_sample(&x0, 40, &zeros, &s).unwrap();
        let k = s.alpha_bar(40).sqrt();
        for (o, x) in out.iter().zip(x0.iter()) {
            assert_eq!(*o, x * k);
        }
        let out = q_sample(&zeros, 40, &x0, &s).unwrap();
        let k = (1.0 - s.alpha_bar(40)).sqrt();
        for (o, e) in out.iter().zip(x0.iter()) {
            assert_eq!(*o, e * k);
        }
        assert!(matches!(q_sample(&x0, 0, &zeros, &s), Err(Error::StepIndex { .. })));
        assert!(matches!(q_sample(&x0, 101, &zeros, &s), Err(Error::StepIndex { .. })));
    }

    #[test]
    fn identity_and_zero_denoisers() {
        let s = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0: ArrayD<f64> = gaussian(&[2, 4, 3], &mut rng);
        let eps: ArrayD<f64> = gaussian(&[2, 4, 3], &mut rng);
        let mean_sq = x0.mapv(|v| v * v).mean().unwrap();

        let x0c = x0.clone();
        let oracle = FnDenoiser::new(move |tape: &Tape<f64>, _x: Var<'_, f64>, _t: &[usize]| {
            tape.constant(x0c.clone())
        });
        let tape = Tape::new();
        let loss = training_loss(&tape, &oracle, &x0, &[10, 20], &(), &eps, &s).unwrap();
        assert_eq!(loss.item(), 0.0);

        let zero = FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, _t: &[usize]| x.scale(0.0));
        let tape = Tape::new();
        let loss = training_loss(&tape, &zero, &x0, &[10, 20], &(), &eps, &s).unwrap();
        assert!((loss.item() - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let s = make_linear_schedule(10, 1e-4, 0.02).unwrap();
        let x0 = ArrayD::<f64>::zeros(IxDyn(&[1, 4, 2]));
        let bad = FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, _t: &[usize]| x.narrow(2, 0, 1));
        let tape = Tape::new();
        let r = training_loss(&tape, &bad, &x0, &[3], &(), &x0, &s);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn final_step_adds_no_noise() {
        let s = make_linear_schedule(10, 1e-4, 0.02).unwrap();
        let half = FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, _t: &[usize]| x.scale(0.5));
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 2, 1]), vec![1.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = p_sample_step(&half, &x, 1, &(), &s, &mut rng, SamplerOptions::default()).unwrap();
        let expect = posterior_mean(&x.mapv(|v| v * 0.5), &x, 1, &s).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn seeded_steps_are_reproducible() {
        let s = make_linear_schedule(10, 1e-4, 0.02).unwrap();
        let half = FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, _t: &[usize]| x.scale(0.5));
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 2, 1]), vec![1.0, -1.0]).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            p_sample_step(&half, &x, 7, &(), &s, &mut rng, SamplerOptions::default()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_names_the_step() {
        let s = make_linear_schedule(5, 1e-4, 0.02).unwrap();
        let blowup =
            FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, t: &[usize]| {
                if t[0] == 3 {
                    x.scale(f64::INFINITY)
                } else {
                    x
                }
            });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_loop(&blowup, &(), 1, 2, 2, &s, &mut rng, SamplerOptions::default()).unwrap_err();
        assert!(err.to_string().contains("t=3"), "{err}");
    }

    #[test]
    fn respacing_keeps_endpoints_and_alpha_bars() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let (short, kept) = s.respaced(50).unwrap();
        assert_eq!(kept.len(), 50);
        assert_eq!((kept[0], kept[49]), (1, 1000));
        for (i, &t) in kept.iter().enumerate() {
            assert!((short.alpha_bar(i + 1) - s.alpha_bar(t)).abs() < 1e-12);
        }
        let (same, kept) = s.respaced(1000).unwrap();
        assert_eq!(kept, (1..=1000).collect::<Vec<_>>());
        for t in 1..=1000 {
            assert!((same.beta(t) - s.beta(t)).abs() < 1e-12);
        }
        assert!(s.respaced(0).is_err());
        assert!(s.respaced(1001).is_err());
    }

    #[test]
    fn respaced_sampler_sees_original_steps() {
        let s = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let seen = std::cell::RefCell::new(Vec::new());
        let spy = FnDenoiser::new(|_: &Tape<f64>, x: Var<'_, f64>, t: &[usize]| {
            seen.borrow_mut().push(t[0]);
            x.scale(0.0)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_loop_respaced(&spy, &(), 1, 3, 2, &s, 5, &mut rng, SamplerOptions::default()).unwrap();
        assert_eq!(*seen.borrow(), vec![100, 75, 51, 26, 1]);
        assert!(out.iter().all(|v| *v == 0.0));
    }
}
