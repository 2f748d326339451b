//! Small building blocks shared by the text encoder, the denoiser and the
//! evaluation embedder.

use autograd::ndarray::{ArrayD, IxDyn};
use autograd::{ParamId, ParamStore, Real, Tape, Var};
use rand::Rng;

/// A tape paired with the parameter store it reads from.
pub struct Ctx<'t, 'p, S: Real> {
    pub tape: &'t Tape<S>,
    pub params: &'p ParamStore<S>,
}

impl<S: Real> Clone for Ctx<'_, '_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: Real> Copy for Ctx<'_, '_, S> {}

impl<'t, 'p, S: Real> Ctx<'t, 'p, S> {
    pub fn new(tape: &'t Tape<S>, params: &'p ParamStore<S>) -> Self {
        Self { tape, params }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, S> {
        self.tape.param(self.params, id)
    }

    pub fn constant(&self, a: ArrayD<S>) -> Var<'t, S> {
        self.tape.constant(a)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng);
        let bias = bias.then(|| store.zeros(format!("{name}.bias"), &[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, x: Var<'t, S>) -> Var<'t, S> {
        let y = x.linear(ctx.p(self.weight));
        match self.bias {
            Some(b) => y + ctx.p(b),
            None => y,
        }
    }
}

/// Layer normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.filled(format!("{name}.gamma"), &[width], 1.0),
            beta: store.zeros(format!("{name}.beta"), &[width]),
        }
    }

    pub fn forward<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, x: Var<'t, S>) -> Var<'t, S> {
        x.layer_norm(Self::EPS) * ctx.p(self.gamma) + ctx.p(self.beta)
    }
}

/// Two linear maps with a SiLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), fan_in, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, fan_out, true, rng),
        }
    }

    pub fn forward<'t, S: Real>(&self, ctx: Ctx<'t, '_, S>, x: Var<'t, S>) -> Var<'t, S> {
        self.fc2.forward(ctx, self.fc1.forward(ctx, x).silu())
    }
}

/// Interleaved `[sin(p·ω₀), cos(p·ω₀), sin(p·ω₁), …]` with
/// `ωᵢ = 10000^(−2i/width)`.
pub fn sinusoid(position: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| {
            let i = (j / 2) as f64;
            let freq = (10000f64).powf(-2.0 * i / width as f64);
            if j % 2 == 0 {
                (position * freq).sin()
            } else {
                (position * freq).cos()
            }
        })
        .collect()
}

/// `[len, width]` table of [`sinusoid`] rows for positions `0..len`.
pub fn sinusoid_table<S: Real>(len: usize, width: usize) -> ArrayD<S> {
    let mut data = Vec::with_capacity(len * width);
    for p in 0..len {
        data.extend(sinusoid(p as f64, width).into_iter().map(S::lit));
    }
    ArrayD::from_shape_vec(IxDyn(&[len, width]), data).unwrap()
}

/// Float mask `[B, N, 1]` from a boolean `[B][N]` layout.
pub fn mask_column<S: Real>(mask: &ArrayD<bool>) -> ArrayD<S> {
    let mut shape = mask.shape().to_vec();
    shape.push(1);
    ArrayD::from_shape_vec(
        IxDyn(&shape),
        mask.iter().map(|&m| if m { S::one() } else { S::zero() }).collect(),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_at_zero_alternates() {
        let v = sinusoid(0.0, 8);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn sinusoid_distinguishes_steps() {
        let base: Vec<Vec<f64>> = (1..=1000).map(|t| sinusoid(t as f64, 64)).collect();
        for i in 0..base.len() {
            for j in (i + 1)..base.len() {
                assert!(base[i].iter().zip(&base[j]).any(|(a, b)| (a - b).abs() > 1e-9));
            }
        }
    }
}
