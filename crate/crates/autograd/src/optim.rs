use ndarray::ArrayD;

use crate::params::ParamStore;
use crate::Real;

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<ArrayD<S>>,
    v: Vec<ArrayD<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn with_clip(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` is indexed like the store. Returns the
    /// pre-clipping global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[ArrayD<S>]) -> f64 {
        assert_eq!(grads.len(), store.len());
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let step_size = S::lit(self.lr / bc1);
        let inv_bc2 = S::lit(1.0 / bc2);
        let eps = S::lit(self.eps);
        let scale = S::lit(scale);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = b1 * *m + (S::one() - b1) * g;
                    *v = b2 * *v + (S::one() - b2) * g * g;
                    *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, 2.0, 3.0]).unwrap());
        let mut adam = Adam::new(&s, 0.1);
        let g = ArrayD::from_shape_vec(IxDyn(&[3]), vec![5.0, -0.01, 0.0]).unwrap();
        let norm = adam.step(&mut s, &[g]);
        assert!((norm - (25.0f64 + 1e-4).sqrt()).abs() < 1e-12);
        let w = s.get(id);
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 2.1).abs() < 1e-5);
        assert_eq!(w[2], 3.0);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn clipping_rescales_but_reports_raw_norm() {
        let mut s = ParamStore::<f64>::new();
        s.zeros("w", &[2]);
        let mut adam = Adam::new(&s, 0.1).with_clip(Some(1.0));
        let g = ArrayD::from_shape_vec(IxDyn(&[2]), vec![30.0, 40.0]).unwrap();
        assert_eq!(adam.step(&mut s, &[g]), 50.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let id = s.filled("w", &[4], 5.0);
        let mut adam = Adam::new(&s, 0.05);
        for _ in 0..2000 {
            let g = s.get(id).mapv(|w| 2.0 * (w - 1.5));
            adam.step(&mut s, &[g]);
        }
        assert!(s.get(id).iter().all(|&w| (w - 1.5).abs() < 1e-3));
    }
}
