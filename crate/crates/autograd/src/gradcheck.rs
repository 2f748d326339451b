//! Central finite-difference checks against the tape's gradients.

use ndarray::ArrayD;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Per-parameter comparison between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
    pub rel_error: f64,
}

/// Relative error between two gradient arrays, with `floor` guarding the
/// all-zero case.
pub fn rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, floor: f64) -> f64 {
    let diff = (analytic - numeric).mapv(|x| x * x).sum().sqrt();
    let na = analytic.mapv(|x| x * x).sum().sqrt();
    let nn = numeric.mapv(|x| x * x).sum().sqrt();
    diff / na.max(nn).max(floor)
}

/// Numeric gradient of `loss` with respect to every entry of parameter `id`.
pub fn numeric_grad<F>(store: &mut ParamStore<f64>, id: ParamId, h: f64, loss: &F) -> ArrayD<f64>
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let n = store.get(id).len();
    let mut out = ArrayD::zeros(store.get(id).raw_dim());
    for i in 0..n {
        let orig = store.get(id).as_slice().unwrap()[i];
        store.get_mut(id).as_slice_mut().unwrap()[i] = orig + h;
        let plus = loss(store);
        store.get_mut(id).as_slice_mut().unwrap()[i] = orig - h;
        let minus = loss(store);
        store.get_mut(id).as_slice_mut().unwrap()[i] = orig;
        out.as_slice_mut().unwrap()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Compares tape gradients of `build` with central differences for the
/// listed parameters (all parameters when `ids` is empty).
pub fn check_params<F>(store: &ParamStore<f64>, ids: &[ParamId], h: f64, build: F) -> Vec<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let loss = build(&tape, store);
    let grads = tape.backward(loss);
    let ids: Vec<ParamId> = if ids.is_empty() {
        store.ids().collect()
    } else {
        ids.to_vec()
    };
    let eval = |s: &ParamStore<f64>| {
        let t = Tape::inference();
        build(&t, s).item()
    };
    let mut work = store.clone();
    ids.iter()
        .map(|&id| {
            let analytic = grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(store.get(id).raw_dim()));
            let numeric = numeric_grad(&mut work, id, h, &eval);
            GradReport {
                name: store.name(id).to_string(),
                analytic_norm: analytic.mapv(|x| x * x).sum().sqrt(),
                numeric_norm: numeric.mapv(|x| x * x).sum().sqrt(),
                rel_error: rel_error(&analytic, &numeric, 1e-10),
            }
        })
        .collect()
}

/// Worst relative error across a report.
pub fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.rel_error).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn numeric_gradient_of_a_cubic() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("x", ArrayD::from_shape_vec(IxDyn(&[3]), vec![-1.0, 0.5, 2.0]).unwrap());
        let g = numeric_grad(&mut s, id, 1e-5, &|s: &ParamStore<f64>| s.get(id).mapv(|x| x * x * x).sum());
        for (x, d) in s.get(id).iter().zip(g.iter()) {
            assert!((d - 3.0 * x * x).abs() < 1e-8);
        }
    }

    #[test]
    fn relative_error_uses_the_floor_for_zero_gradients() {
        let z = ArrayD::<f64>::zeros(IxDyn(&[2]));
        let tiny = ArrayD::from_elem(IxDyn(&[2]), 1e-12);
        assert!(rel_error(&z, &tiny, 1e-8) < 1e-3);
        let a = ArrayD::from_elem(IxDyn(&[2]), 1.0);
        let b = ArrayD::from_elem(IxDyn(&[2]), 1.1);
        assert!((rel_error(&a, &b, 1e-8) - 0.1 / 1.1).abs() < 1e-12);
    }
}
