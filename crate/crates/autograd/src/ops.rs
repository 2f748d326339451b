//! Differentiable operations on [`Var`].
//!
//! Every op computes its value eagerly and, when any input requires a
//! gradient, records a closure mapping the output gradient to input
//! gradients. Values are always kept in standard (row-major) layout.

use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn, Slice};

use crate::tape::Var;
use crate::Real;

/// Row-major copy of any view, walking it one last-axis lane at a time.
fn materialize<S: Real>(v: ArrayViewD<'_, S>) -> ArrayD<S> {
    if let Some(s) = v.as_slice() {
        return ArrayD::from_shape_vec(v.raw_dim(), s.to_vec()).unwrap();
    }
    let nd = v.ndim();
    let mut out = Vec::with_capacity(v.len());
    for lane in v.lanes(Axis(nd - 1)) {
        match lane.as_slice() {
            Some(s) => out.extend_from_slice(s),
            None => out.extend(lane.iter().copied()),
        }
    }
    ArrayD::from_shape_vec(v.raw_dim(), out).unwrap()
}

fn standard<S: Real>(a: ArrayD<S>) -> ArrayD<S> {
    if a.is_standard_layout() {
        a
    } else {
        materialize(a.view())
    }
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to<S: Real>(mut g: ArrayD<S>, shape: &[usize]) -> ArrayD<S> {
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    standard(g)
}

/// `C_i = op(A_i) op(B_i)` over `g` batches; a step of 0 shares the operand
/// across batches, and `c_step == 0` accumulates every batch into one output.
#[allow(clippy::too_many_arguments)]
fn gemm_loop<S: Real>(
    g: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    ta: bool,
    a_step: usize,
    b: &[S],
    tb: bool,
    b_step: usize,
    c: &mut [S],
    c_step: usize,
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if c_step == 0 { S::one() } else { S::zero() };
    if g == 0 || m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (g - 1) * a_step + m * k);
    assert!(b.len() >= (g - 1) * b_step + k * n);
    assert!(c.len() >= (g - 1) * c_step + m * n);
    for i in 0..g {
        // SAFETY: bounds asserted above; `c` is a distinct mutable buffer.
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                a.as_ptr().add(i * a_step),
                rsa,
                csa,
                b.as_ptr().add(i * b_step),
                rsb,
                csb,
                beta,
                c.as_mut_ptr().add(i * c_step),
                n as isize,
                1,
            );
        }
    }
}

fn split_batch(shape: &[usize]) -> (&[usize], usize, usize) {
    assert!(shape.len() >= 2, "matmul operand needs at least 2 dims, got {shape:?}");
    let nd = shape.len();
    (&shape[..nd - 2], shape[nd - 2], shape[nd - 1])
}

impl<'t, S: Real> Var<'t, S> {
    fn binary(
        self,
        other: Var<'t, S>,
        f: impl Fn(&ArrayD<S>, &ArrayD<S>) -> ArrayD<S>,
        bw: impl Fn(&ArrayD<S>, &ArrayD<S>, &ArrayD<S>) -> (ArrayD<S>, ArrayD<S>) + 'static,
    ) -> Var<'t, S> {
        let a = self.value();
        let b = other.value();
        let out = standard(f(&a, &b));
        self.tape.record(
            out,
            &[self.id, other.id],
            Box::new(move |g| {
                let (ga, gb) = bw(g, &a, &b);
                vec![
                    Some(reduce_to(ga, a.shape())),
                    Some(reduce_to(gb, b.shape())),
                ]
            }),
        )
    }

    /// Broadcasting elementwise sum.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t, S>) -> Var<'t, S> {
        self.binary(other, |a, b| a + b, |g, _, _| (g.clone(), g.clone()))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t, S>) -> Var<'t, S> {
        self.binary(other, |a, b| a - b, |g, _, _| (g.clone(), g.mapv(|x| -x)))
    }

    /// Broadcasting elementwise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t, S>) -> Var<'t, S> {
        self.binary(other, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    /// Elementwise map with a derivative given as `df(x, y)` where `y = f(x)`.
    pub fn map(
        self,
        f: impl Fn(S) -> S,
        df: impl Fn(S, S) -> S + 'static,
    ) -> Var<'t, S> {
        let x = self.value();
        let y = x.mapv(f);
        self.tape.record_out(y, &[self.id], move |y_keep| {
            Box::new(move |g| {
                let mut gx = g.clone();
                let gs = gx.as_slice_mut().unwrap();
                let xs = x.as_slice().unwrap();
                let ys = y_keep.as_slice().unwrap();
                for ((gi, &xi), &yi) in gs.iter_mut().zip(xs).zip(ys) {
                    *gi *= df(xi, yi);
                }
                vec![Some(gx)]
            })
        })
    }

    pub fn scale(self, c: f64) -> Var<'t, S> {
        let c = S::lit(c);
        let y = self.value().mapv(|x| x * c);
        self.tape
            .record(y, &[self.id], Box::new(move |g| vec![Some(g.mapv(|v| v * c))]))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, S> {
        let c = S::lit(c);
        let y = self.value().mapv(|x| x + c);
        self.tape
            .record(y, &[self.id], Box::new(move |g| vec![Some(g.clone())]))
    }

    pub fn square(self) -> Var<'t, S> {
        self.map(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Var<'t, S> {
        self.map(|x| x.sqrt(), |_, y| S::lit(0.5) / y)
    }

    pub fn exp(self) -> Var<'t, S> {
        self.map(|x| x.exp(), |_, y| y)
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.map(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, S> {
        self.map(sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn relu(self) -> Var<'t, S> {
        self.map(
            |x| x.max(S::zero()),
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, S> {
        let s = S::lit(slope);
        self.map(
            move |x| if x > S::zero() { x } else { x * s },
            move |x, _| if x > S::zero() { S::one() } else { s },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'t, S> {
        self.map(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    /// Batched matrix product `op(self) · op(other)` over the last two axes.
    ///
    /// Leading axes must match, or one operand must be a plain matrix that is
    /// shared across the other's batch.
    pub fn matmul_t(self, other: Var<'t, S>, ta: bool, tb: bool) -> Var<'t, S> {
        let a = self.value();
        let b = other.value();
        let (a_lead, ar, ac) = split_batch(a.shape());
        let (b_lead, br, bc) = split_batch(b.shape());
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims: {:?} x {:?}", a.shape(), b.shape());
        let lead: Vec<usize> = match (a_lead.is_empty(), b_lead.is_empty()) {
            (_, true) => a_lead.to_vec(),
            (true, false) => b_lead.to_vec(),
            (false, false) => {
                assert_eq!(a_lead, b_lead, "matmul batch dims differ");
                a_lead.to_vec()
            }
        };
        let g: usize = lead.iter().product();
        let a_step = if a_lead.is_empty() { 0 } else { m * k };
        let b_step = if b_lead.is_empty() { 0 } else { k * n };
        let mut shape = lead.clone();
        shape.extend([m, n]);
        let mut out = vec![S::zero(); g * m * n];
        gemm_loop(
            g,
            m,
            k,
            n,
            a.as_slice().unwrap(),
            ta,
            a_step,
            b.as_slice().unwrap(),
            tb,
            b_step,
            &mut out,
            m * n,
        );
        let out = ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap();
        self.tape.record(
            out,
            &[self.id, other.id],
            Box::new(move |gc| {
                let gc = gc.as_slice().unwrap();
                let av = a.as_slice().unwrap();
                let bv = b.as_slice().unwrap();
                let mut ga = vec![S::zero(); a.len()];
                let ga_step = if a_step == 0 { 0 } else { m * k };
                if ta {
                    gemm_loop(g, k, n, m, bv, tb, b_step, gc, true, m * n, &mut ga, ga_step);
                } else {
                    gemm_loop(g, m, n, k, gc, false, m * n, bv, !tb, b_step, &mut ga, ga_step);
                }
                let mut gb = vec![S::zero(); b.len()];
                let gb_step = if b_step == 0 { 0 } else { k * n };
                if tb {
                    gemm_loop(g, n, m, k, gc, true, m * n, av, ta, a_step, &mut gb, gb_step);
                } else {
                    gemm_loop(g, k, m, n, av, !ta, a_step, gc, false, m * n, &mut gb, gb_step);
                }
                vec![
                    Some(ArrayD::from_shape_vec(a.raw_dim(), ga).unwrap()),
                    Some(ArrayD::from_shape_vec(b.raw_dim(), gb).unwrap()),
                ]
            }),
        )
    }

    pub fn matmul(self, other: Var<'t, S>) -> Var<'t, S> {
        self.matmul_t(other, false, false)
    }

    /// `x · W` for a weight matrix `W: [in, out]`, applied over the last axis
    /// of an input of any rank.
    pub fn linear(self, weight: Var<'t, S>) -> Var<'t, S> {
        let shape = self.shape();
        let wshape = weight.shape();
        assert_eq!(wshape.len(), 2);
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = self.reshape(&[rows, shape[shape.len() - 1]]);
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = wshape[1];
        flat.matmul(weight).reshape(&out_shape)
    }

    /// `x · W + b`.
    pub fn affine(self, weight: Var<'t, S>, bias: Var<'t, S>) -> Var<'t, S> {
        self.linear(weight).add(bias)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, S> {
        let x = self.value();
        assert_eq!(
            x.len(),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {shape:?}",
            x.shape()
        );
        if x.shape() == shape {
            return self;
        }
        let in_dim = x.raw_dim();
        let out = ArrayD::from_shape_vec(IxDyn(shape), x.as_slice().unwrap().to_vec()).unwrap();
        self.tape.record(
            out,
            &[self.id],
            Box::new(move |g| vec![Some(g.clone().into_shape_with_order(in_dim.clone()).unwrap())]),
        )
    }

    pub fn permute(self, axes: &[usize]) -> Var<'t, S> {
        let x = self.value();
        let out = materialize(x.view().permuted_axes(IxDyn(axes)));
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape.record(
            out,
            &[self.id],
            Box::new(move |g| {
                vec![Some(materialize(g.view().permuted_axes(IxDyn(&inverse))))]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Var<'t, S> {
        let nd = self.ndim();
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Var<'t, S>], axis: usize) -> Var<'t, S> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let vals: Vec<Rc<ArrayD<S>>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = standard(ndarray::concatenate(Axis(axis), &views).expect("concat shapes"));
        let sizes: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.record(
            out,
            &ids,
            Box::new(move |g| {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&s| {
                        let piece = materialize(g.slice_axis(Axis(axis), Slice::from(start..start + s)));
                        start += s;
                        Some(piece)
                    })
                    .collect()
            }),
        )
    }

    /// Contiguous range along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t, S> {
        let x = self.value();
        let out = materialize(x.slice_axis(Axis(axis), Slice::from(start..start + len)));
        let in_dim = x.raw_dim();
        self.tape.record(
            out,
            &[self.id],
            Box::new(move |g| {
                let mut gx = ArrayD::zeros(in_dim.clone());
                gx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![Some(gx)]
            }),
        )
    }

    /// Row lookup on a matrix; `None` yields a zero row with no gradient.
    pub fn gather_rows(self, index: &[Option<usize>]) -> Var<'t, S> {
        let src = self.value();
        assert_eq!(src.ndim(), 2, "gather_rows expects a matrix");
        let (rows, cols) = (src.shape()[0], src.shape()[1]);
        let sv = src.as_slice().unwrap();
        let mut out = vec![S::zero(); index.len() * cols];
        for (r, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                assert!(i < rows, "gather index {i} out of range {rows}");
                out[r * cols..(r + 1) * cols].copy_from_slice(&sv[i * cols..(i + 1) * cols]);
            }
        }
        let index = index.to_vec();
        self.tape.record(
            ArrayD::from_shape_vec(IxDyn(&[index.len(), cols]), out).unwrap(),
            &[self.id],
            Box::new(move |g| {
                let gv = g.as_slice().unwrap();
                let mut gs = vec![S::zero(); rows * cols];
                for (r, idx) in index.iter().enumerate() {
                    if let Some(i) = *idx {
                        for c in 0..cols {
                            gs[i * cols + c] += gv[r * cols + c];
                        }
                    }
                }
                vec![Some(ArrayD::from_shape_vec(IxDyn(&[rows, cols]), gs).unwrap())]
            }),
        )
    }

    pub fn sum(self) -> Var<'t, S> {
        let x = self.value();
        let s = x.sum();
        let dim = x.raw_dim();
        self.tape.record(
            ArrayD::from_elem(IxDyn(&[]), s),
            &[self.id],
            Box::new(move |g| {
                let gv = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(dim.clone(), gv))]
            }),
        )
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Var<'t, S> {
        let x = self.value();
        let mut out = x.sum_axis(Axis(axis));
        if keepdim {
            out = out.insert_axis(Axis(axis));
        }
        let dim = x.raw_dim();
        self.tape.record(
            standard(out),
            &[self.id],
            Box::new(move |g| {
                let g = if keepdim {
                    g.view()
                } else {
                    g.view().insert_axis(Axis(axis))
                };
                vec![Some(materialize(g.broadcast(dim.clone()).unwrap()))]
            }),
        )
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Var<'t, S> {
        let n = self.shape()[axis];
        self.sum_axis(axis, keepdim).scale(1.0 / n as f64)
    }

    /// Softmax over the last axis. `mask` (broadcastable to the input shape)
    /// marks the entries allowed to receive weight; rows with no allowed
    /// entry come out all-zero.
    pub fn softmax(self, mask: Option<&ArrayD<bool>>) -> Var<'t, S> {
        let x = self.value();
        let n = *x.shape().last().expect("softmax on a scalar");
        let xv = x.as_slice().unwrap();
        let allowed: Option<Vec<bool>> = mask.map(|m| {
            m.broadcast(x.raw_dim())
                .expect("softmax mask not broadcastable")
                .iter()
                .copied()
                .collect()
        });
        let mut y = vec![S::zero(); xv.len()];
        for (r, (xr, yr)) in xv.chunks(n).zip(y.chunks_mut(n)).enumerate() {
            let ok = |j: usize| allowed.as_ref().is_none_or(|a| a[r * n + j]);
            let mut mx = S::neg_infinity();
            for (j, &v) in xr.iter().enumerate() {
                if ok(j) && v > mx {
                    mx = v;
                }
            }
            if mx == S::neg_infinity() {
                continue;
            }
            let mut z = S::zero();
            for (j, (&v, o)) in xr.iter().zip(yr.iter_mut()).enumerate() {
                if ok(j) {
                    *o = (v - mx).exp();
                    z += *o;
                }
            }
            for o in yr.iter_mut() {
                *o /= z;
            }
        }
        let y = ArrayD::from_shape_vec(x.raw_dim(), y).unwrap();
        self.tape.record_out(y, &[self.id], move |y_keep| {
            Box::new(move |g| {
                let gv = g.as_slice().unwrap();
                let yv = y_keep.as_slice().unwrap();
                let mut gx = vec![S::zero(); yv.len()];
                for ((gr, yr), xr) in gv.chunks(n).zip(yv.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in xr.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(ArrayD::from_shape_vec(y_keep.raw_dim(), gx).unwrap())]
            })
        })
    }

    /// Natural log; inputs must be positive.
    pub fn ln(self) -> Var<'t, S> {
        self.map(|x| x.ln(), |x, _| S::one() / x)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'t, S> {
        let x = self.value();
        let n = *x.shape().last().expect("log_softmax on a scalar");
        let xv = x.as_slice().unwrap();
        let mut y = vec![S::zero(); xv.len()];
        for (xr, yr) in xv.chunks(n).zip(y.chunks_mut(n)) {
            let mx = xr.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = mx + xr.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
            for (o, &v) in yr.iter_mut().zip(xr) {
                *o = v - lse;
            }
        }
        let y = ArrayD::from_shape_vec(x.raw_dim(), y).unwrap();
        self.tape.record_out(y, &[self.id], move |y_keep| {
            Box::new(move |g| {
                let gv = g.as_slice().unwrap();
                let yv = y_keep.as_slice().unwrap();
                let mut gx = vec![S::zero(); yv.len()];
                for ((gr, yr), xr) in gv.chunks(n).zip(yv.chunks(n)).zip(gx.chunks_mut(n)) {
                    let gs: S = gr.iter().copied().sum();
                    for ((o, &gi), &yi) in xr.iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * gs;
                    }
                }
                vec![Some(ArrayD::from_shape_vec(y_keep.raw_dim(), gx).unwrap())]
            })
        })
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self, eps: f64) -> Var<'t, S> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        let nf = S::lit(n as f64);
        let eps = S::lit(eps);
        let xv = x.as_slice().unwrap();
        let mut y = vec![S::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xv.len() / n);
        for (xr, yr) in xv.chunks(n).zip(y.chunks_mut(n)) {
            let mu = xr.iter().copied().sum::<S>() / nf;
            let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / nf;
            let is = S::one() / (var + eps).sqrt();
            for (o, &v) in yr.iter_mut().zip(xr) {
                *o = (v - mu) * is;
            }
            inv_std.push(is);
        }
        let y = ArrayD::from_shape_vec(x.raw_dim(), y).unwrap();
        self.tape.record_out(y, &[self.id], move |y_keep| {
            Box::new(move |g| {
                let gv = g.as_slice().unwrap();
                let yv = y_keep.as_slice().unwrap();
                let mut gx = vec![S::zero(); yv.len()];
                for (r, ((gr, yr), xr)) in gv
                    .chunks(n)
                    .zip(yv.chunks(n))
                    .zip(gx.chunks_mut(n))
                    .enumerate()
                {
                    let mg = gr.iter().copied().sum::<S>() / nf;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / nf;
                    for ((o, &gi), &yi) in xr.iter_mut().zip(gr).zip(yr) {
                        *o = inv_std[r] * (gi - mg - yi * mgy);
                    }
                }
                vec![Some(ArrayD::from_shape_vec(y_keep.raw_dim(), gx).unwrap())]
            })
        })
    }
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<'t, S: Real> Add for Var<'t, S> {
    type Output = Var<'t, S>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'t, S: Real> Sub for Var<'t, S> {
    type Output = Var<'t, S>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'t, S: Real> Mul for Var<'t, S> {
    type Output = Var<'t, S>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'t, S: Real> Neg for Var<'t, S> {
    type Output = Var<'t, S>;
    fn neg(self) -> Self::Output {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn materialize_copies_any_layout_in_logical_order() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3, 4]), (0..24).map(|i| i as f64).collect()).unwrap();
        let p = a.view().permuted_axes(IxDyn(&[2, 0, 1]));
        let m = materialize(p.view());
        assert!(m.is_standard_layout());
        assert_eq!(m, p);
        let s = a.slice_axis(Axis(2), Slice::from(1..3));
        assert_eq!(materialize(s.view()), s);
    }
}
