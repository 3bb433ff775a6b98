//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed on its [`Var`]s during
//! the forward pass; [`Tape::backward`] replays the records in exact
//! reverse creation order, accumulating gradients additively at fan-out
//! nodes. The op set is fixed and small: exactly what the policy
//! network and losses need. Every differentiable op is validated
//! against central finite differences by [`grad_check`].
//!
//! Values are shared [`Tensor`]s (`Arc`-backed), so binding a parameter
//! onto a tape never copies its data. Tapes are single-threaded;
//! data-parallel training uses one tape per sample and merges gradients
//! additively in a fixed order.

mod ops;

pub use ops::{categorical_kl, concat};

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::rng::ChaCha8Rng;
use rand::Rng;

/// Immutable dense tensor, row-major, f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "tensor shape/data mismatch");
        assert_all_finite(&data, "tensor construction");
        Tensor { shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mutable view for in-place parameter updates. Clones the storage
    /// only if it is currently shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }
}

pub(crate) fn assert_all_finite(vals: &[f64], what: &str) {
    for &v in vals {
        if !v.is_finite() {
            panic!("non-finite value produced by {what}");
        }
    }
}

enum Storage {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Storage {
    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(a) => a,
        }
    }
}

pub(crate) struct Node {
    shape: Vec<usize>,
    values: Storage,
    tracked: bool,
}

impl Node {
    pub(crate) fn vals(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub(crate) fn len(&self) -> usize {
        self.vals().len()
    }
}

type BackwardFn = Box<dyn Fn(&Ctx<'_>, &[f64], &mut GradSink<'_>)>;

struct OpRecord {
    out: usize,
    backward: BackwardFn,
}

/// Read-only view of node values during the backward pass.
pub(crate) struct Ctx<'a> {
    nodes: &'a [Node],
}

impl Ctx<'_> {
    pub(crate) fn val(&self, idx: usize) -> &[f64] {
        self.nodes[idx].vals()
    }
}

/// Gradient accumulator for the backward pass. Buffers are allocated
/// lazily; untracked nodes never receive one.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub(crate) fn tracked(&self, idx: usize) -> bool {
        self.nodes[idx].tracked
    }

    /// Accumulation buffer for node `idx`, or `None` when the node does
    /// not participate in differentiation.
    pub(crate) fn buf(&mut self, idx: usize) -> Option<&mut [f64]> {
        if !self.nodes[idx].tracked {
            return None;
        }
        let slot = &mut self.grads[idx];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[idx].len()]);
        }
        slot.as_deref_mut()
    }
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    ops: Vec<OpRecord>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(TapeInner::default())) }
    }

    /// Binds a tensor onto the tape. Tracking follows the tensor's
    /// `requires_grad` flag; the data is shared, not copied.
    pub fn input(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t.shape.clone(), Storage::Shared(t.data.clone()), t.requires_grad)
    }

    /// Binds a constant (untracked) vector.
    pub fn constant(&self, data: &[f64]) -> Var<'_> {
        assert_all_finite(data, "constant");
        self.push_leaf(vec![data.len()], Storage::Owned(data.to_vec()), false)
    }

    /// Binds a tracked vector leaf regardless of any tensor flag.
    pub fn tracked(&self, data: &[f64]) -> Var<'_> {
        assert_all_finite(data, "leaf");
        self.push_leaf(vec![data.len()], Storage::Owned(data.to_vec()), true)
    }

    fn push_leaf(&self, shape: Vec<usize>, values: Storage, tracked: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node { shape, values, tracked });
        Var { tape: self, idx }
    }

    pub(crate) fn push_op(
        &self,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: &[usize],
        name: &str,
        backward: BackwardFn,
    ) -> Var<'_> {
        assert_all_finite(&values, name);
        let mut inner = self.inner.borrow_mut();
        let tracked = parents.iter().any(|&p| inner.nodes[p].tracked);
        let idx = inner.nodes.len();
        inner.nodes.push(Node { shape, values: Storage::Owned(values), tracked });
        if tracked {
            inner.ops.push(OpRecord { out: idx, backward });
        }
        Var { tape: self, idx }
    }

    pub fn values(&self, v: Var<'_>) -> Vec<f64> {
        self.inner.borrow().nodes[v.idx].vals().to_vec()
    }

    /// Runs the backward pass from a scalar output. Gradients can then
    /// be read with [`Tape::grad`].
    pub fn backward(&self, out: Var<'_>) {
        assert!(std::ptr::eq(out.tape, self), "var belongs to a different tape");
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        assert_eq!(inner.nodes[out.idx].len(), 1, "backward requires a scalar output");
        assert!(inner.nodes[out.idx].tracked, "backward from an untracked value");
        let mut grads: Vec<Option<Vec<f64>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[out.idx] = Some(vec![1.0]);
        for op in inner.ops.iter().rev() {
            let Some(g) = grads[op.out].take() else { continue };
            {
                let ctx = Ctx { nodes: &inner.nodes };
                let mut sink = GradSink { nodes: &inner.nodes, grads: &mut grads };
                (op.backward)(&ctx, &g, &mut sink);
            }
            grads[op.out] = Some(g);
        }
        inner.grads = Some(grads);
    }

    /// Gradient of the last [`Tape::backward`] output w.r.t. `v`.
    /// Zeros if the value never influenced the output.
    pub fn grad(&self, v: Var<'_>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let grads = inner.grads.as_ref().expect("no backward pass has been run");
        match &grads[v.idx] {
            Some(g) => g.clone(),
            None => vec![0.0; inner.nodes[v.idx].len()],
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) idx: usize,
}

impl<'t> Var<'t> {
    pub fn len(self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].len()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].shape.clone()
    }

    pub fn value(self) -> Vec<f64> {
        self.tape.values(self)
    }

    /// Scalar value; panics if not length one.
    pub fn scalar(self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "expected a scalar");
        v[0]
    }
}

/// Inverted-dropout mask: zeros with probability `rate`, else
/// `1/(1-rate)`. Rate zero is the exact identity and consumes no
/// randomness.
pub fn dropout_mask(rng: &mut ChaCha8Rng, rate: f64, len: usize) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t> + ?Sized,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.input(t)).collect();
    let out = f(&tape, &vars);
    assert_eq!(out.len(), 1, "grad_check requires a scalar-valued function");
    out.scalar()
}

/// Compares tape gradients of a scalar-valued function against central
/// finite differences, element by element, and returns the worst
/// relative error. Inputs with `requires_grad` unset are treated as
/// constants and skipped. `f` must be deterministic.
pub fn grad_check<F>(f: &F, inputs: &[Tensor], h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t> + ?Sized,
{
    assert!(h > 0.0, "step size must be positive");
    for t in inputs {
        assert_all_finite(t.data(), "grad_check input");
    }

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.input(t)).collect();
    let out = f(&tape, &vars);
    assert_eq!(out.len(), 1, "grad_check requires a scalar-valued function");
    tape.backward(out);
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            minus[i].data_mut()[j] -= h;
            let fd = (eval_scalar(f, &plus) - eval_scalar(f, &minus)) / (2.0 * h);
            let ad = analytic[i][j];
            let denom = ad.abs().max(fd.abs()).max(1e-4);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = sum x^2 at [1, 2] has gradient [2, 4].
        let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let tape = Tape::new();
        let v = tape.input(&x);
        let out = (v * v).sum();
        tape.backward(out);
        assert_eq!(tape.grad(v), vec![2.0, 4.0]);
        let err = grad_check(&|_t: &Tape, vs: &[Var<'_>]| (vs[0] * vs[0]).sum(), &[x], 1e-4);
        assert!(err < 1e-8, "quadratic grad_check error {err}");
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = x*x + x: gradient 2x + 1.
        let x = Tensor::vector(vec![3.0]).with_grad();
        let tape = Tape::new();
        let v = tape.input(&x);
        let out = ((v * v) + v).sum();
        tape.backward(out);
        assert_eq!(tape.grad(v), vec![7.0]);
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let tape = Tape::new();
        let x = tape.constant(&[1.0, 1.0, 1.0]);
        let g = tape.constant(&[1.0, 1.0, 1.0]);
        let b = tape.constant(&[0.0, 0.0, 0.0]);
        let out = x.layer_norm(g, b, 1e-5).value();
        for v in out {
            approx(v, 0.0, 1e-12);
        }
    }

    #[test]
    fn layer_norm_is_shift_invariant() {
        let tape = Tape::new();
        let base = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 17.25).collect();
        let g = tape.constant(&[1.0; 4]);
        let b = tape.constant(&[0.0; 4]);
        let a = tape.constant(&base).layer_norm(g, b, 1e-8).value();
        let c = tape.constant(&shifted).layer_norm(g, b, 1e-8).value();
        for (x, y) in a.iter().zip(&c) {
            approx(*x, *y, 1e-9);
        }
    }

    #[test]
    #[should_panic(expected = "empty normalization axis")]
    fn layer_norm_rejects_empty_axis() {
        let tape = Tape::new();
        let x = tape.constant(&[]);
        let g = tape.constant(&[]);
        let b = tape.constant(&[]);
        let _ = x.layer_norm(g, b, 1e-5);
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let x = Tensor::vector(vec![0.5, -1.5, 2.0, 0.1, -0.2]).with_grad();
        let gain = Tensor::vector(vec![1.2, 0.8, -0.5, 1.0, 0.3]).with_grad();
        let bias = Tensor::vector(vec![0.1, -0.3, 0.0, 0.7, 0.2]).with_grad();
        let weights = [0.7, -0.4, 0.9, 0.2, -1.1];
        let f: Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>> =
            Box::new(move |_t, vs| vs[0].layer_norm(vs[1], vs[2], 1e-5).dot_const(&weights));
        let err = grad_check(&*f, &[x, gain, bias], 1e-4);
        assert!(err < 1e-4, "layer_norm grad error {err}");
    }

    #[test]
    fn categorical_kl_of_identical_distributions_is_zero() {
        let logits = [0.3, -0.7, 1.1];
        let tape = Tape::new();
        let q = tape.constant(&logits);
        let p = q.softmax().value();
        let kl = categorical_kl(&p, q).scalar();
        approx(kl, 0.0, 1e-12);
    }

    #[test]
    fn categorical_kl_analytic_case() {
        // p = [1, 0] against uniform q gives ln 2.
        let tape = Tape::new();
        let q = tape.constant(&[0.0, 0.0]);
        let kl = categorical_kl(&[1.0, 0.0], q).scalar();
        approx(kl, std::f64::consts::LN_2, 1e-12);
    }

    #[test]
    fn categorical_kl_matches_direct_summation() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let mut p: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 1e-3).collect();
            let z: f64 = p.iter().sum();
            for v in &mut p {
                *v /= z;
            }
            // Renormalize exactly so the sum check passes.
            let correction: f64 = 1.0 - p.iter().sum::<f64>();
            p[4] += correction;
            let logits: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();

            let tape = Tape::new();
            let q = tape.constant(&logits);
            let got = categorical_kl(&p, q).scalar();

            // Independent oracle: direct summation with explicit softmax.
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let zq: f64 = exps.iter().sum();
            let want: f64 = p
                .iter()
                .zip(&exps)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(&pi, &e)| pi * (pi.ln() - (e / zq).ln()))
                .sum();
            approx(got, want, 1e-10);
        }
    }

    #[test]
    #[should_panic(expected = "invalid distribution")]
    fn categorical_kl_rejects_negative_probabilities() {
        let tape = Tape::new();
        let q = tape.constant(&[0.0, 0.0]);
        let _ = categorical_kl(&[1.5, -0.5], q);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = rng_from_seed(5);
        let mask = dropout_mask(&mut rng, 0.0, 16);
        assert_eq!(mask, vec![1.0; 16]);
    }

    #[test]
    fn dropout_mask_is_reproducible() {
        let a = dropout_mask(&mut rng_from_seed(9), 0.4, 64);
        let b = dropout_mask(&mut rng_from_seed(9), 0.4, 64);
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v == 0.0));
        let keep = 1.0 / 0.6;
        assert!(a.iter().all(|&v| v == 0.0 || (v - keep).abs() < 1e-15));
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut rng = rng_from_seed(23);
        let mut randv = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
        };
        let x = Tensor::vector(randv(6)).with_grad();
        let y = Tensor::vector(randv(6)).with_grad();
        let m = Tensor::matrix(6, 4, randv(24)).with_grad();
        let w = [0.7, -0.3, 0.2, 0.9];
        let w6 = [0.7, -0.3, 0.2, 0.9, -1.1, 0.4];
        let mask = [0.0, 2.0, 2.0, 0.0, 2.0, 2.0];
        let cmat: Vec<f64> = randv(24);
        let bin_target = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let p_dist = [0.1, 0.4, 0.0, 0.2, 0.05, 0.25];

        type F = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;
        let cases: Vec<(&str, F)> = vec![
            ("add", Box::new(move |_t, vs| (vs[0] + vs[1]).dot_const(&w6))),
            ("sub", Box::new(move |_t, vs| (vs[0] - vs[1]).dot_const(&w6))),
            ("mul", Box::new(move |_t, vs| (vs[0] * vs[1]).dot_const(&w6))),
            ("neg", Box::new(move |_t, vs| (-vs[0]).dot_const(&w6))),
            ("scale", Box::new(move |_t, vs| vs[0].scale(1.7).dot_const(&w6))),
            ("add_scalar", Box::new(move |_t, vs| vs[0].add_scalar(0.3).dot_const(&w6))),
            ("relu", Box::new(move |_t, vs| vs[0].relu().dot_const(&w6))),
            ("exp", Box::new(move |_t, vs| vs[0].exp().dot_const(&w6))),
            ("sigmoid", Box::new(move |_t, vs| vs[0].sigmoid().dot_const(&w6))),
            ("softplus", Box::new(move |_t, vs| vs[0].softplus().dot_const(&w6))),
            ("ln", Box::new(move |_t, vs| vs[0].exp().add_scalar(0.5).ln().dot_const(&w6))),
            ("mul_mask", Box::new(move |_t, vs| vs[0].mul_mask(&mask).dot_const(&w6))),
            ("matmul", Box::new(move |_t, vs| vs[0].matmul(vs[2]).dot_const(&w))),
            ("vec_const_mat", Box::new(move |_t, vs| vs[0].vec_const_mat(&cmat, 6, 4).dot_const(&w))),
            ("sum", Box::new(move |_t, vs| vs[0].sum())),
            ("mean", Box::new(move |_t, vs| vs[0].mean())),
            ("index", Box::new(move |_t, vs| vs[0].index(3))),
            ("softmax", Box::new(move |_t, vs| vs[0].softmax().dot_const(&w6))),
            ("log_softmax", Box::new(move |_t, vs| vs[0].log_softmax().dot_const(&w6))),
            ("embedding", Box::new(move |_t, vs| vs[2].embedding(2).dot_const(&w))),
            ("mse", Box::new(move |_t, vs| vs[0].mse(&[0.2, -0.4, 0.6, 0.0, 1.0, -1.0]))),
            ("bce", Box::new(move |_t, vs| vs[0].sigmoid().bce(&bin_target))),
            ("kl_from", Box::new(move |_t, vs| vs[0].softmax().kl_from(&p_dist))),
            ("categorical_kl", Box::new(move |_t, vs| categorical_kl(&p_dist, vs[0]))),
            (
                "concat",
                Box::new(move |_t, vs| {
                    concat(&[vs[0], vs[1]]).dot_const(&[0.3, -0.2, 0.5, 0.1, -0.7, 0.9, 0.2, 0.4, -0.6, 0.8, 1.0, -0.1])
                }),
            ),
        ];

        for (name, f) in cases {
            let err = grad_check(&*f, &[x.clone(), y.clone(), m.clone()], 1e-4);
            assert!(err < 1e-4, "op {name} grad error {err}");
        }
    }

    #[test]
    #[should_panic(expected = "scalar-valued")]
    fn grad_check_rejects_non_scalar() {
        let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let _ = grad_check(&|_t: &Tape, vs: &[Var<'_>]| vs[0] + vs[0], &[x], 1e-4);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_results_are_rejected() {
        let tape = Tape::new();
        let x = tape.constant(&[700.0, 710.0]);
        let _ = x.exp().exp();
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in proptest::collection::vec(-30.0f64..30.0, 2..8),
            c in -50.0f64..50.0,
        ) {
            let tape = Tape::new();
            let v = tape.constant(&xs);
            let s = v.softmax().value();
            let total: f64 = s.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);

            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let v2 = tape.constant(&shifted);
            let s2 = v2.softmax().value();
            for (a, b) in s.iter().zip(&s2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_matches_naive_reference(
            a in proptest::collection::vec(-3.0f64..3.0, 12),
            b in proptest::collection::vec(-3.0f64..3.0, 20),
        ) {
            let tape = Tape::new();
            let av = tape.constant(&a);
            let bt = Tensor::matrix(4, 5, b.clone());
            let bv = tape.input(&bt);
            // lhs as [3,4] matrix
            let am = tape.input(&Tensor::matrix(3, 4, a.clone()));
            let got = am.matmul(bv).value();
            let mut want = vec![0.0; 15];
            for i in 0..3 {
                for j in 0..5 {
                    for p in 0..4 {
                        want[i * 5 + j] += a[i * 4 + p] * b[p * 5 + j];
                    }
                }
            }
            for (x, y) in got.iter().zip(&want) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let _ = av;
        }
    }
}
