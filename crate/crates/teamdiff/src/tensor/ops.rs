//! The fixed op set: forward evaluation plus hand-derived backward
//! rules. Each rule is checked against finite differences in the tests
//! below and again by the acceptance suite on composite functions.

use super::Var;
use std::ops::{Add, Mul, Neg, Sub};

fn same_tape(a: Var<'_>, b: Var<'_>) {
    assert!(std::ptr::eq(a.tape, b.tape), "vars must share a tape");
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs);
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.len(), b.len(), "add: shape mismatch");
        let vals: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (pa, pb) = (self.idx, rhs.idx);
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[pa, pb],
            "add",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(pa) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if let Some(buf) = sink.buf(pb) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }),
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs);
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.len(), b.len(), "sub: shape mismatch");
        let vals: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (pa, pb) = (self.idx, rhs.idx);
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[pa, pb],
            "sub",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(pa) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if let Some(buf) = sink.buf(pb) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                }
            }),
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    /// Elementwise product.
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs);
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.len(), b.len(), "mul: shape mismatch");
        let vals: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (pa, pb) = (self.idx, rhs.idx);
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[pa, pb],
            "mul",
            Box::new(move |ctx, g, sink| {
                if sink.tracked(pa) {
                    let bv: Vec<f64> = ctx.val(pb).to_vec();
                    if let Some(buf) = sink.buf(pa) {
                        for ((o, gi), bi) in buf.iter_mut().zip(g).zip(&bv) {
                            *o += gi * bi;
                        }
                    }
                }
                if sink.tracked(pb) {
                    let av: Vec<f64> = ctx.val(pa).to_vec();
                    if let Some(buf) = sink.buf(pb) {
                        for ((o, gi), ai) in buf.iter_mut().zip(g).zip(&av) {
                            *o += gi * ai;
                        }
                    }
                }
            }),
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> Var<'t> {
    pub fn scale(self, c: f64) -> Var<'t> {
        assert!(c.is_finite(), "scale by non-finite constant");
        let vals: Vec<f64> = self.value().iter().map(|v| v * c).collect();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "scale",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi * c;
                    }
                }
            }),
        )
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        assert!(c.is_finite(), "add non-finite constant");
        let vals: Vec<f64> = self.value().iter().map(|v| v + c).collect();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "add_scalar",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }),
        )
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let vals: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "relu",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(p) {
                    return;
                }
                let xin: Vec<f64> = ctx.val(p).to_vec();
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(&xin) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }),
        )
    }

    pub fn exp(self) -> Var<'t> {
        let x = self.value();
        let vals: Vec<f64> = x.iter().map(|&v| v.exp()).collect();
        let out_vals = vals.clone();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "exp",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), yi) in buf.iter_mut().zip(g).zip(&out_vals) {
                        *o += gi * yi;
                    }
                }
            }),
        )
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        assert!(x.iter().all(|&v| v > 0.0), "ln of non-positive value");
        let vals: Vec<f64> = x.iter().map(|&v| v.ln()).collect();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "ln",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(p) {
                    return;
                }
                let xin: Vec<f64> = ctx.val(p).to_vec();
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(&xin) {
                        *o += gi / xi;
                    }
                }
            }),
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        let x = self.value();
        let vals: Vec<f64> = x.iter().map(|&v| stable_sigmoid(v)).collect();
        let out_vals = vals.clone();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "sigmoid",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), yi) in buf.iter_mut().zip(g).zip(&out_vals) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }),
        )
    }

    pub fn softplus(self) -> Var<'t> {
        let x = self.value();
        let vals: Vec<f64> = x.iter().map(|&v| stable_softplus(v)).collect();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "softplus",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(p) {
                    return;
                }
                let xin: Vec<f64> = ctx.val(p).to_vec();
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(&xin) {
                        *o += gi * stable_sigmoid(*xi);
                    }
                }
            }),
        )
    }

    /// Elementwise product with a constant mask (dropout application).
    pub fn mul_mask(self, mask: &[f64]) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.len(), mask.len(), "mask length mismatch");
        let vals: Vec<f64> = x.iter().zip(mask).map(|(v, m)| v * m).collect();
        let m: Vec<f64> = mask.to_vec();
        let p = self.idx;
        let shape = self.shape();
        self.tape.push_op(
            shape,
            vals,
            &[p],
            "mul_mask",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for ((o, gi), mi) in buf.iter_mut().zip(g).zip(&m) {
                        *o += gi * mi;
                    }
                }
            }),
        )
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]` and the vector
    /// form `[k]x[k,n] -> [n]`. Zero entries on the left are skipped,
    /// which makes binary-occupancy inputs cheap.
    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        same_tape(self, rhs);
        let a_shape = self.shape();
        let b_shape = rhs.shape();
        assert_eq!(b_shape.len(), 2, "matmul rhs must be a matrix");
        let (k2, n) = (b_shape[0], b_shape[1]);
        let (m, k, vec_lhs) = match a_shape.len() {
            1 => (1, a_shape[0], true),
            2 => (a_shape[0], a_shape[1], false),
            _ => panic!("matmul lhs must be a vector or matrix"),
        };
        assert_eq!(k, k2, "matmul: inner dimensions disagree");
        let a = self.value();
        let b = rhs.value();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &av) in a_row.iter().enumerate() {
                if av != 0.0 {
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
        let out_shape = if vec_lhs { vec![n] } else { vec![m, n] };
        let (pa, pb) = (self.idx, rhs.idx);
        self.tape.push_op(
            out_shape,
            out,
            &[pa, pb],
            "matmul",
            Box::new(move |ctx, g, sink| {
                if sink.tracked(pa) {
                    let bv: Vec<f64> = ctx.val(pb).to_vec();
                    if let Some(buf) = sink.buf(pa) {
                        // da[i,p] += sum_j g[i,j] * b[p,j]
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            let da_row = &mut buf[i * k..(i + 1) * k];
                            for (p, da) in da_row.iter_mut().enumerate() {
                                let b_row = &bv[p * n..(p + 1) * n];
                                let mut acc = 0.0;
                                for (gj, bj) in g_row.iter().zip(b_row) {
                                    acc += gj * bj;
                                }
                                *da += acc;
                            }
                        }
                    }
                }
                if sink.tracked(pb) {
                    let av: Vec<f64> = ctx.val(pa).to_vec();
                    if let Some(buf) = sink.buf(pb) {
                        // db[p,j] += sum_i a[i,p] * g[i,j]
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            let a_row = &av[i * k..(i + 1) * k];
                            for (p, &ap) in a_row.iter().enumerate() {
                                if ap != 0.0 {
                                    let db_row = &mut buf[p * n..(p + 1) * n];
                                    for (o, gj) in db_row.iter_mut().zip(g_row) {
                                        *o += ap * gj;
                                    }
                                }
                            }
                        }
                    }
                }
            }),
        )
    }

    /// Product with a constant matrix: `v[r] . M[r,c] -> [c]`.
    pub fn vec_const_mat(self, mat: &[f64], rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(mat.len(), rows * cols, "constant matrix size mismatch");
        let v = self.value();
        assert_eq!(v.len(), rows, "vec_const_mat: length mismatch");
        let mut out = vec![0.0; cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                let row = &mat[i * cols..(i + 1) * cols];
                for (o, &mv) in out.iter_mut().zip(row) {
                    *o += vi * mv;
                }
            }
        }
        let m: Vec<f64> = mat.to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![cols],
            out,
            &[p],
            "vec_const_mat",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (i, o) in buf.iter_mut().enumerate() {
                        let row = &m[i * cols..(i + 1) * cols];
                        let mut acc = 0.0;
                        for (gj, mv) in g.iter().zip(row) {
                            acc += gj * mv;
                        }
                        *o += acc;
                    }
                }
            }),
        )
    }

    pub fn sum(self) -> Var<'t> {
        let total: f64 = self.value().iter().sum();
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![total],
            &[p],
            "sum",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                }
            }),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        assert!(!v.is_empty(), "mean of empty vector");
        let n = v.len() as f64;
        let total: f64 = v.iter().sum();
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![total / n],
            &[p],
            "mean",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for o in buf.iter_mut() {
                        *o += g[0] / n;
                    }
                }
            }),
        )
    }

    /// Contiguous sub-vector `[offset, offset + len)`.
    pub fn slice_range(self, offset: usize, len: usize) -> Var<'t> {
        let v = self.value();
        assert!(offset + len <= v.len(), "slice out of range");
        let vals = v[offset..offset + len].to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![len],
            vals,
            &[p],
            "slice_range",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (o, gi) in buf[offset..offset + len].iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }),
        )
    }

    /// Picks a single element as a scalar.
    pub fn index(self, i: usize) -> Var<'t> {
        let v = self.value();
        assert!(i < v.len(), "index out of range");
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![v[i]],
            &[p],
            "index",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    buf[i] += g[0];
                }
            }),
        )
    }

    /// Dot product with a constant vector.
    pub fn dot_const(self, c: &[f64]) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), c.len(), "dot_const: length mismatch");
        let total: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
        let cv: Vec<f64> = c.to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![total],
            &[p],
            "dot_const",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (o, ci) in buf.iter_mut().zip(&cv) {
                        *o += g[0] * ci;
                    }
                }
            }),
        )
    }

    /// Numerically stable softmax over the whole (1-D) vector.
    pub fn softmax(self) -> Var<'t> {
        let x = self.value();
        assert!(!x.is_empty(), "softmax of empty vector");
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let vals: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        let y = vals.clone();
        let p = self.idx;
        self.tape.push_op(
            vec![x.len()],
            vals,
            &[p],
            "softmax",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    let s: f64 = g.iter().zip(&y).map(|(gi, yi)| gi * yi).sum();
                    for ((o, gi), yi) in buf.iter_mut().zip(g).zip(&y) {
                        *o += yi * (gi - s);
                    }
                }
            }),
        )
    }

    pub fn log_softmax(self) -> Var<'t> {
        let x = self.value();
        assert!(!x.is_empty(), "log_softmax of empty vector");
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let vals: Vec<f64> = x.iter().map(|&v| v - lse).collect();
        let soft: Vec<f64> = vals.iter().map(|&v| v.exp()).collect();
        let p = self.idx;
        self.tape.push_op(
            vec![x.len()],
            vals,
            &[p],
            "log_softmax",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    let s: f64 = g.iter().sum();
                    for ((o, gi), yi) in buf.iter_mut().zip(g).zip(&soft) {
                        *o += gi - yi * s;
                    }
                }
            }),
        )
    }

    /// Layer normalization over the (1-D) vector followed by an affine
    /// gain and bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Var<'t> {
        same_tape(self, gain);
        same_tape(self, bias);
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let x = self.value();
        if x.is_empty() {
            panic!("empty normalization axis");
        }
        let gv = gain.value();
        let bv = bias.value();
        assert_eq!(x.len(), gv.len(), "layer_norm gain length mismatch");
        assert_eq!(x.len(), bv.len(), "layer_norm bias length mismatch");
        let d = x.len();
        let nf = d as f64;
        let mu = x.iter().sum::<f64>() / nf;
        let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / nf;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = x.iter().map(|&v| (v - mu) * inv).collect();
        let vals: Vec<f64> = xhat.iter().zip(&gv).zip(&bv).map(|((h, g), b)| h * g + b).collect();
        let (px, pg, pb) = (self.idx, gain.idx, bias.idx);
        let xh = xhat.clone();
        self.tape.push_op(
            vec![d],
            vals,
            &[px, pg, pb],
            "layer_norm",
            Box::new(move |ctx, g, sink| {
                let gv: Vec<f64> = ctx.val(pg).to_vec();
                if sink.tracked(px) {
                    let dyhat: Vec<f64> = g.iter().zip(&gv).map(|(gi, gn)| gi * gn).collect();
                    let m1 = dyhat.iter().sum::<f64>() / nf;
                    let m2 = dyhat.iter().zip(&xh).map(|(dy, h)| dy * h).sum::<f64>() / nf;
                    if let Some(buf) = sink.buf(px) {
                        for ((o, dy), h) in buf.iter_mut().zip(&dyhat).zip(&xh) {
                            *o += inv * (dy - m1 - h * m2);
                        }
                    }
                }
                if let Some(buf) = sink.buf(pg) {
                    for ((o, gi), h) in buf.iter_mut().zip(g).zip(&xh) {
                        *o += gi * h;
                    }
                }
                if let Some(buf) = sink.buf(pb) {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }),
        )
    }

    /// Row lookup into an embedding table `[vocab, dim]`.
    pub fn embedding(self, row: usize) -> Var<'t> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "embedding table must be a matrix");
        let (v, d) = (shape[0], shape[1]);
        assert!(row < v, "embedding row out of range");
        let table = self.value();
        let vals = table[row * d..(row + 1) * d].to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![d],
            vals,
            &[p],
            "embedding",
            Box::new(move |_ctx, g, sink| {
                if let Some(buf) = sink.buf(p) {
                    for (o, gi) in buf[row * d..(row + 1) * d].iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }),
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(self, target: &[f64]) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.len(), target.len(), "mse: length mismatch");
        assert!(!x.is_empty(), "mse of empty vector");
        let n = x.len() as f64;
        let loss = x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let t: Vec<f64> = target.to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![loss],
            &[p],
            "mse",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(p) {
                    return;
                }
                let xin: Vec<f64> = ctx.val(p).to_vec();
                if let Some(buf) = sink.buf(p) {
                    for ((o, xi), ti) in buf.iter_mut().zip(&xin).zip(&t) {
                        *o += g[0] * 2.0 * (xi - ti) / n;
                    }
                }
            }),
        )
    }

    /// Mean per-dimension binary cross-entropy of probabilities against
    /// binary targets. Probabilities are clamped to `[1e-7, 1-1e-7]`
    /// before the logs; the gradient is zero in the clamped region.
    pub fn bce(self, target: &[f64]) -> Var<'t> {
        const EPS: f64 = 1e-7;
        let x = self.value();
        assert_eq!(x.len(), target.len(), "bce: length mismatch");
        assert!(!x.is_empty(), "bce of empty vector");
        for &t in target {
            if t != 0.0 && t != 1.0 {
                panic!("non-binary target in bce");
            }
        }
        let n = x.len() as f64;
        let mut loss = 0.0;
        for (&p, &t) in x.iter().zip(target) {
            let pc = p.clamp(EPS, 1.0 - EPS);
            loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        loss /= n;
        let t: Vec<f64> = target.to_vec();
        let p = self.idx;
        self.tape.push_op(
            vec![1],
            vec![loss],
            &[p],
            "bce",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(p) {
                    return;
                }
                let xin: Vec<f64> = ctx.val(p).to_vec();
                if let Some(buf) = sink.buf(p) {
                    for ((o, &pi), &ti) in buf.iter_mut().zip(&xin).zip(&t) {
                        if pi > EPS && pi < 1.0 - EPS {
                            *o += g[0] * (pi - ti) / (pi * (1.0 - pi)) / n;
                        }
                    }
                }
            }),
        )
    }

    /// KL divergence `sum_i p_i (ln p_i - ln q_i)` of a constant
    /// distribution `p` from the variable distribution `q`, with
    /// `0 ln 0 := 0`. Zero-probability terms are skipped entirely, so
    /// `q` may be zero wherever `p` is.
    pub fn kl_from(self, p: &[f64]) -> Var<'t> {
        let q = self.value();
        assert_eq!(p.len(), q.len(), "kl_from: length mismatch");
        let mut total = 0.0;
        for (&pi, &qi) in p.iter().zip(&q) {
            if pi > 0.0 {
                assert!(qi > 0.0, "kl_from: zero q where p > 0");
                total += pi * (pi.ln() - qi.ln());
            }
        }
        let pv: Vec<f64> = p.to_vec();
        let idx = self.idx;
        self.tape.push_op(
            vec![1],
            vec![total],
            &[idx],
            "kl_from",
            Box::new(move |ctx, g, sink| {
                if !sink.tracked(idx) {
                    return;
                }
                let qv: Vec<f64> = ctx.val(idx).to_vec();
                if let Some(buf) = sink.buf(idx) {
                    for ((o, &pi), &qi) in buf.iter_mut().zip(&pv).zip(&qv) {
                        if pi > 0.0 {
                            *o -= g[0] * pi / qi;
                        }
                    }
                }
            }),
        )
    }
}

/// KL divergence of a constant distribution `p` from the categorical
/// distribution defined by `q_logits` via softmax. Differentiable with
/// respect to the logits.
pub fn categorical_kl<'t>(p: &[f64], q_logits: Var<'t>) -> Var<'t> {
    for &pi in p {
        if pi < 0.0 {
            panic!("invalid distribution");
        }
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        panic!("invalid distribution");
    }
    assert_eq!(p.len(), q_logits.len(), "categorical_kl: length mismatch");
    let entropy_neg: f64 = p.iter().filter(|&&pi| pi > 0.0).map(|&pi| pi * pi.ln()).sum();
    let cross = q_logits.log_softmax().dot_const(p);
    cross.neg().add_scalar(entropy_neg)
}

/// Concatenates 1-D vectors.
pub fn concat<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    for p in parts {
        assert!(std::ptr::eq(p.tape, tape), "vars must share a tape");
    }
    let mut vals = Vec::new();
    let mut spans = Vec::with_capacity(parts.len());
    for p in parts {
        let v = p.value();
        spans.push((p.idx, vals.len(), v.len()));
        vals.extend_from_slice(&v);
    }
    let total = vals.len();
    tape.push_op(
        vec![total],
        vals,
        &spans.iter().map(|s| s.0).collect::<Vec<_>>(),
        "concat",
        Box::new(move |_ctx, g, sink| {
            for &(idx, start, len) in &spans {
                if let Some(buf) = sink.buf(idx) {
                    for (o, gi) in buf.iter_mut().zip(&g[start..start + len]) {
                        *o += gi;
                    }
                }
            }
        }),
    )
}
