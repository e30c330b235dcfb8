//! Tape-free numeric kernels shared by the autodiff graph and the incremental decoder.

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `a (n×k) · b (k×m)`.
pub fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (x, &bv) in o.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *x += av * bv;
            }
        }
    }
    out
}

/// `a (n×k) · bᵀ` where `b` is m×k.
pub fn matmul_bt(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `aᵀ · b` where `a` is n×k and `b` is n×m.
pub fn matmul_at(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (x, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    }
    out
}

/// Four interleaved partial sums; a fixed order, so results are still deterministic.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row vector times matrix: `x (1×k) · w (k×m) + b`.
pub fn linear_row(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut out = b.to_vec();
    for (p, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[p * m..(p + 1) * m]) {
            *o += xv * wv;
        }
    }
    out
}

/// Normalizes one row in place to zero mean and unit variance; returns 1/σ.
pub fn normalize_row(x: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mu) * inv;
    }
    inv
}

pub fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    normalize_row(&mut y);
    for ((v, gv), bv) in y.iter_mut().zip(g).zip(b) {
        *v = *v * gv + bv;
    }
    y
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place softmax over `x`; entries with `allowed == false` get probability 0.
/// Returns false when nothing is allowed (the row is zeroed).
pub fn masked_softmax(x: &mut [f64], allowed: impl Fn(usize) -> bool) -> bool {
    let mut mx = f64::NEG_INFINITY;
    for (i, v) in x.iter().enumerate() {
        if allowed(i) && *v > mx {
            mx = *v;
        }
    }
    if mx == f64::NEG_INFINITY {
        x.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let mut s = 0.0;
    for (i, v) in x.iter_mut().enumerate() {
        if allowed(i) {
            *v = (*v - mx).exp();
            s += *v;
        } else {
            *v = 0.0;
        }
    }
    x.iter_mut().for_each(|v| *v /= s);
    true
}

/// log Σ exp over the first `n` entries.
pub fn logsumexp(x: &[f64]) -> f64 {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Single-query multi-head attention over cached keys/values (each row-major, `len × d`).
pub fn attend_one(q: &[f64], keys: &[f64], values: &[f64], len: usize, heads: usize) -> Vec<f64> {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut w = vec![0.0; len];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = dot(qh, &keys[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
        }
        masked_softmax(&mut w, |_| true);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (j, &wj) in w.iter().enumerate() {
            for (o, &v) in oh.iter_mut().zip(&values[j * d + h * dh..j * d + (h + 1) * dh]) {
                *o += wj * v;
            }
        }
    }
    out
}
