//! Hot numeric loops shared by the graph ops.
//!
//! Every kernel is single-threaded and sums in a fixed order, so results are
//! bitwise reproducible across runs on the same machine.

/// Dot product with 16 independent accumulator lanes.
///
/// The lane-wise accumulation keeps the FMA chains independent so LLVM can
/// vectorize without reassociating a single serial sum; the final horizontal
/// reduction happens in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 16;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let pa = &a[c * LANES..c * LANES + LANES];
        let pb = &b[c * LANES..c * LANES + LANES];
        for l in 0..LANES {
            acc[l] = pa[l].mul_add(pb[l], acc[l]);
        }
    }
    let mut tail = 0.0;
    for i in chunks * LANES..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let mut sum = tail;
    for l in 0..LANES {
        sum += acc[l];
    }
    sum
}

/// `out[i] += s * x[i]`
#[inline]
pub fn axpy(out: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x.iter()) {
        *o = s.mul_add(*v, *o);
    }
}

/// `out += a[m,k] * b[k,n]`, row-major, accumulating into `out`.
///
/// Rows are processed four at a time so each `b` row is loaded once per
/// four FMAs, and the n axis is tiled to keep the `b` block in cache.
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    const NC: usize = 1024;
    let mut j0 = 0;
    while j0 < n {
        let jw = NC.min(n - j0);
        let mut i = 0;
        while i + 4 <= m {
            for l in 0..k {
                let a0 = a[i * k + l];
                let a1 = a[(i + 1) * k + l];
                let a2 = a[(i + 2) * k + l];
                let a3 = a[(i + 3) * k + l];
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                    continue;
                }
                let brow = &b[l * n + j0..l * n + j0 + jw];
                // Four independent output rows share one streamed b row.
                let (o01, o23) = out[i * n..].split_at_mut(2 * n);
                let (o0, o1) = o01.split_at_mut(n);
                let (o2, o3) = o23.split_at_mut(n);
                let o0 = &mut o0[j0..j0 + jw];
                let o1 = &mut o1[j0..j0 + jw];
                let o2 = &mut o2[j0..j0 + jw];
                let o3 = &mut o3[j0..j0 + jw];
                for t in 0..jw {
                    let bv = brow[t];
                    o0[t] = a0.mul_add(bv, o0[t]);
                    o1[t] = a1.mul_add(bv, o1[t]);
                    o2[t] = a2.mul_add(bv, o2[t]);
                    o3[t] = a3.mul_add(bv, o3[t]);
                }
            }
            i += 4;
        }
        while i < m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n + j0..i * n + j0 + jw];
            for (l, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    axpy(orow, av, &b[l * n + j0..l * n + j0 + jw]);
                }
            }
            i += 1;
        }
        j0 += jw;
    }
}

/// `out += a[m,k] * b[n,k]^T`, row-major, accumulating into `out`.
pub fn matmul_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            orow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += a[k,m]^T * b[k,n]` — used for weight gradients.
pub fn matmul_at_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut l = 0;
    // Four k-slices at a time: each output row is touched once per group.
    while l + 4 <= k {
        for i in 0..m {
            let c0 = a[l * m + i];
            let c1 = a[(l + 1) * m + i];
            let c2 = a[(l + 2) * m + i];
            let c3 = a[(l + 3) * m + i];
            if c0 == 0.0 && c1 == 0.0 && c2 == 0.0 && c3 == 0.0 {
                continue;
            }
            let b0 = &b[l * n..(l + 1) * n];
            let b1 = &b[(l + 1) * n..(l + 2) * n];
            let b2 = &b[(l + 2) * n..(l + 3) * n];
            let b3 = &b[(l + 3) * n..(l + 4) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let mut v = orow[j];
                v = c0.mul_add(b0[j], v);
                v = c1.mul_add(b1[j], v);
                v = c2.mul_add(b2[j], v);
                v = c3.mul_add(b3[j], v);
                orow[j] = v;
            }
        }
        l += 4;
    }
    while l < k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av != 0.0 {
                axpy(&mut out[i * n..(i + 1) * n], av, brow);
            }
        }
        l += 1;
    }
}

pub fn softmax_rows(data: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(data.len(), rows * cols);
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}
