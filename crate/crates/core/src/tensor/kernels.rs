use crate::exec::{self, Exec};

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

fn pick(exec: Exec, work: usize) -> Exec {
    if work >= PAR_THRESHOLD {
        exec
    } else {
        Exec::Sequential
    }
}

/// Geometry of a (possibly broadcast) batched matmul `[nb, m, k] x [nb, k, n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MatMulDims {
    pub batches: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

impl MatMulDims {
    fn a_index(&self, t: usize) -> usize {
        if self.a_batched {
            t
        } else {
            0
        }
    }

    fn b_index(&self, t: usize) -> usize {
        if self.b_batched {
            t
        } else {
            0
        }
    }

    /// Output batches that read from operand batch `slot`.
    fn consumers(&self, batched: bool, slot: usize) -> std::ops::Range<usize> {
        if batched {
            slot..slot + 1
        } else {
            0..self.batches
        }
    }
}

pub(crate) fn matmul(exec: Exec, d: MatMulDims, a: &[f64], b: &[f64]) -> Vec<f64> {
    let MatMulDims { batches, m, k, n, .. } = d;
    let mut out = vec![0.0; batches * m * n];
    let exec = pick(exec, batches * m * k * n);
    exec::for_each_chunk_mut(exec, &mut out, n, |row, o| {
        let t = row / m;
        let i = row % m;
        let a_row = &a[(d.a_index(t) * m + i) * k..][..k];
        let b_base = d.b_index(t) * k * n;
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[b_base + kk * n..][..n];
            for (o, &bv) in o.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

/// Gradient with respect to the left operand: `g . b^T`, summed over broadcast batches.
pub(crate) fn matmul_grad_a(exec: Exec, d: MatMulDims, g: &[f64], b: &[f64]) -> Vec<f64> {
    let MatMulDims { batches, m, k, n, .. } = d;
    let a_batches = if d.a_batched { batches } else { 1 };
    let mut out = vec![0.0; a_batches * m * k];
    let exec = pick(exec, batches * m * k * n);
    exec::for_each_chunk_mut(exec, &mut out, k, |row, o| {
        let slot = row / m;
        let i = row % m;
        for t in d.consumers(d.a_batched, slot) {
            let g_row = &g[(t * m + i) * n..][..n];
            let b_base = d.b_index(t) * k * n;
            for (kk, o) in o.iter_mut().enumerate() {
                let b_row = &b[b_base + kk * n..][..n];
                let mut s = 0.0;
                for (&gv, &bv) in g_row.iter().zip(b_row) {
                    s += gv * bv;
                }
                *o += s;
            }
        }
    });
    out
}

/// Gradient with respect to the right operand: `a^T . g`, summed over broadcast batches.
pub(crate) fn matmul_grad_b(exec: Exec, d: MatMulDims, a: &[f64], g: &[f64]) -> Vec<f64> {
    let MatMulDims { batches, m, k, n, .. } = d;
    let b_batches = if d.b_batched { batches } else { 1 };
    let mut out = vec![0.0; b_batches * k * n];
    let exec = pick(exec, batches * m * k * n);
    exec::for_each_chunk_mut(exec, &mut out, n, |row, o| {
        let slot = row / k;
        let kk = row % k;
        for t in d.consumers(d.b_batched, slot) {
            let a_base = d.a_index(t) * m * k;
            for i in 0..m {
                let av = a[a_base + i * k + kk];
                let g_row = &g[(t * m + i) * n..][..n];
                for (o, &gv) in o.iter_mut().zip(g_row) {
                    *o += av * gv;
                }
            }
        }
    });
    out
}

/// For each output position of a permutation, the flat index it reads from.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut index = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..numel {
        map.push(src);
        for d in (0..rank).rev() {
            index[d] += 1;
            src += strides[d];
            if index[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            index[d] = 0;
        }
    }
    (out_shape, map)
}
