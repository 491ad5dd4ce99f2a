//! Coordinate-list view of a dense operator, used by the propagation hot loops.
//!
//! Operators stay dense everywhere in the public API. Propagators, jump
//! operators and pulse unitaries are converted once into this form so the
//! per-step products skip the (mostly) structurally zero entries.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

#[derive(Clone, Copy, Debug)]
struct Entry {
    row: usize,
    col: usize,
    val: C64,
}

/// Nonzero entries in row-major order. Every index is below `dim`, which the
/// hot loops rely on to skip bounds checks.
#[derive(Clone, Debug)]
pub(crate) struct SparseOp {
    dim: usize,
    entries: Vec<Entry>,
}

impl SparseOp {
    /// Keeps entries whose modulus exceeds `1e-15` times the largest one.
    pub(crate) fn from_dense(m: &DMatrix<C64>) -> Self {
        let dim = m.nrows();
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cutoff = scale * 1e-15;
        let mut entries = Vec::new();
        for row in 0..dim {
            for col in 0..dim {
                let val = m[(row, col)];
                if val.norm() > cutoff {
                    entries.push(Entry { row, col, val });
                }
            }
        }
        Self { dim, entries }
    }

    #[cfg(test)]
    pub(crate) fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `out = A x`.
    pub(crate) fn apply_vec(&self, x: &[C64], out: &mut [C64]) {
        assert!(x.len() >= self.dim && out.len() >= self.dim);
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for e in &self.entries {
            // SAFETY: entry indices are below `dim`, checked above.
            unsafe { *out.get_unchecked_mut(e.row) += e.val * *x.get_unchecked(e.col) };
        }
    }

    /// `Re <x|A|x>`.
    pub(crate) fn quadratic_form(&self, x: &[C64]) -> f64 {
        assert!(x.len() >= self.dim);
        let mut acc = C64::new(0.0, 0.0);
        for e in &self.entries {
            // SAFETY: entry indices are below `dim`, checked above.
            unsafe { acc += x.get_unchecked(e.row).conj() * e.val * *x.get_unchecked(e.col) };
        }
        acc.re
    }

    /// `Re Tr(A rho)` for a column-major `rho`.
    pub(crate) fn trace_with(&self, rho: &[C64]) -> f64 {
        let d = self.dim;
        self.entries.iter().map(|e| (e.val * rho[e.col + e.row * d]).re).sum()
    }

    /// `out = A M` for column-major `M`. Columns of `M` that are exactly zero
    /// are skipped.
    fn left_mul(&self, m: &[C64], out: &mut [C64]) {
        let d = self.dim;
        assert!(m.len() >= d * d && out.len() >= d * d);
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for j in 0..d {
            let base = j * d;
            if m[base..base + d].iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            for e in &self.entries {
                // SAFETY: entry indices are below `dim` and `j < dim`, so both
                // offsets are below `d * d`, checked above.
                unsafe { *out.get_unchecked_mut(base + e.row) += e.val * *m.get_unchecked(base + e.col) };
            }
        }
    }

    /// `out += w * A rho A^dag` for Hermitian column-major `rho`.
    ///
    /// Uses `A rho A^dag = A (A rho)^dag`, which needs `rho` Hermitian.
    pub(crate) fn sandwich_add(&self, rho: &[C64], w: f64, scratch: &mut Scratch, out: &mut [C64]) {
        let d = self.dim;
        self.left_mul(rho, &mut scratch.a);
        // b = a^dag
        for i in 0..d {
            for j in 0..d {
                scratch.b[i + j * d] = scratch.a[j + i * d].conj();
            }
        }
        self.left_mul(&scratch.b, &mut scratch.a);
        for (o, z) in out.iter_mut().zip(scratch.a.iter()) {
            *o += *z * w;
        }
    }

    #[cfg(test)]
    pub(crate) fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            m[(e.row, e.col)] = e.val;
        }
        m
    }

    #[cfg(test)]
    pub(crate) fn apply_dvector(&self, x: &nalgebra::DVector<C64>) -> nalgebra::DVector<C64> {
        let mut out = nalgebra::DVector::zeros(self.dim);
        self.apply_vec(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// Reusable buffers for [`SparseOp::sandwich_add`].
#[derive(Clone, Debug)]
pub(crate) struct Scratch {
    a: Vec<C64>,
    b: Vec<C64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self { a: vec![C64::new(0.0, 0.0); dim * dim], b: vec![C64::new(0.0, 0.0); dim * dim] }
    }
}
