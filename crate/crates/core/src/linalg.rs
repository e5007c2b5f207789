//! Small dense least-squares solver (Householder QR) for the harmonic fits.

// index loops read closer to the textbook algorithm here
#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Column-major `rows x cols` matrix.
pub(crate) struct Design<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Design<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[c * self.rows + r] = v;
    }

    /// Solves `min ||A x - y||`, consuming `A`. Returns `None` when a column is
    /// numerically dependent on the others.
    pub fn solve(mut self, y: &[T]) -> Option<Vec<T>> {
        let (m, n) = (self.rows, self.cols);
        assert_eq!(y.len(), m);
        if m < n {
            return None;
        }
        let mut rhs = y.to_vec();
        let mut diag = vec![T::zero(); n];
        let mut col_norms = vec![T::zero(); n];
        for j in 0..n {
            col_norms[j] = norm(&self.data[j * m..(j + 1) * m]);
        }
        for j in 0..n {
            let col = &mut self.data[j * m..(j + 1) * m];
            let alpha = norm(&col[j..]);
            if alpha == T::zero() {
                return None;
            }
            let alpha = if col[j] > T::zero() { -alpha } else { alpha };
            // v = x - alpha*e1, stored in place
            col[j] = col[j] - alpha;
            let vnorm2: T = col[j..].iter().map(|v| *v * *v).sum();
            diag[j] = alpha;
            if vnorm2 == T::zero() {
                continue;
            }
            let v: Vec<T> = col[j..].to_vec();
            for k in (j + 1)..n {
                let other = &mut self.data[k * m + j..(k + 1) * m];
                let dot: T = v.iter().zip(other.iter()).map(|(a, b)| *a * *b).sum();
                let s = (dot + dot) / vnorm2;
                for (o, vi) in other.iter_mut().zip(&v) {
                    *o = *o - s * *vi;
                }
            }
            let dot: T = v.iter().zip(&rhs[j..]).map(|(a, b)| *a * *b).sum();
            let s = (dot + dot) / vnorm2;
            for (o, vi) in rhs[j..].iter_mut().zip(&v) {
                *o = *o - s * *vi;
            }
        }
        // rank check relative to each column's own scale
        let tol = T::epsilon() * T::lit((m.max(n) * 16) as f64);
        for j in 0..n {
            if diag[j].abs() <= tol * col_norms[j] {
                return None;
            }
        }
        let mut x = vec![T::zero(); n];
        for j in (0..n).rev() {
            let mut acc = rhs[j];
            for k in (j + 1)..n {
                acc = acc - self.data[k * m + j] * x[k];
            }
            x[j] = acc / diag[j];
        }
        Some(x)
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss: T = v.iter().map(|x| (*x / scale) * (*x / scale)).sum();
    scale * ss.sqrt()
}
