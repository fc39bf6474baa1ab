//! Row-major f64 matrices and the layer primitives used by the networks.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols);
            data.extend_from_slice(r.as_ref());
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows of `self` picked by `idx`.
    pub fn gather(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Adds row `o` of `src` into row `idx[o]` of `self`.
    pub fn scatter_add(&mut self, idx: &[usize], src: &Mat) {
        for (o, &i) in idx.iter().enumerate() {
            for (d, s) in self.row_mut(i).iter_mut().zip(src.row(o)) {
                *d += s;
            }
        }
    }

    /// `[self | other]` column-wise.
    pub fn hcat(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            let row = out.row_mut(r);
            row[..self.cols].copy_from_slice(self.row(r));
            row[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }

    /// Splits columns at `at`.
    pub fn hsplit(&self, at: usize) -> (Mat, Mat) {
        let mut a = Mat::zeros(self.rows, at);
        let mut b = Mat::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            a.row_mut(r).copy_from_slice(&self.row(r)[..at]);
            b.row_mut(r).copy_from_slice(&self.row(r)[at..]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `y = x Wᵀ + b` with `W` stored `out × in` row-major.
pub fn linear_forward(x: &Mat, w: &[f64], b: Option<&[f64]>, out: usize) -> Mat {
    let inp = x.cols;
    assert_eq!(w.len(), out * inp);
    let mut y = Mat::zeros(x.rows, out);
    if let Some(b) = b {
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(b);
        }
    }
    if x.rows == 0 {
        return y;
    }
    // SAFETY: dimensions and strides describe the live buffers above.
    unsafe {
        matrixmultiply::dgemm(
            x.rows,
            inp,
            out,
            1.0,
            x.data.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            1.0,
            y.data.as_mut_ptr(),
            out as isize,
            1,
        );
    }
    y
}

/// Accumulates `dW += dyᵀ x`, `db += Σ dy` and returns `dx = dy W`.
pub fn linear_backward(
    x: &Mat,
    w: &[f64],
    dy: &Mat,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Mat {
    let (n, inp, out) = (x.rows, x.cols, dy.cols);
    let mut dx = Mat::zeros(n, inp);
    if n == 0 {
        return dx;
    }
    if let Some(db) = db {
        for r in 0..n {
            for (g, d) in db.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
    }
    // SAFETY: as in `linear_forward`.
    unsafe {
        matrixmultiply::dgemm(
            out,
            n,
            inp,
            1.0,
            dy.data.as_ptr(),
            1,
            out as isize,
            x.data.as_ptr(),
            inp as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
        matrixmultiply::dgemm(
            n,
            out,
            inp,
            1.0,
            dy.data.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            0.0,
            dx.data.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
    dx
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu_forward(x: &Mat) -> Mat {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|&v| gelu(v)).collect(),
    }
}

pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| g * gelu_grad(v))
            .collect(),
    }
}

/// Normalized activations and per-row inverse standard deviations.
pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub fn layernorm_forward(x: &Mat, gain: &[f64], bias: &[f64]) -> (Mat, LnCache) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for j in 0..d {
            xh[j] = (row[j] - mean) * is;
        }
        let yr = y.row_mut(r);
        for j in 0..d {
            yr[j] = gain[j] * xhat.data[r * d + j] + bias[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layernorm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &Mat,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

/// Row-wise L2 normalization; returns normalized rows and the norms.
pub fn normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        norms.push(n);
        for v in out.row_mut(r) {
            *v /= n;
        }
    }
    (out, norms)
}

/// Backward of [`normalize_rows`]: `dx = (dŷ − ŷ (ŷ·dŷ)) / ‖x‖`.
pub fn normalize_rows_backward(xhat: &Mat, norms: &[f64], dxhat: &Mat) -> Mat {
    let mut dx = Mat::zeros(xhat.rows, xhat.cols);
    for r in 0..xhat.rows {
        let y = xhat.row(r);
        let g = dxhat.row(r);
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = (g[j] - y[j] * dot) / norms[r];
        }
    }
    dx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_naive() {
        let x = Mat::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]], 3);
        let w = [0.1, 0.2, 0.3, -0.4, 0.5, -0.6];
        let y = linear_forward(&x, &w, Some(&[1.0, -1.0]), 2);
        assert!((y.row(0)[0] - (1.0 + 0.1 + 0.4 + 0.9)).abs() < 1e-12);
        assert!((y.row(1)[1] - (-1.0 + 0.4 + 0.25)).abs() < 1e-12);

        let dy = Mat::from_rows(&[[1.0, 0.0], [0.0, 2.0]], 2);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let dx = linear_backward(&x, &w, &dy, &mut dw, Some(&mut db));
        assert_eq!(db, [1.0, 2.0]);
        assert_eq!(dw, [1.0, 2.0, 3.0, -2.0, 1.0, 0.0]);
        assert_eq!(dx.row(1), &[-0.8, 1.0, -1.2]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_of_zero_is_bias() {
        let x = Mat::zeros(1, 4);
        let (y, _) = layernorm_forward(&x, &[1.0; 4], &[0.5, -0.5, 1.0, 2.0]);
        assert_eq!(y.row(0), &[0.5, -0.5, 1.0, 2.0]);
    }
}
