//! Dense kernels over row-major `f64` buffers.
//!
//! Every output row is produced by the same per-row routine with a fixed
//! summation order, so a row computed alone (incremental decoding) is
//! bit-identical to the same row computed as part of a full matrix.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }
}

/// `out = bias + x · W` for one row; `W` is `x.len() × out.len()` row-major.
#[inline]
pub fn row_affine(x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(w.len(), x.len() * n);
    match bias {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    for (k, &a) in x.iter().enumerate() {
        let wr = &w[k * n..(k + 1) * n];
        for (o, &wv) in out.iter_mut().zip(wr) {
            *o += a * wv;
        }
    }
}

/// Row-wise affine map of every row of `x`.
pub fn affine(x: &Mat, w: &[f64], bias: Option<&[f64]>, out_cols: usize) -> Mat {
    let mut out = Mat::zeros(x.rows, out_cols);
    for i in 0..x.rows {
        let (xr, or) = (x.row(i), &mut out.data[i * out_cols..(i + 1) * out_cols]);
        row_affine(xr, w, bias, or);
    }
    out
}

/// Backward of `y = x·W`: accumulates `dW += xᵀ·dy` and returns `dx = dy·Wᵀ`.
pub fn affine_backward(x: &Mat, w: &[f64], dy: &Mat, dw: &mut [f64]) -> Mat {
    let (n_in, n_out) = (x.cols, dy.cols);
    for i in 0..x.rows {
        let dyr = dy.row(i);
        for (k, &a) in x.row(i).iter().enumerate() {
            let row = &mut dw[k * n_out..(k + 1) * n_out];
            for (g, &d) in row.iter_mut().zip(dyr) {
                *g += a * d;
            }
        }
    }
    let wt = transpose_raw(w, n_in, n_out);
    affine(dy, &wt, None, n_in)
}

/// `db += Σ_rows dy`.
pub fn bias_backward(dy: &Mat, db: &mut [f64]) {
    for i in 0..dy.rows {
        for (g, &d) in db.iter_mut().zip(dy.row(i)) {
            *g += d;
        }
    }
}

pub fn transpose_raw(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = w[i * cols + j];
        }
    }
    t
}

/// Dot product with four fixed accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
