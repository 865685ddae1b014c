//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Row-major matrix view: `rows x cols` with explicit element strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view exceeds its buffer");
        }
    }
}

/// `c = a * b + beta * c` with `c` dense row-major `a.rows x b.cols`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the views were bounds-checked above and `c` holds m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_views_match_naive() {
        let a: alloc::vec::Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: alloc::vec::Vec<f64> = (0..6).map(|v| (v * v) as f64).collect(); // 2x3
        let mut c = [0.0; 4];
        // a (2x3) * b^T (3x2)
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 2, 3).t(), 0.0, &mut c);
        let mut naive = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                naive[i * 2 + j] = (0..3).map(|k| a[i * 3 + k] * b[j * 3 + k]).sum();
            }
        }
        assert_eq!(c, naive);
    }
}
