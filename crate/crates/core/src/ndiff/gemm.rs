//! Safe wrapper over the `matrixmultiply` f64 kernel.

/// Borrowed view of a dense row-major matrix, optionally read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatRef<'a> {
    /// `rows × cols` is the stored shape; with `transposed` the view is `cols × rows`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize, transposed: bool) -> Self {
        assert!(data.len() >= rows * cols);
        if transposed {
            Self { data, rows: cols, cols: rows, row_stride: 1, col_stride: cols as isize }
        } else {
            Self { data, rows, cols, row_stride: cols as isize, col_stride: 1 }
        }
    }

    /// Column block `[col0, col0 + width)` of a row-major `rows × stride` buffer.
    pub fn column_block(
        data: &'a [f64],
        rows: usize,
        stride: usize,
        col0: usize,
        width: usize,
        transposed: bool,
    ) -> Self {
        assert!(col0 + width <= stride);
        assert!(rows == 0 || data.len() >= (rows - 1) * stride + col0 + width);
        let data = &data[col0..];
        if transposed {
            Self { data, rows: width, cols: rows, row_stride: 1, col_stride: stride as isize }
        } else {
            Self { data, rows, cols: width, row_stride: stride as isize, col_stride: 1 }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// `out = a @ b + beta * out`, where `out` is dense row-major `a.rows × b.cols`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let n = b.cols;
    gemm_strided(a, b, out, n, 0, beta);
}

/// Like [`gemm`] but writes into column block `[col0, col0 + b.cols)` of a
/// row-major output with row stride `out_stride`.
pub fn gemm_strided(
    a: MatRef<'_>,
    b: MatRef<'_>,
    out: &mut [f64],
    out_stride: usize,
    col0: usize,
    beta: f64,
) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ");
    assert!(col0 + n <= out_stride);
    if m == 0 || n == 0 {
        return;
    }
    assert!(out.len() >= (m - 1) * out_stride + col0 + n);
    if k == 0 {
        for r in 0..m {
            for v in &mut out[r * out_stride + col0..r * out_stride + col0 + n] {
                *v *= beta;
            }
        }
        return;
    }
    // Bounds of every strided access were asserted above and in the MatRef
    // constructors.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr().add(col0),
            out_stride as isize,
            1,
        );
    }
}
