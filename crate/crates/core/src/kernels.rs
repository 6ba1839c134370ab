//! Convolution and matrix kernels on raw slices.
//!
//! Convolutions lower to GEMM through an im2col buffer laid out as
//! `[channels * kh * kw, batch * out_h * out_w]`, so a whole batch is one
//! GEMM call. Activations are permuted to channel-major order around it.

use crate::tensor::Scalar;

/// Geometry of a strided, zero-padded 2-D correlation from a "wide" map
/// (`h × w`) onto a "narrow" map (`out_h × out_w`).
///
/// For `conv2d` the wide map is the input; for `conv2d_transpose` it is the
/// output, since the transposed convolution is the adjoint of this mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_area()
    }

    /// Input coordinate read by output position `o` at kernel offset `k`.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Gathers every receptive field of `x` (`[batch, channels, h, w]`) into columns.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols_n = g.col_cols();
    let area = g.out_area();
    let mut cols = vec![T::zero(); g.col_rows() * cols_n];
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..g.batch {
                    let plane = &x[(n * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[n * area..(n + 1) * area];
                    for oi in 0..g.out_h {
                        let Some(ii) = ConvGeometry::source(oi, ki, g.stride, g.pad, g.h) else {
                            continue;
                        };
                        let src_row = &plane[ii * g.w..(ii + 1) * g.w];
                        for oj in 0..g.out_w {
                            if let Some(jj) = ConvGeometry::source(oj, kj, g.stride, g.pad, g.w) {
                                dst[oi * g.out_w + oj] = src_row[jj];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto a `[batch, channels, h, w]` map.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols_n = g.col_cols();
    let area = g.out_area();
    let mut x = vec![T::zero(); g.batch * g.channels * g.h * g.w];
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..g.batch {
                    let plane = &mut x[(n * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[n * area..(n + 1) * area];
                    for oi in 0..g.out_h {
                        let Some(ii) = ConvGeometry::source(oi, ki, g.stride, g.pad, g.h) else {
                            continue;
                        };
                        let dst_row = &mut plane[ii * g.w..(ii + 1) * g.w];
                        for oj in 0..g.out_w {
                            if let Some(jj) = ConvGeometry::source(oj, kj, g.stride, g.pad, g.w) {
                                dst_row[jj] = dst_row[jj] + src[oi * g.out_w + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[batch, channels, area]` to `[channels, batch * area]`.
pub fn to_channel_major<T: Scalar>(x: &[T], batch: usize, channels: usize, area: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for c in 0..channels {
            out[(c * batch + n) * area..][..area].copy_from_slice(&x[(n * channels + c) * area..][..area]);
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub fn from_channel_major<T: Scalar>(x: &[T], batch: usize, channels: usize, area: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for c in 0..channels {
            out[(n * channels + c) * area..][..area].copy_from_slice(&x[(c * batch + n) * area..][..area]);
        }
    }
    out
}

/// Forward correlation. `kernel` is `[filters, g.col_rows()]`, result `[batch, filters, out_h, out_w]`.
pub fn conv2d_forward<T: Scalar>(cols: &[T], kernel: &[T], bias: &[T], filters: usize, g: &ConvGeometry) -> Vec<T> {
    let area = g.out_area();
    let rows = g.col_rows();
    let cols_n = g.col_cols();
    let mut wide = vec![T::zero(); filters * cols_n];
    for (f, row) in wide.chunks_mut(cols_n).enumerate() {
        row.fill(bias[f]);
    }
    T::gemm(
        filters,
        rows,
        cols_n,
        T::one(),
        kernel,
        (rows, 1),
        cols,
        (cols_n, 1),
        T::one(),
        &mut wide,
        (cols_n, 1),
    );
    from_channel_major(&wide, g.batch, filters, area)
}

/// Gradients of [`conv2d_forward`] with respect to the columns and the kernel.
pub fn conv2d_backward<T: Scalar>(
    cols: &[T],
    kernel: &[T],
    grad_out: &[T],
    filters: usize,
    g: &ConvGeometry,
    want_cols: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let rows = g.col_rows();
    let cols_n = g.col_cols();
    let dy = to_channel_major(grad_out, g.batch, filters, g.out_area());
    let dcols = want_cols.then(|| {
        let mut dcols = vec![T::zero(); rows * cols_n];
        T::gemm(
            rows,
            filters,
            cols_n,
            T::one(),
            kernel,
            (1, rows),
            &dy,
            (cols_n, 1),
            T::zero(),
            &mut dcols,
            (cols_n, 1),
        );
        dcols
    });
    let dkernel = want_kernel.then(|| {
        let mut dk = vec![T::zero(); filters * rows];
        T::gemm(
            filters,
            cols_n,
            rows,
            T::one(),
            &dy,
            (cols_n, 1),
            cols,
            (1, cols_n),
            T::zero(),
            &mut dk,
            (rows, 1),
        );
        dk
    });
    (dcols, dkernel)
}

/// Per-channel sum over `[batch, channels, area]`.
pub fn channel_sums<T: Scalar>(x: &[T], batch: usize, channels: usize, area: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            let plane = &x[(n * channels + c) * area..][..area];
            *s = *s + plane.iter().copied().sum::<T>();
        }
    }
    sums
}

/// Transposed convolution lowered to columns.
///
/// `x` is `[batch, in_ch, narrow area]` and `kernel` is `[in_ch, g.col_rows()]`
/// where `g` describes the wide output map with `g.channels` output channels.
/// Returns the columns `[g.col_rows(), batch * narrow area]`.
pub fn conv_transpose_cols<T: Scalar>(x: &[T], kernel: &[T], in_ch: usize, g: &ConvGeometry) -> Vec<T> {
    let rows = g.col_rows();
    let cols_n = g.col_cols();
    let xc = to_channel_major(x, g.batch, in_ch, g.out_area());
    let mut cols = vec![T::zero(); rows * cols_n];
    T::gemm(
        rows,
        in_ch,
        cols_n,
        T::one(),
        kernel,
        (1, rows),
        &xc,
        (cols_n, 1),
        T::zero(),
        &mut cols,
        (cols_n, 1),
    );
    cols
}

/// Gradients of a transposed convolution given `im2col(grad_out)`.
pub fn conv_transpose_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    grad_cols: &[T],
    in_ch: usize,
    g: &ConvGeometry,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let area = g.out_area();
    let rows = g.col_rows();
    let cols_n = g.col_cols();
    let dx = want_input.then(|| {
        let mut dxc = vec![T::zero(); in_ch * cols_n];
        T::gemm(
            in_ch,
            rows,
            cols_n,
            T::one(),
            kernel,
            (rows, 1),
            grad_cols,
            (cols_n, 1),
            T::zero(),
            &mut dxc,
            (cols_n, 1),
        );
        from_channel_major(&dxc, g.batch, in_ch, area)
    });
    let dk = want_kernel.then(|| {
        let xc = to_channel_major(x, g.batch, in_ch, area);
        let mut dk = vec![T::zero(); in_ch * rows];
        T::gemm(
            in_ch,
            cols_n,
            rows,
            T::one(),
            &xc,
            (cols_n, 1),
            grad_cols,
            (1, cols_n),
            T::zero(),
            &mut dk,
            (rows, 1),
        );
        dk
    });
    (dx, dk)
}
