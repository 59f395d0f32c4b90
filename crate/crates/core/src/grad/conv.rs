//! im2col convolution kernels on raw NCHW buffers.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox*stride + kj - pad` lies inside
/// the image, as a half-open range.
fn valid_cols(g: &ConvGeom, wo: usize, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, img: &[f64], cols: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, wo, kj);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (i, slot) in out_row[lo..hi].iter_mut().enumerate() {
                            *slot = src[first + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], img: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, wo, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (i, v) in s.iter().enumerate() {
                            dst[first + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c[m,n] = beta*c + a[m,k] * b[k,n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted bounds cover every index the kernel touches and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), 0.0, out);
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn matmul_bt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm(m, k, n, a, (k, 1), b, (1, k), 1.0, out);
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn matmul_at_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm(m, k, n, a, (1, m), b, (n, 1), 1.0, out);
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let k = g.cols_rows();
    let in_stride = g.cin * g.h * g.w;
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for b in 0..g.n {
        let img = &input[b * in_stride..(b + 1) * in_stride];
        let cols_ref: &[f64] = if g.is_pointwise() {
            img
        } else {
            im2col(g, img, &mut cols);
            &cols
        };
        matmul(g.cout, k, p, kernel, cols_ref, &mut out[b * g.cout * p..(b + 1) * g.cout * p]);
    }
    out
}

/// Returns `(grad_input, grad_kernel)`; `grad_input` is skipped when not requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let k = g.cols_rows();
    let in_stride = g.cin * g.h * g.w;
    let mut gk = want_kernel.then(|| vec![0.0; g.cout * k]);
    let mut gi = want_input.then(|| vec![0.0; input.len()]);
    let mut cols = vec![0.0; k * p];
    for b in 0..g.n {
        let go = &grad_out[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(gk) = gk.as_mut() {
            let img = &input[b * in_stride..(b + 1) * in_stride];
            let cols_ref: &[f64] = if g.is_pointwise() {
                img
            } else {
                im2col(g, img, &mut cols);
                &cols
            };
            matmul_bt_acc(g.cout, p, k, go, cols_ref, gk);
        }
        if let Some(gi) = gi.as_mut() {
            let dst = &mut gi[b * in_stride..(b + 1) * in_stride];
            if g.is_pointwise() {
                matmul_at_acc(k, g.cout, p, kernel, go, dst);
            } else {
                cols.fill(0.0);
                matmul_at_acc(k, g.cout, p, kernel, go, &mut cols);
                col2im_add(g, &cols, dst);
            }
        }
    }
    (gi, gk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut out = vec![0.0; g.n * g.cout * ho * wo];
        for b in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += input[((b * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize]
                                        * kernel[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                                }
                            }
                        }
                        out[((b * g.cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_matches_direct_loops() {
        for &(kh, stride, pad, h) in &[(3, 1, 1, 5), (4, 2, 1, 8), (1, 1, 0, 3), (3, 2, 0, 7)] {
            let g = ConvGeom {
                n: 2,
                cin: 3,
                h,
                w: h + 1,
                cout: 4,
                kh,
                kw: kh,
                stride,
                pad,
            };
            let input: Vec<f64> = (0..g.n * g.cin * g.h * g.w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let kernel: Vec<f64> = (0..g.cout * g.cin * kh * kh).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7).collect();
            let fast = conv2d_forward(&g, &input, &kernel);
            let slow = naive(&g, &input, &kernel);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint_of_forward() {
        for &(kh, stride, pad, h) in &[(3, 1, 1, 5), (4, 2, 1, 8), (1, 1, 0, 3), (3, 2, 0, 7), (5, 1, 3, 2)] {
            let g = ConvGeom {
                n: 2,
                cin: 2,
                h,
                w: h + 2,
                cout: 3,
                kh,
                kw: kh,
                stride,
                pad,
            };
            let (ho, wo) = g.out_hw();
            let input: Vec<f64> = (0..g.n * g.cin * g.h * g.w).map(|i| ((i * 29) % 13) as f64 - 6.0).collect();
            let kernel: Vec<f64> = (0..g.cout * g.cin * kh * kh).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
            let go: Vec<f64> = (0..g.n * g.cout * ho * wo).map(|i| ((i * 11) % 9) as f64 - 4.0).collect();
            let (gi, gk) = conv2d_backward(&g, &input, &kernel, &go, true, true);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let y = naive(&g, &input, &kernel);
            // <conv(x, k), go> is linear in x and in k separately.
            assert!((dot(&y, &go) - dot(&input, &gi.unwrap())).abs() < 1e-9);
            assert!((dot(&y, &go) - dot(&kernel, &gk.unwrap())).abs() < 1e-9);
        }
    }
}
