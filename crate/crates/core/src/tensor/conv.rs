//! 2-D cross-correlation via im2col + GEMM, NCHW layout.

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Option<Self> {
        let (n, cin, h, wd) = (x[0], x[1], x[2], x[3]);
        let (cout, k) = (w[0], w[2]);
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return None;
        }
        Some(Self {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad` is in bounds.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.wo);
    // largest ox with ox * stride + kx - pad <= w - 1
    let hi = if g.w + g.pad > kx {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Columns for output rows `[oy0, oy1)`: `cols` is `rows x ((oy1 - oy0) * wo)`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], oy0: usize, oy1: usize, cols: &mut [T]) {
    let tw = (oy1 - oy0) * g.wo;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * tw..(row + 1) * tw];
                let (lo, hi) = valid_cols(g, kx);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if hi > lo {
                        let start = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (d, s) in drow[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds the columns of output rows `[oy0, oy1)` back into `dx`.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], oy0: usize, oy1: usize, dx: &mut [T]) {
    let tw = (oy1 - oy0) * g.wo;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * tw..(row + 1) * tw];
                let (lo, hi) = valid_cols(g, kx);
                if hi <= lo {
                    continue;
                }
                let start = lo * g.stride + kx - g.pad;
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let base = (oy - oy0) * g.wo;
                    let srow = &src[base + lo..base + hi];
                    if g.stride == 1 {
                        for (d, s) in drow[start..start + hi - lo].iter_mut().zip(srow) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in drow[start..].iter_mut().step_by(g.stride).zip(srow) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Output rows per tile so one column tile stays around L2 size.
fn tile_rows(g: &ConvGeom) -> usize {
    const TILE_ELEMS: usize = 96 * 1024;
    (TILE_ELEMS / (g.col_rows() * g.wo).max(1)).clamp(1, g.ho)
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Tensor<T> {
    let (rows, plane) = (g.col_rows(), g.col_cols());
    let tr = tile_rows(g);
    let mut cols = vec![T::zero(); rows * tr * g.wo];
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    let in_stride = g.cin * g.h * g.w;
    for n in 0..g.n {
        let xn = &x.data()[n * in_stride..(n + 1) * in_stride];
        let o = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        for (co, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.fill(b.data()[co]);
        }
        for oy0 in (0..g.ho).step_by(tr) {
            let oy1 = (oy0 + tr).min(g.ho);
            let tw = (oy1 - oy0) * g.wo;
            im2col(g, xn, oy0, oy1, &mut cols);
            T::gemm_strided(
                g.cout,
                rows,
                tw,
                T::one(),
                (w.data(), rows as isize, 1),
                (&cols, tw as isize, 1),
                T::one(),
                (&mut o[oy0 * g.wo..], plane as isize, 1),
            );
        }
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out).expect("conv output shape")
}

/// Returns `(dx, dw, db)`; `dx` is skipped when the input does not need it.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad).expect("validated in forward");
    let (rows, plane) = (g.col_rows(), g.col_cols());
    let tr = tile_rows(&g);
    let mut cols = vec![T::zero(); rows * tr * g.wo];
    let mut dcols = vec![T::zero(); rows * tr * g.wo];
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let in_stride = g.cin * g.h * g.w;
    for n in 0..g.n {
        let dyn_ = &dy.data()[n * g.cout * plane..(n + 1) * g.cout * plane];
        let xn = &x.data()[n * in_stride..(n + 1) * in_stride];
        for (co, chunk) in dyn_.chunks(plane).enumerate() {
            let s: f64 = chunk.iter().map(|v| v.to_f64().unwrap()).sum();
            db[co] += T::lit(s);
        }
        for oy0 in (0..g.ho).step_by(tr) {
            let oy1 = (oy0 + tr).min(g.ho);
            let tw = (oy1 - oy0) * g.wo;
            let dy_tile = &dyn_[oy0 * g.wo..];
            im2col(&g, xn, oy0, oy1, &mut cols);
            // dW += dY_tile * cols^T
            T::gemm_strided(
                g.cout,
                tw,
                rows,
                T::one(),
                (dy_tile, plane as isize, 1),
                (&cols, 1, tw as isize),
                T::one(),
                (dw.data_mut(), rows as isize, 1),
            );
            if let Some(dx) = dx.as_mut() {
                // dcols = W^T * dY_tile
                T::gemm_strided(
                    rows,
                    g.cout,
                    tw,
                    T::one(),
                    (w.data(), 1, rows as isize),
                    (dy_tile, plane as isize, 1),
                    T::zero(),
                    (&mut dcols, tw as isize, 1),
                );
                col2im(&g, &dcols, oy0, oy1, &mut dx.data_mut()[n * in_stride..(n + 1) * in_stride]);
            }
        }
    }
    let db = Tensor::new(vec![g.cout], db).expect("bias grad shape");
    (dx, dw, db)
}
