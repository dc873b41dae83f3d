//! Direct cross-correlation kernels (im2col + gemm) used by the graph.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
    /// 1x1 stride-1 unpadded convolutions skip im2col: the input is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + i) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + j) as isize - g.pad as isize;
                        *o = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + i) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + j) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], k: &[T], b: &[T]) -> Vec<T> {
    let p = g.positions();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let on = &mut out[n * out_len..(n + 1) * out_len];
        for (co, row) in on.chunks_mut(p).enumerate() {
            row.fill(b[co]);
        }
        let cols_ref = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(g.c_out, g.patch(), p, k, false, cols_ref, false, on, true);
    }
    out
}

/// Returns `(dx, dk, db)`; each is computed only when requested.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    dy: &[T],
    want: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.positions();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut dx = want[0].then(|| vec![T::zero(); g.n * in_len]);
    let mut dk = want[1].then(|| vec![T::zero(); g.c_out * g.patch()]);
    let mut db = want[2].then(|| vec![T::zero(); g.c_out]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * p]
    };
    for n in 0..g.n {
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, row) in dyn_.chunks(p).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let cols_ref = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // dk (co × patch) += dy (co × p) · colsᵀ (p × patch)
            T::gemm(g.c_out, p, g.patch(), dyn_, false, cols_ref, true, dk, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(g.patch(), g.c_out, p, k, true, dyn_, false, dxn, true);
            } else {
                // dcols (patch × p) = kᵀ (patch × co) · dy (co × p)
                T::gemm(g.patch(), g.c_out, p, k, true, dyn_, false, &mut cols, false);
                col2im(g, &cols, dxn);
            }
        }
    }
    (dx, dk, db)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DepthwiseGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl DepthwiseGeom {
    pub fn h_out(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.kh
    }
    pub fn w_out(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.kw
    }
}

/// Calls `f(out_start, in_start, len, tap)` for every contiguous run of
/// valid (output, input) pairs in one plane.
#[inline]
fn for_each_run(g: &DepthwiseGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (ho, wo) = (g.h_out(), g.w_out());
    for i in 0..g.kh {
        for j in 0..g.kw {
            let tap = i * g.kw + j;
            let ow_lo = g.pad.saturating_sub(j);
            let ow_hi = (g.w + g.pad).saturating_sub(j).min(wo);
            if ow_lo >= ow_hi {
                continue;
            }
            for oh in 0..ho {
                let ih = (oh + i) as isize - g.pad as isize;
                if ih < 0 || ih >= g.h as isize {
                    continue;
                }
                f(oh * wo + ow_lo, ih as usize * g.w + ow_lo + j - g.pad, ow_hi - ow_lo, tap);
            }
        }
    }
}

pub(crate) fn depthwise_forward<T: Real>(g: &DepthwiseGeom, x: &[T], k: &[T], b: &[T]) -> Vec<T> {
    let plane_in = g.h * g.w;
    let plane_out = g.h_out() * g.w_out();
    let taps = g.kh * g.kw;
    let mut out = vec![T::zero(); g.n * g.c * plane_out];
    for n in 0..g.n {
        for c in 0..g.c {
            let xi = &x[(n * g.c + c) * plane_in..][..plane_in];
            let o = &mut out[(n * g.c + c) * plane_out..][..plane_out];
            o.fill(b[c]);
            let kc = &k[c * taps..(c + 1) * taps];
            for_each_run(g, |oi, ii, len, t| {
                let kt = kc[t];
                for (ov, &xv) in o[oi..oi + len].iter_mut().zip(&xi[ii..ii + len]) {
                    *ov += kt * xv;
                }
            });
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Real>(
    g: &DepthwiseGeom,
    x: &[T],
    k: &[T],
    dy: &[T],
    want: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane_in = g.h * g.w;
    let plane_out = g.h_out() * g.w_out();
    let taps = g.kh * g.kw;
    let mut dx = want[0].then(|| vec![T::zero(); x.len()]);
    let mut dk = want[1].then(|| vec![T::zero(); k.len()]);
    let mut db = want[2].then(|| vec![T::zero(); g.c]);
    for n in 0..g.n {
        for c in 0..g.c {
            let base_in = (n * g.c + c) * plane_in;
            let d = &dy[(n * g.c + c) * plane_out..][..plane_out];
            if let Some(db) = db.as_mut() {
                db[c] += d.iter().copied().sum::<T>();
            }
            if let Some(dk) = dk.as_mut() {
                let xi = &x[base_in..base_in + plane_in];
                let dkc = &mut dk[c * taps..(c + 1) * taps];
                for_each_run(g, |oi, ii, len, t| {
                    dkc[t] += d[oi..oi + len].iter().zip(&xi[ii..ii + len]).map(|(&a, &b)| a * b).sum::<T>();
                });
            }
            if let Some(dx) = dx.as_mut() {
                let kc = &k[c * taps..(c + 1) * taps];
                let dxi = &mut dx[base_in..base_in + plane_in];
                for_each_run(g, |oi, ii, len, t| {
                    let kt = kc[t];
                    for (xv, &dv) in dxi[ii..ii + len].iter_mut().zip(&d[oi..oi + len]) {
                        *xv += kt * dv;
                    }
                });
            }
        }
    }
    (dx, dk, db)
}
