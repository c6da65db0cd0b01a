//! Layer compute kernels.
//!
//! All kernels read and write flat `f32` slices and accumulate sums in `f64`
//! before truncating back to `f32`. Loops run in a fixed order, so every
//! kernel is bit-deterministic for identical inputs.

/// Geometry of a 2-d convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Geometry of a 2-d pooling window.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn dense_forward(x: &[f32], w: &[f32], b: &[f32], out: &mut [f32]) {
    let in_dim = x.len();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = f64::from(b[o]);
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += f64::from(*wv) * f64::from(*xv);
        }
        *out_v = acc as f32;
    }
}

/// d(loss)/d(input) of a dense layer: `dx = W^T dy`.
pub(crate) fn dense_dx(w: &[f32], dy: &[f32], dx: &mut [f32]) {
    let in_dim = dx.len();
    let mut acc = vec![0.0f64; in_dim];
    for (o, dyo) in dy.iter().enumerate() {
        let dyo = f64::from(*dyo);
        let row = &w[o * in_dim..(o + 1) * in_dim];
        for (a, wv) in acc.iter_mut().zip(row.iter()) {
            *a += f64::from(*wv) * dyo;
        }
    }
    for (d, a) in dx.iter_mut().zip(acc) {
        *d = a as f32;
    }
}

/// Parameter gradients of a dense layer: `dW = dy x^T`, `db = dy`.
pub(crate) fn dense_dw(x: &[f32], dy: &[f32], dw: &mut [f32], db: &mut [f32]) {
    let in_dim = x.len();
    for (o, dyo) in dy.iter().enumerate() {
        let dyo64 = f64::from(*dyo);
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for (d, xv) in row.iter_mut().zip(x.iter()) {
            *d = (dyo64 * f64::from(*xv)) as f32;
        }
        db[o] = *dyo;
    }
}

/// Valid kernel index range `[lo, hi)` for an output position whose first
/// tap sits at `i0` (possibly negative under padding) in an axis of length
/// `len`.
#[inline]
fn tap_range(i0: isize, k: usize, len: usize) -> (usize, usize) {
    let lo = (-i0).max(0) as usize;
    let hi = (len as isize - i0).clamp(0, k as isize) as usize;
    (lo, hi.max(lo))
}

pub(crate) fn conv_forward(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let k = g.kernel;
    for oc in 0..g.out_ch {
        let w_oc = oc * g.in_ch * k * k;
        let out_oc = oc * g.oh * g.ow;
        for oy in 0..g.oh {
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let (ky_lo, ky_hi) = tap_range(iy0, k, g.h);
            for ox in 0..g.ow {
                let ix0 = (ox * g.stride) as isize - g.pad as isize;
                let (kx_lo, kx_hi) = tap_range(ix0, k, g.w);
                let width = kx_hi - kx_lo;
                let mut acc = f64::from(b[oc]);
                for ic in 0..g.in_ch {
                    let x_ic = ic * g.h * g.w;
                    let w_ic = w_oc + ic * k * k;
                    for ky in ky_lo..ky_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        let x_base = x_ic + iy * g.w + (ix0 + kx_lo as isize) as usize;
                        let w_base = w_ic + ky * k + kx_lo;
                        for (xv, wv) in x[x_base..x_base + width]
                            .iter()
                            .zip(&w[w_base..w_base + width])
                        {
                            acc += f64::from(*xv) * f64::from(*wv);
                        }
                    }
                }
                out[out_oc + oy * g.ow + ox] = acc as f32;
            }
        }
    }
}

/// d(loss)/d(input) of a convolution (transposed convolution of `dy`).
pub(crate) fn conv_dx(w: &[f32], dy: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let k = g.kernel;
    let mut acc = vec![0.0f64; dx.len()];
    for oc in 0..g.out_ch {
        let w_oc = oc * g.in_ch * k * k;
        let dy_oc = oc * g.oh * g.ow;
        for oy in 0..g.oh {
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let (ky_lo, ky_hi) = tap_range(iy0, k, g.h);
            for ox in 0..g.ow {
                let dyv = f64::from(dy[dy_oc + oy * g.ow + ox]);
                if dyv == 0.0 {
                    continue;
                }
                let ix0 = (ox * g.stride) as isize - g.pad as isize;
                let (kx_lo, kx_hi) = tap_range(ix0, k, g.w);
                let width = kx_hi - kx_lo;
                for ic in 0..g.in_ch {
                    let x_ic = ic * g.h * g.w;
                    let w_ic = w_oc + ic * k * k;
                    for ky in ky_lo..ky_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        let x_base = x_ic + iy * g.w + (ix0 + kx_lo as isize) as usize;
                        let w_base = w_ic + ky * k + kx_lo;
                        for (a, wv) in acc[x_base..x_base + width]
                            .iter_mut()
                            .zip(&w[w_base..w_base + width])
                        {
                            *a += f64::from(*wv) * dyv;
                        }
                    }
                }
            }
        }
    }
    for (d, a) in dx.iter_mut().zip(acc) {
        *d = a as f32;
    }
}

/// Parameter gradients of a convolution.
pub(crate) fn conv_dw(x: &[f32], dy: &[f32], g: &ConvGeom, dw: &mut [f32], db: &mut [f32]) {
    let k = g.kernel;
    let mut w_acc = vec![0.0f64; dw.len()];
    for oc in 0..g.out_ch {
        let w_oc = oc * g.in_ch * k * k;
        let dy_oc = oc * g.oh * g.ow;
        let mut b_acc = 0.0f64;
        for oy in 0..g.oh {
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let (ky_lo, ky_hi) = tap_range(iy0, k, g.h);
            for ox in 0..g.ow {
                let dyv = f64::from(dy[dy_oc + oy * g.ow + ox]);
                b_acc += dyv;
                if dyv == 0.0 {
                    continue;
                }
                let ix0 = (ox * g.stride) as isize - g.pad as isize;
                let (kx_lo, kx_hi) = tap_range(ix0, k, g.w);
                let width = kx_hi - kx_lo;
                for ic in 0..g.in_ch {
                    let x_ic = ic * g.h * g.w;
                    let w_ic = w_oc + ic * k * k;
                    for ky in ky_lo..ky_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        let x_base = x_ic + iy * g.w + (ix0 + kx_lo as isize) as usize;
                        let w_base = w_ic + ky * k + kx_lo;
                        for (a, xv) in w_acc[w_base..w_base + width]
                            .iter_mut()
                            .zip(&x[x_base..x_base + width])
                        {
                            *a += f64::from(*xv) * dyv;
                        }
                    }
                }
            }
        }
        db[oc] = b_acc as f32;
    }
    for (d, a) in dw.iter_mut().zip(w_acc) {
        *d = a as f32;
    }
}

pub(crate) fn relu_forward(x: &[f32], out: &mut [f32]) {
    for (o, v) in out.iter_mut().zip(x.iter()) {
        *o = v.max(0.0);
    }
}

/// ReLU gradient; the derivative at exactly zero is zero.
pub(crate) fn relu_dx(x: &[f32], dy: &[f32], dx: &mut [f32]) {
    for ((d, xv), dyv) in dx.iter_mut().zip(x.iter()).zip(dy.iter()) {
        *d = if *xv > 0.0 { *dyv } else { 0.0 };
    }
}

pub(crate) fn avgpool_forward(x: &[f32], g: &PoolGeom, out: &mut [f32]) {
    let count = (g.kernel * g.kernel) as f64;
    for c in 0..g.ch {
        let x_c = c * g.h * g.w;
        let out_c = c * g.oh * g.ow;
        for oy in 0..g.oh {
            let iy0 = oy * g.stride;
            for ox in 0..g.ow {
                let ix0 = ox * g.stride;
                let mut acc = 0.0f64;
                for ky in 0..g.kernel {
                    let row = x_c + (iy0 + ky) * g.w + ix0;
                    for kx in 0..g.kernel {
                        acc += f64::from(x[row + kx]);
                    }
                }
                out[out_c + oy * g.ow + ox] = (acc / count) as f32;
            }
        }
    }
}

pub(crate) fn avgpool_dx(dy: &[f32], g: &PoolGeom, dx: &mut [f32]) {
    let count = (g.kernel * g.kernel) as f64;
    let mut acc = vec![0.0f64; dx.len()];
    for c in 0..g.ch {
        let x_c = c * g.h * g.w;
        let dy_c = c * g.oh * g.ow;
        for oy in 0..g.oh {
            let iy0 = oy * g.stride;
            for ox in 0..g.ow {
                let share = f64::from(dy[dy_c + oy * g.ow + ox]) / count;
                for ky in 0..g.kernel {
                    let row = x_c + (iy0 + ky) * g.w + ox * g.stride;
                    for kx in 0..g.kernel {
                        acc[row + kx] += share;
                    }
                }
            }
        }
    }
    for (d, a) in dx.iter_mut().zip(acc) {
        *d = a as f32;
    }
}

/// Index of the window maximum; ties go to the first maximal element in
/// row-major order.
pub(crate) fn maxpool_argmax(x: &[f32], g: &PoolGeom, c: usize, oy: usize, ox: usize) -> usize {
    let x_c = c * g.h * g.w;
    let iy0 = oy * g.stride;
    let ix0 = ox * g.stride;
    let mut best_idx = x_c + iy0 * g.w + ix0;
    let mut best = x[best_idx];
    for ky in 0..g.kernel {
        let row = x_c + (iy0 + ky) * g.w + ix0;
        for kx in 0..g.kernel {
            let v = x[row + kx];
            if v > best {
                best = v;
                best_idx = row + kx;
            }
        }
    }
    best_idx
}

pub(crate) fn maxpool_forward(x: &[f32], g: &PoolGeom, out: &mut [f32]) {
    for c in 0..g.ch {
        let out_c = c * g.oh * g.ow;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                out[out_c + oy * g.ow + ox] = x[maxpool_argmax(x, g, c, oy, ox)];
            }
        }
    }
}

/// Routes each upstream value to its window's winning element.
pub(crate) fn maxpool_dx(x: &[f32], dy: &[f32], g: &PoolGeom, dx: &mut [f32]) {
    let mut acc = vec![0.0f64; dx.len()];
    for c in 0..g.ch {
        let dy_c = c * g.oh * g.ow;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                acc[maxpool_argmax(x, g, c, oy, ox)] += f64::from(dy[dy_c + oy * g.ow + ox]);
            }
        }
    }
    for (d, a) in dx.iter_mut().zip(acc) {
        *d = a as f32;
    }
}
