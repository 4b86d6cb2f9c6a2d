//! Strided 2-D convolution and its transpose via im2col / col2im and GEMM.
//!
//! Batch elements are processed in parallel; per-sample weight gradients are
//! reduced in sample order so results do not depend on scheduling.

use rayon::prelude::*;

use super::tensor::{gemm, Tensor4};
use crate::error::{Error, Result};

/// Square-kernel geometry shared by both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Number of weights; conv weights are `(out, in, k, k)`, transposed-conv
    /// weights `(in, out, k, k)`.
    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }

    /// Spatial output size of the forward convolution.
    pub fn conv_out(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Spatial output size of the transposed convolution.
    pub fn tconv_out(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel).checked_sub(2 * self.pad).filter(|&v| v > 0)
    }
}

/// Unrolls `(c, h, w)` patches into a `(c*k*k) x (oh*ow)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, cols: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ch * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, x: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ch * h + iy as usize) * w..][..w];
                    for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_channels(x: &Tensor4, expected: usize, what: &str) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::Shape(format!(
            "{what} expects {expected} input channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

fn check_weights(w: &[f64], b: &[f64], g: &ConvGeom) -> Result<()> {
    if w.len() != g.weight_len() || b.len() != g.out_channels {
        return Err(Error::Shape(format!(
            "weights {} / bias {} do not match geometry {g:?}",
            w.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Sums per-sample gradient buffers in sample order.
fn reduce(parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>, wl: usize, bl: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; wl];
    let mut db = vec![0.0; bl];
    let mut dx = Vec::with_capacity(parts.len());
    for (x, w, b) in parts {
        dw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
        db.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
        dx.push(x);
    }
    (dx, dw, db)
}

/// Cross-correlation `y = w (*) x + b` with weights `(out, in, k, k)`.
pub fn conv2d_forward(x: &Tensor4, w: &[f64], b: &[f64], g: &ConvGeom) -> Result<Tensor4> {
    check_channels(x, g.in_channels, "conv2d")?;
    check_weights(w, b, g)?;
    let [n, c, h, wd] = x.dims;
    let (oh, ow) = match (g.conv_out(h), g.conv_out(wd)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape(format!("conv2d output empty for input {:?}", x.dims))),
    };
    let kk = c * g.kernel * g.kernel;
    let p = oh * ow;
    let co = g.out_channels;
    let samples: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cols = vec![0.0; kk * p];
            im2col(x.sample(i), c, h, wd, g, oh, ow, &mut cols);
            let mut out = vec![0.0; co * p];
            for (o, row) in out.chunks_mut(p).enumerate() {
                row.fill(b[o]);
            }
            gemm(co, kk, p, w, false, &cols, false, 1.0, &mut out);
            out
        })
        .collect();
    Tensor4::from_samples(co, oh, ow, samples)
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor4, w: &[f64], g: &ConvGeom, dy: &Tensor4) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let [n, c, h, wd] = x.dims;
    let (oh, ow) = (dy.height(), dy.width());
    if dy.batch() != n || dy.channels() != g.out_channels || g.conv_out(h) != Some(oh) || g.conv_out(wd) != Some(ow) {
        return Err(Error::Shape(format!("conv2d gradient {:?} does not match input {:?}", dy.dims, x.dims)));
    }
    let kk = c * g.kernel * g.kernel;
    let p = oh * ow;
    let co = g.out_channels;
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cols = vec![0.0; kk * p];
            im2col(x.sample(i), c, h, wd, g, oh, ow, &mut cols);
            let d = dy.sample(i);
            let mut dw = vec![0.0; co * kk];
            gemm(co, p, kk, d, false, &cols, true, 0.0, &mut dw);
            let db: Vec<f64> = d.chunks(p).map(|r| r.iter().sum()).collect();
            let mut dcols = vec![0.0; kk * p];
            gemm(kk, co, p, w, true, d, false, 0.0, &mut dcols);
            let mut dx = vec![0.0; c * h * wd];
            col2im(&dcols, c, h, wd, g, oh, ow, &mut dx);
            (dx, dw, db)
        })
        .collect();
    let (dx, dw, db) = reduce(parts, g.weight_len(), co);
    Ok((Tensor4::from_samples(c, h, wd, dx)?, dw, db))
}

/// Transposed convolution (the adjoint of [`conv2d_forward`] plus bias) with
/// weights `(in, out, k, k)`.
pub fn tconv2d_forward(x: &Tensor4, w: &[f64], b: &[f64], g: &ConvGeom) -> Result<Tensor4> {
    check_channels(x, g.in_channels, "tconv2d")?;
    check_weights(w, b, g)?;
    let [n, ci, h, wd] = x.dims;
    let (oh, ow) = match (g.tconv_out(h), g.tconv_out(wd)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape(format!("tconv2d output empty for input {:?}", x.dims))),
    };
    let co = g.out_channels;
    let kk = co * g.kernel * g.kernel;
    let p = h * wd;
    let samples: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cols = vec![0.0; kk * p];
            gemm(kk, ci, p, w, true, x.sample(i), false, 0.0, &mut cols);
            let mut out = vec![0.0; co * oh * ow];
            col2im(&cols, co, oh, ow, g, h, wd, &mut out);
            for (o, plane) in out.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[o]);
            }
            out
        })
        .collect();
    Tensor4::from_samples(co, oh, ow, samples)
}

/// Gradients of [`tconv2d_forward`]: `(dx, dw, db)`.
pub fn tconv2d_backward(x: &Tensor4, w: &[f64], g: &ConvGeom, dy: &Tensor4) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let [n, ci, h, wd] = x.dims;
    let (oh, ow) = (dy.height(), dy.width());
    if dy.batch() != n || dy.channels() != g.out_channels || g.tconv_out(h) != Some(oh) || g.tconv_out(wd) != Some(ow) {
        return Err(Error::Shape(format!("tconv2d gradient {:?} does not match input {:?}", dy.dims, x.dims)));
    }
    let co = g.out_channels;
    let kk = co * g.kernel * g.kernel;
    let p = h * wd;
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = dy.sample(i);
            let mut dcols = vec![0.0; kk * p];
            im2col(d, co, oh, ow, g, h, wd, &mut dcols);
            let mut dx = vec![0.0; ci * p];
            gemm(ci, kk, p, w, false, &dcols, false, 0.0, &mut dx);
            let mut dw = vec![0.0; ci * kk];
            gemm(ci, p, kk, x.sample(i), false, &dcols, true, 0.0, &mut dw);
            let db: Vec<f64> = d.chunks(oh * ow).map(|r| r.iter().sum()).collect();
            (dx, dw, db)
        })
        .collect();
    let (dx, dw, db) = reduce(parts, g.weight_len(), co);
    Ok((Tensor4::from_samples(ci, h, wd, dx)?, dw, db))
}
