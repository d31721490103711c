//! Forward and backward kernels for the tape ops.
//!
//! All loops are plain sequential scatter/gather over row-major buffers so a
//! given input always produces bitwise-identical output. Convolution is
//! cross-correlation: kernels are applied unflipped.

use crate::error::{Error, Result};

/// Resolved geometry for one conv2d application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn resolve(
        in_shape: &[usize],
        k_shape: &[usize],
        bias_len: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (in_shape, k_shape) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {in_shape:?} kernel {k_shape:?}"),
            });
        };
        if kcin != cin || bias_len != cout || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel cin {kcin} vs input cin {cin}, bias {bias_len} vs cout {cout}, stride {stride}"
                ),
            });
        }
        if kh > h + 2 * pad || kw > w + 2 * pad || kh == 0 || kw == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} exceeds padded input {h}x{w} pad {pad}"),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { h, w, cin, kh, kw, cout, stride, pad, oh, ow })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.oh, self.ow, self.cout]
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    let mut acc = vec![0.0; g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            acc.copy_from_slice(bias);
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * g.w + ix as usize) * g.cin;
                    let k_base = (ky * g.kw + kx) * g.cin * g.cout;
                    for ic in 0..g.cin {
                        let a = input[in_base + ic];
                        let row = &kernel[k_base + ic * g.cout..k_base + (ic + 1) * g.cout];
                        for (dst, kv) in acc.iter_mut().zip(row) {
                            *dst += a * kv;
                        }
                    }
                }
            }
            out[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout].copy_from_slice(&acc);
        }
    }
    out
}

pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    up: &[f64],
    mut d_input: Option<&mut [f64]>,
    mut d_kernel: Option<&mut [f64]>,
    mut d_bias: Option<&mut [f64]>,
) {
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let u = &up[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            if let Some(db) = d_bias.as_deref_mut() {
                for (dst, uv) in db.iter_mut().zip(u) {
                    *dst += uv;
                }
            }
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * g.w + ix as usize) * g.cin;
                    let k_base = (ky * g.kw + kx) * g.cin * g.cout;
                    for ic in 0..g.cin {
                        let k_row = k_base + ic * g.cout;
                        if let Some(dk) = d_kernel.as_deref_mut() {
                            let a = input[in_base + ic];
                            for (dst, uv) in dk[k_row..k_row + g.cout].iter_mut().zip(u) {
                                *dst += a * uv;
                            }
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            let mut dot = 0.0;
                            for (kv, uv) in kernel[k_row..k_row + g.cout].iter().zip(u) {
                                dot += kv * uv;
                            }
                            di[in_base + ic] += dot;
                        }
                    }
                }
            }
        }
    }
}

pub fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
    let mut out = bias.to_vec();
    for (i, &a) in input.iter().enumerate() {
        let row = &weight[i * k..(i + 1) * k];
        for (dst, wv) in out.iter_mut().zip(row) {
            *dst += a * wv;
        }
    }
    out
}

pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    up: &[f64],
    k: usize,
    mut d_input: Option<&mut [f64]>,
    mut d_weight: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
) {
    if let Some(db) = d_bias {
        for (dst, uv) in db.iter_mut().zip(up) {
            *dst += uv;
        }
    }
    for (i, &a) in input.iter().enumerate() {
        let row = i * k..(i + 1) * k;
        if let Some(dw) = d_weight.as_deref_mut() {
            for (dst, uv) in dw[row.clone()].iter_mut().zip(up) {
                *dst += a * uv;
            }
        }
        if let Some(di) = d_input.as_deref_mut() {
            let mut dot = 0.0;
            for (wv, uv) in weight[row].iter().zip(up) {
                dot += wv * uv;
            }
            di[i] += dot;
        }
    }
}

/// Largest f64 strictly below 1.0; sigmoid outputs are clamped into
/// `[MIN_POSITIVE, SIGMOID_MAX]` so they stay strictly inside (0, 1).
pub const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

/// Max pooling over `window x window` patches. Returns the pooled buffer and
/// the flat input index of each selected maximum; ties keep the first
/// occurrence in row-major patch order.
pub fn max_pool_forward(
    h: usize,
    w: usize,
    c: usize,
    window: usize,
    stride: usize,
    input: &[f64],
) -> Result<(usize, usize, Vec<f64>, Vec<u32>)> {
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d",
            detail: format!("window {window} stride {stride} on {h}x{w}"),
        });
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0.0; oh * ow * c];
    let mut arg = vec![0u32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    Ok((oh, ow, out, arg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastKind {
    /// `[c]` or `[1, 1, c]` replicated to every spatial cell.
    ChannelVector,
    /// `[h, w, 1]` replicated across all channels.
    SpatialMap,
    /// `[1]` replicated over the whole grid.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BroadcastSpec {
    pub kind: BroadcastKind,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

pub fn broadcast_forward(spec: &BroadcastSpec, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.h * spec.w * spec.c];
    match spec.kind {
        BroadcastKind::ChannelVector => {
            for cell in out.chunks_exact_mut(spec.c) {
                cell.copy_from_slice(src);
            }
        }
        BroadcastKind::SpatialMap => {
            for (cell, &v) in out.chunks_exact_mut(spec.c).zip(src) {
                cell.fill(v);
            }
        }
        BroadcastKind::Scalar => out.fill(src[0]),
    }
    out
}

/// Adjoint of [`broadcast_forward`]: sums the upstream gradient over every
/// replicated position, accumulating into `dst`.
pub fn broadcast_backward(spec: &BroadcastSpec, up: &[f64], dst: &mut [f64]) {
    match spec.kind {
        BroadcastKind::ChannelVector => {
            for cell in up.chunks_exact(spec.c) {
                for (d, &u) in dst.iter_mut().zip(cell) {
                    *d += u;
                }
            }
        }
        BroadcastKind::SpatialMap => {
            for (d, cell) in dst.iter_mut().zip(up.chunks_exact(spec.c)) {
                *d += cell.iter().sum::<f64>();
            }
        }
        BroadcastKind::Scalar => dst[0] += up.iter().sum::<f64>(),
    }
}

pub fn softmax_cross_entropy_forward(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() || logits.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    let loss = sum.ln() - (logits[label] - m);
    Ok((loss, probs))
}
