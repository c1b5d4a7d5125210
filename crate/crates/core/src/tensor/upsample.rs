//! Bilinear upsampling by an integer factor with half-pixel sample centers
//! (`align_corners = false`). Each output coordinate blends two source
//! coordinates per axis; the taps are shared by forward and backward.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn taps(in_len: usize, scale: usize) -> Vec<Tap> {
    (0..in_len * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

pub(crate) fn check(shape: &[usize], scale: usize) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::Rank { op: "bilinear_upsample", expected: 4, actual: shape.len() });
    }
    if scale == 0 {
        return Err(Error::Config("upsample scale must be at least 1".into()));
    }
    Ok(())
}

pub(crate) fn forward_raw(shape: &[usize], x: &[f64], scale: usize) -> Vec<f64> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let ty = taps(h, scale);
    let tx = taps(w, scale);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.lo * w..][..w];
            let r1 = &src[a.hi * w..][..w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.lo] * (1.0 - b.frac) + r0[b.hi] * b.frac;
                let bot = r1[b.lo] * (1.0 - b.frac) + r1[b.hi] * b.frac;
                dst[oy * wo + ox] = top * (1.0 - a.frac) + bot * a.frac;
            }
        }
    }
    out
}

pub(crate) fn backward_raw(shape: &[usize], gout: &[f64], scale: usize) -> Vec<f64> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let ty = taps(h, scale);
    let tx = taps(w, scale);
    let mut gx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &gout[p * ho * wo..][..ho * wo];
        let gs = &mut gx[p * h * w..][..h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                gs[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                gs[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                gs[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                gs[a.hi * w + b.hi] += v * a.frac * b.frac;
            }
        }
    }
    gx
}

/// Bilinear upsampling of an `[N, C, H, W]` tensor without gradient tracking.
pub fn bilinear_upsample_forward(x: &Tensor, scale: usize) -> Result<Tensor> {
    check(x.shape(), scale)?;
    let s = x.shape();
    Tensor::new([s[0], s[1], s[2] * scale, s[3] * scale], forward_raw(s, x.data(), scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_one_is_identity() {
        let x = Tensor::from_fn([2, 3, 4, 5], |i| (i as f64).sin());
        assert_eq!(bilinear_upsample_forward(&x, 1).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full([1, 1, 3, 2], 0.25);
        let y = bilinear_upsample_forward(&x, 4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 12, 8]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_pixel_ramp() {
        // source [0, 1] upsampled x2 -> sample points -0.25 (clamped), 0.25, 0.75, 1.25
        let x = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = bilinear_upsample_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
