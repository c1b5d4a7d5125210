//! Grouped 2D cross-correlation. Dense groups go through im2col + GEMM,
//! pointwise convolutions skip the im2col copy, and depthwise convolutions
//! (one input and one output channel per group) use direct loops.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Stride, zero padding and channel grouping of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, single group, given padding.
    pub fn same(padding: usize) -> Self {
        ConvSpec::new(1, padding, 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], bias: Option<&[usize]>, spec: ConvSpec) -> Result<Self> {
        const OP: &str = "conv2d";
        if x.len() != 4 {
            return Err(Error::Rank { op: OP, expected: 4, actual: x.len() });
        }
        if w.len() != 4 {
            return Err(Error::Rank { op: OP, expected: 4, actual: w.len() });
        }
        if spec.stride == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        let groups = spec.groups;
        let (n, cin, h, wd) = (x[0], x[1], x[2], x[3]);
        let (cout, k) = (w[0], w[2]);
        if w[3] != k {
            return Err(Error::Dim { op: OP, axis: 3, expected: k, actual: w[3] });
        }
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Config(format!(
                "conv2d groups={groups} must divide input channels {cin} and output channels {cout}"
            )));
        }
        if w[1] != cin / groups {
            return Err(Error::Dim { op: OP, axis: 1, expected: cin / groups, actual: w[1] });
        }
        let (hp, wp) = (h + 2 * spec.padding, wd + 2 * spec.padding);
        if hp < k {
            return Err(Error::Dim { op: OP, axis: 2, expected: k, actual: hp });
        }
        if wp < k {
            return Err(Error::Dim { op: OP, axis: 3, expected: k, actual: wp });
        }
        if let Some(b) = bias {
            if b.len() != 1 {
                return Err(Error::Rank { op: OP, expected: 1, actual: b.len() });
            }
            if b[0] != cout {
                return Err(Error::Dim { op: OP, axis: 0, expected: cout, actual: b[0] });
            }
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
            ho: (hp - k) / spec.stride + 1,
            wo: (wp - k) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
            groups,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Input rows `iy` touched by output row `oy` through kernel row `ki`,
    /// as the valid range of `oy`.
    fn valid_out_range(&self, ki: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // iy = oy*stride + ki - pad must lie in [0, in_len)
        let s = self.stride as isize;
        let off = ki as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((in_len as isize - 1 - off).div_euclid(s) + 1).clamp(0, out_len as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }
}

fn im2col(geom: &ConvGeom, x: &[f64], n: usize, c0: usize, col: &mut [f64]) {
    let (k, ho, wo) = (geom.k, geom.ho, geom.wo);
    let hw = geom.h * geom.w;
    col.fill(0.0);
    for c in 0..geom.cin_g() {
        let xc = &x[(n * geom.cin + c0 + c) * hw..][..hw];
        for ki in 0..k {
            let (oy0, oy1) = geom.valid_out_range(ki, geom.h, ho);
            for kj in 0..k {
                let (ox0, ox1) = geom.valid_out_range(kj, geom.w, wo);
                let row = &mut col[((c * k + ki) * k + kj) * ho * wo..][..ho * wo];
                for oy in oy0..oy1 {
                    let iy = oy * geom.stride + ki - geom.pad;
                    for ox in ox0..ox1 {
                        let ix = ox * geom.stride + kj - geom.pad;
                        row[oy * wo + ox] = xc[iy * geom.w + ix];
                    }
                }
            }
        }
    }
}

fn col2im_add(geom: &ConvGeom, col: &[f64], n: usize, c0: usize, gx: &mut [f64]) {
    let (k, ho, wo) = (geom.k, geom.ho, geom.wo);
    let hw = geom.h * geom.w;
    for c in 0..geom.cin_g() {
        let gxc = &mut gx[(n * geom.cin + c0 + c) * hw..][..hw];
        for ki in 0..k {
            let (oy0, oy1) = geom.valid_out_range(ki, geom.h, ho);
            for kj in 0..k {
                let (ox0, ox1) = geom.valid_out_range(kj, geom.w, wo);
                let row = &col[((c * k + ki) * k + kj) * ho * wo..][..ho * wo];
                for oy in oy0..oy1 {
                    let iy = oy * geom.stride + ki - geom.pad;
                    for ox in ox0..ox1 {
                        let ix = ox * geom.stride + kj - geom.pad;
                        gxc[iy * geom.w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn forward_raw(geom: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = (geom.ho, geom.wo);
    let plane = ho * wo;
    let mut out = vec![0.0; geom.n * geom.cout * plane];
    if geom.is_depthwise() {
        depthwise_forward(geom, x, w, &mut out);
    } else {
        let cin_g = geom.cin_g();
        let cout_g = geom.cout_g();
        let kk = geom.k * geom.k;
        let hw = geom.h * geom.w;
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; cin_g * kk * plane]
        };
        for n in 0..geom.n {
            for g in 0..geom.groups {
                let wg = &w[g * cout_g * cin_g * kk..][..cout_g * cin_g * kk];
                let og = &mut out[(n * geom.cout + g * cout_g) * plane..][..cout_g * plane];
                if geom.is_pointwise() {
                    let xg = &x[(n * geom.cin + g * cin_g) * hw..][..cin_g * hw];
                    gemm(cout_g, cin_g, plane, wg, false, xg, false, og, 0.0);
                } else {
                    im2col(geom, x, n, g * cin_g, &mut col);
                    gemm(cout_g, cin_g * kk, plane, wg, false, &col, false, og, 0.0);
                }
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..geom.n {
            for (c, &bc) in b.iter().enumerate() {
                for v in &mut out[(n * geom.cout + c) * plane..][..plane] {
                    *v += bc;
                }
            }
        }
    }
    out
}

fn depthwise_forward(geom: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (k, ho, wo) = (geom.k, geom.ho, geom.wo);
    let hw = geom.h * geom.w;
    for n in 0..geom.n {
        for c in 0..geom.cin {
            let xc = &x[(n * geom.cin + c) * hw..][..hw];
            let oc = &mut out[(n * geom.cout + c) * ho * wo..][..ho * wo];
            let wc = &w[c * k * k..][..k * k];
            for ki in 0..k {
                let (oy0, oy1) = geom.valid_out_range(ki, geom.h, ho);
                for kj in 0..k {
                    let wv = wc[ki * k + kj];
                    let (ox0, ox1) = geom.valid_out_range(kj, geom.w, wo);
                    for oy in oy0..oy1 {
                        let iy = oy * geom.stride + ki - geom.pad;
                        let xrow = &xc[iy * geom.w..][..geom.w];
                        let orow = &mut oc[oy * wo..][..wo];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * xrow[ox * geom.stride + kj - geom.pad];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub x: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

pub(crate) fn backward_raw(
    geom: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    need: [bool; 3],
) -> ConvGrads {
    let plane = geom.ho * geom.wo;
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; w.len()]);
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; geom.cout];
        for n in 0..geom.n {
            for (c, acc) in gb.iter_mut().enumerate() {
                *acc += gout[(n * geom.cout + c) * plane..][..plane].iter().sum::<f64>();
            }
        }
        gb
    });
    if geom.is_depthwise() {
        depthwise_backward(geom, x, w, gout, gx.as_deref_mut(), gw.as_deref_mut());
        return ConvGrads { x: gx, w: gw, b: gb };
    }
    let cin_g = geom.cin_g();
    let cout_g = geom.cout_g();
    let kk = geom.k * geom.k;
    let hw = geom.h * geom.w;
    let pointwise = geom.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; cin_g * kk * plane] };
    for n in 0..geom.n {
        for g in 0..geom.groups {
            let wg = &w[g * cout_g * cin_g * kk..][..cout_g * cin_g * kk];
            let go = &gout[(n * geom.cout + g * cout_g) * plane..][..cout_g * plane];
            if let Some(gw) = gw.as_deref_mut() {
                let gwg = &mut gw[g * cout_g * cin_g * kk..][..cout_g * cin_g * kk];
                if pointwise {
                    let xg = &x[(n * geom.cin + g * cin_g) * hw..][..cin_g * hw];
                    gemm(cout_g, plane, cin_g, go, false, xg, true, gwg, 1.0);
                } else {
                    im2col(geom, x, n, g * cin_g, &mut col);
                    gemm(cout_g, plane, cin_g * kk, go, false, &col, true, gwg, 1.0);
                }
            }
            if let Some(gx) = gx.as_deref_mut() {
                if pointwise {
                    let gxg = &mut gx[(n * geom.cin + g * cin_g) * hw..][..cin_g * hw];
                    gemm(cin_g, cout_g, plane, wg, true, go, false, gxg, 1.0);
                } else {
                    gemm(cin_g * kk, cout_g, plane, wg, true, go, false, &mut col, 0.0);
                    col2im_add(geom, &col, n, g * cin_g, gx);
                }
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

fn depthwise_backward(
    geom: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let (k, ho, wo) = (geom.k, geom.ho, geom.wo);
    let hw = geom.h * geom.w;
    for n in 0..geom.n {
        for c in 0..geom.cin {
            let xc = &x[(n * geom.cin + c) * hw..][..hw];
            let goc = &gout[(n * geom.cout + c) * ho * wo..][..ho * wo];
            for ki in 0..k {
                let (oy0, oy1) = geom.valid_out_range(ki, geom.h, ho);
                for kj in 0..k {
                    let widx = c * k * k + ki * k + kj;
                    let wv = w[widx];
                    let (ox0, ox1) = geom.valid_out_range(kj, geom.w, wo);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * geom.stride + ki - geom.pad;
                        let grow = &goc[oy * wo..][..wo];
                        if let Some(gx) = gx.as_deref_mut() {
                            let gxrow = &mut gx[(n * geom.cin + c) * hw + iy * geom.w..][..geom.w];
                            for ox in ox0..ox1 {
                                gxrow[ox * geom.stride + kj - geom.pad] += wv * grow[ox];
                            }
                        }
                        let xrow = &xc[iy * geom.w..][..geom.w];
                        for ox in ox0..ox1 {
                            acc += grow[ox] * xrow[ox * geom.stride + kj - geom.pad];
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Convolution on plain tensors, without gradient tracking.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let geom = ConvGeom::new(x.shape(), w.shape(), bias.map(|b| b.shape()), spec)?;
    let out = forward_raw(&geom, x.data(), w.data(), bias.map(|b| b.data()));
    Tensor::new(geom.out_shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let g = ConvGeom::new(&[1, 1, 7, 5], &[1, 1, 3, 3], None, ConvSpec::new(2, 1, 1)).unwrap();
        assert_eq!((g.ho, g.wo), ((7 + 2 - 3) / 2 + 1, (5 + 2 - 3) / 2 + 1));
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let err = ConvGeom::new(&[1, 2, 5, 5], &[3, 3, 3, 3], None, ConvSpec::same(1)).unwrap_err();
        assert!(matches!(err, Error::Dim { axis: 1, expected: 2, actual: 3, .. }), "{err}");
        let err = ConvGeom::new(&[1, 1, 2, 2], &[1, 1, 3, 3], None, ConvSpec::same(0)).unwrap_err();
        assert!(matches!(err, Error::Dim { axis: 2, .. }));
        let err = ConvGeom::new(&[1, 1, 5, 5], &[2, 1, 3, 3], Some(&[3]), ConvSpec::same(1)).unwrap_err();
        assert!(matches!(err, Error::Dim { axis: 0, expected: 2, actual: 3, .. }));
    }

    #[test]
    fn scalar_case() {
        let x = Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::new([1, 1, 1, 1], vec![-2.5]).unwrap();
        let y = conv2d_forward(&x, &w, None, ConvSpec::same(0)).unwrap();
        assert_eq!(y.data(), &[-7.5]);
    }

    #[test]
    fn identity_kernel_with_padding() {
        let x = Tensor::from_fn([1, 1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.set(&[0, 0, 1, 1], 1.0);
        let y = conv2d_forward(&x, &w, None, ConvSpec::same(1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn valid_range_with_stride_and_padding() {
        let g = ConvGeom::new(&[1, 1, 6, 6], &[1, 1, 3, 3], None, ConvSpec::new(2, 1, 1)).unwrap();
        // ki = 0 reads iy = 2*oy - 1, valid for oy >= 1
        assert_eq!(g.valid_out_range(0, 6, g.ho), (1, 3));
        assert_eq!(g.valid_out_range(2, 6, g.ho), (0, 3));
    }
}
