use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct GroupGeom {
    pub n: usize,
    pub c: usize,
    pub spatial: usize,
    pub groups: usize,
}

impl GroupGeom {
    pub fn new(x: &[usize], gamma: &[usize], beta: &[usize], groups: usize, eps: f64) -> Result<Self> {
        const OP: &str = "group_norm";
        if x.len() < 2 {
            return Err(Error::Rank { op: OP, expected: 4, actual: x.len() });
        }
        let c = x[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "group_norm: {c} channels are not divisible into {groups} groups"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("group_norm: eps must be positive, got {eps}")));
        }
        for p in [gamma, beta] {
            if p.len() != 1 {
                return Err(Error::Rank { op: OP, expected: 1, actual: p.len() });
            }
            if p[0] != c {
                return Err(Error::Dim { op: OP, axis: 0, expected: c, actual: p[0] });
            }
        }
        Ok(GroupGeom {
            n: x[0],
            c,
            spatial: x[2..].iter().product(),
            groups,
        })
    }

    fn group_len(&self) -> usize {
        self.c / self.groups * self.spatial
    }
}

/// Returns (output, per-(sample, group) mean, per-(sample, group) 1/std).
pub(crate) fn forward_raw(
    geom: &GroupGeom,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = geom.group_len();
    let cpg = geom.c / geom.groups;
    let mut out = vec![0.0; x.len()];
    let mut means = Vec::with_capacity(geom.n * geom.groups);
    let mut rstds = Vec::with_capacity(geom.n * geom.groups);
    for ng in 0..geom.n * geom.groups {
        let xs = &x[ng * len..][..len];
        let mean = xs.iter().sum::<f64>() / len as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        means.push(mean);
        rstds.push(rstd);
        let g = ng % geom.groups;
        for cl in 0..cpg {
            let c = g * cpg + cl;
            let off = ng * len + cl * geom.spatial;
            for (o, &v) in out[off..off + geom.spatial].iter_mut().zip(&x[off..off + geom.spatial]) {
                *o = (v - mean) * rstd * gamma[c] + beta[c];
            }
        }
    }
    (out, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_raw(
    geom: &GroupGeom,
    x: &[f64],
    gamma: &[f64],
    means: &[f64],
    rstds: &[f64],
    gout: &[f64],
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let len = geom.group_len();
    let cpg = geom.c / geom.groups;
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut ggamma = need[1].then(|| vec![0.0; geom.c]);
    let mut gbeta = need[2].then(|| vec![0.0; geom.c]);
    for ng in 0..geom.n * geom.groups {
        let (mean, rstd) = (means[ng], rstds[ng]);
        let g = ng % geom.groups;
        let mut sum_gxhat = 0.0;
        let mut sum_gxhat_xhat = 0.0;
        for cl in 0..cpg {
            let c = g * cpg + cl;
            let off = ng * len + cl * geom.spatial;
            let mut dg = 0.0;
            let mut db = 0.0;
            for i in off..off + geom.spatial {
                let xhat = (x[i] - mean) * rstd;
                dg += gout[i] * xhat;
                db += gout[i];
                let gxhat = gout[i] * gamma[c];
                sum_gxhat += gxhat;
                sum_gxhat_xhat += gxhat * xhat;
            }
            if let Some(gg) = ggamma.as_mut() {
                gg[c] += dg;
            }
            if let Some(gb) = gbeta.as_mut() {
                gb[c] += db;
            }
        }
        if let Some(gx) = gx.as_mut() {
            let mean_gxhat = sum_gxhat / len as f64;
            let mean_gxhat_xhat = sum_gxhat_xhat / len as f64;
            for cl in 0..cpg {
                let c = g * cpg + cl;
                let off = ng * len + cl * geom.spatial;
                for i in off..off + geom.spatial {
                    let xhat = (x[i] - mean) * rstd;
                    let gxhat = gout[i] * gamma[c];
                    gx[i] = rstd * (gxhat - mean_gxhat - xhat * mean_gxhat_xhat);
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// Group normalization on plain tensors, without gradient tracking.
pub fn group_norm_forward(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let geom = GroupGeom::new(x.shape(), gamma.shape(), beta.shape(), groups, eps)?;
    let (out, _, _) = forward_raw(&geom, x.data(), gamma.data(), beta.data(), eps);
    Tensor::new(x.shape().to_vec(), out)
}
