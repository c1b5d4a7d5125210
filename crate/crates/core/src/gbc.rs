//! Gated bottleneck convolution.
//!
//! A [`BottConv`] factors a `k x k` convolution into a pointwise projection
//! into `r` channels, a depthwise `k x k` convolution, and a pointwise
//! projection back out. A [`GbcBlock`] wires four of them as
//!
//! ```text
//! g1  = relu(gn1(b1(x)))
//! x1  = relu(gn2(b2(g1)))
//! g2  = relu(gn3(b3(x)))
//! y   = relu(gn4(b4(x1 * g2)))
//! out = y + x
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

pub const GN_EPS: f64 = 1e-5;

/// Default rank: a quarter of the channel count, at least one.
pub fn default_rank(channels: usize) -> usize {
    (channels / 4).max(1)
}

/// Group count for `channels`: `requested`, or `channels` when smaller.
pub fn norm_groups(channels: usize, requested: usize) -> usize {
    requested.min(channels).max(1)
}

/// Bias-free weight count of a bottleneck convolution.
pub fn bottconv_weight_count(cin: usize, cout: usize, rank: usize, kernel: usize) -> usize {
    rank * cin + rank * kernel * kernel + cout * rank
}

/// Bias count of a bottleneck convolution (the two pointwise stages).
pub fn bottconv_bias_count(cout: usize, rank: usize) -> usize {
    rank + cout
}

/// Weight count of the full `k x k` convolution being approximated.
pub fn full_conv_weight_count(cin: usize, cout: usize, kernel: usize) -> usize {
    cout * cin * kernel * kernel
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottConv {
    /// `[r, Cin, 1, 1]`
    pub pw_in: ParamId,
    /// `[r]`
    pub pw_in_bias: ParamId,
    /// `[r, 1, k, k]`
    pub dw: ParamId,
    /// `[Cout, r, 1, 1]`
    pub pw_out: ParamId,
    /// `[Cout]`
    pub pw_out_bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub rank: usize,
    pub kernel: usize,
}

fn validate_bottconv(cin: usize, cout: usize, rank: usize, kernel: usize) -> Result<()> {
    if rank == 0 || rank > cin.min(cout) {
        return Err(Error::Config(format!(
            "bottleneck rank {rank} must lie in 1..={} for {cin} -> {cout} channels",
            cin.min(cout)
        )));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!("bottleneck kernel size must be odd, got {kernel}")));
    }
    Ok(())
}

fn lookup_id(store: &ParamStore, name: String) -> Result<ParamId> {
    store
        .id(&name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

impl BottConv {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        cin: usize,
        cout: usize,
        rank: usize,
        kernel: usize,
    ) -> Result<Self> {
        validate_bottconv(cin, cout, rank, kernel)?;
        Ok(BottConv {
            pw_in: store.add(format!("{prefix}.pw_in"), init.fan_in([rank, cin, 1, 1], cin))?,
            pw_in_bias: store.add(format!("{prefix}.pw_in_bias"), Tensor::zeros([rank]))?,
            dw: store.add(format!("{prefix}.dw"), init.fan_in([rank, 1, kernel, kernel], kernel * kernel))?,
            pw_out: store.add(format!("{prefix}.pw_out"), init.fan_in([cout, rank, 1, 1], rank))?,
            pw_out_bias: store.add(format!("{prefix}.pw_out_bias"), Tensor::zeros([cout]))?,
            cin,
            cout,
            rank,
            kernel,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let pw_in = lookup_id(store, format!("{prefix}.pw_in"))?;
        let dw = lookup_id(store, format!("{prefix}.dw"))?;
        let pw_out = lookup_id(store, format!("{prefix}.pw_out"))?;
        let (si, sd, so) = (store.get(pw_in).shape(), store.get(dw).shape(), store.get(pw_out).shape());
        if si.len() != 4 || sd.len() != 4 || so.len() != 4 {
            return Err(Error::Checkpoint(format!("{prefix}: bottleneck weights must be rank 4")));
        }
        let (rank, cin, kernel, cout) = (si[0], si[1], sd[2], so[0]);
        validate_bottconv(cin, cout, rank, kernel)?;
        Ok(BottConv {
            pw_in,
            pw_in_bias: lookup_id(store, format!("{prefix}.pw_in_bias"))?,
            dw,
            pw_out,
            pw_out_bias: lookup_id(store, format!("{prefix}.pw_out_bias"))?,
            cin,
            cout,
            rank,
            kernel,
        })
    }

    pub fn weight_count(&self) -> usize {
        bottconv_weight_count(self.cin, self.cout, self.rank, self.kernel)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.cin {
            return Err(Error::Config(format!("bottleneck expects {} input channels, got {c}", self.cin)));
        }
        let w = g.param(store, self.pw_in);
        let b = g.param(store, self.pw_in_bias);
        let h = g.pointwise_conv2d(x, w, Some(b))?;
        let w = g.param(store, self.dw);
        let h = g.depthwise_conv2d(h, w, None, 1, self.kernel / 2)?;
        let w = g.param(store, self.pw_out);
        let b = g.param(store, self.pw_out_bias);
        g.pointwise_conv2d(h, w, Some(b))
    }
}

/// Affine parameters of one group normalization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(NormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones([channels]))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros([channels]))?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(NormParams {
            gamma: lookup_id(store, format!("{prefix}.gamma"))?,
            beta: lookup_id(store, format!("{prefix}.beta"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, groups: usize) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, groups, GN_EPS)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GbcBlock {
    pub bott: [BottConv; 4],
    pub norm: [NormParams; 4],
    pub channels: usize,
    pub groups: usize,
}

impl GbcBlock {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        channels: usize,
        rank: usize,
        kernel: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "{channels} channels are not divisible into {groups} norm groups"
            )));
        }
        let mut bott = Vec::with_capacity(4);
        let mut norm = Vec::with_capacity(4);
        for i in 1..=4 {
            bott.push(BottConv::init(store, init, &format!("{prefix}.bott{i}"), channels, channels, rank, kernel)?);
            norm.push(NormParams::init(store, &format!("{prefix}.norm{i}"), channels)?);
        }
        Ok(GbcBlock {
            bott: bott.try_into().expect("four bottlenecks"),
            norm: norm.try_into().expect("four norms"),
            channels,
            groups,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, groups: usize) -> Result<Self> {
        let mut bott = Vec::with_capacity(4);
        let mut norm = Vec::with_capacity(4);
        for i in 1..=4 {
            bott.push(BottConv::lookup(store, &format!("{prefix}.bott{i}"))?);
            norm.push(NormParams::lookup(store, &format!("{prefix}.norm{i}"))?);
        }
        let channels = bott[0].cin;
        Ok(GbcBlock {
            bott: bott.try_into().expect("four bottlenecks"),
            norm: norm.try_into().expect("four norms"),
            channels,
            groups,
        })
    }

    fn stage(&self, g: &mut Graph, store: &ParamStore, i: usize, x: Var) -> Result<Var> {
        let h = self.bott[i].forward(g, store, x)?;
        let h = self.norm[i].forward(g, store, h, self.groups)?;
        g.relu(h)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 {
            return Err(Error::Rank { op: "gbc", expected: 4, actual: shape.len() });
        }
        if shape[1] != self.channels {
            return Err(Error::Config(format!(
                "gated bottleneck block expects {} channels, got {}",
                self.channels, shape[1]
            )));
        }
        let g1 = self.stage(g, store, 0, x)?;
        let x1 = self.stage(g, store, 1, g1)?;
        let g2 = self.stage(g, store, 2, x)?;
        let m = g.mul(x1, g2)?;
        let y = self.stage(g, store, 3, m)?;
        g.add(y, x)
    }
}
