//! Segmentation head over the per-layer feature maps.
//!
//! Each feature map goes through its own per-pixel MLP, is upsampled to the
//! image resolution, and the results are concatenated. A gated bottleneck
//! block, a 3x3 convolution and a final per-pixel MLP reduce them to one
//! logit channel.

use crate::backbone::Pointwise;
use crate::config::{NetworkConfig, UpsamplerKind};
use crate::error::{Error, Result};
use crate::gbc::GbcBlock;
use crate::tensor::{ConvSpec, Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Resolution restoration used by the head.
pub trait Upsampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn upsample(&self, g: &mut Graph, x: Var, scale: usize) -> Result<Var>;
}

pub struct Bilinear;

impl Upsampler for Bilinear {
    fn name(&self) -> &'static str {
        "bilinear"
    }

    fn upsample(&self, g: &mut Graph, x: Var, scale: usize) -> Result<Var> {
        if scale == 1 {
            return Ok(x);
        }
        g.bilinear_upsample(x, scale)
    }
}

pub fn upsampler(kind: UpsamplerKind) -> Box<dyn Upsampler> {
    match kind {
        UpsamplerKind::Bilinear => Box::new(Bilinear),
    }
}

/// Two 1x1 convolutions with a ReLU between them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMlp {
    pub fc1: Pointwise,
    pub fc2: Pointwise,
}

impl PixelMlp {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, cin: usize, hidden: usize, cout: usize) -> Result<Self> {
        Ok(PixelMlp {
            fc1: Pointwise::init(store, init, &format!("{prefix}.fc1"), cin, hidden)?,
            fc2: Pointwise::init(store, init, &format!("{prefix}.fc2"), hidden, cout)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.fc2.forward(g, store, h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MfsHead {
    pub mlps: Vec<PixelMlp>,
    pub fuse: GbcBlock,
    /// `[nC, nC, 3, 3]`
    pub conv_w: ParamId,
    /// `[nC]`
    pub conv_b: ParamId,
    pub out: PixelMlp,
    pub upsampler: UpsamplerKind,
}

impl MfsHead {
    pub fn init(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        let nc = c * cfg.num_layers;
        let mlps = (0..cfg.num_layers)
            .map(|i| PixelMlp::init(store, init, &format!("head.mlp{i}"), c, c, c))
            .collect::<Result<_>>()?;
        let fuse = GbcBlock::init(store, init, "head.gbc", nc, cfg.rank(nc), cfg.gbc_kernel, cfg.groups(nc))?;
        Ok(MfsHead {
            mlps,
            fuse,
            conv_w: store.add("head.conv.w", init.fan_in([nc, nc, 3, 3], nc * 9))?,
            conv_b: store.add("head.conv.b", Tensor::zeros([nc]))?,
            out: PixelMlp::init(store, init, "head.out", nc, c, 1)?,
            upsampler: cfg.upsampler,
        })
    }

    /// Logits `[N, 1, H, W]` from `features`, each `[N, C, h, w]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: &[Var], out_hw: (usize, usize)) -> Result<Var> {
        if features.len() != self.mlps.len() {
            return Err(Error::Config(format!(
                "head expects {} feature maps, got {}",
                self.mlps.len(),
                features.len()
            )));
        }
        let s = g.shape(features[0]).to_vec();
        if features.iter().any(|&f| g.shape(f) != s.as_slice()) {
            return Err(Error::Config("feature maps must share one shape".into()));
        }
        let (h, w) = (s[2], s[3]);
        if out_hw.0 % h != 0 || out_hw.1 % w != 0 || out_hw.0 / h != out_hw.1 / w {
            return Err(Error::Config(format!(
                "output size {}x{} is not an integer multiple of feature size {h}x{w}",
                out_hw.0, out_hw.1
            )));
        }
        let scale = out_hw.0 / h;
        let up = upsampler(self.upsampler);
        let mut levels = Vec::with_capacity(features.len());
        for (mlp, &f) in self.mlps.iter().zip(features) {
            let m = mlp.forward(g, store, f)?;
            levels.push(up.upsample(g, m, scale)?);
        }
        let cat = g.concat(&levels, 1)?;
        let fused = self.fuse.forward(g, store, cat)?;
        let w = g.param(store, self.conv_w);
        let b = g.param(store, self.conv_b);
        let conv = g.conv2d(fused, w, Some(b), ConvSpec::same(1))?;
        self.out.forward(g, store, conv)
    }
}

/// Binary mask `prob > threshold`.
pub fn binarize(prob: &Tensor, threshold: f64) -> Vec<bool> {
    prob.data().iter().map(|&p| p > threshold).collect()
}
