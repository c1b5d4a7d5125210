//! Patch embedding and the stack of scan blocks.
//!
//! Tokens live in grid layout `[N, C, H/ps, W/ps]` between blocks. Each
//! block refines its input with a gated bottleneck convolution, normalizes
//! each refined token, runs the multi-path selective scan over the
//! normalized tokens, blends scan output and refined tokens with a
//! pixel-wise gate, projects and adds the block input back.

use std::sync::Arc;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::gbc::{GbcBlock, NormParams};
use crate::scan::ScanPathSet;
use crate::ssm::{ss2d, SsmParams};
use crate::tensor::{ConvSpec, Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Pixel-wise gated fusion: `s + sigmoid(W [scanned; s] + b) * (scanned - s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatedFusion {
    /// `[C, 2C, 1, 1]`
    pub w: ParamId,
    /// `[C]`
    pub b: ParamId,
}

impl GatedFusion {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, channels: usize) -> Result<Self> {
        Ok(GatedFusion {
            w: store.add(format!("{prefix}.w"), init.fan_in([channels, 2 * channels, 1, 1], 2 * channels))?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros([channels]))?,
        })
    }

    /// Both inputs in grid layout.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, scanned: Var, input: Var) -> Result<Var> {
        let cat = g.concat(&[scanned, input], 1)?;
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let logits = g.pointwise_conv2d(cat, w, Some(b))?;
        let gate = g.sigmoid(logits)?;
        let diff = g.sub(scanned, input)?;
        let mix = g.mul(gate, diff)?;
        g.add(input, mix)
    }
}

/// 1x1 convolution with bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pointwise {
    pub w: ParamId,
    pub b: ParamId,
}

impl Pointwise {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Pointwise {
            w: store.add(format!("{prefix}.w"), init.fan_in([cout, cin, 1, 1], cin))?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros([cout]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.pointwise_conv2d(x, w, Some(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SavssBlock {
    pub gbc: Option<GbcBlock>,
    /// Per-token normalization of the scan input.
    pub scan_norm: NormParams,
    /// One entry per scan path; entries repeat when parameters are shared.
    pub ssm: Vec<SsmParams>,
    pub fusion: GatedFusion,
    pub out_proj: Pointwise,
}

impl SavssBlock {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, cfg: &NetworkConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        let gbc = if cfg.block_gbc {
            Some(GbcBlock::init(store, init, &format!("{prefix}.gbc"), c, cfg.rank(c), cfg.gbc_kernel, cfg.groups(c))?)
        } else {
            None
        };
        let ssm = if cfg.share_path_params {
            let p = SsmParams::init(store, init, &format!("{prefix}.ssm"), c, cfg.state_dim)?;
            vec![p; cfg.num_paths]
        } else {
            (0..cfg.num_paths)
                .map(|k| SsmParams::init(store, init, &format!("{prefix}.ssm{k}"), c, cfg.state_dim))
                .collect::<Result<_>>()?
        };
        Ok(SavssBlock {
            gbc,
            scan_norm: NormParams::init(store, &format!("{prefix}.scan_norm"), c)?,
            ssm,
            fusion: GatedFusion::init(store, init, &format!("{prefix}.fusion"), c)?,
            out_proj: Pointwise::init(store, init, &format!("{prefix}.out"), c, c)?,
        })
    }

    /// `x: [N, C, h, w]` in grid layout, `paths` over the same `h x w` grid.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, paths: &ScanPathSet, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::Rank { op: "savss_block", expected: 4, actual: shape.len() });
        }
        if shape[2] != paths.height() || shape[3] != paths.width() {
            return Err(Error::Config(format!(
                "block input grid {}x{} does not match scan grid {}x{}",
                shape[2],
                shape[3],
                paths.height(),
                paths.width()
            )));
        }
        let s = match &self.gbc {
            Some(b) => b.forward(g, store, x)?,
            None => x,
        };
        let seq = grid_to_seq(g, s)?;
        let seq = token_norm(g, store, &self.scan_norm, seq)?;
        let scanned = ss2d(g, store, paths, &self.ssm, seq)?;
        let scanned = seq_to_grid(g, scanned, shape[2], shape[3])?;
        let fused = self.fusion.forward(g, store, scanned, s)?;
        let out = self.out_proj.forward(g, store, fused)?;
        g.add(x, out)
    }
}

/// Normalize every token of `seq: [N, L, C]` over its channels.
pub fn token_norm(g: &mut Graph, store: &ParamStore, norm: &NormParams, seq: Var) -> Result<Var> {
    let s = g.shape(seq).to_vec();
    let flat = g.reshape(seq, &[s[0] * s[1], s[2], 1, 1])?;
    let y = norm.forward(g, store, flat, 1)?;
    g.reshape(y, &s)
}

/// `[N, C, h, w]` to `[N, h*w, C]`.
pub fn grid_to_seq(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
    g.permute(flat, &[0, 2, 1])
}

/// `[N, h*w, C]` to `[N, C, h, w]`.
pub fn seq_to_grid(g: &mut Graph, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::Shape(format!("sequence {s:?} does not fit a {h}x{w} grid")));
    }
    let t = g.permute(x, &[0, 2, 1])?;
    g.reshape(t, &[s[0], s[2], h, w])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchEmbed {
    /// `[C, 3, ps, ps]`
    pub w: ParamId,
    /// `[C]`
    pub b: ParamId,
    /// `[L, C]`
    pub pos: ParamId,
    pub patch_size: usize,
}

impl PatchEmbed {
    pub fn init(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig) -> Result<Self> {
        let (c, ps) = (cfg.embed_dim, cfg.patch_size);
        let (gh, gw) = cfg.grid();
        Ok(PatchEmbed {
            w: store.add("embed.w", init.fan_in([c, 3, ps, ps], 3 * ps * ps))?,
            b: store.add("embed.b", Tensor::zeros([c]))?,
            pos: store.add("embed.pos", Tensor::zeros([gh * gw, c]))?,
            patch_size: ps,
        })
    }

    /// `image: [N, 3, H, W]` to tokens in grid layout `[N, C, H/ps, W/ps]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        check_image_shape(&s, self.patch_size)?;
        let (gh, gw) = (s[2] / self.patch_size, s[3] / self.patch_size);
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let tokens = g.conv2d(image, w, Some(b), ConvSpec::new(self.patch_size, 0, 1))?;
        let seq = grid_to_seq(g, tokens)?;
        let table = store.get(self.pos);
        let pos = if table.shape()[0] == gh * gw {
            g.param(store, self.pos)
        } else {
            let (th, tw) = table_grid(table.shape()[0], gh, gw)?;
            g.input(resize_table(table, th, tw, gh, gw))
        };
        let seq = g.add_bcast(seq, pos)?;
        seq_to_grid(g, seq, gh, gw)
    }
}

/// Validate an image batch shape against the patch size.
pub fn check_image_shape(s: &[usize], ps: usize) -> Result<()> {
    if s.len() != 4 {
        return Err(Error::Rank { op: "patch_embed", expected: 4, actual: s.len() });
    }
    if s[1] != 3 {
        return Err(Error::Dim { op: "patch_embed", axis: 1, expected: 3, actual: s[1] });
    }
    if s[2] % ps != 0 || s[3] % ps != 0 {
        return Err(Error::Input(format!(
            "image size {}x{} is not divisible by the patch size; height and width must be multiples of {ps}",
            s[2], s[3]
        )));
    }
    Ok(())
}

/// Recover the training grid of a position table with `rows` entries,
/// assuming the new grid's aspect ratio.
fn table_grid(rows: usize, gh: usize, gw: usize) -> Result<(usize, usize)> {
    for th in 1..=rows {
        if rows % th == 0 && th * gw == (rows / th) * gh {
            return Ok((th, rows / th));
        }
    }
    let side = (rows as f64).sqrt() as usize;
    if side * side == rows {
        return Ok((side, side));
    }
    Err(Error::Input(format!(
        "position table of {rows} entries cannot be resampled to a {gh}x{gw} grid"
    )))
}

/// Bilinear resampling (half-pixel centers) of a `[th*tw, C]` table to
/// `[gh*gw, C]`.
fn resize_table(table: &Tensor, th: usize, tw: usize, gh: usize, gw: usize) -> Tensor {
    let c = table.shape()[1];
    let coord = |o: usize, out: usize, inp: usize| {
        let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(inp - 1), src - lo as f64)
    };
    let mut out = Tensor::zeros([gh * gw, c]);
    for i in 0..gh {
        let (y0, y1, fy) = coord(i, gh, th);
        for j in 0..gw {
            let (x0, x1, fx) = coord(j, gw, tw);
            for ch in 0..c {
                let v = |y: usize, x: usize| table.data()[(y * tw + x) * c + ch];
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.data_mut()[(i * gw + j) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backbone {
    pub embed: PatchEmbed,
    pub stem: Option<GbcBlock>,
    pub blocks: Vec<SavssBlock>,
}

impl Backbone {
    pub fn init(store: &mut ParamStore, init: &mut Init, cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let embed = PatchEmbed::init(store, init, cfg)?;
        let stem = if cfg.stem_gbc {
            Some(GbcBlock::init(store, init, "stem", c, cfg.rank(c), cfg.gbc_kernel, cfg.groups(c))?)
        } else {
            None
        };
        let blocks = (0..cfg.num_layers)
            .map(|i| SavssBlock::init(store, init, &format!("layer{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Backbone { embed, stem, blocks })
    }

    /// One feature map per block, each `[N, C, H/ps, W/ps]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, paths: &ScanPathSet, image: Var) -> Result<Vec<Var>> {
        let mut x = self.embed.forward(g, store, image)?;
        if let Some(stem) = &self.stem {
            x = stem.forward(g, store, x)?;
        }
        let mut features = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(g, store, paths, x)?;
            features.push(x);
        }
        Ok(features)
    }
}

/// Scan paths for one grid size, cached per size.
#[derive(Debug, Default)]
pub struct PathCache {
    entries: std::sync::Mutex<std::collections::HashMap<(usize, usize), Arc<ScanPathSet>>>,
}

impl PathCache {
    pub fn get(&self, cfg: &NetworkConfig, h: usize, w: usize) -> Result<Arc<ScanPathSet>> {
        let mut map = self.entries.lock().expect("path cache lock");
        if let Some(p) = map.get(&(h, w)) {
            return Ok(Arc::clone(p));
        }
        let set = Arc::new(ScanPathSet::generate(cfg.scan, h, w, cfg.num_paths)?);
        map.insert((h, w), Arc::clone(&set));
        Ok(set)
    }
}

impl Clone for PathCache {
    fn clone(&self) -> Self {
        PathCache::default()
    }
}
