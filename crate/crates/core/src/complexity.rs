//! Parameter and FLOP accounting.
//!
//! Parameter counts are derived from the configuration alone and must match
//! an enumeration of the model's store. FLOPs are twice the number of
//! multiply-accumulates in convolutions, linear maps and the scan
//! recurrence; elementwise ops, normalization, activations and upsampling
//! are not counted.

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::gbc::{bottconv_bias_count, bottconv_weight_count};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleCost {
    pub name: String,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub input_height: usize,
    pub input_width: usize,
    pub total_params: usize,
    pub total_flops: u64,
    /// Bytes of the checkpoint file for this configuration.
    pub model_bytes: usize,
    pub modules: Vec<ModuleCost>,
}

pub fn bottconv_params(cin: usize, cout: usize, rank: usize, kernel: usize) -> usize {
    bottconv_weight_count(cin, cout, rank, kernel) + bottconv_bias_count(cout, rank)
}

fn gbc_params(cfg: &NetworkConfig, c: usize) -> usize {
    4 * bottconv_params(c, c, cfg.rank(c), cfg.gbc_kernel) + 4 * 2 * c
}

fn gbc_macs(cfg: &NetworkConfig, c: usize, pixels: usize) -> u64 {
    let (r, k) = (cfg.rank(c), cfg.gbc_kernel);
    4 * ((r * c + r * k * k + c * r) * pixels) as u64
}

fn ssm_params(c: usize, g: usize) -> usize {
    g * c + c * c + c + 2 * c * g + c
}

/// Per token: the step-size map, the two input-dependent projections and
/// the recurrence with its readout.
fn ssm_macs_per_token(c: usize, g: usize) -> u64 {
    (c * c + 2 * c * g + 3 * g * c + c) as u64
}

pub fn embed_params(cfg: &NetworkConfig) -> usize {
    let (c, ps) = (cfg.embed_dim, cfg.patch_size);
    let (gh, gw) = cfg.grid();
    c * 3 * ps * ps + c + gh * gw * c
}

pub fn block_params(cfg: &NetworkConfig) -> usize {
    let c = cfg.embed_dim;
    let gbc = if cfg.block_gbc { gbc_params(cfg, c) } else { 0 };
    let sets = if cfg.share_path_params { 1 } else { cfg.num_paths };
    gbc + 2 * c + sets * ssm_params(c, cfg.state_dim) + (2 * c * c + c) + (c * c + c)
}

pub fn head_params(cfg: &NetworkConfig) -> usize {
    let c = cfg.embed_dim;
    let nc = c * cfg.num_layers;
    cfg.num_layers * 2 * (c * c + c) + gbc_params(cfg, nc) + 9 * nc * nc + nc + (nc * c + c) + (c + 1)
}

/// Report for one `height x width` input.
pub fn report(cfg: &NetworkConfig, height: usize, width: usize) -> Result<ComplexityReport> {
    cfg.validate()?;
    let ps = cfg.patch_size;
    if height == 0 || width == 0 || height % ps != 0 || width % ps != 0 {
        return Err(Error::Input(format!(
            "input {height}x{width}: height and width must be multiples of {ps}"
        )));
    }
    let c = cfg.embed_dim;
    let nc = c * cfg.num_layers;
    let tokens = (height / ps) * (width / ps);
    let pixels = height * width;

    let mut modules = vec![ModuleCost {
        name: "embed".into(),
        params: embed_params(cfg),
        flops: 2 * (c * 3 * ps * ps * tokens) as u64,
    }];
    if cfg.stem_gbc {
        modules.push(ModuleCost { name: "stem".into(), params: gbc_params(cfg, c), flops: 2 * gbc_macs(cfg, c, tokens) });
    }
    let block_macs = if cfg.block_gbc { gbc_macs(cfg, c, tokens) } else { 0 }
        + cfg.num_paths as u64 * tokens as u64 * ssm_macs_per_token(c, cfg.state_dim)
        + (3 * c * c * tokens) as u64;
    for i in 0..cfg.num_layers {
        modules.push(ModuleCost { name: format!("layer{i}"), params: block_params(cfg), flops: 2 * block_macs });
    }
    let head_macs = (cfg.num_layers * 2 * c * c * tokens) as u64
        + gbc_macs(cfg, nc, pixels)
        + (9 * nc * nc * pixels) as u64
        + ((nc * c + c) * pixels) as u64;
    modules.push(ModuleCost { name: "head".into(), params: head_params(cfg), flops: 2 * head_macs });

    let total_params = modules.iter().map(|m| m.params).sum();
    let model = Model::new(cfg.clone(), 0)?;
    Ok(ComplexityReport {
        input_height: height,
        input_width: width,
        total_params,
        total_flops: modules.iter().map(|m| m.flops).sum(),
        model_bytes: crate::checkpoint::encode(&model.config, &model.store).len(),
        modules,
    })
}

/// Scalars stored under each module prefix of `model`.
pub fn enumerate(model: &Model) -> Vec<(String, usize)> {
    let mut out = vec![("embed".to_string(), model.store.numel_with_prefix("embed."))];
    if model.config.stem_gbc {
        out.push(("stem".into(), model.store.numel_with_prefix("stem.")));
    }
    for i in 0..model.config.num_layers {
        out.push((format!("layer{i}"), model.store.numel_with_prefix(&format!("layer{i}."))));
    }
    out.push(("head".into(), model.store.numel_with_prefix("head.")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottconv_16_16_3_4() {
        assert_eq!(bottconv_weight_count(16, 16, 4, 3), 164);
        assert_eq!(bottconv_params(16, 16, 4, 3), 164 + 4 + 16);
    }
}
