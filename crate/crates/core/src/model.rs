//! Full network: backbone plus head, with its parameter store.

use crate::backbone::{check_image_shape, Backbone, PathCache};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::head::MfsHead;
use crate::tensor::{Graph, Init, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub head: MfsHead,
    paths: PathCache,
}

impl Model {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let backbone = Backbone::init(&mut store, &mut init, &config)?;
        let head = MfsHead::init(&mut store, &mut init, &config)?;
        Ok(Model { config, store, backbone, head, paths: PathCache::default() })
    }

    /// Rebuild a model around loaded parameters. Every name and shape must
    /// match the layout implied by `config`.
    pub fn from_store(config: NetworkConfig, store: ParamStore) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                store.len(),
                model.store.len()
            )));
        }
        for ((name, expected), (got_name, got)) in model.store.iter().zip(store.iter()) {
            if name != got_name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {got_name}")));
            }
            if expected.shape() != got.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, configuration expects {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Per-layer feature maps for `images: [N, 3, H, W]`.
    pub fn features(&self, g: &mut Graph, store: &ParamStore, images: Var) -> Result<Vec<Var>> {
        let s = g.shape(images).to_vec();
        check_image_shape(&s, self.config.patch_size)?;
        let ps = self.config.patch_size;
        let paths = self.paths.get(&self.config, s[2] / ps, s[3] / ps)?;
        self.backbone.forward(g, store, &paths, images)
    }

    /// Logits `[N, 1, H, W]`, using parameters from `store` (which must
    /// share this model's layout).
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let feats = self.features(g, store, images)?;
        self.head.forward(g, store, &feats, (s[2], s[3]))
    }

    pub fn forward(&self, g: &mut Graph, images: Var) -> Result<Var> {
        self.forward_with(g, &self.store, images)
    }

    /// Probabilities `[N, 1, H, W]` without gradient bookkeeping beyond one
    /// throwaway graph.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let logits = self.forward(&mut g, x)?;
        let p = g.sigmoid(logits)?;
        Ok(g.value(p).clone())
    }
}
