//! The multi-granularity embedding network.
//!
//! Every region goes through the same pipeline: a fully-convolutional
//! backbone (conv3x3 -> relu -> 2x2 average pool per stage), the shared
//! adaptive residual block for 2x2 and 3x3 cells, attention pooling
//! `Gp(Z + Z * gate(Z))`, and a linear projection to `dim` values.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::granularity::{
    all_regions, level_of, ActiveMask, GranularityError, MGEmbedding, REGION_COUNT,
};
use crate::numerics::{
    kaiming_with, Bindings, Evaluation, Graph, NodeId, NumericsError, Tensor, TensorSource,
};
use crate::raster::crop;
use crate::scalar::Scalar;

/// Smallest region side the backbone accepts.
pub const MIN_REGION: usize = 8;
pub const EMBEDDING_DIMS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("region {height}x{width} is smaller than {MIN_REGION}x{MIN_REGION}")]
    RegionTooSmall { height: usize, width: usize },
    #[error("image shape {actual:?} does not match the model input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Granularity(#[from] GranularityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Independent per-location gate in (0, 1).
    #[default]
    Sigmoid,
    /// Gate normalized over spatial positions.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub dim: usize,
    /// Side length images are resampled to before embedding.
    pub canvas: usize,
    #[serde(default)]
    pub attention: AttentionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            widths: vec![16, 32, 64],
            dim: 16,
            canvas: 256,
            attention: AttentionKind::Sigmoid,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !EMBEDDING_DIMS.contains(&self.dim) {
            return Err(ModelError::Config(format!(
                "dim {} not in {EMBEDDING_DIMS:?}",
                self.dim
            )));
        }
        self.validate_shape()
    }

    /// Structural checks only; the embedding dimension is unconstrained.
    /// Tests use this for tiny gradient-check models.
    pub fn validate_shape(&self) -> Result<(), ModelError> {
        if self.widths.is_empty()
            || self.widths.contains(&0)
            || self.in_channels == 0
            || self.dim == 0
        {
            return Err(ModelError::Config(
                "widths, channels and dim must be positive".into(),
            ));
        }
        if self.canvas / 3 < MIN_REGION {
            return Err(ModelError::Config(format!(
                "canvas {} too small for 3x3 cells",
                self.canvas
            )));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone(usize),
    Adaptive,
    Attention,
    Projection,
}

pub fn param_group(name: &str) -> Option<ParamGroup> {
    let mut parts = name.split('.');
    match parts.next()? {
        "backbone" => parts.next()?.parse().ok().map(ParamGroup::Backbone),
        "adaptive" => Some(ParamGroup::Adaptive),
        "attention" => Some(ParamGroup::Attention),
        "projection" => Some(ParamGroup::Projection),
        _ => None,
    }
}

/// One parameter set shared by the sketch, positive and negative branches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> TensorSource<T> for ModelParams<T> {
    fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Kaiming-normal weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        let mut conv = |tensors: &mut BTreeMap<String, Tensor<T>>,
                        name: &str,
                        out: usize,
                        inp: usize,
                        k: usize| {
            tensors.insert(
                format!("{name}.weight"),
                kaiming_with(&[out, inp, k, k], inp * k * k, &mut rng),
            );
            tensors.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
        };
        let mut prev = cfg.in_channels;
        for (i, &w) in cfg.widths.iter().enumerate() {
            conv(&mut tensors, &format!("backbone.{i}"), w, prev, 3);
            prev = w;
        }
        conv(&mut tensors, "adaptive.0", prev, prev, 3);
        conv(&mut tensors, "adaptive.1", prev, prev, 3);
        conv(&mut tensors, "attention", 1, prev, 1);
        tensors.insert(
            "projection.weight".into(),
            kaiming_with(&[cfg.dim, prev], prev, &mut rng),
        );
        tensors.insert("projection.bias".into(), Tensor::zeros(&[cfg.dim]));
        ModelParams { tensors }
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        ModelParams { tensors }
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn bindings(&self) -> Bindings<'_, T> {
        Bindings::new().with(self)
    }
}

/// Graph construction for the embedding pipeline. Parameter leaves use the
/// names produced by [`ModelParams::init`].
pub struct Builder<'c> {
    cfg: &'c ModelConfig,
}

impl<'c> Builder<'c> {
    pub fn new(cfg: &'c ModelConfig) -> Self {
        Builder { cfg }
    }

    fn conv<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, name: &str) -> NodeId {
        let k = g.param(format!("{name}.weight"));
        let b = g.param(format!("{name}.bias"));
        g.conv2d(x, k, b)
    }

    /// Backbone stages `from..` applied to `x`.
    pub fn backbone<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, from: usize) -> NodeId {
        (from..self.cfg.widths.len()).fold(x, |h, i| self.backbone_stage(g, h, i))
    }

    pub fn backbone_stage<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, stage: usize) -> NodeId {
        let h = self.conv(g, x, &format!("backbone.{stage}"));
        let h = g.relu(h);
        g.avg_pool2(h)
    }

    pub fn adaptive<T: Scalar>(&self, g: &mut Graph<T>, z: NodeId, level: usize) -> NodeId {
        if level == 1 {
            return z;
        }
        let r = self.conv(g, z, "adaptive.0");
        let r = g.relu(r);
        let r = self.conv(g, r, "adaptive.1");
        g.add(z, r)
    }

    /// Attention gate only, `[1,H,W]`.
    pub fn gate<T: Scalar>(&self, g: &mut Graph<T>, z: NodeId) -> NodeId {
        let a = self.conv(g, z, "attention");
        match self.cfg.attention {
            AttentionKind::Sigmoid => g.sigmoid(a),
            AttentionKind::Softmax => g.spatial_softmax(a),
        }
    }

    pub fn attention_pool<T: Scalar>(&self, g: &mut Graph<T>, z: NodeId) -> NodeId {
        let gate = self.gate(g, z);
        let weighted = g.mul(z, gate);
        let sum = g.add(z, weighted);
        g.global_avg_pool(sum)
    }

    pub fn project<T: Scalar>(&self, g: &mut Graph<T>, v_h: NodeId) -> NodeId {
        let w = g.param("projection.weight");
        let b = g.param("projection.bias");
        g.linear(w, v_h, b)
    }

    /// Region embedding starting from backbone stage `from`; `x` is either
    /// the region pixels (`from == 0`) or a cached activation.
    pub fn region_from<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        level: usize,
        from: usize,
    ) -> NodeId {
        let z = self.backbone(g, x, from);
        let z = self.adaptive(g, z, level);
        let v_h = self.attention_pool(g, z);
        self.project(g, v_h)
    }

    pub fn region<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, level: usize) -> NodeId {
        self.region_from(g, x, level, 0)
    }

    /// Adds the region crops of `image` as constants and returns the
    /// embedding node of every active region.
    pub fn image<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        image: &Tensor<T>,
        mask: &ActiveMask,
    ) -> Result<[Option<NodeId>; REGION_COUNT], ModelError> {
        let crops = region_crops(self.cfg, image, mask)?;
        Ok(self.regions_from(g, crops, 0))
    }

    /// Like [`Builder::image`] for regions already run through backbone
    /// stages `..from`.
    pub fn regions_from<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        features: Vec<Option<Tensor<T>>>,
        from: usize,
    ) -> [Option<NodeId>; REGION_COUNT] {
        let mut out = [None; REGION_COUNT];
        for (i, f) in features.into_iter().enumerate() {
            if let Some(f) = f {
                let x = g.constant(f);
                out[i] = Some(self.region_from(g, x, level_of(i), from));
            }
        }
        out
    }
}

/// Backbone stages `..depth` applied to every active region crop. These
/// activations stay valid while those stages are frozen.
pub fn region_features<T: Scalar>(
    image: &Tensor<T>,
    mask: &ActiveMask,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    depth: usize,
) -> Result<Vec<Option<Tensor<T>>>, ModelError> {
    let crops = region_crops(cfg, image, mask)?;
    if depth == 0 {
        return Ok(crops);
    }
    let builder = Builder::new(cfg);
    let mut g = Graph::new();
    let mut nodes = vec![None; REGION_COUNT];
    for (i, c) in crops.into_iter().enumerate() {
        if let Some(c) = c {
            let mut h = g.constant(c);
            for stage in 0..depth.min(cfg.widths.len()) {
                h = builder.backbone_stage(&mut g, h, stage);
            }
            nodes[i] = Some(h);
        }
    }
    let eval = Evaluation::run(&g, &params.bindings())?;
    Ok(nodes
        .into_iter()
        .map(|n| n.map(|id| eval.value(id).clone()))
        .collect())
}

/// Finishes the embedding of regions produced by [`region_features`].
pub fn embed_from_features<T: Scalar>(
    features: Vec<Option<Tensor<T>>>,
    depth: usize,
    mask: &ActiveMask,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<MGEmbedding<T>, ModelError> {
    let mut g = Graph::new();
    let nodes = Builder::new(cfg).regions_from(&mut g, features, depth);
    let eval = Evaluation::run(&g, &params.bindings())?;
    let mut values = vec![T::zero(); REGION_COUNT * cfg.dim];
    for (i, node) in nodes.iter().enumerate() {
        if let Some(id) = node {
            values[i * cfg.dim..(i + 1) * cfg.dim].copy_from_slice(eval.value(*id).data());
        }
    }
    Ok(MGEmbedding::new(cfg.dim, values, *mask))
}

/// Native-size crops of every active region of a `[C, canvas, canvas]`
/// image.
pub fn region_crops<T: Scalar>(
    cfg: &ModelConfig,
    image: &Tensor<T>,
    mask: &ActiveMask,
) -> Result<Vec<Option<Tensor<T>>>, ModelError> {
    let expected = vec![cfg.in_channels, cfg.canvas, cfg.canvas];
    if image.shape() != expected.as_slice() {
        return Err(ModelError::InputShape {
            expected,
            actual: image.shape().to_vec(),
        });
    }
    let regions = all_regions(cfg.canvas, cfg.canvas)?;
    regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if !mask.is_active(i) {
                return Ok(None);
            }
            if r.height < MIN_REGION || r.width < MIN_REGION {
                return Err(ModelError::RegionTooSmall {
                    height: r.height,
                    width: r.width,
                });
            }
            Ok(Some(crop(image, r.top, r.left, r.height, r.width)))
        })
        .collect()
}

fn run_single<T: Scalar>(
    params: &ModelParams<T>,
    build: impl FnOnce(&mut Graph<T>) -> NodeId,
) -> Result<Tensor<T>, ModelError> {
    let mut g = Graph::new();
    let out = build(&mut g);
    g.set_output(out);
    let eval = Evaluation::run(&g, &params.bindings())?;
    Ok(eval.output()?.clone())
}

/// `Z = f1(x)` for one region `[C,H,W]`.
pub fn backbone_forward<T: Scalar>(
    region: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let s = region.shape();
    if s.len() != 3 || s[1] < MIN_REGION || s[2] < MIN_REGION {
        return Err(ModelError::RegionTooSmall {
            height: s.get(1).copied().unwrap_or(0),
            width: s.get(2).copied().unwrap_or(0),
        });
    }
    run_single(params, |g| {
        let x = g.constant(region.clone());
        Builder::new(cfg).backbone(g, x, 0)
    })
}

pub fn adaptive_block<T: Scalar>(
    z: &Tensor<T>,
    level: usize,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    run_single(params, |g| {
        let x = g.constant(z.clone());
        Builder::new(cfg).adaptive(g, x, level)
    })
}

/// `V_H = Gp(Z + Z * gate(Z))`.
pub fn attention_pool<T: Scalar>(
    z: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    let out = run_single(params, |g| {
        let x = g.constant(z.clone());
        Builder::new(cfg).attention_pool(g, x)
    })?;
    Ok(out.into_data())
}

/// `V_L = A V_H + b`.
pub fn project<T: Scalar>(
    v_h: &[T],
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    let out = run_single(params, |g| {
        let x = g.constant(Tensor::from_vec(v_h.to_vec()));
        Builder::new(cfg).project(g, x)
    })?;
    Ok(out.into_data())
}

/// Embeds every active region of `image`; inactive regions get zero
/// placeholders.
pub fn embed_image_mg<T: Scalar>(
    image: &Tensor<T>,
    mask: &ActiveMask,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<MGEmbedding<T>, ModelError> {
    embed_from_features(region_crops(cfg, image, mask)?, 0, mask, params, cfg)
}
