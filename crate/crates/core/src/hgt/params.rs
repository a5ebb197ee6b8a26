use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::HgtError;
use crate::graph::{NodeKind, Schema};
use crate::math::sqrt;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// node type the readout head is applied to
    pub readout_type: String,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 32,
            readout_type: String::from("car"),
            output_dim: 1,
            learning_rate: 1e-2,
            epochs: 100,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), HgtError> {
        if self.layers == 0 {
            return Err(HgtError::Config("at least one layer is required".into()));
        }
        if self.heads == 0 || self.hidden == 0 {
            return Err(HgtError::Config("heads and hidden width must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(HgtError::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.output_dim == 0 {
            return Err(HgtError::Config("output dimension must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(HgtError::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Weight,
    Zero,
    One,
}

/// Name, shape and position of one parameter tensor in the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub(crate) init: Init,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NodeSlots {
    pub k: usize,
    pub q: usize,
    pub v: usize,
    pub a: usize,
    pub a_bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EdgeSlots {
    /// heads × dk × dk
    pub att: usize,
    pub msg: usize,
    pub mu: usize,
    /// d × edge feature dim
    pub feat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    pub node: Vec<NodeSlots>,
    pub edge: Vec<EdgeSlots>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub embed_w: Vec<usize>,
    pub embed_b: Vec<usize>,
    pub layers: Vec<LayerSlots>,
    pub readout_w: usize,
    pub readout_b: usize,
    pub len: usize,
}

impl Layout {
    fn new(config: &ModelConfig, schema: &Schema) -> Self {
        let d = config.hidden;
        let h = config.heads;
        let dk = config.head_dim();
        let mut tensors = Vec::new();
        let mut len = 0;
        let mut add = |name: String, shape: Vec<usize>, init: Init| -> usize {
            let offset = len;
            len += shape.iter().product::<usize>();
            tensors.push(TensorInfo { name, shape, offset, init });
            offset
        };
        let mut embed_w = Vec::new();
        let mut embed_b = Vec::new();
        for t in schema.node_types() {
            embed_w.push(add(format!("embed.{}.weight", t.name), vec![d, t.feature_dim], Init::Weight));
            embed_b.push(add(format!("embed.{}.bias", t.name), vec![d], Init::Zero));
        }
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let mut node = Vec::new();
            for t in schema.node_types() {
                let n = &t.name;
                node.push(NodeSlots {
                    k: add(format!("layer{l}.{n}.k"), vec![d, d], Init::Weight),
                    q: add(format!("layer{l}.{n}.q"), vec![d, d], Init::Weight),
                    v: add(format!("layer{l}.{n}.v"), vec![d, d], Init::Weight),
                    a: add(format!("layer{l}.{n}.a"), vec![d, d], Init::Weight),
                    a_bias: add(format!("layer{l}.{n}.a_bias"), vec![d], Init::Zero),
                });
            }
            let mut edge = Vec::new();
            for t in schema.edge_types() {
                let n = &t.name;
                edge.push(EdgeSlots {
                    att: add(format!("layer{l}.{n}.att"), vec![h, dk, dk], Init::Weight),
                    msg: add(format!("layer{l}.{n}.msg"), vec![h, dk, dk], Init::Weight),
                    mu: add(format!("layer{l}.{n}.mu"), vec![1], Init::One),
                    feat: add(format!("layer{l}.{n}.edge"), vec![d, t.feature_dim], Init::Weight),
                });
            }
            layers.push(LayerSlots { node, edge });
        }
        let readout_w = add("readout.weight".into(), vec![config.output_dim, d], Init::Weight);
        let readout_b = add("readout.bias".into(), vec![config.output_dim], Init::Zero);
        Self { tensors, embed_w, embed_b, layers, readout_w, readout_b, len }
    }
}

/// All trainable weights of a model, stored in one flat buffer and
/// addressable by tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    schema: Arc<Schema>,
    pub(crate) layout: Layout,
    pub(crate) values: Vec<f64>,
    pub(crate) readout_kind: NodeKind,
}

impl ModelParams {
    /// Fresh parameters: weights uniform in ±1/sqrt(hidden) from the config
    /// seed, biases zero, attention priors one.
    pub fn new(config: ModelConfig, schema: Arc<Schema>) -> Result<Self, HgtError> {
        config.validate()?;
        let readout_kind = schema
            .node_kind(&config.readout_type)
            .ok_or_else(|| HgtError::Config(format!("unknown readout type '{}'", config.readout_type)))?;
        let layout = Layout::new(&config, &schema);
        let bound = 1.0 / sqrt(config.hidden as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = vec![0.0; layout.len];
        for t in &layout.tensors {
            let slot = &mut values[t.offset..t.offset + t.len()];
            match t.init {
                Init::Weight => slot.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound)),
                Init::Zero => {}
                Init::One => slot.iter_mut().for_each(|x| *x = 1.0),
            }
        }
        Ok(Self { config, schema, layout, values, readout_kind })
    }

    /// Rebuilds parameters from named tensors; every tensor must be present
    /// with the right length.
    pub fn from_tensors(
        config: ModelConfig,
        schema: Arc<Schema>,
        tensors: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, HgtError> {
        let mut m = Self::new(config, schema)?;
        if tensors.len() != m.layout.tensors.len() {
            let extra = tensors
                .keys()
                .find(|k| !m.layout.tensors.iter().any(|t| &t.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(HgtError::UnknownTensor(extra));
        }
        for t in &m.layout.tensors {
            let src = tensors.get(&t.name).ok_or_else(|| HgtError::UnknownTensor(t.name.clone()))?;
            if src.len() != t.len() {
                return Err(HgtError::ShapeMismatch { what: "tensor", expected: t.len(), got: src.len() });
            }
            m.values[t.offset..t.offset + t.len()].copy_from_slice(src);
        }
        Ok(m)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.values[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&mut self.values[t.offset..t.offset + t.len()])
    }

    /// Every scalar parameter in layout order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
