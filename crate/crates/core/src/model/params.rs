use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DecoderKind, GateMode, ModelConfig, TopHead, PYRAMID_RATES, TRANSITION_CHANNELS};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Real, Shape, Tensor};

/// How a layer's weights start out. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform, scaled by fan-in according to [`ModelConfig::init`].
    Random,
    Zero,
}

/// One convolution layer of the architecture: `<name>.weight` and `<name>.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub conv: ConvSpec,
    pub init: Init,
}

impl LayerSpec {
    fn new(name: impl Into<String>, conv: ConvSpec, init: Init) -> Self {
        LayerSpec {
            name: name.into(),
            conv,
            init,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.conv.out_ch, 1, 1)
    }
}

/// Every convolution of a model in construction order.
pub fn layer_table(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let tc = TRANSITION_CHANNELS;
    let widths = cfg.backbone.block_channels;
    let mut layers = Vec::new();

    let mut in_ch = 3;
    for (i, &w) in widths.iter().enumerate() {
        for j in 0..cfg.backbone.convs_per_block {
            let cin = if j == 0 { in_ch } else { w };
            layers.push(LayerSpec::new(
                format!("enc{}.conv{j}", i + 1),
                ConvSpec::same(w, cin, 3, 1),
                Init::Random,
            ));
        }
        in_ch = w;
    }

    for (i, &w) in widths.iter().enumerate().take(4) {
        layers.push(LayerSpec::new(
            format!("trans{}", i + 1),
            ConvSpec::same(tc, w, 3, 1),
            Init::Random,
        ));
    }

    let c5 = widths[4];
    let pointwise = || LayerSpec::new("top.b0", ConvSpec::new(tc, c5, 1), Init::Random);
    let atrous = |r: usize| LayerSpec::new(format!("top.atrous{r}"), ConvSpec::same(tc, c5, 3, r), Init::Random);
    let folded = |r: usize| LayerSpec::new(format!("top.fold{r}"), ConvSpec::same(4 * tc, 4 * c5, 3, r), Init::Random);
    let fuse = || LayerSpec::new("top.fuse", ConvSpec::same(tc, 4 * tc, 3, 1), Init::Random);
    match cfg.top {
        TopHead::Pointwise => layers.push(pointwise()),
        TopHead::Atrous(r) => layers.push(atrous(r)),
        TopHead::Fold(r) => layers.push(folded(r)),
        TopHead::Aspp => {
            layers.push(pointwise());
            layers.extend(PYRAMID_RATES.iter().map(|&r| atrous(r)));
            layers.push(fuse());
        }
        TopHead::FoldAspp => {
            layers.push(pointwise());
            layers.extend(PYRAMID_RATES.iter().map(|&r| folded(r)));
            layers.push(fuse());
        }
    }

    if cfg.gates == GateMode::Learned {
        for (i, &w) in widths.iter().enumerate() {
            layers.push(LayerSpec::new(
                format!("gate{}", i + 1),
                ConvSpec::same(2, w + tc, 3, 1),
                Init::Zero,
            ));
        }
    }

    if cfg.decoder != DecoderKind::Parallel {
        for level in (1..=5).rev() {
            layers.push(LayerSpec::new(
                format!("dec{level}.conv0"),
                ConvSpec::same(tc, tc, 3, 1),
                Init::Random,
            ));
            let out = if level == 1 { 1 } else { tc };
            layers.push(LayerSpec::new(
                format!("dec{level}.conv1"),
                ConvSpec::same(out, tc, 3, 1),
                Init::Random,
            ));
        }
    }

    match cfg.decoder {
        DecoderKind::Dual => layers.push(LayerSpec::new(
            "fuse",
            ConvSpec::same(1, 1 + 5 * tc, 3, 1),
            Init::Random,
        )),
        DecoderKind::Parallel => layers.push(LayerSpec::new(
            "fuse",
            ConvSpec::same(1, 5 * tc, 3, 1),
            Init::Random,
        )),
        DecoderKind::Progressive => {}
    }
    layers
}

/// Ordered name → tensor table of model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: IndexMap::new(),
        }
    }

    /// Fresh parameters for `cfg`, deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for layer in layer_table(cfg) {
            let ws = layer.conv.weight_shape();
            let w = match layer.init {
                Init::Zero => Tensor::zeros(ws),
                Init::Random => {
                    let bound = cfg.init.bound(layer.conv.fan_in());
                    Tensor::random_uniform(ws, -bound, bound, &mut rng)
                }
            };
            store.insert(layer.weight_name(), w);
            store.insert(layer.bias_name(), Tensor::zeros(layer.bias_shape()));
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Zero-filled store with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Checks that this store holds exactly the layers of `cfg` with matching shapes.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let mut expected = Vec::new();
        for layer in layer_table(cfg) {
            expected.push((layer.weight_name(), layer.conv.weight_shape()));
            expected.push((layer.bias_name(), layer.bias_shape()));
        }
        if expected.len() != self.len() {
            return Err(Error::Invalid(format!(
                "parameter table has {} tensors, architecture needs {}",
                self.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.require(&name)?;
            if t.shape() != shape {
                return Err(Error::shape(
                    "parameters",
                    format!("'{name}' is {} but the architecture needs {shape}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::AblationStage;
    use crate::model::config::{ablation_variant, BackboneConfig, WeightInit};

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let a = ParamStore::<f32>::init(&cfg, 7);
        let b = ParamStore::<f32>::init(&cfg, 7);
        assert_eq!(a, b);
        let c = ParamStore::<f32>::init(&cfg, 8);
        assert_ne!(a, c);
        a.check_against(&cfg).unwrap();
    }

    #[test]
    fn gate_convs_start_at_zero_and_biases_zero() {
        let p = ParamStore::<f32>::init(&ModelConfig::toy(), 1);
        for (name, t) in p.iter() {
            if name.starts_with("gate") || name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let w = p.get("enc2.conv0.weight").unwrap();
        let bound = (6.0f32 / (16.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound / 2.0));
        let cfg = ModelConfig { init: WeightInit::FanIn, ..ModelConfig::toy() };
        let w = ParamStore::<f32>::init(&cfg, 1).get("enc2.conv0.weight").unwrap().clone();
        assert!(w.data().iter().all(|v| v.abs() <= bound / 6f32.sqrt()));
    }

    #[test]
    fn gates_off_has_no_gate_params() {
        let cfg = ablation_variant(BackboneConfig::toy(), AblationStage::Baseline).unwrap();
        let p = ParamStore::<f32>::init(&cfg, 1);
        assert!(p.names().all(|n| !n.starts_with("gate")));
    }

    #[test]
    fn transitions_and_gates_have_paper_widths() {
        let p = ParamStore::<f32>::init(&ModelConfig::toy(), 1);
        for i in 1..=4 {
            assert_eq!(p.get(&format!("trans{i}.weight")).unwrap().shape().n(), 32);
        }
        for i in 1..=5 {
            assert_eq!(p.get(&format!("gate{i}.weight")).unwrap().shape().n(), 2);
        }
        assert_eq!(p.get("fuse.weight").unwrap().shape(), Shape::new(1, 161, 3, 3));
        assert_eq!(p.get("top.fold4.weight").unwrap().shape(), Shape::new(128, 256, 3, 3));
    }
}
