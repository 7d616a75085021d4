//! Network specification, the three hidden-layer topologies, and the
//! materialized model with whole-network forward and backward passes.
//!
//! Layer order for every model:
//!
//! ```text
//! 5 × (conv 3×3 → ReLU → maxpool 2×2) → flatten
//!   → hidden dense stack (ReLU after each) → dense head (ReLU) → dense classes → softmax
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_impl, conv2d_forward, dense_backward_impl, dense_forward, flatten, flatten_backward,
    maxpool_backward, maxpool_forward, pooled_extent, relu, relu_backward, softmax, Conv2DLayer, DenseLayer,
    LayerCache,
};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

pub const CONV_STAGES: usize = 5;
pub const DEFAULT_INPUT: usize = 300;
pub const DEFAULT_FILTERS: [usize; CONV_STAGES] = [16, 32, 64, 64, 128];
pub const DEFAULT_HEAD_WIDTH: usize = 64;
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HiddenArch {
    Triangular,
    Rectangular,
    RectoTriangular,
}

impl HiddenArch {
    pub const ALL: [HiddenArch; 3] = [
        HiddenArch::Triangular,
        HiddenArch::Rectangular,
        HiddenArch::RectoTriangular,
    ];

    /// Snake-case name used in reports and checkpoints.
    pub fn name(self) -> &'static str {
        match self {
            HiddenArch::Triangular => "triangular",
            HiddenArch::Rectangular => "rectangular",
            HiddenArch::RectoTriangular => "recto_triangular",
        }
    }
}

impl fmt::Display for HiddenArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HiddenArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "triangular" => Ok(HiddenArch::Triangular),
            "rectangular" => Ok(HiddenArch::Rectangular),
            "recto_triangular" | "rectotriangular" => Ok(HiddenArch::RectoTriangular),
            other => Err(Error::invalid(
                "HiddenArch",
                format!("unknown architecture `{other}`"),
            )),
        }
    }
}

/// Widths of the hidden dense stack for each topology.
pub fn hidden_sizes(arch: HiddenArch) -> Vec<usize> {
    match arch {
        HiddenArch::Triangular => vec![256, 512, 256, 128, 64, 32, 16],
        HiddenArch::Rectangular => vec![256; 6],
        HiddenArch::RectoTriangular => vec![512, 256, 128, 128, 256, 512],
    }
}

/// Hidden stack: one of the named topologies or an explicit width list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Hidden {
    Named(HiddenArch),
    Custom(Vec<usize>),
}

impl Hidden {
    pub fn sizes(&self) -> Vec<usize> {
        match self {
            Hidden::Named(a) => hidden_sizes(*a),
            Hidden::Custom(v) => v.clone(),
        }
    }
}

impl fmt::Display for Hidden {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hidden::Named(a) => f.write_str(a.name()),
            Hidden::Custom(v) => f.write_str(&join(v)),
        }
    }
}

impl FromStr for Hidden {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            parse_list(s, "hidden").map(Hidden::Custom)
        } else {
            s.parse().map(Hidden::Named)
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str, key: &'static str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid("ModelSpec", format!("bad {key} entry `{t}`")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub conv_filters: Vec<usize>,
    pub hidden: Hidden,
    pub head_width: usize,
    pub num_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(HiddenArch::RectoTriangular)
    }
}

impl ModelSpec {
    pub fn new(arch: HiddenArch) -> Self {
        Self {
            input_h: DEFAULT_INPUT,
            input_w: DEFAULT_INPUT,
            in_channels: 1,
            conv_filters: DEFAULT_FILTERS.to_vec(),
            hidden: Hidden::Named(arch),
            head_width: DEFAULT_HEAD_WIDTH,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_h = h;
        self.input_w = w;
        self
    }

    /// Spatial extents after each pooling stage, starting with the input.
    pub fn spatial_schedule(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input_h, self.input_w)];
        let (mut h, mut w) = (self.input_h, self.input_w);
        for _ in 0..self.conv_filters.len() {
            h = pooled_extent(h);
            w = pooled_extent(w);
            out.push((h, w));
        }
        out
    }

    pub fn flatten_width(&self) -> usize {
        let (h, w) = *self.spatial_schedule().last().unwrap();
        self.conv_filters.last().copied().unwrap_or(self.in_channels) * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != CONV_STAGES {
            return Err(Error::invalid(
                "ModelSpec",
                format!("expected {CONV_STAGES} conv stages, got {}", self.conv_filters.len()),
            ));
        }
        let widths = [self.in_channels, self.head_width, self.num_classes];
        if self.conv_filters.iter().chain(&widths).any(|&c| c == 0) || self.hidden.sizes().contains(&0) {
            return Err(Error::invalid("ModelSpec", "layer widths must be positive"));
        }
        for (stage, &(h, w)) in self.spatial_schedule().iter().enumerate().skip(1) {
            if h == 0 || w == 0 {
                return Err(Error::InputTooSmall {
                    stage,
                    height: self.input_h,
                    width: self.input_w,
                });
            }
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_lines(&self) -> String {
        format!(
            "input_h={}\ninput_w={}\nin_channels={}\nconv_filters={}\nhidden={}\nhead_width={}\nnum_classes={}\n",
            self.input_h,
            self.input_w,
            self.in_channels,
            join(&self.conv_filters),
            self.hidden,
            self.head_width,
            self.num_classes
        )
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut spec = ModelSpec::default();
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("ModelSpec", format!("malformed line `{line}`")))?;
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| Error::invalid("ModelSpec", format!("bad value for {k}: `{v}`")))
            };
            match k {
                "input_h" => spec.input_h = num()?,
                "input_w" => spec.input_w = num()?,
                "in_channels" => spec.in_channels = num()?,
                "conv_filters" => spec.conv_filters = parse_list(v, "conv_filters")?,
                "hidden" => spec.hidden = v.parse()?,
                "head_width" => spec.head_width = num()?,
                "num_classes" => spec.num_classes = num()?,
                other => {
                    return Err(Error::invalid("ModelSpec", format!("unknown key `{other}`")));
                }
            }
            seen += 1;
        }
        if seen != 7 {
            return Err(Error::invalid("ModelSpec", format!("expected 7 keys, found {seen}")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2DLayer<T>),
    Relu,
    MaxPool,
    Flatten,
    Dense(DenseLayer<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    seed: u64,
    layers: Vec<Layer<T>>,
    param_names: Vec<String>,
    /// Bumped on every parameter update; caches from older generations are stale.
    generation: u64,
}

/// Saved activations of one training-mode forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    generation: u64,
    layers: Vec<LayerCache<T>>,
}

pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub cache: Option<ForwardCache<T>>,
}

impl<T: Real> Model<T> {
    /// Lays out the layer sequence, taking each parametric layer from `conv` / `dense`.
    fn assemble(
        spec: &ModelSpec,
        mut conv: impl FnMut(usize, usize) -> Conv2DLayer<T>,
        mut dense: impl FnMut(usize, usize) -> DenseLayer<T>,
    ) -> Result<(Vec<Layer<T>>, Vec<String>)> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut channels = spec.in_channels;
        for (i, &f) in spec.conv_filters.iter().enumerate() {
            layers.push(Layer::Conv(conv(channels, f)));
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool);
            channels = f;
        }
        layers.push(Layer::Flatten);
        let mut width = spec.flatten_width();
        for (i, h) in spec.hidden.sizes().into_iter().enumerate() {
            layers.push(Layer::Dense(dense(width, h)));
            layers.push(Layer::Relu);
            names.push(format!("hidden{}.weight", i + 1));
            names.push(format!("hidden{}.bias", i + 1));
            width = h;
        }
        layers.push(Layer::Dense(dense(width, spec.head_width)));
        layers.push(Layer::Relu);
        names.extend(["head.weight".to_string(), "head.bias".to_string()]);
        layers.push(Layer::Dense(dense(spec.head_width, spec.num_classes)));
        names.extend(["output.weight".to_string(), "output.bias".to_string()]);
        Ok((layers, names))
    }

    /// Builds an all-zero model with the right shapes (used when loading).
    pub fn zeros(spec: ModelSpec, seed: u64) -> Result<Self> {
        let (layers, param_names) = Self::assemble(&spec, Conv2DLayer::zeros, DenseLayer::zeros)?;
        Ok(Self {
            spec,
            seed,
            layers,
            param_names,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv(c) => vec![&c.weights, &c.bias],
                Layer::Dense(d) => vec![&d.weights, &d.bias],
                _ => Vec::new(),
            })
            .collect()
    }

    /// Mutable parameter views paired with their names. Taking these counts
    /// as a parameter update: outstanding forward caches become stale.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.generation += 1;
        let tensors = self.layers.iter_mut().flat_map(|l| match l {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        });
        self.param_names.iter().cloned().zip(tensors).collect()
    }

    pub fn param_shapes(&self) -> Vec<&[usize]> {
        self.params().into_iter().map(|t| t.shape()).collect()
    }

    pub fn forward(&self, batch: &Tensor<T>, train_mode: bool) -> Result<ForwardPass<T>> {
        let (_, c, h, w) = batch.dims4("model_forward")?;
        if (c, h, w) != (self.spec.in_channels, self.spec.input_h, self.spec.input_w) {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                left: batch.shape().to_vec(),
                right: vec![0, self.spec.in_channels, self.spec.input_h, self.spec.input_w],
            });
        }
        let mut caches = Vec::with_capacity(if train_mode { self.layers.len() } else { 0 });
        let mut x = batch.clone();
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Conv(c) => conv2d_forward(&x, c)?,
                Layer::Relu => relu(&x),
                Layer::MaxPool => maxpool_forward(&x)?,
                Layer::Flatten => flatten(&x)?,
                Layer::Dense(d) => dense_forward(&x, d)?,
            };
            if train_mode {
                caches.push(cache);
            }
            x = y;
        }
        let probs = softmax(&x)?;
        Ok(ForwardPass {
            logits: x,
            probs,
            cache: train_mode.then_some(ForwardCache {
                generation: self.generation,
                layers: caches,
            }),
        })
    }

    /// Gradients for every parameter, in [`Model::params`] order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache {
                op: "model_backward",
                expected: "a training-mode forward pass on the current parameters",
            });
        }
        let first_param = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv(_) | Layer::Dense(_)));
        let mut grads_rev: Vec<Tensor<T>> = Vec::new();
        let mut g = grad_logits.clone();
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input = Some(i) != first_param;
            g = match layer {
                Layer::Conv(c) => {
                    let out = conv2d_backward_impl(&g, lc, c, need_input)?;
                    grads_rev.push(out.grad_b);
                    grads_rev.push(out.grad_w);
                    out.grad_x
                }
                Layer::Dense(d) => {
                    let out = dense_backward_impl(&g, lc, d, need_input)?;
                    grads_rev.push(out.grad_b);
                    grads_rev.push(out.grad_w);
                    out.grad_x
                }
                Layer::Relu => relu_backward(&g, lc)?,
                Layer::MaxPool => maxpool_backward(&g, lc)?,
                Layer::Flatten => flatten_backward(&g, lc)?,
            };
        }
        grads_rev.reverse();
        Ok(grads_rev)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2DLayer {
                    weights: c.weights.cast(),
                    bias: c.bias.cast(),
                }),
                Layer::Dense(d) => Layer::Dense(DenseLayer {
                    weights: d.weights.cast(),
                    bias: d.bias.cast(),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        Model {
            spec: self.spec.clone(),
            seed: self.seed,
            layers,
            param_names: self.param_names.clone(),
            generation: 0,
        }
    }
}

/// Materializes a spec with He-normal weights and zero biases.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let rng = std::cell::RefCell::new(SeededRng::new(seed));
    let (layers, param_names) = Model::<T>::assemble(
        spec,
        |i, o| Conv2DLayer::he(i, o, &mut rng.borrow_mut()),
        |i, o| DenseLayer::he(i, o, &mut rng.borrow_mut()),
    )?;
    Ok(Model {
        spec: spec.clone(),
        seed,
        layers,
        param_names,
        generation: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec {
            input_h: 32,
            input_w: 32,
            in_channels: 1,
            conv_filters: vec![2; 5],
            hidden: Hidden::Custom(vec![4]),
            head_width: 3,
            num_classes: 2,
        }
    }

    #[test]
    fn hidden_lists() {
        assert_eq!(hidden_sizes(HiddenArch::RectoTriangular), vec![512, 256, 128, 128, 256, 512]);
        assert_eq!(hidden_sizes(HiddenArch::Rectangular), vec![256, 256, 256, 256, 256, 256]);
        assert_eq!(hidden_sizes(HiddenArch::Triangular), vec![256, 512, 256, 128, 64, 32, 16]);
    }

    #[test]
    fn arch_names_round_trip() {
        for a in HiddenArch::ALL {
            assert_eq!(a.name().parse::<HiddenArch>().unwrap(), a);
        }
        assert_eq!("recto-triangular".parse::<HiddenArch>().unwrap(), HiddenArch::RectoTriangular);
        assert!("pyramid".parse::<HiddenArch>().is_err());
    }

    #[test]
    fn default_schedule_and_flatten() {
        let spec = ModelSpec::default();
        let hs: Vec<usize> = spec.spatial_schedule().iter().map(|s| s.0).collect();
        assert_eq!(hs, vec![300, 150, 75, 37, 18, 9]);
        assert_eq!(spec.flatten_width(), 10368);

        let spec = ModelSpec::default().with_input(64, 64);
        let hs: Vec<usize> = spec.spatial_schedule().iter().map(|s| s.0).collect();
        assert_eq!(hs, vec![64, 32, 16, 8, 4, 2]);
        assert_eq!(spec.flatten_width(), 512);
    }

    #[test]
    fn schedule_is_floor_halving() {
        for h in 32..200 {
            let spec = ModelSpec::default().with_input(h, h);
            for (i, &(sh, _)) in spec.spatial_schedule().iter().enumerate() {
                assert_eq!(sh, h / (1 << i));
            }
        }
    }

    #[test]
    fn too_small_input_names_stage() {
        let spec = ModelSpec::default().with_input(8, 8);
        match build_model::<f32>(&spec, 0) {
            Err(Error::InputTooSmall { stage, .. }) => assert_eq!(stage, 4),
            other => panic!("unexpected {:?}", other.map(|m| m.param_count())),
        }
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_model::<f64>(&tiny(), 5).unwrap();
        let b = build_model::<f64>(&tiny(), 5).unwrap();
        assert_eq!(a, b);
        let c = build_model::<f64>(&tiny(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_arithmetic() {
        let m = build_model::<f32>(&tiny(), 0).unwrap();
        let convs = (2 * 9 + 2) + 4 * (2 * 2 * 9 + 2);
        let dense = (2 * 4 + 4) + (4 * 3 + 3) + (3 * 2 + 2);
        assert_eq!(m.param_count(), convs + dense);
        assert_eq!(m.param_names().len(), m.params().len());
        assert_eq!(Conv2DLayer::<f32>::zeros(1, 16).param_count(), 160);
        assert_eq!(DenseLayer::<f32>::zeros(4, 2).param_count(), 10);
    }

    #[test]
    fn zero_input_gives_even_odds() {
        let spec = ModelSpec::default().with_input(32, 32);
        let m = build_model::<f32>(&spec, 1).unwrap();
        let out = m.forward(&Tensor::zeros([3, 1, 32, 32]), false).unwrap();
        assert_eq!(out.probs.shape(), &[3, 2]);
        assert!(out.probs.data().iter().all(|&p| p == 0.5));
        assert!(out.cache.is_none());
    }

    #[test]
    fn duplicated_sample_gives_identical_rows() {
        let m = build_model::<f64>(&tiny(), 2).unwrap();
        let mut rng = SeededRng::new(3);
        let one: Vec<f64> = (0..32 * 32).map(|_| rng.uniform()).collect();
        let batch = Tensor::new([2, 1, 32, 32], [one.clone(), one].concat()).unwrap();
        let p = m.forward(&batch, false).unwrap().probs;
        assert_eq!(p.data()[..2], p.data()[2..]);
        for row in p.data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_shapes_and_zero_upstream() {
        let m = build_model::<f64>(&tiny(), 4).unwrap();
        let batch = Tensor::full([2, 1, 32, 32], 0.3);
        let pass = m.forward(&batch, true).unwrap();
        let grads = m.backward(pass.cache.as_ref().unwrap(), &Tensor::zeros([2, 2])).unwrap();
        assert_eq!(grads.len(), m.params().len());
        for (g, p) in grads.iter().zip(m.params()) {
            assert_eq!(g.shape(), p.shape());
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stale_cache_rejected_after_update() {
        let mut m = build_model::<f64>(&tiny(), 4).unwrap();
        let pass = m.forward(&Tensor::full([1, 1, 32, 32], 0.1), true).unwrap();
        let _ = m.named_params_mut();
        assert!(matches!(
            m.backward(pass.cache.as_ref().unwrap(), &Tensor::zeros([1, 2])),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn input_shape_checked() {
        let m = build_model::<f64>(&tiny(), 4).unwrap();
        assert!(m.forward(&Tensor::zeros([1, 1, 33, 32]), false).is_err());
    }

    #[test]
    fn spec_lines_round_trip() {
        for spec in [ModelSpec::default(), tiny(), ModelSpec::new(HiddenArch::Triangular).with_input(64, 48)] {
            assert_eq!(ModelSpec::from_lines(&spec.to_lines()).unwrap(), spec);
        }
        assert!(ModelSpec::from_lines("input_h=3\n").is_err());
    }
}
