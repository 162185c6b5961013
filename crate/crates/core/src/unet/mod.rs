//! Encoder-decoder segmentation network assembled from the numerics ops.
//!
//! Layout for `depth = d`, `f_i = base_filters * 2^i`:
//!
//! * `enc{i}` (i = 0..d): two 3x3 conv + ReLU at `f_i` channels, then 2x2 max pool,
//! * `bottleneck`: two 3x3 conv + ReLU at `f_d` channels,
//! * `dec{i}` (i = d-1..=0): 2x2 transposed conv to `f_i` channels, concatenation
//!   with the pre-pool activation of `enc{i}`, two 3x3 conv + ReLU at `f_i`,
//! * `head`: 3x3 conv to one logit channel.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{he_normal, Graph, Scalar, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub depth: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 6,
            depth: 4,
            base_filters: 16,
            kernel_size: 3,
            out_channels: 1,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("model.in_channels", "must be >= 1"));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::config("model.depth", "must be in 1..=8"));
        }
        if self.base_filters == 0 {
            return Err(Error::config("model.base_filters", "must be >= 1"));
        }
        if self.kernel_size != 3 {
            return Err(Error::config("model.kernel_size", "only 3 is supported"));
        }
        if self.out_channels != 1 {
            return Err(Error::config("model.out_channels", "only 1 is supported"));
        }
        Ok(())
    }

    /// Spatial sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Smallest valid side length that is `>= side`.
    pub fn padded_side(&self, side: usize) -> usize {
        side.div_ceil(self.size_multiple()) * self.size_multiple()
    }

    fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }
}

/// Name, shape and fan-in of each parameter tensor, in forward order.
pub fn parameter_schema(config: &UNetConfig) -> Vec<(String, Vec<usize>, usize)> {
    let k = config.kernel_size;
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, name: String, cin: usize, cout: usize| {
        out.push((format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k));
        out.push((format!("{name}.bias"), vec![cout], cin * k * k));
    };
    let mut cin = config.in_channels;
    for i in 0..config.depth {
        let f = config.filters(i);
        conv(&mut out, format!("enc{i}.conv1"), cin, f);
        conv(&mut out, format!("enc{i}.conv2"), f, f);
        cin = f;
    }
    let fb = config.filters(config.depth);
    conv(&mut out, "bottleneck.conv1".into(), cin, fb);
    conv(&mut out, "bottleneck.conv2".into(), fb, fb);
    let mut cprev = fb;
    for i in (0..config.depth).rev() {
        let f = config.filters(i);
        out.push((format!("dec{i}.up.weight"), vec![cprev, f, 2, 2], cprev * 4));
        out.push((format!("dec{i}.up.bias"), vec![f], cprev * 4));
        conv(&mut out, format!("dec{i}.conv1"), 2 * f, f);
        conv(&mut out, format!("dec{i}.conv2"), f, f);
        cprev = f;
    }
    conv(&mut out, "head".into(), config.filters(0), config.out_channels);
    out
}

/// Named parameter tensors in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::SchemaMismatch("names and tensors differ in count".into()));
        }
        Ok(ParameterSet { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checks names and shapes against the schema of `config`.
    pub fn check_schema(&self, config: &UNetConfig) -> Result<()> {
        let schema = parameter_schema(config);
        if schema.len() != self.tensors.len() {
            return Err(Error::SchemaMismatch(format!(
                "config expects {} tensors, found {}",
                schema.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape, _), (n, t)) in schema.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || *shape != t.shape {
                return Err(Error::SchemaMismatch(format!(
                    "expected {name} {shape:?}, found {n} {:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }

    /// Records every tensor as a graph leaf.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = requires_grad;
                t.grad = None;
                graph.leaf(t)
            })
            .collect()
    }

    /// Copies the gradients of bound leaves back onto the parameters.
    pub fn pull_grads(&mut self, graph: &Graph<T>, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            t.grad = graph.grad(v).map(<[T]>::to_vec);
        }
    }

    /// Drops every gradient buffer and the `requires_grad` flags.
    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
            t.requires_grad = false;
        }
    }
}

/// Seeded He-normal weights and zero biases.
pub fn build_unet<T: Scalar>(config: &UNetConfig, seed: u64) -> Result<ParameterSet<T>> {
    config.validate()?;
    let mut rng = rng::substream(seed, rng::INIT, 0);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, fan_in) in parameter_schema(config) {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            he_normal(&shape, fan_in, &mut rng)
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(ParameterSet { names, tensors })
}

/// Runs the network on a `[B, in_channels, H, W]` batch and returns `[B, 1, H, W]` logits.
pub fn forward<T: Scalar>(graph: &mut Graph<T>, params: &[Var], config: &UNetConfig, input: Var) -> Result<Var> {
    let shape = graph.tensor(input).shape.clone();
    let [_, c, h, w] = shape[..] else {
        return Err(Error::Shape(format!("input must be [B, C, H, W], got {shape:?}")));
    };
    if c != config.in_channels {
        return Err(Error::Shape(format!(
            "model expects {} channels, got {c}",
            config.in_channels
        )));
    }
    let m = config.size_multiple();
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("input {h}x{w} is not divisible by {m}")));
    }
    if params.len() != parameter_schema(config).len() {
        return Err(Error::SchemaMismatch("parameter count does not match config".into()));
    }
    let mut p = params.iter().copied();
    let mut x = input;
    let mut skips = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        let y = double_conv(graph, x, &mut p)?;
        skips.push(y);
        x = graph.max_pool_2x2(y)?;
    }
    x = double_conv(graph, x, &mut p)?;
    for skip in skips.into_iter().rev() {
        let (uw, ub) = take2(&mut p);
        let up = graph.transposed_conv_2x2(x, uw, ub)?;
        let cat = graph.concat_channels(up, skip)?;
        x = double_conv(graph, cat, &mut p)?;
    }
    let (hw, hb) = take2(&mut p);
    graph.conv2d(x, hw, hb)
}

fn take2(p: &mut impl Iterator<Item = Var>) -> (Var, Var) {
    let w = p.next().expect("schema length checked");
    let b = p.next().expect("schema length checked");
    (w, b)
}

fn double_conv<T: Scalar>(g: &mut Graph<T>, x: Var, p: &mut impl Iterator<Item = Var>) -> Result<Var> {
    let (w1, b1) = take2(p);
    let y = g.conv2d(x, w1, b1)?;
    let y = g.relu(y)?;
    let (w2, b2) = take2(p);
    let y = g.conv2d(y, w2, b2)?;
    g.relu(y)
}

/// Forward pass without gradient tracking; returns logits `[B, 1, H, W]`.
pub fn predict_logits<T: Scalar>(params: &ParameterSet<T>, config: &UNetConfig, batch: Tensor<T>) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.leaf(batch);
    let out = forward(&mut g, &vars, config, x)?;
    Ok(g.value(out).to_vec())
}
