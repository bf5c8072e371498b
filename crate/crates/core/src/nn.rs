//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Batches are row-major `(batch, features)` matrices. Besides the usual
//! parameter gradients, [`MlpNet::input_gradient_penalty`] differentiates the
//! squared deviation of the input-gradient norm from 1 with respect to the
//! parameters, which is what the gradient-penalty discriminator update needs.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            // NaN must survive so diverged runs are detected downstream
            Activation::Relu => {
                if z > 0.0 || z.is_nan() {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// First derivative at pre-activation `z`. The ReLU derivative at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else if z.is_nan() {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    /// Second derivative at `z`; zero for the piecewise-linear activations.
    #[inline]
    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Linear => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `activation(x . weights + biases)` with `weights` shaped `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Layer widths plus hidden and output activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl NetSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            sizes,
            hidden,
            output,
        }
    }

    /// `latent -> hidden x depth -> 2`, ReLU hidden layers, linear output.
    pub fn ring_generator(latent_dim: usize, hidden: usize, depth: usize) -> Self {
        let mut sizes = vec![latent_dim];
        sizes.extend(std::iter::repeat(hidden).take(depth));
        sizes.push(2);
        Self::new(sizes, Activation::Relu, Activation::Linear)
    }

    /// `2 -> hidden x depth -> 1`, ReLU hidden layers.
    pub fn ring_discriminator(hidden: usize, depth: usize, output: Activation) -> Self {
        let mut sizes = vec![2];
        sizes.extend(std::iter::repeat(hidden).take(depth));
        sizes.push(1);
        Self::new(sizes, Activation::Relu, output)
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::InvalidNetwork("need at least input and output sizes".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::InvalidNetwork("layer width 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layers: Vec<DenseLayer>,
}

/// Everything [`MlpNet::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Pre-activations, one matrix per layer.
    pub fn pre(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Per-layer parameter gradients, optionally with the gradient w.r.t. the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<LayerGrad>,
    pub input: Option<Array2<f64>>,
}

impl GradBundle {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
            input: None,
        }
    }

    /// Adds `scale * other` to the parameter gradients; input gradients are left alone.
    pub fn add_scaled(&mut self, other: &GradBundle, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.biases.scaled_add(scale, &b.biases);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Parameter gradients flattened in [`MlpNet::param`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn matches_shape(&self, net: &MlpNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.raw_dim() == l.weights.raw_dim() && g.biases.len() == l.biases.len()
            })
    }
}

impl MlpNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.fan_out() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: {} biases for {} outputs",
                    l.biases.len(),
                    l.fan_out()
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.fan_in() != l.fan_out() {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        l.fan_out(),
                        i + 1,
                        next.fan_in()
                    )));
                }
            }
            if !l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidNetwork(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        Self::init_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let depth = spec.sizes.len() - 1;
        let layers = spec
            .sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                DenseLayer {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.sample(dist)),
                    biases: Array1::zeros(fan_out),
                    activation: if i + 1 == depth { spec.output } else { spec.hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weights.len();
            if index < nw {
                return (li, Some((index / l.fan_out(), index % l.fan_out())), 0);
            }
            index -= nw;
            if index < l.biases.len() {
                return (li, None, index);
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `index`, counting each layer's weights row-major, then its biases.
    pub fn param(&self, index: usize) -> f64 {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weights[rc],
            (li, None, b) => self.layers[li].biases[b],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weights[rc] = value,
            (li, None, b) => self.layers[li].biases[b] = value,
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            let z = a.dot(&l.weights) + &l.biases;
            let next = z.mapv(|v| l.activation.apply(v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: a,
        })
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.dot(&self.layers[0].weights) + &self.layers[0].biases;
        let act = self.layers[0].activation;
        a.mapv_inplace(|v| act.apply(v));
        for l in &self.layers[1..] {
            a = a.dot(&l.weights) + &l.biases;
            a.mapv_inplace(|v| l.activation.apply(v));
        }
        Ok(a)
    }

    /// Reverse pass from `upstream = dL/d(output)`. The input gradient is only
    /// computed when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
        want_input: bool,
    ) -> Result<GradBundle> {
        if upstream.raw_dim() != cache.output.raw_dim() || cache.pre.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "upstream {:?} does not match output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let last = self.layers.len() - 1;
        let mut g = upstream.clone();
        let act = self.layers[last].activation;
        Zip::from(&mut g)
            .and(&cache.pre[last])
            .for_each(|gv, &z| *gv *= act.derivative(z));
        self.backward_from_pre(cache, g, None, want_input)
    }

    /// `dL/d(input)` for `upstream = dL/d(output)`, skipping parameter gradients.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        if upstream.raw_dim() != cache.output.raw_dim() || cache.pre.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "upstream {:?} does not match output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let mut g = upstream.clone();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let act = l.activation;
            Zip::from(&mut g)
                .and(&cache.pre[li])
                .for_each(|gv, &z| *gv *= act.derivative(z));
            g = g.dot(&l.weights.t());
        }
        Ok(g)
    }

    /// Backpropagates `dL/dz` of the last layer down the network. `extra[l]`,
    /// when given, is added to `dL/dz_l` as the pass reaches layer `l`.
    fn backward_from_pre(
        &self,
        cache: &ForwardCache,
        mut g: Array2<f64>,
        extra: Option<&[Array2<f64>]>,
        want_input: bool,
    ) -> Result<GradBundle> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut input = None;
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            layers.push(LayerGrad {
                weights: cache.inputs[li].t().dot(&g),
                biases: g.sum_axis(Axis(0)),
            });
            if li > 0 {
                let below = self.layers[li - 1].activation;
                let mut ga = g.dot(&l.weights.t());
                Zip::from(&mut ga)
                    .and(&cache.pre[li - 1])
                    .for_each(|gv, &z| *gv *= below.derivative(z));
                if let Some(extra) = extra {
                    ga += &extra[li - 1];
                }
                g = ga;
            } else if want_input {
                input = Some(g.dot(&l.weights.t()));
            }
        }
        layers.reverse();
        Ok(GradBundle { layers, input })
    }

    /// Gradient of each row's scalar output w.r.t. that row's input.
    /// Requires a single-output network.
    pub fn input_gradient(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.require_scalar_output()?;
        let cache = self.forward(x)?;
        let ones = Array2::ones(cache.output.raw_dim());
        Ok(self.backward(&cache, &ones, true)?.input.expect("requested"))
    }

    fn require_scalar_output(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "expected a scalar-output network, got {} outputs",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// `mean_i (||grad_x D(x_i)||_2 - 1)^2` over the rows of `x` and its exact
    /// gradient w.r.t. every weight and bias.
    pub fn input_gradient_penalty(&self, x: &Array2<f64>) -> Result<(f64, GradBundle)> {
        self.require_scalar_output()?;
        let cache = self.forward(x)?;
        let n = x.nrows();
        let depth = self.layers.len();

        // Input-gradient chain: delta_l = dD/dz_l, u_l = delta_l W_l^T = dD/d(input of l).
        let mut deltas: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); depth];
        let mut us: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); depth];
        let top = self.layers[depth - 1].activation;
        deltas[depth - 1] = cache.pre[depth - 1].mapv(|z| top.derivative(z));
        for li in (0..depth).rev() {
            let u = deltas[li].dot(&self.layers[li].weights.t());
            if li > 0 {
                let act = self.layers[li - 1].activation;
                let mut d = u.clone();
                Zip::from(&mut d)
                    .and(&cache.pre[li - 1])
                    .for_each(|v, &z| *v *= act.derivative(z));
                deltas[li - 1] = d;
            }
            us[li] = u;
        }

        let norms: Array1<f64> = us[0].map_axis(Axis(1), |row| row.dot(&row).sqrt());
        let value = norms.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / n as f64;

        // Reverse through the chain above.
        let mut u_bar = us[0].clone();
        for (mut row, &r) in u_bar.axis_iter_mut(Axis(0)).zip(norms.iter()) {
            let scale = if r > 0.0 { 2.0 * (r - 1.0) / (n as f64 * r) } else { 0.0 };
            row.mapv_inplace(|v| v * scale);
        }
        let mut grads = GradBundle::zeros_like(self);
        let mut z_bar: Vec<Array2<f64>> =
            cache.pre.iter().map(|z| Array2::zeros(z.raw_dim())).collect();
        for li in 0..depth {
            let w = &self.layers[li].weights;
            grads.layers[li].weights += &u_bar.t().dot(&deltas[li]);
            let delta_bar = u_bar.dot(w);
            let act = self.layers[li].activation;
            if li + 1 < depth {
                let mut next_u_bar = delta_bar.clone();
                Zip::from(&mut next_u_bar)
                    .and(&cache.pre[li])
                    .for_each(|v, &z| *v *= act.derivative(z));
                Zip::from(&mut z_bar[li])
                    .and(&delta_bar)
                    .and(&us[li + 1])
                    .and(&cache.pre[li])
                    .for_each(|zb, &db, &u, &z| *zb += db * u * act.second_derivative(z));
                u_bar = next_u_bar;
            } else {
                Zip::from(&mut z_bar[li])
                    .and(&delta_bar)
                    .and(&cache.pre[li])
                    .for_each(|zb, &db, &z| *zb += db * act.second_derivative(z));
            }
        }

        // The pre-activations depend on the parameters through the ordinary forward pass.
        let seed = z_bar[depth - 1].clone();
        let through_forward = self.backward_from_pre(&cache, seed, Some(&z_bar), false)?;
        grads.add_scaled(&through_forward, 1.0);
        Ok((value, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let layers = c
            .layers
            .iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.fan_in, l.fan_out), l.weights.clone())
                    .map_err(|e| Error::InvalidNetwork(e.to_string()))?;
                Ok(DenseLayer {
                    weights,
                    biases: Array1::from(l.biases.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self::from_layers(layers)?;
        if net.input_dim() != c.input_dim || net.output_dim() != c.output_dim {
            return Err(Error::InvalidNetwork("checkpoint dimensions disagree".into()));
        }
        Ok(net)
    }
}

/// JSON form of a network: dimensions, activation names, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Coordinates with `|analytic| + |numeric|` below this are not compared.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares `analytic` against central differences of `loss` with step `h`.
/// The relative error per coordinate is `|a - n| / max(|a|, |n|)`.
pub fn grad_check<F>(
    net: &MlpNet,
    loss: F,
    analytic: &GradBundle,
    h: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&MlpNet) -> f64,
{
    let analytic = analytic.flatten();
    assert_eq!(analytic.len(), net.param_count(), "gradient shape mismatch");
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.param(i);
        probe.set_param(i, orig + h);
        let up = loss(&probe);
        probe.set_param(i, orig - h);
        let down = loss(&probe);
        probe.set_param(i, orig);
        let numeric = (up - down) / (2.0 * h);
        if a.abs() + numeric.abs() < GRAD_CHECK_FLOOR {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    report
}

/// Central differences of `f` w.r.t. every entry of `x`.
pub fn numeric_input_gradient<F>(x: &Array2<f64>, h: f64, f: F) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut out = Array2::zeros(x.raw_dim());
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        out[idx] = (up - down) / (2.0 * h);
    }
    out
}
