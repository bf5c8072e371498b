//! Adam, RMSprop, weight clipping and the gradient-penalty term.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradBundle, MlpNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Rmsprop {
        lr: f64,
        decay: f64,
        eps: f64,
    },
}

/// Named optimizer settings selectable from configuration files.
pub const PRESETS: [&str; 3] = ["adam_gaussian", "rmsprop_gaussian", "adam_wgan_gp"];

impl OptimizerKind {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "adam_gaussian" => Ok(OptimizerKind::Adam {
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            }),
            "rmsprop_gaussian" => Ok(OptimizerKind::Rmsprop {
                lr: 1e-4,
                decay: 0.9,
                eps: 1e-8,
            }),
            "adam_wgan_gp" => Ok(OptimizerKind::Adam {
                lr: 1e-4,
                beta1: 0.0,
                beta2: 0.9,
                eps: 1e-8,
            }),
            other => Err(Error::InvalidConfig(format!("unknown optimizer preset `{other}`"))),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::Rmsprop { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, new_lr: f64) -> Self {
        match self {
            OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => OptimizerKind::Adam {
                lr: new_lr,
                beta1,
                beta2,
                eps,
            },
            OptimizerKind::Rmsprop { decay, eps, .. } => OptimizerKind::Rmsprop {
                lr: new_lr,
                decay,
                eps,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    weights: Array2<f64>,
    biases: Array1<f64>,
}

/// Optimizer rule plus its per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Moments>,
    second: Vec<Moments>,
    steps: u64,
}

fn zero_moments(net: &MlpNet) -> Vec<Moments> {
    net.layers()
        .iter()
        .map(|l| Moments {
            weights: Array2::zeros(l.weights.raw_dim()),
            biases: Array1::zeros(l.biases.raw_dim()),
        })
        .collect()
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, net: &MlpNet) -> Self {
        Self {
            kind,
            first: zero_moments(net),
            second: zero_moments(net),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descends along `grads`. Non-finite gradients leave the network and the
    /// state untouched and are reported as an error.
    pub fn step(&mut self, net: &mut MlpNet, grads: &GradBundle) -> Result<()> {
        if !grads.matches_shape(net) || self.first.len() != net.layers().len() {
            return Err(Error::Shape("gradient bundle does not match the network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("optimizer gradient"));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (((layer, g), m), v) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    Zip::from(&mut layer.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .and(&g.weights)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut layer.biases)
                        .and(&mut m.biases)
                        .and(&mut v.biases)
                        .and(&g.biases)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
            OptimizerKind::Rmsprop { lr, decay, eps } => {
                let update = |p: &mut f64, v: &mut f64, g: f64| {
                    *v = decay * *v + (1.0 - decay) * g * g;
                    *p -= lr * g / (v.sqrt() + eps);
                };
                for ((layer, g), v) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.second)
                {
                    Zip::from(&mut layer.weights)
                        .and(&mut v.weights)
                        .and(&g.weights)
                        .for_each(|p, v, &g| update(p, v, g));
                    Zip::from(&mut layer.biases)
                        .and(&mut v.biases)
                        .and(&g.biases)
                        .for_each(|p, v, &g| update(p, v, g));
                }
            }
        }
        Ok(())
    }
}

/// Hard clipping of every weight and bias to `[-c, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum ClipPolicy {
    #[default]
    Disabled,
    Threshold(f64),
}

impl From<Option<f64>> for ClipPolicy {
    fn from(v: Option<f64>) -> Self {
        v.map_or(ClipPolicy::Disabled, ClipPolicy::Threshold)
    }
}

impl From<ClipPolicy> for Option<f64> {
    fn from(c: ClipPolicy) -> Self {
        c.threshold()
    }
}

impl ClipPolicy {
    pub fn threshold(&self) -> Option<f64> {
        match *self {
            ClipPolicy::Disabled => None,
            ClipPolicy::Threshold(c) => Some(c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClipPolicy::Threshold(c) if !(c > 0.0 && c.is_finite()) => Err(Error::InvalidConfig(
                format!("clip threshold must be positive, got {c}"),
            )),
            _ => Ok(()),
        }
    }
}

pub fn clip(net: &mut MlpNet, policy: ClipPolicy) {
    if let ClipPolicy::Threshold(c) = policy {
        for l in net.layers_mut() {
            l.weights.mapv_inplace(|w| w.clamp(-c, c));
            l.biases.mapv_inplace(|b| b.clamp(-c, c));
        }
    }
}

/// Random interpolates `eps * real + (1 - eps) * fake`, one `eps ~ U[0, 1]` per row.
pub fn interpolate<R: Rng + ?Sized>(
    real: &Array2<f64>,
    fake: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if real.raw_dim() != fake.raw_dim() {
        return Err(Error::Shape(format!(
            "real batch {:?} vs fake batch {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let mut out = fake.clone();
    for (mut row, r) in out.axis_iter_mut(Axis(0)).zip(real.axis_iter(Axis(0))) {
        let e: f64 = rng.gen();
        Zip::from(&mut row).and(&r).for_each(|f, &x| *f = e * x + (1.0 - e) * *f);
    }
    Ok(out)
}

/// Batch mean of `(||grad D(x_hat)||_2 - 1)^2` at random interpolates and its
/// gradient w.r.t. the discriminator parameters.
pub fn gradient_penalty<R: Rng + ?Sized>(
    d_net: &MlpNet,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    rng: &mut R,
) -> Result<(f64, GradBundle)> {
    let x_hat = interpolate(real, fake, rng)?;
    let (value, grads) = d_net.input_gradient_penalty(&x_hat)?;
    if !value.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("gradient penalty"));
    }
    Ok((value, grads))
}
