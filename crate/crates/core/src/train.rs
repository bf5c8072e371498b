//! Alternating GAN training with an adversary between the discriminator output
//! and the generator update.
//!
//! Losses on `[0, 1]` use a sigmoid discriminator: the discriminator ascends
//! `E f_D(D(x)) + E f_D(1 - D(G(z)))` and the generator descends
//! `E f_G(1 - psi(D(G(z))))` for a sampled perturbation `psi`. Losses on the real
//! line use a linear critic with the raw-score objectives, optionally with the
//! gradient penalty and several critic updates per generator update.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, AdversarySpec, Perturbation};
use crate::error::{Error, Result};
use crate::losses::{catalog_get, Domain, LossFn};
use crate::nn::{Activation, GradBundle, MlpNet, NetSpec};
use crate::optim::{clip, gradient_penalty, ClipPolicy, OptimizerKind, OptimizerState};
use crate::ring::{sample_ring, score_run, RingSpec, Score};

/// A run is abandoned after this many consecutive non-finite updates.
pub const MAX_CONSECUTIVE_NON_FINITE: u32 = 100;

/// Independent random streams of one run, all keyed by the run seed.
pub const STREAM_INIT_G: u64 = 0;
pub const STREAM_INIT_D: u64 = 1;
pub const STREAM_BATCHES: u64 = 2;
pub const STREAM_ADVERSARY: u64 = 3;
pub const STREAM_PENALTY: u64 = 4;
pub const STREAM_EVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    #[default]
    StdNormal,
    /// Uniform on `[-1, 1]` per coordinate.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// One perturbation for the whole minibatch of a generator step.
    #[default]
    PerStep,
    /// An independent perturbation for every sample.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

impl OptimizerSpec {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: name.into(),
            lr: None,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = Some(lr);
        self
    }

    pub fn build(&self) -> Result<OptimizerKind> {
        let kind = OptimizerKind::preset(&self.preset)?;
        match self.lr {
            Some(lr) if !(lr > 0.0 && lr.is_finite()) => {
                Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")))
            }
            Some(lr) => Ok(kind.with_lr(lr)),
            None => Ok(kind),
        }
    }
}

/// Hidden width and number of hidden layers of a dense network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub hidden: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_d: String,
    pub loss_g: String,
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub perturbation_mode: PerturbationMode,
    pub clip: ClipPolicy,
    pub g_optimizer: OptimizerSpec,
    pub d_optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub total_steps: usize,
    pub latent_dim: usize,
    #[serde(default)]
    pub latent: LatentKind,
    /// Discriminator updates per generator update.
    pub n_d: usize,
    #[serde(default)]
    pub gp_lambda: Option<f64>,
    pub seed: u64,
    pub generator: Arch,
    pub discriminator: Arch,
    #[serde(default)]
    pub ring: RingSpec,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub eval_samples: usize,
}

impl TrainConfig {
    /// Ring experiment with the architecture and optimizers of the original
    /// mixture-of-Gaussians setup: 512-sample minibatches, a 256-d normal latent,
    /// a 64-wide generator and a 256-wide discriminator.
    pub fn gaussian(loss: &str, adversary: AdversarySpec, clip: ClipPolicy) -> Self {
        Self {
            loss_d: loss.into(),
            loss_g: loss.into(),
            adversary,
            perturbation_mode: PerturbationMode::PerStep,
            clip,
            g_optimizer: OptimizerSpec::preset("adam_gaussian"),
            d_optimizer: OptimizerSpec::preset("rmsprop_gaussian"),
            batch_size: 512,
            total_steps: 20_000,
            latent_dim: 256,
            latent: LatentKind::StdNormal,
            n_d: 1,
            gp_lambda: None,
            seed: 0,
            generator: Arch {
                hidden: 64,
                depth: 3,
            },
            discriminator: Arch {
                hidden: 256,
                depth: 3,
            },
            ring: RingSpec::default(),
            log_interval: 100,
            checkpoint_interval: 1000,
            eval_samples: 10_000,
        }
    }

    /// Raw-score critic with the gradient penalty: `lambda = 10`, five critic
    /// updates per generator update, Adam with `beta1 = 0`, `beta2 = 0.9`.
    pub fn gaussian_gp(loss: &str) -> Self {
        Self {
            g_optimizer: OptimizerSpec::preset("adam_wgan_gp"),
            d_optimizer: OptimizerSpec::preset("adam_wgan_gp"),
            n_d: 5,
            gp_lambda: Some(10.0),
            ..Self::gaussian(loss, AdversarySpec::honest(), ClipPolicy::Disabled)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let loss_d = catalog_get(&self.loss_d)?;
        let loss_g = catalog_get(&self.loss_g)?;
        if loss_d.domain() != loss_g.domain() {
            return bad("loss_d and loss_g must share a domain".into());
        }
        let adversary = self.adversary.build()?;
        if loss_d.domain() == Domain::RealLine && adversary.error_probability() > 0.0 {
            return bad("perturbations act on [0, 1] feedback; raw-score losses need an honest adversary".into());
        }
        if let Some(lambda) = self.gp_lambda {
            if loss_d.domain() != Domain::RealLine {
                return bad("gp_lambda is only supported with raw-score (H-hat) losses".into());
            }
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return bad(format!("gp_lambda must be non-negative, got {lambda}"));
            }
        }
        self.clip.validate()?;
        self.g_optimizer.build()?;
        self.d_optimizer.build()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.latent_dim == 0 || self.n_d == 0 {
            return bad("latent_dim and n_d must be at least 1".into());
        }
        if self.generator.hidden == 0 || self.discriminator.hidden == 0 {
            return bad("hidden widths must be at least 1".into());
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 || self.eval_samples == 0 {
            return bad("log_interval, checkpoint_interval and eval_samples must be positive".into());
        }
        self.ring.validate()
    }

    /// Discriminator output activation implied by the loss domain.
    pub fn discriminator_output(&self) -> Result<Activation> {
        Ok(match catalog_get(&self.loss_d)?.domain() {
            Domain::UnitInterval => Activation::Sigmoid,
            Domain::RealLine => Activation::Linear,
        })
    }

    pub fn generator_spec(&self) -> NetSpec {
        NetSpec::ring_generator(self.latent_dim, self.generator.hidden, self.generator.depth)
    }

    pub fn discriminator_spec(&self) -> Result<NetSpec> {
        Ok(NetSpec::ring_discriminator(
            self.discriminator.hidden,
            self.discriminator.depth,
            self.discriminator_output()?,
        ))
    }
}

/// Source of real samples.
pub trait DataSampler {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64>;
}

impl DataSampler for RingSpec {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        sample_ring(self, n, rng)
    }
}

pub fn sample_latent<R: Rng + ?Sized>(kind: LatentKind, n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    match kind {
        LatentKind::StdNormal => Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal)),
        LatentKind::Uniform => Array2::from_shape_simple_fn((n, dim), || rng.gen_range(-1.0..=1.0)),
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Value, parameter gradient and output means of one discriminator objective evaluation.
#[derive(Debug, Clone)]
pub struct DiscEvaluation {
    /// The minimized quantity: the negated objective, plus the penalty if any.
    pub loss: f64,
    pub grads: GradBundle,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// Gradient of the discriminator loss on one real and one generated batch.
///
/// For `[0, 1]` losses the objective is `mean f_D(D(x)) + mean f_D(1 - D(x~))`;
/// for raw-score losses it is `mean f_D(D(x)) - mean f_D(D(x~))`. The returned
/// `loss` is the negated objective. The feedback adversary plays no part here.
pub fn disc_loss_grad(
    d_net: &MlpNet,
    real: &Array2<f64>,
    fake: &Array2<f64>,
    loss_d: &LossFn,
) -> Result<DiscEvaluation> {
    let raw = loss_d.domain() == Domain::RealLine;
    let cache_r = d_net.forward(real)?;
    let cache_f = d_net.forward(fake)?;
    let (nr, nf) = (real.nrows() as f64, fake.nrows() as f64);

    let mut objective = 0.0;
    let up_r = cache_r.output().mapv(|y| {
        objective += loss_d.value_at(y) / nr;
        -loss_d.derivative_at(y) / nr
    });
    let up_f = cache_f.output().mapv(|y| {
        if raw {
            objective -= loss_d.value_at(y) / nf;
            loss_d.derivative_at(y) / nf
        } else {
            objective += loss_d.value_at(1.0 - y) / nf;
            loss_d.derivative_at(1.0 - y) / nf
        }
    });
    let mut grads = d_net.backward(&cache_r, &up_r, false)?;
    grads.add_scaled(&d_net.backward(&cache_f, &up_f, false)?, 1.0);
    Ok(DiscEvaluation {
        loss: -objective,
        grads,
        real_mean: cache_r.output().mean().unwrap_or(f64::NAN),
        fake_mean: cache_f.output().mean().unwrap_or(f64::NAN),
    })
}

/// Which perturbations the generator's feedback passes through.
#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    /// No adversary layer at all.
    Direct,
    /// One perturbation for the whole batch.
    Batch(&'a Perturbation),
    /// One perturbation per sample.
    PerSample(&'a [Perturbation]),
}

impl Feedback<'_> {
    fn get(&self, i: usize) -> Option<&Perturbation> {
        match self {
            Feedback::Direct => None,
            Feedback::Batch(p) => Some(p),
            Feedback::PerSample(ps) => Some(&ps[i]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenEvaluation {
    pub loss: f64,
    pub grads: GradBundle,
    pub fake_mean: f64,
}

/// Generator loss and its gradient w.r.t. the generator parameters. Gradients
/// flow through the perturbation's derivative, then the discriminator, then
/// the generator.
pub fn gen_loss_grad(
    g_net: &MlpNet,
    d_net: &MlpNet,
    z: &Array2<f64>,
    loss_g: &LossFn,
    feedback: Feedback<'_>,
) -> Result<GenEvaluation> {
    let raw = loss_g.domain() == Domain::RealLine;
    if let Feedback::PerSample(ps) = feedback {
        if ps.len() != z.nrows() {
            return Err(Error::Shape(format!("{} perturbations for {} samples", ps.len(), z.nrows())));
        }
    }
    let cache_g = g_net.forward(z)?;
    let cache_d = d_net.forward(cache_g.output())?;
    let n = z.nrows() as f64;

    let mut loss = 0.0;
    let mut upstream = cache_d.output().clone();
    for (i, y) in upstream.iter_mut().enumerate() {
        let d = *y;
        *y = if raw {
            loss -= loss_g.value_at(d) / n;
            -loss_g.derivative_at(d) / n
        } else {
            match feedback.get(i) {
                None => {
                    loss += loss_g.value_at(1.0 - d) / n;
                    -loss_g.derivative_at(1.0 - d) / n
                }
                Some(psi) => {
                    let seen = psi.apply(d);
                    loss += loss_g.value_at(1.0 - seen) / n;
                    -loss_g.derivative_at(1.0 - seen) * psi.derivative(d) / n
                }
            }
        };
    }
    let to_samples = d_net.backward_input(&cache_d, &upstream)?;
    let grads = g_net.backward(&cache_g, &to_samples, false)?;
    Ok(GenEvaluation {
        loss,
        grads,
        fake_mean: cache_d.output().mean().unwrap_or(f64::NAN),
    })
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub perturbation_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub step: usize,
    pub modes_learned: usize,
    pub tv_to_uniform: f64,
}

/// Outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub modes_learned: usize,
    pub success: bool,
    pub steps_to_success: Option<usize>,
    pub tv_to_uniform: f64,
    pub failed: bool,
    pub steps_completed: usize,
    pub checkpoints: Vec<CheckpointScore>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: Vec<LogRecord>,
    pub generator: MlpNet,
    pub discriminator: MlpNet,
    /// Generator samples used for the final score.
    pub samples: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepValues {
    pub loss: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// Mutable state of one training run.
pub struct Trainer<S: DataSampler> {
    config: TrainConfig,
    sampler: S,
    loss_d: LossFn,
    loss_g: LossFn,
    adversary: Adversary,
    generator: MlpNet,
    discriminator: MlpNet,
    g_opt: OptimizerState,
    d_opt: OptimizerState,
    batch_rng: ChaCha8Rng,
    adversary_rng: ChaCha8Rng,
    penalty_rng: ChaCha8Rng,
    eval_latent: Array2<f64>,
    step: usize,
    non_finite_streak: u32,
    failed: bool,
}

impl<S: DataSampler> Trainer<S> {
    pub fn new(config: TrainConfig, sampler: S) -> Result<Self> {
        config.validate()?;
        if sampler.dim() != 2 {
            return Err(Error::InvalidConfig("the generator emits 2-d samples".into()));
        }
        let loss_d = catalog_get(&config.loss_d)?;
        let loss_g = catalog_get(&config.loss_g)?;
        let adversary = config.adversary.build()?.with_seed(config.seed);
        let generator = MlpNet::init_with(&config.generator_spec(), &mut stream(config.seed, STREAM_INIT_G))?;
        let discriminator =
            MlpNet::init_with(&config.discriminator_spec()?, &mut stream(config.seed, STREAM_INIT_D))?;
        let g_opt = OptimizerState::new(config.g_optimizer.build()?, &generator);
        let d_opt = OptimizerState::new(config.d_optimizer.build()?, &discriminator);
        let eval_latent = sample_latent(
            config.latent,
            config.eval_samples,
            config.latent_dim,
            &mut stream(config.seed, STREAM_EVAL),
        );
        Ok(Self {
            batch_rng: stream(config.seed, STREAM_BATCHES),
            adversary_rng: stream(config.seed, STREAM_ADVERSARY),
            penalty_rng: stream(config.seed, STREAM_PENALTY),
            config,
            sampler,
            loss_d,
            loss_g,
            adversary,
            generator,
            discriminator,
            g_opt,
            d_opt,
            eval_latent,
            step: 0,
            non_finite_streak: 0,
            failed: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &MlpNet {
        &self.generator
    }

    pub fn discriminator(&self) -> &MlpNet {
        &self.discriminator
    }

    pub fn generator_mut(&mut self) -> &mut MlpNet {
        &mut self.generator
    }

    pub fn discriminator_mut(&mut self) -> &mut MlpNet {
        &mut self.discriminator
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    fn latent(&mut self, n: usize) -> Array2<f64> {
        sample_latent(self.config.latent, n, self.config.latent_dim, &mut self.batch_rng)
    }

    fn record_finite(&mut self, finite: bool) {
        if finite {
            self.non_finite_streak = 0;
        } else {
            self.non_finite_streak += 1;
            if self.non_finite_streak >= MAX_CONSECUTIVE_NON_FINITE {
                self.failed = true;
            }
        }
    }

    /// Clips the discriminator (when enabled) and takes one update on its loss.
    pub fn disc_step(&mut self) -> Result<StepValues> {
        clip(&mut self.discriminator, self.config.clip);
        let m = self.config.batch_size;
        let real = self.sampler.sample(m, &mut self.batch_rng);
        let z = self.latent(m);
        let fake = self.generator.predict(&z)?;
        let mut eval = disc_loss_grad(&self.discriminator, &real, &fake, &self.loss_d)?;
        if let Some(lambda) = self.config.gp_lambda {
            match gradient_penalty(&self.discriminator, &real, &fake, &mut self.penalty_rng) {
                Ok((penalty, pgrads)) => {
                    eval.loss += lambda * penalty;
                    eval.grads.add_scaled(&pgrads, lambda);
                }
                Err(Error::NonFinite(_)) => eval.loss = f64::NAN,
                Err(e) => return Err(e),
            }
        }
        let finite = eval.loss.is_finite()
            && match self.d_opt.step(&mut self.discriminator, &eval.grads) {
                Ok(()) => true,
                Err(Error::NonFinite(_)) => false,
                Err(e) => return Err(e),
            };
        self.record_finite(finite);
        Ok(StepValues {
            loss: eval.loss,
            real_mean: eval.real_mean,
            fake_mean: eval.fake_mean,
        })
    }

    /// One generator update through a freshly sampled perturbation. Returns the
    /// loss and the name of the perturbation used.
    pub fn gen_step(&mut self) -> Result<(StepValues, &'static str)> {
        let m = self.config.batch_size;
        let z = self.latent(m);
        let (eval, name) = match self.config.perturbation_mode {
            PerturbationMode::PerStep => {
                let i = self.adversary.sample(&mut self.adversary_rng);
                let psi = *self.adversary.perturbation(i);
                let eval = gen_loss_grad(&self.generator, &self.discriminator, &z, &self.loss_g, Feedback::Batch(&psi))?;
                (eval, psi.name())
            }
            PerturbationMode::PerSample => {
                let psis: Vec<Perturbation> = (0..m)
                    .map(|_| *self.adversary.perturbation(self.adversary.sample(&mut self.adversary_rng)))
                    .collect();
                let eval =
                    gen_loss_grad(&self.generator, &self.discriminator, &z, &self.loss_g, Feedback::PerSample(&psis))?;
                (eval, "per_sample")
            }
        };
        let finite = eval.loss.is_finite()
            && match self.g_opt.step(&mut self.generator, &eval.grads) {
                Ok(()) => true,
                Err(Error::NonFinite(_)) => false,
                Err(e) => return Err(e),
            };
        self.record_finite(finite);
        Ok((
            StepValues {
                loss: eval.loss,
                real_mean: f64::NAN,
                fake_mean: eval.fake_mean,
            },
            name,
        ))
    }

    /// Samples the fixed evaluation latents through the current generator.
    pub fn eval_samples(&self) -> Result<Array2<f64>> {
        self.generator.predict(&self.eval_latent)
    }

    pub fn score(&self) -> Result<Score> {
        let samples = self.eval_samples()?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Ok(Score {
                modes_learned: 0,
                success: false,
                tv_to_uniform: 1.0,
            });
        }
        score_run(&samples, &self.config.ring)
    }

    /// Runs every remaining step: `n_d` discriminator updates, then one
    /// generator update. Scores the generator at every checkpoint interval.
    pub fn run(mut self) -> Result<RunOutput> {
        let mut log = Vec::new();
        let mut checkpoints = Vec::new();
        let mut steps_to_success = None;
        while self.step < self.config.total_steps && !self.failed {
            let mut d = None;
            for _ in 0..self.config.n_d {
                d = Some(self.disc_step()?);
                if self.failed {
                    break;
                }
            }
            if self.failed {
                break;
            }
            let (g, name) = self.gen_step()?;
            self.step += 1;
            let d = d.expect("n_d >= 1");
            if self.step % self.config.log_interval == 0 {
                log.push(LogRecord {
                    step: self.step,
                    d_loss: d.loss,
                    g_loss: g.loss,
                    d_real_mean: d.real_mean,
                    d_fake_mean: d.fake_mean,
                    perturbation_name: name.to_string(),
                });
            }
            if self.step % self.config.checkpoint_interval == 0 {
                let s = self.score()?;
                checkpoints.push(CheckpointScore {
                    step: self.step,
                    modes_learned: s.modes_learned,
                    tv_to_uniform: s.tv_to_uniform,
                });
                if s.success && steps_to_success.is_none() {
                    steps_to_success = Some(self.step);
                }
            }
        }
        let samples = self.eval_samples()?;
        let score = self.score()?;
        Ok(RunOutput {
            metrics: RunMetrics {
                modes_learned: score.modes_learned,
                success: score.success,
                steps_to_success,
                tv_to_uniform: score.tv_to_uniform,
                failed: self.failed,
                steps_completed: self.step,
                checkpoints,
            },
            log,
            generator: self.generator,
            discriminator: self.discriminator,
            samples,
        })
    }
}

/// Trains on the ring described by `config.ring`.
pub fn run(config: &TrainConfig) -> Result<RunOutput> {
    let ring = config.ring;
    Trainer::new(config.clone(), ring)?.run()
}
