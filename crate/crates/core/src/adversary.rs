//! Perturbations of discriminator feedback and adversaries that mix them.
//!
//! An [`Adversary`] is a finite probability mixture over [`Perturbation`]s. The
//! generator sees `psi(D(x))` for a sampled `psi`; the discriminator's own
//! training signal is never touched.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved name of the honest perturbation `psi(y) = y`.
pub const IDENTITY: &str = "identity";

/// Names accepted by [`Perturbation::by_name`].
pub const REGISTRY: [&str; 4] = [IDENTITY, "flip", "sqrt", "square"];

const PROB_TOL: f64 = 1e-12;
const CONDITION_TOL: f64 = 1e-12;
// Keeps the sqrt derivative finite at 0.
const SQRT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
    Other,
}

/// A map `[0, 1] -> [0, 1]` applied to discriminator outputs.
#[derive(Clone, Copy)]
pub struct Perturbation {
    name: &'static str,
    apply: fn(f64) -> f64,
    derivative: fn(f64) -> f64,
    monotonicity: Monotonicity,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Perturbation({})", self.name)
    }
}

impl PartialEq for Perturbation {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Perturbation {
    pub fn new(
        name: &'static str,
        apply: fn(f64) -> f64,
        derivative: fn(f64) -> f64,
        monotonicity: Monotonicity,
    ) -> Self {
        Self {
            name,
            apply,
            derivative,
            monotonicity,
        }
    }

    pub fn identity() -> Self {
        Self::new(IDENTITY, |y| y, |_| 1.0, Monotonicity::NonDecreasing)
    }

    pub fn flip() -> Self {
        Self::new("flip", |y| 1.0 - y, |_| -1.0, Monotonicity::NonIncreasing)
    }

    pub fn sqrt() -> Self {
        Self::new(
            "sqrt",
            |y| y.max(0.0).sqrt(),
            |y| 0.5 / y.max(SQRT_FLOOR).sqrt(),
            Monotonicity::NonDecreasing,
        )
    }

    pub fn square() -> Self {
        Self::new("square", |y| y * y, |y| 2.0 * y, Monotonicity::NonDecreasing)
    }

    /// `3y^2 - 2y^3`: non-decreasing with a fixed point at 1/2.
    pub fn smoothstep() -> Self {
        Self::new(
            "smoothstep",
            |y| y * y * (3.0 - 2.0 * y),
            |y| 6.0 * y * (1.0 - y),
            Monotonicity::NonDecreasing,
        )
    }

    /// `3/4 - y/2`: a contracted flip, non-increasing through (1/2, 1/2).
    pub fn half_flip() -> Self {
        Self::new(
            "half_flip",
            |y| 0.75 - 0.5 * y,
            |_| -0.5,
            Monotonicity::NonIncreasing,
        )
    }

    /// Looks up one of the perturbations usable from configuration files.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            IDENTITY => Ok(Self::identity()),
            "flip" => Ok(Self::flip()),
            "sqrt" => Ok(Self::sqrt()),
            "square" => Ok(Self::square()),
            other => Err(Error::UnknownPerturbation(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn is_identity(&self) -> bool {
        self.name == IDENTITY
    }

    #[inline]
    pub fn apply(&self, y: f64) -> f64 {
        (self.apply)(y)
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        (self.derivative)(y)
    }

    /// True when every output on a uniform grid of `grid_size` points lies in `[0, 1]`.
    pub fn maps_into_unit_interval(&self, grid_size: usize) -> bool {
        let n = grid_size.max(2) - 1;
        (0..=n).all(|i| {
            let v = self.apply(i as f64 / n as f64);
            (0.0..=1.0).contains(&v)
        })
    }
}

/// Finite mixture of perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    components: Vec<(Perturbation, f64)>,
    rng_seed: u64,
}

impl Adversary {
    pub fn new(components: Vec<(Perturbation, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidAdversary("no components".into()));
        }
        for (psi, p) in &components {
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::InvalidAdversary(format!(
                    "probability {p} of `{}` is negative or not finite",
                    psi.name()
                )));
            }
        }
        let total: f64 = components.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidAdversary(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            components,
            rng_seed: 0,
        })
    }

    pub fn honest() -> Self {
        Self::new(vec![(Perturbation::identity(), 1.0)]).expect("valid")
    }

    /// Flips the feedback to `1 - y` with probability `p`.
    pub fn flipping(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Self::new(vec![
            (Perturbation::flip(), p),
            (Perturbation::identity(), 1.0 - p),
        ])
    }

    /// Flip, square root and square with probability 0.1 each; honest otherwise.
    pub fn composite_mnist() -> Self {
        Self::new(vec![
            (Perturbation::flip(), 0.1),
            (Perturbation::sqrt(), 0.1),
            (Perturbation::square(), 0.1),
            (Perturbation::identity(), 0.7),
        ])
        .expect("valid")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn components(&self) -> &[(Perturbation, f64)] {
        &self.components
    }

    pub fn perturbation(&self, index: usize) -> &Perturbation {
        &self.components[index].0
    }

    /// Total probability on the identity perturbation.
    pub fn honest_mass(&self) -> f64 {
        self.components
            .iter()
            .filter(|(psi, _)| psi.is_identity())
            .map(|(_, p)| p)
            .sum()
    }

    /// Probability that the feedback is altered.
    pub fn error_probability(&self) -> f64 {
        self.components
            .iter()
            .filter(|(psi, _)| !psi.is_identity())
            .map(|(_, p)| p)
            .sum()
    }

    /// Identity mass strictly above one half.
    pub fn is_mostly_honest(&self) -> bool {
        self.honest_mass() > 0.5
    }

    /// Draws a component index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.components.len() == 1 {
            return 0;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, (_, p)) in self.components.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        self.components
            .iter()
            .rposition(|(_, p)| *p > 0.0)
            .unwrap_or(0)
    }

    /// A sampler seeded from this adversary's `rng_seed`.
    pub fn sampler(&self) -> AdversarySampler<'_> {
        AdversarySampler {
            adversary: self,
            rng: ChaCha8Rng::seed_from_u64(self.rng_seed),
        }
    }
}

/// Seeded stream of component indices.
pub struct AdversarySampler<'a> {
    adversary: &'a Adversary,
    rng: ChaCha8Rng,
}

impl Iterator for AdversarySampler<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.adversary.sample(&mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionReport {
    /// Non-decreasing with a fixed point at 1/2.
    pub cond1: bool,
    /// Non-increasing with a fixed point at 1/2, `psi(t) + t >= 1` above 1/2 and
    /// `<= 1` below.
    pub cond2: bool,
}

impl ConditionReport {
    pub fn any(&self) -> bool {
        self.cond1 || self.cond2
    }
}

/// Grid check of the two perturbation conditions under which the log
/// discriminator with a class-H generator loss stays robust.
pub fn classify_theorem1(psi: &Perturbation, grid_size: usize) -> ConditionReport {
    assert!(grid_size >= 3, "grid_size must be at least 3");
    let n = grid_size - 1;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| psi.apply(t)).collect();

    let fixed_mid = (psi.apply(0.5) - 0.5).abs() <= CONDITION_TOL;
    let non_decreasing = vals.windows(2).all(|w| w[1] >= w[0] - CONDITION_TOL);
    let non_increasing = vals.windows(2).all(|w| w[1] <= w[0] + CONDITION_TOL);
    let dominates_flip = grid.iter().zip(&vals).all(|(&t, &v)| {
        if t > 0.5 {
            v + t >= 1.0 - CONDITION_TOL
        } else if t < 0.5 {
            v + t <= 1.0 + CONDITION_TOL
        } else {
            true
        }
    });

    ConditionReport {
        cond1: fixed_mid && non_decreasing,
        cond2: fixed_mid && non_increasing && dominates_flip,
    }
}

/// Serialized adversary description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    Flipping { p: f64 },
    Composite { components: Vec<ComponentSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    pub p: f64,
}

impl AdversarySpec {
    pub fn honest() -> Self {
        AdversarySpec::Flipping { p: 0.0 }
    }

    pub fn composite_mnist() -> Self {
        let c = |name: &str, p| ComponentSpec {
            name: name.into(),
            p,
        };
        AdversarySpec::Composite {
            components: vec![c("flip", 0.1), c("sqrt", 0.1), c("square", 0.1), c(IDENTITY, 0.7)],
        }
    }

    pub fn build(&self) -> Result<Adversary> {
        match self {
            AdversarySpec::Flipping { p } => Adversary::flipping(*p),
            AdversarySpec::Composite { components } => Adversary::new(
                components
                    .iter()
                    .map(|c| Ok((Perturbation::by_name(&c.name)?, c.p)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }
}
