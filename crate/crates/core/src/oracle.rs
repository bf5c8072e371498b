//! Exact finite-support evaluation of the perturbed GAN objectives.
//!
//! Distributions live on a shared support of `K` atoms, so every expectation is
//! a finite sum. The brute-force search enumerates all generator distributions
//! on a rational simplex grid and plugs in the optimal discriminator for each.

use crate::adversary::Adversary;
use crate::error::{Error, Result};
use crate::losses::{Domain, Family, LossFn};

const SUM_TOL: f64 = 1e-12;

/// Upper bound on the number of candidates the grid search will enumerate.
pub const MAX_CANDIDATES: u128 = 10_000_000;

/// Probability vector over `K` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// `counts[k] / total` for each atom; the counts must add up to `total`.
    pub fn from_counts(counts: &[u32], total: u32) -> Result<Self> {
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 || sum != total as u64 {
            return Err(Error::InvalidDistribution(format!(
                "counts sum to {sum}, expected {total}"
            )));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// One discriminator output per atom, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorProfile {
    values: Vec<f64>,
}

impl DiscriminatorProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDistribution(format!(
                "discriminator value {v} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// `KL(p || q)` in nats. Returns `f64::INFINITY` when `p` puts mass where `q` has none.
pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (&pk, &qk) in p.probs.iter().zip(&q.probs) {
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pk * (pk / qk).ln();
    }
    Ok(total)
}

/// Jensen-Shannon divergence in nats, always within `[0, ln 2]`.
pub fn jsd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let m = DiscreteDist {
        probs: p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect(),
    };
    Ok(0.5 * kl(p, &m)? + 0.5 * kl(q, &m)?)
}

/// Optimal discriminator for the log loss, `p_data / (p_data + p_g)`.
/// Atoms outside both supports get 1/2.
pub fn optimal_disc_log(p_data: &DiscreteDist, p_g: &DiscreteDist) -> Result<DiscriminatorProfile> {
    same_support(p_data, p_g)?;
    let values = p_data
        .probs
        .iter()
        .zip(&p_g.probs)
        .map(|(&a, &b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect();
    Ok(DiscriminatorProfile { values })
}

/// Optimal discriminator for a class-H loss: 1 where data dominates, 0 where
/// the generator dominates, 1/2 on ties.
pub fn optimal_disc_h(p_data: &DiscreteDist, p_g: &DiscreteDist) -> Result<DiscriminatorProfile> {
    same_support(p_data, p_g)?;
    let values = p_data
        .probs
        .iter()
        .zip(&p_g.probs)
        .map(|(&a, &b)| {
            if a > b {
                1.0
            } else if a < b {
                0.0
            } else {
                0.5
            }
        })
        .collect();
    Ok(DiscriminatorProfile { values })
}

/// Closed form of the log generator objective under a flipping adversary with
/// error probability `p` at the optimal discriminator:
/// `2 JSD - ln 4 - p (KL(data || g) + KL(g || data))`.
pub fn lemma1_objective(p_data: &DiscreteDist, p_g: &DiscreteDist, p: f64) -> Result<f64> {
    let js = jsd(p_data, p_g)?;
    let base = 2.0 * js - 4f64.ln();
    if p == 0.0 {
        return Ok(base);
    }
    let sym = kl(p_data, p_g)? + kl(p_g, p_data)?;
    Ok(base - p * sym)
}

fn require_unit_interval(f: &LossFn) -> Result<()> {
    if f.domain() != Domain::UnitInterval {
        return Err(Error::LossDomain {
            name: f.name().into(),
            reason: "expects a loss defined on [0, 1]".into(),
        });
    }
    Ok(())
}

/// Discriminator objective `sum_k f_D(d_k) p_data_k + f_D(1 - d_k) p_g_k`.
pub fn disc_objective(
    p_data: &DiscreteDist,
    p_g: &DiscreteDist,
    d: &DiscriminatorProfile,
    f_d: &LossFn,
) -> Result<f64> {
    same_support(p_data, p_g)?;
    require_unit_interval(f_d)?;
    check_profile(d, p_data.len())?;
    Ok(d.values
        .iter()
        .zip(p_data.probs.iter().zip(&p_g.probs))
        .map(|(&dk, (&a, &b))| f_d.value_at(dk) * a + f_d.value_at(1.0 - dk) * b)
        .sum())
}

fn check_profile(d: &DiscriminatorProfile, k: usize) -> Result<()> {
    if d.values.len() != k {
        return Err(Error::SupportMismatch(d.values.len(), k));
    }
    Ok(())
}

/// The generator objective under an adversary, summed exactly:
/// `sum_i p_i sum_k [f_G(psi_i(d_k)) p_data_k + f_G(1 - psi_i(d_k)) p_g_k]`.
pub fn perturbed_gen_objective_direct(
    p_data: &DiscreteDist,
    p_g: &DiscreteDist,
    d: &DiscriminatorProfile,
    f_g: &LossFn,
    adversary: &Adversary,
) -> Result<f64> {
    same_support(p_data, p_g)?;
    require_unit_interval(f_g)?;
    check_profile(d, p_data.len())?;
    let mut total = 0.0;
    for (psi, weight) in adversary.components() {
        let mut inner = 0.0;
        for (&dk, (&a, &b)) in d.values.iter().zip(p_data.probs.iter().zip(&p_g.probs)) {
            let y = psi.apply(dk);
            inner += f_g.value_at(y) * a + f_g.value_at(1.0 - y) * b;
        }
        total += weight * inner;
    }
    Ok(total)
}

/// Honest-dominant and perturbation terms of the generator objective for a
/// class-H generator loss. Their sum equals
/// [`perturbed_gen_objective_direct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub v1: f64,
    pub v2: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.v1 + self.v2
    }
}

pub fn v1_v2_decomposition(
    p_data: &DiscreteDist,
    p_g: &DiscreteDist,
    d: &DiscriminatorProfile,
    f_g: &LossFn,
    adversary: &Adversary,
) -> Result<Decomposition> {
    same_support(p_data, p_g)?;
    check_profile(d, p_data.len())?;
    if f_g.family() != Family::ClassH {
        return Err(Error::LossDomain {
            name: f_g.name().into(),
            reason: "decomposition needs a class-H generator loss".into(),
        });
    }
    if !adversary.components().iter().any(|(psi, _)| psi.is_identity()) {
        return Err(Error::MissingIdentity);
    }

    let gap: Vec<f64> = p_data.probs.iter().zip(&p_g.probs).map(|(a, b)| a - b).collect();
    let honest: f64 = d.values.iter().zip(&gap).map(|(&dk, g)| f_g.value_at(dk) * g).sum();

    let p1 = adversary.honest_mass();
    let rest = adversary.error_probability();
    let v1 = (p1 - rest) * honest;

    let mut v2 = 0.0;
    for (psi, weight) in adversary.components().iter().filter(|(psi, _)| !psi.is_identity()) {
        let term: f64 = d
            .values
            .iter()
            .zip(&gap)
            .map(|(&dk, g)| (f_g.value_at(psi.apply(dk)) + f_g.value_at(dk)) * g)
            .sum();
        v2 += weight * term;
    }
    Ok(Decomposition { v1, v2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub argmin: DiscreteDist,
    /// Grid coordinates of the minimizer, in units of `grid_step`.
    pub argmin_counts: Vec<u32>,
    pub min_value: f64,
    pub candidates: u64,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > MAX_CANDIDATES * 1000 {
            return acc;
        }
    }
    acc
}

/// Number of grid divisions for `grid_step`, if it divides 1 evenly.
pub fn grid_divisions(grid_step: f64) -> Result<u32> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::BadGridStep(grid_step));
    }
    let n = (1.0 / grid_step).round();
    if (n * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::BadGridStep(grid_step));
    }
    Ok(n as u32)
}

/// Visits every composition of `total` into `parts` non-negative integers in
/// lexicographic order.
pub fn for_each_composition(parts: usize, total: u32, mut visit: impl FnMut(&[u32])) {
    fn rec(buf: &mut Vec<u32>, parts: usize, left: u32, visit: &mut impl FnMut(&[u32])) {
        if buf.len() + 1 == parts {
            buf.push(left);
            visit(buf);
            buf.pop();
            return;
        }
        for c in 0..=left {
            buf.push(c);
            rec(buf, parts, left - c, visit);
            buf.pop();
        }
    }
    if parts == 0 {
        return;
    }
    let mut buf = Vec::with_capacity(parts);
    rec(&mut buf, parts, total, &mut visit);
}

/// Exhaustive minimization of the perturbed generator objective over the
/// simplex grid, with the discriminator set to its optimum for `f_d`.
///
/// Candidates are visited in lexicographic order of their grid coordinates and
/// only a strictly smaller value replaces the incumbent, so ties resolve to the
/// lexicographically first candidate.
pub fn brute_force_generator_opt(
    p_data: &DiscreteDist,
    f_d: &LossFn,
    f_g: &LossFn,
    adversary: &Adversary,
    grid_step: f64,
) -> Result<GridOptimum> {
    require_unit_interval(f_g)?;
    let optimal_disc: fn(&DiscreteDist, &DiscreteDist) -> Result<DiscriminatorProfile> =
        match f_d.family() {
            Family::LogLoss => optimal_disc_log,
            Family::ClassH => optimal_disc_h,
            Family::ClassHHat => {
                return Err(Error::LossDomain {
                    name: f_d.name().into(),
                    reason: "discriminator loss must be log or class H".into(),
                })
            }
        };
    let n = grid_divisions(grid_step)?;
    let k = p_data.len();
    let count = binomial(n as u128 + k as u128 - 1, k as u128 - 1);
    if count > MAX_CANDIDATES {
        return Err(Error::GridTooFine(count, MAX_CANDIDATES));
    }

    let mut best: Option<(f64, Vec<u32>)> = None;
    let mut visited = 0u64;
    let mut failure = None;
    for_each_composition(k, n, |counts| {
        if failure.is_some() {
            return;
        }
        visited += 1;
        let p_g = DiscreteDist {
            probs: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        };
        let value = optimal_disc(p_data, &p_g)
            .and_then(|d| perturbed_gen_objective_direct(p_data, &p_g, &d, f_g, adversary));
        match value {
            Ok(v) => {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, counts.to_vec()));
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (min_value, argmin_counts) = best.expect("grid has at least one point");
    Ok(GridOptimum {
        argmin: DiscreteDist::from_counts(&argmin_counts, n)?,
        argmin_counts,
        min_value,
        candidates: visited,
    })
}
