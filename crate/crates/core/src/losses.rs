//! Loss-function catalog for the discriminator and generator objectives.
//!
//! Every member carries a closed-form value and derivative. Members tagged
//! [`Family::ClassH`] live on `[0, 1]`, are strictly increasing and odd around
//! `1/2`; members tagged [`Family::ClassHHat`] live on the real line and are odd
//! around `0`. The floored logarithm is the standard GAN loss.

use std::fmt;

use crate::error::{Error, Result};

/// Smallest argument the logarithm is evaluated at.
pub const LOG_FLOOR: f64 = 1e-12;

/// Absolute tolerance used by the membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    UnitInterval,
    RealLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    ClassH,
    ClassHHat,
    LogLoss,
}

/// A scalar loss with its derivative.
#[derive(Clone, Copy)]
pub struct LossFn {
    name: &'static str,
    domain: Domain,
    family: Family,
    value: fn(f64) -> f64,
    derivative: fn(f64) -> f64,
}

impl fmt::Debug for LossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossFn")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("family", &self.family)
            .finish()
    }
}

impl PartialEq for LossFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.domain == other.domain && self.family == other.family
    }
}

/// Names accepted by [`catalog_get`].
pub const CATALOG: [&str; 9] = [
    "linear_h",
    "piecewise_h",
    "cube_h",
    "tanh_h",
    "log",
    "linear_hhat",
    "tanh_hhat",
    "erf_hhat",
    "sqrt_hhat",
];

impl LossFn {
    /// Builds a loss outside the catalog. Intended for tests and experiments
    /// that need a function the catalog does not carry.
    pub fn custom(
        name: &'static str,
        domain: Domain,
        family: Family,
        value: fn(f64) -> f64,
        derivative: fn(f64) -> f64,
    ) -> Self {
        Self {
            name,
            domain,
            family,
            value,
            derivative,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn family(&self) -> Family {
        self.family
    }

    #[inline]
    pub fn value_at(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn derivative_at(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// Points where a piecewise member is not differentiable.
    pub fn joints(&self) -> &'static [f64] {
        match self.name {
            "piecewise_h" => &[0.25, 0.75],
            "sqrt_hhat" => &[-0.25, 0.25],
            "log" => &[LOG_FLOOR],
            _ => &[],
        }
    }
}

/// Looks up a catalog member by name.
pub fn catalog_get(name: &str) -> Result<LossFn> {
    use Domain::*;
    use Family::*;
    let loss = match name {
        "linear_h" => LossFn::custom("linear_h", UnitInterval, ClassH, linear_h, |_| 1.0),
        "piecewise_h" => LossFn::custom(
            "piecewise_h",
            UnitInterval,
            ClassH,
            piecewise_h,
            piecewise_h_prime,
        ),
        "cube_h" => LossFn::custom("cube_h", UnitInterval, ClassH, cube_h, cube_h_prime),
        "tanh_h" => LossFn::custom("tanh_h", UnitInterval, ClassH, tanh_h, tanh_h_prime),
        "log" => LossFn::custom("log", UnitInterval, LogLoss, floored_ln, floored_ln_prime),
        "linear_hhat" => LossFn::custom("linear_hhat", RealLine, ClassHHat, |x| x, |_| 1.0),
        "tanh_hhat" => LossFn::custom(
            "tanh_hhat",
            RealLine,
            ClassHHat,
            tanh_hhat,
            tanh_hhat_prime,
        ),
        "erf_hhat" => LossFn::custom("erf_hhat", RealLine, ClassHHat, erf_hhat, erf_hhat_prime),
        "sqrt_hhat" => LossFn::custom(
            "sqrt_hhat",
            RealLine,
            ClassHHat,
            sqrt_hhat,
            sqrt_hhat_prime,
        ),
        other => return Err(Error::UnknownLoss(other.to_string())),
    };
    Ok(loss)
}

fn linear_h(t: f64) -> f64 {
    t - 0.5
}

// Slope 2 on [1/4, 3/4], slope 1/2 outside, continuous and odd around 1/2.
fn piecewise_h(t: f64) -> f64 {
    let u = t - 0.5;
    let a = u.abs();
    let mag = if a <= 0.25 { 2.0 * a } else { 0.5 + 0.5 * (a - 0.25) };
    mag.copysign(u)
}

fn piecewise_h_prime(t: f64) -> f64 {
    if (t - 0.5).abs() <= 0.25 {
        2.0
    } else {
        0.5
    }
}

fn cube_h(t: f64) -> f64 {
    (t - 0.5).powi(3)
}

fn cube_h_prime(t: f64) -> f64 {
    3.0 * (t - 0.5).powi(2)
}

fn tanh_h(t: f64) -> f64 {
    0.5 * (4.0 * (t - 0.5)).tanh()
}

fn tanh_h_prime(t: f64) -> f64 {
    let th = (4.0 * (t - 0.5)).tanh();
    2.0 * (1.0 - th * th)
}

fn floored_ln(t: f64) -> f64 {
    t.max(LOG_FLOOR).ln()
}

fn floored_ln_prime(t: f64) -> f64 {
    if t > LOG_FLOOR {
        1.0 / t
    } else {
        0.0
    }
}

fn tanh_hhat(x: f64) -> f64 {
    3.0 * (0.15 * x).tanh()
}

fn tanh_hhat_prime(x: f64) -> f64 {
    let th = (0.15 * x).tanh();
    0.45 * (1.0 - th * th)
}

fn erf_hhat(x: f64) -> f64 {
    5.0 * libm::erf(0.1 * x)
}

fn erf_hhat_prime(x: f64) -> f64 {
    let u = 0.1 * x;
    5.0 * 0.1 * std::f64::consts::FRAC_2_SQRT_PI * (-u * u).exp()
}

fn sqrt_hhat(x: f64) -> f64 {
    if x.abs() <= 0.25 {
        2.0 * x
    } else {
        x.abs().sqrt().copysign(x)
    }
}

fn sqrt_hhat_prime(x: f64) -> f64 {
    if x.abs() <= 0.25 {
        2.0
    } else {
        0.5 / x.abs().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    NotIncreasing,
    NotOdd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub is_member: bool,
    pub violations: Vec<Violation>,
}

fn membership(f: &LossFn, grid: &[f64], center: f64) -> MembershipReport {
    let mut violations = Vec::new();
    for w in grid.windows(2) {
        if f.value_at(w[1]) <= f.value_at(w[0]) {
            violations.push(Violation {
                kind: ViolationKind::NotIncreasing,
                at: w[0],
            });
        }
    }
    for &x in grid {
        let mirror = 2.0 * center - x;
        if (f.value_at(x) + f.value_at(mirror)).abs() > MEMBERSHIP_TOL {
            violations.push(Violation {
                kind: ViolationKind::NotOdd,
                at: x,
            });
        }
    }
    MembershipReport {
        is_member: violations.is_empty(),
        violations,
    }
}

/// Grid check of the class H conditions on `[0, 1]`: strictly increasing and
/// `f(t) = -f(1 - t)`.
pub fn check_class_h(f: &LossFn, grid_size: usize) -> MembershipReport {
    assert!(grid_size >= 3, "grid_size must be at least 3");
    let n = grid_size - 1;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    membership(f, &grid, 0.5)
}

/// Grid check of the class H-hat conditions on `[-radius, radius]`: strictly
/// increasing and `f(x) = -f(-x)`.
pub fn check_class_hhat(f: &LossFn, grid_radius: f64, grid_size: usize) -> MembershipReport {
    assert!(grid_radius > 0.0, "grid_radius must be positive");
    assert!(grid_size >= 3, "grid_size must be at least 3");
    let n = grid_size - 1;
    let grid: Vec<f64> = (0..=n)
        .map(|i| -grid_radius + 2.0 * grid_radius * i as f64 / n as f64)
        .collect();
    membership(f, &grid, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_values() {
        assert_eq!(catalog_get("tanh_hhat").unwrap().value_at(0.0), 0.0);
        assert_eq!(catalog_get("linear_h").unwrap().value_at(0.5), 0.0);
        let s = catalog_get("sqrt_hhat").unwrap();
        assert_eq!(s.value_at(0.25), 0.5);
        assert_eq!(s.value_at(1.0), 1.0);
        assert_eq!(s.value_at(-1.0), -1.0);
        // continuous at the joints
        assert!((s.value_at(0.25 + 1e-12) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unknown_name() {
        assert_eq!(
            catalog_get("hinge").unwrap_err(),
            Error::UnknownLoss("hinge".into())
        );
    }

    #[test]
    fn families_and_domains() {
        for name in CATALOG {
            let f = catalog_get(name).unwrap();
            assert_eq!(f.name(), name);
            match f.family() {
                Family::ClassHHat => assert_eq!(f.domain(), Domain::RealLine),
                _ => assert_eq!(f.domain(), Domain::UnitInterval),
            }
        }
        assert_eq!(catalog_get("log").unwrap().family(), Family::LogLoss);
    }

    #[test]
    fn class_h_examples() {
        assert!(check_class_h(&catalog_get("linear_h").unwrap(), 101).is_member);
        assert!(check_class_h(&catalog_get("cube_h").unwrap(), 101).is_member);

        let log = check_class_h(&catalog_get("log").unwrap(), 101);
        assert!(!log.is_member);
        assert!(log
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::NotOdd && v.at == 0.5));
    }

    #[test]
    fn class_hhat_examples() {
        assert!(check_class_hhat(&catalog_get("erf_hhat").unwrap(), 10.0, 201).is_member);
        assert!(check_class_hhat(&catalog_get("linear_hhat").unwrap(), 10.0, 201).is_member);
        let square = LossFn::custom(
            "square",
            Domain::RealLine,
            Family::ClassHHat,
            |x| x * x,
            |x| 2.0 * x,
        );
        let report = check_class_hhat(&square, 1.0, 101);
        assert!(!report.is_member);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::NotIncreasing));
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::NotOdd));
    }

    #[test]
    fn tagged_members_pass_their_check() {
        for name in CATALOG {
            let f = catalog_get(name).unwrap();
            match f.family() {
                Family::ClassH => {
                    let r = check_class_h(&f, 1001);
                    assert!(r.is_member, "{name}: {:?}", &r.violations[..1]);
                }
                Family::ClassHHat => {
                    let r = check_class_hhat(&f, 20.0, 1001);
                    assert!(r.is_member, "{name}: {:?}", &r.violations[..1]);
                }
                Family::LogLoss => {}
            }
        }
    }

    #[test]
    fn class_h_oddness_is_tight() {
        for name in ["linear_h", "piecewise_h", "cube_h", "tanh_h"] {
            let f = catalog_get(name).unwrap();
            for i in 0..=1000 {
                let t = i as f64 / 1000.0;
                assert!((f.value_at(t) + f.value_at(1.0 - t)).abs() <= 1e-12, "{name} at {t}");
            }
        }
    }

    #[test]
    fn log_is_floored() {
        let log = catalog_get("log").unwrap();
        assert_eq!(log.value_at(0.0), LOG_FLOOR.ln());
        assert!(log.value_at(0.0).is_finite());
        assert_eq!(log.derivative_at(0.0), 0.0);
        assert_eq!(log.value_at(1.0), 0.0);
    }
}
