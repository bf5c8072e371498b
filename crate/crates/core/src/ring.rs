//! Ring-of-Gaussians data and mode-coverage scoring.

use std::f64::consts::TAU;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the ring mixture and the thresholds used to score samples against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingSpec {
    pub n_modes: usize,
    pub radius: f64,
    pub component_std: f64,
    /// A sample within this distance of a center belongs to that mode.
    pub capture_radius: f64,
    /// Share of non-outlier samples a mode needs to count as learned.
    pub min_mode_fraction: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            n_modes: 8,
            radius: 2.0,
            component_std: 0.02,
            capture_radius: 0.3,
            min_mode_fraction: 0.01,
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::InvalidConfig("ring needs at least one mode".into()));
        }
        if !(self.radius > 0.0 && self.component_std > 0.0 && self.capture_radius > 0.0) {
            return Err(Error::InvalidConfig(
                "ring radius, component std and capture radius must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_mode_fraction) {
            return Err(Error::InvalidConfig("min_mode_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn center(&self, k: usize) -> (f64, f64) {
        let angle = TAU * k as f64 / self.n_modes as f64;
        (self.radius * angle.cos(), self.radius * angle.sin())
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        (0..self.n_modes).map(|k| self.center(k)).collect()
    }
}

/// `n` points, each a uniformly chosen center plus isotropic Gaussian noise.
pub fn sample_ring<R: Rng + ?Sized>(spec: &RingSpec, n: usize, rng: &mut R) -> Array2<f64> {
    let centers = spec.centers();
    let mut out = Array2::zeros((n, 2));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let (cx, cy) = centers[rng.gen_range(0..spec.n_modes)];
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        row[0] = cx + spec.component_std * nx;
        row[1] = cy + spec.component_std * ny;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeAssignment {
    pub counts: Vec<usize>,
    pub outliers: usize,
}

impl ModeAssignment {
    pub fn captured(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Assigns each sample to its nearest center when that center is within the
/// capture radius; everything else is an outlier.
pub fn assign_modes(samples: &Array2<f64>, spec: &RingSpec) -> Result<ModeAssignment> {
    if samples.ncols() != 2 {
        return Err(Error::Shape(format!("expected 2-d samples, got {}", samples.ncols())));
    }
    let centers = spec.centers();
    let cap2 = spec.capture_radius * spec.capture_radius;
    let mut counts = vec![0usize; spec.n_modes];
    let mut outliers = 0;
    for row in samples.axis_iter(Axis(0)) {
        let (x, y) = (row[0], row[1]);
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, (cx, cy))| (k, (x - cx).powi(2) + (y - cy).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((k, d2)) if d2 <= cap2 => counts[k] += 1,
            _ => outliers += 1,
        }
    }
    Ok(ModeAssignment { counts, outliers })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub modes_learned: usize,
    pub success: bool,
    pub tv_to_uniform: f64,
}

/// Mode coverage and total-variation distance to the uniform mode distribution.
pub fn score_run(generated: &Array2<f64>, spec: &RingSpec) -> Result<Score> {
    if generated.nrows() == 0 {
        return Err(Error::Shape("no samples to score".into()));
    }
    let a = assign_modes(generated, spec)?;
    Ok(score_assignment(&a, spec))
}

pub fn score_assignment(a: &ModeAssignment, spec: &RingSpec) -> Score {
    let captured = a.captured();
    if captured == 0 {
        return Score {
            modes_learned: 0,
            success: false,
            tv_to_uniform: 1.0,
        };
    }
    let uniform = 1.0 / spec.n_modes as f64;
    let shares: Vec<f64> = a.counts.iter().map(|&c| c as f64 / captured as f64).collect();
    let modes_learned = shares.iter().filter(|&&s| s >= spec.min_mode_fraction).count();
    let tv = 0.5 * shares.iter().map(|s| (s - uniform).abs()).sum::<f64>();
    Score {
        modes_learned,
        success: modes_learned == spec.n_modes,
        tv_to_uniform: tv.clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tight_components_sit_on_centers() {
        let spec = RingSpec {
            component_std: 1e-12,
            ..RingSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = sample_ring(&spec, 1000, &mut rng);
        let centers = spec.centers();
        for row in x.outer_iter() {
            let best = centers
                .iter()
                .map(|(cx, cy)| ((row[0] - cx).powi(2) + (row[1] - cy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9);
        }
    }

    #[test]
    fn per_mode_frequencies_and_mean() {
        let spec = RingSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = sample_ring(&spec, n, &mut rng);
        let a = assign_modes(&x, &spec).unwrap();
        assert_eq!(a.outliers, 0);
        for c in &a.counts {
            assert!((*c as f64 / n as f64 - 0.125).abs() <= 0.01);
        }
        // per-coordinate variance is radius^2 / 2 + std^2
        let se = ((spec.radius.powi(2) / 2.0 + spec.component_std.powi(2)) / n as f64).sqrt();
        let mean = x.mean_axis(Axis(0)).unwrap();
        assert!(mean[0].abs() < 3.0 * se && mean[1].abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn assignment_geometry() {
        let spec = RingSpec::default();
        let (cx, cy) = spec.center(3);
        let a = assign_modes(&array![[cx, cy], [0.0, 0.0]], &spec).unwrap();
        assert_eq!(a.counts[3], 1);
        assert_eq!(a.outliers, 1);

        // midpoint between adjacent centers sits about 0.765 from each
        let (x0, y0) = spec.center(0);
        let (x1, y1) = spec.center(1);
        let mid = array![[(x0 + x1) / 2.0, (y0 + y1) / 2.0]];
        let half_gap = ((x0 - x1).powi(2) + (y0 - y1).powi(2)).sqrt() / 2.0;
        assert!((half_gap - 0.765).abs() < 1e-3);
        assert_eq!(assign_modes(&mid, &spec).unwrap().outliers, 1);
        assert!(assign_modes(&array![[1.0, 2.0, 3.0]], &spec).is_err());
    }

    #[test]
    fn score_examples() {
        let spec = RingSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = score_run(&sample_ring(&spec, 10_000, &mut rng), &spec).unwrap();
        assert!(s.success && s.modes_learned == 8);
        assert!(s.tv_to_uniform < 0.02);

        let (cx, cy) = spec.center(0);
        let collapsed = Array2::from_shape_fn((500, 2), |(_, j)| if j == 0 { cx } else { cy });
        let s = score_run(&collapsed, &spec).unwrap();
        assert_eq!(s.modes_learned, 1);
        assert!(!s.success);
        assert!((s.tv_to_uniform - 7.0 / 8.0).abs() < 1e-15);

        let even = ModeAssignment {
            counts: vec![5; 8],
            outliers: 3,
        };
        assert_eq!(score_assignment(&even, &spec).tv_to_uniform, 0.0);

        let lost = score_run(&Array2::zeros((10, 2)), &spec).unwrap();
        assert_eq!((lost.modes_learned, lost.tv_to_uniform), (0, 1.0));
        assert!(score_run(&Array2::zeros((0, 2)), &spec).is_err());
    }
}
