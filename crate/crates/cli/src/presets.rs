//! Named training configurations.
//!
//! Names look like `<scale>_<noise>_<loss>`:
//! - scale `gaussian` uses the original ring architecture and optimizers,
//!   `desk` a reduced network that trains in seconds on one core;
//! - noise is `p<prob>` for the flipping adversary or `composite` for the
//!   mixture of flip, sqrt and square with honest mass 0.7;
//! - loss is a catalog name used for both players.
//!
//! `gp_<loss>` gives the raw-score gradient-penalty setup for an H-hat loss.
//! Every preset clips the discriminator at 0.1 unless it is a `gp_` preset.

use robgan_core::adversary::AdversarySpec;
use robgan_core::losses::catalog_get;
use robgan_core::optim::ClipPolicy;
use robgan_core::train::{Arch, OptimizerSpec, TrainConfig};

use crate::CliError;

pub const DESK_BUDGETS: [usize; 3] = [20_000, 40_000, 60_000];
pub const PAPER_BUDGETS: [usize; 3] = [50_000, 100_000, 180_000];

/// Step budget for a given error probability: noisier feedback gets more steps.
pub fn budget_for(error_probability: f64, budgets: [usize; 3]) -> usize {
    if error_probability <= 1e-12 {
        budgets[0]
    } else if error_probability <= 0.2 + 1e-12 {
        budgets[1]
    } else {
        budgets[2]
    }
}

/// Step budgets of the `desk` presets, in the same 1:2:3 ratio.
pub const REDUCED_BUDGETS: [usize; 3] = [1_000, 2_000, 3_000];

/// Reduced ring setup used for the desk-scale robustness experiment. The same
/// network, optimizers and budgets serve every loss.
pub fn desk(loss: &str, adversary: AdversarySpec, clip: ClipPolicy) -> TrainConfig {
    let base = TrainConfig::gaussian(loss, adversary, clip);
    let p = base.adversary.build().map_or(0.0, |a| a.error_probability());
    TrainConfig {
        g_optimizer: OptimizerSpec::preset("adam_gaussian").with_lr(3e-4),
        d_optimizer: OptimizerSpec::preset("rmsprop_gaussian").with_lr(2e-4),
        batch_size: 64,
        total_steps: budget_for(p, REDUCED_BUDGETS),
        latent_dim: 4,
        generator: Arch {
            hidden: 64,
            depth: 2,
        },
        discriminator: Arch {
            hidden: 64,
            depth: 3,
        },
        log_interval: 50,
        checkpoint_interval: 250,
        eval_samples: 2_000,
        ..base
    }
}

fn parse_noise(token: &str) -> Option<AdversarySpec> {
    if token == "composite" {
        return Some(AdversarySpec::composite_mnist());
    }
    let p: f64 = token.strip_prefix('p')?.parse().ok()?;
    Some(AdversarySpec::Flipping { p })
}

pub fn preset(name: &str) -> Result<TrainConfig, CliError> {
    let unknown = || CliError::Invalid(format!("unknown preset {name:?}"));
    if let Some(loss) = name.strip_prefix("gp_") {
        catalog_get(loss).map_err(|_| unknown())?;
        return Ok(TrainConfig::gaussian_gp(loss));
    }
    let mut parts = name.splitn(3, '_');
    let (scale, noise, loss) = match (parts.next(), parts.next(), parts.next()) {
        (Some(s), Some(n), Some(l)) => (s, n, l),
        _ => return Err(unknown()),
    };
    catalog_get(loss).map_err(|_| unknown())?;
    let adversary = parse_noise(noise).ok_or_else(unknown)?;
    let p = adversary.build()?.error_probability();
    let clip = ClipPolicy::Threshold(0.1);
    let mut config = match scale {
        "gaussian" => TrainConfig::gaussian(loss, adversary, clip),
        "desk" => desk(loss, adversary, clip),
        _ => return Err(unknown()),
    };
    if scale == "gaussian" {
        config.total_steps = budget_for(p, DESK_BUDGETS);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_presets() {
        let c = preset("gaussian_p0_linear_h").unwrap();
        assert_eq!(c.loss_d, "linear_h");
        assert_eq!(c.batch_size, 512);
        assert_eq!(c.total_steps, 20_000);
        assert_eq!(c.clip, ClipPolicy::Threshold(0.1));

        let c = preset("gaussian_p0.4_log").unwrap();
        assert_eq!(c.total_steps, 60_000);
        assert_eq!(c.adversary, AdversarySpec::Flipping { p: 0.4 });

        let c = preset("desk_composite_piecewise_h").unwrap();
        assert_eq!(c.adversary, AdversarySpec::composite_mnist());
        assert_eq!(c.total_steps, 3_000);
        assert_eq!(preset("desk_p0_log").unwrap().total_steps, 1_000);

        assert_eq!(preset("gp_tanh_hhat").unwrap().n_d, 5);
        for bad in ["gaussian_p0", "huge_p0_log", "gaussian_q1_log", "gaussian_p0_nope", "gp_nope"] {
            assert!(preset(bad).is_err(), "{bad}");
        }
        // error probabilities must lie in [0, 1]
        assert!(preset("gaussian_p1.5_log").is_err());
    }

    #[test]
    fn budgets_grow_with_noise() {
        assert_eq!(budget_for(0.0, PAPER_BUDGETS), 50_000);
        assert_eq!(budget_for(0.2, PAPER_BUDGETS), 100_000);
        assert_eq!(budget_for(0.3, DESK_BUDGETS), 60_000);
        assert_eq!(budget_for(0.4, DESK_BUDGETS), 60_000);
    }
}
