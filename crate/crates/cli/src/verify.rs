//! Grid certificates for the robustness results on finite supports.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use robgan_core::adversary::{Adversary, Perturbation};
use robgan_core::losses::{catalog_get, LossFn};
use robgan_core::oracle::{
    brute_force_generator_opt, disc_objective, grid_divisions, lemma1_objective, optimal_disc_h,
    optimal_disc_log, perturbed_gen_objective_direct, v1_v2_decomposition, DiscreteDist,
    DiscriminatorProfile,
};

use crate::CliError;

pub const GROUPS: [&str; 5] = ["theorem2", "theorem1", "lemma1", "lemma2", "decomposition"];

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub grid_step: f64,
    pub k: usize,
    pub only: Option<String>,
    pub seed: u64,
    pub cases: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.02,
            k: 3,
            only: None,
            seed: 0,
            cases: 50,
        }
    }
}

/// One certificate outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub case: String,
    pub framework: String,
    pub adversary: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub grid_step: Option<f64>,
    pub argmin: Option<Vec<f64>>,
    pub min_value: f64,
    pub pass: bool,
}

pub fn describe(adv: &Adversary) -> String {
    adv.components()
        .iter()
        .map(|(psi, p)| format!("{}:{}", psi.name(), p))
        .collect::<Vec<_>>()
        .join(",")
}

/// Uniformly random grid point with every coordinate at least one grid step.
pub fn random_interior_grid_point(rng: &mut ChaCha8Rng, k: usize, n: u32) -> Vec<u32> {
    assert!(n as usize >= k, "grid too coarse for an interior point");
    let spare = n - k as u32;
    let mut cuts: Vec<u32> = (0..k - 1).map(|_| rng.gen_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut counts = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts {
        counts.push(c - prev + 1);
        prev = c;
    }
    counts.push(spare - prev + 1);
    counts
}

/// Random mixture with identity mass in `(1/2, 1]`, the rest split over a
/// random non-empty subset of `pool`.
pub fn random_mostly_honest(rng: &mut ChaCha8Rng, pool: &[Perturbation]) -> Result<Adversary, CliError> {
    let honest = 1.0 - 0.5 * rng.gen::<f64>();
    let mut chosen: Vec<Perturbation> = pool.to_vec();
    chosen.shuffle(rng);
    chosen.truncate(rng.gen_range(1..=pool.len()));
    let weights: Vec<f64> = chosen.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut components = vec![(Perturbation::identity(), honest)];
    let mut used = honest;
    for (i, psi) in chosen.iter().enumerate() {
        let p = if i + 1 == chosen.len() {
            1.0 - used
        } else {
            (1.0 - honest) * weights[i] / total
        };
        used += p;
        components.push((*psi, p.max(0.0)));
    }
    Ok(Adversary::new(components)?)
}

fn random_interior_dist(rng: &mut ChaCha8Rng, k: usize) -> DiscreteDist {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.02..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteDist::new(w.iter().map(|v| v / s).collect()).expect("normalized")
}

fn grid_case(
    case: String,
    framework: &str,
    p_data: &DiscreteDist,
    data_counts: &[u32],
    f_d: &LossFn,
    f_g: &LossFn,
    adv: &Adversary,
    grid_step: f64,
) -> Result<Record, CliError> {
    let opt = brute_force_generator_opt(p_data, f_d, f_g, adv, grid_step)?;
    Ok(Record {
        case,
        framework: framework.into(),
        adversary: describe(adv),
        k: p_data.len(),
        grid_step: Some(grid_step),
        pass: opt.argmin_counts == data_counts,
        argmin: Some(opt.argmin.probs().to_vec()),
        min_value: opt.min_value,
    })
}

/// Same-loss models with a class H objective recover the data distribution
/// under any mostly honest adversary from the registry.
pub fn theorem2(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = grid_divisions(opts.grid_step)?;
    let losses = ["linear_h", "piecewise_h", "tanh_h"];
    let pool = [Perturbation::flip(), Perturbation::sqrt(), Perturbation::square()];
    (0..opts.cases)
        .map(|i| {
            let f = catalog_get(losses[i % losses.len()])?;
            let counts = random_interior_grid_point(&mut rng, opts.k, n);
            let p_data = DiscreteDist::from_counts(&counts, n)?;
            let adv = random_mostly_honest(&mut rng, &pool)?;
            grid_case(
                format!("theorem2/{i:03}/{}", f.name()),
                "framework2",
                &p_data,
                &counts,
                &f,
                &f,
                &adv,
                opts.grid_step,
            )
        })
        .collect()
}

/// Log discriminator with a class H generator, against perturbations that are
/// non-decreasing with a fixed point at one half, or flip-like.
pub fn theorem1(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let n = grid_divisions(opts.grid_step)?;
    let f_d = catalog_get("log")?;
    let losses = ["linear_h", "piecewise_h", "tanh_h", "cube_h"];
    let pool = [Perturbation::flip(), Perturbation::smoothstep(), Perturbation::half_flip()];
    (0..opts.cases)
        .map(|i| {
            let f_g = catalog_get(losses[i % losses.len()])?;
            let counts = random_interior_grid_point(&mut rng, opts.k, n);
            let p_data = DiscreteDist::from_counts(&counts, n)?;
            let adv = random_mostly_honest(&mut rng, &pool)?;
            grid_case(
                format!("theorem1/{i:03}/{}", f_g.name()),
                "framework1",
                &p_data,
                &counts,
                &f_d,
                &f_g,
                &adv,
                opts.grid_step,
            )
        })
        .collect()
}

/// The standard objective under flipping: the grid minimizer leaves the data
/// distribution and undercuts its value by a margin. Also checks the closed
/// form against direct evaluation at random interior generators.
pub fn lemma1(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let n = grid_divisions(opts.grid_step)?;
    let log = catalog_get("log")?;
    let ks: Vec<usize> = if opts.k == 3 { vec![2, 3] } else { vec![opts.k] };
    let mut out = Vec::new();
    for &k in &ks {
        for p in [0.1, 0.2, 0.4] {
            let counts = random_interior_grid_point(&mut rng, k, n);
            let p_data = DiscreteDist::from_counts(&counts, n)?;
            let adv = Adversary::flipping(p)?;
            let opt = brute_force_generator_opt(&p_data, &log, &log, &adv, opts.grid_step)?;
            let at_data = lemma1_objective(&p_data, &p_data, p)?;
            out.push(Record {
                case: format!("lemma1/collapse/k{k}/p{p}"),
                framework: "standard".into(),
                adversary: describe(&adv),
                k,
                grid_step: Some(opts.grid_step),
                pass: opt.argmin_counts != counts && opt.min_value < at_data - 0.1,
                argmin: Some(opt.argmin.probs().to_vec()),
                min_value: opt.min_value,
            });
        }
    }
    for &k in &ks {
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let p = [0.1, 0.2, 0.4][i % 3];
            let p_data = random_interior_dist(&mut rng, k);
            let p_g = random_interior_dist(&mut rng, k);
            let d = optimal_disc_log(&p_data, &p_g)?;
            let direct = perturbed_gen_objective_direct(&p_data, &p_g, &d, &log, &Adversary::flipping(p)?)?;
            let closed = lemma1_objective(&p_data, &p_g, p)?;
            worst = worst.max((direct - closed).abs());
        }
        out.push(Record {
            case: format!("lemma1/closed_form/k{k}"),
            framework: "standard".into(),
            adversary: "flip:0.1|0.2|0.4".into(),
            k,
            grid_step: None,
            argmin: None,
            min_value: worst,
            pass: worst <= 1e-9,
        });
    }
    Ok(out)
}

/// The class H discriminator optimum beats random discriminators.
pub fn lemma2(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let losses = ["linear_h", "piecewise_h", "tanh_h", "cube_h"];
    (0..20)
        .map(|i| {
            let f = catalog_get(losses[i % losses.len()])?;
            let k = rng.gen_range(2..=5);
            let p_data = random_interior_dist(&mut rng, k);
            let p_g = random_interior_dist(&mut rng, k);
            let best = disc_objective(&p_data, &p_g, &optimal_disc_h(&p_data, &p_g)?, &f)?;
            let mut margin = f64::INFINITY;
            for _ in 0..1000 {
                let d = DiscriminatorProfile::new((0..k).map(|_| rng.gen::<f64>()).collect())?;
                margin = margin.min(best - disc_objective(&p_data, &p_g, &d, &f)?);
            }
            Ok(Record {
                case: format!("lemma2/{i:03}/{}", f.name()),
                framework: "discriminator".into(),
                adversary: "none".into(),
                k,
                grid_step: None,
                argmin: None,
                min_value: margin,
                pass: margin >= 0.0,
            })
        })
        .collect()
}

/// The split into honest and dishonest parts reproduces the direct objective.
pub fn decomposition(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(4));
    let losses = ["linear_h", "piecewise_h", "tanh_h", "cube_h"];
    let pool = [Perturbation::flip(), Perturbation::sqrt(), Perturbation::square()];
    let mut worst: f64 = 0.0;
    let mut signs_hold = true;
    for i in 0..1000 {
        let f = catalog_get(losses[i % losses.len()])?;
        let k = rng.gen_range(2..=5);
        let p_data = random_interior_dist(&mut rng, k);
        let p_g = random_interior_dist(&mut rng, k);
        let adv = random_mostly_honest(&mut rng, &pool)?;
        let random_d = DiscriminatorProfile::new((0..k).map(|_| rng.gen::<f64>()).collect())?;
        let dec = v1_v2_decomposition(&p_data, &p_g, &random_d, &f, &adv)?;
        let direct = perturbed_gen_objective_direct(&p_data, &p_g, &random_d, &f, &adv)?;
        worst = worst.max((dec.total() - direct).abs());

        let opt_d = optimal_disc_h(&p_data, &p_g)?;
        let at_opt = v1_v2_decomposition(&p_data, &p_g, &opt_d, &f, &adv)?;
        signs_hold &= at_opt.v1 > 0.0 && at_opt.v2 >= 0.0;
    }
    Ok(vec![Record {
        case: "decomposition/1000".into(),
        framework: "framework2".into(),
        adversary: "random mostly honest".into(),
        k: 5,
        grid_step: None,
        argmin: None,
        min_value: worst,
        pass: worst <= 1e-12 && signs_hold,
    }])
}

pub fn run(opts: &VerifyOptions) -> Result<Vec<Record>, CliError> {
    if let Some(g) = &opts.only {
        if !GROUPS.contains(&g.as_str()) {
            return Err(CliError::Invalid(format!(
                "unknown certificate group {g:?}, expected one of {GROUPS:?}"
            )));
        }
    }
    if opts.k < 2 {
        return Err(CliError::Invalid("--k must be at least 2".into()));
    }
    let wanted = |g: &str| opts.only.as_deref().map_or(true, |o| o == g);
    let mut out = Vec::new();
    if wanted("theorem2") {
        out.extend(theorem2(opts)?);
    }
    if wanted("theorem1") {
        out.extend(theorem1(opts)?);
    }
    if wanted("lemma1") {
        out.extend(lemma1(opts)?);
    }
    if wanted("lemma2") {
        out.extend(lemma2(opts)?);
    }
    if wanted("decomposition") {
        out.extend(decomposition(opts)?);
    }
    Ok(out)
}
