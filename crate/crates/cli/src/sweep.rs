//! Grids of training runs over losses, clipping thresholds, adversaries and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use robgan_core::adversary::AdversarySpec;
use robgan_core::optim::ClipPolicy;
use robgan_core::train::{self, RunMetrics, TrainConfig};

use crate::presets::{budget_for, preset, DESK_BUDGETS, PAPER_BUDGETS};
use crate::CliError;

fn default_base() -> String {
    "gaussian_p0_log".into()
}

fn default_max_runs() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub loss_d: String,
    pub loss_g: String,
}

impl ModelSpec {
    pub fn same(loss: &str) -> Self {
        Self {
            loss_d: loss.into(),
            loss_g: loss.into(),
        }
    }

    pub fn label(&self) -> String {
        if self.loss_d == self.loss_g {
            self.loss_d.clone()
        } else {
            format!("{}/{}", self.loss_d, self.loss_g)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub models: Vec<ModelSpec>,
    /// `null` entries disable clipping.
    pub clips: Vec<ClipPolicy>,
    pub adversaries: Vec<AdversarySpec>,
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Preset every run starts from.
    #[serde(default = "default_base")]
    pub base: String,
    /// Fields replaced in the base config, using the config's own key names.
    #[serde(default)]
    pub overrides: serde_json::Map<String, serde_json::Value>,
    /// Step budgets for error probability 0, up to 0.2, and above. Ignored when
    /// the overrides fix `total_steps`.
    #[serde(default)]
    pub step_budgets: Option<[usize; 3]>,
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
}

/// One scheduled run.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub cell: usize,
    pub model: ModelSpec,
    pub error_probability: f64,
    pub clip: ClipPolicy,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub model: String,
    pub loss_d: String,
    pub loss_g: String,
    pub p: f64,
    pub clip: Option<f64>,
    pub seed: u64,
    pub modes_learned: usize,
    pub success: bool,
    pub steps_to_success: Option<usize>,
    pub tv_to_uniform: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub loss_d: String,
    pub loss_g: String,
    pub p: f64,
    pub clip: Option<f64>,
    pub runs: usize,
    pub success_rate: f64,
    pub mean_modes_learned: f64,
    /// Mean over successful runs only; empty when none succeeded.
    pub mean_steps_to_success: Option<f64>,
    pub failed_runs: usize,
}

impl SweepSpec {
    pub fn run_count(&self) -> usize {
        self.models.len() * self.adversaries.len() * self.clips.len() * self.seeds_per_cell
    }

    /// Expands the grid in (model, adversary, clip, seed) order; run `i` gets
    /// seed `base_seed + i`.
    pub fn plan(&self, paper_scale: bool) -> Result<Vec<PlannedRun>, CliError> {
        if self.models.is_empty() || self.clips.is_empty() || self.adversaries.is_empty() || self.seeds_per_cell == 0 {
            return Err(CliError::Invalid("every sweep axis needs at least one entry".into()));
        }
        if self.run_count() > self.max_runs {
            return Err(CliError::Invalid(format!(
                "sweep has {} runs, cap is {}",
                self.run_count(),
                self.max_runs
            )));
        }
        let budgets = match (paper_scale, self.step_budgets) {
            (true, _) => PAPER_BUDGETS,
            (false, Some(b)) => b,
            (false, None) => DESK_BUDGETS,
        };
        let fixed_steps = self.overrides.contains_key("total_steps");
        let base = serde_json::to_value(preset(&self.base)?)?;

        let mut runs = Vec::with_capacity(self.run_count());
        let mut cell = 0;
        for model in &self.models {
            for adversary in &self.adversaries {
                let p = adversary.build()?.error_probability();
                for clip in &self.clips {
                    let mut value = base.clone();
                    let obj = value.as_object_mut().expect("config serializes to an object");
                    for (k, v) in &self.overrides {
                        obj.insert(k.clone(), v.clone());
                    }
                    obj.insert("loss_d".into(), model.loss_d.clone().into());
                    obj.insert("loss_g".into(), model.loss_g.clone().into());
                    obj.insert("adversary".into(), serde_json::to_value(adversary)?);
                    obj.insert("clip".into(), serde_json::to_value(clip)?);
                    if !fixed_steps {
                        obj.insert("total_steps".into(), budget_for(p, budgets).into());
                    }
                    for _ in 0..self.seeds_per_cell {
                        let mut config: TrainConfig = serde_json::from_value(value.clone())
                            .map_err(|e| CliError::Invalid(format!("sweep config: {e}")))?;
                        config.seed = self.base_seed + runs.len() as u64;
                        config.validate()?;
                        runs.push(PlannedRun {
                            cell,
                            model: model.clone(),
                            error_probability: p,
                            clip: *clip,
                            config,
                        });
                    }
                    cell += 1;
                }
            }
        }
        Ok(runs)
    }
}

pub fn row_for(run: &PlannedRun, m: &RunMetrics) -> RunRow {
    RunRow {
        model: run.model.label(),
        loss_d: run.model.loss_d.clone(),
        loss_g: run.model.loss_g.clone(),
        p: run.error_probability,
        clip: run.clip.threshold(),
        seed: run.config.seed,
        modes_learned: m.modes_learned,
        success: m.success,
        steps_to_success: m.steps_to_success,
        tv_to_uniform: m.tv_to_uniform,
        failed: m.failed,
    }
}

/// Executes every planned run on a pool of `parallelism` threads. Rows come
/// back in plan order whatever the scheduling.
pub fn execute(runs: &[PlannedRun], parallelism: usize) -> Result<Vec<RunRow>, CliError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        runs.par_iter()
            .map(|run| {
                let out = train::run(&run.config)?;
                Ok(row_for(run, &out.metrics))
            })
            .collect()
    })
}

/// Groups consecutive rows of the same cell. `cells[i]` is the cell of `rows[i]`.
pub fn aggregate(rows: &[RunRow], cells: &[usize]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && cells[end] == cells[start] {
            end += 1;
        }
        let group = &rows[start..end];
        let n = group.len() as f64;
        // runs that hit 8 modes once but ended below it do not count
        let wins: Vec<usize> = group.iter().filter(|r| r.success).filter_map(|r| r.steps_to_success).collect();
        let first = &group[0];
        out.push(AggregateRow {
            model: first.model.clone(),
            loss_d: first.loss_d.clone(),
            loss_g: first.loss_g.clone(),
            p: first.p,
            clip: first.clip,
            runs: group.len(),
            success_rate: group.iter().filter(|r| r.success).count() as f64 / n,
            mean_modes_learned: group.iter().map(|r| r.modes_learned as f64).sum::<f64>() / n,
            mean_steps_to_success: (!wins.is_empty())
                .then(|| wins.iter().map(|&s| s as f64).sum::<f64>() / wins.len() as f64),
            failed_runs: group.iter().filter(|r| r.failed).count(),
        });
        start = end;
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SweepSpec {
        serde_json::from_str(
            r#"{
                "models": [{"loss_d": "log", "loss_g": "log"}, {"loss_d": "linear_h", "loss_g": "linear_h"}],
                "clips": [0.1, null],
                "adversaries": [{"kind": "flipping", "p": 0.0}, {"kind": "flipping", "p": 0.4}],
                "seeds_per_cell": 3,
                "base_seed": 100
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn plan_order_seeds_and_budgets() {
        let runs = spec().plan(false).unwrap();
        assert_eq!(runs.len(), 24);
        for (i, r) in runs.iter().enumerate() {
            assert_eq!(r.config.seed, 100 + i as u64);
            assert_eq!(r.cell, i / 3);
        }
        assert_eq!(runs[0].config.total_steps, 20_000);
        assert_eq!(runs[0].clip, ClipPolicy::Threshold(0.1));
        assert_eq!(runs[3].clip, ClipPolicy::Disabled);
        assert_eq!(runs[6].config.total_steps, 60_000);
        assert_eq!(runs[12].config.loss_g, "linear_h");
        assert_eq!(spec().plan(true).unwrap()[6].config.total_steps, 180_000);
    }

    #[test]
    fn overrides_and_caps() {
        let mut s = spec();
        s.overrides.insert("total_steps".into(), 7.into());
        s.overrides.insert("batch_size".into(), 16.into());
        let runs = s.plan(false).unwrap();
        assert!(runs.iter().all(|r| r.config.total_steps == 7 && r.config.batch_size == 16));

        s.overrides.insert("no_such_field".into(), 1.into());
        assert!(matches!(s.plan(false), Err(CliError::Invalid(_))));

        let mut s = spec();
        s.max_runs = 10;
        assert!(s.plan(false).is_err());
        let mut s = spec();
        s.clips.clear();
        assert!(s.plan(false).is_err());
    }

    #[test]
    fn aggregate_is_per_cell() {
        let row = |model: &str, success, modes, steps| RunRow {
            model: model.into(),
            loss_d: model.into(),
            loss_g: model.into(),
            p: 0.2,
            clip: None,
            seed: 0,
            modes_learned: modes,
            success,
            steps_to_success: steps,
            tv_to_uniform: 0.1,
            failed: false,
        };
        let rows = vec![
            row("a", true, 8, Some(1000)),
            row("a", false, 5, Some(500)),
            row("a", true, 8, Some(3000)),
            row("b", false, 2, None),
        ];
        let agg = aggregate(&rows, &[0, 0, 0, 1]);
        assert_eq!(agg.len(), 2);
        assert!((agg[0].success_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(agg[0].mean_modes_learned, 7.0);
        assert_eq!(agg[0].mean_steps_to_success, Some(2000.0));
        assert_eq!(agg[1].mean_steps_to_success, None);
        assert_eq!(agg[1].runs, 1);
    }
}
