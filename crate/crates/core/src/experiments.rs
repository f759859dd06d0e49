//! Reproducible Monte Carlo experiments comparing the two estimators
//! against each other and against the bounds.
//!
//! Experiments are paired: one channel set is drawn per run and reused
//! across every sweep cell and method, so curves differ only through the
//! quantity being swept.  All randomness flows through streams derived
//! from the master seed and the cell/realization/trial indices, which
//! makes results independent of scheduling: cells may run in parallel
//! and still reproduce byte-for-byte.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;

use crate::bounds::{averaged_crb_a, mcrb_a};
use crate::estimators::{estimate, estimate_on_grid, Method};
use crate::model::{derive_stream, draw_channel, simulate_batch, ChannelState, SystemConfig};
use crate::optimize::SolverConfig;
use crate::{Error, Result};

/// Symbol realizations averaged per channel when tabulating the exact
/// bound in experiment cells (2500 draws per cell at the default 100
/// channels, plenty for a stable column).
const CRB_SYMBOL_DRAWS: usize = 25;

/// What is being swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// SNR in dB; the noise variance is set per cell as `P2 / 10^(dB/10)`.
    Snr(Vec<f64>),
    /// Batch size N at fixed noise variance.
    #[serde(rename = "n")]
    SampleSize(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Snr(_) => "snr",
            Sweep::SampleSize(_) => "n",
        }
    }

    fn validate(&self) -> Result<()> {
        let ascending = match self {
            Sweep::Snr(v) => !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]),
            Sweep::SampleSize(v) => !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]),
        };
        if !ascending {
            return Err(Error::InvalidConfig(
                "sweep list must be non-empty and strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub sweep: Sweep,
    pub config_template: SystemConfig,
    /// Channel draws shared by every cell.
    pub channel_realizations: usize,
    /// Independent batches per (cell, channel).
    pub trials_per_cell: usize,
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    /// Also run the grid-ladder versions of each method as extra rows.
    pub grid_validation: bool,
    pub master_seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            sweep: Sweep::Snr(vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]),
            config_template: SystemConfig::default(),
            channel_realizations: 100,
            trials_per_cell: 1,
            methods: vec![Method::Ml, Method::Msev],
            solver: SolverConfig::default(),
            grid_validation: false,
            master_seed: 7,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        self.config_template.validate()?;
        self.solver.validate()?;
        if self.channel_realizations == 0 {
            return Err(Error::InvalidConfig(
                "channel_realizations must be at least 1".into(),
            ));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidConfig(
                "trials_per_cell must be at least 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.methods.iter().all(|m| seen.insert(*m)) {
            return Err(Error::InvalidConfig("methods must be distinct".into()));
        }
        Ok(())
    }

    /// Hex-truncated SHA-256 of the canonical JSON form; stamped into the
    /// result and its sidecar so outputs can be traced to their spec.
    pub fn fingerprint(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(hex[..16].to_string())
    }
}

/// One aggregated cell/method outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_name: String,
    pub sweep_value: f64,
    /// `ml`, `msev`, or with a `_grid` suffix for ladder rows.
    pub method: String,
    pub mse: f64,
    /// Mean accepted descent steps per solve (0 for grid rows).
    pub sd_iters: f64,
    /// Mean objective evaluations per accepted step (0 for grid rows).
    pub ls_iters: f64,
    /// Exact bound averaged over symbols and channels.
    pub crb_a: f64,
    /// Modified bound averaged over channels.
    pub mcrb_a: f64,
    pub nonconverged_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub spec_fingerprint: String,
}

impl ExperimentResult {
    pub fn csv_header() -> &'static str {
        "sweep_name,sweep_value,method,mse,sd_iters,ls_iters,crb_a,mcrb_a,nonconverged_fraction"
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::csv_header())?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.sweep_name,
                r.sweep_value,
                r.method,
                r.mse,
                r.sd_iters,
                r.ls_iters,
                r.crb_a,
                r.mcrb_a,
                r.nonconverged_fraction
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }
}

/// JSON sidecar written next to the CSV.  Timestamps and other
/// environment notes live only in `metadata`, so the CSV itself stays
/// byte-identical across reruns of the same spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSidecar {
    pub spec: ExperimentSpec,
    pub spec_fingerprint: String,
    pub rows: Vec<ResultRow>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ExperimentSidecar {
    pub fn new(spec: &ExperimentSpec, result: &ExperimentResult, metadata: serde_json::Value) -> Self {
        ExperimentSidecar {
            spec: spec.clone(),
            spec_fingerprint: result.spec_fingerprint.clone(),
            rows: result.rows.clone(),
            metadata,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct MethodAccumulator {
    squared_error: f64,
    iterations: usize,
    line_search_steps: usize,
    nonconverged: usize,
    solves: usize,
}

struct RealizationOutcome {
    descent: Vec<MethodAccumulator>,
    grid: Vec<MethodAccumulator>,
    crb: Option<f64>,
    mcrb: f64,
}

fn run_cells(
    spec: &ExperimentSpec,
    cells: &[(f64, SystemConfig)],
) -> Result<ExperimentResult> {
    spec.validate()?;
    let sweep_name = spec.sweep.name();
    let channels: Vec<ChannelState> = (0..spec.channel_realizations)
        .map(|r| draw_channel(&mut derive_stream(spec.master_seed, &[0, r as u64])))
        .collect();

    let mut rows = Vec::new();
    for (cell_idx, (sweep_value, config)) in cells.iter().enumerate() {
        config.validate()?;
        let outcomes: Vec<RealizationOutcome> = (0..spec.channel_realizations)
            .into_par_iter()
            .map(|r| -> Result<RealizationOutcome> {
                let channel = &channels[r];
                let mut descent = vec![MethodAccumulator::default(); spec.methods.len()];
                let mut grid = vec![MethodAccumulator::default(); spec.methods.len()];
                for trial in 0..spec.trials_per_cell {
                    let mut rng = derive_stream(
                        spec.master_seed,
                        &[1, cell_idx as u64, r as u64, trial as u64],
                    );
                    let batch = simulate_batch(config, channel, &mut rng, 0)?;
                    for (mi, &method) in spec.methods.iter().enumerate() {
                        let report = estimate(&batch, method, &spec.solver)?;
                        let acc = &mut descent[mi];
                        acc.squared_error += (report.a_hat - channel.a).norm_sqr();
                        acc.iterations += report.optimizer_stats.iterations;
                        acc.line_search_steps += report.optimizer_stats.line_search_steps;
                        acc.nonconverged += usize::from(!report.optimizer_stats.converged);
                        acc.solves += 1;
                        if spec.grid_validation {
                            let ladder = estimate_on_grid(&batch, method)?;
                            let gacc = &mut grid[mi];
                            gacc.squared_error += (ladder.a_hat - channel.a).norm_sqr();
                            gacc.solves += 1;
                        }
                    }
                }
                let mut crb_rng =
                    derive_stream(spec.master_seed, &[2, cell_idx as u64, r as u64]);
                // The exact bound can be unavailable at tiny batch sizes,
                // where many symbol draws leave the channel unidentifiable
                // (singular information); such channels are skipped and the
                // column reflects only the identifiable ones.
                let crb = match averaged_crb_a(config, channel, CRB_SYMBOL_DRAWS, &mut crb_rng) {
                    Ok(v) => Some(v),
                    Err(Error::Singular { .. }) | Err(Error::NonConvergedCell { .. }) => None,
                    Err(e) => return Err(e),
                };
                let mcrb = mcrb_a(config, channel)?;
                Ok(RealizationOutcome {
                    descent,
                    grid,
                    crb,
                    mcrb,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // Sequential reduction in realization order keeps float sums (and
        // therefore the CSV) independent of thread scheduling.
        let mut crb_sum = 0.0;
        let mut crb_count = 0usize;
        let mut mcrb_sum = 0.0;
        for o in &outcomes {
            if let Some(v) = o.crb {
                crb_sum += v;
                crb_count += 1;
            }
            mcrb_sum += o.mcrb;
        }
        let crb_avg = if crb_count == 0 {
            f64::NAN
        } else {
            crb_sum / crb_count as f64
        };
        let mcrb_avg = mcrb_sum / outcomes.len() as f64;

        for (mi, &method) in spec.methods.iter().enumerate() {
            let mut total = MethodAccumulator::default();
            for o in &outcomes {
                let a = o.descent[mi];
                total.squared_error += a.squared_error;
                total.iterations += a.iterations;
                total.line_search_steps += a.line_search_steps;
                total.nonconverged += a.nonconverged;
                total.solves += a.solves;
            }
            let fraction = total.nonconverged as f64 / total.solves as f64;
            if fraction > 0.05 {
                return Err(Error::NonConvergedCell {
                    cell: format!("experiment cell {sweep_name} = {sweep_value}, method = {method}"),
                    percent: 100.0 * fraction,
                });
            }
            rows.push(ResultRow {
                sweep_name: sweep_name.to_string(),
                sweep_value: *sweep_value,
                method: method.to_string(),
                mse: total.squared_error / total.solves as f64,
                sd_iters: total.iterations as f64 / total.solves as f64,
                ls_iters: if total.iterations == 0 {
                    0.0
                } else {
                    total.line_search_steps as f64 / total.iterations as f64
                },
                crb_a: crb_avg,
                mcrb_a: mcrb_avg,
                nonconverged_fraction: fraction,
            });
        }

        if spec.grid_validation {
            for (mi, &method) in spec.methods.iter().enumerate() {
                let mut total = MethodAccumulator::default();
                for o in &outcomes {
                    let a = o.grid[mi];
                    total.squared_error += a.squared_error;
                    total.solves += a.solves;
                }
                rows.push(ResultRow {
                    sweep_name: sweep_name.to_string(),
                    sweep_value: *sweep_value,
                    method: format!("{method}_grid"),
                    mse: total.squared_error / total.solves as f64,
                    sd_iters: 0.0,
                    ls_iters: 0.0,
                    crb_a: crb_avg,
                    mcrb_a: mcrb_avg,
                    nonconverged_fraction: 0.0,
                });
            }
        }
    }

    Ok(ExperimentResult {
        rows,
        spec_fingerprint: spec.fingerprint()?,
    })
}

/// Run an SNR sweep: one cell per SNR point, channels and batch sizes
/// fixed by the template.
pub fn run_mse_vs_snr(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let Sweep::Snr(ref points) = spec.sweep else {
        return Err(Error::InvalidConfig(
            "run_mse_vs_snr needs an snr sweep".into(),
        ));
    };
    let cells: Vec<(f64, SystemConfig)> = points
        .iter()
        .map(|&db| (db, spec.config_template.with_snr_db(db)))
        .collect();
    run_cells(spec, &cells)
}

/// Run a batch-size sweep at the template's fixed noise variance.
pub fn run_mse_vs_n(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let Sweep::SampleSize(ref points) = spec.sweep else {
        return Err(Error::InvalidConfig(
            "run_mse_vs_n needs a batch-size (\"n\") sweep".into(),
        ));
    };
    let cells: Vec<(f64, SystemConfig)> = points
        .iter()
        .map(|&n| (n as f64, spec.config_template.with_n(n)))
        .collect();
    run_cells(spec, &cells)
}

/// Dispatch on the sweep variant.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    match spec.sweep {
        Sweep::Snr(_) => run_mse_vs_snr(spec),
        Sweep::SampleSize(_) => run_mse_vs_n(spec),
    }
}

/// Per-cell solver cost extracted from a result (descent rows only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub sweep_value: f64,
    pub method: String,
    pub mean_sd_iterations: f64,
    pub mean_ls_per_iteration: f64,
}

/// Tabulate solver cost per cell and method from an experiment result.
pub fn iteration_statistics(result: &ExperimentResult) -> Vec<IterationRow> {
    result
        .rows
        .iter()
        .filter(|r| !r.method.ends_with("_grid"))
        .map(|r| IterationRow {
            sweep_value: r.sweep_value,
            method: r.method.clone(),
            mean_sd_iterations: r.sd_iters,
            mean_ls_per_iteration: r.ls_iters,
        })
        .collect()
}

/// CSV form of the iteration table, columns
/// `sweep_value,method,mean_sd_iterations,mean_ls_per_iteration`.
pub fn iteration_statistics_csv(rows: &[IterationRow]) -> String {
    let mut out = String::from("sweep_value,method,mean_sd_iterations,mean_ls_per_iteration\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.sweep_value, r.method, r.mean_sd_iterations, r.mean_ls_per_iteration
        ));
    }
    out
}
