//! The two partially blind estimators of the self-interference
//! coefficient `a`, plus the closed forms that complete the parameter set
//! once `a` is fixed.
//!
//! Both estimators scan a candidate `u`, strip `A u t1_i` from each
//! sample, and look at the envelopes `e_i = |z_i - A u t1_i|`.  At the
//! true channel the residuals are i.i.d. Rician with a common envelope
//! law regardless of which symbols user 2 sent, so the sample variance of
//! the envelopes collapses; away from it the unremoved self-interference
//! spreads the envelopes out.  The ML estimator scores the same residuals
//! with the exact likelihood of the total-noise model instead.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{wrap_angle, ObservationBatch};
use crate::optimize::{
    refinement_ladder, solver_gradient, steepest_descent, Initializer, SolverConfig, SolverStats,
};
use crate::{Error, Result};

/// Which objective drives the scan for `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Maximum likelihood on the envelope-cleaned samples.
    Ml,
    /// Minimum sample variance of the residual envelopes.
    Msev,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ml => "ml",
            Method::Msev => "msev",
        })
    }
}

/// The residuals left after stripping a candidate self-interference term.
#[derive(Debug, Clone)]
pub struct ResidualView {
    /// `z_i - A u t1_i` for every sample.
    pub cleaned: Vec<Complex64>,
    /// The candidate `u` the view was built at.
    pub candidate: Complex64,
    /// Envelopes `|cleaned_i|`.
    pub envelopes: Vec<f64>,
}

/// Build the residual view of a batch at a candidate `u`.
pub fn residual_view(batch: &ObservationBatch, u: Complex64) -> Result<ResidualView> {
    batch.validate()?;
    let amp = batch.config.amplification();
    let cleaned: Vec<Complex64> = batch
        .z
        .iter()
        .zip(&batch.t1)
        .map(|(&z, &t1)| z - amp * u * t1)
        .collect();
    let envelopes = cleaned.iter().map(|w| w.norm()).collect();
    Ok(ResidualView {
        cleaned,
        candidate: u,
        envelopes,
    })
}

fn envelope_mean_m2(batch: &ObservationBatch, u: Complex64) -> (f64, f64) {
    // Welford's accumulation: numerically stable and single-pass.
    let amp = batch.config.amplification();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, (&z, &t1)) in batch.z.iter().zip(&batch.t1).enumerate() {
        let e = (z - amp * u * t1).norm();
        let delta = e - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (e - mean);
    }
    (mean, m2.max(0.0))
}

/// Sample variance `W_N(u)` of the residual envelopes (the MSEV
/// objective): `(1 / (N - 1)) sum_i (e_i - mean)^2`.
pub fn sample_envelope_variance(batch: &ObservationBatch, u: Complex64) -> Result<f64> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: batch.len(),
        });
    }
    let (_, m2) = envelope_mean_m2(batch, u);
    Ok(m2 / (batch.len() as f64 - 1.0))
}

/// The negative log-likelihood objective (up to constants) driven by the
/// same envelopes:
/// `sum_i (e_i - mean)^2 / (sigma^2 c) + N ln c` with `c = A^2 |u| + 1`.
pub fn ml_objective(batch: &ObservationBatch, u: Complex64) -> Result<f64> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: batch.len(),
        });
    }
    let amp = batch.config.amplification();
    let c = amp * amp * u.norm() + 1.0;
    let (_, m2) = envelope_mean_m2(batch, u);
    Ok(m2 / (batch.config.sigma2 * c) + batch.len() as f64 * c.ln())
}

/// Linear closed-form seed for `a`: correlate the received samples with
/// the known symbols, `(1 / (N A P1)) sum_i conj(t1_i) z_i`.  Unbiased but
/// far noisier than either nonlinear estimator; used as the initializer.
pub fn closed_form_initializer(batch: &ObservationBatch) -> Result<Complex64> {
    batch.validate()?;
    let amp = batch.config.amplification();
    let sum: Complex64 = batch
        .t1
        .iter()
        .zip(&batch.z)
        .map(|(&t1, &z)| t1.conj() * z)
        .sum();
    Ok(sum / (batch.len() as f64 * amp * batch.config.p1))
}

/// Everything one estimation run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    /// Estimated self-interference coefficient.
    pub a_hat: Complex64,
    /// Estimated cross-coefficient magnitude `|b|`.
    pub b_mag_hat: f64,
    /// Per-sample residual phases in [0, 2 pi): estimates of
    /// `phi_b + angle(t2_i)` up to noise.
    pub psi_hat: Vec<f64>,
    /// Phase of `b` recovered from pilot positions, if the batch has any.
    pub phi_b_hat: Option<f64>,
    /// Canonical objective value at `a_hat`: `W_N` for MSEV, the
    /// log-likelihood objective for ML.
    pub objective_value: f64,
    pub optimizer_stats: SolverStats,
}

impl EstimateReport {
    /// Header for the flat CSV row form.
    pub fn csv_header() -> &'static str {
        "method,a_hat_re,a_hat_im,b_mag_hat,phi_b_hat,objective_value,iterations,line_search_steps,converged"
    }

    /// Flat CSV row (without the per-sample phase vector) used when
    /// aggregating runs.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.a_hat.re,
            self.a_hat.im,
            self.b_mag_hat,
            self.phi_b_hat.map(|p| p.to_string()).unwrap_or_default(),
            self.objective_value,
            self.optimizer_stats.iterations,
            self.optimizer_stats.line_search_steps,
            self.optimizer_stats.converged,
        )
    }
}

/// Closed-form completion: given `a_hat`, recover the residual phases,
/// `|b|`, and (with pilots) the phase of `b`.  Deterministic in
/// `(batch, a_hat)`, so reports can be reproduced exactly.
pub fn complete_parameters(
    batch: &ObservationBatch,
    a_hat: Complex64,
) -> Result<(f64, Vec<f64>, Option<f64>)> {
    let view = residual_view(batch, a_hat)?;
    let psi_hat: Vec<f64> = view.cleaned.iter().map(|w| wrap_angle(w.arg())).collect();
    let sum_env: f64 = view.envelopes.iter().sum();
    let amp = batch.config.amplification();
    let b_mag_hat = sum_env / (batch.len() as f64 * amp * batch.config.p2.sqrt());
    let pilots = batch.pilot_indices();
    let phi_b_hat = if pilots.is_empty() {
        None
    } else {
        // Circular mean of psi_i - angle(t2_i) over the pilot positions.
        let sum: Complex64 = pilots
            .iter()
            .map(|&i| Complex64::from_polar(1.0, psi_hat[i] - batch.t2[i].arg()))
            .sum();
        Some(wrap_angle(sum.arg()))
    };
    Ok((b_mag_hat, psi_hat, phi_b_hat))
}

/// Run one estimator on one batch: seed, descend on the selected
/// objective, then complete the remaining parameters in closed form.
pub fn estimate(
    batch: &ObservationBatch,
    method: Method,
    solver: &SolverConfig,
) -> Result<EstimateReport> {
    batch.validate()?;
    solver.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: batch.len(),
        });
    }
    let start = match solver.initializer {
        Initializer::ClosedForm => closed_form_initializer(batch)?,
        Initializer::Point(p) => p,
    };

    // Both objectives are rescaled for the solver so their high-SNR
    // curvature near the optimum is order one; this is what makes
    // iteration counts comparable across methods and SNR.  The reported
    // objective value is always the canonical, unscaled one.
    let amp = batch.config.amplification();
    let n = batch.len() as f64;
    let (a_hat, stats) = match method {
        Method::Msev => {
            let scale = 2.0 / (amp * amp * batch.config.p1);
            let objective =
                |u: Complex64| scale * sample_envelope_variance(batch, u).expect("validated batch");
            let gradient = |u: Complex64| {
                let g = solver_gradient(batch, u, Method::Msev);
                (scale * g.0, scale * g.1)
            };
            steepest_descent(objective, gradient, start, solver)?
        }
        Method::Ml => {
            let scale = 1.0 / (n - 1.0);
            let objective =
                |u: Complex64| scale * ml_objective(batch, u).expect("validated batch");
            let gradient = |u: Complex64| {
                let g = solver_gradient(batch, u, Method::Ml);
                (scale * g.0, scale * g.1)
            };
            steepest_descent(objective, gradient, start, solver)?
        }
    };

    let objective_value = match method {
        Method::Msev => sample_envelope_variance(batch, a_hat)?,
        Method::Ml => ml_objective(batch, a_hat)?,
    };
    let (b_mag_hat, psi_hat, phi_b_hat) = complete_parameters(batch, a_hat)?;
    Ok(EstimateReport {
        method,
        a_hat,
        b_mag_hat,
        psi_hat,
        phi_b_hat,
        objective_value,
        optimizer_stats: stats,
    })
}

/// Grid-search counterpart of [`estimate`]: minimizes the same objective
/// with the three-stage refinement ladder instead of descent.  Used to
/// cross-validate the solver; reports zeroed optimizer counters.
pub fn estimate_on_grid(batch: &ObservationBatch, method: Method) -> Result<EstimateReport> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: batch.len(),
        });
    }
    let seed = closed_form_initializer(batch)?;
    let objective = |u: Complex64| match method {
        Method::Msev => sample_envelope_variance(batch, u).expect("validated batch"),
        Method::Ml => ml_objective(batch, u).expect("validated batch"),
    };
    let (a_hat, objective_value) = refinement_ladder(objective, seed)?;
    let (b_mag_hat, psi_hat, phi_b_hat) = complete_parameters(batch, a_hat)?;
    Ok(EstimateReport {
        method,
        a_hat,
        b_mag_hat,
        psi_hat,
        phi_b_hat,
        objective_value,
        optimizer_stats: SolverStats {
            iterations: 0,
            line_search_steps: 0,
            converged: true,
            grad_norm: f64::NAN,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        derive_stream, draw_channel, simulate_batch, simulate_noiseless_batch, SystemConfig,
    };
    use proptest::prelude::*;

    fn batch_at(seed: u64, snr_db: f64, pilots: usize) -> (ObservationBatch, crate::model::ChannelState) {
        let config = SystemConfig::default().with_snr_db(snr_db);
        let mut rng = derive_stream(seed, &[]);
        let channel = draw_channel(&mut rng);
        let batch = simulate_batch(&config, &channel, &mut rng, pilots).unwrap();
        (batch, channel)
    }

    #[test]
    fn variance_collapses_at_truth_without_noise() {
        let config = SystemConfig::default();
        let mut rng = derive_stream(2, &[]);
        let channel = draw_channel(&mut rng);
        let batch = simulate_noiseless_batch(&config, &channel, &mut rng, 0).unwrap();
        // At u = a the residual is A b t2_i whose envelope is constant.
        let at_truth = sample_envelope_variance(&batch, channel.a).unwrap();
        assert!(at_truth < 1e-25, "{at_truth}");
        let off = sample_envelope_variance(&batch, channel.a + Complex64::new(0.4, 0.0)).unwrap();
        assert!(off > 1e-4, "{off}");
    }

    #[test]
    fn closed_form_initializer_is_unbiased() {
        let (mut sum, trials) = (Complex64::new(0.0, 0.0), 400);
        let config = SystemConfig::default().with_snr_db(10.0);
        let mut rng = derive_stream(31, &[]);
        let channel = draw_channel(&mut rng);
        for t in 0..trials {
            let mut stream = derive_stream(32, &[t]);
            let batch = simulate_batch(&config, &channel, &mut stream, 0).unwrap();
            sum += closed_form_initializer(&batch).unwrap();
        }
        let mean = sum / trials as f64;
        // t2 and noise average out; bias is O(1/sqrt(trials * N)).
        assert!((mean - channel.a).norm() < 0.05, "{mean} vs {}", channel.a);
    }

    #[test]
    fn estimators_recover_channel_at_high_snr() {
        for method in [Method::Ml, Method::Msev] {
            let (batch, channel) = batch_at(41, 30.0, 0);
            let report = estimate(&batch, method, &SolverConfig::default()).unwrap();
            assert!(report.optimizer_stats.converged);
            assert!(
                (report.a_hat - channel.a).norm() < 0.05,
                "{method:?}: {} vs {}",
                report.a_hat,
                channel.a
            );
            assert!(
                (report.b_mag_hat - channel.b.norm()).abs() < 0.1,
                "{method:?}: |b| {} vs {}",
                report.b_mag_hat,
                channel.b.norm()
            );
        }
    }

    #[test]
    fn pilot_phase_recovery_tracks_truth() {
        let (batch, channel) = batch_at(43, 25.0, 8);
        let report = estimate(&batch, Method::Msev, &SolverConfig::default()).unwrap();
        let phi = report.phi_b_hat.expect("pilots present");
        let diff = (phi - channel.phi_b + std::f64::consts::PI)
            .rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        assert!(diff.abs() < 0.2, "phi {phi} vs {}", channel.phi_b);
        // Without pilots the phase stays unresolved.
        let (batch0, _) = batch_at(43, 25.0, 0);
        let report0 = estimate(&batch0, Method::Msev, &SolverConfig::default()).unwrap();
        assert!(report0.phi_b_hat.is_none());
    }

    #[test]
    fn reported_fields_recompute_bit_for_bit() {
        let (batch, _) = batch_at(44, 15.0, 4);
        let report = estimate(&batch, Method::Ml, &SolverConfig::default()).unwrap();
        let (b_mag, psi, phi) = complete_parameters(&batch, report.a_hat).unwrap();
        assert_eq!(report.b_mag_hat, b_mag);
        assert_eq!(report.psi_hat, psi);
        assert_eq!(report.phi_b_hat, phi);
        assert_eq!(
            report.objective_value,
            ml_objective(&batch, report.a_hat).unwrap()
        );
    }

    #[test]
    fn objective_at_minimizer_beats_start_and_truth() {
        for seed in 0..30u64 {
            let (batch, channel) = batch_at(100 + seed, 15.0, 0);
            for method in [Method::Ml, Method::Msev] {
                let report = estimate(&batch, method, &SolverConfig::default()).unwrap();
                let value = |u: Complex64| match method {
                    Method::Msev => sample_envelope_variance(&batch, u).unwrap(),
                    Method::Ml => ml_objective(&batch, u).unwrap(),
                };
                let start = closed_form_initializer(&batch).unwrap();
                let scale = 1.0 + report.objective_value.abs();
                assert!(
                    report.objective_value <= value(start) + 1e-9 * scale,
                    "seed {seed} {method:?}: worse than start"
                );
                assert!(
                    report.objective_value <= value(channel.a) + 1e-9 * scale,
                    "seed {seed} {method:?}: worse than truth"
                );
            }
        }
    }

    #[test]
    fn grid_and_descent_agree() {
        let (batch, _) = batch_at(46, 20.0, 0);
        for method in [Method::Ml, Method::Msev] {
            let descent = estimate(&batch, method, &SolverConfig::default()).unwrap();
            let grid = estimate_on_grid(&batch, method).unwrap();
            assert!(
                (descent.a_hat - grid.a_hat).norm() < 2e-3,
                "{method:?}: {} vs {}",
                descent.a_hat,
                grid.a_hat
            );
        }
    }

    #[test]
    fn too_small_batches_are_rejected() {
        let (batch, _) = batch_at(47, 10.0, 0);
        let mut tiny = batch.clone();
        tiny.config.n = 1;
        tiny.t1.truncate(1);
        tiny.t2.truncate(1);
        tiny.z.truncate(1);
        tiny.pilot_mask.truncate(1);
        assert!(matches!(
            estimate(&tiny, Method::Msev, &SolverConfig::default()),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            sample_envelope_variance(&tiny, Complex64::new(0.0, 0.0)),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn report_json_and_csv_round_trip() {
        let (batch, _) = batch_at(48, 18.0, 4);
        let report = estimate(&batch, Method::Msev, &SolverConfig::default()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EstimateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.a_hat, report.a_hat);
        assert_eq!(back.psi_hat, report.psi_hat);
        assert_eq!(back.method, Method::Msev);

        let row = report.csv_row();
        assert_eq!(row.split(',').count(), EstimateReport::csv_header().split(',').count());
        assert!(row.starts_with("msev,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn variance_is_phase_rotation_invariant(
            seed in 0u64..1000,
            theta in 0.0..(2.0 * std::f64::consts::PI),
            ure in -1.5..1.5f64,
            uim in -1.5..1.5f64,
        ) {
            let (batch, _) = batch_at(seed, 12.0, 0);
            let mut rotated = batch.clone();
            let rot = Complex64::from_polar(1.0, theta);
            for v in rotated.z.iter_mut() { *v *= rot; }
            for v in rotated.t1.iter_mut() { *v *= rot; }
            let u = Complex64::new(ure, uim);
            let w0 = sample_envelope_variance(&batch, u).unwrap();
            let w1 = sample_envelope_variance(&rotated, u).unwrap();
            prop_assert!((w0 - w1).abs() <= 1e-12 * w0.max(1e-30),
                "rotation changed W_N: {w0} vs {w1}");
        }

        #[test]
        fn psi_estimates_land_in_range(seed in 0u64..200) {
            let (batch, _) = batch_at(seed, 10.0, 2);
            let (_, psi, phi) = complete_parameters(
                &batch, closed_form_initializer(&batch).unwrap()).unwrap();
            for p in psi {
                prop_assert!((0.0..2.0 * std::f64::consts::PI).contains(&p));
            }
            if let Some(p) = phi {
                prop_assert!((0.0..2.0 * std::f64::consts::PI).contains(&p));
            }
        }
    }
}
