//! Built-in numerical verification.  Each check recomputes one of the
//! library's structural identities through an independent route and
//! reports what it measured against a pinned tolerance.  All checks are
//! deterministic given the seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use twrn_core::analysis::{
    high_snr_probe, limit_derivative_at_truth, ml_limit_function, theoretical_variance,
    AsymptoticContext,
};
use twrn_core::bounds::{averaged_crb_a, mcrb_a};
use twrn_core::estimators::{ml_objective, sample_envelope_variance, Method};
use twrn_core::experiments::{run_mse_vs_snr, ExperimentSpec, Sweep};
use twrn_core::model::{derive_stream, draw_channel, simulate_batch};
use twrn_core::optimize::{analytic_gradient, finite_difference_gradient};
use twrn_core::specialfn::{bessel_i, q_function};
use twrn_core::{Complex64, Error, SystemConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub check_name: String,
    pub status: String,
    pub measured: f64,
    pub tolerance: f64,
}

enum Direction {
    AtMost,
    AtLeast,
}

fn check(name: &str, measured: f64, tolerance: f64, direction: Direction) -> VerifyCheck {
    let pass = match direction {
        Direction::AtMost => measured <= tolerance,
        Direction::AtLeast => measured >= tolerance,
    };
    VerifyCheck {
        check_name: name.to_string(),
        status: if pass { "pass" } else { "fail" }.to_string(),
        measured,
        tolerance,
    }
}

pub fn run_all(seed: u64) -> Result<Vec<VerifyCheck>, Error> {
    Ok(vec![
        bessel_scaling_identity()?,
        q_limit_approach()?,
        q_band_and_monotonicity()?,
        variance_value_identity(seed)?,
        variance_law_monte_carlo(seed)?,
        ml_limit_gradient(seed)?,
        objective_gradients(seed)?,
        bound_ordering(seed)?,
        probe_divergence(seed)?,
        experiment_determinism(seed)?,
    ])
}

/// Scaled and unscaled Bessel evaluations must agree up to `e^x` across
/// both internal branches.
fn bessel_scaling_identity() -> Result<VerifyCheck, Error> {
    let mut worst: f64 = 0.0;
    let mut x = 1e-6;
    while x < 650.0 {
        for order in [0u32, 1] {
            let scaled = bessel_i(order, x, true)?;
            let unscaled = bessel_i(order, x, false)?;
            if unscaled > 0.0 {
                worst = worst.max(((scaled * x.exp() - unscaled) / unscaled).abs());
            }
        }
        x *= 1.5;
    }
    Ok(check("bessel_scaling_identity", worst, 1e-12, Direction::AtMost))
}

/// `Q` approaches 1/2 from above like `1/(8x)`.
fn q_limit_approach() -> Result<VerifyCheck, Error> {
    let measured = (q_function(100.0)? - 0.5).abs();
    Ok(check("q_limit_approach", measured, 0.01, Direction::AtMost))
}

/// `Q` stays inside (1/2, pi/4] and decreases strictly.
fn q_band_and_monotonicity() -> Result<VerifyCheck, Error> {
    let mut violations = 0usize;
    let mut prev = f64::INFINITY;
    let mut x = 1e-6;
    while x <= 1e6 {
        let q = q_function(x)?;
        if !(q > 0.5 && q <= std::f64::consts::FRAC_PI_4 && q < prev) {
            violations += 1;
        }
        prev = q;
        x *= 1.2;
    }
    Ok(check(
        "q_band_and_monotonicity",
        violations as f64,
        0.0,
        Direction::AtMost,
    ))
}

/// At the true channel, `1 - W(a)/s` equals `Q` of the Rician ratio;
/// the two sides share only the Laguerre kernel.
fn variance_value_identity(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..300u64 {
        let channel = draw_channel(&mut derive_stream(seed, &[200, i]));
        let ctx = AsymptoticContext::new(config, channel)?;
        let bracket = 1.0 - theoretical_variance(&ctx, channel.a)? / ctx.noise_floor();
        let q = q_function(ctx.rician_ratio())?;
        worst = worst.max((bracket - q).abs());
    }
    Ok(check(
        "variance_value_identity",
        worst,
        1e-10,
        Direction::AtMost,
    ))
}

/// The deterministic variance limit must match the empirical envelope
/// variance of large simulated batches.
fn variance_law_monte_carlo(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig {
        n: 200_000,
        ..SystemConfig::default()
    };
    let mut worst: f64 = 0.0;
    for i in 0..5u64 {
        let channel = draw_channel(&mut derive_stream(seed, &[201, i]));
        let ctx = AsymptoticContext::new(config, channel)?;
        let mut rng = derive_stream(seed, &[202, i]);
        for probe in [
            channel.a,
            channel.a + Complex64::new(0.3, -0.2),
            Complex64::new(0.0, 0.0),
        ] {
            let batch = simulate_batch(&config, &channel, &mut rng, 0)?;
            let empirical = sample_envelope_variance(&batch, probe)?;
            let limit = theoretical_variance(&ctx, probe)?;
            worst = worst.max((empirical / limit - 1.0).abs());
        }
    }
    Ok(check(
        "variance_law_monte_carlo",
        worst,
        0.03,
        Direction::AtMost,
    ))
}

/// The closed-form gradient of the ML limit at the truth must match
/// finite differences and point outward along the channel direction.
fn ml_limit_gradient(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..8u64 {
        let channel = draw_channel(&mut derive_stream(seed, &[203, i]));
        if channel.a.norm() < 0.05 {
            continue;
        }
        let ctx = AsymptoticContext::new(config, channel)?;
        let analytic = limit_derivative_at_truth(&ctx)?;
        let fd = finite_difference_gradient(
            |u| ml_limit_function(&ctx, u).expect("limit evaluable"),
            channel.a,
            1e-6,
        );
        let scale = (fd.0 * fd.0 + fd.1 * fd.1).sqrt();
        let err = ((analytic.0 - fd.0).powi(2) + (analytic.1 - fd.1).powi(2)).sqrt() / scale;
        let outward = analytic.0 * channel.a.re + analytic.1 * channel.a.im;
        worst = worst.max(if outward > 0.0 { err } else { f64::INFINITY });
    }
    Ok(check("ml_limit_gradient", worst, 1e-4, Direction::AtMost))
}

/// Analytic objective gradients against central finite differences.
fn objective_gradients(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig::default().with_snr_db(12.0);
    let channel = draw_channel(&mut derive_stream(seed, &[204]));
    let mut rng = derive_stream(seed, &[205]);
    let batch = simulate_batch(&config, &channel, &mut rng, 0)?;
    let mut worst: f64 = 0.0;
    let mut drawn = 0;
    while drawn < 20 {
        let u = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        if u.norm() < 0.05 {
            continue;
        }
        drawn += 1;
        for method in [Method::Msev, Method::Ml] {
            let analytic = analytic_gradient(&batch, u, method)?;
            let fd = finite_difference_gradient(
                |v| match method {
                    Method::Msev => sample_envelope_variance(&batch, v).expect("valid batch"),
                    Method::Ml => ml_objective(&batch, v).expect("valid batch"),
                },
                u,
                1e-6,
            );
            let scale = (fd.0 * fd.0 + fd.1 * fd.1).sqrt().max(1e-9);
            let err = ((analytic.0 - fd.0).powi(2) + (analytic.1 - fd.1).powi(2)).sqrt() / scale;
            worst = worst.max(err);
        }
    }
    Ok(check("objective_gradients", worst, 1e-5, Direction::AtMost))
}

/// The symbol-averaged exact bound can never undercut the modified bound.
fn bound_ordering(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig {
        n: 50,
        ..SystemConfig::default()
    };
    let mut min_ratio = f64::INFINITY;
    for i in 0..5u64 {
        let channel = draw_channel(&mut derive_stream(seed, &[206, i]));
        let mut rng = derive_stream(seed, &[207, i]);
        let avg = averaged_crb_a(&config, &channel, 200, &mut rng)?;
        let modified = mcrb_a(&config, &channel)?;
        min_ratio = min_ratio.min(avg / modified);
    }
    Ok(check("bound_ordering", min_ratio, 1.0, Direction::AtLeast))
}

/// The mismatched-candidate envelope variance must blow up with SNR
/// relative to its 10 dB value (the consistency separation).
fn probe_divergence(seed: u64) -> Result<VerifyCheck, Error> {
    let config = SystemConfig::default();
    let channel = draw_channel(&mut derive_stream(seed, &[208]));
    let u = channel.a + Complex64::new(0.5, 0.0);
    let rows = high_snr_probe(&config, &channel, u, &[10.0, 50.0], 15, seed ^ 0x5eed)?;
    let ratio = rows[1].g_at_u / rows[0].g_at_u;
    Ok(check("probe_divergence", ratio, 100.0, Direction::AtLeast))
}

/// Re-running an experiment with the same master seed must reproduce the
/// CSV byte-for-byte.
fn experiment_determinism(seed: u64) -> Result<VerifyCheck, Error> {
    let spec = ExperimentSpec {
        sweep: Sweep::Snr(vec![10.0, 20.0]),
        config_template: SystemConfig {
            n: 16,
            ..SystemConfig::default()
        },
        channel_realizations: 4,
        trials_per_cell: 1,
        master_seed: seed,
        ..ExperimentSpec::default()
    };
    let a = run_mse_vs_snr(&spec)?.to_csv_string()?;
    let b = run_mse_vs_snr(&spec)?.to_csv_string()?;
    Ok(check(
        "experiment_determinism",
        if a == b { 0.0 } else { 1.0 },
        0.0,
        Direction::AtMost,
    ))
}
