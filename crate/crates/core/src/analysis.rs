//! Deterministic large-sample limits of both objectives.
//!
//! As the batch grows, the envelope sample variance `W_N(u)` converges to
//! a closed-form function of the candidate mismatch: a quadratic term
//! from the unremoved self-interference plus a Rician mean-envelope
//! correction expressed through the Laguerre function.  The ML objective
//! converges to the same function scaled by the candidate-dependent noise
//! model plus a log barrier.  These limits explain the two estimators'
//! behavior: the variance limit is minimized exactly at the true channel,
//! while the ML limit's gradient at the truth is a strictly positive
//! multiple of the channel direction — the ML estimator is asymptotically
//! displaced no matter the SNR.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{derive_stream, ChannelState, SystemConfig};
use crate::specialfn::{laguerre_half_neg, q_function};
use crate::{Error, Result};

/// Frozen system + channel pair for limit evaluations, with the derived
/// power ratios kept alongside.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AsymptoticContext {
    pub config: SystemConfig,
    pub channel: ChannelState,
    /// Power ratio P1 / P2.
    pub alpha: f64,
    /// Relay power ratio P_r / (P1 + P2).
    pub beta_r: f64,
}

impl AsymptoticContext {
    pub fn new(config: SystemConfig, channel: ChannelState) -> Result<Self> {
        config.validate()?;
        Ok(AsymptoticContext {
            config,
            channel,
            alpha: config.p1 / config.p2,
            beta_r: config.p_relay / (config.p1 + config.p2),
        })
    }

    /// Total noise variance at the true channel, `sigma^2 (A^2 |a| + 1)`.
    pub fn noise_floor(&self) -> f64 {
        self.config.effective_noise_variance(self.channel.a.norm())
    }

    /// Noncentrality ratio `A^2 |b|^2 P2 / noise_floor` controlling the
    /// residual Rician shape at the true channel.
    pub fn rician_ratio(&self) -> f64 {
        let amp = self.config.amplification();
        amp * amp * self.channel.b.norm_sqr() * self.config.p2 / self.noise_floor()
    }
}

/// Noncentrality of the k-th Rician mixture branch at candidate mismatch
/// `v = a - u`, normalized by the true-channel noise variance:
///
/// `[A^2 |v|^2 P1 + A^2 |b|^2 P2
///   + 2 A^2 |b| sqrt(P1 P2) Re{v e^{j (2 pi k / M - phi_b)}}] / s`.
///
/// Mathematically a nonnegative quadratic form; values in a small
/// negative floating-point neighborhood of zero are clamped to zero.
pub fn lambda_k(ctx: &AsymptoticContext, v: Complex64, k: u32) -> Result<f64> {
    if k >= ctx.config.m {
        return Err(Error::Domain(format!(
            "branch index {k} out of range for modulation order {}",
            ctx.config.m
        )));
    }
    let amp2 = ctx.config.amplification().powi(2);
    let b_mag = ctx.channel.b.norm();
    let p1 = ctx.config.p1;
    let p2 = ctx.config.p2;
    let rotation = Complex64::from_polar(
        1.0,
        2.0 * std::f64::consts::PI * k as f64 / ctx.config.m as f64 - ctx.channel.phi_b,
    );
    let cross = 2.0 * amp2 * b_mag * (p1 * p2).sqrt() * (v * rotation).re;
    let value = (amp2 * v.norm_sqr() * p1 + amp2 * b_mag * b_mag * p2 + cross) / ctx.noise_floor();
    Ok(value.max(0.0))
}

/// Large-sample limit of the envelope sample variance at candidate `u`:
///
/// `A^2 |a - u|^2 P1 + A^2 |b|^2 P2 + s
///  - (pi s / (4 M^2)) (sum_k L(lambda_k(a - u)))^2`
///
/// with `s` the true-channel noise variance and `L` the Laguerre mean
/// envelope.  Minimized exactly at `u = a`; saturates at
/// `(A^2 |b|^2 P2 + s) / 2` for large mismatch (the residual becomes a
/// high-SNR Rician whose envelope variance no longer grows).
pub fn theoretical_variance(ctx: &AsymptoticContext, u: Complex64) -> Result<f64> {
    let v = ctx.channel.a - u;
    let amp2 = ctx.config.amplification().powi(2);
    let s = ctx.noise_floor();
    let m = ctx.config.m;
    let mut mean_sum = 0.0;
    for k in 0..m {
        mean_sum += laguerre_half_neg(lambda_k(ctx, v, k)?)?;
    }
    let b_mag2 = ctx.channel.b.norm_sqr();
    Ok(amp2 * v.norm_sqr() * ctx.config.p1 + amp2 * b_mag2 * ctx.config.p2 + s
        - std::f64::consts::PI * s / (4.0 * (m as f64) * (m as f64)) * mean_sum * mean_sum)
}

/// Large-sample limit of the per-sample ML objective:
/// `W(u) / (sigma^2 (A^2 |u| + 1)) + ln(A^2 |u| + 1)`.
pub fn ml_limit_function(ctx: &AsymptoticContext, u: Complex64) -> Result<f64> {
    let amp2 = ctx.config.amplification().powi(2);
    let c = amp2 * u.norm() + 1.0;
    Ok(theoretical_variance(ctx, u)? / (ctx.config.sigma2 * c) + c.ln())
}

/// Gradient of [`ml_limit_function`] evaluated at the true channel, in
/// closed form:
///
/// `(A^2 / (|a| (A^2 |a| + 1))) * Q(x) * (Re a, Im a)`
///
/// with `x` the Rician noncentrality at the truth.  Because `Q > 1/2`
/// everywhere, this never vanishes for `a != 0`: the truth is not a
/// stationary point of the ML limit.  Undefined at `a = 0`, where the
/// radial direction is ambiguous.
pub fn limit_derivative_at_truth(ctx: &AsymptoticContext) -> Result<(f64, f64)> {
    let a = ctx.channel.a;
    let a_mag = a.norm();
    if a_mag == 0.0 {
        return Err(Error::Domain(
            "limit derivative is undefined at a = 0 (the radial direction is ambiguous)".into(),
        ));
    }
    let amp2 = ctx.config.amplification().powi(2);
    let q = q_function(ctx.rician_ratio())?;
    let factor = amp2 * q / (a_mag * (amp2 * a_mag + 1.0));
    Ok((factor * a.re, factor * a.im))
}

/// One row of the high-SNR probe: medians over trials of both empirical
/// objectives at a fixed mismatched candidate and at the truth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeRow {
    pub snr_db: f64,
    /// Median of `W_N(u) / sigma^2` at the probe candidate.
    pub g_at_u: f64,
    /// Median of `W_N(a) / sigma^2` at the truth.
    pub g_at_a: f64,
    /// Median of the scaled ML objective at the probe candidate.
    pub lambda_at_u: f64,
    /// Median of the scaled ML objective at the truth.
    pub lambda_at_a: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Empirical counterpart of the consistency contrast: for each SNR,
/// simulate batches and record the noise-normalized envelope variance
/// `G(w) = W_N(w) / sigma^2` and the scaled ML objective
/// `Lambda(w) = N G(w) / (A^2 |w| + 1) + N ln(A^2 |w| + 1)` at a fixed
/// probe candidate `u` and at the true `a`.  As SNR grows, `G(u)`
/// diverges while `G(a)` stays bounded — the separation that makes the
/// variance estimator consistent at high SNR.
pub fn high_snr_probe(
    config_template: &SystemConfig,
    channel: &ChannelState,
    u: Complex64,
    snr_db_list: &[f64],
    trials: usize,
    master_seed: u64,
) -> Result<Vec<ProbeRow>> {
    config_template.validate()?;
    if snr_db_list.is_empty() {
        return Err(Error::InvalidConfig("snr_db_list must be non-empty".into()));
    }
    if snr_db_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "snr_db_list must be strictly ascending".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    snr_db_list
        .par_iter()
        .enumerate()
        .map(|(cell, &snr_db)| {
            let config = config_template.with_snr_db(snr_db);
            let amp2 = config.amplification().powi(2);
            let n = config.n as f64;
            let scaled_ml = |w: Complex64, g: f64| {
                let c = amp2 * w.norm() + 1.0;
                n * g / c + n * c.ln()
            };
            let mut g_u = Vec::with_capacity(trials);
            let mut g_a = Vec::with_capacity(trials);
            let mut l_u = Vec::with_capacity(trials);
            let mut l_a = Vec::with_capacity(trials);
            for trial in 0..trials {
                let mut rng = derive_stream(master_seed, &[cell as u64, trial as u64]);
                let batch = crate::model::simulate_batch(&config, channel, &mut rng, 0)?;
                let gu = crate::estimators::sample_envelope_variance(&batch, u)? / config.sigma2;
                let ga =
                    crate::estimators::sample_envelope_variance(&batch, channel.a)? / config.sigma2;
                g_u.push(gu);
                g_a.push(ga);
                l_u.push(scaled_ml(u, gu));
                l_a.push(scaled_ml(channel.a, ga));
            }
            Ok(ProbeRow {
                snr_db,
                g_at_u: median(&mut g_u),
                g_at_a: median(&mut g_a),
                lambda_at_u: median(&mut l_u),
                lambda_at_a: median(&mut l_a),
            })
        })
        .collect()
}

/// CSV form of a probe table, columns
/// `snr_db,g_at_u,g_at_a,lambda_at_u,lambda_at_a`.
pub fn probe_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("snr_db,g_at_u,g_at_a,lambda_at_u,lambda_at_a\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.snr_db, r.g_at_u, r.g_at_a, r.lambda_at_u, r.lambda_at_a
        ));
    }
    out
}
