//! Cramer-Rao machinery for the joint parameter vector
//! `(Re a, Im a, |b|, psi_1, ..., psi_N)`.
//!
//! Conditioned on the channel and on user 1's symbols, each sample is
//! circular Gaussian with mean `A a t1_i + A |b| sqrt(P2) e^{j psi_i}`
//! and variance `s = sigma^2 (A^2 |a| + 1)`; the variance itself depends
//! on `|a|`, which adds a rank-one term to the `a` block of the
//! information matrix.  The per-sample residual phases `psi_i` are
//! nuisance parameters; the bound on `a` comes from the Schur complement
//! of the `a` block against them.  The modified bound instead averages
//! the information over the symbol ensemble (where the cross terms have
//! zero mean), which decouples the blocks and gives a closed form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{ChannelState, Stream, SystemConfig};
use crate::{Error, Result};

/// Information matrix in block form for parameters
/// `theta = (Re a, Im a | |b|, psi_1..psi_N)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FimBlocks {
    /// 2x2 block for (Re a, Im a).
    pub block_a: [[f64; 2]; 2],
    /// 2x(N+1) coupling block: columns ordered `|b|, psi_1..psi_N`.
    pub block_b: [Vec<f64>; 2],
    /// Diagonal of the (N+1)x(N+1) nuisance block (it is exactly
    /// diagonal: distinct samples' phases do not interact).
    pub block_c_diag: Vec<f64>,
}

impl FimBlocks {
    pub fn n(&self) -> usize {
        self.block_c_diag.len() - 1
    }
}

/// Assemble the exact information blocks for one symbol realization.
pub fn build_fim_blocks(
    config: &SystemConfig,
    channel: &ChannelState,
    t1: &[Complex64],
    t2: &[Complex64],
) -> Result<FimBlocks> {
    config.validate()?;
    let n = config.n;
    if t1.len() != n || t2.len() != n {
        return Err(Error::InvalidConfig(format!(
            "symbol vectors must have length n = {n}, got {} and {}",
            t1.len(),
            t2.len()
        )));
    }
    let b_mag = channel.b.norm();
    if b_mag == 0.0 {
        return Err(Error::Degenerate(
            "b = 0: the residual phases are unidentifiable and the information matrix loses rank"
                .into(),
        ));
    }
    let a_mag = channel.a.norm();
    if a_mag == 0.0 {
        return Err(Error::Singular {
            context: "information block for a (|a| = 0 makes the variance term undefined)".into(),
            cond: f64::INFINITY,
        });
    }
    let amp = config.amplification();
    let amp2 = amp * amp;
    let s = config.effective_noise_variance(a_mag);
    let c = amp2 * a_mag + 1.0;
    let nf = n as f64;

    // Mean-sensitivity part plus the rank-one variance-sensitivity part.
    let mean_term = 2.0 * amp2 * nf * config.p1 / s;
    let var_scale = amp2 * amp2 * nf / (a_mag * a_mag * c * c);
    let block_a = [
        [
            mean_term + var_scale * channel.a.re * channel.a.re,
            var_scale * channel.a.re * channel.a.im,
        ],
        [
            var_scale * channel.a.re * channel.a.im,
            mean_term + var_scale * channel.a.im * channel.a.im,
        ],
    ];

    let fac = 2.0 * amp2 / s;
    let mut row_re = Vec::with_capacity(n + 1);
    let mut row_im = Vec::with_capacity(n + 1);
    let cross: Complex64 = t1
        .iter()
        .zip(t2)
        .map(|(&x, &y)| x.conj() * y)
        .sum::<Complex64>()
        * Complex64::from_polar(1.0, channel.phi_b);
    row_re.push(fac * cross.re);
    row_im.push(fac * cross.im);
    for i in 0..n {
        let w = channel.b.conj() * t1[i] * t2[i].conj();
        row_re.push(fac * w.im);
        row_im.push(fac * w.re);
    }

    let mut block_c_diag = Vec::with_capacity(n + 1);
    block_c_diag.push(2.0 * amp2 * nf * config.p2 / s);
    let psi_info = 2.0 * amp2 * b_mag * b_mag * config.p2 / s;
    block_c_diag.extend(std::iter::repeat_n(psi_info, n));

    Ok(FimBlocks {
        block_a,
        block_b: [row_re, row_im],
        block_c_diag,
    })
}

/// Cramer-Rao bound on `E|a_hat - a|^2` with the nuisance parameters
/// unknown: trace of the inverse Schur complement
/// `(block_a - B C^{-1} B')^{-1}`.
pub fn crb_a(blocks: &FimBlocks) -> Result<f64> {
    let mut s00 = blocks.block_a[0][0];
    let mut s01 = blocks.block_a[0][1];
    let mut s11 = blocks.block_a[1][1];
    for (j, &cj) in blocks.block_c_diag.iter().enumerate() {
        if cj <= 0.0 || cj.is_nan() {
            return Err(Error::Singular {
                context: format!("nuisance information entry {j} is not positive ({cj})"),
                cond: f64::INFINITY,
            });
        }
        let bre = blocks.block_b[0][j];
        let bim = blocks.block_b[1][j];
        s00 -= bre * bre / cj;
        s01 -= bre * bim / cj;
        s11 -= bim * bim / cj;
    }
    let trace = s00 + s11;
    let det = s00 * s11 - s01 * s01;
    let gap = (0.25 * trace * trace - det).max(0.0).sqrt();
    let eig_max = 0.5 * trace + gap;
    let eig_min = 0.5 * trace - gap;
    if eig_min <= eig_max * 1e-14 || eig_min.is_nan() {
        return Err(Error::Singular {
            context: "Schur complement of the a block".into(),
            cond: if eig_min > 0.0 {
                eig_max / eig_min
            } else {
                f64::INFINITY
            },
        });
    }
    Ok(trace / det)
}

/// Modified (symbol-averaged) Cramer-Rao bound on `E|a_hat - a|^2` in
/// closed form.  Averaging the information matrix over the symbol
/// ensemble zeroes the coupling block, so only the `a` block survives:
///
/// `sigma^2 c (4 P1 c + sigma^2 A^2) / (2 N A^2 P1 (2 P1 c + sigma^2 A^2))`,
/// `c = A^2 |a| + 1`.
pub fn mcrb_a(config: &SystemConfig, channel: &ChannelState) -> Result<f64> {
    config.validate()?;
    let amp2 = config.amplification().powi(2);
    let c = amp2 * channel.a.norm() + 1.0;
    let s2 = config.sigma2;
    let nf = config.n as f64;
    Ok(s2 * c * (4.0 * config.p1 * c + s2 * amp2)
        / (2.0 * nf * amp2 * config.p1 * (2.0 * config.p1 * c + s2 * amp2)))
}

/// Average [`crb_a`] over freshly drawn symbol realizations.  Singular
/// draws are skipped and counted; more than 1% of them fails the run.
pub fn averaged_crb_a(
    config: &SystemConfig,
    channel: &ChannelState,
    symbol_draws: usize,
    rng: &mut Stream,
) -> Result<f64> {
    if symbol_draws == 0 {
        return Err(Error::InvalidConfig("symbol_draws must be at least 1".into()));
    }
    let mut sum = 0.0;
    let mut kept = 0usize;
    let mut skipped = 0usize;
    for _ in 0..symbol_draws {
        let t1 = crate::model::draw_mpsk_symbols(config.m, config.n, config.p1, rng)?;
        let t2 = crate::model::draw_mpsk_symbols(config.m, config.n, config.p2, rng)?;
        let blocks = build_fim_blocks(config, channel, &t1, &t2)?;
        match crb_a(&blocks) {
            Ok(v) => {
                sum += v;
                kept += 1;
            }
            Err(Error::Singular { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let percent = 100.0 * skipped as f64 / symbol_draws as f64;
    if percent > 1.0 {
        return Err(Error::NonConvergedCell {
            cell: format!("averaged_crb_a over {symbol_draws} draws"),
            percent,
        });
    }
    Ok(sum / kept as f64)
}

/// Bound summary for one (channel, batch size) point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub crb_a: f64,
    pub mcrb_a: f64,
    pub n: usize,
    pub channel: ChannelState,
}

impl BoundReport {
    /// Compute both bounds, averaging the exact one over symbol draws.
    pub fn compute(
        config: &SystemConfig,
        channel: &ChannelState,
        symbol_draws: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        Ok(BoundReport {
            crb_a: averaged_crb_a(config, channel, symbol_draws, rng)?,
            mcrb_a: mcrb_a(config, channel)?,
            n: config.n,
            channel: *channel,
        })
    }
}
