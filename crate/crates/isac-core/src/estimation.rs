//! Uplink channel estimation and spectral efficiency.
//!
//! UEs transmit mutually orthogonal pilot matrices; the BS despreads them,
//! stacks the current and `p` past pilot observations and applies a
//! temporal-correlation-aware MMSE estimator. The estimate feeds the MMSE
//! uplink combiner, the DL precoder and the achievable uplink spectral
//! efficiency, which discounts pilot and DL overhead through per-subcarrier
//! pre-log factors.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::comm_channel::{build_spatial_covariance, zeta_vec, TrajectorySampler};
use crate::numerics::{kronecker, CMat, CVec, HermitianMatrix, C64};
use crate::scenario::{pathloss, FrameSchedule, ScenarioConfig};
use crate::seeding;
use crate::{CoreError, Result};

/// Orthogonal pilot matrices, one per UE: `M_UE x tau_p` each, with
/// `B_k B_k^H = tau_p I` and `B_k B_l^H = 0` for `k != l`.
#[derive(Debug, Clone)]
pub struct PilotBook {
    /// Per-UE pilot matrices.
    pub pilots: Vec<CMat>,
}

impl PilotBook {
    /// Pilot column transmitted by UE `k` at pilot symbol `t`.
    pub fn symbol(&self, k: usize, t: usize) -> CVec {
        self.pilots[k].column(t).clone_owned()
    }
}

/// Builds mutually orthogonal pilots from disjoint rows of the `tau_p`-point
/// DFT matrix (unit-modulus entries, exact orthogonality).
pub fn generate_pilots(k_ues: usize, m_ue: usize, tau_p: usize) -> Result<PilotBook> {
    if tau_p < k_ues * m_ue {
        return Err(CoreError::Config(format!(
            "tau_p = {tau_p} cannot carry {k_ues} x {m_ue} orthogonal pilot streams"
        )));
    }
    let mut pilots = Vec::with_capacity(k_ues);
    let w = -2.0 * std::f64::consts::PI / tau_p as f64;
    for k in 0..k_ues {
        let mut b = CMat::zeros(m_ue, tau_p);
        for u in 0..m_ue {
            let row = k * m_ue + u;
            for t in 0..tau_p {
                b[(u, t)] = C64::from_polar(1.0, w * (row * t) as f64);
            }
        }
        pilots.push(b);
    }
    Ok(PilotBook { pilots })
}

/// Despreads a received pilot block: `Y B_k^H / sqrt(tau_p)`. For a noiseless
/// single-UE observation this equals `alpha sqrt(tau_p) H W P`.
pub fn despread(y: &CMat, pilot: &CMat) -> CMat {
    let tau_p = pilot.ncols() as f64;
    (y * pilot.adjoint()).map(|z| z / tau_p.sqrt())
}

/// Pilot observation map `D_k = 1_{nu_p} ⊗ (W^0 P^0)^T ⊗ I_{M_tx}` relating
/// the vectorized channel to the stacked despread observations of one block.
pub fn pilot_map(w0p0: &CMat, nu_p: usize, m_tx: usize) -> CMat {
    let ones = CMat::from_element(nu_p, 1, C64::new(1.0, 0.0));
    let wt = w0p0.transpose();
    kronecker(&ones, &kronecker(&wt, &CMat::identity(m_tx, m_tx)))
}

/// Stacks `p_tot` per-block pilot observations:
/// `y = alpha sqrt(tau_p) (I_{p_tot} ⊗ D) h_stack + noise`.
pub fn stack_pilot_observation(
    d: &CMat,
    alpha: f64,
    tau_p: usize,
    h_stack: &CVec,
    noise: &CVec,
) -> CVec {
    let (rows, cols) = d.shape();
    let p_tot = h_stack.len() / cols;
    let scale = alpha * (tau_p as f64).sqrt();
    let mut out = noise.clone();
    for b in 0..p_tot {
        let hb = h_stack.rows(b * cols, cols);
        let yb = d * hb;
        for r in 0..rows {
            out[b * rows + r] += scale * yb[r];
        }
    }
    out
}

/// Multi-pilot MMSE channel estimator for one UE, precomputed from the
/// channel statistics so that applying it to an observation is a single
/// matrix-vector product.
#[derive(Debug, Clone)]
pub struct MmseEstimator {
    /// Maps the stacked despread observations to the channel estimate.
    pub gain: CMat,
    /// Covariance of the estimate.
    pub xi_hat: HermitianMatrix,
    /// Covariance of the estimation error, `C - xi_hat`.
    pub xi_tilde: HermitianMatrix,
    p_tot: usize,
}

impl MmseEstimator {
    /// Builds the estimator from the spatial covariance `c`, the block
    /// correlation vector `zeta` (length `p + 1`), the per-block observation
    /// map `d`, the link amplitude, the pilot length and the noise variance.
    ///
    /// The estimate covariance is `alpha^2 tau_p E D^H A^{-1} D E^H` with
    /// `A = alpha^2 tau_p D (T(zeta) ⊗ C) D^H + sigma^2 I` and
    /// `E = zeta_row ⊗ C` under current-block-first stacking.
    pub fn build(
        c: &HermitianMatrix,
        zeta: &[f64],
        d: &CMat,
        alpha: f64,
        tau_p: usize,
        sigma2: f64,
    ) -> Result<Self> {
        let dim = c.dim();
        if d.ncols() != dim {
            return Err(CoreError::Dimension(format!(
                "pilot map has {} columns for channel dimension {dim}",
                d.ncols()
            )));
        }
        if zeta.is_empty() {
            return Err(CoreError::Domain(
                "zeta must contain at least zeta(0)".into(),
            ));
        }
        if sigma2 <= 0.0 {
            return Err(CoreError::Domain("noise variance must be positive".into()));
        }
        let p_tot = zeta.len();
        let rows = d.nrows();
        let n = rows * p_tot;
        let g2 = alpha * alpha * tau_p as f64;

        // per-block Gram once, then Toeplitz-weighted blocks of A
        let cd = c.as_matrix() * d.adjoint(); // dim x rows
        let dcd = d * &cd; // rows x rows
        let mut a = CMat::zeros(n, n);
        for bi in 0..p_tot {
            for bj in 0..p_tot {
                let w = zeta[bi.abs_diff(bj)] * g2;
                for r in 0..rows {
                    for q in 0..rows {
                        a[(bi * rows + r, bj * rows + q)] = dcd[(r, q)] * w;
                    }
                }
            }
        }
        for idx in 0..n {
            a[(idx, idx)] += C64::new(sigma2, 0.0);
        }

        // B = alpha sqrt(tau_p) [zeta_0 C D^H, ..., zeta_p C D^H]
        let scale = alpha * (tau_p as f64).sqrt();
        let mut b = CMat::zeros(dim, n);
        for (bi, &z) in zeta.iter().enumerate() {
            for r in 0..dim {
                for q in 0..rows {
                    b[(r, bi * rows + q)] = cd[(r, q)] * (z * scale);
                }
            }
        }

        let chol = Cholesky::new(a).ok_or_else(|| {
            CoreError::Singular("pilot observation covariance is not positive definite".into())
        })?;
        // gain = B A^{-1}; xi_hat = B A^{-1} B^H = gain B^H
        let gain = chol.solve(&b.adjoint()).adjoint();
        let xi_hat = HermitianMatrix::new(&gain * b.adjoint())?;
        let xi_tilde = HermitianMatrix::new(c.as_matrix() - xi_hat.as_matrix())?;
        Ok(Self {
            gain,
            xi_hat,
            xi_tilde,
            p_tot,
        })
    }

    /// Number of stacked pilot blocks.
    pub fn p_tot(&self) -> usize {
        self.p_tot
    }

    /// Applies the estimator to a stacked observation.
    pub fn estimate(&self, y_stack: &CVec) -> Result<CVec> {
        if y_stack.len() != self.gain.ncols() {
            return Err(CoreError::Dimension(format!(
                "observation length {} does not match estimator ({})",
                y_stack.len(),
                self.gain.ncols()
            )));
        }
        Ok(&self.gain * y_stack)
    }
}

/// Closed form of `E[H W H^H]` for `vec(H) ~ CN(0, xi)`:
/// entry `(m, m') = sum_{u, u'} W[u, u'] xi[u M + m, u' M + m']`.
pub fn error_quadratic_form(xi: &HermitianMatrix, weight: &CMat, m_tx: usize, m_ue: usize) -> CMat {
    let x = xi.as_matrix();
    let mut out = CMat::zeros(m_tx, m_tx);
    for u in 0..m_ue {
        for up in 0..m_ue {
            let w = weight[(u, up)];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for m in 0..m_tx {
                for mp in 0..m_tx {
                    out[(m, mp)] += w * x[(u * m_tx + m, up * m_tx + mp)];
                }
            }
        }
    }
    out
}

/// Closed form of `E[H H^H]`: the partial trace of `xi` over the UE side.
pub fn error_gram(xi: &HermitianMatrix, m_tx: usize, m_ue: usize) -> CMat {
    error_quadratic_form(xi, &CMat::identity(m_ue, m_ue), m_tx, m_ue)
}

/// MMSE uplink combiners, one per UE:
/// `T_k = (sum_l alpha_l^2 (H_l Wt_l H_l^H + Xi_l) + sigma^2 I)^{-1} H_k Wb_k`
/// where `Wb_k` is the effective UE precoder (including power) and
/// `Wt_k = Wb_k Wb_k^H`.
pub fn mmse_combiner(
    est_channels: &[CMat],
    error_forms: &[CMat],
    alphas: &[f64],
    w_bar: &[CMat],
    sigma2: f64,
) -> Result<Vec<CMat>> {
    let k_ues = est_channels.len();
    if error_forms.len() != k_ues || alphas.len() != k_ues || w_bar.len() != k_ues {
        return Err(CoreError::Dimension("combiner inputs disagree on K".into()));
    }
    let m_tx = est_channels[0].nrows();
    let mut den = CMat::identity(m_tx, m_tx) * C64::new(sigma2, 0.0);
    for l in 0..k_ues {
        let a2 = alphas[l] * alphas[l];
        let hw = &est_channels[l] * &w_bar[l];
        den += (&hw * hw.adjoint() + &error_forms[l]).map(|z| z * a2);
    }
    let chol = Cholesky::new(den)
        .ok_or_else(|| CoreError::Singular("combiner denominator not PD".into()))?;
    Ok((0..k_ues)
        .map(|k| chol.solve(&(&est_channels[k] * &w_bar[k])))
        .collect())
}

/// MMSE downlink precoders:
/// `F_k = (sum_l alpha_l^2 (H_l H_l^H + Xi_l) + sigma^2 I)^{-1} alpha_k H_k`,
/// returned with every column scaled to unit norm.
pub fn mmse_precoder(
    est_channels: &[CMat],
    error_grams: &[CMat],
    alphas: &[f64],
    sigma2: f64,
) -> Result<Vec<CMat>> {
    let k_ues = est_channels.len();
    if error_grams.len() != k_ues || alphas.len() != k_ues {
        return Err(CoreError::Dimension("precoder inputs disagree on K".into()));
    }
    let m_tx = est_channels[0].nrows();
    let mut den = CMat::identity(m_tx, m_tx) * C64::new(sigma2, 0.0);
    for l in 0..k_ues {
        let a2 = alphas[l] * alphas[l];
        den += (&est_channels[l] * est_channels[l].adjoint() + &error_grams[l]).map(|z| z * a2);
    }
    let chol = Cholesky::new(den)
        .ok_or_else(|| CoreError::Singular("precoder denominator not PD".into()))?;
    let mut out = Vec::with_capacity(k_ues);
    for k in 0..k_ues {
        let mut f = chol.solve(&est_channels[k].map(|z| z * alphas[k]));
        for c in 0..f.ncols() {
            let norm = f.column(c).norm();
            if norm > 0.0 {
                for r in 0..f.nrows() {
                    f[(r, c)] /= C64::new(norm, 0.0);
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Pre-log factors `(pilot subcarrier, data subcarrier)`: the fraction of a
/// block's symbols left for UL data.
pub fn prelog_factors(cfg: &ScenarioConfig) -> (f64, f64) {
    let tc = cfg.tau_c as f64;
    (
        1.0 - (cfg.tau_p + cfg.tau_dl) as f64 / tc,
        1.0 - cfg.tau_dl as f64 / tc,
    )
}

/// Mean spectral efficiency of one UE on one subcarrier.
#[derive(Debug, Clone)]
pub struct SePoint {
    /// UE index.
    pub ue: usize,
    /// Subcarrier index (within the representative UE PRB).
    pub subcarrier: usize,
    /// Mean SE in bit/s/Hz.
    pub mean_se: f64,
}

/// Monte-Carlo spectral efficiency outcome.
#[derive(Debug, Clone)]
pub struct SeOutcome {
    /// Per-(UE, subcarrier) mean SE over the representative PRB.
    pub summary: Vec<SePoint>,
    /// Per-realization sum-SE samples (bit/s/Hz), realization-indexed.
    pub sum_samples: Vec<f64>,
}

impl SeOutcome {
    /// Mean of the sum-SE samples.
    pub fn mean_sum_se(&self) -> f64 {
        self.sum_samples.iter().sum::<f64>() / self.sum_samples.len().max(1) as f64
    }
}

/// Monte-Carlo achievable uplink SE over channel, estimate and noise
/// realizations.
///
/// Each realization draws a joint channel trajectory per UE, forms the
/// multi-pilot MMSE estimate and evaluates the log-det rate with inter-UE
/// interference from the estimated channels plus the closed-form
/// estimation-error penalty. Frequency blocks are i.i.d., so one
/// representative PRB is evaluated; pilot and data subcarriers differ only in
/// their pre-log factor. Samples are indexed by realization, so results do
/// not depend on worker scheduling.
pub fn spectral_efficiency(
    cfg: &ScenarioConfig,
    schedule: &FrameSchedule,
    realizations: usize,
    seed: u64,
) -> Result<SeOutcome> {
    spectral_efficiency_with(cfg, schedule, realizations, seed, false)
}

/// [`spectral_efficiency`] with an option to bypass estimation (perfect CSI),
/// used by paired comparisons.
pub fn spectral_efficiency_with(
    cfg: &ScenarioConfig,
    schedule: &FrameSchedule,
    realizations: usize,
    seed: u64,
    perfect_csi: bool,
) -> Result<SeOutcome> {
    if realizations == 0 {
        return Err(CoreError::Domain("need at least one realization".into()));
    }
    if cfg.tau_p == 0 {
        return Err(CoreError::Config(
            "spectral efficiency requires pilots".into(),
        ));
    }
    let k_ues = cfg.k_ues();
    let m_tx = cfg.m_bs_tx;
    let m_ue = cfg.m_ue;
    let rho = cfg.ue_stream_amplitude();
    let sigma2 = cfg.noise_var;

    // per-UE statistics and estimators (shared across realizations)
    let mut alphas = Vec::with_capacity(k_ues);
    let mut samplers = Vec::with_capacity(k_ues);
    let mut estimators = Vec::with_capacity(k_ues);
    let mut error_forms = Vec::with_capacity(k_ues); // alpha^2 rho^2 E[Herr Herr^H]
    let w0p0 = CMat::identity(m_ue, m_ue) * C64::new(rho, 0.0);
    let d = pilot_map(&w0p0, cfg.nu_p, m_tx);
    for k in 0..k_ues {
        let alpha = pathloss(cfg, k)?;
        let cov = build_spatial_covariance(cfg, k)?;
        let zeta = zeta_vec(cfg, k, cfg.p);
        let est = MmseEstimator::build(&cov.c_full, &zeta, &d, alpha, cfg.tau_p, sigma2)?;
        let sampler = TrajectorySampler::new(&cov, &zeta)?;
        let form = if perfect_csi {
            CMat::zeros(m_tx, m_tx)
        } else {
            error_gram(&est.xi_tilde, m_tx, m_ue).map(|z| z * (rho * rho * alpha * alpha))
        };
        alphas.push(alpha);
        samplers.push(sampler);
        estimators.push(est);
        error_forms.push(form);
    }

    let (beta_pilot, beta_data) = prelog_factors(cfg);
    let v_cho = cfg.v_cho;
    let prelog_avg =
        (cfg.nu_p as f64 * beta_pilot + (v_cho - cfg.nu_p) as f64 * beta_data) / v_cho as f64;

    let obs_len = d.nrows() * (cfg.p + 1);
    let dim = m_tx * m_ue;

    let per_real: Vec<(f64, Vec<f64>)> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::substream(seed, &[r as u64]));
            // channels and estimates for all UEs
            let mut h_hat = Vec::with_capacity(k_ues);
            for k in 0..k_ues {
                let h_stack = samplers[k].sample(&mut rng);
                let noise = CVec::from_fn(obs_len, |_, _| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im) * (sigma2 / 2.0).sqrt()
                });
                let h_cur = h_stack.rows(0, dim).clone_owned();
                let est = if perfect_csi {
                    h_cur
                } else {
                    let y = stack_pilot_observation(&d, alphas[k], cfg.tau_p, &h_stack, &noise);
                    estimators[k].estimate(&y).expect("estimator dims")
                };
                h_hat.push(CMat::from_column_slice(m_tx, m_ue, est.as_slice()));
            }

            // interference-plus-noise over all UEs, then per-UE exclusion of
            // the own estimated-signal term
            let mut den_all = CMat::identity(m_tx, m_tx) * C64::new(sigma2, 0.0);
            for l in 0..k_ues {
                let a2 = alphas[l] * alphas[l];
                den_all += (&h_hat[l] * h_hat[l].adjoint()).map(|z| z * (a2 * rho * rho));
                den_all += &error_forms[l];
            }

            let mut logdets = Vec::with_capacity(k_ues);
            for k in 0..k_ues {
                let a2 = alphas[k] * alphas[k];
                let own = (&h_hat[k] * h_hat[k].adjoint()).map(|z| z * (a2 * rho * rho));
                let den_k = &den_all - own;
                let chol = Cholesky::new(den_k).expect("denominator PD");
                let sol = chol.solve(&h_hat[k]);
                let inner = (h_hat[k].adjoint() * sol).map(|z| z * (a2 * rho * rho));
                let gram = CMat::identity(m_ue, m_ue) + inner;
                let det = Cholesky::new(gram)
                    .map(|c| 2.0 * (0..m_ue).map(|i| c.l_dirty()[(i, i)].re.ln()).sum::<f64>())
                    .unwrap_or(0.0);
                logdets.push(det / std::f64::consts::LN_2);
            }
            let sum_se: f64 = logdets.iter().map(|ld| prelog_avg * ld).sum();
            (sum_se, logdets)
        })
        .collect();

    let sum_samples: Vec<f64> = per_real.iter().map(|(s, _)| *s).collect();
    let mut summary = Vec::new();
    for k in 0..k_ues {
        let mean_ld = per_real.iter().map(|(_, ld)| ld[k]).sum::<f64>() / realizations as f64;
        for off in 0..v_cho {
            let v = schedule.ue_subcarriers()[off];
            let beta = if schedule.is_pilot_subcarrier(v) {
                beta_pilot
            } else {
                beta_data
            };
            summary.push(SePoint {
                ue: k,
                subcarrier: v,
                mean_se: beta * mean_ld,
            });
        }
    }
    Ok(SeOutcome {
        summary,
        sum_samples,
    })
}
