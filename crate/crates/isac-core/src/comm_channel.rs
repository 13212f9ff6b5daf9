//! UE–BS1 communication channel statistics and sampling.
//!
//! Channels are correlated Rayleigh: `h ~ CN(0, C_k)` with the separable
//! spatial covariance `C_k = C_UE ⊗ C_BS` built from a Gaussian
//! local-scattering model, and block-to-block temporal correlation
//! `E[h_b h_{b'}^H] = C_k * zeta(|b - b'|)` where `zeta` follows the
//! zeroth-order Bessel law of the UE speed. Frequency blocks are independent.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{
    bessel_j0, kronecker, psd_factor, toeplitz_real, CMat, CVec, HermitianMatrix, C64,
};
use crate::scenario::ScenarioConfig;

use crate::{CoreError, Result};

/// Separable spatial covariance of one UE link.
#[derive(Debug, Clone)]
pub struct SpatialCovariance {
    /// BS-side correlation, trace `M_BS^Tx`.
    pub c_bs: HermitianMatrix,
    /// UE-side correlation, trace `M_UE`.
    pub c_ue: HermitianMatrix,
    /// Full covariance `C_UE ⊗ C_BS` of the vectorized channel.
    pub c_full: HermitianMatrix,
}

impl SpatialCovariance {
    /// Combine per-side correlation matrices.
    pub fn from_sides(c_bs: HermitianMatrix, c_ue: HermitianMatrix) -> Result<Self> {
        let c_full = HermitianMatrix::new(kronecker(c_ue.as_matrix(), c_bs.as_matrix()))?;
        Ok(Self { c_bs, c_ue, c_full })
    }

    /// Dimension of the vectorized channel, `M_BS^Tx * M_UE`.
    pub fn dim(&self) -> usize {
        self.c_full.dim()
    }
}

/// Gauss–Hermite nodes and weights via the Golub–Welsch tridiagonal
/// eigenproblem; weights sum to `sqrt(pi)`.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = ((i as f64) / 2.0).sqrt();
        jac[(i - 1, i)] = b;
        jac[(i, i - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let node = eig.eigenvalues[j];
            let v0 = eig.eigenvectors[(0, j)];
            (node, std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Gaussian local-scattering covariance of a half-wavelength ULA.
///
/// Entry `(m, m')` averages `a_m(phi) a_{m'}(phi)^*` over a Gaussian angle
/// density of the given standard deviation around each cluster center,
/// evaluated with 40-point Gauss–Hermite quadrature and averaged over
/// clusters. The result is Toeplitz-Hermitian, PSD, with trace equal to the
/// array size.
pub fn gaussian_scattering_covariance(
    cluster_angles: &[f64],
    angular_spread: f64,
    array_size: usize,
) -> Result<HermitianMatrix> {
    if cluster_angles.is_empty() {
        return Err(CoreError::Domain(
            "gaussian_scattering_covariance: no clusters".into(),
        ));
    }
    if angular_spread < 0.0 {
        return Err(CoreError::Domain("angular spread must be >= 0".into()));
    }
    let (nodes, weights) = gauss_hermite(40);
    let norm: f64 = weights.iter().sum();
    let mut first_row = vec![C64::new(0.0, 0.0); array_size];
    for &phi0 in cluster_angles {
        for (t, w) in nodes.iter().zip(weights.iter()) {
            let phi = phi0 + std::f64::consts::SQRT_2 * angular_spread * t;
            let s = phi.sin();
            for (d, entry) in first_row.iter_mut().enumerate() {
                // E[a_0 a_d^*] = E[e^{-j pi d sin phi}]
                *entry += C64::from_polar(
                    w / (norm * cluster_angles.len() as f64),
                    -std::f64::consts::PI * d as f64 * s,
                );
            }
        }
    }
    let t = crate::numerics::toeplitz_hermitian(&first_row)?;
    // quadrature yields trace = array_size exactly up to rounding; pin it
    let tr = t.trace_re();
    Ok(t.scale(array_size as f64 / tr))
}

/// Angle of a point as seen from the origin (BS1).
fn angle_from_bs1(p: [f64; 2]) -> f64 {
    p[1].atan2(p[0])
}

/// BS- and UE-side covariance for UE `k` from the configured cluster
/// geometry. The UE side is identity (trace `M_UE`) unless a UE-side angular
/// spread is configured, in which case a single cluster toward BS1 is used.
pub fn build_spatial_covariance(cfg: &ScenarioConfig, k: usize) -> Result<SpatialCovariance> {
    let angles: Vec<f64> = cfg.ue_clusters[k]
        .iter()
        .map(|&p| angle_from_bs1(p))
        .collect();
    let c_bs = gaussian_scattering_covariance(&angles, cfg.cluster_angular_spread, cfg.m_bs_tx)?;
    let c_ue = match cfg.ue_side_angular_spread {
        None => HermitianMatrix::identity(cfg.m_ue),
        Some(spread) => {
            let e = cfg.ue_pos[k];
            let toward_bs1 = (-e[1]).atan2(-e[0]);
            gaussian_scattering_covariance(&[toward_bs1], spread, cfg.m_ue)?
        }
    };
    SpatialCovariance::from_sides(c_bs, c_ue)
}

/// Block-lag correlation `zeta_k(lag) = J0(2 pi tau_c T lag |v_k| / lambda)`.
pub fn temporal_zeta(cfg: &ScenarioConfig, k: usize, lag: usize) -> f64 {
    let speed = (cfg.ue_vel[k][0].powi(2) + cfg.ue_vel[k][1].powi(2)).sqrt();
    let arg =
        2.0 * std::f64::consts::PI * cfg.tau_c as f64 * cfg.symbol_duration() * lag as f64 * speed
            / cfg.wavelength();
    bessel_j0(arg).expect("finite zeta argument")
}

/// Correlation vector `[zeta(0), ..., zeta(p)]`.
pub fn zeta_vec(cfg: &ScenarioConfig, k: usize, depth: usize) -> Vec<f64> {
    (0..=depth).map(|lag| temporal_zeta(cfg, k, lag)).collect()
}

/// Joint covariance of the stacked block trajectory `[h_b; ...; h_{b-p}]`
/// (block index outer, antenna index inner): Toeplitz(zeta) across blocks
/// times `C_k` within a block.
pub fn trajectory_covariance(cov: &SpatialCovariance, zeta: &[f64]) -> Result<HermitianMatrix> {
    let t = toeplitz_real(zeta)?;
    HermitianMatrix::new(kronecker(t.as_matrix(), cov.c_full.as_matrix()))
}

/// Samples jointly Gaussian channel trajectories with a reusable factor.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    factor: CMat,
    p_tot: usize,
    dim: usize,
}

impl TrajectorySampler {
    /// Prepares the PSD factor of `Toeplitz(zeta) ⊗ C`. Fails if the
    /// temporal Toeplitz matrix is not PSD.
    pub fn new(cov: &SpatialCovariance, zeta: &[f64]) -> Result<Self> {
        let t = toeplitz_real(zeta)?;
        let ev = t.eigenvalues();
        if ev.first().copied().unwrap_or(0.0) < -1e-10 * ev.last().copied().unwrap_or(1.0).max(1.0)
        {
            return Err(CoreError::Domain(
                "temporal correlation matrix is not positive semidefinite".into(),
            ));
        }
        let ft = psd_factor(&t)?;
        let fc = psd_factor(&cov.c_full)?;
        Ok(Self {
            factor: kronecker(&ft, &fc),
            p_tot: zeta.len(),
            dim: cov.dim(),
        })
    }

    /// Number of stacked blocks.
    pub fn p_tot(&self) -> usize {
        self.p_tot
    }

    /// One realization of the stacked trajectory (length `p_tot * dim`),
    /// current block first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec {
        let n = self.factor.ncols();
        let g = CVec::from_fn(n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        &self.factor * g
    }

    /// The per-block slice of a stacked sample; `block = 0` is the current
    /// block `b`, `block = 1` is `b - 1`, and so on.
    #[allow(clippy::needless_lifetimes)]
    pub fn block<'a>(&self, stacked: &'a CVec, block: usize) -> nalgebra::DVectorView<'a, C64> {
        stacked.rows(block * self.dim, self.dim)
    }
}

/// Draws one stacked trajectory `[h_b; ...; h_{b-p}]` with covariance
/// `Toeplitz(zeta) ⊗ C`; deterministic given the RNG state.
pub fn sample_trajectory<R: Rng + ?Sized>(
    cov: &SpatialCovariance,
    zeta: &[f64],
    rng: &mut R,
) -> Result<CVec> {
    Ok(TrajectorySampler::new(cov, zeta)?.sample(rng))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen oracle reference values
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use crate::sensing::steering;
    use crate::testutil::test_config;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force quadrature oracle for the scattering integral.
    fn scattering_oracle(phi0: f64, spread: f64, m: usize) -> CMat {
        let n = 20_000;
        let lo = phi0 - 6.0 * spread;
        let hi = phi0 + 6.0 * spread;
        let dx = (hi - lo) / n as f64;
        let mut r = CMat::zeros(m, m);
        let mut wsum = 0.0;
        for i in 0..n {
            let phi = lo + (i as f64 + 0.5) * dx;
            let w = (-((phi - phi0) / spread).powi(2) / 2.0).exp();
            wsum += w;
            let a = steering(m, phi);
            r += (&a * a.adjoint()).map(|z| z * w);
        }
        r.map(|z| z / wsum)
    }

    #[test]
    fn scattering_delta_limit_is_rank_one() {
        let phi0 = 0.5f64;
        let r = gaussian_scattering_covariance(&[phi0], 0.0, 4).unwrap();
        let a = steering(4, phi0);
        let expect = &a * a.adjoint();
        assert!(max_abs_diff(r.as_matrix(), &expect) < 1e-12);
    }

    #[test]
    fn scattering_broadside_all_ones() {
        let r = gaussian_scattering_covariance(&[0.0], 0.0, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r.as_matrix()[(i, j)].re, 1.0, epsilon = 1e-12);
                assert!(r.as_matrix()[(i, j)].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scattering_matches_quadrature_oracle() {
        let phi0 = 30f64.to_radians();
        let spread = 10f64.to_radians();
        let r = gaussian_scattering_covariance(&[phi0], spread, 4).unwrap();
        let oracle = scattering_oracle(phi0, spread, 4);
        assert!(max_abs_diff(r.as_matrix(), &oracle) < 1e-6);
        assert!(r.is_psd());
        assert_relative_eq!(r.trace_re(), 4.0, epsilon = 1e-12);
        // off-diagonal magnitudes strictly below 1 for nonzero spread
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(r.as_matrix()[(i, j)].norm() < 1.0);
                }
            }
        }
    }

    #[test]
    fn zeta_examples() {
        let mut cfg = test_config();
        cfg.tau_c = 30;
        cfg.delta_f = 2e4;
        cfg.t_cp = 2e-6;
        cfg.f_c = 2e9;
        cfg.ue_vel[0] = [1.0, 0.0];
        assert_eq!(temporal_zeta(&cfg, 0, 0), 1.0);
        assert_relative_eq!(temporal_zeta(&cfg, 0, 1), 0.9989313107, epsilon = 1e-5);
        cfg.ue_vel[0] = [0.0, 0.0];
        for lag in 0..10 {
            assert_eq!(temporal_zeta(&cfg, 0, lag), 1.0);
        }
    }

    #[test]
    fn trajectory_single_block_covariance() {
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 0).unwrap();
        let sampler = TrajectorySampler::new(&cov, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = cov.dim();
        let n = 10_000;
        let mut acc = CMat::zeros(dim, dim);
        for _ in 0..n {
            let h = sampler.sample(&mut rng);
            acc += &h * h.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        let diff = (&acc - cov.c_full.as_matrix()).norm();
        assert!(
            diff / cov.c_full.as_matrix().norm() < 0.05,
            "sample covariance off by {diff}"
        );
    }

    #[test]
    fn trajectory_perfect_correlation_repeats_blocks() {
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 0).unwrap();
        let sampler = TrajectorySampler::new(&cov, &[1.0, 1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = sampler.sample(&mut rng);
        let b0 = sampler.block(&h, 0).clone_owned();
        for b in 1..3 {
            let hb = sampler.block(&h, b).clone_owned();
            assert!((b0.clone() - hb).norm() < 1e-10 * b0.norm().max(1e-30));
        }
    }

    #[test]
    fn trajectory_cross_block_covariance() {
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 0).unwrap();
        let zeta = [1.0, 0.9];
        let sampler = TrajectorySampler::new(&cov, &zeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dim = cov.dim();
        let n = 10_000;
        let mut cross = CMat::zeros(dim, dim);
        for _ in 0..n {
            let h = sampler.sample(&mut rng);
            let hb = sampler.block(&h, 0).clone_owned();
            let hp = sampler.block(&h, 1).clone_owned();
            cross += &hb * hp.adjoint();
        }
        cross /= C64::new(n as f64, 0.0);
        let expect = cov.c_full.as_matrix().map(|z| z * 0.9);
        let rel = (&cross - &expect).norm() / expect.norm();
        assert!(rel < 0.05, "cross-covariance off by {rel}");
    }

    #[test]
    fn frequency_blocks_are_independent() {
        // separate PRBs draw from independent substreams: cross-covariance
        // between their trajectories vanishes
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 0).unwrap();
        let sampler = TrajectorySampler::new(&cov, &[1.0]).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(101);
        let mut rng_b = ChaCha8Rng::seed_from_u64(202);
        let dim = cov.dim();
        let n = 4000;
        let mut cross = CMat::zeros(dim, dim);
        for _ in 0..n {
            let ha = sampler.sample(&mut rng_a);
            let hb = sampler.sample(&mut rng_b);
            cross += &ha * hb.adjoint();
        }
        cross /= C64::new(n as f64, 0.0);
        let rel = cross.norm() / cov.c_full.as_matrix().norm();
        assert!(rel < 0.1, "cross-PRB covariance not negligible: {rel}");
    }

    #[test]
    fn trajectory_rejects_invalid_temporal_matrix() {
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 0).unwrap();
        // |zeta| > 1 gives an indefinite Toeplitz matrix
        assert!(TrajectorySampler::new(&cov, &[1.0, 1.2]).is_err());
    }

    #[test]
    fn trajectory_matches_explicit_kronecker_covariance() {
        let cfg = test_config();
        let cov = build_spatial_covariance(&cfg, 1).unwrap();
        let zeta = [1.0, 0.6, 0.2];
        let joint = trajectory_covariance(&cov, &zeta).unwrap();
        assert_eq!(joint.dim(), 3 * cov.dim());
        // second moment of the sampler matches the explicit joint covariance
        let sampler = TrajectorySampler::new(&cov, &zeta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 4000;
        let d = joint.dim();
        let mut acc = CMat::zeros(d, d);
        for _ in 0..n {
            let h = sampler.sample(&mut rng);
            acc += &h * h.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        let rel = (&acc - joint.as_matrix()).norm() / joint.as_matrix().norm();
        assert!(rel < 0.08, "joint covariance off by {rel}");
    }
}
