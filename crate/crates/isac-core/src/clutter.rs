//! Structured clutter: spatial covariance from patch geometry, per-bin UL/DL
//! whitening covariances and the whitening transform itself.
//!
//! The sensing receiver sees the same physical patches in both link
//! directions; UL illumination only attenuates the texture by `kappa <= 1`.
//! The per-bin covariances apply the cube root of the texture to the spatial
//! factor, with noise added on the diagonal:
//! `R_DL = cbrt(texture) B_sp + sigma^2 I` and
//! `R_UL = cbrt(kappa * texture) B_sp + sigma^2 I`.
//! A separable space/time/frequency covariance is kept for sample generation
//! only; the per-bin likelihood treats bins as independent after whitening.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::comm_channel::gaussian_scattering_covariance;
use crate::numerics::{
    kronecker, psd_factor, toeplitz_real, whitener, CMat, CVec, HermitianMatrix, C64,
};
use crate::Result;

/// Clutter model parameters in linear units.
#[derive(Debug, Clone, Serialize)]
pub struct ClutterConfig {
    /// Patch positions in meters.
    pub patch_positions: Vec<[f64; 2]>,
    /// Clutter texture (linear power).
    pub texture: f64,
    /// UL texture attenuation, in (0, 1].
    pub kappa: f64,
    /// Angular spread of each patch seen from BS2 (radians).
    pub angular_spread: f64,
    /// Exponential correlation coefficient across symbol times, in [0, 1).
    pub temporal_corr: f64,
    /// Exponential correlation coefficient across subcarriers, in [0, 1).
    pub frequency_corr: f64,
}

/// Per-bin clutter-plus-noise covariances of the two link directions.
#[derive(Debug, Clone)]
pub struct PerBinClutterCov {
    /// UL covariance `cbrt(kappa * texture) B_sp + sigma^2 I`.
    pub r_ul: HermitianMatrix,
    /// DL covariance `cbrt(texture) B_sp + sigma^2 I`.
    pub r_dl: HermitianMatrix,
}

/// Spatial clutter covariance at BS2: the average of Gaussian
/// local-scattering covariances at each patch direction, trace-normalized to
/// the array size. Patch directions follow the same convention as the
/// receive-side target angle (direction of BS2 as seen from the scatterer).
pub fn build_spatial_clutter(
    patches: &[[f64; 2]],
    angular_spread: f64,
    m_rx: usize,
    bs2_pos: [f64; 2],
) -> Result<HermitianMatrix> {
    let angles: Vec<f64> = patches
        .iter()
        .map(|p| (bs2_pos[1] - p[1]).atan2(bs2_pos[0] - p[0]))
        .collect();
    gaussian_scattering_covariance(&angles, angular_spread, m_rx)
}

/// Per-bin UL/DL covariances from the clutter parameters.
pub fn per_bin_cov(
    cl: &ClutterConfig,
    b_sp: &HermitianMatrix,
    sigma2: f64,
) -> Result<PerBinClutterCov> {
    if sigma2 <= 0.0 {
        return Err(crate::CoreError::Domain(
            "per_bin_cov: noise variance must be positive".into(),
        ));
    }
    let dl_scale = cl.texture.cbrt();
    let ul_scale = (cl.kappa * cl.texture).cbrt();
    let r_dl = b_sp.scale(dl_scale).add_scaled_identity(sigma2);
    let r_ul = b_sp.scale(ul_scale).add_scaled_identity(sigma2);
    Ok(PerBinClutterCov { r_ul, r_dl })
}

/// Whitens one observation (or mean) with `W = whitener(cov)`, so that
/// clutter plus noise becomes unit-covariance.
pub fn whiten_bin(y_or_mu: &CVec, cov: &HermitianMatrix) -> Result<CVec> {
    let w = whitener(cov)?;
    Ok(&w * y_or_mu)
}

/// Cached whitening transform for repeated per-bin use.
#[derive(Debug, Clone)]
pub struct BinWhitener {
    w: CMat,
}

impl BinWhitener {
    /// Factor the covariance once.
    pub fn new(cov: &HermitianMatrix) -> Result<Self> {
        Ok(Self { w: whitener(cov)? })
    }

    /// The whitening matrix.
    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    /// Apply to a vector.
    pub fn apply(&self, x: &CVec) -> CVec {
        &self.w * x
    }

    /// Apply to every column of a matrix.
    pub fn apply_mat(&self, x: &CMat) -> CMat {
        &self.w * x
    }
}

/// Separable space/time/frequency clutter covariance used for sample
/// generation: each factor carries one cube root of the texture, the time and
/// frequency factors are exponential-correlation Toeplitz matrices with unit
/// diagonal. Ordering: frequency outer, time middle, space inner.
pub fn space_time_freq_cov(
    cl: &ClutterConfig,
    b_sp: &HermitianMatrix,
    n_time: usize,
    n_freq: usize,
) -> Result<HermitianMatrix> {
    let s = cl.texture.cbrt();
    let t_row: Vec<f64> = (0..n_time)
        .map(|d| s * cl.temporal_corr.powi(d as i32))
        .collect();
    let f_row: Vec<f64> = (0..n_freq)
        .map(|d| s * cl.frequency_corr.powi(d as i32))
        .collect();
    let b_t = toeplitz_real(&t_row)?;
    let b_f = toeplitz_real(&f_row)?;
    let spatial = b_sp.scale(s);
    let tf = kronecker(b_f.as_matrix(), b_t.as_matrix());
    HermitianMatrix::new(kronecker(&tf, spatial.as_matrix()))
}

/// Draws one zero-mean complex Gaussian clutter realization with the given
/// covariance.
pub fn sample_clutter<R: Rng + ?Sized>(cov: &HermitianMatrix, rng: &mut R) -> Result<CVec> {
    let f = psd_factor(cov)?;
    let n = f.ncols();
    let g = CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    Ok(&f * g)
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

    fn b_sp_fixture() -> (ClutterConfig, HermitianMatrix) {
        let cfg = test_config();
        let b = build_spatial_clutter(
            &cfg.clutter.patch_positions,
            cfg.clutter.angular_spread,
            cfg.m_bs_rx,
            cfg.bs2_pos,
        )
        .unwrap();
        (cfg.clutter, b)
    }

    #[test]
    fn spatial_clutter_single_patch_zero_spread_is_rank_one() {
        let b = build_spatial_clutter(&[[90.0, -155.9]], 0.0, 4, [10.0, 30.0]).unwrap();
        let phi = (30.0f64 - (-155.9)).atan2(10.0 - 90.0);
        let a = steering(4, phi);
        let expect = &a * a.adjoint();
        assert!(max_abs_diff(b.as_matrix(), &expect) < 1e-12);
    }

    #[test]
    fn spatial_clutter_four_patches_psd_and_trace() {
        let patches = [
            [90.0, -155.884572681199],
            [125.038506682619, -129.481164060957],
            [150.960702230176, -98.0350263027049],
            [169.144671741464, -61.5636257986204],
        ];
        let b = build_spatial_clutter(&patches, 10f64.to_radians(), 8, [10.0, 30.0]).unwrap();
        assert!(b.is_psd());
        assert_relative_eq!(b.trace_re(), 8.0, epsilon = 1e-10);
    }

    #[test]
    fn spatial_clutter_rank_bounded_by_patch_count() {
        let patches = [[90.0, -155.9], [125.0, -129.5], [151.0, -98.0]];
        let b = build_spatial_clutter(&patches, 0.0, 6, [10.0, 30.0]).unwrap();
        assert!(b.as_matrix().rank(1e-10) <= 3);
    }

    #[test]
    fn per_bin_cov_formulas() {
        let (mut cl, b) = b_sp_fixture();
        let sigma2 = 1e-16;

        // clutter-free
        cl.texture = 0.0;
        let c = per_bin_cov(&cl, &b, sigma2).unwrap();
        let eye = HermitianMatrix::identity(4).scale(sigma2);
        assert!(max_abs_diff(c.r_dl.as_matrix(), eye.as_matrix()) < 1e-30);
        assert!(max_abs_diff(c.r_ul.as_matrix(), eye.as_matrix()) < 1e-30);

        // kappa = 1 equalizes the links
        cl.texture = 1e-12;
        cl.kappa = 1.0;
        let c = per_bin_cov(&cl, &b, sigma2).unwrap();
        assert!(max_abs_diff(c.r_ul.as_matrix(), c.r_dl.as_matrix()) < 1e-30);

        // cube-root scalings at the reference texture levels
        cl.kappa = 1e-2;
        let c = per_bin_cov(&cl, &b, sigma2).unwrap();
        let dl_scale = (c.r_dl.as_matrix()[(0, 0)].re - sigma2) / b.as_matrix()[(0, 0)].re;
        let ul_scale = (c.r_ul.as_matrix()[(0, 0)].re - sigma2) / b.as_matrix()[(0, 0)].re;
        assert_relative_eq!(dl_scale, 1e-4, max_relative = 1e-10);
        assert_relative_eq!(ul_scale, 2.1544346900318822e-5, max_relative = 1e-10);
    }

    #[test]
    fn per_bin_cov_dominates_noise_floor() {
        let (cl, b) = b_sp_fixture();
        let sigma2 = 1e-16;
        let c = per_bin_cov(&cl, &b, sigma2).unwrap();
        for r in [&c.r_ul, &c.r_dl] {
            let shifted = r.add_scaled_identity(-sigma2);
            let ev = shifted.eigenvalues();
            assert!(ev[0] >= -1e-12, "R - sigma^2 I has eigenvalue {}", ev[0]);
        }
    }

    #[test]
    fn whiten_bin_scalar_noise() {
        let cov = HermitianMatrix::identity(4).scale(4.0);
        let x = CVec::from_fn(4, |i, _| C64::new(i as f64, 1.0));
        let w = whiten_bin(&x, &cov).unwrap();
        assert!((w - x.map(|z| z / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn whitening_roundtrip_recovers_input() {
        let (cl, b) = b_sp_fixture();
        let c = per_bin_cov(&cl, &b, 1e-16).unwrap();
        let w = BinWhitener::new(&c.r_dl).unwrap();
        let l = crate::numerics::cholesky_lower(&c.r_dl).unwrap();
        let x = CVec::from_fn(4, |i, _| C64::new(0.3 * i as f64 + 0.1, -0.2));
        let back = &l * w.apply(&x);
        assert!((back - x.clone()).norm() < 1e-9 * x.norm());
    }

    #[test]
    fn whitened_clutter_noise_draws_have_unit_covariance() {
        let (cl, b) = b_sp_fixture();
        let c = per_bin_cov(&cl, &b, 1e-16).unwrap();
        let wt = BinWhitener::new(&c.r_dl).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let m = c.r_dl.dim();
        let mut acc = CMat::zeros(m, m);
        for _ in 0..n {
            let d = sample_clutter(&c.r_dl, &mut rng).unwrap();
            let wd = wt.apply(&d);
            acc += &wd * wd.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        let rel = (&acc - CMat::identity(m, m)).norm() / (m as f64).sqrt();
        assert!(rel < 0.05, "whitened covariance off by {rel}");
    }

    #[test]
    fn space_time_freq_cov_shape_and_marginal() {
        let (cl, b) = b_sp_fixture();
        let cov = space_time_freq_cov(&cl, &b, 3, 2).unwrap();
        assert_eq!(cov.dim(), 3 * 2 * 4);
        assert!(cov.is_psd());
        // per-bin marginal block carries texture^(1/3)^3 = texture times B_sp
        let blk = cov.as_matrix().view((0, 0), (4, 4)).clone_owned();
        let expect = b.scale(cl.texture);
        assert!(max_abs_diff(&blk, expect.as_matrix()) < 1e-25);
    }
}
