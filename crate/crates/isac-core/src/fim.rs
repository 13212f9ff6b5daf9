//! Fisher information assembly and CRB extraction.
//!
//! Per time-frequency bin the whitened observation is Gaussian with a mean
//! that is linear in the transmit symbols, so the per-bin information matrix
//! is `2 Re[J^H R^{-1} J]` with `J` the analytic Jacobian. Three
//! symbol-knowledge regimes share the same per-bin Jacobians:
//!
//! * clairvoyant — symbols known everywhere, the full `J_eta` Gram counts;
//! * fully unknown — the per-bin symbols are nuisance parameters, removed by
//!   the (generalized) Schur complement of the augmented information matrix;
//! * hybrid — clairvoyant on UL pilot bins and the dedicated sensing
//!   subcarriers, marginalized elsewhere.
//!
//! Every column of a per-bin Jacobian lies in the two-dimensional complex
//! span of the receive steering vector and its angle derivative. The
//! assembly therefore reduces each bin to a real `4 x dim` factor through a
//! `2 x 2` whitened kernel, which the Monte-Carlo loop exploits; the dense
//! per-bin operations remain as the reference path and are cross-checked
//! against the factor path in the tests.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::clutter::{build_spatial_clutter, per_bin_cov, BinWhitener};
use crate::comm_channel::{build_spatial_covariance, zeta_vec, TrajectorySampler};
use crate::estimation::{
    error_gram, generate_pilots, mmse_precoder, pilot_map, stack_pilot_observation, MmseEstimator,
    PilotBook,
};
use crate::numerics::{CMat, CVec, HermitianMatrix, RMat, C64};
use crate::scenario::{
    build_schedule, pathloss, power_allocation, BinKind, FrameSchedule, ScenarioConfig,
    SPEED_OF_LIGHT,
};
use crate::seeding;
use crate::sensing::{
    derive_geometry, jacobian_eta, jacobian_symbols, randomize_gains, steering,
    steering_derivative, BinContext, BinSignal, ParamLayout, SensingScene, TargetParams,
};
use crate::{CoreError, Result};

/// Relative eigenvalue cutoff of the nuisance-block pseudo-inverse.
const NUISANCE_PINV_CUTOFF: f64 = 1e-10;
/// Relative eigenvalue cutoff below which the averaged FIM counts as singular.
const FIM_SINGULAR_CUTOFF: f64 = 1e-10;

/// Symbol-knowledge regime of the sensing receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Transmit symbols always known.
    Clairvoyant,
    /// Transmit symbols never known; marginalized per bin.
    FullyUnknown,
    /// Symbols known on UL pilot bins and sensing subcarriers only.
    Hybrid,
}

impl Regime {
    /// Canonical lowercase name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Regime::Clairvoyant => "clairvoyant",
            Regime::FullyUnknown => "fully_unknown",
            Regime::Hybrid => "hybrid",
        }
    }
}

/// Whether the structured clutter enters the whitening covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClutterMode {
    /// `R` from the clutter model.
    WithClutter,
    /// `R = sigma^2 I` (clutter-free reference).
    NoiseOnly,
}

impl ClutterMode {
    /// Canonical lowercase name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            ClutterMode::WithClutter => "with_clutter",
            ClutterMode::NoiseOnly => "noise_only",
        }
    }
}

/// Running sum of per-realization information matrices.
#[derive(Debug, Clone)]
pub struct FimAccumulator {
    /// Accumulated sum.
    pub sum: RMat,
    /// Number of accumulated realizations.
    pub count: usize,
}

impl FimAccumulator {
    /// Zero accumulator of the given dimension.
    pub fn new(dim: usize) -> Self {
        Self {
            sum: RMat::zeros(dim, dim),
            count: 0,
        }
    }

    /// Adds one realization's FIM.
    pub fn add(&mut self, fim: &RMat) {
        self.sum += fim;
        self.count += 1;
    }

    /// Merges another accumulator (order-independent up to rounding).
    pub fn merge(&mut self, other: &FimAccumulator) {
        self.sum += &other.sum;
        self.count += other.count;
    }

    /// Monte-Carlo average.
    pub fn mean(&self) -> RMat {
        self.sum.map(|x| x / self.count.max(1) as f64)
    }
}

// ---------------------------------------------------------------------------
// dense per-bin reference path
// ---------------------------------------------------------------------------

/// `2 Re(J^H J)` of an (already whitened) Jacobian.
pub fn information_from_jacobian(j_w: &CMat) -> RMat {
    let gram = j_w.adjoint() * j_w;
    RMat::from_fn(gram.nrows(), gram.ncols(), |r, c| 2.0 * gram[(r, c)].re)
}

/// Augmented information over `[eta; z]` from whitened Jacobians.
pub fn augmented_information(j_eta_w: &CMat, j_z_w: &CMat) -> RMat {
    let n_eta = j_eta_w.ncols();
    let n_z = j_z_w.ncols();
    let mut joint = CMat::zeros(j_eta_w.nrows(), n_eta + n_z);
    joint
        .view_mut((0, 0), (j_eta_w.nrows(), n_eta))
        .copy_from(j_eta_w);
    joint
        .view_mut((0, n_eta), (j_z_w.nrows(), n_z))
        .copy_from(j_z_w);
    information_from_jacobian(&joint)
}

/// Pseudo-inverse of a real symmetric PSD matrix with a relative eigenvalue
/// cutoff.
fn sym_pinv(m: &RMat, rel_cutoff: f64) -> RMat {
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cut = rel_cutoff * top.max(f64::MIN_POSITIVE);
    let mut out = RMat::zeros(m.nrows(), m.ncols());
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cut {
            let v = eig.eigenvectors.column(idx);
            out += RMat::from_fn(m.nrows(), m.ncols(), |r, c| v[r] * v[c] / l);
        }
    }
    out
}

/// Marginalizes the nuisance block out of the augmented information:
/// `J_eff = J_ee - J_ez pinv(J_zz) J_ze`, symmetrized.
pub fn effective_information(j_eta_w: &CMat, j_z_w: &CMat) -> RMat {
    let aug = augmented_information(j_eta_w, j_z_w);
    let n_eta = j_eta_w.ncols();
    let n_z = j_z_w.ncols();
    let j_ee = aug.view((0, 0), (n_eta, n_eta)).clone_owned();
    let j_ez = aug.view((0, n_eta), (n_eta, n_z)).clone_owned();
    let j_zz = aug.view((n_eta, n_eta), (n_z, n_z)).clone_owned();
    let inv = sym_pinv(&j_zz, NUISANCE_PINV_CUTOFF);
    let mut eff = j_ee - &j_ez * inv * j_ez.transpose();
    for r in 0..n_eta {
        for c in 0..r {
            let avg = 0.5 * (eff[(r, c)] + eff[(c, r)]);
            eff[(r, c)] = avg;
            eff[(c, r)] = avg;
        }
    }
    eff
}

/// Per-bin clairvoyant information `2 Re[J_eta^H R^{-1} J_eta]`.
pub fn fim_clairvoyant_bin(
    ctx: &BinContext,
    params: &TargetParams,
    scene: &SensingScene,
    whitener: &BinWhitener,
) -> Result<RMat> {
    let j = jacobian_eta(ctx, params, scene)?;
    Ok(information_from_jacobian(&whitener.apply_mat(&j)))
}

/// Per-bin effective information after marginalizing the bin's symbols.
pub fn fim_effective_bin(
    ctx: &BinContext,
    params: &TargetParams,
    scene: &SensingScene,
    whitener: &BinWhitener,
) -> Result<RMat> {
    let j_eta = whitener.apply_mat(&jacobian_eta(ctx, params, scene)?);
    let j_z = whitener.apply_mat(&jacobian_symbols(ctx, params, scene)?);
    Ok(effective_information(&j_eta, &j_z))
}

// ---------------------------------------------------------------------------
// scenario realization: precoders, pilots, whitened kernels
// ---------------------------------------------------------------------------

/// Whitened 2x2 kernel of the receive-side span `{a_rx, a_rx'}`.
#[derive(Debug, Clone)]
struct SpanKernel {
    sqrt: Matrix2<C64>,
}

impl SpanKernel {
    fn new(w: &BinWhitener, a: &CVec, da: &CVec) -> Self {
        let wa = w.apply(a);
        let wd = w.apply(da);
        let k = Matrix2::new(wa.dotc(&wa), wa.dotc(&wd), wd.dotc(&wa), wd.dotc(&wd));
        // Hermitian square root via the 2x2 eigendecomposition
        let eig = k.symmetric_eigen();
        let mut sqrt = Matrix2::zeros();
        for idx in 0..2 {
            let l = eig.eigenvalues[idx].max(0.0).sqrt();
            let v = eig.eigenvectors.column(idx);
            for r in 0..2 {
                for c in 0..2 {
                    sqrt[(r, c)] += v[r] * v[c].conj() * l;
                }
            }
        }
        Self { sqrt }
    }

    /// Maps span coefficients `(c_a, c_da)` to the whitened 2-vector.
    #[inline]
    fn map(&self, c_a: C64, c_da: C64) -> Vector2<C64> {
        Vector2::new(
            self.sqrt[(0, 0)] * c_a + self.sqrt[(0, 1)] * c_da,
            self.sqrt[(1, 0)] * c_a + self.sqrt[(1, 1)] * c_da,
        )
    }
}

fn mode_index(mode: ClutterMode) -> usize {
    match mode {
        ClutterMode::WithClutter => 0,
        ClutterMode::NoiseOnly => 1,
    }
}

fn link_index(kind: BinKind) -> usize {
    if kind.is_uplink() {
        1
    } else {
        0
    }
}

/// Everything fixed within one scenario run: geometry-derived parameters,
/// frame schedule, DL precoders built from estimated channels, pilot book,
/// transmit-side coupling rows and the whitened receive-side kernels for both
/// clutter modes.
pub struct ScenarioRealization {
    /// The configuration this realization was generated from.
    pub cfg: ScenarioConfig,
    /// Frame layout.
    pub schedule: FrameSchedule,
    /// Sensing-model constants.
    pub scene: SensingScene,
    /// True target parameters (gains pinned at their RMS unless randomized).
    pub params: TargetParams,
    /// UL pilot book (absent when `tau_p = 0`).
    pub pilot_book: Option<PilotBook>,
    /// Per-(block, UE-PRB) DL precoders, `M_tx x (K M_UE)`.
    comm_precoders: Vec<CMat>,
    /// Transmit coupling rows of the comm precoders: `a_tx^H F diag(rho)` and
    /// its angle derivative, per (block, UE-PRB).
    comm_rows: Vec<(CVec, CVec)>,
    /// Sweep couplings per sweep index: `(a_tx^H f rho_s, da_tx^H f rho_s)`.
    sens_rows: Vec<(C64, C64)>,
    /// UL coupling rows per UE: `rho conj(a_ue)` and `rho conj(da_ue)`.
    ul_rows: Vec<(CVec, CVec)>,
    /// Whitened receive kernels: `[mode][link]` with link 0 = DL, 1 = UL.
    kernels: [[SpanKernel; 2]; 2],
    /// Whiteners for the dense path, same indexing.
    whiteners: [[BinWhitener; 2]; 2],
    n_streams_dl: usize,
}

impl ScenarioRealization {
    /// Builds the scenario: geometry, pilot book, channel estimates for the
    /// DL precoders and the whitened kernels. Deterministic in
    /// `cfg.rng_seed`.
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = build_schedule(cfg)?;
        let scene = SensingScene::new(cfg)?;
        let mut params = derive_geometry(cfg)?;
        if cfg.randomize_gains {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::substream(cfg.rng_seed, &[2]));
            randomize_gains(&mut params, &mut rng);
        }
        let k_ues = cfg.k_ues();
        let n_streams_dl = k_ues * cfg.m_ue;

        let pilot_book = if cfg.tau_p > 0 {
            Some(generate_pilots(k_ues, cfg.m_ue, cfg.tau_p)?)
        } else {
            None
        };

        // DL precoders from per-(block, PRB) channel estimates
        let has_comm_dl = cfg.tau_dl > 0 && cfg.n_prb_ue > 0;
        let n_blocks = cfg.n_blocks();
        let mut comm_precoders = Vec::new();
        if has_comm_dl {
            if cfg.tau_p == 0 {
                return Err(CoreError::Config(
                    "DL precoding requires UL pilots (tau_p > 0)".into(),
                ));
            }
            let rho = cfg.ue_stream_amplitude();
            let w0p0 = CMat::identity(cfg.m_ue, cfg.m_ue) * C64::new(rho, 0.0);
            let d = pilot_map(&w0p0, cfg.nu_p, cfg.m_bs_tx);
            let obs_len = d.nrows() * (cfg.p + 1);
            let dim = cfg.m_bs_tx * cfg.m_ue;

            let mut alphas = Vec::with_capacity(k_ues);
            let mut estimators = Vec::with_capacity(k_ues);
            let mut grams = Vec::with_capacity(k_ues);
            let mut trajs: Vec<Vec<CVec>> = Vec::with_capacity(k_ues);
            for k in 0..k_ues {
                let alpha = pathloss(cfg, k)?;
                let cov = build_spatial_covariance(cfg, k)?;
                let zeta = zeta_vec(cfg, k, cfg.p);
                let est =
                    MmseEstimator::build(&cov.c_full, &zeta, &d, alpha, cfg.tau_p, cfg.noise_var)?;
                grams.push(error_gram(&est.xi_tilde, cfg.m_bs_tx, cfg.m_ue));
                estimators.push(est);
                alphas.push(alpha);

                // one joint trajectory over the frame (plus history) per PRB
                let zeta_full = zeta_vec(cfg, k, n_blocks - 1 + cfg.p);
                let sampler = TrajectorySampler::new(&cov, &zeta_full)?;
                let per_prb: Vec<CVec> = (0..cfg.n_prb_ue)
                    .map(|n| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seeding::substream(
                            cfg.rng_seed,
                            &[3, k as u64, n as u64],
                        ));
                        sampler.sample(&mut rng)
                    })
                    .collect();
                trajs.push(per_prb);
            }

            for b in 0..n_blocks {
                #[allow(clippy::needless_range_loop)] // n addresses trajs[k][n]
                for n in 0..cfg.n_prb_ue {
                    let mut est_channels = Vec::with_capacity(k_ues);
                    for k in 0..k_ues {
                        // window [current; past ...] = trajectory slices b+p .. b
                        let mut window = CVec::zeros(dim * (cfg.p + 1));
                        for j in 0..=cfg.p {
                            let slice = trajs[k][n].rows((b + cfg.p - j) * dim, dim);
                            window.rows_mut(j * dim, dim).copy_from(&slice);
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(seeding::substream(
                            cfg.rng_seed,
                            &[4, k as u64, b as u64, n as u64],
                        ));
                        let noise = CVec::from_fn(obs_len, |_, _| {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            C64::new(re, im) * (cfg.noise_var / 2.0).sqrt()
                        });
                        let y = stack_pilot_observation(&d, alphas[k], cfg.tau_p, &window, &noise);
                        let h_hat = estimators[k].estimate(&y)?;
                        est_channels.push(CMat::from_column_slice(
                            cfg.m_bs_tx,
                            cfg.m_ue,
                            h_hat.as_slice(),
                        ));
                    }
                    let f_k = mmse_precoder(&est_channels, &grams, &alphas, cfg.noise_var)?;
                    let mut f = CMat::zeros(cfg.m_bs_tx, n_streams_dl);
                    for (k, fk) in f_k.iter().enumerate() {
                        f.view_mut((0, k * cfg.m_ue), (cfg.m_bs_tx, cfg.m_ue))
                            .copy_from(fk);
                    }
                    comm_precoders.push(f);
                }
            }
        }

        // transmit-side coupling caches
        let a_tx = steering(cfg.m_bs_tx, params.tx_angles[0]);
        let da_tx = steering_derivative(cfg.m_bs_tx, params.tx_angles[0]);

        let mut comm_rows = Vec::with_capacity(comm_precoders.len());
        if has_comm_dl {
            let rho_c = power_allocation(
                cfg,
                &schedule,
                (cfg.tau_c - 1, schedule.ue_subcarriers()[0]),
            )?;
            for f in &comm_precoders {
                let t_raw = f.adjoint() * &a_tx; // entries conj((a^H F)_s)
                let dt_raw = f.adjoint() * &da_tx;
                let t = CVec::from_fn(n_streams_dl, |s, _| t_raw[s].conj() * rho_c[s]);
                let dt = CVec::from_fn(n_streams_dl, |s, _| dt_raw[s].conj() * rho_c[s]);
                comm_rows.push((t, dt));
            }
        }

        let mut sens_rows = Vec::new();
        if !schedule.sensing_subcarriers().is_empty() {
            let n_sweep = cfg.tau_dl.max(1);
            let rho_s =
                ((1.0 - cfg.gamma) * cfg.p_bs / schedule.sensing_subcarriers().len() as f64).sqrt();
            for j in 0..n_sweep {
                let angle = sweep_angle(cfg.sweep_width, n_sweep, j);
                let f = steering(cfg.m_bs_tx, angle).map(|z| z / (cfg.m_bs_tx as f64).sqrt());
                sens_rows.push((a_tx.dotc(&f) * rho_s, da_tx.dotc(&f) * rho_s));
            }
        }

        let rho_ue = cfg.ue_stream_amplitude();
        let mut ul_rows = Vec::with_capacity(k_ues);
        for k in 0..k_ues {
            let a_ue = steering(cfg.m_ue, params.tx_angles[k + 1]);
            let da_ue = steering_derivative(cfg.m_ue, params.tx_angles[k + 1]);
            ul_rows.push((
                a_ue.map(|z| z.conj() * rho_ue),
                da_ue.map(|z| z.conj() * rho_ue),
            ));
        }

        // whitened receive kernels for both clutter modes and links
        let b_sp = build_spatial_clutter(
            &cfg.clutter.patch_positions,
            cfg.clutter.angular_spread,
            cfg.m_bs_rx,
            cfg.bs2_pos,
        )?;
        let covs = per_bin_cov(&cfg.clutter, &b_sp, cfg.noise_var)?;
        let eye = HermitianMatrix::identity(cfg.m_bs_rx).scale(cfg.noise_var);
        let w_dl = BinWhitener::new(&covs.r_dl)?;
        let w_ul = BinWhitener::new(&covs.r_ul)?;
        let w_noise = BinWhitener::new(&eye)?;
        let a_rx = steering(cfg.m_bs_rx, params.rx_angle);
        let da_rx = steering_derivative(cfg.m_bs_rx, params.rx_angle);
        let kernels = [
            [
                SpanKernel::new(&w_dl, &a_rx, &da_rx),
                SpanKernel::new(&w_ul, &a_rx, &da_rx),
            ],
            [
                SpanKernel::new(&w_noise, &a_rx, &da_rx),
                SpanKernel::new(&w_noise, &a_rx, &da_rx),
            ],
        ];
        let whiteners = [[w_dl, w_ul], [w_noise.clone(), w_noise]];

        Ok(Self {
            cfg: cfg.clone(),
            schedule,
            scene,
            params,
            pilot_book,
            comm_precoders,
            comm_rows,
            sens_rows,
            ul_rows,
            kernels,
            whiteners,
            n_streams_dl,
        })
    }

    /// The whitener of a link under a clutter mode (dense path).
    pub fn whitener(&self, mode: ClutterMode, kind: BinKind) -> &BinWhitener {
        &self.whiteners[mode_index(mode)][link_index(kind)]
    }

    /// Sweep index of symbol time `i` (the sweep repeats every `tau_dl`
    /// symbols across the frame).
    fn sweep_index(&self, i: usize) -> usize {
        i % self.sens_rows.len().max(1)
    }

    /// Draws the symbols of bin `(i, v)` for one waveform realization;
    /// UL pilot bins carry the deterministic pilot columns.
    pub fn bin_symbols(&self, realization: usize, i: usize, v: usize) -> CVec {
        let kind = self.schedule.kind(i, v);
        match kind {
            BinKind::UplinkPilot => {
                let book = self.pilot_book.as_ref().expect("pilot bins require pilots");
                let t = self.schedule.pilot_symbol_index(i).expect("pilot phase");
                let m_ue = self.cfg.m_ue;
                CVec::from_fn(self.cfg.k_ues() * m_ue, |s, _| {
                    book.pilots[s / m_ue][(s % m_ue, t)]
                })
            }
            BinKind::UplinkData => {
                let mut rng = bin_rng(self.cfg.rng_seed, realization, i, v);
                standard_symbols(self.cfg.k_ues() * self.cfg.m_ue, &mut rng)
            }
            BinKind::Downlink => {
                let mut rng = bin_rng(self.cfg.rng_seed, realization, i, v);
                let n = if self.schedule.is_sensing_subcarrier(v) {
                    1
                } else {
                    self.n_streams_dl
                };
                standard_symbols(n, &mut rng)
            }
        }
    }

    /// Builds the full [`BinContext`] of a bin (dense path).
    pub fn bin_context(&self, realization: usize, i: usize, v: usize) -> Result<BinContext> {
        let kind = self.schedule.kind(i, v);
        let symbols = self.bin_symbols(realization, i, v);
        let signal = match kind {
            BinKind::Downlink => {
                let powers = power_allocation(&self.cfg, &self.schedule, (i, v))?;
                let precoder = if self.schedule.is_sensing_subcarrier(v) {
                    let j = self.sweep_index(i);
                    let angle = sweep_angle(self.cfg.sweep_width, self.sens_rows.len(), j);
                    let f = steering(self.cfg.m_bs_tx, angle)
                        .map(|z| z / (self.cfg.m_bs_tx as f64).sqrt());
                    CMat::from_columns(&[f])
                } else {
                    let idx =
                        self.schedule.block_of(i) * self.cfg.n_prb_ue + self.schedule.prb_of(v);
                    self.comm_precoders[idx].clone()
                };
                BinSignal::Downlink {
                    precoder,
                    powers,
                    symbols,
                }
            }
            _ => BinSignal::Uplink {
                powers: vec![self.cfg.ue_stream_amplitude(); symbols.len()],
                symbols,
            },
        };
        let known = self.hybrid_known(kind, v);
        Ok(BinContext {
            i,
            v,
            signal,
            known_symbols: known,
        })
    }

    /// True when the hybrid regime knows this bin's symbols.
    pub fn hybrid_known(&self, kind: BinKind, v: usize) -> bool {
        kind == BinKind::UplinkPilot
            || (kind == BinKind::Downlink && self.schedule.is_sensing_subcarrier(v))
    }

    fn path_phase(&self, j: usize, i: usize, v: usize) -> C64 {
        let f_d = if j == 0 {
            self.scene.doppler_bs(self.params.velocity)
        } else {
            self.scene.doppler_ue(j - 1, self.params.velocity)
        };
        let arg = -2.0 * std::f64::consts::PI * f_d * self.scene.symbol_t * i as f64
            + 2.0 * std::f64::consts::PI * self.scene.delta_f * v as f64 * self.params.delays[j];
        C64::from_polar(1.0, arg)
    }

    /// Span coefficients of bin `(i, v)` for one symbol draw: the
    /// receive-steering coefficient per parameter column, the single
    /// receive-angle-derivative coefficient and the magnitude scale of the
    /// symbol columns.
    fn bin_coefficients(&self, realization: usize, i: usize, v: usize) -> BinCoeffs {
        let layout = self.scene.layout();
        let kind = self.schedule.kind(i, v);
        let symbols = self.bin_symbols(realization, i, v);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut c_a = vec![C64::new(0.0, 0.0); layout.dim()];
        let mut c_da = C64::new(0.0, 0.0);
        let mut z_scale = 0.0f64;

        match kind {
            BinKind::Downlink => {
                let (t, dt) = if self.schedule.is_sensing_subcarrier(v) {
                    let (ts, dts) = self.sens_rows[self.sweep_index(i)];
                    (CVec::from_vec(vec![ts]), CVec::from_vec(vec![dts]))
                } else {
                    let idx =
                        self.schedule.block_of(i) * self.cfg.n_prb_ue + self.schedule.prb_of(v);
                    let (t, dt) = &self.comm_rows[idx];
                    (t.clone(), dt.clone())
                };
                let g = t.dot(&symbols);
                let dg = dt.dot(&symbols);
                let ph = self.path_phase(0, i, v);
                let base = self.params.gains[0] * ph;
                c_a[layout.tx_angle(0)] = base * dg;
                c_da = base * g;
                c_a[layout.delay(0)] =
                    C64::new(0.0, two_pi * self.scene.delta_f * v as f64) * base * g;
                for d in 0..2 {
                    c_a[layout.velocity(d)] = C64::new(
                        0.0,
                        -two_pi * self.scene.symbol_t * i as f64 * self.scene.dopp_grad_bs[d],
                    ) * base
                        * g;
                }
                c_a[layout.gain_re(0)] = ph * g;
                c_a[layout.gain_im(0)] = C64::new(0.0, 1.0) * ph * g;
                z_scale = (0..t.len())
                    .map(|s| (base * t[s]).norm())
                    .fold(0.0, f64::max);
            }
            BinKind::UplinkData | BinKind::UplinkPilot => {
                for k in 0..self.scene.k {
                    let (r, dr) = &self.ul_rows[k];
                    let x = symbols.rows(k * self.cfg.m_ue, self.cfg.m_ue);
                    let g: C64 = (0..self.cfg.m_ue).map(|u| r[u] * x[u]).sum();
                    let dg: C64 = (0..self.cfg.m_ue).map(|u| dr[u] * x[u]).sum();
                    let ph = self.path_phase(k + 1, i, v);
                    let base = self.params.gains[k + 1] * ph;
                    c_a[layout.tx_angle(k + 1)] = base * dg;
                    c_da += base * g;
                    c_a[layout.delay(k + 1)] =
                        C64::new(0.0, two_pi * self.scene.delta_f * v as f64) * base * g;
                    for d in 0..2 {
                        c_a[layout.velocity(d)] += C64::new(
                            0.0,
                            -two_pi
                                * self.scene.symbol_t
                                * i as f64
                                * self.scene.dopp_grad_ue[k][d],
                        ) * base
                            * g;
                    }
                    c_a[layout.gain_re(k + 1)] = ph * g;
                    c_a[layout.gain_im(k + 1)] = C64::new(0.0, 1.0) * ph * g;
                    z_scale = z_scale.max(
                        (0..self.cfg.m_ue)
                            .map(|u| (base * r[u]).norm())
                            .fold(0.0, f64::max),
                    );
                }
            }
        }
        BinCoeffs {
            c_a,
            c_da,
            rx_angle_col: layout.rx_angle(),
            z_scale,
        }
    }
}

fn sweep_angle(width: f64, n_sweep: usize, j: usize) -> f64 {
    if n_sweep <= 1 {
        0.0
    } else {
        -width / 2.0 + width * j as f64 / (n_sweep as f64 - 1.0)
    }
}

fn bin_rng(seed: u64, realization: usize, i: usize, v: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeding::substream(
        seed,
        &[1, realization as u64, i as u64, v as u64],
    ))
}

fn standard_symbols<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Per-bin span coefficients (see [`ScenarioRealization::bin_coefficients`]).
struct BinCoeffs {
    c_a: Vec<C64>,
    c_da: C64,
    rx_angle_col: usize,
    z_scale: f64,
}

// ---------------------------------------------------------------------------
// factor-path assembly
// ---------------------------------------------------------------------------

/// Real 4-vector image of a whitened span 2-vector.
#[inline]
fn vec4(w: Vector2<C64>) -> [f64; 4] {
    let s = std::f64::consts::SQRT_2;
    [s * w[0].re, s * w[1].re, s * w[0].im, s * w[1].im]
}

/// Accumulates `F^T F` over the factor columns into a symmetric matrix.
fn accumulate_gram(sum: &mut RMat, cols: &[[f64; 4]]) {
    let n = cols.len();
    for a in 0..n {
        let ca = cols[a];
        for b in a..n {
            let cb = cols[b];
            let dot = ca[0] * cb[0] + ca[1] * cb[1] + ca[2] * cb[2] + ca[3] * cb[3];
            sum[(a, b)] += dot;
            if a != b {
                sum[(b, a)] += dot;
            }
        }
    }
}

/// One-realization FIMs for every (mode, regime) pair, sharing the per-bin
/// symbol draws and span coefficients.
fn assemble_realization(
    real: &ScenarioRealization,
    modes: &[ClutterMode],
    regimes: &[Regime],
    realization: usize,
) -> Vec<RMat> {
    let dim = real.scene.layout().dim();
    let mut sums = vec![RMat::zeros(dim, dim); modes.len() * regimes.len()];
    let mut cols_clair: Vec<[f64; 4]> = vec![[0.0; 4]; dim];
    let mut cols_eff: Vec<[f64; 4]> = vec![[0.0; 4]; dim];

    for i in 0..real.schedule.i_total() {
        for v in 0..real.schedule.n_subcarriers() {
            let kind = real.schedule.kind(i, v);
            let coeffs = real.bin_coefficients(realization, i, v);
            let hybrid_known = real.hybrid_known(kind, v);
            for (mi, &mode) in modes.iter().enumerate() {
                let kernel = &real.kernels[mode_index(mode)][link_index(kind)];
                for (l, col) in cols_clair.iter_mut().enumerate() {
                    let c_da = if l == coeffs.rx_angle_col {
                        coeffs.c_da
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    *col = vec4(kernel.map(coeffs.c_a[l], c_da));
                }

                // nuisance span: the symbol columns fill the two real
                // directions of {K^(1/2) e1 * z}; project them out unless the
                // bin carries no transmit coupling at all
                let needs_eff = regimes
                    .iter()
                    .any(|&r| r == Regime::FullyUnknown || (r == Regime::Hybrid && !hybrid_known));
                if needs_eff {
                    if coeffs.z_scale > 0.0 {
                        let b1 = vec4(kernel.map(C64::new(1.0, 0.0), C64::new(0.0, 0.0)));
                        let b2 = vec4(kernel.map(C64::new(0.0, 1.0), C64::new(0.0, 0.0)));
                        let n1 = b1.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let n2 = b2.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if n1 > 0.0 && n2 > 0.0 {
                            let b1n: [f64; 4] = std::array::from_fn(|r| b1[r] / n1);
                            let b2n: [f64; 4] = std::array::from_fn(|r| b2[r] / n2);
                            for (l, col) in cols_eff.iter_mut().enumerate() {
                                let c = cols_clair[l];
                                let p1: f64 = (0..4).map(|r| c[r] * b1n[r]).sum();
                                let p2: f64 = (0..4).map(|r| c[r] * b2n[r]).sum();
                                let mut res: [f64; 4] =
                                    std::array::from_fn(|r| c[r] - p1 * b1n[r] - p2 * b2n[r]);
                                // columns removed exactly by the projection
                                // leave only rounding residue; snap it to
                                // zero so dead parameters stay exactly dead
                                let before: f64 = c.iter().map(|x| x * x).sum();
                                let after: f64 = res.iter().map(|x| x * x).sum();
                                if after <= 1e-24 * before {
                                    res = [0.0; 4];
                                }
                                *col = res;
                            }
                        } else {
                            cols_eff.copy_from_slice(&cols_clair);
                        }
                    } else {
                        cols_eff.copy_from_slice(&cols_clair);
                    }
                }

                for (ri, &regime) in regimes.iter().enumerate() {
                    let slot = mi * regimes.len() + ri;
                    match regime {
                        Regime::Clairvoyant => accumulate_gram(&mut sums[slot], &cols_clair),
                        Regime::FullyUnknown => accumulate_gram(&mut sums[slot], &cols_eff),
                        Regime::Hybrid => {
                            if hybrid_known {
                                accumulate_gram(&mut sums[slot], &cols_clair)
                            } else {
                                accumulate_gram(&mut sums[slot], &cols_eff)
                            }
                        }
                    }
                }
            }
        }
    }
    sums
}

/// Assembles the FIM of one waveform realization under one regime and
/// clutter mode (factor path).
pub fn assemble_fim(
    real: &ScenarioRealization,
    regime: Regime,
    mode: ClutterMode,
    realization: usize,
) -> RMat {
    assemble_realization(real, &[mode], &[regime], realization)
        .pop()
        .expect("one cell")
}

// ---------------------------------------------------------------------------
// Monte-Carlo averaging and CRB extraction
// ---------------------------------------------------------------------------

/// Cramér–Rao bounds in reporting units: angles in degrees, delays in meters
/// (multiplied by the speed of light), velocity in m/s, gains unitless.
#[derive(Debug, Clone)]
pub struct CrbReport {
    /// Parameter names in flattened order.
    pub names: Vec<String>,
    /// Reporting units per parameter.
    pub units: Vec<&'static str>,
    /// `sqrt([J^-1]_ll)` after unit conversion; all infinite when the
    /// averaged FIM is singular.
    pub values: Vec<f64>,
    /// Whether the averaged FIM was singular.
    pub singular: bool,
    /// Parameters with significant null-space overlap (the diagnostic of a
    /// singular FIM).
    pub unidentifiable: Vec<String>,
}

impl CrbReport {
    /// Look up a parameter by name.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|idx| self.values[idx])
    }
}

/// Inverts a Monte-Carlo-averaged FIM and converts the diagonal to reporting
/// units. The matrix is equilibrated to unit diagonal before the eigenvalue
/// cutoff so the wildly different natural units (seconds vs radians) do not
/// masquerade as rank deficiency.
pub fn crb_from_fim(avg_fim: &RMat, layout: &ParamLayout) -> CrbReport {
    let dim = layout.dim();
    assert_eq!(avg_fim.nrows(), dim);
    let names = layout.names();
    let units = layout.units();

    let mut scale = vec![0.0f64; dim];
    let mut dead = Vec::new();
    for l in 0..dim {
        let d = avg_fim[(l, l)];
        if d > 0.0 {
            scale[l] = d.sqrt();
        } else {
            dead.push(l);
        }
    }
    let mut singular = !dead.is_empty();
    let mut unident: Vec<usize> = dead.clone();

    let live: Vec<usize> = (0..dim).filter(|l| !dead.contains(l)).collect();
    let mut values = vec![f64::INFINITY; dim];
    if !live.is_empty() {
        let n = live.len();
        let norm = RMat::from_fn(n, n, |r, c| {
            avg_fim[(live[r], live[c])] / (scale[live[r]] * scale[live[c]])
        });
        let eig = norm.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
        let cut = FIM_SINGULAR_CUTOFF * top.max(f64::MIN_POSITIVE);
        let mut null_overlap = vec![0.0f64; n];
        let mut any_null = false;
        for (idx, &l) in eig.eigenvalues.iter().enumerate() {
            if l <= cut {
                any_null = true;
                for (r, slot) in null_overlap.iter_mut().enumerate() {
                    *slot += eig.eigenvectors[(r, idx)].powi(2);
                }
            }
        }
        if any_null {
            singular = true;
            for r in 0..n {
                if null_overlap[r] > 1e-6 {
                    unident.push(live[r]);
                }
            }
        } else {
            for r in 0..n {
                let mut inv_rr = 0.0;
                for idx in 0..n {
                    inv_rr += eig.eigenvectors[(r, idx)].powi(2) / eig.eigenvalues[idx];
                }
                values[live[r]] = (inv_rr / (scale[live[r]] * scale[live[r]])).sqrt();
            }
        }
    }

    if singular {
        values = vec![f64::INFINITY; dim];
    } else {
        let kp1 = layout.k + 1;
        for (l, value) in values.iter_mut().enumerate() {
            *value *= if l <= kp1 {
                180.0 / std::f64::consts::PI // angles
            } else if l < 2 * kp1 + 1 {
                SPEED_OF_LIGHT // delays
            } else {
                1.0
            };
        }
    }

    unident.sort_unstable();
    unident.dedup();
    CrbReport {
        names: names.clone(),
        units,
        values,
        singular,
        unidentifiable: unident.into_iter().map(|l| names[l].clone()).collect(),
    }
}

/// One (clutter mode, regime) cell of a Monte-Carlo CRB evaluation.
#[derive(Debug, Clone)]
pub struct CrbCell {
    /// Clutter mode of this cell.
    pub mode: ClutterMode,
    /// Regime of this cell.
    pub regime: Regime,
    /// Monte-Carlo-averaged FIM.
    pub avg_fim: RMat,
    /// CRBs extracted from the averaged FIM.
    pub report: CrbReport,
}

/// Runs the Monte-Carlo protocol over waveform realizations for every
/// (mode, regime) pair, sharing the symbol draws across cells so that regime
/// and clutter orderings hold realization by realization. FIMs are averaged
/// before inversion; realizations are reduced in index order, so the result
/// does not depend on thread scheduling.
pub fn monte_carlo_crb_matrix(
    cfg: &ScenarioConfig,
    regimes: &[Regime],
    modes: &[ClutterMode],
    n_real: usize,
) -> Result<Vec<CrbCell>> {
    if n_real == 0 {
        return Err(CoreError::Domain("need at least one realization".into()));
    }
    let real = ScenarioRealization::generate(cfg)?;
    let layout = real.scene.layout();
    let dim = layout.dim();

    let per_real: Vec<Vec<RMat>> = (0..n_real)
        .into_par_iter()
        .map(|r| assemble_realization(&real, modes, regimes, r))
        .collect();

    let cells = modes.len() * regimes.len();
    let mut acc = vec![FimAccumulator::new(dim); cells];
    for sums in &per_real {
        for (slot, fim) in sums.iter().enumerate() {
            acc[slot].add(fim);
        }
    }

    let mut out = Vec::with_capacity(cells);
    for (mi, &mode) in modes.iter().enumerate() {
        for (ri, &regime) in regimes.iter().enumerate() {
            let avg = acc[mi * regimes.len() + ri].mean();
            let report = crb_from_fim(&avg, &layout);
            out.push(CrbCell {
                mode,
                regime,
                avg_fim: avg,
                report,
            });
        }
    }
    Ok(out)
}

/// Monte-Carlo CRB for a single regime and clutter mode.
pub fn monte_carlo_crb(
    cfg: &ScenarioConfig,
    regime: Regime,
    mode: ClutterMode,
    n_real: usize,
) -> Result<CrbCell> {
    Ok(monte_carlo_crb_matrix(cfg, &[regime], &[mode], n_real)?
        .pop()
        .expect("one cell"))
}
