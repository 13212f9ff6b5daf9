//! Bistatic target model: geometry, steering vectors, per-bin echo means at
//! the sensing receiver and their analytic Jacobians.
//!
//! Every echo path (BS1→target→BS2 on DL bins, UE_k→target→BS2 on UL bins) is
//! rank one: a complex gain, a delay phase across subcarriers, a Doppler
//! phase across symbols, a transmit-side steering inner product and the
//! receive steering vector at BS2. All parameter derivatives therefore stay
//! inside the two-dimensional span of the receive steering vector and its
//! angle derivative, which the Fisher-information assembly exploits.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{CMat, CVec, RVec, C64};
use crate::scenario::{ScenarioConfig, SPEED_OF_LIGHT};
use crate::{CoreError, Result};

/// Deterministic unknown parameter vector of the target.
///
/// Flattened layout (dimension `4(K+1) + 3`): the `K+1` transmit-side angles
/// (BS path first, then one per UE path), the common receive-side angle at
/// BS2, the `K+1` bistatic delays, the two velocity components, then the real
/// and imaginary parts of the `K+1` complex path gains.
#[derive(Debug, Clone)]
pub struct TargetParams {
    /// Transmit-side angles `[theta_BS, theta_1, ..., theta_K]` (radians).
    pub tx_angles: Vec<f64>,
    /// Receive-side angle at BS2 (radians).
    pub rx_angle: f64,
    /// Bistatic delays `[tau_BS, tau_1, ..., tau_K]` (seconds).
    pub delays: Vec<f64>,
    /// Target velocity (m/s).
    pub velocity: [f64; 2],
    /// Complex path gains `[beta_BS, beta_1, ..., beta_K]`.
    pub gains: Vec<C64>,
}

impl TargetParams {
    /// Number of UE paths.
    pub fn n_ue_paths(&self) -> usize {
        self.tx_angles.len() - 1
    }

    /// Flattened dimension `4(K+1) + 3`.
    pub fn dim(&self) -> usize {
        4 * self.tx_angles.len() + 3
    }

    /// Flatten into the canonical ordering.
    pub fn flatten(&self) -> RVec {
        let kp1 = self.tx_angles.len();
        let mut out = RVec::zeros(self.dim());
        for (j, &t) in self.tx_angles.iter().enumerate() {
            out[j] = t;
        }
        out[kp1] = self.rx_angle;
        for (j, &t) in self.delays.iter().enumerate() {
            out[kp1 + 1 + j] = t;
        }
        out[2 * kp1 + 1] = self.velocity[0];
        out[2 * kp1 + 2] = self.velocity[1];
        for (j, b) in self.gains.iter().enumerate() {
            out[2 * kp1 + 3 + j] = b.re;
            out[3 * kp1 + 3 + j] = b.im;
        }
        out
    }

    /// Rebuild from the canonical flattened ordering.
    pub fn from_flat(x: &RVec, n_ue_paths: usize) -> Self {
        let kp1 = n_ue_paths + 1;
        assert_eq!(x.len(), 4 * kp1 + 3);
        TargetParams {
            tx_angles: (0..kp1).map(|j| x[j]).collect(),
            rx_angle: x[kp1],
            delays: (0..kp1).map(|j| x[kp1 + 1 + j]).collect(),
            velocity: [x[2 * kp1 + 1], x[2 * kp1 + 2]],
            gains: (0..kp1)
                .map(|j| C64::new(x[2 * kp1 + 3 + j], x[3 * kp1 + 3 + j]))
                .collect(),
        }
    }
}

/// Index bookkeeping for the flattened parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct ParamLayout {
    /// Number of UE paths `K`.
    pub k: usize,
}

impl ParamLayout {
    /// Flattened dimension.
    pub fn dim(&self) -> usize {
        4 * (self.k + 1) + 3
    }

    /// Index of the transmit-side angle of path `j` (0 = BS path).
    pub fn tx_angle(&self, j: usize) -> usize {
        j
    }

    /// Index of the receive-side angle.
    pub fn rx_angle(&self) -> usize {
        self.k + 1
    }

    /// Index of the delay of path `j`.
    pub fn delay(&self, j: usize) -> usize {
        self.k + 2 + j
    }

    /// Index of velocity component `d` (0 = x, 1 = y).
    pub fn velocity(&self, d: usize) -> usize {
        2 * self.k + 3 + d
    }

    /// Index of `Re(gain_j)`.
    pub fn gain_re(&self, j: usize) -> usize {
        2 * self.k + 5 + j
    }

    /// Index of `Im(gain_j)`.
    pub fn gain_im(&self, j: usize) -> usize {
        3 * self.k + 6 + j
    }

    /// Human-readable parameter names in flattened order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.push("theta_bs".to_string());
        for j in 1..=self.k {
            names.push(format!("theta_ue{j}"));
        }
        names.push("psi".to_string());
        names.push("tau_bs".to_string());
        for j in 1..=self.k {
            names.push(format!("tau_ue{j}"));
        }
        names.push("omega_x".to_string());
        names.push("omega_y".to_string());
        names.push("re_beta_bs".to_string());
        for j in 1..=self.k {
            names.push(format!("re_beta_ue{j}"));
        }
        names.push("im_beta_bs".to_string());
        for j in 1..=self.k {
            names.push(format!("im_beta_ue{j}"));
        }
        names
    }

    /// Unit of each parameter once converted for reporting.
    pub fn units(&self) -> Vec<&'static str> {
        let kp1 = self.k + 1;
        let mut u = Vec::with_capacity(self.dim());
        u.extend(std::iter::repeat_n("deg", kp1 + 1));
        u.extend(std::iter::repeat_n("m", kp1));
        u.extend(["m/s", "m/s"]);
        u.extend(std::iter::repeat_n("1", 2 * kp1));
        u
    }
}

/// Scenario-derived constants of the sensing model that do not vary with the
/// unknown parameters: dimensions, OFDM timing and the directional factors of
/// the Doppler map (evaluated at the true geometry).
#[derive(Debug, Clone)]
pub struct SensingScene {
    /// Receive antennas at BS2.
    pub m_rx: usize,
    /// Transmit antennas at BS1.
    pub m_tx: usize,
    /// Antennas per UE.
    pub m_ue: usize,
    /// Number of UEs.
    pub k: usize,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    /// OFDM symbol duration (s).
    pub symbol_t: f64,
    /// Gradient of the BS-path Doppler w.r.t. the target velocity (1/m).
    pub dopp_grad_bs: [f64; 2],
    /// Per-UE gradients of the UE-path Dopplers w.r.t. the target velocity.
    pub dopp_grad_ue: Vec<[f64; 2]>,
    /// Per-UE constant Doppler offsets from the known UE velocities (Hz).
    pub dopp_offset_ue: Vec<f64>,
}

impl SensingScene {
    /// Builds the constants from the configured geometry.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let t = cfg.target_pos;
        let q = cfg.bs2_pos;
        let lambda = cfg.wavelength();
        let nt = norm2(t);
        let qt = [q[0] - t[0], q[1] - t[1]];
        let nqt = norm2(qt);
        if nt < 1e-9 || nqt < 1e-9 {
            return Err(CoreError::Geometry(
                "target coincides with a base station".into(),
            ));
        }
        let u_t = [t[0] / nt, t[1] / nt];
        let u_qt = [qt[0] / nqt, qt[1] / nqt];
        let dopp_grad_bs = [(u_t[0] - u_qt[0]) / lambda, (u_t[1] - u_qt[1]) / lambda];
        let mut dopp_grad_ue = Vec::with_capacity(cfg.k_ues());
        let mut dopp_offset_ue = Vec::with_capacity(cfg.k_ues());
        for (e, w) in cfg.ue_pos.iter().zip(cfg.ue_vel.iter()) {
            let te = [t[0] - e[0], t[1] - e[1]];
            let nte = norm2(te);
            if nte < 1e-9 {
                return Err(CoreError::Geometry("target coincides with a UE".into()));
            }
            let u_te = [te[0] / nte, te[1] / nte];
            dopp_grad_ue.push([(u_te[0] - u_qt[0]) / lambda, (u_te[1] - u_qt[1]) / lambda]);
            dopp_offset_ue.push(-(w[0] * u_te[0] + w[1] * u_te[1]) / lambda);
        }
        Ok(Self {
            m_rx: cfg.m_bs_rx,
            m_tx: cfg.m_bs_tx,
            m_ue: cfg.m_ue,
            k: cfg.k_ues(),
            delta_f: cfg.delta_f,
            symbol_t: cfg.symbol_duration(),
            dopp_grad_bs,
            dopp_grad_ue,
            dopp_offset_ue,
        })
    }

    /// BS-path Doppler for a given target velocity.
    pub fn doppler_bs(&self, velocity: [f64; 2]) -> f64 {
        velocity[0] * self.dopp_grad_bs[0] + velocity[1] * self.dopp_grad_bs[1]
    }

    /// UE-path Doppler for path `k` (1-based path index `j = k`).
    pub fn doppler_ue(&self, k: usize, velocity: [f64; 2]) -> f64 {
        velocity[0] * self.dopp_grad_ue[k][0]
            + velocity[1] * self.dopp_grad_ue[k][1]
            + self.dopp_offset_ue[k]
    }

    /// Parameter layout for this scene.
    pub fn layout(&self) -> ParamLayout {
        ParamLayout { k: self.k }
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Half-wavelength ULA steering vector, entry `m = exp(j pi m sin(angle))`.
pub fn steering(array_size: usize, angle: f64) -> CVec {
    let s = angle.sin();
    CVec::from_fn(array_size, |m, _| {
        C64::from_polar(1.0, std::f64::consts::PI * m as f64 * s)
    })
}

/// Angle derivative of [`steering`], entry `m = j pi m cos(angle) a_m`.
pub fn steering_derivative(array_size: usize, angle: f64) -> CVec {
    let s = angle.sin();
    let c = angle.cos();
    CVec::from_fn(array_size, |m, _| {
        let phase = C64::from_polar(1.0, std::f64::consts::PI * m as f64 * s);
        C64::new(0.0, std::f64::consts::PI * m as f64 * c) * phase
    })
}

/// RMS amplitude of a path gain from the bistatic radar equation, with
/// `r^4 -> range_tx^2 * range_rx^2`.
pub fn gain_rms(cfg: &ScenarioConfig, range_tx: f64, range_rx: f64) -> f64 {
    let var = SPEED_OF_LIGHT * SPEED_OF_LIGHT * cfg.rcs
        / ((4.0 * std::f64::consts::PI).powi(3)
            * cfg.f_c
            * cfg.f_c
            * range_tx
            * range_tx
            * range_rx
            * range_rx);
    var.sqrt()
}

/// Derives the true target parameters from the configured geometry.
///
/// Angles use `atan2`; delays sum the two legs of each bistatic path. Path
/// gains default to their RMS amplitude (real, positive) so runs are
/// reproducible; [`randomize_gains`] draws them from the complex Gaussian law
/// instead.
pub fn derive_geometry(cfg: &ScenarioConfig) -> Result<TargetParams> {
    let t = cfg.target_pos;
    let q = cfg.bs2_pos;
    let nt = norm2(t);
    let qt = [q[0] - t[0], q[1] - t[1]];
    let nqt = norm2(qt);
    if nt < 1e-9 || nqt < 1e-9 {
        return Err(CoreError::Geometry(
            "target coincides with a base station".into(),
        ));
    }
    let mut tx_angles = vec![t[1].atan2(t[0])];
    let mut delays = vec![(nt + nqt) / SPEED_OF_LIGHT];
    let mut gains = vec![C64::new(gain_rms(cfg, nt, nqt), 0.0)];
    for e in &cfg.ue_pos {
        let te = [t[0] - e[0], t[1] - e[1]];
        let nte = norm2(te);
        if nte < 1e-9 {
            return Err(CoreError::Geometry("target coincides with a UE".into()));
        }
        tx_angles.push(te[1].atan2(te[0]));
        delays.push((nte + nqt) / SPEED_OF_LIGHT);
        gains.push(C64::new(gain_rms(cfg, nte, nqt), 0.0));
    }
    Ok(TargetParams {
        tx_angles,
        rx_angle: qt[1].atan2(qt[0]),
        delays,
        velocity: cfg.target_vel,
        gains,
    })
}

/// Replaces the RMS gains with one complex Gaussian draw of the same law.
pub fn randomize_gains<R: Rng + ?Sized>(params: &mut TargetParams, rng: &mut R) {
    for g in params.gains.iter_mut() {
        let rms = g.norm();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *g = C64::new(re, im) * (rms * std::f64::consts::FRAC_1_SQRT_2);
    }
}

/// Transmit signal of one time-frequency bin as seen by the sensing receiver.
#[derive(Debug, Clone)]
pub enum BinSignal {
    /// BS1 transmits: precoder `F` (unit-norm columns), per-stream
    /// amplitudes and the symbol vector.
    Downlink {
        /// `M_BS^Tx x S` precoder.
        precoder: CMat,
        /// Per-stream amplitudes (length `S`).
        powers: Vec<f64>,
        /// Symbols (length `S`).
        symbols: CVec,
    },
    /// All `K` UEs transmit simultaneously with identity precoders: stacked
    /// per-stream amplitudes and symbols, `M_UE` entries per UE.
    Uplink {
        /// Per-stream amplitudes (length `K * M_UE`).
        powers: Vec<f64>,
        /// Stacked symbols (length `K * M_UE`).
        symbols: CVec,
    },
}

/// Everything attached to one time-frequency bin.
#[derive(Debug, Clone)]
pub struct BinContext {
    /// Symbol-time index.
    pub i: usize,
    /// Subcarrier index.
    pub v: usize,
    /// Transmit-side signal description.
    pub signal: BinSignal,
    /// Whether the sensing receiver knows the symbols of this bin.
    pub known_symbols: bool,
}

/// Phase factor of path `j` (0 = BS) at bin `(i, v)`: Doppler across symbols,
/// delay across subcarriers.
fn path_phase(params: &TargetParams, scene: &SensingScene, j: usize, i: usize, v: usize) -> C64 {
    let f_d = if j == 0 {
        scene.doppler_bs(params.velocity)
    } else {
        scene.doppler_ue(j - 1, params.velocity)
    };
    let arg = -2.0 * std::f64::consts::PI * f_d * scene.symbol_t * i as f64
        + 2.0 * std::f64::consts::PI * scene.delta_f * v as f64 * params.delays[j];
    C64::from_polar(1.0, arg)
}

/// BS1→target→BS2 channel matrix at bin `(i, v)`; rank one.
pub fn channel_bs_path(params: &TargetParams, scene: &SensingScene, i: usize, v: usize) -> CMat {
    let a_rx = steering(scene.m_rx, params.rx_angle);
    let a_tx = steering(scene.m_tx, params.tx_angles[0]);
    let scale = params.gains[0] * path_phase(params, scene, 0, i, v);
    (&a_rx * a_tx.adjoint()).map(|z| z * scale)
}

/// UE_k→target→BS2 channel matrix at bin `(i, v)`; rank one. `k` is 0-based.
pub fn channel_ue_path(
    params: &TargetParams,
    scene: &SensingScene,
    k: usize,
    i: usize,
    v: usize,
) -> CMat {
    let a_rx = steering(scene.m_rx, params.rx_angle);
    let a_ue = steering(scene.m_ue, params.tx_angles[k + 1]);
    let scale = params.gains[k + 1] * path_phase(params, scene, k + 1, i, v);
    (&a_rx * a_ue.adjoint()).map(|z| z * scale)
}

/// Noise- and clutter-free received mean of a bin.
pub fn mean_vector(ctx: &BinContext, params: &TargetParams, scene: &SensingScene) -> Result<CVec> {
    match &ctx.signal {
        BinSignal::Downlink {
            precoder,
            powers,
            symbols,
        } => {
            if precoder.nrows() != scene.m_tx
                || precoder.ncols() != powers.len()
                || powers.len() != symbols.len()
            {
                return Err(CoreError::Dimension(format!(
                    "DL bin: precoder {}x{}, {} powers, {} symbols",
                    precoder.nrows(),
                    precoder.ncols(),
                    powers.len(),
                    symbols.len()
                )));
            }
            let g = channel_bs_path(params, scene, ctx.i, ctx.v);
            let weighted = CVec::from_fn(symbols.len(), |s, _| symbols[s] * powers[s]);
            Ok(&g * (precoder * weighted))
        }
        BinSignal::Uplink { powers, symbols } => {
            if powers.len() != scene.k * scene.m_ue || symbols.len() != powers.len() {
                return Err(CoreError::Dimension(format!(
                    "UL bin: {} powers, {} symbols for {} UEs x {} antennas",
                    powers.len(),
                    symbols.len(),
                    scene.k,
                    scene.m_ue
                )));
            }
            let mut acc = CVec::zeros(scene.m_rx);
            for k in 0..scene.k {
                let g = channel_ue_path(params, scene, k, ctx.i, ctx.v);
                let x = CVec::from_fn(scene.m_ue, |u, _| {
                    symbols[k * scene.m_ue + u] * powers[k * scene.m_ue + u]
                });
                acc += &g * x;
            }
            Ok(acc)
        }
    }
}

/// Per-bin scalar couplings of path `j`: the transmit-side inner product
/// `g = a_tx^H (W P x)` and its angle derivative.
fn path_coupling(
    ctx: &BinContext,
    params: &TargetParams,
    scene: &SensingScene,
    j: usize,
) -> (C64, C64) {
    match &ctx.signal {
        BinSignal::Downlink {
            precoder,
            powers,
            symbols,
        } => {
            debug_assert_eq!(j, 0);
            let weighted = CVec::from_fn(symbols.len(), |s, _| symbols[s] * powers[s]);
            let s_vec = precoder * weighted;
            let a = steering(scene.m_tx, params.tx_angles[0]);
            let da = steering_derivative(scene.m_tx, params.tx_angles[0]);
            (a.dotc(&s_vec), da.dotc(&s_vec))
        }
        BinSignal::Uplink { powers, symbols } => {
            let k = j - 1;
            let x = CVec::from_fn(scene.m_ue, |u, _| {
                symbols[k * scene.m_ue + u] * powers[k * scene.m_ue + u]
            });
            let a = steering(scene.m_ue, params.tx_angles[j]);
            let da = steering_derivative(scene.m_ue, params.tx_angles[j]);
            (a.dotc(&x), da.dotc(&x))
        }
    }
}

/// Paths active in a bin: `[0]` for DL, `[1..=K]` for UL.
fn active_paths(ctx: &BinContext, scene: &SensingScene) -> Vec<usize> {
    match ctx.signal {
        BinSignal::Downlink { .. } => vec![0],
        BinSignal::Uplink { .. } => (1..=scene.k).collect(),
    }
}

/// Analytic Jacobian of the bin mean w.r.t. the flattened target parameters,
/// `M_BS^Rx x (4(K+1)+3)`. Columns of parameters that do not enter the bin
/// (e.g. UE-path angles on a DL bin) are zero.
pub fn jacobian_eta(ctx: &BinContext, params: &TargetParams, scene: &SensingScene) -> Result<CMat> {
    let layout = scene.layout();
    let a_rx = steering(scene.m_rx, params.rx_angle);
    let da_rx = steering_derivative(scene.m_rx, params.rx_angle);
    let mut jac = CMat::zeros(scene.m_rx, layout.dim());
    let two_pi = 2.0 * std::f64::consts::PI;
    for j in active_paths(ctx, scene) {
        let (g, dg) = path_coupling(ctx, params, scene, j);
        let ph = path_phase(params, scene, j, ctx.i, ctx.v);
        let base = params.gains[j] * ph;
        let mu_j = base * g;

        let set_col = |jac: &mut CMat, col: usize, coeff: C64, vec: &CVec| {
            for r in 0..scene.m_rx {
                jac[(r, col)] += coeff * vec[r];
            }
        };

        // transmit-side angle
        set_col(&mut jac, layout.tx_angle(j), base * dg, &a_rx);
        // receive-side angle (shared across paths)
        set_col(&mut jac, layout.rx_angle(), mu_j, &da_rx);
        // delay
        let dtau = C64::new(0.0, two_pi * scene.delta_f * ctx.v as f64) * mu_j;
        set_col(&mut jac, layout.delay(j), dtau, &a_rx);
        // velocity through the Doppler phase
        let grad = if j == 0 {
            scene.dopp_grad_bs
        } else {
            scene.dopp_grad_ue[j - 1]
        };
        for (d, &g_d) in grad.iter().enumerate() {
            let dv = C64::new(0.0, -two_pi * scene.symbol_t * ctx.i as f64 * g_d) * mu_j;
            set_col(&mut jac, layout.velocity(d), dv, &a_rx);
        }
        // gain (mean is linear in it)
        set_col(&mut jac, layout.gain_re(j), ph * g, &a_rx);
        set_col(
            &mut jac,
            layout.gain_im(j),
            C64::new(0.0, 1.0) * ph * g,
            &a_rx,
        );
    }
    Ok(jac)
}

/// Analytic Jacobian of the bin mean w.r.t. the per-bin nuisance vector
/// `z = [Re(x); Im(x)]`, `M_BS^Rx x 2S`. Independent of the symbol values
/// (the mean is linear in them).
pub fn jacobian_symbols(
    ctx: &BinContext,
    params: &TargetParams,
    scene: &SensingScene,
) -> Result<CMat> {
    match &ctx.signal {
        BinSignal::Downlink {
            precoder, powers, ..
        } => {
            let s = powers.len();
            let g = channel_bs_path(params, scene, ctx.i, ctx.v);
            let mut gfp = &g * precoder;
            for c in 0..s {
                for r in 0..scene.m_rx {
                    gfp[(r, c)] *= powers[c];
                }
            }
            let mut jac = CMat::zeros(scene.m_rx, 2 * s);
            for c in 0..s {
                for r in 0..scene.m_rx {
                    jac[(r, c)] = gfp[(r, c)];
                    jac[(r, s + c)] = C64::new(0.0, 1.0) * gfp[(r, c)];
                }
            }
            Ok(jac)
        }
        BinSignal::Uplink { powers, .. } => {
            let s = scene.k * scene.m_ue;
            let mut jac = CMat::zeros(scene.m_rx, 2 * s);
            for k in 0..scene.k {
                let g = channel_ue_path(params, scene, k, ctx.i, ctx.v);
                for u in 0..scene.m_ue {
                    let col = k * scene.m_ue + u;
                    for r in 0..scene.m_rx {
                        let val = g[(r, u)] * powers[col];
                        jac[(r, col)] = val;
                        jac[(r, s + col)] = C64::new(0.0, 1.0) * val;
                    }
                }
            }
            Ok(jac)
        }
    }
}

/// Evaluate the bin mean at perturbed parameters; used by the
/// finite-difference validation of [`jacobian_eta`].
pub fn mean_at(
    ctx: &BinContext,
    flat_params: &RVec,
    n_ue_paths: usize,
    scene: &SensingScene,
) -> CVec {
    let p = TargetParams::from_flat(flat_params, n_ue_paths);
    mean_vector(ctx, &p, scene).expect("consistent bin context")
}
