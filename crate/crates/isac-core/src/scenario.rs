//! Scenario configuration and frame layout.
//!
//! `ScenarioConfig` is the single source of truth for a run: geometry, OFDM
//! numerology, frame/PRB schedule parameters, power budgets and clutter
//! parameters. Config files (TOML or JSON) mirror the field names in
//! lower_snake_case with powers in dBm, clutter scalars in dB and angles in
//! degrees; everything is converted to SI units (watts, radians) at load.

use serde::{Deserialize, Serialize};

use crate::clutter::ClutterConfig;
use crate::{CoreError, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Unit conversions used at the config boundary.
pub mod units {
    /// dBm to watts.
    pub fn dbm_to_watts(dbm: f64) -> f64 {
        10f64.powf((dbm - 30.0) / 10.0)
    }

    /// Watts to dBm.
    pub fn watts_to_dbm(w: f64) -> f64 {
        10.0 * w.log10() + 30.0
    }

    /// dB to linear power ratio.
    pub fn db_to_linear(db: f64) -> f64 {
        10f64.powf(db / 10.0)
    }

    /// Degrees to radians.
    pub fn deg_to_rad(deg: f64) -> f64 {
        deg.to_radians()
    }
}

/// Pathloss model applied to the UE–BS1 links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathlossModel {
    /// 3GPP UMi street canyon, line of sight:
    /// `PL = 32.4 + 21 log10(d) + 20 log10(f_GHz)`.
    #[default]
    UmiStreetCanyonLos,
    /// 3GPP UMi street canyon, non line of sight:
    /// `PL = 22.4 + 35.3 log10(d) + 21.3 log10(f_GHz)`.
    UmiStreetCanyonNlos,
}

/// Fully validated scenario in SI units.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    /// BS1 (transmit/UL-receive) position; fixed at the origin.
    pub bs1_pos: [f64; 2],
    /// BS2 (sensing receiver) position in meters.
    pub bs2_pos: [f64; 2],
    /// UE positions in meters.
    pub ue_pos: Vec<[f64; 2]>,
    /// Target position in meters.
    pub target_pos: [f64; 2],
    /// Target velocity in m/s.
    pub target_vel: [f64; 2],
    /// UE velocities in m/s.
    pub ue_vel: Vec<[f64; 2]>,
    /// BS1 transmit antennas.
    pub m_bs_tx: usize,
    /// BS2 receive antennas.
    pub m_bs_rx: usize,
    /// Antennas per UE.
    pub m_ue: usize,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Cyclic prefix duration in seconds.
    pub t_cp: f64,
    /// Number of PRBs across the band.
    pub n_prb: usize,
    /// Subcarriers per PRB.
    pub v_cho: usize,
    /// PRBs assigned to the UEs (lowest-indexed); the rest carry sensing pilots.
    pub n_prb_ue: usize,
    /// Symbols per coherence block.
    pub tau_c: usize,
    /// UL pilot symbols at the start of each block.
    pub tau_p: usize,
    /// DL symbols at the end of each block.
    pub tau_dl: usize,
    /// Pilot repetitions across subcarriers within a UE PRB.
    pub nu_p: usize,
    /// Number of past pilot blocks used by the channel estimator.
    pub p: usize,
    /// Total symbol times in the sensing window (multiple of `tau_c`).
    pub i_total: usize,
    /// BS power split: fraction `gamma` to communication, `1-gamma` to sensing.
    pub gamma: f64,
    /// BS1 power budget in watts.
    pub p_bs: f64,
    /// Per-UE power budget in watts.
    pub p_ue: f64,
    /// Receiver noise variance per subcarrier in watts.
    pub noise_var: f64,
    /// Target radar cross section, linear.
    pub rcs: f64,
    /// Angular sector swept by the sensing beam, radians.
    pub sweep_width: f64,
    /// Pathloss model for the UE links.
    pub pathloss_model: PathlossModel,
    /// Per-UE scattering cluster positions (meters) seen from BS1.
    pub ue_clusters: Vec<Vec<[f64; 2]>>,
    /// Angular spread of each scattering cluster, radians.
    pub cluster_angular_spread: f64,
    /// Optional UE-side angular spread (radians); identity covariance if absent.
    pub ue_side_angular_spread: Option<f64>,
    /// Draw the target gains from their complex Gaussian law instead of
    /// pinning them at the RMS amplitude.
    pub randomize_gains: bool,
    /// Clutter model parameters (linear units).
    pub clutter: ClutterConfig,
    /// Master seed for all randomness in a run.
    pub rng_seed: u64,
}

/// File-facing mirror of [`ScenarioConfig`] (dBm / dB / degrees).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    bs1_pos: Option<[f64; 2]>,
    bs2_pos: [f64; 2],
    ue_pos: Vec<[f64; 2]>,
    target_pos: [f64; 2],
    target_vel: [f64; 2],
    ue_vel: Vec<[f64; 2]>,
    #[serde(default)]
    k: Option<usize>,
    m_bs_tx: usize,
    m_bs_rx: usize,
    m_ue: usize,
    f_c: f64,
    delta_f: f64,
    t_cp: f64,
    n_prb: usize,
    v_cho: usize,
    n_prb_ue: usize,
    tau_c: usize,
    tau_p: usize,
    tau_dl: usize,
    nu_p: usize,
    p: usize,
    #[serde(alias = "i")]
    i_total: usize,
    gamma: f64,
    /// dBm
    p_bs: f64,
    /// dBm
    p_ue: f64,
    /// dBm per subcarrier
    noise_var: f64,
    /// dB
    rcs: f64,
    /// degrees
    sweep_width: f64,
    #[serde(default)]
    pathloss_model: PathlossModel,
    ue_clusters: Vec<Vec<[f64; 2]>>,
    /// degrees
    #[serde(default = "default_spread_deg")]
    cluster_angular_spread: f64,
    /// degrees
    #[serde(default)]
    ue_side_angular_spread: Option<f64>,
    #[serde(default)]
    randomize_gains: bool,
    clutter: RawClutter,
    rng_seed: u64,
}

fn default_spread_deg() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClutter {
    patch_positions: Vec<[f64; 2]>,
    /// texture in dB
    texture: f64,
    /// UL attenuation in dB (<= 0)
    kappa: f64,
    /// degrees
    #[serde(default = "default_spread_deg")]
    angular_spread: f64,
    #[serde(default)]
    temporal_corr: f64,
    #[serde(default)]
    frequency_corr: f64,
}

impl ScenarioConfig {
    /// Parse from TOML text.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawScenario =
            toml::from_str(s).map_err(|e| CoreError::Config(format!("toml: {e}")))?;
        Self::from_raw(raw)
    }

    /// Parse from JSON text.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawScenario =
            serde_json::from_str(s).map_err(|e| CoreError::Config(format!("json: {e}")))?;
        Self::from_raw(raw)
    }

    /// Load from a `.toml` or `.json` file (decided by extension).
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        let cfg = ScenarioConfig {
            bs1_pos: raw.bs1_pos.unwrap_or([0.0, 0.0]),
            bs2_pos: raw.bs2_pos,
            ue_pos: raw.ue_pos,
            target_pos: raw.target_pos,
            target_vel: raw.target_vel,
            ue_vel: raw.ue_vel,
            m_bs_tx: raw.m_bs_tx,
            m_bs_rx: raw.m_bs_rx,
            m_ue: raw.m_ue,
            f_c: raw.f_c,
            delta_f: raw.delta_f,
            t_cp: raw.t_cp,
            n_prb: raw.n_prb,
            v_cho: raw.v_cho,
            n_prb_ue: raw.n_prb_ue,
            tau_c: raw.tau_c,
            tau_p: raw.tau_p,
            tau_dl: raw.tau_dl,
            nu_p: raw.nu_p,
            p: raw.p,
            i_total: raw.i_total,
            gamma: raw.gamma,
            p_bs: units::dbm_to_watts(raw.p_bs),
            p_ue: units::dbm_to_watts(raw.p_ue),
            noise_var: units::dbm_to_watts(raw.noise_var),
            rcs: units::db_to_linear(raw.rcs),
            sweep_width: units::deg_to_rad(raw.sweep_width),
            pathloss_model: raw.pathloss_model,
            ue_clusters: raw.ue_clusters,
            cluster_angular_spread: units::deg_to_rad(raw.cluster_angular_spread),
            ue_side_angular_spread: raw.ue_side_angular_spread.map(units::deg_to_rad),
            randomize_gains: raw.randomize_gains,
            clutter: ClutterConfig {
                patch_positions: raw.clutter.patch_positions,
                texture: units::db_to_linear(raw.clutter.texture),
                kappa: units::db_to_linear(raw.clutter.kappa),
                angular_spread: units::deg_to_rad(raw.clutter.angular_spread),
                temporal_corr: raw.clutter.temporal_corr,
                frequency_corr: raw.clutter.frequency_corr,
            },
            rng_seed: raw.rng_seed,
        };
        if let Some(k) = raw.k {
            if k != cfg.ue_pos.len() {
                return Err(CoreError::Config(format!(
                    "k = {k} does not match the {} configured UE positions",
                    cfg.ue_pos.len()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of served UEs.
    pub fn k_ues(&self) -> usize {
        self.ue_pos.len()
    }

    /// OFDM symbol duration `T = 1/delta_f + t_cp`.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.delta_f + self.t_cp
    }

    /// Carrier wavelength.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    /// Total active subcarriers `V`.
    pub fn total_subcarriers(&self) -> usize {
        self.n_prb * self.v_cho
    }

    /// Subcarriers assigned to the UEs.
    pub fn ue_subcarrier_count(&self) -> usize {
        self.n_prb_ue * self.v_cho
    }

    /// Coherence blocks in the sensing window.
    pub fn n_blocks(&self) -> usize {
        self.i_total / self.tau_c
    }

    /// Per-stream, per-subcarrier UE transmit amplitude: `P_UE` spread evenly
    /// over the UE subcarriers and streams.
    pub fn ue_stream_amplitude(&self) -> f64 {
        (self.p_ue / (self.ue_subcarrier_count() as f64 * self.m_ue as f64)).sqrt()
    }

    /// Checks all structural invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.bs1_pos != [0.0, 0.0] {
            return fail("bs1_pos must be the origin".into());
        }
        if self.ue_pos.is_empty() {
            return fail("at least one UE is required".into());
        }
        if self.ue_vel.len() != self.ue_pos.len() {
            return fail("ue_vel length must match ue_pos".into());
        }
        if self.ue_clusters.len() != self.ue_pos.len() {
            return fail("ue_clusters length must match ue_pos".into());
        }
        if self.ue_clusters.iter().any(|c| c.is_empty()) {
            return fail("every UE needs at least one scattering cluster".into());
        }
        if self.m_bs_tx == 0 || self.m_bs_rx == 0 || self.m_ue == 0 {
            return fail("antenna counts must be positive".into());
        }
        if self.tau_p + self.tau_dl > self.tau_c {
            return fail(format!(
                "tau_p + tau_dl = {} exceeds tau_c = {}",
                self.tau_p + self.tau_dl,
                self.tau_c
            ));
        }
        if self.nu_p == 0 || self.nu_p > self.v_cho {
            return fail(format!("nu_p = {} must be in 1..=v_cho", self.nu_p));
        }
        if self.n_prb_ue > self.n_prb {
            return fail("n_prb_ue exceeds n_prb".into());
        }
        if self.i_total == 0 || !self.i_total.is_multiple_of(self.tau_c) {
            return fail(format!(
                "i_total = {} must be a positive multiple of tau_c = {}",
                self.i_total, self.tau_c
            ));
        }
        if self.symbol_duration() <= 0.0 {
            return fail("symbol duration must be positive".into());
        }
        if self.tau_p > 0 && self.tau_p < self.k_ues() * self.m_ue {
            return fail(format!(
                "tau_p = {} cannot carry {} orthogonal pilot streams",
                self.tau_p,
                self.k_ues() * self.m_ue
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if self.noise_var <= 0.0 {
            return fail("noise variance must be positive".into());
        }
        if self.clutter.kappa > 1.0 || self.clutter.kappa <= 0.0 {
            return fail("clutter kappa must lie in (0, 1]".into());
        }
        if self.clutter.texture < 0.0 {
            return fail("clutter texture must be non-negative".into());
        }
        if self.clutter.patch_positions.is_empty() {
            return fail("at least one clutter patch is required".into());
        }
        Ok(())
    }

    /// Stable fingerprint of the full configuration (FNV-1a over the
    /// canonical JSON serialization), recorded in every output row.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Role of a time-frequency bin in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    /// UL data symbol from all UEs.
    UplinkData,
    /// UL pilot symbol (pilot subcarrier during the pilot phase).
    UplinkPilot,
    /// DL symbol from BS1 (communication or sensing).
    Downlink,
}

impl BinKind {
    /// True for both uplink variants.
    pub fn is_uplink(self) -> bool {
        matches!(self, BinKind::UplinkData | BinKind::UplinkPilot)
    }
}

/// Deterministic frame layout derived from a [`ScenarioConfig`].
///
/// Within each block of `tau_c` symbols on a UE subcarrier the first `tau_p`
/// symbols carry UL pilots (on the `nu_p` pilot subcarriers of the PRB) or UL
/// data, the middle `tau_c - tau_p - tau_dl` symbols carry UL data, and the
/// last `tau_dl` symbols are DL. Sensing subcarriers are DL with known pilots
/// at every symbol time.
#[derive(Debug, Clone)]
pub struct FrameSchedule {
    tau_c: usize,
    tau_p: usize,
    tau_dl: usize,
    v_cho: usize,
    i_total: usize,
    n_subcarriers: usize,
    ue_subcarriers: Vec<usize>,
    sensing_subcarriers: Vec<usize>,
    is_ue: Vec<bool>,
    is_pilot_sc: Vec<bool>,
}

impl FrameSchedule {
    /// Total symbol times.
    pub fn i_total(&self) -> usize {
        self.i_total
    }

    /// Total subcarriers.
    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    /// Subcarriers assigned to the UEs (ascending).
    pub fn ue_subcarriers(&self) -> &[usize] {
        &self.ue_subcarriers
    }

    /// Subcarriers dedicated to sensing (ascending).
    pub fn sensing_subcarriers(&self) -> &[usize] {
        &self.sensing_subcarriers
    }

    /// True when `v` belongs to a sensing PRB.
    pub fn is_sensing_subcarrier(&self, v: usize) -> bool {
        !self.is_ue[v]
    }

    /// True when `v` carries pilots during the pilot phase.
    pub fn is_pilot_subcarrier(&self, v: usize) -> bool {
        self.is_pilot_sc[v]
    }

    /// Coherence-block index of symbol `i`.
    pub fn block_of(&self, i: usize) -> usize {
        i / self.tau_c
    }

    /// PRB (frequency block) index of subcarrier `v`.
    pub fn prb_of(&self, v: usize) -> usize {
        v / self.v_cho
    }

    /// Number of coherence blocks.
    pub fn n_blocks(&self) -> usize {
        self.i_total / self.tau_c
    }

    /// Role of bin `(i, v)`.
    pub fn kind(&self, i: usize, v: usize) -> BinKind {
        debug_assert!(i < self.i_total && v < self.n_subcarriers);
        if !self.is_ue[v] {
            return BinKind::Downlink;
        }
        let phase = i % self.tau_c;
        if phase < self.tau_p {
            if self.is_pilot_sc[v] {
                BinKind::UplinkPilot
            } else {
                BinKind::UplinkData
            }
        } else if phase < self.tau_c - self.tau_dl {
            BinKind::UplinkData
        } else {
            BinKind::Downlink
        }
    }

    /// Pilot symbol index within the block, for bins in the pilot phase.
    pub fn pilot_symbol_index(&self, i: usize) -> Option<usize> {
        let phase = i % self.tau_c;
        (phase < self.tau_p).then_some(phase)
    }

    /// All `(i, v)` bins where transmission takes place (the whole grid).
    pub fn all_bins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.i_total).flat_map(move |i| (0..self.n_subcarriers).map(move |v| (i, v)))
    }

    /// UL bins (data and pilots).
    pub fn ul_bins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.all_bins()
            .filter(|&(i, v)| self.kind(i, v).is_uplink())
    }

    /// DL bins.
    pub fn dl_bins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.all_bins()
            .filter(|&(i, v)| self.kind(i, v) == BinKind::Downlink)
    }

    /// UL pilot bins.
    pub fn pilot_bins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.all_bins()
            .filter(|&(i, v)| self.kind(i, v) == BinKind::UplinkPilot)
    }
}

/// Builds the frame layout: UE PRBs are the `n_prb_ue` lowest-indexed PRBs and
/// the pilot subcarriers are the first `nu_p` subcarriers of each UE PRB, so
/// runs are reproducible without extra configuration.
pub fn build_schedule(cfg: &ScenarioConfig) -> Result<FrameSchedule> {
    cfg.validate()?;
    let v_total = cfg.total_subcarriers();
    let mut is_ue = vec![false; v_total];
    let mut is_pilot_sc = vec![false; v_total];
    let mut ue_subcarriers = Vec::new();
    let mut sensing_subcarriers = Vec::new();
    for v in 0..v_total {
        let prb = v / cfg.v_cho;
        if prb < cfg.n_prb_ue {
            is_ue[v] = true;
            ue_subcarriers.push(v);
            if v % cfg.v_cho < cfg.nu_p {
                is_pilot_sc[v] = true;
            }
        } else {
            sensing_subcarriers.push(v);
        }
    }
    Ok(FrameSchedule {
        tau_c: cfg.tau_c,
        tau_p: cfg.tau_p,
        tau_dl: cfg.tau_dl,
        v_cho: cfg.v_cho,
        i_total: cfg.i_total,
        n_subcarriers: v_total,
        ue_subcarriers,
        sensing_subcarriers,
        is_ue,
        is_pilot_sc,
    })
}

/// Amplitude pathloss coefficient `alpha_k = 10^(-PL/20)` for UE `k`.
///
/// The planar distance stands in for the 3GPP `d_3D` (flat two-dimensional
/// world); distances below 10 m are outside the model's validity.
pub fn pathloss(cfg: &ScenarioConfig, k: usize) -> Result<f64> {
    let e = cfg.ue_pos[k];
    let d = (e[0] * e[0] + e[1] * e[1]).sqrt();
    if d < 10.0 {
        return Err(CoreError::Config(format!(
            "UE {k} at {d:.2} m is below the 10 m pathloss validity limit"
        )));
    }
    let f_ghz = cfg.f_c / 1e9;
    let pl_db = match cfg.pathloss_model {
        PathlossModel::UmiStreetCanyonLos => 32.4 + 21.0 * d.log10() + 20.0 * f_ghz.log10(),
        PathlossModel::UmiStreetCanyonNlos => 22.4 + 35.3 * d.log10() + 21.3 * f_ghz.log10(),
    };
    Ok(10f64.powf(-pl_db / 20.0))
}

/// Per-stream DL transmit amplitudes for bin `(i, v)`.
///
/// UE subcarriers carry `S = K * M_UE` streams at amplitude
/// `sqrt(gamma P_BS / (V_UE K M_UE))` each; sensing subcarriers carry a single
/// stream at `sqrt((1-gamma) P_BS / |V_S|)`.
pub fn power_allocation(
    cfg: &ScenarioConfig,
    schedule: &FrameSchedule,
    bin: (usize, usize),
) -> Result<Vec<f64>> {
    let (i, v) = bin;
    if schedule.kind(i, v) != BinKind::Downlink {
        return Err(CoreError::Domain(format!(
            "power_allocation: bin ({i}, {v}) is not a DL bin"
        )));
    }
    if schedule.is_sensing_subcarrier(v) {
        let n_s = schedule.sensing_subcarriers().len() as f64;
        Ok(vec![((1.0 - cfg.gamma) * cfg.p_bs / n_s).sqrt()])
    } else {
        let v_ue = schedule.ue_subcarriers().len() as f64;
        let streams = cfg.k_ues() * cfg.m_ue;
        let amp = (cfg.gamma * cfg.p_bs / (v_ue * streams as f64)).sqrt();
        Ok(vec![amp; streams])
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen oracle reference values
mod tests {
    use super::*;
    use crate::testutil::test_config;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_block_partition_matches_frame_parameters() {
        // tau_c=60, tau_dl=30, tau_p=10, I=300 -> 5 blocks; per UE subcarrier
        // and block: pilots-or-data in the first 10, 20 mid UL data, 30 DL.
        let mut cfg = test_config();
        cfg.tau_c = 60;
        cfg.tau_p = 10;
        cfg.tau_dl = 30;
        cfg.i_total = 300;
        cfg.m_ue = 2;
        cfg.ue_pos = (0..5).map(|i| [200.0 + i as f64, -100.0]).collect();
        cfg.ue_vel = vec![[-1.0, 0.0]; 5];
        cfg.ue_clusters = vec![vec![[25.0, -30.0]]; 5];
        let s = build_schedule(&cfg).unwrap();
        assert_eq!(s.n_blocks(), 5);

        let pilot_v = s.ue_subcarriers()[0];
        assert!(s.is_pilot_subcarrier(pilot_v));
        let data_v = s.ue_subcarriers()[cfg.nu_p];
        assert!(!s.is_pilot_subcarrier(data_v));

        let count = |v: usize, kind: BinKind| (0..60).filter(|&i| s.kind(i, v) == kind).count();
        assert_eq!(count(pilot_v, BinKind::UplinkPilot), 10);
        assert_eq!(count(pilot_v, BinKind::UplinkData), 20);
        assert_eq!(count(pilot_v, BinKind::Downlink), 30);
        assert_eq!(count(data_v, BinKind::UplinkData), 30);
        assert_eq!(count(data_v, BinKind::Downlink), 30);
    }

    #[test]
    fn schedule_subcarrier_split() {
        let mut cfg = test_config();
        cfg.n_prb = 30;
        cfg.v_cho = 20;
        cfg.n_prb_ue = 15;
        let s = build_schedule(&cfg).unwrap();
        assert_eq!(s.ue_subcarriers().len(), 300);
        assert_eq!(s.sensing_subcarriers().len(), 300);
        // sensing subcarriers are DL at every symbol time
        let v_s = s.sensing_subcarriers()[17];
        assert!((0..cfg.i_total).all(|i| s.kind(i, v_s) == BinKind::Downlink));
    }

    #[test]
    fn schedule_degenerate_all_downlink() {
        let mut cfg = test_config();
        cfg.tau_p = 0;
        cfg.tau_dl = cfg.tau_c;
        let s = build_schedule(&cfg).unwrap();
        assert_eq!(s.ul_bins().count(), 0);
        assert_eq!(s.dl_bins().count(), cfg.i_total * cfg.total_subcarriers());
    }

    #[test]
    fn schedule_rejects_infeasible_frame() {
        let mut cfg = test_config();
        cfg.tau_p = 8;
        cfg.tau_dl = 6; // 14 > tau_c = 12
        assert!(matches!(build_schedule(&cfg), Err(CoreError::Config(_))));
    }

    #[test]
    fn bins_partition_into_ul_and_dl() {
        let cfg = test_config();
        let s = build_schedule(&cfg).unwrap();
        let total = cfg.i_total * cfg.total_subcarriers();
        assert_eq!(s.ul_bins().count() + s.dl_bins().count(), total);
        // pilots are a subset of UL
        for (i, v) in s.pilot_bins() {
            assert!(s.kind(i, v).is_uplink());
        }
        // block_of is constant on runs of tau_c
        for i in 0..cfg.i_total {
            assert_eq!(s.block_of(i), i / cfg.tau_c);
        }
    }

    #[test]
    fn pathloss_reference_values() {
        let mut cfg = test_config();
        cfg.ue_pos = vec![[100.0, 0.0], [10.0, 0.0]];
        cfg.ue_vel = vec![[0.0, 0.0]; 2];
        cfg.ue_clusters = vec![vec![[25.0, -30.0]]; 2];
        let a100 = pathloss(&cfg, 0).unwrap();
        assert_relative_eq!(a100, 9.52730358981622e-5, max_relative = 1e-7);
        let a10 = pathloss(&cfg, 1).unwrap();
        let pl10 = -20.0 * a10.log10();
        assert_relative_eq!(pl10, 59.4206, epsilon = 1e-3);
        // doubling the distance adds 21*log10(2) dB
        let pl100 = -20.0 * a100.log10();
        cfg.ue_pos[0] = [200.0, 0.0];
        let pl200 = -20.0 * pathloss(&cfg, 0).unwrap().log10();
        assert_relative_eq!(pl200 - pl100, 21.0 * 2f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn pathloss_rejects_close_ue() {
        let mut cfg = test_config();
        cfg.ue_pos[0] = [5.0, 0.0];
        assert!(pathloss(&cfg, 0).is_err());
    }

    #[test]
    fn power_split_and_totals() {
        let cfg = test_config();
        let s = build_schedule(&cfg).unwrap();
        // even split of the budget
        assert_relative_eq!(cfg.gamma * cfg.p_bs, 0.5, epsilon = 1e-12);

        // per-stream amplitude on a UE subcarrier
        let dl_i = cfg.tau_c - 1;
        let v_ue = s.ue_subcarriers()[3];
        let rho = power_allocation(&cfg, &s, (dl_i, v_ue)).unwrap();
        assert_eq!(rho.len(), cfg.k_ues() * cfg.m_ue);
        let expect = (cfg.gamma * cfg.p_bs / (20.0 * 4.0)).sqrt();
        assert_relative_eq!(rho[0], expect, epsilon = 1e-12);

        // total DL power across all subcarriers at a DL symbol time = P_BS
        let mut total = 0.0;
        for v in 0..cfg.total_subcarriers() {
            if s.kind(dl_i, v) == BinKind::Downlink {
                total += power_allocation(&cfg, &s, (dl_i, v))
                    .unwrap()
                    .iter()
                    .map(|a| a * a)
                    .sum::<f64>();
            }
        }
        assert_relative_eq!(total, cfg.p_bs, max_relative = 1e-9);
    }

    #[test]
    fn power_gamma_one_starves_sensing() {
        let mut cfg = test_config();
        cfg.gamma = 1.0;
        let s = build_schedule(&cfg).unwrap();
        let v_s = s.sensing_subcarriers()[0];
        let rho = power_allocation(&cfg, &s, (0, v_s)).unwrap();
        assert_eq!(rho, vec![0.0]);
    }

    #[test]
    fn power_rejects_ul_bin() {
        let cfg = test_config();
        let s = build_schedule(&cfg).unwrap();
        let v_ue = s.ue_subcarriers()[0];
        assert!(power_allocation(&cfg, &s, (0, v_ue)).is_err());
    }

    #[test]
    fn config_roundtrip_units() {
        let toml_text = r#"
            bs2_pos = [10.0, 30.0]
            ue_pos = [[200.0, -100.0]]
            target_pos = [157.6848, 157.6848]
            target_vel = [-30.0, 0.0]
            ue_vel = [[-1.0, 0.0]]
            m_bs_tx = 8
            m_bs_rx = 4
            m_ue = 2
            f_c = 2e9
            delta_f = 2e4
            t_cp = 2e-6
            n_prb = 4
            v_cho = 10
            n_prb_ue = 2
            tau_c = 12
            tau_p = 4
            tau_dl = 6
            nu_p = 2
            p = 0
            i_total = 24
            gamma = 0.5
            p_bs = 30.0
            p_ue = 10.0
            noise_var = -130.0
            rcs = 1.0
            sweep_width = 110.0
            rng_seed = 7
            ue_clusters = [[[25.0, -30.0]]]

            [clutter]
            patch_positions = [[90.0, -155.9]]
            texture = -120.0
            kappa = -20.0
        "#;
        let cfg = ScenarioConfig::from_toml_str(toml_text).unwrap();
        assert_relative_eq!(cfg.p_bs, 1.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.p_ue, 0.01, epsilon = 1e-12);
        assert_relative_eq!(cfg.noise_var, 1e-16, max_relative = 1e-12);
        assert_relative_eq!(cfg.clutter.texture, 1e-12, max_relative = 1e-12);
        assert_relative_eq!(cfg.clutter.kappa, 1e-2, max_relative = 1e-12);
        assert_relative_eq!(cfg.sweep_width, 1.9198621771937625, epsilon = 1e-12);
        assert_eq!(cfg.k_ues(), 1);
        assert!(cfg.fingerprint() != 0);
    }

    #[test]
    fn symbol_duration_value() {
        let cfg = test_config();
        assert_relative_eq!(cfg.symbol_duration(), 5.2e-5, epsilon = 1e-12);
    }
}
