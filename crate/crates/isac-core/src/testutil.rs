//! Shared fixtures for unit tests: a small but fully consistent scenario.

use crate::clutter::ClutterConfig;
use crate::scenario::{PathlossModel, ScenarioConfig};

/// Compact two-UE scenario used across module tests. Frame: blocks of 12
/// symbols (4 pilots, 2 mid UL data, 6 DL), 4 PRBs of 10 subcarriers with 2
/// UE PRBs, small arrays so Monte-Carlo checks stay fast.
pub(crate) fn test_config() -> ScenarioConfig {
    ScenarioConfig {
        bs1_pos: [0.0, 0.0],
        bs2_pos: [10.0, 30.0],
        ue_pos: vec![[200.0, -100.0], [300.0, 50.0]],
        target_pos: [157.6848, 157.6848],
        target_vel: [-30.0, 0.0],
        ue_vel: vec![[-1.0, 0.0], [-1.0, 0.0]],
        m_bs_tx: 8,
        m_bs_rx: 4,
        m_ue: 2,
        f_c: 2e9,
        delta_f: 2e4,
        t_cp: 2e-6,
        n_prb: 4,
        v_cho: 10,
        n_prb_ue: 2,
        tau_c: 12,
        tau_p: 4,
        tau_dl: 6,
        nu_p: 2,
        p: 1,
        i_total: 24,
        gamma: 0.5,
        p_bs: 1.0,
        p_ue: 0.01,
        noise_var: 1e-16,
        rcs: 1.2589254117941673,
        sweep_width: 110f64.to_radians(),
        pathloss_model: PathlossModel::UmiStreetCanyonLos,
        ue_clusters: vec![vec![[25.0, -30.0]], vec![[238.0, 63.0]]],
        cluster_angular_spread: 10f64.to_radians(),
        ue_side_angular_spread: None,
        randomize_gains: false,
        clutter: ClutterConfig {
            patch_positions: vec![[90.0, -155.9], [125.0, -129.5]],
            texture: 1e-12,
            kappa: 1e-2,
            angular_spread: 10f64.to_radians(),
            temporal_corr: 0.5,
            frequency_corr: 0.5,
        },
        rng_seed: 7,
    }
}
