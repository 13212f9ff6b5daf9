//! Seeded experiment runners with CSV output.
//!
//! Three study designs: CRB versus target bearing (the target moves along a
//! circle around BS1 so that range effects stay out of the sweep), CRB versus
//! the BS power split `gamma`, and sum-SE CDF sampling over estimator/pilot
//! variants. Every output row carries the provenance tuple
//! (seed, realization count, config fingerprint); floats are printed with
//! nine significant digits so identical seeds give byte-identical files.

use std::fmt::Write as _;

use serde::Deserialize;

use crate::estimation::spectral_efficiency;
use crate::fim::{monte_carlo_crb_matrix, ClutterMode, Regime};
use crate::scenario::{build_schedule, ScenarioConfig};
use crate::{CoreError, Result};

/// Experiment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// CRB of the target parameters versus target bearing (degrees grid).
    CrbAngleSweep,
    /// CRB versus the communication/sensing power split (gamma grid).
    CrbGammaSweep,
    /// Sum-SE CDF samples over estimator/pilot variants.
    SeCdf,
}

/// Regime selector mirrored in experiment files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSpec {
    /// See [`Regime::Clairvoyant`].
    Clairvoyant,
    /// See [`Regime::FullyUnknown`].
    FullyUnknown,
    /// See [`Regime::Hybrid`].
    Hybrid,
}

impl From<RegimeSpec> for Regime {
    fn from(r: RegimeSpec) -> Self {
        match r {
            RegimeSpec::Clairvoyant => Regime::Clairvoyant,
            RegimeSpec::FullyUnknown => Regime::FullyUnknown,
            RegimeSpec::Hybrid => Regime::Hybrid,
        }
    }
}

/// Clutter-mode selector mirrored in experiment files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterModeSpec {
    /// Structured clutter in the whitening covariances.
    WithClutter,
    /// Clutter-free reference.
    NoiseOnly,
}

impl From<ClutterModeSpec> for ClutterMode {
    fn from(m: ClutterModeSpec) -> Self {
        match m {
            ClutterModeSpec::WithClutter => ClutterMode::WithClutter,
            ClutterModeSpec::NoiseOnly => ClutterMode::NoiseOnly,
        }
    }
}

/// One SE configuration cell: overrides applied on top of the scenario.
#[derive(Debug, Clone, Deserialize)]
pub struct SeCell {
    /// Row label in the output CSV.
    pub label: String,
    /// Pilot subcarrier repetitions.
    #[serde(default)]
    pub nu_p: Option<usize>,
    /// Past pilot depth of the estimator.
    #[serde(default)]
    pub p: Option<usize>,
    /// UE power budget in dBm.
    #[serde(default)]
    pub p_ue_dbm: Option<f64>,
    /// UE speed in m/s (velocity direction fixed at -x).
    #[serde(default)]
    pub ue_speed: Option<f64>,
}

/// Parsed experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Experiment family.
    pub kind: ExperimentKind,
    /// Sweep grid: bearings in degrees (angle sweep) or gamma values.
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Regimes to evaluate (CRB families).
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeSpec>,
    /// Clutter modes to evaluate (CRB families).
    #[serde(default = "default_modes")]
    pub clutter_modes: Vec<ClutterModeSpec>,
    /// Monte-Carlo realizations; defaults to 100 for CRBs, 1000 for SE.
    #[serde(default)]
    pub n_realizations: Option<usize>,
    /// Output stem; the CLI appends `.csv` (and `_summary.csv` for SE).
    #[serde(default)]
    pub output: Option<String>,
    /// SE cells (SE experiments only).
    #[serde(default)]
    pub se_cells: Vec<SeCell>,
}

fn default_regimes() -> Vec<RegimeSpec> {
    vec![RegimeSpec::Clairvoyant, RegimeSpec::Hybrid]
}

fn default_modes() -> Vec<ClutterModeSpec> {
    vec![ClutterModeSpec::NoiseOnly, ClutterModeSpec::WithClutter]
}

impl ExperimentSpec {
    /// Structural checks: grids must be non-empty and strictly monotone for
    /// sweep experiments, SE experiments need at least one cell.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::CrbAngleSweep | ExperimentKind::CrbGammaSweep => {
                if self.grid.is_empty() {
                    return Err(CoreError::Config("sweep grid must be non-empty".into()));
                }
                if !self.grid.windows(2).all(|w| w[0] < w[1]) {
                    return Err(CoreError::Config(
                        "sweep grid must be strictly increasing".into(),
                    ));
                }
                if self.kind == ExperimentKind::CrbGammaSweep
                    && !self.grid.iter().all(|&g| (0.0..=1.0).contains(&g))
                {
                    return Err(CoreError::Config("gamma grid outside [0, 1]".into()));
                }
                if self.regimes.is_empty() || self.clutter_modes.is_empty() {
                    return Err(CoreError::Config(
                        "at least one regime and clutter mode required".into(),
                    ));
                }
            }
            ExperimentKind::SeCdf => {
                if self.se_cells.is_empty() {
                    return Err(CoreError::Config(
                        "se_cdf experiments need at least one cell".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Realization count with per-kind defaults.
    pub fn realizations(&self) -> usize {
        self.n_realizations.unwrap_or(match self.kind {
            ExperimentKind::SeCdf => 1000,
            _ => 100,
        })
    }
}

/// Full experiment document: scenario plus experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    /// Path to a scenario file, relative to the experiment file.
    #[serde(default)]
    scenario_path: Option<String>,
    /// Inline scenario (file-facing units), alternative to `scenario_path`.
    #[serde(default)]
    scenario: Option<toml::Value>,
    experiment: ExperimentSpec,
}

/// A parsed experiment file.
#[derive(Debug, Clone)]
pub struct ExperimentDoc {
    /// Scenario in SI units.
    pub scenario: ScenarioConfig,
    /// Experiment description.
    pub experiment: ExperimentSpec,
}

impl ExperimentDoc {
    /// Loads a TOML or JSON experiment file; inline scenarios and
    /// `scenario_path` references (relative to the file) are both accepted.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: RawDoc = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("json: {e}")))?
            }
            _ => toml::from_str(&text).map_err(|e| CoreError::Config(format!("toml: {e}")))?,
        };
        let scenario = match (&raw.scenario, &raw.scenario_path) {
            (Some(value), None) => {
                let text =
                    toml::to_string(value).map_err(|e| CoreError::Config(format!("toml: {e}")))?;
                ScenarioConfig::from_toml_str(&text)?
            }
            (None, Some(rel)) => {
                let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
                ScenarioConfig::load(&base.join(rel))?
            }
            _ => {
                return Err(CoreError::Config(
                    "provide exactly one of `scenario` or `scenario_path`".into(),
                ))
            }
        };
        raw.experiment.validate()?;
        Ok(Self {
            scenario,
            experiment: raw.experiment,
        })
    }
}

/// A named CSV artifact produced by an experiment.
#[derive(Debug, Clone)]
pub struct CsvArtifact {
    /// Suggested file name (stem plus suffix).
    pub name: String,
    /// File contents.
    pub contents: String,
}

fn fmt_float(x: f64) -> String {
    if x.is_infinite() {
        "inf".to_string()
    } else {
        format!("{x:.8e}")
    }
}

/// CRB-vs-bearing sweep: the target moves along the circle of its configured
/// range around BS1; every grid point reruns the full Monte-Carlo protocol
/// and emits the bearing and delay CRBs of the BS path per regime and
/// clutter mode.
pub fn run_crb_angle_sweep(spec: &ExperimentSpec, cfg: &ScenarioConfig) -> Result<CsvArtifact> {
    spec.validate()?;
    let n_real = spec.realizations();
    let radius = (cfg.target_pos[0].powi(2) + cfg.target_pos[1].powi(2)).sqrt();
    let regimes: Vec<Regime> = spec.regimes.iter().map(|&r| r.into()).collect();
    let modes: Vec<ClutterMode> = spec.clutter_modes.iter().map(|&m| m.into()).collect();
    let fingerprint = cfg.fingerprint();

    let mut out = String::new();
    out.push_str(
        "sweep_variable,regime,clutter_mode,parameter_name,crb_value,units,seed,n_realizations,config_hash\n",
    );
    for &angle_deg in &spec.grid {
        let mut point_cfg = cfg.clone();
        let a = angle_deg.to_radians();
        point_cfg.target_pos = [radius * a.cos(), radius * a.sin()];
        let cells = monte_carlo_crb_matrix(&point_cfg, &regimes, &modes, n_real)?;
        for cell in &cells {
            for name in ["theta_bs", "tau_bs"] {
                let idx = cell.report.names.iter().position(|n| n == name).unwrap();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{:016x}",
                    fmt_float(angle_deg),
                    cell.regime.name(),
                    cell.mode.name(),
                    name,
                    fmt_float(cell.report.values[idx]),
                    cell.report.units[idx],
                    cfg.rng_seed,
                    n_real,
                    fingerprint,
                );
            }
        }
    }
    Ok(CsvArtifact {
        name: "crb_angle_sweep.csv".into(),
        contents: out,
    })
}

/// CRB-vs-gamma sweep at the configured target position.
pub fn run_crb_gamma_sweep(spec: &ExperimentSpec, cfg: &ScenarioConfig) -> Result<CsvArtifact> {
    spec.validate()?;
    let n_real = spec.realizations();
    let regimes: Vec<Regime> = spec.regimes.iter().map(|&r| r.into()).collect();
    let modes: Vec<ClutterMode> = spec.clutter_modes.iter().map(|&m| m.into()).collect();
    let fingerprint = cfg.fingerprint();

    let mut out = String::new();
    out.push_str(
        "sweep_variable,regime,clutter_mode,parameter_name,crb_value,units,seed,n_realizations,config_hash\n",
    );
    for &gamma in &spec.grid {
        let mut point_cfg = cfg.clone();
        point_cfg.gamma = gamma;
        let cells = monte_carlo_crb_matrix(&point_cfg, &regimes, &modes, n_real)?;
        for cell in &cells {
            for name in ["theta_bs", "tau_bs"] {
                let idx = cell.report.names.iter().position(|n| n == name).unwrap();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{:016x}",
                    fmt_float(gamma),
                    cell.regime.name(),
                    cell.mode.name(),
                    name,
                    fmt_float(cell.report.values[idx]),
                    cell.report.units[idx],
                    cfg.rng_seed,
                    n_real,
                    fingerprint,
                );
            }
        }
    }
    Ok(CsvArtifact {
        name: "crb_gamma_sweep.csv".into(),
        contents: out,
    })
}

/// Sum-SE CDF study: every cell reruns the Monte-Carlo SE evaluation with its
/// overrides. Emits the raw per-realization sum-SE samples plus a per-(UE,
/// subcarrier) mean-SE summary.
pub fn run_se_cdf(spec: &ExperimentSpec, cfg: &ScenarioConfig) -> Result<Vec<CsvArtifact>> {
    spec.validate()?;
    let n_real = spec.realizations();
    let fingerprint = cfg.fingerprint();

    let mut samples = String::new();
    samples.push_str("realization_id,sum_se_bits_per_hz,cell,seed,n_realizations,config_hash\n");
    let mut summary = String::new();
    summary.push_str("k,v,mean_se,cell,seed,n_realizations,config_hash\n");

    for cell in &spec.se_cells {
        let mut c = cfg.clone();
        if let Some(nu_p) = cell.nu_p {
            c.nu_p = nu_p;
        }
        if let Some(p) = cell.p {
            c.p = p;
        }
        if let Some(dbm) = cell.p_ue_dbm {
            c.p_ue = crate::scenario::units::dbm_to_watts(dbm);
        }
        if let Some(speed) = cell.ue_speed {
            for v in c.ue_vel.iter_mut() {
                *v = [-speed, 0.0];
            }
        }
        let schedule = build_schedule(&c)?;
        let outcome = spectral_efficiency(&c, &schedule, n_real, c.rng_seed)?;
        for (r, s) in outcome.sum_samples.iter().enumerate() {
            let _ = writeln!(
                samples,
                "{},{},{},{},{},{:016x}",
                r,
                fmt_float(*s),
                cell.label,
                cfg.rng_seed,
                n_real,
                fingerprint,
            );
        }
        for point in &outcome.summary {
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{:016x}",
                point.ue,
                point.subcarrier,
                fmt_float(point.mean_se),
                cell.label,
                cfg.rng_seed,
                n_real,
                fingerprint,
            );
        }
    }
    Ok(vec![
        CsvArtifact {
            name: "se_cdf_samples.csv".into(),
            contents: samples,
        },
        CsvArtifact {
            name: "se_cdf_summary.csv".into(),
            contents: summary,
        },
    ])
}

/// Runs an experiment document and returns its CSV artifacts.
pub fn run_experiment(doc: &ExperimentDoc) -> Result<Vec<CsvArtifact>> {
    match doc.experiment.kind {
        ExperimentKind::CrbAngleSweep => {
            Ok(vec![run_crb_angle_sweep(&doc.experiment, &doc.scenario)?])
        }
        ExperimentKind::CrbGammaSweep => {
            Ok(vec![run_crb_gamma_sweep(&doc.experiment, &doc.scenario)?])
        }
        ExperimentKind::SeCdf => run_se_cdf(&doc.experiment, &doc.scenario),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::test_config;

    fn tiny_spec(kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            grid: vec![-10.0, 30.0],
            regimes: vec![RegimeSpec::Clairvoyant, RegimeSpec::Hybrid],
            clutter_modes: vec![ClutterModeSpec::NoiseOnly],
            n_realizations: Some(3),
            output: None,
            se_cells: vec![SeCell {
                label: "base".into(),
                nu_p: None,
                p: None,
                p_ue_dbm: None,
                ue_speed: None,
            }],
        }
    }

    #[test]
    fn grid_validation() {
        let mut spec = tiny_spec(ExperimentKind::CrbAngleSweep);
        spec.grid = vec![];
        assert!(spec.validate().is_err());
        spec.grid = vec![10.0, 10.0];
        assert!(spec.validate().is_err());
        spec.grid = vec![10.0, 20.0];
        assert!(spec.validate().is_ok());

        let mut spec = tiny_spec(ExperimentKind::CrbGammaSweep);
        spec.grid = vec![0.2, 1.4];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn angle_sweep_rows_and_determinism() {
        let cfg = test_config();
        let spec = tiny_spec(ExperimentKind::CrbAngleSweep);
        let a = run_crb_angle_sweep(&spec, &cfg).unwrap();
        let b = run_crb_angle_sweep(&spec, &cfg).unwrap();
        assert_eq!(a.contents, b.contents);

        let lines: Vec<&str> = a.contents.lines().collect();
        // header + 2 grid points x 2 regimes x 1 mode x 2 parameters
        assert_eq!(lines.len(), 1 + 2 * 2 * 2);
        assert!(lines[0].starts_with("sweep_variable,regime,clutter_mode"));
        assert!(lines[1].contains("clairvoyant"));
        assert!(lines[1].contains("theta_bs"));
        // provenance fields present
        assert!(lines[1].split(',').count() == 9);
    }

    #[test]
    fn single_point_grid_emits_one_row_set() {
        let cfg = test_config();
        let mut spec = tiny_spec(ExperimentKind::CrbGammaSweep);
        spec.grid = vec![0.5];
        spec.regimes = vec![RegimeSpec::Hybrid];
        let art = run_crb_gamma_sweep(&spec, &cfg).unwrap();
        assert_eq!(art.contents.lines().count(), 1 + 2);
    }

    #[test]
    fn se_cdf_artifacts() {
        let mut cfg = test_config();
        cfg.m_bs_tx = 4;
        let mut spec = tiny_spec(ExperimentKind::SeCdf);
        spec.n_realizations = Some(5);
        spec.se_cells.push(SeCell {
            label: "deep".into(),
            nu_p: Some(2),
            p: Some(2),
            p_ue_dbm: Some(20.0),
            ue_speed: Some(5.0),
        });
        let arts = run_se_cdf(&spec, &cfg).unwrap();
        assert_eq!(arts.len(), 2);
        let samples = &arts[0].contents;
        // header + 2 cells x 5 realizations
        assert_eq!(samples.lines().count(), 1 + 2 * 5);
        // CDF samples sorted ascending form a valid CDF (non-decreasing)
        let mut values: Vec<f64> = samples
            .lines()
            .skip(1)
            .filter(|l| l.contains(",base,"))
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let n = values.len();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(n, 5);
        assert!(values.windows(2).all(|w| w[0] <= w[1]));

        let summary = &arts[1].contents;
        assert_eq!(summary.lines().count(), 1 + 2 * cfg.k_ues() * cfg.v_cho);
    }

    #[test]
    fn json_experiment_doc_loads() {
        let json = r#"{
            "scenario": {
                "bs2_pos": [10.0, 30.0],
                "ue_pos": [[200.0, -100.0]],
                "target_pos": [157.6848, 157.6848],
                "target_vel": [-30.0, 0.0],
                "ue_vel": [[-1.0, 0.0]],
                "m_bs_tx": 8, "m_bs_rx": 4, "m_ue": 2,
                "f_c": 2e9, "delta_f": 2e4, "t_cp": 2e-6,
                "n_prb": 4, "v_cho": 10, "n_prb_ue": 2,
                "tau_c": 12, "tau_p": 4, "tau_dl": 6, "nu_p": 2,
                "p": 0, "i_total": 24, "gamma": 0.5,
                "p_bs": 30.0, "p_ue": 10.0, "noise_var": -130.0,
                "rcs": 1.0, "sweep_width": 110.0, "rng_seed": 3,
                "ue_clusters": [[[25.0, -30.0]]],
                "clutter": {
                    "patch_positions": [[90.0, -155.9]],
                    "texture": -120.0,
                    "kappa": -20.0
                }
            },
            "experiment": {
                "kind": "crb_angle_sweep",
                "grid": [0.0, 45.0],
                "regimes": ["clairvoyant"],
                "clutter_modes": ["noise_only"],
                "n_realizations": 1
            }
        }"#;
        let dir = std::env::temp_dir().join("isac_doc_json_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.json");
        std::fs::write(&path, json).unwrap();
        let doc = ExperimentDoc::load(&path).unwrap();
        assert_eq!(doc.scenario.rng_seed, 3);
        assert_eq!(doc.experiment.realizations(), 1);
    }

    #[test]
    fn experiment_doc_round_trip() {
        let doc_text = r#"
            [experiment]
            kind = "crb_angle_sweep"
            grid = [0.0, 45.0]
            regimes = ["clairvoyant"]
            clutter_modes = ["noise_only"]
            n_realizations = 2

            [scenario]
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
            rng_seed = 11
            ue_clusters = [[[25.0, -30.0]]]

            [scenario.clutter]
            patch_positions = [[90.0, -155.9]]
            texture = -120.0
            kappa = -20.0
        "#;
        let dir = std::env::temp_dir().join("isac_doc_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.toml");
        std::fs::write(&path, doc_text).unwrap();
        let doc = ExperimentDoc::load(&path).unwrap();
        assert_eq!(doc.scenario.rng_seed, 11);
        let arts = run_experiment(&doc).unwrap();
        assert_eq!(arts.len(), 1);
        assert!(arts[0].contents.contains("theta_bs"));
    }
}
