//! Scenario files: TOML with one level of sections. Frequencies are given in
//! MHz (cyclic), times in µs and steps in ns; everything is converted to SI
//! angular units before it reaches the simulator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ncm_core::correlation::check_nyquist;
use ncm_core::lindblad::TimeGrid;
use ncm_core::model::{default_n_max, mhz, ModelParams, PulseSchedule};
use ncm_core::spectrum::SpectrumSettings;
use ncm_core::{QubitState, SystemModel, C64};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Qubit preparations, e.g. `["plus", "minus"]`.
    pub preparations: Vec<String>,
    pub omega_mhz: Vec<f64>,
    pub n_ref: Vec<f64>,
    /// Subdirectory of the output directory; defaults to the scenario name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub chi_mhz: f64,
    pub kappa_mhz: f64,
    /// κ_A / κ.
    pub input_port_fraction: f64,
    pub t1_us: f64,
    pub t2_star_us: f64,
    pub decoherence: bool,
    /// Fock cutoff; 0 selects the occupancy heuristic.
    pub n_max: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            chi_mhz: -4.0,
            kappa_mhz: 0.9,
            input_port_fraction: 0.1,
            t1_us: 13.5,
            t2_star_us: 2.5,
            decoherence: true,
            n_max: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub drive_start_us: f64,
    pub drive_duration_us: f64,
    pub probe_start_us: f64,
    pub probe_duration_us: f64,
    pub record_us: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            drive_start_us: 0.0,
            drive_duration_us: 3.0,
            probe_start_us: 0.0,
            probe_duration_us: 2.0,
            record_us: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub dt_ns: f64,
    pub dtc_ns: f64,
    pub f_span_mhz: f64,
    pub n_freq: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            dt_ns: 1.0,
            dtc_ns: 25.0,
            f_span_mhz: 10.0,
            n_freq: 401,
        }
    }
}

/// Optional Rabi and Ramsey calibration sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default)]
    pub rabi_amplitudes: Vec<f64>,
    /// Rabi frequency per unit drive amplitude (MHz).
    #[serde(default = "one")]
    pub rabi_mhz_per_amplitude: f64,
    /// Photon numbers whose calibrated probe amplitudes are swept.
    #[serde(default)]
    pub ramsey_n: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    /// Present in manifests; ignored on input.
    #[serde(default, skip_serializing)]
    pub checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing)]
    pub build: BTreeMap<String, String>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.check_lists()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Resolved configuration as TOML, every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    fn check_lists(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        if s.name.trim().is_empty() {
            return Err(CliError::Config("scenario.name is empty".into()));
        }
        for (key, empty) in [
            ("preparations", s.preparations.is_empty()),
            ("omega_mhz", s.omega_mhz.is_empty()),
            ("n_ref", s.n_ref.is_empty()),
        ] {
            if empty {
                return Err(CliError::Config(format!("scenario.{key} must not be empty")));
            }
        }
        Ok(())
    }

    pub fn preparations(&self) -> Result<Vec<QubitState>, CliError> {
        self.scenario
            .preparations
            .iter()
            .map(|p| p.parse::<QubitState>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn output_subdir(&self) -> &str {
        self.scenario.output_dir.as_deref().unwrap_or(&self.scenario.name)
    }

    pub fn schedule(&self) -> PulseSchedule {
        let s = &self.schedule;
        PulseSchedule {
            drive_start: s.drive_start_us * 1e-6,
            drive_duration: s.drive_duration_us * 1e-6,
            probe_start: s.probe_start_us * 1e-6,
            probe_duration: s.probe_duration_us * 1e-6,
            record_duration: s.record_us * 1e-6,
        }
    }

    pub fn settings(&self) -> SpectrumSettings {
        let n = &self.numerics;
        SpectrumSettings {
            dt: n.dt_ns * 1e-9,
            dt_c: n.dtc_ns * 1e-9,
            f_span_hz: n.f_span_mhz * 1e6,
            n_freq: n.n_freq,
        }
    }

    /// Model at drive strength `omega_mhz` with no probe.
    pub fn model(&self, omega_mhz: f64) -> Result<SystemModel, CliError> {
        let m = &self.model;
        let kappa = mhz(m.kappa_mhz);
        let params = ModelParams {
            omega: mhz(omega_mhz),
            chi: mhz(m.chi_mhz),
            kappa_a: m.input_port_fraction * kappa,
            kappa_b: (1.0 - m.input_port_fraction) * kappa,
            t1: m.t1_us * 1e-6,
            t2_star: m.t2_star_us * 1e-6,
            decoherence_enabled: m.decoherence,
            probe_amplitude: C64::new(0.0, 0.0),
            n_max: (m.n_max > 0).then_some(m.n_max),
            schedule: self.schedule(),
            ..ModelParams::default()
        };
        if !(0.0..=1.0).contains(&m.input_port_fraction) {
            return Err(CliError::Config(format!(
                "model.input_port_fraction must lie in [0, 1], got {}",
                m.input_port_fraction
            )));
        }
        SystemModel::new(params).map_err(CliError::from)
    }

    /// Checks everything that can be checked without simulating. All
    /// problems are collected.
    pub fn validate(&self) -> ValidationReport {
        let mut problems = Vec::new();
        if let Err(e) = self.check_lists() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.preparations() {
            problems.push(e.to_string());
        }
        for &o in &self.scenario.omega_mhz {
            if !(o.is_finite() && o >= 0.0) {
                problems.push(format!("scenario.omega_mhz entry {o} must be finite and >= 0"));
            }
        }
        for &n in &self.scenario.n_ref {
            if !(n.is_finite() && n >= 0.0) {
                problems.push(format!("scenario.n_ref entry {n} must be finite and >= 0"));
            }
        }
        let n = &self.numerics;
        if !(n.dt_ns > 0.0) || !(n.dtc_ns > 0.0) {
            problems.push("numerics.dt_ns and numerics.dtc_ns must be > 0".into());
        }
        if n.n_freq < 2 {
            problems.push(format!("numerics.n_freq must be >= 2, got {}", n.n_freq));
        }
        let settings = self.settings();
        if let Err(e) = check_nyquist(settings.dt_c, settings.f_span_hz) {
            problems.push(e.to_string());
        }
        let ratio = n.dtc_ns / n.dt_ns;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            problems.push(format!(
                "numerics.dtc_ns = {} is not a whole multiple of numerics.dt_ns = {}",
                n.dtc_ns, n.dt_ns
            ));
        }
        let omega_max = self.scenario.omega_mhz.iter().cloned().fold(0.0, f64::max);
        match self.model(omega_max) {
            Ok(m) => {
                if self.model.n_max > 0 {
                    // the strongest probe gets the largest heuristic cutoff
                    let n_ref_max = self.scenario.n_ref.iter().cloned().fold(0.0, f64::max);
                    let eps = steady_state_amplitude(&m, n_ref_max);
                    let suggested = default_n_max(C64::new(eps, 0.0), m.kappa(), m.chi());
                    if self.model.n_max < suggested {
                        problems.push(format!(
                            "model.n_max = {} is below the occupancy heuristic {suggested} for N_ref = {n_ref_max}",
                            self.model.n_max
                        ));
                    }
                }
                if let Err(e) = TimeGrid::new(&m, settings.dt) {
                    problems.push(e.to_string());
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        if let Some(c) = &self.calibration {
            if c.rabi_amplitudes.iter().any(|a| !(*a >= 0.0)) {
                problems.push("calibration.rabi_amplitudes must be >= 0".into());
            }
            if c.ramsey_n.iter().any(|a| !(*a >= 0.0)) {
                problems.push("calibration.ramsey_n must be >= 0".into());
            }
        }
        ValidationReport { problems }
    }
}

/// Probe amplitude whose steady state carries `n_ref` photons over the probe
/// window; used only for sizing checks.
fn steady_state_amplitude(m: &SystemModel, n_ref: f64) -> f64 {
    let window = m.schedule().probe_duration.max(1e-12);
    let denom = 0.25 * m.kappa() * m.kappa() + m.chi() * m.chi();
    (n_ref * denom / (m.kappa() * window)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn render(&self, name: &str) -> String {
        let mut out = String::new();
        if self.is_ok() {
            let _ = writeln!(out, "{name}: ok");
        } else {
            let _ = writeln!(out, "{name}: {} problem(s)", self.problems.len());
            for p in &self.problems {
                let _ = writeln!(out, "  - {p}");
            }
        }
        out
    }
}
