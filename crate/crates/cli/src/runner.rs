//! Executes a scenario: every (N_ref, Ω, preparation) point is simulated on
//! the worker pool, then a single collector writes the artifacts in sweep
//! order so that output bytes do not depend on scheduling.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ncm_core::calibration::{
    rabi_calibration, ramsey_photon_calibration, write_photon_csv, write_rabi_csv, PhotonCalibration,
    RabiCalibration,
};
use ncm_core::energetics::{
    assemble_ledger, emitted_photons, preparation_energy_from_run, write_ledger_csv, EnergyLedger,
    PreparationEnergy,
};
use ncm_core::model::{drive_amplitude_for_photons, mhz};
use ncm_core::spectrum::{emission_spectrum, fit_triplet, spectrum_moments, LorentzianTriplet, PowerSpectrum};
use ncm_core::{QubitState, C64};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub dt_ns: Option<f64>,
    pub dtc_ns: Option<f64>,
}

/// One simulated sweep point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub n_ref: f64,
    pub omega_mhz: f64,
    pub state: QubitState,
    pub probe_amplitude: f64,
    /// `κ∫⟨n⟩dt`.
    pub photons: f64,
    /// `∫s df`.
    pub spectrum_photons: f64,
    pub ringdown_complete: bool,
    pub spectrum: PowerSpectrum,
    /// `None` at Ω = 0 or when the fit failed.
    pub triplet: Option<LorentzianTriplet>,
    pub energy: PreparationEnergy,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub dir: PathBuf,
    pub points: Vec<PointResult>,
    pub ledgers: Vec<EnergyLedger>,
    pub rabi: Option<RabiCalibration>,
    pub photon_calibration: Option<PhotonCalibration>,
    /// `(relative path, sha256)` in write order.
    pub files: Vec<(String, String)>,
}

impl RunSummary {
    pub fn point(&self, n_ref: f64, omega_mhz: f64, state: QubitState) -> Option<&PointResult> {
        self.points
            .iter()
            .find(|p| p.n_ref == n_ref && p.omega_mhz == omega_mhz && p.state == state)
    }
}

pub fn apply_overrides(cfg: &mut ScenarioConfig, opts: &RunOptions) {
    if let Some(dt) = opts.dt_ns {
        cfg.numerics.dt_ns = dt;
    }
    if let Some(dtc) = opts.dtc_ns {
        cfg.numerics.dtc_ns = dtc;
    }
}

pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = cfg.clone();
    apply_overrides(&mut cfg, opts);
    let report = cfg.validate();
    if !report.is_ok() {
        return Err(CliError::Validation(report.render(&cfg.scenario.name)));
    }
    let preparations = cfg.preparations()?;
    let settings = cfg.settings();
    let dt = settings.dt;

    let unprobed = cfg.model(0.0)?;
    log::info!("{}: calibrating probe amplitudes", cfg.scenario.name);
    let amplitudes: Vec<f64> = cfg
        .scenario
        .n_ref
        .par_iter()
        .map(|&n| drive_amplitude_for_photons(&unprobed, n, dt))
        .collect::<Result<_, _>>()?;

    let mut jobs = Vec::new();
    for (i, &n_ref) in cfg.scenario.n_ref.iter().enumerate() {
        for &omega_mhz in &cfg.scenario.omega_mhz {
            for &state in &preparations {
                jobs.push((n_ref, amplitudes[i], omega_mhz, state));
            }
        }
    }
    log::info!("{}: {} sweep points", cfg.scenario.name, jobs.len());
    let points: Vec<PointResult> = jobs
        .par_iter()
        .map(|&(n_ref, eps, omega_mhz, state)| -> Result<PointResult, CliError> {
            let model = cfg.model(omega_mhz)?.with_probe_amplitude(C64::new(eps, 0.0))?;
            let run = emission_spectrum(&model, state, &settings).map_err(|e| {
                CliError::Config(format!("N_ref = {n_ref}, Ω/2π = {omega_mhz} MHz, {}: {e}", state.label()))
            })?;
            let count = emitted_photons(&run.trajectory, model.kappa())?;
            let spectrum = run.spectrum.clone().with_metadata(state.label(), model.omega(), n_ref);
            let spectrum_photons = spectrum_moments(&spectrum).map(|m| m.n_total).unwrap_or(0.0);
            let triplet = if omega_mhz > 0.0 {
                fit_triplet(&spectrum, model.omega())
                    .map_err(|e| log::warn!("triplet fit at N_ref = {n_ref}, Ω/2π = {omega_mhz} MHz: {e}"))
                    .ok()
            } else {
                None
            };
            let energy = preparation_energy_from_run(&model, state, &settings, &run)?;
            Ok(PointResult {
                n_ref,
                omega_mhz,
                state,
                probe_amplitude: eps,
                photons: run.photons,
                spectrum_photons,
                ringdown_complete: count.ringdown_complete,
                spectrum,
                triplet,
                energy,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut ledgers = Vec::new();
    for &n_ref in &cfg.scenario.n_ref {
        for &omega_mhz in &cfg.scenario.omega_mhz {
            if omega_mhz <= 0.0 {
                continue;
            }
            let per: Vec<PreparationEnergy> = points
                .iter()
                .filter(|p| p.n_ref == n_ref && p.omega_mhz == omega_mhz)
                .map(|p| p.energy.clone())
                .collect();
            let model = cfg.model(omega_mhz)?;
            ledgers.push(assemble_ledger(&model, n_ref, per));
        }
    }

    let (rabi, photon_calibration) = match &cfg.calibration {
        Some(c) => {
            let rabi = if c.rabi_amplitudes.is_empty() {
                None
            } else {
                Some(rabi_calibration(&unprobed, &c.rabi_amplitudes, mhz(c.rabi_mhz_per_amplitude), dt)?)
            };
            let photons = if c.ramsey_n.is_empty() {
                None
            } else {
                let amps: Vec<f64> = c
                    .ramsey_n
                    .par_iter()
                    .map(|&n| drive_amplitude_for_photons(&unprobed, n, dt))
                    .collect::<Result<_, _>>()?;
                Some(ramsey_photon_calibration(&unprobed, &amps, dt)?)
            };
            (rabi, photons)
        }
        None => (None, None),
    };

    let dir = opts.out_dir.join(cfg.output_subdir());
    let mut summary = RunSummary {
        name: cfg.scenario.name.clone(),
        dir: dir.clone(),
        points,
        ledgers,
        rabi,
        photon_calibration,
        files: Vec::new(),
    };
    write_artifacts(&cfg, &mut summary)?;
    Ok(summary)
}

fn spectrum_file(p: &PointResult) -> String {
    format!(
        "spectra/spectrum_nref{:.2}_omega{:.2}MHz_{}.csv",
        p.n_ref,
        p.omega_mhz,
        p.state.label()
    )
}

fn write_file(
    dir: &Path,
    rel: &str,
    files: &mut Vec<(String, String)>,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, &buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    files.push((rel.to_string(), hex(&Sha256::digest(&buf))));
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_artifacts(cfg: &ScenarioConfig, summary: &mut RunSummary) -> Result<(), CliError> {
    use std::io::Write;
    let dir = summary.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();

    for p in &summary.points {
        write_file(&dir, &spectrum_file(p), &mut files, |w| p.spectrum.write_csv(BufWriter::new(w)))?;
    }
    write_file(&dir, "n_vs_omega.csv", &mut files, |w| {
        writeln!(
            w,
            "n_ref,omega_mhz,state,probe_amplitude_rads,n_emitted,n_spectrum,ringdown_complete"
        )?;
        for p in &summary.points {
            writeln!(
                w,
                "{},{},{},{:.9e},{:.9e},{:.9e},{}",
                p.n_ref,
                p.omega_mhz,
                p.state.label(),
                p.probe_amplitude,
                p.photons,
                p.spectrum_photons,
                p.ringdown_complete
            )?;
        }
        Ok(())
    })?;
    write_file(&dir, "fits.csv", &mut files, |w| {
        write!(w, "n_ref,omega_mhz,state")?;
        for k in 0..3 {
            write!(w, ",center{k}_mhz,half_width{k}_mhz,area{k}")?;
        }
        writeln!(w, ",residual,side_separation_mhz,dominant_center_mhz,mean_center_mhz")?;
        for p in summary.points.iter().filter(|p| p.omega_mhz > 0.0) {
            write!(w, "{},{},{}", p.n_ref, p.omega_mhz, p.state.label())?;
            match &p.triplet {
                Some(t) => {
                    for pk in &t.peaks {
                        write!(w, ",{:.9e},{:.9e},{:.9e}", pk.center_hz / 1e6, pk.half_width_hz / 1e6, pk.area)?;
                    }
                    writeln!(
                        w,
                        ",{:.6e},{:.9e},{:.9e},{:.9e}",
                        t.residual,
                        t.side_separation_hz() / 1e6,
                        t.dominant_side_peak().center_hz / 1e6,
                        t.mean_center_hz() / 1e6
                    )?;
                }
                None => writeln!(w, "{}", ",nan".repeat(13))?,
            }
        }
        Ok(())
    })?;
    if !summary.ledgers.is_empty() {
        write_file(&dir, "ledger.csv", &mut files, |w| write_ledger_csv(&summary.ledgers, w))?;
        write_file(&dir, "ledger_estimators.csv", &mut files, |w| {
            let e = |v: f64| v / (2.0 * std::f64::consts::PI * 1e6);
            writeln!(
                w,
                "omega_hz,n_ref,qubit_loss_ramsey,qubit_loss_direct,dE_photon_moment,dE_photon_triplet"
            )?;
            for l in &summary.ledgers {
                writeln!(
                    w,
                    "{:.6e},{},{:.9e},{:.9e},{:.9e},{}",
                    l.omega / (2.0 * std::f64::consts::PI),
                    l.n_ref,
                    e(l.qubit_loss_ramsey),
                    e(l.qubit_loss_direct),
                    e(l.d_e_photon_trans),
                    l.d_e_photon_triplet.map_or("nan".to_string(), |v| format!("{:.9e}", e(v)))
                )?;
            }
            Ok(())
        })?;
    }
    if let Some(r) = &summary.rabi {
        write_file(&dir, "rabi_calibration.csv", &mut files, |w| write_rabi_csv(r, w))?;
    }
    if let Some(c) = &summary.photon_calibration {
        write_file(&dir, "photon_calibration.csv", &mut files, |w| write_photon_csv(c, w))?;
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# Scenario manifest. Re-run with `ncm run <this file>`.");
    manifest.push_str(&cfg.to_toml());
    let _ = writeln!(manifest, "\n[build]\nncm_version = {:?}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "\n[checksums]");
    for (rel, sum) in &files {
        let _ = writeln!(manifest, "{rel:?} = \"sha256:{sum}\"");
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    summary.files = files;
    Ok(())
}
