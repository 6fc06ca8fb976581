//! Energy bookkeeping between the qubit and the probe photons.
//!
//! Closed-model balance, in the rotating frame where the probe carrier has
//! zero mean frequency:
//!
//! `−ΔE_S = ∫dω ω [(1 + κ_A/κ_B) S_B(ω) + 2√κ_A Re{α_p(ω) C(ω)*}]`
//!
//! where `(1 + κ_A/κ_B) S_B` is the spectrum `s(ω)` built with the total `κ`,
//! `α_p` is the transform of the incoming coherent pulse and
//! `C(ω) = (2π)^{-1/2} ∫ e^{iωt} ⟨a(t)⟩ dt`. The second term is the
//! interference of the re-emitted coherent field with the reflected pulse.
//!
//! Ledger totals are sign-normalized: each preparation's contribution is
//! multiplied by its energy sign (`+1` for `|+⟩`, `−1` for `|−⟩`), so that for
//! both preparations a qubit energy loss is negative and a photon blue shift
//! relative to the qubit's own energy is positive. `residual = ΔE_qubit +
//! ΔE_photon_trans + ΔE_cross` vanishes when energy is conserved.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::ramsey_outcome;
use crate::error::{Error, Result};
use crate::hilbert::{annihilation, number, trace_product, DensityMatrix, QubitState, C64};
use crate::lindblad::{evolve, expectation_series, expectation_series_complex, StateTrajectory};
use crate::model::{system_energy_operator, SystemModel};
use crate::spectrum::{emission_spectrum, fit_triplet, spectrum_moments, trapezoid, SpectrumSettings};

/// Final-to-peak occupancy ratio above which the ring-down is incomplete.
pub const RINGDOWN_TOL: f64 = 1e-3;
/// Ideal-mode tolerance on `|residual|` relative to Ω.
pub const IDEAL_RESIDUAL_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhotonCount {
    pub photons: f64,
    /// `⟨n(τ)⟩ / max_t ⟨n(t)⟩`.
    pub tail_fraction: f64,
    pub ringdown_complete: bool,
}

/// `κ_port ∫⟨n(t)⟩dt` over the trajectory (trapezoid rule).
pub fn emitted_photons(traj: &StateTrajectory, kappa_port: f64) -> Result<PhotonCount> {
    let n = expectation_series(traj, &number(traj.spec()))?;
    let photons = kappa_port * trapezoid(&traj.times(), &n);
    let peak = n.iter().cloned().fold(0.0f64, f64::max);
    let tail_fraction = if peak > 0.0 { n[n.len() - 1] / peak } else { 0.0 };
    let ringdown_complete = tail_fraction <= RINGDOWN_TOL;
    if !ringdown_complete {
        log::warn!(
            "cavity ring-down incomplete: final occupancy is {:.2e} of peak",
            tail_fraction
        );
    }
    Ok(PhotonCount {
        photons,
        tail_fraction,
        ringdown_complete,
    })
}

/// `Tr[H_S ρ]` with `H_S = (Ω/2)σx + χ a†a σz`.
pub fn system_energy(model: &SystemModel, rho: &DensityMatrix) -> f64 {
    trace_product(&system_energy_operator(model).matrix, rho.matrix()).re
}

/// `(2π)^{-1/2} ∫ e^{iωt} x(t) dt` by the trapezoid rule on a uniform grid.
fn forward_transform(times: &[f64], x: &[C64], omega: f64) -> C64 {
    let n = times.len();
    let h = times[1] - times[0];
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..n {
        let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
        acc += x[k] * C64::from_polar(w, omega * times[k]);
    }
    acc / (2.0 * PI).sqrt()
}

/// `√κ_A α_p(ω)` for the square probe pulse, with `ε = −i√κ_A α_in`, i.e.
/// `√κ_A α_in = iε`. Exact transform of the rectangular envelope.
fn scaled_input_transform(model: &SystemModel, omega: f64) -> C64 {
    let s = model.schedule();
    let (t0, t1) = (s.probe_start, s.probe_end());
    let ie = C64::i() * model.probe_amplitude();
    let window = if omega.abs() * (t1 - t0) < 1e-8 {
        C64::new(t1 - t0, 0.0)
    } else {
        (C64::from_polar(1.0, omega * t1) - C64::from_polar(1.0, omega * t0)) / C64::new(0.0, omega)
    };
    ie * window / (2.0 * PI).sqrt()
}

/// `∫ dω ω 2√κ_A Re{α_p(ω) C(ω)*}` on the detuning grid `freq_hz`
/// (rad/s · photons). `⟨a(t)⟩` is read from the trajectory.
pub fn reflected_cross_term(model: &SystemModel, traj: &StateTrajectory, freq_hz: &[f64]) -> Result<f64> {
    let f_abs = freq_hz.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    if 2.0 * f_abs * traj.dt() > 1.0 {
        return Err(Error::Nyquist {
            dt: traj.dt(),
            f_span: f_abs,
        });
    }
    if model.probe_amplitude().norm() == 0.0 {
        return Ok(0.0);
    }
    let times = traj.times();
    let a_t = expectation_series_complex(traj, &annihilation(traj.spec()))?;
    let integrand: Vec<f64> = freq_hz
        .par_iter()
        .map(|&f| {
            let om = 2.0 * PI * f;
            let c = forward_transform(&times, &a_t, om);
            om * 2.0 * (scaled_input_transform(model, om) * c.conj()).re
        })
        .collect();
    // dω = 2π df
    Ok(2.0 * PI * trapezoid(freq_hz, &integrand))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    Ideal,
    Experimental,
}

impl LedgerMode {
    pub fn of(model: &SystemModel) -> Self {
        if model.decoherence_enabled() {
            LedgerMode::Experimental
        } else {
            LedgerMode::Ideal
        }
    }
}

impl fmt::Display for LedgerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LedgerMode::Ideal => "ideal",
            LedgerMode::Experimental => "experimental",
        })
    }
}

/// One preparation's raw (not sign-normalized) energies, all in rad/s · photons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreparationEnergy {
    pub state: QubitState,
    pub photons: f64,
    /// `Tr[H_S ρ(τ)] − Tr[H_S ρ(0)]`.
    pub system_change: f64,
    /// `(Ω/2)(⟨σx⟩_0 − ⟨σx⟩_τ)`.
    pub direct_qubit_change: f64,
    /// Fringe amplitude with probe on over probe off.
    pub coherence_ratio: f64,
    /// `2π N × mean shift` from the spectrum moments.
    pub photon_moment: f64,
    /// Same from the triplet fit; `None` if the fit failed.
    pub photon_triplet: Option<f64>,
    pub cross: f64,
}

impl PreparationEnergy {
    pub fn residual(&self) -> f64 {
        self.system_change + self.photon_moment + self.cross
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub omega: f64,
    pub n_ref: f64,
    pub mode: LedgerMode,
    pub preparations: Vec<PreparationEnergy>,
    /// `Σ_p sign_p · system_change_p`.
    pub d_e_qubit: f64,
    pub d_e_photon_trans: f64,
    pub d_e_cross: f64,
    pub residual: f64,
    /// `Σ_p (Ω/2)(1 − A_on/A_off)`: qubit energy loss from the Ramsey ratios.
    pub qubit_loss_ramsey: f64,
    /// `Σ_p sign_p (Ω/2)(⟨σx⟩_0 − ⟨σx⟩_τ)`: qubit energy loss from ⟨σx⟩.
    pub qubit_loss_direct: f64,
    /// Sign-normalized triplet-fit photon energy, when every fit succeeded.
    pub d_e_photon_triplet: Option<f64>,
}

impl EnergyLedger {
    /// Residual relative to Ω.
    pub fn relative_residual(&self) -> f64 {
        self.residual.abs() / self.omega
    }

    /// Whether the ideal-mode conservation tolerance holds.
    pub fn conserves(&self) -> bool {
        self.relative_residual() <= IDEAL_RESIDUAL_TOL
    }
}

/// Qubit-side estimates for one preparation: system energy change, ⟨σx⟩-based
/// change and probe-on/probe-off Ramsey ratio.
fn qubit_side(
    model: &SystemModel,
    state: QubitState,
    traj: &StateTrajectory,
    dt: f64,
) -> Result<(f64, f64, f64)> {
    let spec = model.spec();
    let first = traj.state(0);
    let last = traj.last();
    let system_change = system_energy(model, last) - system_energy(model, first);
    let sx = crate::hilbert::qubit_operators(spec).sx.matrix;
    let x0 = trace_product(&sx, first.matrix()).re;
    let x1 = trace_product(&sx, last.matrix()).re;
    let direct = 0.5 * model.omega() * (x0 - x1);
    let on = ramsey_outcome(last.clone(), spec)?.fringe;
    let quiet = model
        .with_probe_amplitude(C64::new(0.0, 0.0))?
        .with_n_max(spec.n_max())?;
    let off_traj = evolve(&quiet, &DensityMatrix::product(spec, state, 0), dt)?;
    let off = ramsey_outcome(off_traj.last().clone(), spec)?.fringe;
    if !(off > 0.0) {
        return Err(Error::Fit("probe-off Ramsey fringe has no contrast".into()));
    }
    Ok((system_change, direct, on / off))
}

/// Qubit energy change of each preparation by the Ramsey-ratio and the direct
/// ⟨σx⟩ estimators, as `(Σ_p (Ω/2)(1 − ratio_p), Σ_p sign_p (Ω/2)(⟨σx⟩_0 − ⟨σx⟩_τ))`.
pub fn qubit_energy_change(model: &SystemModel, preparations: &[QubitState], dt: f64) -> Result<(f64, f64)> {
    let mut ramsey = 0.0;
    let mut direct = 0.0;
    for &st in preparations {
        let traj = evolve(model, &DensityMatrix::product(model.spec(), st, 0), dt)?;
        let (_, d, ratio) = qubit_side(model, st, &traj, dt)?;
        ramsey += 0.5 * model.omega() * (1.0 - ratio);
        direct += st.energy_sign() * d;
    }
    Ok((ramsey, direct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhotonEnergy {
    /// Sign-normalized `Σ_p sign_p 2π N_p ⟨f⟩_p` from moments (rad/s · photons).
    pub moment: f64,
    /// Same with the triplet-fit mean center.
    pub triplet: f64,
}

/// Photon energy change of a `|+⟩`/`|−⟩` spectrum pair at identical probe
/// settings.
pub fn photon_energy_change(
    s_plus: &crate::spectrum::PowerSpectrum,
    s_minus: &crate::spectrum::PowerSpectrum,
    omega_hint: f64,
) -> Result<PhotonEnergy> {
    if s_plus.freq_hz != s_minus.freq_hz || s_plus.kappa != s_minus.kappa {
        return Err(Error::Config("spectra were computed with different settings".into()));
    }
    let mp = spectrum_moments(s_plus)?;
    let mm = spectrum_moments(s_minus)?;
    let moment = mp.energy() - mm.energy();
    let triplet = if omega_hint > 0.0 {
        let tp = fit_triplet(s_plus, omega_hint)?;
        let tm = fit_triplet(s_minus, omega_hint)?;
        2.0 * PI * (tp.total_area() * tp.mean_center_hz() - tm.total_area() * tm.mean_center_hz())
    } else {
        0.0
    };
    Ok(PhotonEnergy { moment, triplet })
}

/// Full energy ledger for the given preparations. In ideal mode the caller
/// can test [`EnergyLedger::conserves`]; in experimental mode the residual is
/// only reported.
pub fn energy_balance(
    model: &SystemModel,
    preparations: &[QubitState],
    n_ref: f64,
    settings: &SpectrumSettings,
) -> Result<EnergyLedger> {
    if preparations.is_empty() {
        return Err(Error::Config("no preparations given".into()));
    }
    let per: Result<Vec<PreparationEnergy>> = preparations
        .par_iter()
        .map(|&st| preparation_energy(model, st, settings))
        .collect();
    let preparations = per?;
    Ok(assemble_ledger(model, n_ref, preparations))
}

pub(crate) fn preparation_energy(
    model: &SystemModel,
    state: QubitState,
    settings: &SpectrumSettings,
) -> Result<PreparationEnergy> {
    let run = emission_spectrum(model, state, settings)?;
    preparation_energy_from_run(model, state, settings, &run)
}

pub fn preparation_energy_from_run(
    model: &SystemModel,
    state: QubitState,
    settings: &SpectrumSettings,
    run: &crate::spectrum::EmissionRun,
) -> Result<PreparationEnergy> {
    let (system_change, direct, ratio) = qubit_side(model, state, &run.trajectory, settings.dt)?;
    let (photon_moment, photon_triplet) = match spectrum_moments(&run.spectrum) {
        Ok(m) => {
            let trip = if model.omega() > 0.0 {
                match fit_triplet(&run.spectrum, model.omega()) {
                    Ok(t) => Some(2.0 * PI * t.total_area() * t.mean_center_hz()),
                    Err(e) => {
                        log::warn!("triplet fit failed for {}: {e}", state.label());
                        None
                    }
                }
            } else {
                Some(0.0)
            };
            (m.energy(), trip)
        }
        // no photons, no photon energy
        Err(Error::UndefinedMean(_)) => (0.0, Some(0.0)),
        Err(e) => return Err(e),
    };
    let cross = reflected_cross_term(model, &run.trajectory, &settings.frequencies())?;
    Ok(PreparationEnergy {
        state,
        photons: run.photons,
        system_change,
        direct_qubit_change: direct,
        coherence_ratio: ratio,
        photon_moment,
        photon_triplet,
        cross,
    })
}

pub fn assemble_ledger(model: &SystemModel, n_ref: f64, preparations: Vec<PreparationEnergy>) -> EnergyLedger {
    let sum = |f: &dyn Fn(&PreparationEnergy) -> f64| -> f64 {
        preparations.iter().map(|p| p.state.energy_sign() * f(p)).sum()
    };
    let d_e_qubit = sum(&|p| p.system_change);
    let d_e_photon_trans = sum(&|p| p.photon_moment);
    let d_e_cross = sum(&|p| p.cross);
    let qubit_loss_direct = sum(&|p| p.direct_qubit_change);
    let qubit_loss_ramsey = preparations
        .iter()
        .map(|p| 0.5 * model.omega() * (1.0 - p.coherence_ratio))
        .sum();
    let d_e_photon_triplet = preparations
        .iter()
        .map(|p| p.photon_triplet.map(|v| p.state.energy_sign() * v))
        .sum::<Option<f64>>();
    EnergyLedger {
        omega: model.omega(),
        n_ref,
        mode: LedgerMode::of(model),
        d_e_qubit,
        d_e_photon_trans,
        d_e_cross,
        residual: d_e_qubit + d_e_photon_trans + d_e_cross,
        qubit_loss_ramsey,
        qubit_loss_direct,
        d_e_photon_triplet,
        preparations,
    }
}

/// Writes ledger rows with energies converted to MHz (`E / 2π·10⁶`).
pub fn write_ledger_csv<W: Write>(ledgers: &[EnergyLedger], mut w: W) -> std::io::Result<()> {
    let mhz = |e: f64| e / (2.0 * PI * 1e6);
    writeln!(w, "omega_hz,n_ref,dE_qubit,dE_photon_trans,dE_cross,residual,mode")?;
    for l in ledgers {
        writeln!(
            w,
            "{:.6e},{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            l.omega / (2.0 * PI),
            l.n_ref,
            mhz(l.d_e_qubit),
            mhz(l.d_e_photon_trans),
            mhz(l.d_e_cross),
            mhz(l.residual),
            l.mode
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mhz;
    use approx::assert_abs_diff_eq;

    #[test]
    fn probe_off_reference_keeps_the_automatic_cutoff() {
        let m = SystemModel::default()
            .with_omega(mhz(3.0))
            .unwrap()
            .with_probe_amplitude(C64::new(mhz(3.0), 0.0))
            .unwrap();
        assert!(m.spec().n_max() > SystemModel::default().spec().n_max());
        let (ramsey, _) = qubit_energy_change(&m, &[QubitState::Plus], 1e-9).unwrap();
        assert!(ramsey.is_finite());
    }

    #[test]
    fn vacuum_emits_nothing() {
        let m = SystemModel::default().with_n_max(2).unwrap();
        let traj = evolve(&m, &DensityMatrix::product(m.spec(), QubitState::Plus, 0), 1e-9).unwrap();
        let c = emitted_photons(&traj, m.kappa()).unwrap();
        assert_eq!(c.photons, 0.0);
        assert!(c.ringdown_complete);
        let f = crate::spectrum::frequency_grid(10e6, 41);
        assert_eq!(reflected_cross_term(&m, &traj, &f).unwrap(), 0.0);
    }

    #[test]
    fn input_transform_matches_quadrature() {
        let m = SystemModel::default()
            .with_probe_amplitude(C64::new(mhz(1.0), mhz(0.3)))
            .unwrap();
        let times: Vec<f64> = (0..=30000).map(|k| k as f64 * 1e-10).collect();
        let env: Vec<C64> = times
            .iter()
            .map(|&t| {
                let s = m.schedule();
                if t >= s.probe_start && t <= s.probe_end() {
                    C64::i() * m.probe_amplitude()
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        for om in [0.0, mhz(0.7), -mhz(3.1)] {
            let a = scaled_input_transform(&m, om);
            let b = forward_transform(&times, &env, om);
            assert!((a - b).norm() <= 1e-3 * a.norm().max(1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn ledger_without_probe_is_zero() {
        let m = SystemModel::default()
            .with_decoherence(false)
            .unwrap()
            .with_n_max(2)
            .unwrap()
            .with_omega(mhz(3.0))
            .unwrap();
        let l = energy_balance(&m, &[QubitState::Plus, QubitState::Minus], 0.0, &SpectrumSettings::default()).unwrap();
        assert_abs_diff_eq!(l.d_e_qubit, 0.0, epsilon = 1e-6);
        assert_eq!(l.d_e_photon_trans, 0.0);
        assert_eq!(l.d_e_cross, 0.0);
        assert_abs_diff_eq!(l.qubit_loss_ramsey, 0.0, epsilon = 1e-6 * m.omega());
        assert_eq!(l.mode, LedgerMode::Ideal);
    }

    #[test]
    fn ledger_csv_header() {
        let mut buf = Vec::new();
        write_ledger_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "omega_hz,n_ref,dE_qubit,dE_photon_trans,dE_cross,residual,mode"
        );
    }
}
