//! In-silico calibrations: Rabi frequency versus drive amplitude, and the
//! Ramsey measurement of probe-induced dephasing used to count photons.
//!
//! π/2 pulses are ideal instantaneous rotations and the final readout is the
//! excited-state population of the simulated state.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::energetics::emitted_photons;
use crate::error::{Error, Result};
use crate::fitcore::{fit_fixed_frequency_sinusoid, fit_sinusoid, least_squares, CenteredGaussian, FitResult, Line, SinusoidFit};
use crate::hilbert::{
    coherence_ge, partial_trace_qubit, pauli_x, pauli_y, CMatrix, DensityMatrix, HilbertSpec, QubitState, C64,
};
use crate::lindblad::{evolve, expectation_series};
use crate::model::SystemModel;

/// Number of phases in a Ramsey sweep.
pub const RAMSEY_PHASES: usize = 16;
/// Coherence at or below which a Ramsey point is excluded.
pub const COHERENCE_FLOOR: f64 = 1e-9;

/// `exp(−i θ/2 (cos φ σx + sin φ σy))` on the qubit.
pub fn qubit_rotation(theta: f64, phi: f64) -> CMatrix {
    let axis = pauli_x().scale(phi.cos()) + pauli_y().scale(phi.sin());
    let (s, c) = (0.5 * theta).sin_cos();
    CMatrix::identity(2, 2) * C64::new(c, 0.0) - axis * C64::new(0.0, s)
}

/// `(U ⊗ I) ρ (U ⊗ I)†` for a 2×2 qubit unitary.
pub fn apply_qubit_unitary(rho: &CMatrix, u: &CMatrix, spec: HilbertSpec) -> CMatrix {
    let full = crate::hilbert::kron(u, &CMatrix::identity(spec.cavity_dim(), spec.cavity_dim()));
    &full * rho * full.adjoint()
}

fn excited_population(rho: &CMatrix, spec: HilbertSpec) -> f64 {
    (0..spec.cavity_dim())
        .map(|n| {
            let i = spec.index(1, n);
            rho[(i, i)].re
        })
        .sum()
}

/// Ramsey fringe of a joint state: final π/2 rotation at each sweep phase,
/// `⟨σz⟩ = 2P_e − 1` read out, fixed-frequency sinusoid fitted versus phase.
/// The fitted amplitude is `2|ρ_ge|`.
pub fn ramsey_fringe(rho: &DensityMatrix, spec: HilbertSpec, phases: &[f64]) -> Result<SinusoidFit> {
    let z: Vec<f64> = phases
        .iter()
        .map(|&phi| {
            2.0 * excited_population(&apply_qubit_unitary(rho.matrix(), &qubit_rotation(0.5 * PI, phi), spec), spec)
                - 1.0
        })
        .collect();
    fit_fixed_frequency_sinusoid(phases, &z, 1.0 / (2.0 * PI))
}

pub fn sweep_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone)]
pub struct RamseyOutcome {
    /// Fitted fringe amplitude, `2|ρ_ge|` of the final qubit state.
    pub fringe: f64,
    /// `2|ρ_ge|` read directly from the reduced final state.
    pub direct_coherence: f64,
    pub final_state: DensityMatrix,
}

/// Ramsey fringe after evolving `|state, 0⟩` under the model with the qubit
/// drive on and the probe on or off.
pub fn ramsey_coherence_with_drive(
    model: &SystemModel,
    state: QubitState,
    probe_on: bool,
    dt: f64,
) -> Result<RamseyOutcome> {
    let m = if probe_on {
        model.clone()
    } else {
        model.with_probe_amplitude(C64::new(0.0, 0.0))?
    };
    let rho0 = DensityMatrix::product(m.spec(), state, 0);
    let traj = evolve(&m, &rho0, dt)?;
    let final_state = traj.last().clone();
    ramsey_outcome(final_state, m.spec())
}

pub(crate) fn ramsey_outcome(final_state: DensityMatrix, spec: HilbertSpec) -> Result<RamseyOutcome> {
    let fit = ramsey_fringe(&final_state, spec, &sweep_phases(RAMSEY_PHASES))?;
    let q = partial_trace_qubit(&final_state, spec)?;
    Ok(RamseyOutcome {
        fringe: fit.amplitude,
        direct_coherence: coherence_ge(&q),
        final_state,
    })
}

#[derive(Debug, Clone)]
pub struct RabiCalibration {
    pub amplitudes: Vec<f64>,
    /// Fitted Rabi frequency Ω/2π (Hz) per amplitude; zero where flagged.
    pub omega_hz: Vec<f64>,
    /// Amplitudes whose population trace carried no oscillation.
    pub flat: Vec<bool>,
    /// `Ω/2π = slope·amplitude + intercept`.
    pub line: FitResult,
    /// Largest `|Ω_fit − line|` relative to the largest Ω_fit.
    pub linearity_residual: f64,
}

fn check_abscissa(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Config(format!("{what} list is empty")));
    }
    if xs.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Config(format!("{what} values must be finite and >= 0")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{what} values must be strictly increasing")));
    }
    Ok(())
}

/// Rabi oscillations of `⟨(1+σz)/2⟩` from `|g⟩` without probe, one fit per
/// amplitude, with `Ω = omega_per_amplitude · amplitude` as the simulated truth.
pub fn rabi_calibration(
    model: &SystemModel,
    amplitudes: &[f64],
    omega_per_amplitude: f64,
    dt: f64,
) -> Result<RabiCalibration> {
    check_abscissa(amplitudes, "amplitude")?;
    let quiet = model.with_probe_amplitude(C64::new(0.0, 0.0))?;
    let fits: Vec<Result<SinusoidFit>> = amplitudes
        .par_iter()
        .enumerate()
        .map(|(idx, &amp)| {
            let m = quiet.with_omega(omega_per_amplitude * amp)?;
            let rho0 = DensityMatrix::product(m.spec(), QubitState::Ground, 0);
            let traj = evolve(&m, &rho0, dt)?;
            let q = crate::hilbert::qubit_operators(m.spec());
            let sz = expectation_series(&traj, &q.sz)?;
            let t_end = m.schedule().drive_end();
            let (t, pe): (Vec<f64>, Vec<f64>) = traj
                .times()
                .into_iter()
                .zip(sz)
                .filter(|(t, _)| *t <= t_end)
                .step_by(5)
                .map(|(t, z)| (t, 0.5 * (1.0 + z)))
                .unzip();
            fit_sinusoid(&t, &pe).map_err(|e| Error::Fit(format!("amplitude #{idx} ({amp}): {e}")))
        })
        .collect();
    let mut omega_hz = Vec::with_capacity(fits.len());
    let mut flat = Vec::with_capacity(fits.len());
    for f in fits {
        let f = f?;
        flat.push(f.degenerate);
        omega_hz.push(if f.degenerate { 0.0 } else { f.frequency });
    }
    let slope0 = omega_per_amplitude / (2.0 * PI);
    let line = least_squares(&Line, amplitudes, &omega_hz, &[slope0, 0.0])?;
    let max = omega_hz.iter().cloned().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let linearity_residual = amplitudes
        .iter()
        .zip(&omega_hz)
        .map(|(a, w)| (w - (line.params[0] * a + line.params[1])).abs())
        .fold(0.0, f64::max)
        / max;
    Ok(RabiCalibration {
        amplitudes: amplitudes.to_vec(),
        omega_hz,
        flat,
        line,
        linearity_residual,
    })
}

#[derive(Debug, Clone)]
pub struct PhotonCalibration {
    pub amplitudes: Vec<f64>,
    /// Fringe amplitude normalized to the zero-probe fringe.
    pub coherence: Vec<f64>,
    /// `−½ ln(coherence)`; NaN where excluded.
    pub n_extracted: Vec<f64>,
    /// `κ∫⟨n⟩dt` of the same probe, for cross-checking.
    pub n_emitted: Vec<f64>,
    pub excluded: Vec<bool>,
    /// Zero-centred Gaussian in amplitude through the normalized coherence.
    pub gaussian: FitResult,
}

impl PhotonCalibration {
    /// Photon number of the Gaussian fit at `amplitude`: `amp²/(4σ²) − ½ ln h`.
    pub fn fitted_photons(&self, amplitude: f64) -> f64 {
        let (h, sigma) = (self.gaussian.params[0], self.gaussian.params[1]);
        amplitude * amplitude / (4.0 * sigma * sigma) - 0.5 * h.ln()
    }
}

/// Ramsey calibration of photon number versus probe amplitude (rad/s): π/2,
/// probe pulse with the qubit drive off, phase-swept π/2.
pub fn ramsey_photon_calibration(
    model: &SystemModel,
    probe_amplitudes: &[f64],
    dt: f64,
) -> Result<PhotonCalibration> {
    check_abscissa(probe_amplitudes, "probe amplitude")?;
    let free = model.with_omega(0.0)?;
    let run = |amp: f64| -> Result<(f64, f64)> {
        let m = free.with_probe_amplitude(C64::new(amp, 0.0))?;
        let rho0 = DensityMatrix::product(m.spec(), QubitState::Plus, 0);
        let traj = evolve(&m, &rho0, dt)?;
        let fringe = ramsey_outcome(traj.last().clone(), m.spec())?.fringe;
        Ok((fringe, emitted_photons(&traj, m.kappa())?.photons))
    };
    let (reference, _) = run(0.0)?;
    if !(reference > COHERENCE_FLOOR) {
        return Err(Error::Fit(format!("zero-probe fringe {reference:.3e} has no contrast")));
    }
    let points: Vec<Result<(f64, f64)>> = probe_amplitudes.par_iter().map(|&a| run(a)).collect();
    let mut coherence = Vec::new();
    let mut n_extracted = Vec::new();
    let mut n_emitted = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        let (fringe, emitted) = p?;
        let c = fringe / reference;
        let bad = !(fringe > COHERENCE_FLOOR);
        if bad {
            log::warn!("Ramsey coherence {c:.3e} at the numerical floor; point excluded");
        }
        coherence.push(c);
        n_extracted.push(if bad { f64::NAN } else { -0.5 * c.ln() });
        n_emitted.push(emitted);
        excluded.push(bad);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = probe_amplitudes
        .iter()
        .zip(&coherence)
        .zip(&excluded)
        .filter(|(_, bad)| !**bad)
        .map(|((a, c), _)| (*a, *c))
        .unzip();
    // σ from the point nearest 1/e: c = exp(−a²/2σ²)
    let sigma0 = xs
        .iter()
        .zip(&ys)
        .filter(|(a, c)| **a > 0.0 && **c < 1.0 && **c > 0.0)
        .map(|(a, c)| a / (-2.0 * c.ln()).sqrt())
        .next()
        .unwrap_or_else(|| xs.iter().cloned().fold(0.0, f64::max).max(1.0));
    let gaussian = least_squares(&CenteredGaussian, &xs, &ys, &[1.0, sigma0])?;
    Ok(PhotonCalibration {
        amplitudes: probe_amplitudes.to_vec(),
        coherence,
        n_extracted,
        n_emitted,
        excluded,
        gaussian,
    })
}

pub fn write_rabi_csv<W: Write>(cal: &RabiCalibration, mut w: W) -> std::io::Result<()> {
    writeln!(w, "amplitude,omega_hz,flat,fit_slope_hz,fit_intercept_hz")?;
    for ((a, o), f) in cal.amplitudes.iter().zip(&cal.omega_hz).zip(&cal.flat) {
        writeln!(
            w,
            "{:.9e},{:.9e},{},{:.9e},{:.9e}",
            a, o, f, cal.line.params[0], cal.line.params[1]
        )?;
    }
    Ok(())
}

pub fn write_photon_csv<W: Write>(cal: &PhotonCalibration, mut w: W) -> std::io::Result<()> {
    writeln!(w, "amplitude,coherence,n_extracted,n_emitted,excluded,fit_height,fit_sigma")?;
    for i in 0..cal.amplitudes.len() {
        writeln!(
            w,
            "{:.9e},{:.12e},{:.12e},{:.12e},{},{:.9e},{:.9e}",
            cal.amplitudes[i],
            cal.coherence[i],
            cal.n_extracted[i],
            cal.n_emitted[i],
            cal.excluded[i],
            cal.gaussian.params[0],
            cal.gaussian.params[1]
        )?;
    }
    Ok(())
}
