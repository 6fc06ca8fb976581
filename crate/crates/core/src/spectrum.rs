//! Emitted-photon power spectrum
//! `s(ω) = κ/2π ∫₀^τ∫₀^τ dt1 dt2 e^{−iω(t1−t2)} c(t1, t2)`,
//! its moments and three-Lorentzian decomposition.
//!
//! Spectra are stored per Hz on a detuning axis in Hz, so that
//! `∫ s df` is a photon number.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::{check_nyquist, correlator_from_trajectory, CorrelationGrid, DEFAULT_DT_C};
use crate::energetics::emitted_photons;
use crate::error::{Error, Result};
use crate::fitcore::{least_squares, LorentzianSum};
use crate::hilbert::{DensityMatrix, QubitState, C64};
use crate::lindblad::{evolve, StateTrajectory, DEFAULT_DT};
use crate::model::{drive_amplitude_for_photons, SystemModel};

/// Photon number below which a mean frequency is not defined.
pub const PHOTON_FLOOR: f64 = 1e-12;
pub const DEFAULT_F_SPAN_HZ: f64 = 10e6;
pub const DEFAULT_N_FREQ: usize = 401;
/// Side peaks sit at least this fraction of Ω away from zero detuning.
pub const SIDE_PEAK_MIN_OFFSET: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub freq_hz: Vec<f64>,
    /// Photons per Hz.
    pub s: Vec<f64>,
    pub kappa: f64,
    pub tau: f64,
    pub state_label: String,
    /// Qubit drive Ω (rad/s) of the generating model.
    pub omega: f64,
    pub n_ref: f64,
    /// Set when some `s < −1e−6·max(s)` (quadrature ripple); values are kept as computed.
    pub negative_ripple: bool,
}

impl PowerSpectrum {
    pub fn with_metadata(mut self, state_label: &str, omega: f64, n_ref: f64) -> Self {
        self.state_label = state_label.to_string();
        self.omega = omega;
        self.n_ref = n_ref;
        self
    }

    pub fn max(&self) -> f64 {
        self.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Detuning (Hz) of the largest sample.
    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .s
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        self.freq_hz[i]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,s_photons_per_hz,state_label,omega_rads,n_ref")?;
        for (f, s) in self.freq_hz.iter().zip(&self.s) {
            writeln!(
                w,
                "{:.6e},{:.12e},{},{:.9e},{}",
                f, s, self.state_label, self.omega, self.n_ref
            )?;
        }
        Ok(())
    }
}

/// `n` equally spaced detunings over `[−f_span, +f_span]`.
pub fn frequency_grid(f_span_hz: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| -f_span_hz + 2.0 * f_span_hz * k as f64 / (n - 1) as f64)
        .collect()
}

/// Trapezoid integral of `y` over the (possibly non-uniform) grid `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Double trapezoid quadrature of the finite-window transform of `grid` at
/// each requested detuning.
pub fn power_spectrum(grid: &CorrelationGrid, kappa: f64, freq_hz: &[f64]) -> Result<PowerSpectrum> {
    let f_abs = freq_hz.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    check_nyquist(grid.dt_c(), f_abs)?;
    let n = grid.len();
    let h = grid.dt_c();
    let w: Vec<f64> = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    let c = grid.values();
    let s: Vec<f64> = freq_hz
        .par_iter()
        .map(|&f| {
            let om = 2.0 * PI * f;
            // v_j = w_j e^{iωt_j};  s = κ Re(v† C v)
            let v: Vec<C64> = (0..n)
                .map(|j| C64::from_polar(w[j], om * grid.time(j)))
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                let mut row = C64::new(0.0, 0.0);
                for i in 0..n {
                    row += v[i].conj() * c[(i, j)];
                }
                acc += row * v[j];
            }
            kappa * acc.re
        })
        .collect();
    let max = s.iter().cloned().fold(0.0f64, f64::max);
    let negative_ripple = s.iter().any(|&v| v < -1e-6 * max);
    Ok(PowerSpectrum {
        freq_hz: freq_hz.to_vec(),
        s,
        kappa,
        tau: grid.duration(),
        state_label: String::new(),
        omega: 0.0,
        n_ref: 0.0,
        negative_ripple,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumMoments {
    pub n_total: f64,
    pub mean_shift_hz: f64,
}

impl SpectrumMoments {
    /// `N × mean shift` as an angular energy (rad/s · photons).
    pub fn energy(&self) -> f64 {
        2.0 * PI * self.n_total * self.mean_shift_hz
    }
}

pub fn spectrum_moments(s: &PowerSpectrum) -> Result<SpectrumMoments> {
    let n_total = trapezoid(&s.freq_hz, &s.s);
    if !(n_total > PHOTON_FLOOR) {
        return Err(Error::UndefinedMean(n_total));
    }
    let fs: Vec<f64> = s.freq_hz.iter().zip(&s.s).map(|(f, v)| f * v).collect();
    Ok(SpectrumMoments {
        n_total,
        mean_shift_hz: trapezoid(&s.freq_hz, &fs) / n_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianPeak {
    pub center_hz: f64,
    pub half_width_hz: f64,
    /// Photons.
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LorentzianTriplet {
    /// Ordered by center.
    pub peaks: [LorentzianPeak; 3],
    /// Residual norm in photons/Hz.
    pub residual: f64,
    pub iterations: usize,
    /// Ω/2π used to seed the fit (Hz).
    pub omega_hint_hz: f64,
}

impl LorentzianTriplet {
    pub fn total_area(&self) -> f64 {
        self.peaks.iter().map(|p| p.area).sum()
    }

    /// Area-weighted mean center (Hz).
    pub fn mean_center_hz(&self) -> f64 {
        self.peaks.iter().map(|p| p.area * p.center_hz).sum::<f64>() / self.total_area()
    }

    /// Tallest fitted peak below and above zero detuning, ignoring peaks
    /// within `Ω/4` of zero. A broad pedestal can take an outer slot, so the
    /// outermost peaks are not used.
    pub fn side_peaks(&self) -> (LorentzianPeak, LorentzianPeak) {
        let height = |p: &LorentzianPeak| p.area / (PI * p.half_width_hz);
        let cut = SIDE_PEAK_MIN_OFFSET * self.omega_hint_hz;
        let tallest = |neg: bool| {
            *self
                .peaks
                .iter()
                .filter(|p| if neg { p.center_hz < -cut } else { p.center_hz > cut })
                .max_by(|a, b| height(a).total_cmp(&height(b)))
                .expect("fit keeps a peak on each side")
        };
        (tallest(true), tallest(false))
    }

    /// Distance between the side peaks (Hz).
    pub fn side_separation_hz(&self) -> f64 {
        let (l, r) = self.side_peaks();
        r.center_hz - l.center_hz
    }

    /// The side peak with the larger area.
    pub fn dominant_side_peak(&self) -> LorentzianPeak {
        let (l, r) = self.side_peaks();
        if l.area >= r.area {
            l
        } else {
            r
        }
    }
}

/// Three-Lorentzian fit with half-widths seeded at `κ/4π` and areas from
/// local integrals. Side centers are seeded both at `±Ω` (`omega_hint` in
/// rad/s) and at the largest spectral value on each side; the valid fit with
/// the smaller residual wins. A fit is valid if it converged, has no negative
/// area and keeps a peak beyond `Ω/4` on each side of zero.
pub fn fit_triplet(s: &PowerSpectrum, omega_hint: f64) -> Result<LorentzianTriplet> {
    if !(omega_hint > 0.0) {
        return Err(Error::Fit(format!("Ω hint must be > 0, got {omega_hint}")));
    }
    let oh = omega_hint / (2.0 * PI);
    let side_max = |sign: f64| -> f64 {
        s.freq_hz
            .iter()
            .zip(&s.s)
            .filter(|(f, _)| sign * **f > SIDE_PEAK_MIN_OFFSET * oh && sign * **f < 1.5 * oh)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
            .unwrap_or(sign * oh)
    };
    let seeds = [[-oh, 0.0, oh], [side_max(-1.0), 0.0, side_max(1.0)]];
    let mut best: Option<LorentzianTriplet> = None;
    let mut last_err = None;
    for centers in seeds {
        match fit_triplet_from(s, &centers, oh) {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.residual < b.residual) {
                    best = Some(t);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Fit("no triplet seed".into())))
}

fn fit_triplet_from(s: &PowerSpectrum, centers: &[f64; 3], oh: f64) -> Result<LorentzianTriplet> {
    let hw = s.kappa / (4.0 * PI);
    let total = trapezoid(&s.freq_hz, &s.s).max(PHOTON_FLOOR);
    let mut init = Vec::with_capacity(9);
    for &c in centers {
        let (xs, ys): (Vec<f64>, Vec<f64>) = s
            .freq_hz
            .iter()
            .zip(&s.s)
            .filter(|(f, _)| (**f - c).abs() <= 0.5 * oh)
            .map(|(f, v)| (*f, *v))
            .unzip();
        let local = if xs.len() >= 2 { trapezoid(&xs, &ys) } else { 0.0 };
        init.extend_from_slice(&[c, hw, local.max(1e-3 * total)]);
    }
    let fit = least_squares(&LorentzianSum { peaks: 3 }, &s.freq_hz, &s.s, &init)?;
    if !fit.converged {
        return Err(Error::Fit(format!(
            "triplet fit did not converge after {} iterations (residual {:.3e}, gradient {:.3e})",
            fit.iterations, fit.residual_norm, fit.gradient_norm
        )));
    }
    let mut peaks: Vec<LorentzianPeak> = fit
        .params
        .chunks_exact(3)
        .map(|q| {
            // (γ, A) and (−γ, −A) describe the same curve
            let (g, a) = if q[1] < 0.0 { (-q[1], -q[2]) } else { (q[1], q[2]) };
            LorentzianPeak {
                center_hz: q[0],
                half_width_hz: g,
                area: a,
            }
        })
        .collect();
    if let Some(p) = peaks.iter().find(|p| p.area < 0.0) {
        return Err(Error::Fit(format!(
            "triplet fit produced a negative area {:.3e} at {:.4e} Hz (residual {:.3e})",
            p.area, p.center_hz, fit.residual_norm
        )));
    }
    peaks.sort_by(|a, b| a.center_hz.total_cmp(&b.center_hz));
    let cut = SIDE_PEAK_MIN_OFFSET * oh;
    if !(peaks[0].center_hz < -cut && peaks[2].center_hz > cut) {
        return Err(Error::Fit(format!(
            "triplet fit left no side peak on one side ({:.4e}, {:.4e} Hz)",
            peaks[0].center_hz, peaks[2].center_hz
        )));
    }
    Ok(LorentzianTriplet {
        peaks: [peaks[0], peaks[1], peaks[2]],
        residual: fit.residual_norm,
        iterations: fit.iterations,
        omega_hint_hz: oh,
    })
}

/// Discretization of one spectrum computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSettings {
    pub dt: f64,
    pub dt_c: f64,
    pub f_span_hz: f64,
    pub n_freq: usize,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            dt_c: DEFAULT_DT_C,
            f_span_hz: DEFAULT_F_SPAN_HZ,
            n_freq: DEFAULT_N_FREQ,
        }
    }
}

impl SpectrumSettings {
    pub fn frequencies(&self) -> Vec<f64> {
        frequency_grid(self.f_span_hz, self.n_freq)
    }
}

/// Trajectory, correlator and spectrum of one preparation.
#[derive(Debug, Clone)]
pub struct EmissionRun {
    pub trajectory: StateTrajectory,
    pub correlator: CorrelationGrid,
    pub spectrum: PowerSpectrum,
    /// `κ∫⟨n⟩dt` from the trajectory.
    pub photons: f64,
}

pub fn emission_spectrum(
    model: &SystemModel,
    state: QubitState,
    settings: &SpectrumSettings,
) -> Result<EmissionRun> {
    let rho0 = DensityMatrix::product(model.spec(), state, 0);
    let trajectory = evolve(model, &rho0, settings.dt)?;
    let correlator = correlator_from_trajectory(model, &trajectory, settings.dt_c, settings.f_span_hz)?;
    let spectrum = power_spectrum(&correlator, model.kappa(), &settings.frequencies())?
        .with_metadata(state.label(), model.omega(), 0.0);
    let photons = emitted_photons(&trajectory, model.kappa())?.photons;
    Ok(EmissionRun {
        trajectory,
        correlator,
        spectrum,
        photons,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSeries {
    /// Probe amplitude calibrated at Ω = 0 (rad/s).
    pub probe_amplitude: f64,
    pub n_ref: f64,
    /// `(Ω in rad/s, emitted photons)`.
    pub points: Vec<(f64, f64)>,
}

impl TransmissionSeries {
    /// Whether `N(Ω)` never decreases along the supplied Ω order.
    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Total emitted photons versus Ω at a probe fixed by `N(Ω = 0) = n_ref`.
pub fn transmitted_photons_vs_omega(
    model: &SystemModel,
    omegas: &[f64],
    n_ref: f64,
    state: QubitState,
    dt: f64,
) -> Result<TransmissionSeries> {
    let eps = drive_amplitude_for_photons(model, n_ref, dt)?;
    let probed = model.with_probe_amplitude(C64::new(eps, 0.0))?;
    let points: Result<Vec<(f64, f64)>> = omegas
        .par_iter()
        .map(|&om| {
            let m = probed.with_omega(om)?;
            let rho0 = DensityMatrix::product(m.spec(), state, 0);
            let traj = evolve(&m, &rho0, dt)?;
            Ok((om, emitted_photons(&traj, m.kappa())?.photons))
        })
        .collect();
    Ok(TransmissionSeries {
        probe_amplitude: eps,
        n_ref,
        points: points?,
    })
}
