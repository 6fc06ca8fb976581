use ncm_core::model::{drive_amplitude_for_photons, mhz, us, PulseSchedule};
use ncm_core::spectrum::{emission_spectrum, spectrum_moments, SpectrumSettings};
use ncm_core::{QubitState, SystemModel, C64};

fn probed(base: SystemModel, n_ref: f64) -> SystemModel {
    let eps = drive_amplitude_for_photons(&base, n_ref, 1e-9).unwrap();
    base.with_probe_amplitude(C64::new(eps, 0.0)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn spectral_photon_count_matches_occupancy_integral() {
    let m = probed(SystemModel::default().with_omega(mhz(3.0)).unwrap(), 0.8);
    let run = emission_spectrum(&m, QubitState::Plus, &SpectrumSettings::default()).unwrap();
    let n = spectrum_moments(&run.spectrum).unwrap().n_total;
    assert!(rel(n, run.photons) <= 0.02, "{n} vs {}", run.photons);
}

#[test]
fn preparations_are_mirror_images_without_relaxation() {
    // σy ⊗ parity plus complex conjugation maps |+⟩ to |−⟩ and flips ω
    let m = probed(
        SystemModel::default().with_decoherence(false).unwrap().with_omega(mhz(2.0)).unwrap(),
        0.8,
    );
    let s = SpectrumSettings::default();
    let plus = emission_spectrum(&m, QubitState::Plus, &s).unwrap().spectrum;
    let minus = emission_spectrum(&m, QubitState::Minus, &s).unwrap().spectrum;
    let peak = plus.max();
    let n = plus.s.len();
    for k in 0..n {
        assert!((plus.s[k] - minus.s[n - 1 - k]).abs() <= 1e-6 * peak);
    }
}

#[test]
fn finer_coarse_step_leaves_photon_count_unchanged() {
    let m = probed(SystemModel::default().with_omega(mhz(3.0)).unwrap(), 0.2);
    let coarse = emission_spectrum(&m, QubitState::Minus, &SpectrumSettings::default()).unwrap();
    let fine = emission_spectrum(
        &m,
        QubitState::Minus,
        &SpectrumSettings {
            dt_c: 12e-9,
            ..SpectrumSettings::default()
        },
    )
    .unwrap();
    let a = spectrum_moments(&coarse.spectrum).unwrap();
    let b = spectrum_moments(&fine.spectrum).unwrap();
    assert!(rel(a.n_total, b.n_total) <= 1e-2);
    assert!((a.mean_shift_hz - b.mean_shift_hz).abs() <= 0.01e6);
}

#[test]
fn longer_record_adds_no_photons() {
    let m = probed(SystemModel::default().with_omega(mhz(3.0)).unwrap(), 0.2);
    let long = m
        .with_schedule(PulseSchedule {
            record_duration: us(6.0),
            ..*m.schedule()
        })
        .unwrap();
    let s = SpectrumSettings::default();
    let a = emission_spectrum(&m, QubitState::Plus, &s).unwrap();
    let b = emission_spectrum(&long, QubitState::Plus, &s).unwrap();
    assert!(rel(a.photons, b.photons) <= 5e-3, "{} vs {}", a.photons, b.photons);
    let na = spectrum_moments(&a.spectrum).unwrap().n_total;
    let nb = spectrum_moments(&b.spectrum).unwrap().n_total;
    assert!(rel(na, nb) <= 5e-3, "{na} vs {nb}");
}
