//! State invariants on randomized scenarios.

use ncm_core::hilbert::{max_abs, QubitState};
use ncm_core::lindblad::{evolve, MAX_PHASE_PER_STEP, NEGATIVITY_TOL, TRACE_DRIFT_TOL};
use ncm_core::model::{mhz, ModelParams};
use ncm_core::{DensityMatrix, SystemModel, C64};
use proptest::prelude::*;

/// Largest step of the form `1 ns / k` within half the phase-per-step limit.
/// At twice the nominal probe strength RK4 needs the margin to keep pure
/// states inside the negativity tolerance.
fn step_for(model: &SystemModel) -> f64 {
    let k = (model.fastest_rate() * 1e-9 / (0.5 * MAX_PHASE_PER_STEP)).ceil().max(1.0);
    1e-9 / k
}

fn state_strategy() -> impl Strategy<Value = QubitState> {
    prop_oneof![
        Just(QubitState::Ground),
        Just(QubitState::Excited),
        Just(QubitState::Plus),
        Just(QubitState::Minus),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn evolution_preserves_physical_states(
        omega in 0.0f64..14.0,
        chi in prop_oneof![-8.0f64..-2.0, 2.0f64..8.0],
        eps_re in -2.6e7f64..2.6e7,
        eps_im in -2.6e7f64..2.6e7,
        decoherence in any::<bool>(),
        state in state_strategy(),
    ) {
        let model = SystemModel::new(ModelParams {
            omega: mhz(omega),
            chi: mhz(chi),
            decoherence_enabled: decoherence,
            probe_amplitude: C64::new(eps_re, eps_im),
            ..ModelParams::default()
        }).unwrap();
        let traj = evolve(&model, &DensityMatrix::product(model.spec(), state, 0), step_for(&model)).unwrap();
        for k in (0..traj.len()).step_by(100).chain([traj.len() - 1]) {
            let rho = traj.state(k);
            prop_assert!((rho.trace().re - 1.0).abs() <= TRACE_DRIFT_TOL);
            prop_assert!(rho.trace().im.abs() <= TRACE_DRIFT_TOL);
            prop_assert!(max_abs(&(rho.matrix() - rho.matrix().adjoint())) <= 1e-10);
            prop_assert!(rho.min_eigenvalue() >= -NEGATIVITY_TOL);
        }
    }
}
