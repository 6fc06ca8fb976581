//! Physical model of the driven qubit dispersively coupled to a two-port cavity.
//!
//! Everything here lives in the doubly rotating frame: the qubit frame at the
//! (Lamb-shifted) qubit frequency and the cavity/probe frame at the midpoint
//! between the two qubit-state-dependent cavity resonances. Frequencies are
//! angular (rad/s), times are seconds.

use std::f64::consts::PI;

use crate::energetics;
use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation, creation, number, qubit_operators, CMatrix, HilbertSpec, Operator, QubitState,
    C64,
};
use crate::lindblad;

pub const TWO_PI: f64 = 2.0 * PI;

/// Converts a frequency in MHz to rad/s.
pub fn mhz(f: f64) -> f64 {
    TWO_PI * f * 1e6
}

/// Microseconds to seconds.
pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

/// Photon numbers used throughout as the standard probe strengths `N(Ω = 0)`.
pub const STANDARD_PHOTON_NUMBERS: [f64; 4] = [0.2, 0.8, 1.9, 3.4];

/// Timing of the qubit drive, the cavity probe and the recording window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSchedule {
    pub drive_start: f64,
    pub drive_duration: f64,
    pub probe_start: f64,
    pub probe_duration: f64,
    /// Total simulated window `τ`, starting at t = 0.
    pub record_duration: f64,
}

impl Default for PulseSchedule {
    fn default() -> Self {
        Self {
            drive_start: 0.0,
            drive_duration: us(3.0),
            probe_start: 0.0,
            probe_duration: us(2.0),
            record_duration: us(3.0),
        }
    }
}

impl PulseSchedule {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("drive_start", self.drive_start),
            ("drive_duration", self.drive_duration),
            ("probe_start", self.probe_start),
            ("probe_duration", self.probe_duration),
            ("record_duration", self.record_duration),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.record_duration <= 0.0 {
            return Err(Error::Config("record_duration must be > 0".into()));
        }
        let probe_end = self.probe_start + self.probe_duration;
        if self.record_duration < probe_end * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "record_duration {:.3e} s ends before the probe ({probe_end:.3e} s)",
                self.record_duration
            )));
        }
        Ok(())
    }

    pub fn probe_end(&self) -> f64 {
        self.probe_start + self.probe_duration
    }

    pub fn drive_end(&self) -> f64 {
        self.drive_start + self.drive_duration
    }

    pub fn probe_on(&self, t: f64) -> bool {
        t >= self.probe_start && t < self.probe_end()
    }

    pub fn drive_on(&self, t: f64) -> bool {
        t >= self.drive_start && t < self.drive_end()
    }

    /// Times inside `(0, τ)` where the Hamiltonian jumps.
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = [
            self.drive_start,
            self.drive_end(),
            self.probe_start,
            self.probe_end(),
        ]
        .into_iter()
        .filter(|&t| t > 0.0 && t < self.record_duration)
        .collect();
        e.sort_by(|a, b| a.total_cmp(b));
        e.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        e
    }

    /// Same schedule with the qubit drive and probe switched off.
    pub fn quiet(&self) -> Self {
        Self {
            drive_duration: 0.0,
            probe_duration: 0.0,
            ..*self
        }
    }
}

/// Lab-frame reference frequencies. Metadata only; no dynamics use them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabFrame {
    pub qubit_hz: f64,
    pub cavity_g_hz: f64,
    pub cavity_e_hz: f64,
}

impl Default for LabFrame {
    fn default() -> Self {
        Self {
            qubit_hz: 5.0178e9,
            cavity_g_hz: 5.6959e9,
            cavity_e_hz: 5.7039e9,
        }
    }
}

impl LabFrame {
    /// Probe carrier, midway between the two cavity resonances.
    pub fn probe_carrier_hz(&self) -> f64 {
        0.5 * (self.cavity_g_hz + self.cavity_e_hz)
    }
}

/// Raw model parameters. [`SystemModel::new`] validates them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Rabi frequency of the qubit drive (rad/s).
    pub omega: f64,
    /// Dispersive shift (rad/s), enters as `χ a†a σz`.
    pub chi: f64,
    /// Input-port rate κ_A (rad/s).
    pub kappa_a: f64,
    /// Output-port rate κ_B (rad/s).
    pub kappa_b: f64,
    pub t1: f64,
    pub t2_star: f64,
    pub decoherence_enabled: bool,
    /// Intracavity probe amplitude ε (rad/s) during the probe window.
    pub probe_amplitude: C64,
    /// Fock cutoff; `None` selects [`default_n_max`].
    pub n_max: Option<usize>,
    pub schedule: PulseSchedule,
    pub lab: LabFrame,
}

impl Default for ModelParams {
    fn default() -> Self {
        let kappa = mhz(0.9);
        Self {
            omega: mhz(3.0),
            chi: mhz(-4.0),
            kappa_a: 0.1 * kappa,
            kappa_b: 0.9 * kappa,
            t1: us(13.5),
            t2_star: us(2.5),
            decoherence_enabled: true,
            probe_amplitude: C64::new(0.0, 0.0),
            n_max: None,
            schedule: PulseSchedule::default(),
            lab: LabFrame::default(),
        }
    }
}

/// Cutoff heuristic `⌈μ + 4√μ⌉ + 6` with `μ = max(4n̄, 1)`, where n̄ is the
/// steady-state intracavity occupancy of a probe at the midpoint frequency,
/// `|ε|² / (κ²/4 + χ²)`. A square pulse can ring the field up to twice its
/// steady amplitude, hence the factor 4.
pub fn default_n_max(probe_amplitude: C64, kappa: f64, chi: f64) -> usize {
    let nbar = probe_amplitude.norm_sqr() / (0.25 * kappa * kappa + chi * chi);
    let mu = (4.0 * nbar).max(1.0);
    (mu + 4.0 * mu.sqrt()).ceil() as usize + 6
}

/// Validated, immutable system model.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    params: ModelParams,
    spec: HilbertSpec,
}

impl Default for SystemModel {
    fn default() -> Self {
        Self::new(ModelParams::default()).expect("default parameters are valid")
    }
}

impl SystemModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        let p = &params;
        for (name, v) in [
            ("omega", p.omega),
            ("chi", p.chi),
            ("kappa_a", p.kappa_a),
            ("kappa_b", p.kappa_b),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} is not finite")));
            }
        }
        if p.omega < 0.0 {
            return Err(Error::Config(format!("omega must be >= 0, got {}", p.omega)));
        }
        if p.kappa_a < 0.0 || p.kappa_b < 0.0 {
            return Err(Error::Config("port rates must be >= 0".into()));
        }
        if p.kappa_a + p.kappa_b <= 0.0 {
            return Err(Error::Config("total cavity decay rate must be > 0".into()));
        }
        if !(p.probe_amplitude.re.is_finite() && p.probe_amplitude.im.is_finite()) {
            return Err(Error::Config("probe amplitude is not finite".into()));
        }
        if p.decoherence_enabled {
            if !(p.t1 > 0.0 && p.t2_star > 0.0) {
                return Err(Error::Config("T1 and T2* must be > 0".into()));
            }
            let gphi = pure_dephasing_rate(p.t1, p.t2_star);
            if gphi < 0.0 {
                return Err(Error::Config(format!(
                    "T2* = {:.3e} s exceeds 2·T1 = {:.3e} s: pure-dephasing rate γφ = {gphi:.3e} s⁻¹ is negative",
                    p.t2_star,
                    2.0 * p.t1
                )));
            }
        }
        p.schedule.validate()?;
        let kappa = p.kappa_a + p.kappa_b;
        let n_max = p
            .n_max
            .unwrap_or_else(|| default_n_max(p.probe_amplitude, kappa, p.chi));
        let spec = HilbertSpec::new(n_max)?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn spec(&self) -> HilbertSpec {
        self.spec
    }

    pub fn omega(&self) -> f64 {
        self.params.omega
    }

    pub fn chi(&self) -> f64 {
        self.params.chi
    }

    pub fn kappa(&self) -> f64 {
        self.params.kappa_a + self.params.kappa_b
    }

    pub fn kappa_a(&self) -> f64 {
        self.params.kappa_a
    }

    pub fn kappa_b(&self) -> f64 {
        self.params.kappa_b
    }

    pub fn probe_amplitude(&self) -> C64 {
        self.params.probe_amplitude
    }

    pub fn schedule(&self) -> &PulseSchedule {
        &self.params.schedule
    }

    pub fn decoherence_enabled(&self) -> bool {
        self.params.decoherence_enabled
    }

    pub fn with_params(&self, f: impl FnOnce(&mut ModelParams)) -> Result<Self> {
        let mut p = self.params.clone();
        f(&mut p);
        Self::new(p)
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        self.with_params(|p| p.omega = omega)
    }

    /// Replaces the probe amplitude, keeping an explicit cutoff if one was set.
    pub fn with_probe_amplitude(&self, eps: C64) -> Result<Self> {
        self.with_params(|p| p.probe_amplitude = eps)
    }

    pub fn with_decoherence(&self, enabled: bool) -> Result<Self> {
        self.with_params(|p| p.decoherence_enabled = enabled)
    }

    pub fn with_schedule(&self, schedule: PulseSchedule) -> Result<Self> {
        self.with_params(|p| p.schedule = schedule)
    }

    pub fn with_n_max(&self, n_max: usize) -> Result<Self> {
        self.with_params(|p| p.n_max = Some(n_max))
    }

    /// Splits the current total κ into input/output rates with `κ_A = fraction·κ`.
    pub fn with_port_split(&self, input_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&input_fraction) {
            return Err(Error::Config(format!(
                "input-port fraction must lie in [0, 1], got {input_fraction}"
            )));
        }
        let kappa = self.kappa();
        self.with_params(|p| {
            p.kappa_a = input_fraction * kappa;
            p.kappa_b = kappa - p.kappa_a;
        })
    }

    /// Pure-dephasing rate `γφ = 1/T2* − 1/(2T1)`; zero when decoherence is off.
    pub fn pure_dephasing_rate(&self) -> f64 {
        if self.params.decoherence_enabled {
            pure_dephasing_rate(self.params.t1, self.params.t2_star)
        } else {
            0.0
        }
    }

    /// Qubit drive strength active at time `t`.
    pub fn omega_at(&self, t: f64) -> f64 {
        if self.params.schedule.drive_on(t) {
            self.params.omega
        } else {
            0.0
        }
    }

    /// Probe envelope ε(t).
    pub fn probe_at(&self, t: f64) -> C64 {
        if self.params.schedule.probe_on(t) {
            self.params.probe_amplitude
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// Coherent input envelope α_in(t) in waveguide A that produces ε(t).
    ///
    /// With the waveguide coupling `i√(κ_A/2π)∫(a†(ω)c − a(ω)c†)`, the cavity
    /// sees `ċ ⊃ −√κ_A α_in`, while the drive term `ε a† + ε* a` gives
    /// `ċ ⊃ −iε`; hence `α_in = iε/√κ_A` and `|ε| = √κ_A |α_in|`.
    pub fn input_envelope_at(&self, t: f64) -> Result<C64> {
        let ka = self.params.kappa_a;
        if ka <= 0.0 {
            return Err(Error::Config(
                "input envelope undefined for a closed input port (κ_A = 0)".into(),
            ));
        }
        Ok(C64::i() * self.probe_at(t) / ka.sqrt())
    }

    /// Upper bound on the angular rates the integrator has to resolve.
    pub fn fastest_rate(&self) -> f64 {
        self.params
            .omega
            .max(self.params.chi.abs() * self.spec.n_max() as f64)
            .max(self.kappa())
    }
}

pub fn pure_dephasing_rate(t1: f64, t2_star: f64) -> f64 {
    1.0 / t2_star - 1.0 / (2.0 * t1)
}

/// Cached operator set of a model, shared by the Hamiltonian and the integrator.
#[derive(Debug, Clone)]
pub(crate) struct ModelOperators {
    pub a: CMatrix,
    pub adag: CMatrix,
    pub n: CMatrix,
    pub sx: CMatrix,
    pub sz: CMatrix,
    pub sm: CMatrix,
}

impl ModelOperators {
    pub fn new(spec: HilbertSpec) -> Self {
        let q = qubit_operators(spec);
        Self {
            a: annihilation(spec).matrix,
            adag: creation(spec).matrix,
            n: number(spec).matrix,
            sx: q.sx.matrix,
            sz: q.sz.matrix,
            sm: q.sm.matrix,
        }
    }
}

/// `H = (Ω/2)σx + χ a†a σz + ε a† + ε* a` for given instantaneous Ω and ε.
pub(crate) fn hamiltonian_matrix(
    ops: &ModelOperators,
    omega: f64,
    chi: f64,
    eps: C64,
) -> CMatrix {
    let mut h = ops.sx.scale(0.5 * omega);
    h += (&ops.n * &ops.sz).scale(chi);
    if eps.norm() > 0.0 {
        h += &ops.adag * eps + &ops.a * eps.conj();
    }
    h
}

/// Rotating-frame Hamiltonian at time `t`.
pub fn hamiltonian(model: &SystemModel, t: f64) -> Operator {
    let ops = ModelOperators::new(model.spec);
    Operator::new(
        hamiltonian_matrix(&ops, model.omega_at(t), model.chi(), model.probe_at(t)),
        "H",
    )
}

/// System energy operator without the probe: `(Ω/2)σx + χ a†a σz`.
pub fn system_energy_operator(model: &SystemModel) -> Operator {
    let ops = ModelOperators::new(model.spec);
    Operator::new(
        hamiltonian_matrix(&ops, model.omega(), model.chi(), C64::new(0.0, 0.0)),
        "H_S",
    )
}

/// Collapse operators: `√κ a`, and with decoherence `√(1/T1) σ−`, `√(γφ/2) σz`.
pub fn collapse_operators(model: &SystemModel) -> Result<Vec<Operator>> {
    let ops = ModelOperators::new(model.spec);
    let mut out = vec![Operator::new(ops.a.scale(model.kappa().sqrt()), "√κ a")];
    if model.params.decoherence_enabled {
        let p = &model.params;
        let gphi = pure_dephasing_rate(p.t1, p.t2_star);
        if gphi < 0.0 {
            return Err(Error::Config(format!("negative pure-dephasing rate {gphi:.3e}")));
        }
        out.push(Operator::new(ops.sm.scale((1.0 / p.t1).sqrt()), "√Γ1 σ−"));
        if gphi > 0.0 {
            out.push(Operator::new(ops.sz.scale((0.5 * gphi).sqrt()), "√(γφ/2) σz"));
        }
    }
    Ok(out)
}

/// Total photons emitted at Ω = 0 for probe amplitude ε (real, ≥ 0), qubit
/// prepared in `|+⟩` as in the Ramsey calibration.
fn photons_at_zero_drive(model: &SystemModel, eps: f64, dt: f64) -> Result<f64> {
    let m = model.with_params(|p| {
        p.omega = 0.0;
        p.probe_amplitude = C64::new(eps, 0.0);
    })?;
    let rho0 = crate::hilbert::DensityMatrix::product(m.spec(), QubitState::Plus, 0);
    let traj = lindblad::evolve(&m, &rho0, dt)?;
    Ok(energetics::emitted_photons(&traj, m.kappa())?.photons)
}

/// Real probe amplitude ε giving `n_target` emitted photons at Ω = 0.
///
/// The bracket comes from the quadratic law `N ∝ ε²` of the linear driven
/// cavity; the root is then refined by bisection on the full simulation.
pub fn drive_amplitude_for_photons(model: &SystemModel, n_target: f64, dt: f64) -> Result<f64> {
    if !(n_target >= 0.0) || !n_target.is_finite() {
        return Err(Error::Config(format!("N_target must be finite and >= 0, got {n_target}")));
    }
    if n_target == 0.0 {
        return Ok(0.0);
    }
    // Reference run at the steady-state estimate of ε.
    let m = model;
    let window = m.schedule().probe_duration;
    if window <= 0.0 {
        return Err(Error::Config("probe window is empty".into()));
    }
    let denom = 0.25 * m.kappa() * m.kappa() + m.chi() * m.chi();
    let eps_guess = (n_target * denom / (m.kappa() * window)).sqrt();
    let n_guess = photons_at_zero_drive(m, eps_guess, dt)?;
    if !(n_guess > 0.0) {
        return Err(Error::NonConvergence("probe produced no photons".into()));
    }
    let eps_quad = eps_guess * (n_target / n_guess).sqrt();

    let f = |eps: f64| -> Result<f64> { Ok(photons_at_zero_drive(m, eps, dt)? - n_target) };
    let mut lo = 0.9 * eps_quad;
    let mut hi = 1.1 * eps_quad;
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    let mut widen = 0;
    while f_lo > 0.0 || f_hi < 0.0 {
        widen += 1;
        if widen > 20 {
            return Err(Error::NonConvergence(format!(
                "could not bracket N = {n_target} (f_lo = {f_lo:.3e}, f_hi = {f_hi:.3e})"
            )));
        }
        if f_lo > 0.0 {
            lo *= 0.5;
            f_lo = f(lo)?;
        }
        if f_hi < 0.0 {
            hi *= 2.0;
            f_hi = f(hi)?;
        }
    }
    const MAX_ITER: usize = 60;
    const REL_TOL: f64 = 1e-4;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() <= REL_TOL * n_target || (hi - lo) <= 1e-12 * hi {
            return Ok(mid);
        }
        if f_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence(format!(
        "bisection for N = {n_target} exhausted {MAX_ITER} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{hermitian_eigenvalues, max_abs, product_ket};
    use approx::assert_abs_diff_eq;

    fn ideal() -> SystemModel {
        SystemModel::default().with_decoherence(false).unwrap()
    }

    #[test]
    fn default_parameters() {
        let m = SystemModel::default();
        assert_abs_diff_eq!(m.chi() / TWO_PI, -4.0e6, epsilon = 1e-6);
        assert_abs_diff_eq!(m.kappa() / TWO_PI, 0.9e6, epsilon = 1e-6);
        assert_abs_diff_eq!(m.kappa_a() + m.kappa_b(), m.kappa(), epsilon = 1e-6);
        assert_eq!(m.spec().n_max(), 11);
        assert_abs_diff_eq!(m.params().lab.probe_carrier_hz(), 5.6999e9, epsilon = 1.0);
    }

    #[test]
    fn dephasing_rate_from_setup_values() {
        // 1/2.5 µs − 1/(2·13.5 µs) = 4.0e5 − 3.7037e4 = 3.6296e5 s⁻¹
        let m = SystemModel::default();
        assert_abs_diff_eq!(m.pure_dephasing_rate(), 3.62963e5, epsilon = 1.0);
    }

    #[test]
    fn rejects_t2_beyond_twice_t1() {
        let err = SystemModel::new(ModelParams {
            t1: us(10.0),
            t2_star: us(30.0),
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("γφ"), "{err}");
        // with decoherence disabled the same times are irrelevant
        assert!(SystemModel::new(ModelParams {
            t1: us(10.0),
            t2_star: us(30.0),
            decoherence_enabled: false,
            ..Default::default()
        })
        .is_ok());
    }

    #[test]
    fn rejects_bad_schedule() {
        let s = PulseSchedule {
            record_duration: us(1.0),
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn hamiltonian_is_hermitian_and_gated() {
        let m = SystemModel::default()
            .with_probe_amplitude(C64::new(1.0e6, 3.0e5))
            .unwrap();
        for t in [0.0, us(1.0), us(2.5)] {
            let h = hamiltonian(&m, t);
            let scale = max_abs(&h.matrix);
            assert!(max_abs(&(&h.matrix - h.matrix.adjoint())) <= 1e-12 * scale);
        }
        // after the probe window only diagonal-in-Fock terms remain
        let h = hamiltonian(&m, us(2.5));
        let spec = m.spec();
        for q in 0..2 {
            for p in 0..2 {
                for n in 0..spec.cavity_dim() {
                    for k in 0..spec.cavity_dim() {
                        if n != k {
                            assert_eq!(h.matrix[(spec.index(q, n), spec.index(p, k))].norm(), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hamiltonian_diagonal_without_drives() {
        let m = ideal().with_omega(0.0).unwrap();
        let h = hamiltonian(&m, us(1.0));
        let off = &h.matrix - CMatrix::from_diagonal(&h.matrix.diagonal());
        assert_eq!(max_abs(&off), 0.0);
    }

    #[test]
    fn hamiltonian_eigenvalues_small_truncation() {
        // n_max = 1, ε = 0: block n = 0 is (Ω/2)σx → ±Ω/2;
        // block n = 1 is (Ω/2)σx + χσz → ±√(Ω²/4 + χ²).
        let m = ideal().with_n_max(1).unwrap();
        let (om, chi) = (mhz(3.0), mhz(-4.0));
        let ev = hermitian_eigenvalues(&hamiltonian(&m, us(2.5)).matrix);
        let r = (om * om / 4.0 + chi * chi).sqrt();
        let mut expected = vec![-om / 2.0, om / 2.0, -r, r];
        expected.sort_by(|a, b| a.total_cmp(b));
        for (x, y) in ev.iter().zip(&expected) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6 * r);
        }
    }

    #[test]
    fn collapse_operator_sets() {
        let m = SystemModel::default();
        let c = collapse_operators(&m).unwrap();
        assert_eq!(c.len(), 3);
        let c = collapse_operators(&ideal()).unwrap();
        assert_eq!(c.len(), 1);
        // ‖√κ a |g,1⟩‖² = κ
        let spec = m.spec();
        let ket = product_ket(spec, QubitState::Ground, 1);
        let out = &c[0].matrix * ket;
        assert_abs_diff_eq!(out.norm_squared(), mhz(0.9), epsilon = 1e-6);
    }

    #[test]
    fn input_envelope_convention() {
        let m = SystemModel::default()
            .with_probe_amplitude(C64::new(2.0e6, 0.0))
            .unwrap();
        let a_in = m.input_envelope_at(us(1.0)).unwrap();
        assert_abs_diff_eq!((a_in * m.kappa_a().sqrt()).norm(), 2.0e6, epsilon = 1e-6);
        assert_abs_diff_eq!(a_in.re, 0.0);
        assert_eq!(m.input_envelope_at(us(2.5)).unwrap(), C64::new(0.0, 0.0));
        let closed = m.with_port_split(0.0).unwrap();
        assert!(closed.input_envelope_at(us(1.0)).is_err());
    }

    #[test]
    fn zero_photon_target_needs_no_drive() {
        assert_eq!(drive_amplitude_for_photons(&ideal(), 0.0, ns(1.0)).unwrap(), 0.0);
    }
}
