//! Two-time correlator `c(t1, t2) = ⟨a†(t1) a(t2)⟩` by the quantum regression
//! theorem.
//!
//! For `t1 ≥ t2` the seed `a ρ(t2)` is propagated with the same generator as the
//! state and `c(t1, t2) = Tr[a† seed(t1)]`; the lower triangle follows from
//! `c(t2, t1) = c(t1, t2)*`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{annihilation, CMatrix, DensityMatrix, HilbertSpec, C64};
use crate::lindblad::{evolve, propagate_sampled, Propagator, StateTrajectory};
use crate::model::SystemModel;

/// Default coarse correlator step.
pub const DEFAULT_DT_C: f64 = 25e-9;

#[derive(Debug, Clone)]
pub struct CorrelationGrid {
    dt_c: f64,
    values: CMatrix,
}

impl CorrelationGrid {
    pub fn new(dt_c: f64, values: CMatrix) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() < 2 {
            return Err(Error::Shape {
                expected: values.nrows(),
                rows: values.nrows(),
                cols: values.ncols(),
            });
        }
        if !(dt_c > 0.0) {
            return Err(Error::Config(format!("dt_c must be > 0, got {dt_c}")));
        }
        Ok(Self { dt_c, values })
    }

    pub fn dt_c(&self) -> f64 {
        self.dt_c
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt_c
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn duration(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// `c[i][j] = c(t_i, t_j)`.
    pub fn values(&self) -> &CMatrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[(i, j)]
    }

    /// Equal-time values `c(t, t) = ⟨n(t)⟩`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.values[(i, i)].re).collect()
    }

    /// Largest `|c(t1,t2) − c(t2,t1)*|` and most negative diagonal entry.
    pub fn symmetry_defects(&self) -> (f64, f64) {
        let n = self.len();
        let mut herm: f64 = 0.0;
        let mut min_diag = f64::INFINITY;
        for i in 0..n {
            min_diag = min_diag.min(self.values[(i, i)].re);
            for j in 0..n {
                herm = herm.max((self.values[(i, j)] - self.values[(j, i)].conj()).norm());
            }
        }
        (herm, min_diag)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t1_s,t2_s,re_c,im_c")?;
        for i in 0..self.len() {
            for j in 0..self.len() {
                let c = self.values[(i, j)];
                writeln!(
                    w,
                    "{:.6e},{:.6e},{:.12e},{:.12e}",
                    self.time(i),
                    self.time(j),
                    c.re,
                    c.im
                )?;
            }
        }
        Ok(())
    }
}

/// Coarse stride `dt_c / dt`, checking grid compatibility and the Nyquist
/// condition `dt_c ≤ 1 / (2 f_span)`.
pub fn coarse_stride(dt: f64, dt_c: f64, f_span_hz: f64) -> Result<usize> {
    if !(dt_c >= dt * (1.0 - 1e-9)) {
        return Err(Error::Config(format!(
            "dt_c = {dt_c:.3e} s is finer than dt = {dt:.3e} s"
        )));
    }
    let ratio = dt_c / dt;
    let stride = ratio.round();
    if (ratio - stride).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "dt_c = {dt_c:.3e} s is not a multiple of dt = {dt:.3e} s"
        )));
    }
    check_nyquist(dt_c, f_span_hz)?;
    Ok(stride as usize)
}

pub fn check_nyquist(dt_c: f64, f_span_hz: f64) -> Result<()> {
    if dt_c * 2.0 * f_span_hz > 1.0 + 1e-9 {
        return Err(Error::Nyquist {
            dt: dt_c,
            f_span: f_span_hz,
        });
    }
    Ok(())
}

/// `Tr[a† x]` for column-major `x`, using `(a†)_{r,c} = √c` on `c = r+1` within
/// each qubit block.
fn trace_adag(x: &[C64], spec: HilbertSpec) -> C64 {
    let d = spec.dim();
    let nmax = spec.n_max();
    let mut acc = C64::new(0.0, 0.0);
    for q in 0..2 {
        for n in 1..=nmax {
            let hi = spec.index(q, n);
            let lo = spec.index(q, n - 1);
            // (a†)_{hi,lo} = √n; Tr[a† x] = Σ (a†)_{hi,lo} x_{lo,hi}
            acc += x[hi * d + lo] * (n as f64).sqrt();
        }
    }
    acc
}

/// Two-time correlator over `[0, τ]` on the coarse grid `dt_c`.
///
/// `f_span_hz` is the half-width of the frequency axis the grid will feed; the
/// Nyquist condition is enforced against it. Seed propagations are independent
/// and run in parallel; the result does not depend on scheduling.
pub fn two_time_correlator(
    model: &SystemModel,
    rho0: &DensityMatrix,
    dt: f64,
    dt_c: f64,
    f_span_hz: f64,
) -> Result<CorrelationGrid> {
    let traj = evolve(model, rho0, dt)?;
    correlator_from_trajectory(model, &traj, dt_c, f_span_hz)
}

/// As [`two_time_correlator`], reusing an existing trajectory of `model`.
pub fn correlator_from_trajectory(
    model: &SystemModel,
    traj: &StateTrajectory,
    dt_c: f64,
    f_span_hz: f64,
) -> Result<CorrelationGrid> {
    let dt = traj.dt();
    let stride = coarse_stride(dt, dt_c, f_span_hz)?;
    let grid = traj.grid();
    if grid.n_steps % stride != 0 {
        return Err(Error::Config(format!(
            "record duration {:.6e} s is not a multiple of dt_c = {dt_c:.3e} s",
            grid.duration()
        )));
    }
    let n_c = grid.n_steps / stride + 1;
    let spec = model.spec();
    let a = annihilation(spec).matrix;

    let columns: Vec<Result<Vec<C64>>> = (0..n_c)
        .into_par_iter()
        .map(|j| {
            let k_start = j * stride;
            let seed: CMatrix = &a * traj.state(k_start).matrix();
            let mut prop = Propagator::new(model, dt)?;
            let mut col = vec![C64::new(0.0, 0.0); n_c];
            propagate_sampled(&mut prop, seed.as_slice(), k_start, stride, |k, x| {
                col[k / stride] = trace_adag(x, spec);
            })?;
            Ok(col)
        })
        .collect();

    let mut values = CMatrix::zeros(n_c, n_c);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for i in j..n_c {
            values[(i, j)] = col[i];
            values[(j, i)] = col[i].conj();
        }
        // equal-time value is ⟨n⟩, real up to rounding
        values[(j, j)] = C64::new(col[j].re, 0.0);
    }
    CorrelationGrid::new(dt_c, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{hermitian_eigenvalues, number, QubitState};
    use crate::lindblad::{expectation_series, liouvillian_from_parts};
    use crate::model::{collapse_operators, hamiltonian, mhz};
    use approx::assert_abs_diff_eq;

    fn probed(n_max: usize, n_ref_eps_mhz: f64) -> SystemModel {
        SystemModel::default()
            .with_n_max(n_max)
            .unwrap()
            .with_probe_amplitude(C64::new(mhz(n_ref_eps_mhz), 0.0))
            .unwrap()
    }

    #[test]
    fn trace_adag_matches_dense_product() {
        let spec = HilbertSpec::new(3).unwrap();
        let d = spec.dim();
        let x = CMatrix::from_fn(d, d, |i, j| C64::new(i as f64 - 0.3 * j as f64, (i * j) as f64 * 0.1));
        let want = crate::hilbert::trace_product(&crate::hilbert::creation(spec).matrix, &x);
        assert_abs_diff_eq!((trace_adag(x.as_slice(), spec) - want).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nyquist_and_grid_checks() {
        assert!(coarse_stride(1e-9, 25e-9, 10e6).is_ok());
        assert!(coarse_stride(1e-9, 25e-9, 20e6).is_ok());
        assert!(matches!(coarse_stride(1e-9, 30e-9, 20e6), Err(Error::Nyquist { .. })));
        assert!(coarse_stride(1e-9, 25.5e-9, 10e6).is_err());
        assert!(coarse_stride(2e-9, 1e-9, 10e6).is_err());
    }

    #[test]
    fn vacuum_gives_zero_grid() {
        let m = SystemModel::default().with_n_max(2).unwrap();
        let rho0 = DensityMatrix::product(m.spec(), QubitState::Plus, 0);
        let g = two_time_correlator(&m, &rho0, 1e-9, DEFAULT_DT_C, 10e6).unwrap();
        assert_eq!(g.len(), 121);
        assert_eq!(crate::hilbert::max_abs(g.values()), 0.0);
    }

    #[test]
    fn diagonal_is_photon_number() {
        let m = probed(4, 1.0);
        let rho0 = DensityMatrix::product(m.spec(), QubitState::Minus, 0);
        let traj = evolve(&m, &rho0, 1e-9).unwrap();
        let g = correlator_from_trajectory(&m, &traj, DEFAULT_DT_C, 10e6).unwrap();
        let n = expectation_series(&traj, &number(m.spec())).unwrap();
        for (i, d) in g.diagonal().iter().enumerate() {
            assert_abs_diff_eq!(*d, n[i * 25], epsilon = 1e-8);
        }
        let (herm, min_diag) = g.symmetry_defects();
        assert!(herm <= 1e-8);
        assert!(min_diag >= -1e-8);
    }

    #[test]
    fn kernel_is_positive_semidefinite() {
        let m = probed(4, 1.0).with_omega(mhz(3.0)).unwrap();
        let rho0 = DensityMatrix::product(m.spec(), QubitState::Plus, 0);
        let g = two_time_correlator(&m, &rho0, 1e-9, DEFAULT_DT_C, 10e6).unwrap();
        let ev = hermitian_eigenvalues(g.values());
        let max_diag = g.diagonal().iter().cloned().fold(0.0, f64::max);
        assert!(ev[0] >= -1e-6 * max_diag, "λ_min = {}", ev[0]);
    }

    #[test]
    fn matches_matrix_exponential_propagation() {
        // n_max = 2: 36×36 generator per segment, propagated exactly over each
        // coarse step by its matrix exponential.
        let m = probed(2, 0.15).with_omega(mhz(3.0)).unwrap();
        let spec = m.spec();
        let d = spec.dim();
        let dt_c = DEFAULT_DT_C;
        let rho0 = DensityMatrix::product(spec, QubitState::Minus, 0);
        let g = two_time_correlator(&m, &rho0, 1e-9, dt_c, 10e6).unwrap();

        let jumps: Vec<CMatrix> = collapse_operators(&m).unwrap().into_iter().map(|o| o.matrix).collect();
        let step_map = |t_mid: f64| -> CMatrix {
            let h = hamiltonian(&m, t_mid).matrix;
            (liouvillian_from_parts(&h, &jumps) * C64::new(dt_c, 0.0)).exp()
        };
        let n_c = g.len();
        let maps: Vec<CMatrix> = (0..n_c - 1).map(|k| step_map((k as f64 + 0.5) * dt_c)).collect();
        let vec_of = |x: &CMatrix| nalgebra::DVector::from_column_slice(x.as_slice());
        let a = annihilation(spec).matrix;
        let adag = a.adjoint();

        let mut rho = vec_of(rho0.matrix());
        for j in 0..n_c {
            let rho_m = CMatrix::from_column_slice(d, d, rho.as_slice());
            let mut seed = vec_of(&(&a * &rho_m));
            for i in j..n_c {
                let s = CMatrix::from_column_slice(d, d, seed.as_slice());
                let c = crate::hilbert::trace_product(&adag, &s);
                assert!((g.get(i, j) - c).norm() <= 1e-6, "({i},{j}): {} vs {c}", g.get(i, j));
                if i + 1 < n_c {
                    seed = &maps[i] * seed;
                }
            }
            if j + 1 < n_c {
                rho = &maps[j] * rho;
            }
        }
    }
}
