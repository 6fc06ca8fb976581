//! Truncated qubit ⊗ cavity Hilbert space.
//!
//! Basis ordering is fixed globally: the joint index of `|q, n⟩` is
//! `q * (n_max + 1) + n`, with `q = 0` for `|g⟩` and `q = 1` for `|e⟩`.
//! The Pauli convention is `σz|e⟩ = +|e⟩`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Hermiticity tolerance for accepted density matrices (max-abs of ρ − ρ†).
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for accepted density matrices.
pub const TRACE_TOL: f64 = 1e-8;
/// Lowest admissible eigenvalue for accepted density matrices.
pub const POSITIVITY_TOL: f64 = 1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertSpec {
    n_max: usize,
}

impl HilbertSpec {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::Config(format!("n_max must be >= 1, got {n_max}")));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn cavity_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        2 * self.cavity_dim()
    }

    pub fn index(&self, qubit: usize, n: usize) -> usize {
        debug_assert!(qubit < 2 && n <= self.n_max);
        qubit * self.cavity_dim() + n
    }
}

/// A labelled square matrix on the joint space (or on a factor space).
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub matrix: CMatrix,
    pub label: String,
}

impl Operator {
    pub fn new(matrix: CMatrix, label: impl Into<String>) -> Self {
        Self {
            matrix,
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(CMatrix::identity(dim, dim), format!("I{dim}"))
    }

    pub fn dagger(&self) -> Self {
        Self::new(self.matrix.adjoint(), format!("({})†", self.label))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.matrix.scale(factor), format!("{factor:e}*{}", self.label))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.matrix - self.matrix.adjoint())) <= tol
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        check_square(&self.matrix, dim)
    }
}

pub(crate) fn check_square(m: &CMatrix, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::Shape {
            expected: dim,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Kronecker product `a ⊗ b`; the left factor is the slow index.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of two operators with the global qubit ⊗ cavity ordering.
pub fn tensor(qubit: &Operator, cavity: &Operator) -> Result<Operator> {
    for m in [&qubit.matrix, &cavity.matrix] {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Shape {
                expected: m.nrows().max(1),
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
    }
    Ok(Operator::new(
        kron(&qubit.matrix, &cavity.matrix),
        format!("{}⊗{}", qubit.label, cavity.label),
    ))
}

fn cavity_lowering(spec: HilbertSpec) -> CMatrix {
    let d = spec.cavity_dim();
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

fn lift_cavity(spec: HilbertSpec, m: CMatrix, label: &str) -> Operator {
    Operator::new(kron(&CMatrix::identity(2, 2), &m), label).with_dim_checked(spec)
}

fn lift_qubit(spec: HilbertSpec, m: CMatrix, label: &str) -> Operator {
    let d = spec.cavity_dim();
    Operator::new(kron(&m, &CMatrix::identity(d, d)), label).with_dim_checked(spec)
}

impl Operator {
    fn with_dim_checked(self, spec: HilbertSpec) -> Self {
        debug_assert_eq!(self.dim(), spec.dim());
        self
    }
}

/// Cavity lowering operator `I₂ ⊗ a`.
pub fn annihilation(spec: HilbertSpec) -> Operator {
    lift_cavity(spec, cavity_lowering(spec), "a")
}

pub fn creation(spec: HilbertSpec) -> Operator {
    lift_cavity(spec, cavity_lowering(spec).adjoint(), "a†")
}

pub fn number(spec: HilbertSpec) -> Operator {
    let d = spec.cavity_dim();
    let n = CMatrix::from_diagonal(&DVector::from_fn(d, |i, _| C64::new(i as f64, 0.0)));
    lift_cavity(spec, n, "a†a")
}

/// Projector on cavity Fock level `n`, lifted to the joint space.
pub fn fock_projector(spec: HilbertSpec, n: usize) -> Operator {
    let d = spec.cavity_dim();
    let mut p = CMatrix::zeros(d, d);
    p[(n, n)] = ONE;
    lift_cavity(spec, p, &format!("|{n}⟩⟨{n}|"))
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    // rows/cols ordered (g, e); σy = i|g⟩⟨e| − i|e⟩⟨g| keeps σx σy = i σz
    let i = C64::new(0.0, 1.0);
    CMatrix::from_row_slice(2, 2, &[ZERO, i, -i, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE])
}

/// `σ+ = |e⟩⟨g|`.
pub fn raising() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
}

/// `σ− = |g⟩⟨e|`.
pub fn lowering() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
}

#[derive(Debug, Clone)]
pub struct QubitOperators {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub sp: Operator,
    pub sm: Operator,
}

/// Pauli operators lifted to the joint space (identity on the cavity).
pub fn qubit_operators(spec: HilbertSpec) -> QubitOperators {
    QubitOperators {
        sx: lift_qubit(spec, pauli_x(), "σx"),
        sy: lift_qubit(spec, pauli_y(), "σy"),
        sz: lift_qubit(spec, pauli_z(), "σz"),
        sp: lift_qubit(spec, raising(), "σ+"),
        sm: lift_qubit(spec, lowering(), "σ−"),
    }
}

/// Named single-qubit preparations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitState {
    Ground,
    Excited,
    Plus,
    Minus,
}

impl QubitState {
    /// Amplitudes on (|g⟩, |e⟩).
    pub fn amplitudes(self) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            QubitState::Ground => [ONE, ZERO],
            QubitState::Excited => [ZERO, ONE],
            QubitState::Plus => [C64::new(h, 0.0), C64::new(h, 0.0)],
            QubitState::Minus => [C64::new(h, 0.0), C64::new(-h, 0.0)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QubitState::Ground => "g",
            QubitState::Excited => "e",
            QubitState::Plus => "plus",
            QubitState::Minus => "minus",
        }
    }

    /// Sign used when summing energy changes over the `|±⟩` preparations.
    pub fn energy_sign(self) -> f64 {
        match self {
            QubitState::Minus | QubitState::Ground => -1.0,
            QubitState::Plus | QubitState::Excited => 1.0,
        }
    }
}

impl std::str::FromStr for QubitState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g" | "ground" => Ok(QubitState::Ground),
            "e" | "excited" => Ok(QubitState::Excited),
            "+" | "plus" => Ok(QubitState::Plus),
            "-" | "minus" => Ok(QubitState::Minus),
            other => Err(Error::Config(format!("unknown qubit preparation '{other}'"))),
        }
    }
}

/// Pure product ket `|q⟩ ⊗ |n⟩`.
pub fn product_ket(spec: HilbertSpec, qubit: QubitState, n: usize) -> DVector<C64> {
    let mut ket = DVector::zeros(spec.dim());
    for (q, amp) in qubit.amplitudes().into_iter().enumerate() {
        ket[spec.index(q, n)] = amp;
    }
    ket
}

/// Density matrix with a time tag. Construction validates the state invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    time: f64,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix, time: f64) -> Result<Self> {
        let rho = Self { matrix, time };
        rho.validate(HERMITIAN_TOL, TRACE_TOL, POSITIVITY_TOL)?;
        Ok(rho)
    }

    /// Wraps a matrix without checks; callers validate separately.
    pub(crate) fn new_unchecked(matrix: CMatrix, time: f64) -> Self {
        Self { matrix, time }
    }

    pub fn from_ket(ket: &DVector<C64>, time: f64) -> Result<Self> {
        let norm = ket.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero or non-finite ket".into()));
        }
        let k = ket.unscale(norm);
        Self::new(&k * k.adjoint(), time)
    }

    pub fn product(spec: HilbertSpec, qubit: QubitState, n: usize) -> Self {
        let ket = product_ket(spec, qubit, n);
        Self::new_unchecked(&ket * ket.adjoint(), 0.0)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        op.check_dim(self.dim())?;
        Ok(trace_product(&op.matrix, &self.matrix))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.matrix)
    }

    /// Checks Hermiticity, trace and positivity against the given tolerances.
    pub fn validate(&self, herm_tol: f64, trace_tol: f64, pos_tol: f64) -> Result<()> {
        if !self.matrix.is_square() {
            return Err(Error::Shape {
                expected: self.matrix.nrows(),
                rows: self.matrix.nrows(),
                cols: self.matrix.ncols(),
            });
        }
        if self.matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = max_abs(&(&self.matrix - self.matrix.adjoint()));
        if herm > herm_tol {
            return Err(Error::InvalidState(format!(
                "not Hermitian (‖ρ−ρ†‖∞ = {herm:.3e})"
            )));
        }
        let tr = self.matrix.trace();
        if (tr - ONE).norm() > trace_tol {
            return Err(Error::InvalidState(format!(
                "trace {:.12} differs from 1",
                tr.re
            )));
        }
        if !is_positive_within(&self.matrix, pos_tol) {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue below −{pos_tol:e} (λ_min = {:.3e})",
                self.min_eigenvalue()
            )));
        }
        Ok(())
    }
}

/// `Tr[A B]` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let herm = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// True when the Hermitian part of `m` has no eigenvalue below `−tol`.
///
/// Attempts a Cholesky factorization of `m + tol·I` with an explicit pivot
/// check, which is much cheaper than a full eigendecomposition and is what the
/// integrator calls on every step.
pub fn is_positive_within(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    let mut l = (m + m.adjoint()).scale(0.5);
    for i in 0..n {
        l[(i, i)] += C64::new(tol, 0.0);
    }
    if cholesky_in_place(&mut l) {
        return true;
    }
    // a pivot can vanish on exactly singular matrices; fall back to the spectrum
    min_hermitian_eigenvalue(m) >= -tol
}

fn cholesky_in_place(a: &mut CMatrix) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= a[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)].conj();
            }
            a[(i, j)] = v / d;
        }
    }
    true
}

/// Reduced qubit state `Tr_cavity ρ` as a 2×2 density matrix.
pub fn partial_trace_qubit(rho: &DensityMatrix, spec: HilbertSpec) -> Result<DensityMatrix> {
    check_square(rho.matrix(), spec.dim())?;
    let d = spec.cavity_dim();
    let mut out = CMatrix::zeros(2, 2);
    for q in 0..2 {
        for p in 0..2 {
            let mut acc = ZERO;
            for n in 0..d {
                acc += rho.matrix[(q * d + n, p * d + n)];
            }
            out[(q, p)] = acc;
        }
    }
    Ok(DensityMatrix::new_unchecked(out, rho.time))
}

/// Reduced cavity state `Tr_qubit ρ`.
pub fn partial_trace_cavity(rho: &CMatrix, spec: HilbertSpec) -> CMatrix {
    let d = spec.cavity_dim();
    let mut out = CMatrix::zeros(d, d);
    for q in 0..2 {
        out += rho.view((q * d, q * d), (d, d));
    }
    out
}

/// Bloch vector (x, y, z) of a 2×2 qubit state.
pub fn bloch_vector(qubit: &DensityMatrix) -> [f64; 3] {
    let m = qubit.matrix();
    // ρ_ge = (x + i y) / 2 with rows ordered (g, e); see `pauli_y`.
    let rho_ge = m[(0, 1)];
    let z = (m[(1, 1)] - m[(0, 0)]).re;
    [2.0 * rho_ge.re, 2.0 * rho_ge.im, z]
}

/// `2|ρ_{|g⟩⟨e|}|`, the remaining transverse coherence.
pub fn coherence_ge(qubit: &DensityMatrix) -> f64 {
    2.0 * qubit.matrix()[(0, 1)].norm()
}
