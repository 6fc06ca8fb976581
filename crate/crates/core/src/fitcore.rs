//! Deterministic Levenberg–Marquardt least squares and the fit forms used by
//! the calibration and spectrum code.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
/// Relative step tolerance, measured in the Marquardt-scaled norm.
pub const STEP_TOL: f64 = 1e-10;
/// Largest cosine between the residual and any Jacobian column at a converged point.
pub const GRADIENT_TOL: f64 = 1e-6;

/// A scalar model `y = f(x; p)`.
pub trait FitModel {
    fn param_names(&self) -> Vec<String>;

    fn value(&self, x: f64, p: &[f64]) -> f64;

    /// Writes `∂f/∂p` into `out`; returns false when no analytic form is
    /// provided, in which case central differences are used.
    fn gradient(&self, _x: f64, _p: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn n_params(&self) -> usize {
        self.param_names().len()
    }
}

/// Central-difference gradient of a model at one abscissa.
pub fn finite_difference_gradient<M: FitModel + ?Sized>(model: &M, x: f64, p: &[f64]) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let h = 1e-6 * p[i].abs().max(1e-3);
            q[i] = p[i] + h;
            let up = model.value(x, &q);
            q[i] = p[i] - h;
            let dn = model.value(x, &q);
            q[i] = p[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn model_gradient<M: FitModel + ?Sized>(model: &M, x: f64, p: &[f64], out: &mut [f64]) {
    if !model.gradient(x, p, out) {
        out.copy_from_slice(&finite_difference_gradient(model, x, p));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// Linearized covariance `s²(JᵀJ)⁻¹`; `None` without spare degrees of freedom.
    pub covariance: Option<DMatrix<f64>>,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest residual/column cosine at the returned point.
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn std_error(&self, i: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[(i, i)].max(0.0).sqrt())
    }
}

fn residuals<M: FitModel + ?Sized>(model: &M, x: &[f64], y: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(y).map(|(&xi, &yi)| yi - model.value(xi, p)))
}

fn jacobian<M: FitModel + ?Sized>(model: &M, x: &[f64], p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    let mut j = DMatrix::zeros(x.len(), n);
    let mut g = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        model_gradient(model, xi, p, &mut g);
        for k in 0..n {
            j[(i, k)] = g[k];
        }
    }
    j
}

fn gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let g = j.transpose() * r;
    (0..j.ncols())
        .map(|k| {
            let cn = j.column(k).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[k].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Damped Gauss–Newton (Levenberg–Marquardt) fit of `y ≈ f(x; p)` from `init`.
///
/// Non-convergence within [`MAX_ITERATIONS`] is reported through
/// `converged = false`, not as an error.
pub fn least_squares<M: FitModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    init: &[f64],
) -> Result<FitResult> {
    let n = model.n_params();
    if init.len() != n {
        return Err(Error::Fit(format!("expected {n} initial parameters, got {}", init.len())));
    }
    if x.len() != y.len() {
        return Err(Error::Fit(format!("{} abscissae but {} ordinates", x.len(), y.len())));
    }
    if x.len() < n {
        return Err(Error::InsufficientData { needed: n, got: x.len() });
    }
    if init.iter().chain(x).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input or initial parameter".into()));
    }

    let mut p = DVector::from_column_slice(init);
    let mut r = residuals(model, x, y, p.as_slice());
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("model is not finite at the initial parameters".into()));
    }
    let mut cost = r.norm_squared();
    let y_scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut j = jacobian(model, x, p.as_slice());

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost <= 1e-30 * y_scale || gradient_cosine(&j, &r) <= 1e-14 {
            converged = true;
            break;
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let scale: Vec<f64> = (0..n).map(|k| jtj[(k, k)].max(1e-300)).collect();

        let mut accepted = None;
        let mut factorized = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * scale[k];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            factorized = true;
            let delta = chol.solve(&g);
            if delta.iter().any(|v| !v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let p_try = &p + &delta;
            let r_try = residuals(model, x, y, p_try.as_slice());
            let cost_try = r_try.norm_squared();
            if cost_try.is_finite() && cost_try <= cost {
                accepted = Some((delta, p_try, r_try, cost_try));
                lambda = (lambda / 3.0).max(1e-15);
                break;
            }
            lambda *= 4.0;
        }
        if !factorized {
            return Err(Error::Fit("normal equations singular even with damping".into()));
        }
        let Some((delta, p_new, r_new, cost_new)) = accepted else {
            // no downhill step at any damping: stationary to working precision
            converged = gradient_cosine(&j, &r) <= GRADIENT_TOL;
            break;
        };
        let step = (0..n).map(|k| (delta[k] * scale[k].sqrt()).powi(2)).sum::<f64>().sqrt();
        let size = (0..n).map(|k| (p_new[k] * scale[k].sqrt()).powi(2)).sum::<f64>().sqrt();
        let small_step = step <= STEP_TOL * (size + STEP_TOL);
        let small_gain = cost - cost_new <= 1e-15 * cost;
        p = p_new;
        r = r_new;
        cost = cost_new;
        j = jacobian(model, x, p.as_slice());
        if small_step || small_gain {
            converged = gradient_cosine(&j, &r) <= GRADIENT_TOL || cost <= 1e-30 * y_scale;
            break;
        }
    }

    let gradient_norm = gradient_cosine(&j, &r);
    if converged && gradient_norm > GRADIENT_TOL && cost > 1e-30 * y_scale {
        converged = false;
    }
    let m = x.len();
    let covariance = if m > n {
        (j.transpose() * &j)
            .try_inverse()
            .map(|inv| inv * (cost / (m - n) as f64))
    } else {
        None
    };
    Ok(FitResult {
        names: model.param_names(),
        params: p.iter().copied().collect(),
        covariance,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        gradient_norm,
    })
}

/// `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Line;

impl FitModel for Line {
    fn param_names(&self) -> Vec<String> {
        vec!["slope".into(), "intercept".into()]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x + p[1]
    }

    fn gradient(&self, x: f64, _p: &[f64], out: &mut [f64]) -> bool {
        out[0] = x;
        out[1] = 1.0;
        true
    }
}

/// `y = A cos(2π f x + φ) + c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sinusoid;

impl FitModel for Sinusoid {
    fn param_names(&self) -> Vec<String> {
        vec!["amplitude".into(), "frequency".into(), "phase".into(), "offset".into()]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (2.0 * PI * p[1] * x + p[2]).cos() + p[3]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        let arg = 2.0 * PI * p[1] * x + p[2];
        let (s, c) = arg.sin_cos();
        out[0] = c;
        out[1] = -p[0] * s * 2.0 * PI * x;
        out[2] = -p[0] * s;
        out[3] = 1.0;
        true
    }
}

/// `y = A cos(2π f x + φ) + c` at a known frequency `f`.
#[derive(Debug, Clone, Copy)]
pub struct FixedFrequencySinusoid {
    pub frequency: f64,
}

impl FitModel for FixedFrequencySinusoid {
    fn param_names(&self) -> Vec<String> {
        vec!["amplitude".into(), "phase".into(), "offset".into()]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (2.0 * PI * self.frequency * x + p[1]).cos() + p[2]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        let (s, c) = (2.0 * PI * self.frequency * x + p[1]).sin_cos();
        out[0] = c;
        out[1] = -p[0] * s;
        out[2] = 1.0;
        true
    }
}

/// Zero-centred Gaussian `y = h·exp(−x²/(2σ²))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CenteredGaussian;

impl FitModel for CenteredGaussian {
    fn param_names(&self) -> Vec<String> {
        vec!["height".into(), "sigma".into()]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-x * x / (2.0 * p[1] * p[1])).exp()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        let e = (-x * x / (2.0 * p[1] * p[1])).exp();
        out[0] = e;
        out[1] = p[0] * e * x * x / p[1].powi(3);
        true
    }
}

/// `y = A·exp(−x/τ) + c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl FitModel for Exponential {
    fn param_names(&self) -> Vec<String> {
        vec!["amplitude".into(), "tau".into(), "offset".into()]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-x / p[1]).exp() + p[2]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        let e = (-x / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * x / (p[1] * p[1]);
        out[2] = 1.0;
        true
    }
}

/// Sum of area-normalized Lorentzians, parameters `[center, half_width, area]`
/// per peak: `y = Σ (A/π)·γ/((x − x0)² + γ²)`.
#[derive(Debug, Clone, Copy)]
pub struct LorentzianSum {
    pub peaks: usize,
}

impl FitModel for LorentzianSum {
    fn param_names(&self) -> Vec<String> {
        (0..self.peaks)
            .flat_map(|k| [format!("center{k}"), format!("half_width{k}"), format!("area{k}")])
            .collect()
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p.chunks_exact(3)
            .map(|q| {
                let (x0, g, a) = (q[0], q[1], q[2]);
                a / PI * g / ((x - x0).powi(2) + g * g)
            })
            .sum()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) -> bool {
        for (q, o) in p.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
            let (x0, g, a) = (q[0], q[1], q[2]);
            let u = x - x0;
            let den = u * u + g * g;
            o[0] = a / PI * 2.0 * g * u / (den * den);
            o[1] = a / PI * (u * u - g * g) / (den * den);
            o[2] = g / (PI * den);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidFit {
    pub amplitude: f64,
    /// Hz when `t` is in seconds; zero when `degenerate`.
    pub frequency: f64,
    /// Wrapped to `(−π, π]`.
    pub phase: f64,
    pub offset: f64,
    /// Input carried no oscillation; frequency and phase are unidentifiable.
    pub degenerate: bool,
    pub result: Option<FitResult>,
}

fn wrap_phase(phi: f64) -> f64 {
    let mut w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

fn flat_signal(y: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * mean.abs().max(1.0) {
        Some(mean)
    } else {
        None
    }
}

/// Sinusoid fit with the frequency seeded by a zero-padded periodogram.
pub fn fit_sinusoid(t: &[f64], y: &[f64]) -> Result<SinusoidFit> {
    const NEEDED: usize = 5;
    if t.len() != y.len() {
        return Err(Error::Fit(format!("{} abscissae but {} ordinates", t.len(), y.len())));
    }
    if t.len() < NEEDED {
        return Err(Error::InsufficientData { needed: NEEDED, got: t.len() });
    }
    if let Some(mean) = flat_signal(y) {
        return Ok(SinusoidFit {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            offset: mean,
            degenerate: true,
            result: None,
        });
    }
    let m = t.len() as f64;
    let mean = y.iter().sum::<f64>() / m;
    let t0 = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let t1 = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(Error::Fit("abscissae do not span an interval".into()));
    }
    let f_max = 0.5 * (m - 1.0) / span;
    let df = 1.0 / (16.0 * span);
    let n_f = (f_max / df).ceil() as usize;
    let transform = |f: f64| -> (f64, f64) {
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let (s, c) = (2.0 * PI * f * (ti - t0)).sin_cos();
            re += (yi - mean) * c;
            im -= (yi - mean) * s;
        }
        (re, im)
    };
    let mut best = (df, 0.0);
    for k in 1..=n_f {
        let f = k as f64 * df;
        let (re, im) = transform(f);
        let pw = re * re + im * im;
        if pw > best.1 {
            best = (f, pw);
        }
    }
    let f0 = best.0;
    let (re, im) = transform(f0);
    let a0 = 2.0 * (re * re + im * im).sqrt() / m;
    // phase at t0 converted to phase at t = 0
    let phi0 = im.atan2(re) - 2.0 * PI * f0 * t0;
    let fit = least_squares(&Sinusoid, t, y, &[a0, f0, phi0, mean])?;
    let mut amp = fit.params[0];
    let mut phase = fit.params[2];
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    Ok(SinusoidFit {
        amplitude: amp,
        frequency: fit.params[1].abs(),
        phase: wrap_phase(if fit.params[1] < 0.0 { -phase } else { phase }),
        offset: fit.params[3],
        degenerate: false,
        result: Some(fit),
    })
}

/// Sinusoid fit at a known frequency (e.g. a Ramsey fringe versus phase, with
/// `frequency = 1/2π` per radian).
pub fn fit_fixed_frequency_sinusoid(x: &[f64], y: &[f64], frequency: f64) -> Result<SinusoidFit> {
    const NEEDED: usize = 4;
    if x.len() != y.len() {
        return Err(Error::Fit(format!("{} abscissae but {} ordinates", x.len(), y.len())));
    }
    if x.len() < NEEDED {
        return Err(Error::InsufficientData { needed: NEEDED, got: x.len() });
    }
    if let Some(mean) = flat_signal(y) {
        return Ok(SinusoidFit {
            amplitude: 0.0,
            frequency,
            phase: 0.0,
            offset: mean,
            degenerate: true,
            result: None,
        });
    }
    let m = x.len() as f64;
    let mean = y.iter().sum::<f64>() / m;
    let (mut re, mut im) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (2.0 * PI * frequency * xi).sin_cos();
        re += (yi - mean) * c;
        im -= (yi - mean) * s;
    }
    let a0 = (2.0 * (re * re + im * im).sqrt() / m).max(1e-12);
    let model = FixedFrequencySinusoid { frequency };
    let fit = least_squares(&model, x, y, &[a0, im.atan2(re), mean])?;
    let (mut amp, mut phase) = (fit.params[0], fit.params[1]);
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    Ok(SinusoidFit {
        amplitude: amp,
        frequency,
        phase: wrap_phase(phase),
        offset: fit.params[2],
        degenerate: false,
        result: Some(fit),
    })
}
