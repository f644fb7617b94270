//! Distribution of `v = xᵀ A x` for Gaussian `x ~ N(μ, Σ)` and `A ≻ 0`.
//!
//! The form is first reduced to `v = Σᵢ λᵢ (uᵢ + bᵢ)²` with `u ~ N(0, I)`,
//! where `λᵢ` are the eigenvalues of `Σ^{1/2} A Σ^{1/2}` and
//! `b = Pᵀ Σ^{-1/2} μ` ([`standardize`]). The CDF is then the power series
//!
//! ```text
//! F(v) = Σₖ (-1)ᵏ cₖ v^{n/2+k} / Γ(n/2 + k + 1)
//! c₀ = exp(-½ Σ bᵢ²) Πᵢ (2λᵢ)^{-1/2}
//! cₖ = (1/k) Σ_{i<k} d_{k-i} cᵢ,   dₖ = ½ Σᵢ (1 - k bᵢ²)(2λᵢ)^{-k}
//! ```
//!
//! The series alternates, and for large offsets `bᵢ` or large
//! `v / (2 λ_min)` its terms and coefficients are far larger than the
//! result. The rounding error is tracked by running the same recurrence on
//! absolute values. When it grows too large the CDF is evaluated instead as
//! the chi-square mixture
//!
//! ```text
//! F(v) = Σₖ aₖ P(χ²_{n+2k} <= v / β),   β = λ_min
//! Σₖ aₖ zᵏ = a₀ exp(Σₖ hₖ zᵏ),   a₀ = exp(-½ Σ bᵢ²) Πᵢ (β/λᵢ)^{1/2}
//! hₖ = ½ Σᵢ γᵢᵏ / k + ½ Σᵢ bᵢ² (1 - γᵢ) γᵢ^{k-1},   γᵢ = 1 - β/λᵢ
//! ```
//!
//! whose weights are positive and sum to one, so it is free of cancellation
//! and its truncation error is bounded by the missing weight. Evaluations
//! that neither expansion resolves within `k_max` terms are reported as not
//! converged; callers fall back to Monte Carlo.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{self, quad};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_K_MAX: usize = 5000;

/// Eigenvalues of `Σ^{1/2} A Σ^{1/2}` below this fraction of the largest
/// are treated as exact zeros of a rank-deficient `A`.
pub const NULL_EIGEN: f64 = 1e-12;

/// Largest tolerated absolute rounding error of a series sum, estimated
/// from the same series run on absolute values.
pub const CANCELLATION_LIMIT: f64 = 1e-7;

/// Standardized quadratic form `Σᵢ λᵢ (uᵢ + bᵢ)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormSpec {
    /// Eigenvalues of `Σ^{1/2} A Σ^{1/2}`, descending.
    pub lambdas: DVector<f64>,
    /// Offsets `Pᵀ Σ^{-1/2} μ` in the matching eigenbasis.
    pub b: DVector<f64>,
}

impl QuadFormSpec {
    pub fn new(lambdas: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(lambdas.len(), b.len());
        Self {
            lambdas: DVector::from_vec(lambdas),
            b: DVector::from_vec(b),
        }
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// `E[v] = Σ λᵢ (1 + bᵢ²)`.
    pub fn mean(&self) -> f64 {
        self.lambdas
            .iter()
            .zip(self.b.iter())
            .map(|(l, b)| l * (1.0 + b * b))
            .sum()
    }
}

/// Which expansion produced a [`SeriesResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expansion {
    Power,
    ChiSquareMixture,
}

/// Diagnostics of a series evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesResult {
    pub value: f64,
    pub terms_used: usize,
    pub converged: bool,
    pub last_term_magnitude: f64,
    pub expansion: Expansion,
}

impl SeriesResult {
    /// The value, or [`Error::NotConverged`].
    pub fn into_result(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::NotConverged {
                terms: self.terms_used,
                last_term: self.last_term_magnitude,
            })
        }
    }
}

pub fn standardize(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<QuadFormSpec> {
    let n = mu.len();
    for m in [a, sigma] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
    }
    if !linalg::is_symmetric(a, 1e-9) {
        return Err(Error::NonSymmetric {
            deviation: linalg::max_asymmetry(a),
        });
    }
    standardize_factored(a, mu, &SigmaFactors::new(sigma)?)
}

/// `Σ^{1/2}` and `Σ^{-1/2}` of a nonsingular covariance, for reuse across
/// several quadratic forms with the same `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFactors {
    pub half: DMatrix<f64>,
    pub inv_half: DMatrix<f64>,
}

impl SigmaFactors {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        let (sv, vectors) = linalg::sym_eigen_sorted(sigma);
        if !(sv[n - 1] > 1e-12 * sv[0]) {
            return Err(Error::SingularSigma);
        }
        let build = |g: fn(f64) -> f64| &vectors * DMatrix::from_diagonal(&sv.map(g)) * vectors.transpose();
        Ok(Self {
            half: build(f64::sqrt),
            inv_half: build(|x| 1.0 / x.sqrt()),
        })
    }
}

/// [`standardize`] with precomputed factors of `Σ`. The caller is
/// responsible for the dimensions and the symmetry of `a`.
pub fn standardize_factored(a: &DMatrix<f64>, mu: &DVector<f64>, f: &SigmaFactors) -> Result<QuadFormSpec> {
    let k = &f.half * a * &f.half;
    let (lambdas, p) = linalg::sym_eigen_sorted(&k);
    let b = p.tr_mul(&(&f.inv_half * mu));
    // Directions A annihilates carry no mass; drop their roundoff eigenvalues.
    let floor = NULL_EIGEN * lambdas.amax();
    let keep: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i].abs() > floor).collect();
    if keep.len() == lambdas.len() {
        return Ok(QuadFormSpec { lambdas, b });
    }
    Ok(QuadFormSpec {
        lambdas: DVector::from_iterator(keep.len(), keep.iter().map(|&i| lambdas[i])),
        b: DVector::from_iterator(keep.len(), keep.iter().map(|&i| b[i])),
    })
}

fn check_spec(spec: &QuadFormSpec) -> Result<()> {
    if let Some(&l) = spec.lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: l });
    }
    Ok(())
}

/// Shared evaluator for the CDF (`shift = 1`) and the pdf (`shift = 0`):
/// `Σₖ (-1)ᵏ cₖ v^{n/2+k+shift-1} / Γ(n/2+k+shift)`.
fn series(spec: &QuadFormSpec, v: f64, tol: f64, k_max: usize, shift: f64) -> SeriesResult {
    let n = spec.n() as f64;
    let half_n = 0.5 * n;
    let ln_c0 = -0.5 * spec.b.iter().map(|b| b * b).sum::<f64>()
        - 0.5 * spec.lambdas.iter().map(|l| (2.0 * l).ln()).sum::<f64>();
    let ln_v = v.ln();
    let ln_pref = ln_c0 + (half_n + shift - 1.0) * ln_v;

    // ratios v / (2 λᵢ); the coefficients are carried as eₖ = cₖ vᵏ / c₀
    let ratios: Vec<f64> = spec.lambdas.iter().map(|l| v / (2.0 * l)).collect();
    let b2: Vec<f64> = spec.b.iter().map(|b| b * b).collect();
    let mut powers = vec![1.0; ratios.len()];
    // d'ⱼ = dⱼ vʲ, and the same recurrence in absolute values, which bounds
    // how rounding errors in eₖ grow
    let cap = k_max.min(512) + 1;
    let mut d_scaled: Vec<f64> = Vec::with_capacity(cap);
    let mut d_abs: Vec<f64> = Vec::with_capacity(cap);
    let mut e: Vec<f64> = Vec::with_capacity(cap);
    let mut e_abs: Vec<f64> = Vec::with_capacity(cap);
    d_scaled.push(0.0);
    d_abs.push(0.0);
    e.push(1.0);
    e_abs.push(1.0);

    let mut sum = 0.0f64;
    let mut rounding = 0.0f64;
    let mut small_run = 0;
    let mut last = f64::INFINITY;
    let mut last_ln = f64::INFINITY;
    let mut terms = 0;
    let mut converged = false;

    // w = exp(ln_pref) / Γ(n/2 + k + shift), by recurrence while representable
    let mut w = (ln_pref - ln_gamma(half_n + shift)).exp();
    let scaled = |x: f64, w: f64, k: usize| {
        if x == 0.0 {
            0.0
        } else if w > 1e-280 && w < 1e280 && x < 1e280 {
            x * w
        } else {
            (x.ln() + ln_pref - ln_gamma(half_n + k as f64 + shift)).exp()
        }
    };

    for k in 0..=k_max {
        if k > 0 {
            let kf = k as f64;
            let (mut d, mut da) = (0.0, 0.0);
            for ((p, r), bb) in powers.iter_mut().zip(&ratios).zip(&b2) {
                *p *= r;
                let f = 1.0 - kf * bb;
                d += f * *p;
                da += f.abs() * *p;
            }
            d_scaled.push(0.5 * d);
            d_abs.push(0.5 * da);
            let (mut acc, mut acc_abs) = (0.0, 0.0);
            for ((ei, ea), (dj, dja)) in e.iter().zip(&e_abs).zip(d_scaled[1..].iter().zip(&d_abs[1..]).rev()) {
                acc += ei * dj;
                acc_abs += ea * dja;
            }
            e.push(acc / kf);
            e_abs.push(acc_abs / kf);
            w /= half_n + kf - 1.0 + shift;
        }
        let ek = e[k];
        let mag = scaled(ek.abs(), w, k);
        // log magnitude, which keeps its order where `mag` underflows
        let ln_mag = ek.abs().ln() + ln_pref - ln_gamma(half_n + k as f64 + shift);
        let falling = ln_mag < last_ln;
        last_ln = ln_mag;
        terms = k + 1;
        if !mag.is_finite() {
            last = mag;
            break;
        }
        let term = if (k % 2 == 0) == (ek >= 0.0) { mag } else { -mag };
        sum += term;
        last = mag;
        rounding += f64::EPSILON * (2.0 * k as f64 + n + 2.0) * scaled(e_abs[k], w, k);
        if !(rounding <= CANCELLATION_LIMIT) {
            break;
        }
        // An underflowed partial sum says nothing about the remainder.
        if sum != 0.0 && falling && mag <= tol * sum.abs() {
            small_run += 1;
            if small_run >= 2 {
                converged = true;
                break;
            }
        } else {
            small_run = 0;
        }
    }
    // A probability or density that leaves its range has lost its digits.
    if converged && !(sum >= -CANCELLATION_LIMIT && (shift == 0.0 || sum <= 1.0 + CANCELLATION_LIMIT)) {
        converged = false;
    }
    SeriesResult {
        value: sum,
        terms_used: terms,
        converged,
        last_term_magnitude: last,
        expansion: Expansion::Power,
    }
}

/// Chi-square mixture for the CDF (`shift = 1`) or the density
/// (`shift = 0`). Weights are carried relative to a running scale so that
/// neither `a₀` nor the later weights under- or overflow.
fn mixture(spec: &QuadFormSpec, v: f64, tol: f64, k_max: usize, shift: f64) -> SeriesResult {
    let n = spec.n();
    let beta = spec.lambdas.min();
    let gammas: Vec<f64> = spec.lambdas.iter().map(|l| 1.0 - beta / l).collect();
    let b2: Vec<f64> = spec.b.iter().map(|b| b * b).collect();
    let ln_a0 = -0.5 * b2.iter().sum::<f64>() + 0.5 * spec.lambdas.iter().map(|l| (beta / l).ln()).sum::<f64>();

    // aₖ = exp(ln_scale) wₖ
    let mut ln_scale = ln_a0;
    let cap = k_max.min(512) + 1;
    let mut w: Vec<f64> = Vec::with_capacity(cap);
    let mut mh: Vec<f64> = Vec::with_capacity(cap);
    w.push(1.0);
    mh.push(0.0);
    let mut powers = vec![1.0; n];

    // P(χ²_{n+2k} <= v/β) = P(n/2 + k, y), lowered by y^s e^{-y} / Γ(s+1)
    // per step; the density is y^{s-1} e^{-y} / (Γ(s) β) at s = n/2 + k.
    let y = 0.5 * v / beta;
    let half_n = 0.5 * n as f64;
    let mut chi = if shift == 1.0 { gamma_lr(half_n, y) } else { 0.0 };
    let ln_y = y.ln();
    let mut ln_step = if shift == 1.0 {
        half_n * ln_y - y - ln_gamma(half_n + 1.0)
    } else {
        (half_n - 1.0) * ln_y - y - ln_gamma(half_n) - (2.0 * beta).ln()
    };

    let mut sum = 0.0f64;
    let mut weight = 0.0f64;
    let mut terms = 0;
    let mut last = f64::INFINITY;
    let mut converged = false;
    for k in 0..=k_max {
        if k > 0 {
            let kf = k as f64;
            let mut h = 0.0;
            for ((p, g), bb) in powers.iter_mut().zip(&gammas).zip(&b2) {
                // p = γ^{k-1} on entry
                h += 0.5 * bb * (1.0 - g) * *p;
                *p *= g;
                h += 0.5 * *p / kf;
            }
            mh.push(kf * h);
            let acc: f64 = w.iter().zip(mh[1..].iter().rev()).map(|(wi, m)| wi * m).sum();
            w.push(acc / kf);
            if w[k] > 1e250 {
                for x in w.iter_mut() {
                    *x *= 1e-250;
                }
                ln_scale += 250.0 * std::f64::consts::LN_10;
            }
            if shift == 1.0 {
                chi -= ln_step.exp();
                chi = chi.max(0.0);
                ln_step += ln_y - (half_n + kf).ln();
            } else {
                ln_step += ln_y - (half_n + kf - 1.0).ln();
            }
        }
        let a = (w[k].ln() + ln_scale).exp();
        let f = if shift == 1.0 { chi } else { ln_step.exp() };
        let term = a * f;
        sum += term;
        weight += a;
        terms = k + 1;
        last = term;
        // Later terms carry at most the missing weight, times the largest
        // remaining chi-square factor.
        let tail_factor = if shift == 1.0 { chi } else { 1.0 };
        if shift == 1.0 && (1.0 - weight).max(0.0) * tail_factor <= tol {
            converged = true;
            break;
        }
        if shift == 0.0 && term <= tol * sum.max(1e-300) && weight > 1.0 - 1e-9 {
            converged = true;
            break;
        }
    }
    SeriesResult {
        value: sum,
        terms_used: terms,
        converged,
        last_term_magnitude: last,
        expansion: Expansion::ChiSquareMixture,
    }
}

fn evaluate(spec: &QuadFormSpec, v: f64, tol: f64, k_max: usize, shift: f64) -> SeriesResult {
    let power = series(spec, v, tol, k_max, shift);
    if power.converged {
        return power;
    }
    mixture(spec, v, tol, k_max, shift)
}

/// `P(v <= x)` by the power series. `v = 0` gives exactly 0.
pub fn cdf_series(spec: &QuadFormSpec, v: f64, tol: f64, k_max: usize) -> Result<SeriesResult> {
    check_spec(spec)?;
    if !(v >= 0.0) {
        return Err(Error::InvalidConfig(format!("cdf argument must be >= 0, got {v}")));
    }
    if v == 0.0 {
        return Ok(SeriesResult {
            value: 0.0,
            terms_used: 0,
            converged: true,
            last_term_magnitude: 0.0,
            expansion: Expansion::Power,
        });
    }
    let mut r = evaluate(spec, v, tol, k_max, 1.0);
    r.value = r.value.clamp(0.0, 1.0);
    Ok(r)
}

/// Density of `v` at `x > 0` by the power series.
pub fn pdf_series(spec: &QuadFormSpec, v: f64, tol: f64, k_max: usize) -> Result<SeriesResult> {
    check_spec(spec)?;
    if !(v > 0.0) {
        return Err(Error::InvalidConfig(format!("pdf argument must be > 0, got {v}")));
    }
    let mut r = evaluate(spec, v, tol, k_max, 0.0);
    r.value = r.value.max(0.0);
    Ok(r)
}

/// Degrees of freedom and noncentrality when `xᵀAx` is noncentral
/// chi-square: `tr(AΣ)` is a positive integer `r` and `AΣA = A`.
pub fn chi_square_case(a: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, tol: f64) -> Option<(u32, f64)> {
    let a_sigma = a * sigma;
    let tr = a_sigma.trace();
    let r = tr.round();
    if r < 1.0 || (tr - r).abs() > tol {
        return None;
    }
    let residual = (&a_sigma * a - a).norm();
    if residual > tol * a.norm() {
        return None;
    }
    Some((r as u32, quad(a, mu)))
}

/// Noncentral chi-square CDF as a Poisson mixture of central chi-square
/// CDFs, truncated once the remaining Poisson mass drops below `1e-12`.
pub fn noncentral_chi2_cdf(r: u32, delta2: f64, v: f64) -> f64 {
    assert!(r >= 1, "degrees of freedom must be positive");
    if !(v > 0.0) {
        return 0.0;
    }
    let half_r = 0.5 * f64::from(r);
    let central = |j: f64| gamma_lr(half_r + j, 0.5 * v);
    if delta2 <= 0.0 {
        return central(0.0);
    }
    let lam = 0.5 * delta2;
    let ln_lam = lam.ln();
    let cap = (lam + 50.0 * lam.sqrt() + 100.0) as usize;
    let mut total = 0.0;
    let mut mass = 0.0;
    for j in 0..=cap {
        let jf = j as f64;
        let w = (-lam + jf * ln_lam - ln_gamma(jf + 1.0)).exp();
        mass += w;
        total += w * central(jf);
        if jf > lam && 1.0 - mass < 1e-12 {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn standardize_identity() {
        let s = standardize(&DMatrix::identity(3, 3), &v(&[0.0; 3]), &DMatrix::identity(3, 3)).unwrap();
        assert!((&s.lambdas - v(&[1.0; 3])).amax() < 1e-14);
        assert!(s.b.amax() < 1e-14);
    }

    #[test]
    fn standardize_scalar() {
        let s = standardize(&DMatrix::identity(1, 1), &v(&[2.0]), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((s.lambdas[0] - 4.0).abs() < 1e-14);
        assert!((s.b[0].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn standardize_errors() {
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            standardize(&skew, &v(&[0.0, 0.0]), &DMatrix::identity(2, 2)),
            Err(Error::NonSymmetric { .. })
        ));
        let sing = DMatrix::from_diagonal(&v(&[1.0, 0.0]));
        assert_eq!(
            standardize(&DMatrix::identity(2, 2), &v(&[0.0, 0.0]), &sing),
            Err(Error::SingularSigma)
        );
    }

    #[test]
    fn cdf_at_zero_is_zero() {
        let s = QuadFormSpec::new(vec![1.0, 2.0], vec![0.3, 0.1]);
        let r = cdf_series(&s, 0.0, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn chi2_one_density() {
        let s = QuadFormSpec::new(vec![1.0], vec![0.0]);
        let r = pdf_series(&s, 1.0, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        let expect = (2.0 * std::f64::consts::PI).powf(-0.5) * (-0.5f64).exp();
        assert!((r.value - expect).abs() < 1e-12, "{} vs {expect}", r.value);
    }

    #[test]
    fn chi2_two_density_is_exponential() {
        let s = QuadFormSpec::new(vec![1.0, 1.0], vec![0.0, 0.0]);
        for x in [0.1, 0.7, 2.0, 5.0, 9.0] {
            let r = pdf_series(&s, x, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
            assert!((r.value - 0.5 * (-0.5 * x).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn nonpositive_lambda_rejected() {
        let s = QuadFormSpec::new(vec![1.0, 0.0], vec![0.0, 0.0]);
        assert!(cdf_series(&s, 1.0, DEFAULT_TOL, DEFAULT_K_MAX).is_err());
    }

    #[test]
    fn cancellation_switches_to_mixture() {
        // v / 2λ = 500: the alternating terms reach e^500
        let s = QuadFormSpec::new(vec![0.01, 0.01, 0.01], vec![0.0, 0.0, 0.0]);
        let r = cdf_series(&s, 10.0, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        assert!(r.converged);
        assert_eq!(r.expansion, Expansion::ChiSquareMixture);
        assert!((r.value - gamma_lr(1.5, 500.0)).abs() < 1e-12);

        let s = QuadFormSpec::new(vec![0.01, 0.02, 0.05], vec![0.3, -1.0, 0.5]);
        for x in [0.5, 2.0, 8.0] {
            let r = cdf_series(&s, x, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
            let central = 1.0 - tail_by_quadrature(&s, x);
            assert!(r.converged);
            assert!((r.value - central).abs() < 1e-8, "{} vs {central}", r.value);
        }
    }

    // P(v > x) by brute-force quadrature over the first coordinate, for a
    // cross-check of the mixture on a small noncentral case.
    fn tail_by_quadrature(s: &QuadFormSpec, x: f64) -> f64 {
        // Condition on u₁: the rest is a two-term form whose CDF is the
        // power series itself at a small argument; use a fine midpoint rule.
        let rest = QuadFormSpec::new(s.lambdas.as_slice()[1..].to_vec(), s.b.as_slice()[1..].to_vec());
        let (l, b) = (s.lambdas[0], s.b[0]);
        let steps = 20_000;
        let (lo, hi) = (-b - 12.0, -b + 12.0);
        let h = (hi - lo) / steps as f64;
        let mut inside = 0.0;
        for i in 0..steps {
            let u = lo + (i as f64 + 0.5) * h;
            let left = x - l * (u + b).powi(2);
            if left > 0.0 {
                let c = mixture(&rest, left, 1e-14, DEFAULT_K_MAX, 1.0).value;
                inside += c * (-0.5 * u * u).exp() * h;
            }
        }
        1.0 - inside / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn exhausted_budget_is_flagged() {
        let s = QuadFormSpec::new(vec![1.0, 1e-3], vec![2.0, 0.5]);
        let r = cdf_series(&s, 40.0, DEFAULT_TOL, 10).unwrap();
        assert!(!r.converged);
        assert!(r.into_result().is_err());
    }

    #[test]
    fn underflowed_prefactor_is_not_convergence() {
        // c₀ underflows, yet the mean of v lies below the threshold
        let s = QuadFormSpec::new(vec![72.5, 1.8e-5, 1.8e-5], vec![0.0, 500.0, 500.0]);
        let r = cdf_series(&s, 12.6, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        assert!(!r.converged, "{r:?}");
    }

    #[test]
    fn far_offset_resolves_to_zero() {
        let s = QuadFormSpec::new(vec![1.0], vec![40.0]);
        let r = cdf_series(&s, 1.0, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.value < 1e-300);
    }

    #[test]
    fn chi_square_case_examples() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = sigma.clone().try_inverse().unwrap();
        let mu = v(&[1.0, -0.5]);
        let (r, d2) = chi_square_case(&a, &mu, &sigma, 1e-9).unwrap();
        assert_eq!(r, 2);
        assert!((d2 - quad(&a, &mu)).abs() < 1e-12);

        assert!(chi_square_case(&DMatrix::identity(2, 2), &mu, &(DMatrix::identity(2, 2) * 2.0), 1e-9).is_none());

        let proj = DMatrix::from_diagonal(&v(&[1.0, 0.0]));
        let (r, d2) = chi_square_case(&proj, &mu, &DMatrix::identity(2, 2), 1e-9).unwrap();
        assert_eq!(r, 1);
        assert!((d2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_form_drops_null_directions() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let u = DMatrix::from_row_slice(3, 1, &[c, c, 0.0]);
        let a = &u * u.transpose();
        let mu = v(&[0.4, 1.1, -2.0]);
        let spec = standardize(&a, &mu, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(spec.n(), 1);
        let (r, d2) = chi_square_case(&a, &mu, &DMatrix::identity(3, 3), 1e-9).unwrap();
        for x in [0.1, 1.0, 3.0] {
            let s = cdf_series(&spec, x, DEFAULT_TOL, DEFAULT_K_MAX).unwrap();
            assert!((s.value - noncentral_chi2_cdf(r, d2, x)).abs() < 1e-9);
        }
    }

    #[test]
    fn noncentral_degenerate_cases() {
        assert_eq!(noncentral_chi2_cdf(3, 1.7, 0.0), 0.0);
        let c = noncentral_chi2_cdf(3, 0.0, 2.0);
        assert!((c - gamma_lr(1.5, 1.0)).abs() < 1e-15);
    }
}
