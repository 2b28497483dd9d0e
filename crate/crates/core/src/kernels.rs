//! Fundamental solutions of the two linear model problems and the pairwise
//! interaction integrals between a fast and a slow family.
//!
//! The closed forms come with independent brute-force evaluations
//! ([`interaction_backward_oracle`], [`interaction_semidiscrete_oracle`])
//! that sum and integrate the fundamental solutions directly.

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{gamma_density, poisson_pmf};
use crate::system::SystemSpec;

/// Truncation budget for both oracles.
pub const ORACLE_TAIL: f64 = 1e-10;

/// Per-term quadrature tolerance; log-space densities at a few thousand
/// steps carry about 1e-12 relative noise.
const TERM_REL_TOL: f64 = 1e-11;

/// Speeds of the two interacting families, `0 < mu < lambda < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    lambda: f64,
    mu: f64,
}

impl KernelParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && lambda > mu && lambda < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < mu < lambda < 1, got lambda = {lambda}, mu = {mu}"
            )));
        }
        Ok(Self { lambda, mu })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// Profile after `n` backward steps from a unit Dirac mass at the origin:
/// the Gamma density `(1/l)(x/l)^{n-1} e^{-x/l} / (n-1)!` on `x >= 0`.
pub fn fundamental_backward(n: u64, x: f64, lambda: f64) -> f64 {
    assert!(n >= 1, "the backward kernel is defined for n >= 1");
    assert!(lambda > 0.0);
    gamma_density(n, lambda, x)
}

/// Cell `n` at time `t` of the upwind lattice started from a unit mass in
/// cell 0: the Poisson probability `(l t)^n e^{-l t} / n!`.
pub fn fundamental_semidiscrete(n: i64, t: f64, lambda: f64) -> f64 {
    assert!(lambda > 0.0 && t >= 0.0);
    poisson_pmf(n, lambda * t)
}

/// `sum_n int v_n z_n dx` for backward kernels started at `0` (speed
/// `lambda`) and `x0` (speed `mu`).
pub fn interaction_backward(x0: f64, params: KernelParams) -> f64 {
    let KernelParams { lambda, mu } = params;
    let flat = 1.0 / (lambda - mu);
    if x0 < 0.0 {
        flat * ((lambda - mu) / (lambda * mu) * x0).exp()
    } else {
        flat
    }
}

/// `int_0^inf sum_n v_n(t) z_n(t) dt` for lattice kernels started in cell
/// `0` (speed `lambda`) and cell `n0` (speed `mu`).
pub fn interaction_semidiscrete(n0: i64, params: KernelParams) -> f64 {
    let KernelParams { lambda, mu } = params;
    let flat = 1.0 / (lambda - mu);
    if n0 < 0 {
        flat * (lambda / mu).powi(n0 as i32)
    } else {
        flat
    }
}

/// Upper bound on `sum_{n > n_max} int v_n z_n dx`.
///
/// Tilting both Gamma kernels by `exp(theta x)` with
/// `theta = -(lambda - mu) / (2 lambda mu)` bounds each term by
/// `C q^{-n}`, `q = (lambda + mu)^2 / (4 lambda mu) > 1`.
pub fn backward_oracle_tail(x0: f64, params: KernelParams, n_max: u64) -> f64 {
    let KernelParams { lambda, mu } = params;
    let theta = -(lambda - mu) / (2.0 * lambda * mu);
    let q = (lambda + mu).powi(2) / (4.0 * lambda * mu);
    let log_c = -lambda.ln() + (1.0 - theta * lambda).ln() - theta * x0;
    let log_tail = log_c - (n_max as f64 + 1.0) * q.ln() - (1.0 - 1.0 / q).ln();
    log_tail.exp()
}

const MAX_ORACLE_TERMS: u64 = 1_000_000;

/// Smallest `n_max` whose tail bound is below [`ORACLE_TAIL`].
pub fn backward_oracle_terms(x0: f64, params: KernelParams) -> u64 {
    let mut n = 16u64;
    while backward_oracle_tail(x0, params, n) > ORACLE_TAIL {
        n = n * 5 / 4 + 1;
        if n > 50_000_000 {
            break;
        }
    }
    n
}

/// `int v_n(x) z_n(x) dx` for one `n >= 1`, by adaptive Gauss-Kronrod
/// around the peak of the integrand.
pub fn backward_pairing(n: u64, x0: f64, params: KernelParams) -> f64 {
    let KernelParams { lambda, mu } = params;
    let start = x0.max(0.0);
    let rate = 1.0 / lambda + 1.0 / mu;
    let integrand = |x: f64| gamma_density(n, lambda, x) * gamma_density(n, mu, x - x0);
    // log-concave for n >= 2; locate the mode of (n-1)(ln x + ln(x-x0)) - rate x
    let (mode, width) = if n == 1 {
        (start, 1.0 / rate)
    } else {
        let k = (n - 1) as f64;
        let slope = |x: f64| k * (1.0 / x + 1.0 / (x - x0)) - rate;
        let (mut lo, mut hi) = (start + 1e-300_f64.max(start * 1e-15), start + 1.0);
        while slope(hi) > 0.0 {
            hi = start + 2.0 * (hi - start);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m = 0.5 * (lo + hi);
        let curvature = k * (1.0 / (m * m) + 1.0 / ((m - x0) * (m - x0)));
        (m, 1.0 / curvature.sqrt())
    };
    let peak = integrand(mode).max(f64::MIN_POSITIVE);
    let abs_tol = 1e-13 * peak * width;
    // left of the mode: walk back in chunks until negligible or the support starts
    let mut left = 0.0;
    let mut hi = mode;
    while hi > start {
        let lo = (hi - 4.0 * width).max(start);
        let piece = quadrature::integrate(integrand, lo, hi, abs_tol, TERM_REL_TOL);
        left += piece;
        hi = lo;
        if piece < 1e-17 * (left + peak * width) {
            break;
        }
    }
    let right =
        quadrature::integrate_to_infinity(integrand, mode, 4.0 * width, abs_tol, TERM_REL_TOL);
    left + right
}

/// Brute-force `sum_{n=1}^{n_max} int v_n(x) z_n(x) dx` with each integral
/// taken by adaptive Gauss-Kronrod around the peak of the integrand.
///
/// The `n = 0` pairing of two Dirac masses is left out; it is singular at
/// `x0 = 0` and zero elsewhere.
pub fn interaction_backward_oracle(x0: f64, params: KernelParams, n_max: u64) -> Result<f64> {
    let tail = backward_oracle_tail(x0, params, n_max);
    if tail > ORACLE_TAIL {
        return Err(Error::Truncation(format!(
            "tail bound {tail:.2e} after {n_max} terms exceeds {ORACLE_TAIL:.0e}"
        )));
    }
    let mut terms: Vec<f64> = (1..=n_max)
        .map(|n| backward_pairing(n, x0, params))
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

fn skellam_rate(params: KernelParams) -> f64 {
    (params.lambda.sqrt() - params.mu.sqrt()).powi(2)
}

/// Bound on `int_{t_max}^inf P(X_t - Y_t = n0) dt` for independent Poisson
/// counts of rates `lambda`, `mu` (Chernoff at `s = sqrt(mu/lambda)`).
pub fn semidiscrete_oracle_tail(n0: i64, params: KernelParams, t_max: f64) -> f64 {
    let a = skellam_rate(params);
    let log_pref = 0.5 * n0 as f64 * (params.lambda / params.mu).ln();
    (log_pref - a * t_max).exp() / a
}

/// Horizon whose tail bound is below [`ORACLE_TAIL`].
pub fn semidiscrete_oracle_horizon(n0: i64, params: KernelParams) -> f64 {
    let a = skellam_rate(params);
    let log_pref = 0.5 * n0 as f64 * (params.lambda / params.mu).ln();
    ((log_pref - (a * ORACLE_TAIL).ln()) / a).max(1.0) * 1.01
}

/// `sum_n Poisson(lambda t; n) Poisson(mu t; n - n0)`, truncated to the
/// window where the first factor carries all but ~1e-20 of its mass.
fn lattice_overlap(n0: i64, params: KernelParams, t: f64) -> f64 {
    let m = params.lambda * t;
    let spread = 12.0 * (m + 1.0).sqrt() + 12.0;
    let lo = ((m - spread).floor() as i64).max(0).max(n0);
    let hi = (m + spread).ceil() as i64;
    let mut sum = 0.0;
    for n in lo..=hi {
        sum += poisson_pmf(n, m) * poisson_pmf(n - n0, params.mu * t);
    }
    sum
}

/// Brute-force time integral of the lattice overlap on `[0, t_max]`.
pub fn interaction_semidiscrete_oracle(n0: i64, params: KernelParams, t_max: f64) -> Result<f64> {
    let tail = semidiscrete_oracle_tail(n0, params, t_max);
    if tail > ORACLE_TAIL {
        return Err(Error::Truncation(format!(
            "tail bound {tail:.2e} beyond t = {t_max} exceeds {ORACLE_TAIL:.0e}"
        )));
    }
    Ok(semidiscrete_overlap_integral(n0, params, 0.0, t_max))
}

fn semidiscrete_chunk(params: KernelParams) -> f64 {
    (4.0 / (params.lambda - params.mu)).max(5.0)
}

fn semidiscrete_overlap_integral(n0: i64, params: KernelParams, from: f64, to: f64) -> f64 {
    let chunk = semidiscrete_chunk(params);
    let mut total = 0.0;
    let mut lo = from;
    while lo < to {
        let hi = (lo + chunk).min(to);
        total += quadrature::integrate(|t| lattice_overlap(n0, params, t), lo, hi, 1e-14, 1e-12);
        lo = hi;
    }
    total
}

/// Backward oracle truncated once the tail bound falls below
/// [`ORACLE_TAIL`] times the partial sum (itself a lower bound, as all
/// terms are positive). Returns the value and the number of terms.
pub fn backward_oracle_relative(x0: f64, params: KernelParams) -> Result<(f64, u64)> {
    let mut terms = Vec::new();
    let mut partial = 0.0;
    for n in 1..=MAX_ORACLE_TERMS {
        let t = backward_pairing(n, x0, params);
        terms.push(t);
        partial += t;
        if backward_oracle_tail(x0, params, n) <= ORACLE_TAIL * partial.min(1.0) {
            terms.sort_by(f64::total_cmp);
            return Ok((terms.iter().sum(), n));
        }
    }
    Err(Error::Truncation(format!(
        "relative tail bound not reached within {MAX_ORACLE_TERMS} terms"
    )))
}

/// Lattice oracle whose horizon is extended until the tail bound falls
/// below [`ORACLE_TAIL`] times the integral so far. Returns the value and
/// the horizon.
pub fn semidiscrete_oracle_relative(n0: i64, params: KernelParams) -> Result<(f64, f64)> {
    let mut t_max = semidiscrete_oracle_horizon(n0, params);
    let mut value = interaction_semidiscrete_oracle(n0, params, t_max)?;
    let chunk = semidiscrete_chunk(params);
    for _ in 0..10_000 {
        if semidiscrete_oracle_tail(n0, params, t_max) <= ORACLE_TAIL * value.min(1.0) {
            return Ok((value, t_max));
        }
        value += semidiscrete_overlap_integral(n0, params, t_max, t_max + chunk);
        t_max += chunk;
    }
    Err(Error::Truncation(format!(
        "relative tail bound not reached by t = {t_max}"
    )))
}

/// Interaction weight for the backward scheme: `1/c` ahead, and
/// `(1/c) exp(c x / (K (K - c)))` for `x < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardWeight {
    separation: f64,
    rate: f64,
}

impl BackwardWeight {
    pub fn new(separation: f64, speed_cap: f64) -> Result<Self> {
        check_weight_params(separation, speed_cap)?;
        Ok(Self {
            separation,
            rate: separation / (speed_cap * (speed_cap - separation)),
        })
    }

    pub fn for_system(system: &SystemSpec) -> Result<Self> {
        Self::new(system.separation(), system.speed_cap())
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            (self.rate * x).exp() / self.separation
        } else {
            1.0 / self.separation
        }
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Decay rate of the exponential branch.
    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Interaction weight for the lattice: `1/c` for `k >= 0` and
/// `(1/c)(1 + c/K)^k` for `k < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemidiscreteWeight {
    separation: f64,
    growth: f64,
}

impl SemidiscreteWeight {
    pub fn new(separation: f64, speed_cap: f64) -> Result<Self> {
        check_weight_params(separation, speed_cap)?;
        Ok(Self {
            separation,
            growth: 1.0 + separation / speed_cap,
        })
    }

    pub fn for_system(system: &SystemSpec) -> Result<Self> {
        Self::new(system.separation(), system.speed_cap())
    }

    pub fn eval(&self, k: i64) -> f64 {
        if k < 0 {
            self.growth.powi(k as i32) / self.separation
        } else {
            1.0 / self.separation
        }
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Per-cell decay factor `1 / (1 + c/K)` of the geometric branch.
    pub fn ratio(&self) -> f64 {
        1.0 / self.growth
    }
}

fn check_weight_params(separation: f64, speed_cap: f64) -> Result<()> {
    if !(separation > 0.0 && separation < speed_cap) {
        return Err(Error::Parameter(format!(
            "weight needs 0 < c < K, got c = {separation}, K = {speed_cap}"
        )));
    }
    Ok(())
}

pub fn weight_backward(x: f64, system: &SystemSpec) -> Result<f64> {
    Ok(BackwardWeight::for_system(system)?.eval(x))
}

pub fn weight_semidiscrete(k: i64, system: &SystemSpec) -> Result<f64> {
    Ok(SemidiscreteWeight::for_system(system)?.eval(k))
}
