//! Conservation-law systems `u_t + f(u)_x = 0` with all speeds in `(0, 1)`.
//!
//! A [`SystemSpec`] bundles a flux with the admissible state box and the
//! speed bounds measured on it. The bounds are estimated once at
//! construction by dense sampling and then enforced by every spectral
//! query.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, EigenFailure};

/// Number of states sampled when estimating speed bounds.
pub const BOUND_SAMPLES: usize = 10_000;

/// Relative slack applied to sampled bounds so that states between samples
/// do not trip the hyperbolicity checks.
const BOUND_SLACK: f64 = 1e-3;

const SAMPLING_SEED: u64 = 0x5eed_c0de;

/// Abscissae and weights of 5-point Gauss-Legendre on `[0, 1]`, listed as
/// `(s, weight)` for `s < 1/2`; the rule is completed by `1 - s` and the
/// midpoint.
const GAUSS5_HALF: [(f64, f64); 2] = [
    (0.046_910_077_030_668_004, 0.118_463_442_528_094_54),
    (0.230_765_344_947_158_45, 0.239_314_335_249_683_23),
];
const GAUSS5_MID_WEIGHT: f64 = 0.284_444_444_444_444_44;

pub trait Flux: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn flux(&self, u: &[f64], out: &mut [f64]);

    /// Row-major Jacobian `Df(u)`. The default uses fourth-order central
    /// differences of [`Flux::flux`] with step [`Flux::fd_step`].
    fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        fd_jacobian(self, u, self.fd_step(), out);
    }

    fn fd_step(&self) -> f64 {
        1e-5
    }

    /// True when the Jacobian is constant.
    fn is_linear(&self) -> bool {
        false
    }
}

fn fd_jacobian<F: Flux + ?Sized>(flux: &F, u: &[f64], h: f64, out: &mut [f64]) {
    let n = flux.dim();
    let mut x = u.to_vec();
    let mut f = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        for (k, off) in [-2.0, -1.0, 1.0, 2.0].into_iter().enumerate() {
            x[j] = u[j] + off * h;
            flux.flux(&x, &mut f[k]);
        }
        x[j] = u[j];
        for i in 0..n {
            out[i * n + j] = (f[0][i] - 8.0 * f[1][i] + 8.0 * f[2][i] - f[3][i]) / (12.0 * h);
        }
    }
}

/// Constant-coefficient system `f(u) = A u` with `A = R diag(lambda) R^{-1}`.
#[derive(Debug, Clone)]
pub struct LinearFlux {
    n: usize,
    matrix: Vec<f64>,
}

impl LinearFlux {
    /// `eigenvectors`, when given, holds the columns of `R` contiguously
    /// (`r_i` at `[i*n..(i+1)*n]`); the identity is used otherwise.
    pub fn new(eigenvalues: &[f64], eigenvectors: Option<&[f64]>) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return Err(Error::Parameter(
                "linear system needs at least one eigenvalue".into(),
            ));
        }
        let matrix = match eigenvectors {
            None => {
                let mut a = vec![0.0; n * n];
                for (i, l) in eigenvalues.iter().enumerate() {
                    a[i * n + i] = *l;
                }
                a
            }
            Some(vecs) => {
                if vecs.len() != n * n {
                    return Err(Error::Parameter(format!(
                        "expected {} eigenvector entries, got {}",
                        n * n,
                        vecs.len()
                    )));
                }
                // R has r_i as its i-th column
                let mut r = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        r[k * n + i] = vecs[i * n + k];
                    }
                }
                let rinv = linalg::invert(n, &r)
                    .map_err(|_| Error::Parameter("eigenvectors are linearly dependent".into()))?;
                let mut a = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        a[i * n + j] = (0..n)
                            .map(|k| r[i * n + k] * eigenvalues[k] * rinv[k * n + j])
                            .sum();
                    }
                }
                a
            }
        };
        Ok(Self { n, matrix })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl Flux for LinearFlux {
    fn dim(&self) -> usize {
        self.n
    }

    fn flux(&self, u: &[f64], out: &mut [f64]) {
        linalg::mat_vec(self.n, &self.matrix, u, out);
    }

    fn jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Scalar `f(u) = u/2 + u^2/4`, so `f'(u) = (1 + u)/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftedBurgers;

impl Flux for ShiftedBurgers {
    fn dim(&self) -> usize {
        1
    }

    fn flux(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * u[0] + 0.25 * u[0] * u[0];
    }

    fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.5 + 0.5 * u[0];
    }
}

/// Two-component Langmuir isotherm `f_i = u_i / (1 + u_1 + u_2)`.
///
/// Both characteristic fields have straight rarefaction curves: the fast
/// eigenvector is `(1, -1)` everywhere and the slow one is radial.
#[derive(Debug, Clone, Copy, Default)]
pub struct Chromatography;

impl Flux for Chromatography {
    fn dim(&self) -> usize {
        2
    }

    fn flux(&self, u: &[f64], out: &mut [f64]) {
        let d = 1.0 + u[0] + u[1];
        out[0] = u[0] / d;
        out[1] = u[1] / d;
    }

    fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        let d = 1.0 + u[0] + u[1];
        let d2 = d * d;
        out[0] = 1.0 / d - u[0] / d2;
        out[1] = -u[0] / d2;
        out[2] = -u[1] / d2;
        out[3] = 1.0 / d - u[1] / d2;
    }
}

/// Flux given as a closure; the Jacobian comes from finite differences.
pub struct FnFlux<F> {
    dim: usize,
    step: f64,
    f: F,
}

impl<F> FnFlux<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, step: f64, f: F) -> Self {
        Self { dim, step, f }
    }
}

impl<F> fmt::Debug for FnFlux<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnFlux")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl<F> Flux for FnFlux<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn flux(&self, u: &[f64], out: &mut [f64]) {
        (self.f)(u, out)
    }

    fn fd_step(&self) -> f64 {
        self.step
    }
}

/// Axis-aligned box of base states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Parameter(
                "state box bounds must have equal, nonzero length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Parameter(
                "state box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64], margin: f64) -> bool {
        const TOL: f64 = 1e-12;
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= lo - margin - TOL && *x <= hi + margin + TOL)
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    fn enlarged(&self, margin: f64) -> StateBox {
        StateBox {
            lower: self.lower.iter().map(|l| l - margin).collect(),
            upper: self.upper.iter().map(|u| u + margin).collect(),
        }
    }

    /// Corners (up to 2^12 of them) followed by uniform samples.
    fn samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(count);
        if n <= 12 {
            for mask in 0..(1usize << n) {
                out.push(
                    (0..n)
                        .map(|k| {
                            if mask >> k & 1 == 1 {
                                self.upper[k]
                            } else {
                                self.lower[k]
                            }
                        })
                        .collect(),
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while out.len() < count {
            out.push(
                (0..n)
                    .map(|k| {
                        if self.upper[k] > self.lower[k] {
                            rng.gen_range(self.lower[k]..=self.upper[k])
                        } else {
                            self.lower[k]
                        }
                    })
                    .collect(),
            );
        }
        out
    }
}

/// Which built-in family a system belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Linear,
    ShiftedBurgers,
    Chromatography,
    Custom,
}

/// A conservation-law system together with its admissible states and
/// speed bounds.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    kind: SystemKind,
    flux: Arc<dyn Flux>,
    state_box: StateBox,
    margin: f64,
    kappa: f64,
    speed_cap: f64,
    separation: f64,
    inverse_bound: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dimension", &self.dimension())
            .field("state_box", &self.state_box)
            .field("margin", &self.margin)
            .field("kappa", &self.kappa)
            .field("speed_cap", &self.speed_cap)
            .field("separation", &self.separation)
            .finish()
    }
}

impl SystemSpec {
    /// Builds a system and measures `kappa`, `K` and `c` on the enlarged box.
    ///
    /// Fails unless `0 < kappa`, `K < 1` and, for `n >= 2`, `c > 0`.
    /// Scalar systems report `separation = +inf`.
    pub fn new(
        name: impl Into<String>,
        kind: SystemKind,
        flux: Arc<dyn Flux>,
        state_box: StateBox,
        margin: f64,
    ) -> Result<Self> {
        let n = flux.dim();
        if state_box.dim() != n {
            return Err(Error::Parameter(format!(
                "state box has dimension {}, flux has {}",
                state_box.dim(),
                n
            )));
        }
        if !(margin >= 0.0) {
            return Err(Error::Parameter("margin must be nonnegative".into()));
        }
        let enlarged = state_box.enlarged(margin);
        let mut jac = vec![0.0; n * n];
        let (mut lo, mut hi, mut gap) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        let mut inverse_bound = 0.0_f64;
        for u in enlarged.samples(BOUND_SAMPLES, SAMPLING_SEED) {
            flux.jacobian(&u, &mut jac);
            let (lambdas, _) = linalg::real_eigensystem(n, &jac).map_err(|e| match e {
                EigenFailure::Complex(_) => Error::HyperbolicityLoss {
                    gap: 0.0,
                    separation: 0.0,
                },
                _ => Error::Internal(format!("eigen-solve failed at {u:?}")),
            })?;
            lo = lo.min(lambdas[0]);
            hi = hi.max(lambdas[n - 1]);
            for w in lambdas.windows(2) {
                gap = gap.min(w[1] - w[0]);
            }
            let inv = linalg::invert(n, &jac)
                .map_err(|_| Error::Parameter(format!("singular Jacobian at {u:?}")))?;
            inverse_bound = inverse_bound.max(linalg::norm_inf(n, &inv));
        }
        if !(lo > 0.0) {
            return Err(Error::Parameter(format!(
                "minimal speed {lo} is not positive"
            )));
        }
        if !(hi < 1.0) {
            return Err(Error::Parameter(format!(
                "maximal speed {hi} is not below 1"
            )));
        }
        if n >= 2 && !(gap > 0.0) {
            return Err(Error::HyperbolicityLoss {
                gap,
                separation: 0.0,
            });
        }
        Ok(Self {
            name: name.into(),
            kind,
            flux,
            state_box,
            margin,
            kappa: lo * (1.0 - BOUND_SLACK),
            speed_cap: hi + BOUND_SLACK * (1.0 - hi),
            separation: if n >= 2 {
                gap * (1.0 - BOUND_SLACK)
            } else {
                f64::INFINITY
            },
            inverse_bound,
        })
    }

    /// Linear system with the given speeds on the box `[-1, 1]^n`.
    pub fn linear(eigenvalues: &[f64], eigenvectors: Option<&[f64]>) -> Result<Self> {
        let n = eigenvalues.len();
        Self::linear_in_box(
            eigenvalues,
            eigenvectors,
            StateBox::cube(n.max(1), -1.0, 1.0)?,
            0.1,
        )
    }

    /// Linear system on a caller-chosen box, e.g. one large enough to hold
    /// approximate Dirac data.
    pub fn linear_in_box(
        eigenvalues: &[f64],
        eigenvectors: Option<&[f64]>,
        state_box: StateBox,
        margin: f64,
    ) -> Result<Self> {
        let flux = LinearFlux::new(eigenvalues, eigenvectors)?;
        Self::new(
            "linear",
            SystemKind::Linear,
            Arc::new(flux),
            state_box,
            margin,
        )
    }

    /// `f(u) = u/2 + u^2/4` on `[-0.4, 0.4]` with margin 0.1.
    pub fn shifted_burgers() -> Self {
        Self::new(
            "burgers-shifted",
            SystemKind::ShiftedBurgers,
            Arc::new(ShiftedBurgers),
            StateBox::cube(1, -0.4, 0.4).expect("static box"),
            0.1,
        )
        .expect("built-in system satisfies the speed bounds")
    }

    /// Langmuir chromatography on `[0.5, 1.5]^2` with margin 0.1.
    pub fn chromatography() -> Self {
        Self::new(
            "chromatography",
            SystemKind::Chromatography,
            Arc::new(Chromatography),
            StateBox::cube(2, 0.5, 1.5).expect("static box"),
            0.1,
        )
        .expect("built-in system satisfies the speed bounds")
    }

    /// User system from a flux closure; the Jacobian uses fourth-order
    /// central differences with step `1e-5` times the box diameter.
    pub fn from_flux_fn<F>(
        name: impl Into<String>,
        f: F,
        state_box: StateBox,
        margin: f64,
    ) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let step = 1e-5 * state_box.diameter().max(1e-3);
        let flux = FnFlux::new(state_box.dim(), step, f);
        Self::new(name, SystemKind::Custom, Arc::new(flux), state_box, margin)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.flux.dim()
    }

    pub fn is_linear(&self) -> bool {
        self.flux.is_linear()
    }

    pub fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn speed_cap(&self) -> f64 {
        self.speed_cap
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Sampled maximum of the max-norm of `A(u)^{-1}` over the enlarged box.
    pub fn inverse_bound(&self) -> f64 {
        self.inverse_bound
    }

    pub fn flux_fn(&self) -> &dyn Flux {
        self.flux.as_ref()
    }

    pub fn flux(&self, u: &[f64], out: &mut [f64]) {
        self.flux.flux(u, out)
    }

    pub fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        self.flux.jacobian(u, out)
    }

    /// Membership in the enlarged set `K_1`.
    pub fn admissible(&self, u: &[f64]) -> bool {
        self.state_box.contains(u, self.margin)
    }

    pub fn check_admissible(&self, u: &[f64]) -> Result<()> {
        if self.admissible(u) {
            Ok(())
        } else {
            Err(Error::Domain { state: u.to_vec() })
        }
    }

    /// Spectral data of `Df(u)`.
    pub fn eigen_decompose(&self, u: &[f64]) -> Result<SpectralData> {
        self.check_admissible(u)?;
        let n = self.dimension();
        let mut jac = vec![0.0; n * n];
        self.jacobian(u, &mut jac);
        SpectralData::from_matrix(n, &jac, self.separation)
    }

    /// Path average `int_0^1 Df(left + (right - left) s) ds` by 5-point
    /// Gauss-Legendre. The rule is evaluated symmetrically, so swapping the
    /// states gives a bitwise identical matrix.
    pub fn averaged_matrix(&self, left: &[f64], right: &[f64], out: &mut [f64]) {
        let n = self.dimension();
        let mut point = vec![0.0; n];
        let mut jp = vec![0.0; n * n];
        let mut jq = vec![0.0; n * n];
        for (k, (a, b)) in left.iter().zip(right).enumerate() {
            point[k] = 0.5 * (a + b);
        }
        self.jacobian(&point, out);
        out.iter_mut().for_each(|v| *v *= GAUSS5_MID_WEIGHT);
        for &(s, w) in &GAUSS5_HALF {
            for (k, (a, b)) in left.iter().zip(right).enumerate() {
                point[k] = a * (1.0 - s) + b * s;
            }
            self.jacobian(&point, &mut jp);
            for (k, (a, b)) in left.iter().zip(right).enumerate() {
                point[k] = a * s + b * (1.0 - s);
            }
            self.jacobian(&point, &mut jq);
            for ((o, p), q) in out.iter_mut().zip(&jp).zip(&jq) {
                *o += w * (p + q);
            }
        }
    }

    /// Spectral data of the path-averaged Jacobian between two states.
    pub fn averaged_jacobian(&self, left: &[f64], right: &[f64]) -> Result<SpectralData> {
        self.check_admissible(left)?;
        self.check_admissible(right)?;
        let n = self.dimension();
        let mut avg = vec![0.0; n * n];
        self.averaged_matrix(left, right, &mut avg);
        SpectralData::from_matrix(n, &avg, self.separation)
    }

    /// Largest central-difference estimate of `|(Dr_i) r_i|` over
    /// `sample_count` deterministic states of the base box.
    pub fn verify_straight_line(&self, sample_count: usize, step: f64) -> Result<f64> {
        if sample_count == 0 {
            return Err(Error::Parameter("sample_count must be at least 1".into()));
        }
        if !(step > 0.0) {
            return Err(Error::Parameter("step must be positive".into()));
        }
        let n = self.dimension();
        let mut defect = 0.0_f64;
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for u in self
            .state_box
            .samples(sample_count, SAMPLING_SEED ^ 0x51)
            .into_iter()
            .take(sample_count)
        {
            let spec = self.eigen_decompose(&u)?;
            for i in 0..n {
                let r = spec.right(i);
                for k in 0..n {
                    plus[k] = u[k] + step * r[k];
                    minus[k] = u[k] - step * r[k];
                }
                let rp = self.eigen_decompose(&plus)?;
                let rm = self.eigen_decompose(&minus)?;
                for k in 0..n {
                    let d = (rp.right(i)[k] - rm.right(i)[k]) / (2.0 * step);
                    defect = defect.max(d.abs());
                }
            }
        }
        Ok(defect)
    }

    /// Deterministic sample of states in the base box.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        self.state_box
            .samples(count, seed)
            .into_iter()
            .take(count)
            .collect()
    }
}

/// Eigenvalues and biorthonormal eigenvector bases of a Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    n: usize,
    eigenvalues: Vec<f64>,
    right: Vec<f64>,
    left: Vec<f64>,
}

impl SpectralData {
    /// Decomposes `a`, orienting each `r_i` so that its first component
    /// larger than `1e-8` in magnitude is positive, and setting `l^i` to the
    /// rows of `R^{-1}`.
    pub fn from_matrix(n: usize, a: &[f64], separation: f64) -> Result<Self> {
        let (eigenvalues, mut right) = linalg::real_eigensystem(n, a).map_err(|e| match e {
            EigenFailure::Complex(_) => Error::HyperbolicityLoss {
                gap: 0.0,
                separation,
            },
            other => Error::Internal(format!("eigen-solve failed: {other:?}")),
        })?;
        for w in eigenvalues.windows(2) {
            let gap = w[1] - w[0];
            if !(gap >= separation) {
                return Err(Error::HyperbolicityLoss { gap, separation });
            }
        }
        for r in right.chunks_mut(n) {
            if let Some(first) = r.iter().find(|v| v.abs() > 1e-8) {
                if *first < 0.0 {
                    r.iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
        // R has r_i as columns; R^{-1} rows are l^i
        let mut rmat = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                rmat[k * n + i] = right[i * n + k];
            }
        }
        let left = linalg::invert(n, &rmat).map_err(|_| Error::HyperbolicityLoss {
            gap: 0.0,
            separation,
        })?;
        Ok(Self {
            n,
            eigenvalues,
            right,
            left,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn right(&self, i: usize) -> &[f64] {
        &self.right[i * self.n..(i + 1) * self.n]
    }

    pub fn left(&self, i: usize) -> &[f64] {
        &self.left[i * self.n..(i + 1) * self.n]
    }

    /// All right eigenvectors, `r_i` contiguous.
    pub fn right_vectors(&self) -> &[f64] {
        &self.right
    }

    /// `l^i . w` for every family.
    pub fn project(&self, w: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(self.left(i), w);
        }
    }
}
