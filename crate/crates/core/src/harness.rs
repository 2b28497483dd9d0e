//! Reference solutions and numerical experiments: exact scalar Riemann
//! solutions, epsilon-refinement studies, cross-scheme agreement,
//! Lipschitz measurements and the Lyapunov monotonicity experiment.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backward::{mass_defect, run_backward, BackwardOptions, GridFunction};
use crate::error::{Error, Result};
use crate::functionals::{
    backward_series, decompose_backward, decompose_semidiscrete, semidiscrete_series,
    smallest_uniform_c0, FunctionalSeries, C0_CANDIDATES, DEFAULT_SLACK,
};
use crate::semidiscrete::{integrate, IntegrateOptions, LatticeState};
use crate::system::SystemSpec;

pub const DEFAULT_EPSILONS: [f64; 4] = [0.04, 0.02, 0.01, 0.005];
pub const DEFAULT_T_PHYSICAL: f64 = 1.0;

const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss5(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * GAUSS5
        .iter()
        .map(|(s, w)| w * f(mid + half * s))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Backward,
    Semidiscrete,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Backward => "backward",
            Scheme::Semidiscrete => "semidiscrete",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backward" => Ok(Scheme::Backward),
            "semidiscrete" => Ok(Scheme::Semidiscrete),
            other => Err(Error::Parameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Piecewise-constant data `left` for `x < position`, `right` after.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiemannProblem {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub position: f64,
}

impl RiemannProblem {
    /// Checks that both states lie in the base box and, where the system
    /// has a smallness budget, that the jump respects it.
    pub fn new(system: &SystemSpec, left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        let n = system.dimension();
        if left.len() != n || right.len() != n {
            return Err(Error::Parameter(format!(
                "Riemann states must have dimension {n}"
            )));
        }
        for u in [&left, &right] {
            if !system.state_box().contains(u, 0.0) {
                return Err(Error::Domain { state: u.clone() });
            }
        }
        if let Some(budget) = BackwardOptions::for_system(system).tv_budget {
            let jump = left
                .iter()
                .zip(&right)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if jump > budget {
                return Err(Error::TvBudget { tv: jump, budget });
            }
        }
        Ok(Self {
            left,
            right,
            position: 0.0,
        })
    }

    pub fn at(mut self, position: f64) -> Self {
        self.position = position;
        self
    }
}

/// A smooth monotone transition `amplitude * (1 + tanh((x - position)/width)) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothStep {
    pub position: f64,
    pub width: f64,
    pub amplitude: Vec<f64>,
}

impl SmoothStep {
    fn shape(&self, x: f64) -> f64 {
        0.5 * (1.0 + ((x - self.position) / self.width).tanh())
    }

    /// Antiderivative of the shape.
    fn primitive(&self, x: f64) -> f64 {
        let y = (x - self.position) / self.width;
        let log_cosh = y.abs() + (-2.0 * y.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        0.5 * (x + self.width * log_cosh)
    }
}

/// Initial data in physical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialData {
    Riemann(RiemannProblem),
    Smooth {
        base: Vec<f64>,
        steps: Vec<SmoothStep>,
    },
}

impl InitialData {
    pub fn dim(&self) -> usize {
        match self {
            InitialData::Riemann(p) => p.left.len(),
            InitialData::Smooth { base, .. } => base.len(),
        }
    }

    /// Value as `x -> -inf`.
    pub fn left_state(&self) -> &[f64] {
        match self {
            InitialData::Riemann(p) => &p.left,
            InitialData::Smooth { base, .. } => base,
        }
    }

    pub fn value(&self, x: f64, out: &mut [f64]) {
        match self {
            InitialData::Riemann(p) => {
                out.copy_from_slice(if x < p.position { &p.left } else { &p.right })
            }
            InitialData::Smooth { base, steps } => {
                out.copy_from_slice(base);
                for s in steps {
                    let w = s.shape(x);
                    for (o, a) in out.iter_mut().zip(&s.amplitude) {
                        *o += w * a;
                    }
                }
            }
        }
    }

    /// Exact average over `[a, b]`.
    pub fn cell_average(&self, a: f64, b: f64, out: &mut [f64]) {
        match self {
            InitialData::Riemann(p) => {
                let frac = ((p.position - a) / (b - a)).clamp(0.0, 1.0);
                for k in 0..out.len() {
                    out[k] = frac * p.left[k] + (1.0 - frac) * p.right[k];
                }
            }
            InitialData::Smooth { base, steps } => {
                out.copy_from_slice(base);
                for s in steps {
                    let w = (s.primitive(b) - s.primitive(a)) / (b - a);
                    for (o, amp) in out.iter_mut().zip(&s.amplitude) {
                        *o += w * amp;
                    }
                }
            }
        }
    }

    /// Node values on the rescaled grid `x_i = x_min + i dx`, physical `eps x_i`.
    pub fn sample_grid(
        &self,
        epsilon: f64,
        x_min: f64,
        dx: f64,
        len: usize,
    ) -> Result<GridFunction> {
        GridFunction::from_fn(x_min, dx, len, self.left_state(), |x, u| {
            self.value(epsilon * x, u)
        })
    }

    /// Averages over `[n eps, (n+1) eps)` for the cells of the window.
    pub fn sample_lattice(&self, epsilon: f64, n_min: i64, len: usize) -> Result<LatticeState> {
        LatticeState::from_fn(n_min, len, self.left_state(), |n, u| {
            self.cell_average(n as f64 * epsilon, (n + 1) as f64 * epsilon, u)
        })
    }
}

/// A function of `x` that is constant on consecutive intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    dim: usize,
    edges: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(dim: usize, edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || edges.len() < 2 || values.len() != (edges.len() - 1) * dim {
            return Err(Error::Parameter(
                "piecewise-constant layout mismatch".into(),
            ));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("edges must increase strictly".into()));
        }
        Ok(Self { dim, edges, values })
    }

    /// Node `i` of a rescaled grid covers `eps [x_i - dx/2, x_i + dx/2)`.
    pub fn from_grid(profile: &GridFunction, epsilon: f64) -> Self {
        let len = profile.len();
        let edges = (0..=len)
            .map(|i| epsilon * (profile.x_min + (i as f64 - 0.5) * profile.dx))
            .collect();
        Self {
            dim: profile.dim(),
            edges,
            values: profile.values().to_vec(),
        }
    }

    /// Cell `n` covers `[n eps, (n+1) eps)`.
    pub fn from_lattice(state: &LatticeState, epsilon: f64) -> Self {
        let len = state.len();
        let edges = (0..=len)
            .map(|i| epsilon * (state.n_min + i as i64) as f64)
            .collect();
        Self {
            dim: state.dim(),
            edges,
            values: state.cells().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn piece(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    /// Exact `int sum_k |f_k - g_k| dx` over the common domain.
    pub fn l1_distance(&self, other: &PiecewiseConstant) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let lo = self.edges[0].max(other.edges[0]);
        let hi = self.domain().1.min(other.domain().1);
        if !(hi > lo) {
            return 0.0;
        }
        let locate = |pc: &PiecewiseConstant, x: f64| {
            pc.edges.partition_point(|e| *e <= x).saturating_sub(1)
        };
        let (mut i, mut j) = (locate(self, lo), locate(other, lo));
        let mut x = lo;
        let mut total = 0.0;
        while x < hi && i < self.len() && j < other.len() {
            let next = self.edges[i + 1].min(other.edges[j + 1]).min(hi);
            let diff: f64 = self
                .piece(i)
                .iter()
                .zip(other.piece(j))
                .map(|(a, b)| (a - b).abs())
                .sum();
            total += diff * (next - x);
            x = next;
            if self.edges[i + 1] <= x {
                i += 1;
            }
            if other.edges[j + 1] <= x {
                j += 1;
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Wave {
    Constant,
    Jump { speed: f64 },
    Fan { lo: f64, hi: f64 },
}

/// Entropy solution of a scalar Riemann problem with convex or linear flux.
#[derive(Debug, Clone)]
pub struct ScalarRiemannSolution<'a> {
    system: &'a SystemSpec,
    left: f64,
    right: f64,
    position: f64,
    time: f64,
    wave: Wave,
}

fn speed(system: &SystemSpec, u: f64) -> f64 {
    let mut j = [0.0];
    system.jacobian(&[u], &mut j);
    j[0]
}

fn flux(system: &SystemSpec, u: f64) -> f64 {
    let mut f = [0.0];
    system.flux(&[u], &mut f);
    f[0]
}

impl<'a> ScalarRiemannSolution<'a> {
    pub fn new(system: &'a SystemSpec, problem: &RiemannProblem, time: f64) -> Result<Self> {
        if system.dimension() != 1 {
            return Err(Error::Unsupported(
                "exact Riemann solutions need a scalar system".into(),
            ));
        }
        if !(time >= 0.0) {
            return Err(Error::Parameter(format!(
                "time must be nonnegative, got {time}"
            )));
        }
        let (ul, ur) = (problem.left[0], problem.right[0]);
        let wave = if ul == ur {
            Wave::Constant
        } else {
            let (a, b) = (ul.min(ur), ul.max(ur));
            let samples: Vec<f64> = (0..=32)
                .map(|k| speed(system, a + (b - a) * k as f64 / 32.0))
                .collect();
            let scale = samples
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(1e-300);
            let rising = samples.windows(2).all(|w| w[1] - w[0] >= -1e-12 * scale);
            let flat = samples
                .windows(2)
                .all(|w| (w[1] - w[0]).abs() <= 1e-12 * scale);
            if flat {
                Wave::Jump { speed: samples[0] }
            } else if !rising {
                return Err(Error::Unsupported(
                    "flux is not convex on the Riemann interval".into(),
                ));
            } else if ul > ur {
                Wave::Jump {
                    speed: (flux(system, ul) - flux(system, ur)) / (ul - ur),
                }
            } else {
                Wave::Fan {
                    lo: speed(system, ul),
                    hi: speed(system, ur),
                }
            }
        };
        Ok(Self {
            system,
            left: ul,
            right: ur,
            position: problem.position,
            time,
            wave,
        })
    }

    /// Shock or contact speed, if the solution is a single jump.
    pub fn jump_speed(&self) -> Option<f64> {
        match self.wave {
            Wave::Jump { speed } => Some(speed),
            _ => None,
        }
    }

    /// Solves `lambda(u) = xi` inside the fan by bisection.
    fn invert_speed(&self, xi: f64) -> f64 {
        let (mut a, mut b) = (self.left, self.right);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if speed(self.system, m) < xi {
                a = m;
            } else {
                b = m;
            }
            if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = x - self.position;
        match self.wave {
            Wave::Constant => self.left,
            Wave::Jump { speed } => {
                if y < speed * self.time {
                    self.left
                } else {
                    self.right
                }
            }
            Wave::Fan { lo, hi } => {
                if self.time == 0.0 {
                    return if y < 0.0 { self.left } else { self.right };
                }
                let xi = y / self.time;
                if xi <= lo {
                    self.left
                } else if xi >= hi {
                    self.right
                } else {
                    self.invert_speed(xi)
                }
            }
        }
    }

    /// Points where the solution is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        match self.wave {
            Wave::Constant => vec![],
            Wave::Jump { speed } => vec![self.position + speed * self.time],
            Wave::Fan { lo, hi } => vec![
                self.position + lo * self.time,
                self.position + hi * self.time,
            ],
        }
    }

    /// Exact `int |p(x) - u(x, t)| dx` over the domain of `p`.
    pub fn l1_distance(&self, p: &PiecewiseConstant) -> f64 {
        let breaks = self.breakpoints();
        let mut total = 0.0;
        let mut points = Vec::with_capacity(6);
        for i in 0..p.len() {
            let (a, b) = (p.edges()[i], p.edges()[i + 1]);
            let c = p.piece(i)[0];
            points.clear();
            points.push(a);
            points.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
            if let Wave::Fan { .. } = self.wave {
                let (lo, hi) = (self.left.min(self.right), self.left.max(self.right));
                if c > lo && c < hi && self.time > 0.0 {
                    let cross = self.position + speed(self.system, c) * self.time;
                    if cross > a && cross < b {
                        points.push(cross);
                    }
                }
            }
            points.push(b);
            points.sort_by(f64::total_cmp);
            for w in points.windows(2) {
                total += gauss5(w[0], w[1], |x| (c - self.eval(x)).abs());
            }
        }
        total
    }
}

/// Point values of the exact entropy solution on a grid.
pub fn exact_scalar_riemann(
    system: &SystemSpec,
    problem: &RiemannProblem,
    t: f64,
    x_min: f64,
    dx: f64,
    len: usize,
) -> Result<GridFunction> {
    let sol = ScalarRiemannSolution::new(system, problem, t)?;
    GridFunction::from_fn(x_min, dx, len, &problem.left, |x, u| u[0] = sol.eval(x))
}

/// Physical domain and discretization shared by the studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySetup {
    pub x_left: f64,
    pub x_right: f64,
    /// Grid spacing of the backward scheme in rescaled units.
    pub rescaled_dx: f64,
    pub dt: f64,
}

impl Default for StudySetup {
    fn default() -> Self {
        Self {
            x_left: -0.25,
            x_right: 3.0,
            rescaled_dx: 0.0025,
            dt: crate::semidiscrete::DEFAULT_DT,
        }
    }
}

/// Outcome of one run mapped to physical coordinates.
#[derive(Debug, Clone)]
pub struct PhysicalRun {
    pub initial: PiecewiseConstant,
    pub solution: PiecewiseConstant,
    /// Largest conservation defect over all steps (backward) or drift of
    /// mass plus outflow (lattice), in rescaled units.
    pub mass_defect: f64,
    /// Reconstruction error of the decompositions of the initial and final states.
    pub reconstruction_error: f64,
    pub runtime_seconds: f64,
}

fn step_count(t_physical: f64, epsilon: f64) -> Result<usize> {
    let steps = (t_physical / epsilon).round();
    if !(steps >= 1.0) || ((steps * epsilon - t_physical).abs() > 1e-9 * t_physical.max(1.0)) {
        return Err(Error::Parameter(format!(
            "t_physical = {t_physical} is not a positive multiple of epsilon = {epsilon}"
        )));
    }
    Ok(steps as usize)
}

/// Runs a scheme at scale `epsilon` up to physical time `t_physical`.
pub fn run_physical(
    system: &SystemSpec,
    data: &InitialData,
    scheme: Scheme,
    epsilon: f64,
    t_physical: f64,
    setup: &StudySetup,
) -> Result<PhysicalRun> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(setup.x_right > setup.x_left) {
        return Err(Error::Parameter("empty physical domain".into()));
    }
    let clock = Instant::now();
    match scheme {
        Scheme::Backward => {
            let steps = step_count(t_physical, epsilon)?;
            let h = setup.rescaled_dx;
            let x_min = (setup.x_left / (epsilon * h)).floor() * h;
            let len = ((setup.x_right / epsilon - x_min) / h).ceil() as usize + 1;
            let initial = data.sample_grid(epsilon, x_min, h, len)?;
            let options = BackwardOptions {
                stride: steps,
                ..BackwardOptions::for_system(system)
            };
            let mut defect = 0.0_f64;
            let records = run_backward(system, &initial, steps, &options, |_, cur, prev| {
                defect = defect.max(mass_defect(system, prev, cur));
            })?;
            let last = &records.last().expect("at least one step").profile;
            let recon = decompose_backward(system, &initial)?
                .reconstruction_error()
                .max(decompose_backward(system, last)?.reconstruction_error());
            Ok(PhysicalRun {
                initial: PiecewiseConstant::from_grid(&initial, epsilon),
                solution: PiecewiseConstant::from_grid(last, epsilon),
                mass_defect: defect,
                reconstruction_error: recon,
                runtime_seconds: clock.elapsed().as_secs_f64(),
            })
        }
        Scheme::Semidiscrete => {
            if !(t_physical >= 0.0) {
                return Err(Error::Parameter("t_physical must be nonnegative".into()));
            }
            let n_min = (setup.x_left / epsilon).floor() as i64;
            let n_end = (setup.x_right / epsilon).ceil() as i64;
            let initial = data.sample_lattice(epsilon, n_min, (n_end - n_min).max(2) as usize)?;
            let start = initial.conserved_total();
            let mut drift = 0.0_f64;
            let options = IntegrateOptions {
                dt: setup.dt,
                stride: 20,
                ..IntegrateOptions::default()
            };
            let last = integrate(system, &initial, t_physical / epsilon, &options, |s| {
                for (a, b) in s.conserved_total().iter().zip(&start) {
                    drift = drift.max((a - b).abs());
                }
            })?;
            let recon = decompose_semidiscrete(system, &initial)?
                .reconstruction_error()
                .max(decompose_semidiscrete(system, &last)?.reconstruction_error());
            Ok(PhysicalRun {
                initial: PiecewiseConstant::from_lattice(&initial, epsilon),
                solution: PiecewiseConstant::from_lattice(&last, epsilon),
                mass_defect: drift,
                reconstruction_error: recon,
                runtime_seconds: clock.elapsed().as_secs_f64(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceEntry {
    pub epsilon: f64,
    pub l1_error: Option<f64>,
    pub failure: Option<String>,
    pub runtime_seconds: f64,
    pub mass_defect: Option<f64>,
    pub reconstruction_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub scheme: Scheme,
    pub entries: Vec<ConvergenceEntry>,
    /// Least-squares slope of `log error` against `log epsilon`.
    pub order: Option<f64>,
}

impl ConvergenceRecord {
    pub fn errors(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.l1_error).collect()
    }

    /// Whether every run succeeded and the errors decrease strictly.
    pub fn strictly_decreasing(&self) -> bool {
        let errs = self.errors();
        errs.len() == self.entries.len() && errs.windows(2).all(|w| w[1] < w[0])
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_epsilons(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty()
        || epsilons.iter().any(|e| !(*e > 0.0))
        || epsilons.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(Error::Parameter(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Errors against the exact solution (scalar systems) or against a
/// semidiscrete run at `epsilon_min / 4` (systems), one entry per epsilon.
pub fn epsilon_study(
    system: &SystemSpec,
    problem: &RiemannProblem,
    scheme: Scheme,
    epsilons: &[f64],
    t_physical: f64,
    setup: &StudySetup,
) -> Result<ConvergenceRecord> {
    check_epsilons(epsilons)?;
    let data = InitialData::Riemann(problem.clone());
    let exact = if system.dimension() == 1 {
        Some(ScalarRiemannSolution::new(system, problem, t_physical)?)
    } else {
        None
    };
    let reference = match exact {
        Some(_) => None,
        None => {
            let eps = epsilons[epsilons.len() - 1] / 4.0;
            Some(
                run_physical(system, &data, Scheme::Semidiscrete, eps, t_physical, setup)?.solution,
            )
        }
    };
    let mut entries = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let clock = Instant::now();
        let entry = match run_physical(system, &data, scheme, eps, t_physical, setup) {
            Ok(run) => {
                let err = match (&exact, &reference) {
                    (Some(sol), _) => sol.l1_distance(&run.solution),
                    (None, Some(r)) => run.solution.l1_distance(r),
                    (None, None) => unreachable!("a reference always exists"),
                };
                ConvergenceEntry {
                    epsilon: eps,
                    l1_error: Some(err),
                    failure: None,
                    runtime_seconds: run.runtime_seconds,
                    mass_defect: Some(run.mass_defect),
                    reconstruction_error: Some(run.reconstruction_error),
                }
            }
            Err(e) => ConvergenceEntry {
                epsilon: eps,
                l1_error: None,
                failure: Some(e.to_string()),
                runtime_seconds: clock.elapsed().as_secs_f64(),
                mass_defect: None,
                reconstruction_error: None,
            },
        };
        entries.push(entry);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = entries
        .iter()
        .filter_map(|e| {
            e.l1_error
                .filter(|v| *v > 0.0)
                .map(|v| (e.epsilon.ln(), v.ln()))
        })
        .unzip();
    Ok(ConvergenceRecord {
        scheme,
        entries,
        order: fit_slope(&lx, &ly),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementEntry {
    pub epsilon: f64,
    pub l1_distance: f64,
    pub mass_defect: f64,
    pub reconstruction_error: f64,
}

/// L1 distance between the two schemes' physical outputs for every epsilon.
pub fn cross_scheme_agreement(
    system: &SystemSpec,
    problem: &RiemannProblem,
    epsilons: &[f64],
    t_physical: f64,
    setup: &StudySetup,
) -> Result<Vec<AgreementEntry>> {
    check_epsilons(epsilons)?;
    let data = InitialData::Riemann(problem.clone());
    epsilons
        .iter()
        .map(|&eps| {
            let a = run_physical(system, &data, Scheme::Backward, eps, t_physical, setup)?;
            let b = run_physical(system, &data, Scheme::Semidiscrete, eps, t_physical, setup)?;
            Ok(AgreementEntry {
                epsilon: eps,
                l1_distance: a.solution.l1_distance(&b.solution),
                mass_defect: a.mass_defect.max(b.mass_defect),
                reconstruction_error: a.reconstruction_error.max(b.reconstruction_error),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub scheme: Scheme,
    pub epsilon: f64,
    /// Largest distance ratio over all pairs and recorded times.
    pub constant: f64,
    pub initial_distances: Vec<f64>,
    pub pair_constants: Vec<f64>,
    pub mass_defect: f64,
    /// Largest reconstruction error over the decompositions of all snapshots.
    pub reconstruction_error: f64,
}

/// Evolves each pair with the same discretization and records the ratio of
/// their L1 distance to the initial one at every recorded time.
pub fn lipschitz_study(
    system: &SystemSpec,
    pairs: &[(InitialData, InitialData)],
    scheme: Scheme,
    epsilon: f64,
    t_physical: f64,
    setup: &StudySetup,
) -> Result<LipschitzReport> {
    if pairs.is_empty() {
        return Err(Error::Parameter("no pairs given".into()));
    }
    let mut report = LipschitzReport {
        scheme,
        epsilon,
        constant: 0.0,
        initial_distances: Vec::new(),
        pair_constants: Vec::new(),
        mass_defect: 0.0,
        reconstruction_error: 0.0,
    };
    for (a, b) in pairs {
        let (d0, ratios, defect, recon) = match scheme {
            Scheme::Backward => {
                let steps = step_count(t_physical, epsilon)?;
                let h = setup.rescaled_dx;
                let x_min = (setup.x_left / (epsilon * h)).floor() * h;
                let len = ((setup.x_right / epsilon - x_min) / h).ceil() as usize + 1;
                let ga = a.sample_grid(epsilon, x_min, h, len)?;
                let gb = b.sample_grid(epsilon, x_min, h, len)?;
                let options = BackwardOptions::for_system(system);
                let mut defect = 0.0_f64;
                let ra = run_backward(system, &ga, steps, &options, |_, c, p| {
                    defect = defect.max(mass_defect(system, p, c))
                })?;
                let rb = run_backward(system, &gb, steps, &options, |_, c, p| {
                    defect = defect.max(mass_defect(system, p, c))
                })?;
                let d0 = PiecewiseConstant::from_grid(&ga, epsilon)
                    .l1_distance(&PiecewiseConstant::from_grid(&gb, epsilon));
                let ratios: Vec<f64> = ra
                    .iter()
                    .zip(&rb)
                    .map(|(x, y)| {
                        PiecewiseConstant::from_grid(&x.profile, epsilon)
                            .l1_distance(&PiecewiseConstant::from_grid(&y.profile, epsilon))
                    })
                    .collect();
                let mut recon = 0.0_f64;
                for g in [&ga, &gb]
                    .into_iter()
                    .chain(ra.iter().chain(&rb).map(|r| &r.profile))
                {
                    recon = recon.max(decompose_backward(system, g)?.reconstruction_error());
                }
                (d0, ratios, defect, recon)
            }
            Scheme::Semidiscrete => {
                let n_min = (setup.x_left / epsilon).floor() as i64;
                let len = ((setup.x_right / epsilon).ceil() as i64 - n_min).max(2) as usize;
                let la = a.sample_lattice(epsilon, n_min, len)?;
                let lb = b.sample_lattice(epsilon, n_min, len)?;
                let options = IntegrateOptions {
                    dt: setup.dt,
                    stride: 1,
                    ..IntegrateOptions::default()
                };
                let collect = |l: &LatticeState| -> Result<(Vec<LatticeState>, f64)> {
                    let start = l.conserved_total();
                    let mut snaps = Vec::new();
                    let mut drift = 0.0_f64;
                    integrate(system, l, t_physical / epsilon, &options, |s| {
                        for (x, y) in s.conserved_total().iter().zip(&start) {
                            drift = drift.max((x - y).abs());
                        }
                        snaps.push(s.clone());
                    })?;
                    Ok((snaps, drift))
                };
                let (sa, da) = collect(&la)?;
                let (sb, db) = collect(&lb)?;
                let d0 = PiecewiseConstant::from_lattice(&la, epsilon)
                    .l1_distance(&PiecewiseConstant::from_lattice(&lb, epsilon));
                let ratios = sa
                    .iter()
                    .zip(&sb)
                    .map(|(x, y)| {
                        PiecewiseConstant::from_lattice(x, epsilon)
                            .l1_distance(&PiecewiseConstant::from_lattice(y, epsilon))
                    })
                    .collect();
                let mut recon = 0.0_f64;
                for l in sa.iter().chain(&sb) {
                    recon = recon.max(decompose_semidiscrete(system, l)?.reconstruction_error());
                }
                (d0, ratios, da.max(db), recon)
            }
        };
        if !(d0 > 0.0) {
            return Err(Error::Parameter("pair with zero initial distance".into()));
        }
        let pair_l = ratios.iter().fold(1.0_f64, |m, d| m.max(d / d0));
        report.initial_distances.push(d0);
        report.pair_constants.push(pair_l);
        report.constant = report.constant.max(pair_l);
        report.mass_defect = report.mass_defect.max(defect);
        report.reconstruction_error = report.reconstruction_error.max(recon);
    }
    Ok(report)
}

/// Random smooth data around the centre of the state box: a few `tanh`
/// transitions along random eigenvector families, with
/// `sum |amplitude| = total_variation`, positions in `[0, span]` and
/// widths between 5% and 15% of `span`.
pub fn random_small_tv(
    system: &SystemSpec,
    seed: u64,
    total_variation: f64,
    span: f64,
) -> Result<InitialData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = system.state_box().center();
    let spectral = system.eigen_decompose(&base)?;
    let n = system.dimension();
    let count = rng.gen_range(3..=6);
    let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut steps = Vec::with_capacity(count);
    for w in weights {
        let family = rng.gen_range(0..n);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let strength = sign * total_variation * w / total;
        steps.push(SmoothStep {
            position: rng.gen_range(0.0..span),
            width: span * rng.gen_range(0.05..0.15),
            amplitude: spectral
                .right(family)
                .iter()
                .map(|r| strength * r)
                .collect(),
        });
    }
    Ok(InitialData::Smooth { base, steps })
}

/// Adds a localized bump of L1 size about `size` to smooth data.
pub fn perturbed(
    data: &InitialData,
    direction: &[f64],
    position: f64,
    width: f64,
    size: f64,
) -> InitialData {
    let norm: f64 = direction.iter().map(|v| v.abs()).sum();
    let amp: Vec<f64> = direction
        .iter()
        .map(|v| size / (width * norm) * v)
        .collect();
    let neg: Vec<f64> = amp.iter().map(|v| -v).collect();
    let smooth = |p: f64, a: Vec<f64>| SmoothStep {
        position: p,
        width: 0.1 * width,
        amplitude: a,
    };
    match data {
        InitialData::Smooth { base, steps } => {
            let mut steps = steps.clone();
            steps.push(smooth(position, amp));
            steps.push(smooth(position + width, neg));
            InitialData::Smooth {
                base: base.clone(),
                steps,
            }
        }
        InitialData::Riemann(p) => InitialData::Smooth {
            base: p.left.clone(),
            steps: vec![
                SmoothStep {
                    position: p.position,
                    width: 1e-9,
                    amplitude: p.right.iter().zip(&p.left).map(|(r, l)| r - l).collect(),
                },
                smooth(position, amp),
                smooth(position + width, neg),
            ],
        },
    }
}

/// Parameters of the Lyapunov monotonicity experiment (rescaled units).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSetup {
    pub count: usize,
    pub seed: u64,
    pub total_variation: f64,
    pub span: f64,
    /// Backward steps; the lattice runs for the same time.
    pub steps: usize,
    /// Backward grid spacing; the trapezoid mass balance closes to
    /// about `2e-6 dx^2` on the default data.
    pub dx: f64,
    pub dt: f64,
    pub slack: f64,
    pub candidates: Vec<f64>,
}

impl Default for LyapunovSetup {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 2024,
            total_variation: 0.045,
            span: 20.0,
            steps: 80,
            dx: 0.0125,
            dt: crate::semidiscrete::DEFAULT_DT,
            slack: DEFAULT_SLACK,
            candidates: C0_CANDIDATES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovOutcome {
    pub system: String,
    pub scheme: Scheme,
    pub initial_tv: Vec<f64>,
    /// Smallest candidate working for each datum separately.
    pub per_datum_c0: Vec<Option<f64>>,
    /// Smallest candidate working for all data at once.
    pub uniform_c0: Option<f64>,
    pub max_mass_defect: f64,
    pub max_reconstruction_error: f64,
    #[serde(skip)]
    pub series: Vec<FunctionalSeries>,
}

/// Runs `setup.count` random small-TV data through one scheme and scans
/// the candidate `C0` values.
pub fn lyapunov_experiment(
    system: &SystemSpec,
    scheme: Scheme,
    setup: &LyapunovSetup,
) -> Result<LyapunovOutcome> {
    let horizon = setup.steps as f64;
    let x_left = -10.0;
    let x_right = setup.span + system.speed_cap() * horizon + 8.0 * horizon.sqrt() + 20.0;
    let mut outcome = LyapunovOutcome {
        system: system.name().to_string(),
        scheme,
        initial_tv: Vec::new(),
        per_datum_c0: Vec::new(),
        uniform_c0: None,
        max_mass_defect: 0.0,
        max_reconstruction_error: 0.0,
        series: Vec::new(),
    };
    for k in 0..setup.count {
        let data = random_small_tv(
            system,
            setup.seed.wrapping_add(k as u64),
            setup.total_variation,
            setup.span,
        )?;
        let series = match scheme {
            Scheme::Backward => {
                let len = ((x_right - x_left) / setup.dx).ceil() as usize + 1;
                let grid = data.sample_grid(1.0, x_left, setup.dx, len)?;
                outcome
                    .initial_tv
                    .push(decompose_backward(system, &grid)?.total_variation());
                backward_series(
                    system,
                    &grid,
                    setup.steps,
                    &BackwardOptions::for_system(system),
                )?
            }
            Scheme::Semidiscrete => {
                let lattice =
                    data.sample_lattice(1.0, x_left as i64, (x_right - x_left).ceil() as usize)?;
                outcome
                    .initial_tv
                    .push(decompose_semidiscrete(system, &lattice)?.total_variation());
                let stride = (1.0 / setup.dt).round().max(1.0) as usize;
                let options = IntegrateOptions {
                    dt: setup.dt,
                    stride,
                    ..IntegrateOptions::default()
                };
                semidiscrete_series(system, &lattice, horizon, &options)?
            }
        };
        outcome.per_datum_c0.push(smallest_uniform_c0(
            std::slice::from_ref(&series),
            &setup.candidates,
            setup.slack,
        ));
        outcome.max_mass_defect = outcome.max_mass_defect.max(series.max_mass_defect());
        outcome.max_reconstruction_error = outcome
            .max_reconstruction_error
            .max(series.max_reconstruction_error());
        outcome.series.push(series);
    }
    outcome.uniform_c0 = smallest_uniform_c0(&outcome.series, &setup.candidates, setup.slack);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::StateBox;

    fn scalar_linear(lambda: f64) -> SystemSpec {
        SystemSpec::linear_in_box(&[lambda], None, StateBox::cube(1, -1.0, 1.0).unwrap(), 0.1)
            .unwrap()
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::Backward, Scheme::Semidiscrete] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("godunov".parse::<Scheme>().is_err());
    }

    #[test]
    fn exact_solutions() {
        let sys = SystemSpec::shifted_burgers();
        let same = RiemannProblem::new(&sys, vec![0.2], vec![0.2]).unwrap();
        let g = exact_scalar_riemann(&sys, &same, 1.0, -1.0, 0.1, 21).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.2));

        let shock = RiemannProblem::new(&sys, vec![0.4], vec![0.0]).unwrap();
        let sol = ScalarRiemannSolution::new(&sys, &shock, 1.0).unwrap();
        assert!((sol.jump_speed().unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(sol.eval(0.59), 0.4);
        assert_eq!(sol.eval(0.61), 0.0);

        let fan = RiemannProblem::new(&sys, vec![0.0], vec![0.4]).unwrap();
        let sol = ScalarRiemannSolution::new(&sys, &fan, 2.0).unwrap();
        for xi in [0.52, 0.6, 0.68] {
            assert!((sol.eval(2.0 * xi) - (xi - 0.5) / 0.5).abs() < 1e-12);
        }
        assert_eq!(sol.eval(0.9), 0.0);
        assert_eq!(sol.eval(1.5), 0.4);
    }

    #[test]
    fn rankine_hugoniot_and_flux_balance() {
        let sys = SystemSpec::shifted_burgers();
        let shock = RiemannProblem::new(&sys, vec![0.3], vec![-0.1]).unwrap();
        let t = 1.5;
        let sol = ScalarRiemannSolution::new(&sys, &shock, t).unwrap();
        let s = sol.jump_speed().unwrap();
        assert!((s * (0.3 - -0.1) - (flux(&sys, 0.3) - flux(&sys, -0.1))).abs() < 1e-15);
        // d/dt int_a^b u = f(u(a)) - f(u(b)) on a test volume around the shock
        let (a, b) = (-1.0, 3.0);
        let mass = |time: f64| {
            let p = ScalarRiemannSolution::new(&sys, &shock, time).unwrap();
            let x = p.breakpoints()[0];
            gauss5(a, x, |y| p.eval(y)) + gauss5(x, b, |y| p.eval(y))
        };
        let balance = (mass(t + 0.5) - mass(t)) - 0.5 * (flux(&sys, 0.3) - flux(&sys, -0.1));
        assert!(balance.abs() < 1e-8);
    }

    #[test]
    fn nonconvex_or_vector_flux_is_rejected() {
        let cubic = SystemSpec::from_flux_fn(
            "cubic",
            |u: &[f64], f: &mut [f64]| f[0] = 0.5 * u[0] - 0.2 * u[0].powi(3) + 0.1 * u[0].powi(2),
            StateBox::cube(1, -0.5, 0.5).unwrap(),
            0.0,
        )
        .unwrap();
        let p = RiemannProblem {
            left: vec![-0.5],
            right: vec![0.5],
            position: 0.0,
        };
        assert!(matches!(
            ScalarRiemannSolution::new(&cubic, &p, 1.0),
            Err(Error::Unsupported(_))
        ));
        let chrom = SystemSpec::chromatography();
        let p = RiemannProblem::new(&chrom, vec![1.0, 1.0], vec![1.02, 1.0]).unwrap();
        assert!(matches!(
            ScalarRiemannSolution::new(&chrom, &p, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exact_l1_distance() {
        let sys = SystemSpec::shifted_burgers();
        let fan = RiemannProblem::new(&sys, vec![0.0], vec![0.4]).unwrap();
        let sol = ScalarRiemannSolution::new(&sys, &fan, 1.0).unwrap();
        // constant 0.2 on [0.4, 0.8]: u = 2x - 1 on [0.5, 0.7]
        let pc = PiecewiseConstant::new(1, vec![0.4, 0.8], vec![0.2]).unwrap();
        let exact = 0.2 * 0.1 + 0.2 * 0.1 + 0.5 * 0.1 * 0.2 * 2.0;
        assert!((sol.l1_distance(&pc) - exact).abs() < 1e-14);
    }

    #[test]
    fn piecewise_distance() {
        let a = PiecewiseConstant::new(1, vec![0.0, 1.0, 2.0], vec![1.0, 0.0]).unwrap();
        let b = PiecewiseConstant::new(1, vec![0.0, 0.5, 1.5, 2.0], vec![1.0, 1.0, 0.0]).unwrap();
        assert!((a.l1_distance(&b) - 0.5).abs() < 1e-15);
        assert_eq!(a.l1_distance(&a), 0.0);
        assert!(PiecewiseConstant::new(1, vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn smooth_data_averages() {
        let d = InitialData::Smooth {
            base: vec![0.1],
            steps: vec![SmoothStep {
                position: 0.3,
                width: 0.2,
                amplitude: vec![0.05],
            }],
        };
        let mut avg = [0.0];
        d.cell_average(-0.1, 0.7, &mut avg);
        let mut v = [0.0];
        let numeric = (0..8000)
            .map(|k| {
                d.value(-0.1 + (k as f64 + 0.5) * 1e-4, &mut v);
                v[0]
            })
            .sum::<f64>()
            / 8000.0;
        assert!((avg[0] - numeric).abs() < 1e-10);
    }

    #[test]
    fn physical_mapping_on_linear_system() {
        let lambda = 0.5;
        let sys = scalar_linear(lambda);
        let p = RiemannProblem::new(&sys, vec![0.5], vec![0.0]).unwrap();
        let t = 1.0;
        for scheme in [Scheme::Backward, Scheme::Semidiscrete] {
            for eps in [0.02, 0.01] {
                let run = run_physical(
                    &sys,
                    &InitialData::Riemann(p.clone()),
                    scheme,
                    eps,
                    t,
                    &StudySetup::default(),
                )
                .unwrap();
                let exact = ScalarRiemannSolution::new(&sys, &p, t).unwrap();
                let err = exact.l1_distance(&run.solution);
                let sigma = match scheme {
                    Scheme::Backward => lambda * (t * eps).sqrt(),
                    Scheme::Semidiscrete => (lambda * t * eps).sqrt(),
                };
                assert!(
                    err < 0.5 * (sigma + eps),
                    "{scheme} {eps}: {err} vs {}",
                    0.5 * (sigma + eps)
                );
                assert!(run.mass_defect < 1e-9, "{scheme}: {}", run.mass_defect);
            }
        }
    }

    #[test]
    fn single_epsilon_has_no_order() {
        let sys = SystemSpec::shifted_burgers();
        let p = RiemannProblem::new(&sys, vec![0.4], vec![0.0]).unwrap();
        let rec = epsilon_study(
            &sys,
            &p,
            Scheme::Semidiscrete,
            &[0.04],
            1.0,
            &StudySetup::default(),
        )
        .unwrap();
        assert_eq!(rec.entries.len(), 1);
        assert!(rec.order.is_none());
        assert!(epsilon_study(
            &sys,
            &p,
            Scheme::Semidiscrete,
            &[0.01, 0.02],
            1.0,
            &StudySetup::default()
        )
        .is_err());
    }

    #[test]
    fn constant_data_agree_exactly() {
        let sys = SystemSpec::chromatography();
        let p = RiemannProblem::new(&sys, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let setup = StudySetup {
            rescaled_dx: 0.05,
            ..StudySetup::default()
        };
        let d = cross_scheme_agreement(&sys, &p, &[0.04, 0.02], 1.0, &setup).unwrap();
        assert!(d.iter().all(|e| e.l1_distance == 0.0));
    }

    #[test]
    fn random_data_respect_the_budget() {
        for sys in [
            SystemSpec::linear(&[0.3, 0.7], Some(&[1.0, 0.5, 0.2, 1.0])).unwrap(),
            SystemSpec::shifted_burgers(),
            SystemSpec::chromatography(),
        ] {
            let a = random_small_tv(&sys, 7, 0.045, 20.0).unwrap();
            assert_eq!(a, random_small_tv(&sys, 7, 0.045, 20.0).unwrap());
            let g = a.sample_grid(1.0, -10.0, 0.05, 1000).unwrap();
            let tv = decompose_backward(&sys, &g).unwrap().total_variation();
            assert!(tv <= 0.05, "{}: {tv}", sys.name());
        }
    }

    #[test]
    fn lipschitz_requires_distinct_pairs() {
        let sys = scalar_linear(0.5);
        let p = InitialData::Riemann(RiemannProblem::new(&sys, vec![0.2], vec![0.0]).unwrap());
        let setup = StudySetup {
            rescaled_dx: 0.05,
            ..StudySetup::default()
        };
        assert!(lipschitz_study(
            &sys,
            &[(p.clone(), p.clone())],
            Scheme::Semidiscrete,
            0.04,
            0.4,
            &setup
        )
        .is_err());
        let q = perturbed(&p, &[1.0], 0.3, 0.05, 0.005);
        let r = lipschitz_study(&sys, &[(p, q)], Scheme::Semidiscrete, 0.04, 0.4, &setup).unwrap();
        assert!((r.constant - 1.0).abs() < 1e-6, "{}", r.constant);
    }
}
