//! Backward semigroup scheme.
//!
//! In rescaled units one step solves `u_n - u_{n-1} + A(u_n) u_{n,x} = 0`.
//! Because every speed is positive this is an ODE in `x`,
//! `u_n' = A(u_n)^{-1} (u_{n-1} - u_n)`, which is marched left to right with
//! classical RK4 from the inflow state. `u_{n-1}` is interpolated linearly
//! at half nodes.

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::SystemSpec;

/// Default smallness budget on the total variation of the data.
pub const DEFAULT_TV_BUDGET: f64 = 0.1;

/// Fraction of the grid at the outflow end that must stay quiet.
pub const TAIL_FRACTION: f64 = 0.05;

/// Samples of a state profile on a uniform grid with a constant inflow state.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub x_min: f64,
    pub dx: f64,
    dim: usize,
    values: Vec<f64>,
    left_state: Vec<f64>,
}

impl GridFunction {
    /// `values` holds the nodes contiguously, `dim` entries per node.
    pub fn new(x_min: f64, dx: f64, values: Vec<f64>, left_state: Vec<f64>) -> Result<Self> {
        let dim = left_state.len();
        if dim == 0 || !values.len().is_multiple_of(dim) || values.len() < 2 * dim {
            return Err(Error::Parameter(format!(
                "grid needs at least two nodes of dimension {dim}, got {} values",
                values.len()
            )));
        }
        if !(dx > 0.0) || !x_min.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid grid origin {x_min} / spacing {dx}"
            )));
        }
        Ok(Self {
            x_min,
            dx,
            dim,
            values,
            left_state,
        })
    }

    pub fn from_fn(
        x_min: f64,
        dx: f64,
        len: usize,
        left_state: &[f64],
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self> {
        let dim = left_state.len();
        let mut values = vec![0.0; len * dim];
        for (i, node) in values.chunks_mut(dim.max(1)).enumerate() {
            f(x_min + i as f64 * dx, node);
        }
        Self::new(x_min, dx, values, left_state.to_vec())
    }

    pub fn constant(x_min: f64, dx: f64, len: usize, state: &[f64]) -> Result<Self> {
        Self::from_fn(x_min, dx, len, state, |_, u| u.copy_from_slice(state))
    }

    /// `base + direction * hat(x)` with a unit-mass hat of support
    /// `[center - width/2, center + width/2]`.
    pub fn with_hat(mut self, direction: &[f64], center: f64, width: f64) -> Self {
        let peak = 2.0 / width;
        for i in 0..self.len() {
            let x = self.x(i);
            let h = (peak * (1.0 - 2.0 * (x - center).abs() / width)).max(0.0);
            if h > 0.0 {
                for (v, d) in self.node_mut(i).iter_mut().zip(direction) {
                    *v += h * d;
                }
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.len() - 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_state(&self) -> &[f64] {
        &self.left_state
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.x_min == other.x_min
            && self.dx == other.dx
    }

    /// `int (u - left_state) dx` per component (rectangle rule).
    pub fn mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for node in self.values.chunks(self.dim) {
            for (k, v) in node.iter().enumerate() {
                m[k] += v - self.left_state[k];
            }
        }
        m.iter_mut().for_each(|v| *v *= self.dx);
        m
    }

    /// `sum_i sum_k |u_k - w_k| dx`.
    pub fn l1_distance(&self, other: &GridFunction) -> f64 {
        debug_assert!(self.same_grid(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.dx
    }

    /// Sum of Euclidean jumps between neighbouring nodes.
    pub fn variation(&self) -> f64 {
        variation(&self.values, self.dim, 0, self.len())
    }

    pub fn check_admissible(&self, system: &SystemSpec) -> Result<()> {
        for i in 0..self.len() {
            if !system.admissible(self.node(i)) {
                return Err(Error::GridEscape {
                    node: i,
                    x: self.x(i),
                });
            }
        }
        system.check_admissible(&self.left_state)
    }
}

pub(crate) fn variation(values: &[f64], dim: usize, from: usize, to: usize) -> f64 {
    (from + 1..to)
        .map(|i| {
            let a = &values[(i - 1) * dim..i * dim];
            let b = &values[i * dim..(i + 1) * dim];
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Errors if the last [`TAIL_FRACTION`] of nodes carries more than
/// `tolerance` times the total variation.
pub(crate) fn check_window(values: &[f64], dim: usize, tolerance: f64) -> Result<()> {
    let len = values.len() / dim;
    let start = len - ((len as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, len - 1);
    let total = variation(values, dim, 0, len);
    let tail = variation(values, dim, start - 1, len);
    if total > 0.0 && tail > tolerance * total {
        return Err(Error::WindowExceeded { tail });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOptions {
    /// Smallness budget on [`GridFunction::variation`] of the data;
    /// `None` disables the check.
    pub tv_budget: Option<f64>,
    /// Record every `stride`-th step (the last step is always recorded).
    pub stride: usize,
    /// Relative outflow-tail tolerance for the window rule.
    pub tail_tolerance: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            tv_budget: None,
            stride: 1,
            tail_tolerance: 1e-8,
        }
    }
}

impl BackwardOptions {
    /// The budget applies to nonlinear systems; linear and scalar
    /// problems need no smallness assumption.
    pub fn for_system(system: &SystemSpec) -> Self {
        Self {
            tv_budget: (!system.is_linear() && system.dimension() >= 2)
                .then_some(DEFAULT_TV_BUDGET),
            ..Self::default()
        }
    }
}

/// A recorded pair `(u_n, u_{n-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardRunState {
    pub step_index: usize,
    pub profile: GridFunction,
    pub previous: Option<GridFunction>,
}

struct Marcher<'a> {
    system: &'a SystemSpec,
    n: usize,
    jac: Vec<f64>,
}

impl<'a> Marcher<'a> {
    fn new(system: &'a SystemSpec) -> Self {
        let n = system.dimension();
        Self {
            system,
            n,
            jac: vec![0.0; n * n],
        }
    }

    /// `out = A(u)^{-1} (p - u)`
    fn slope(&mut self, u: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        self.system.jacobian(u, &mut self.jac);
        for k in 0..self.n {
            out[k] = p[k] - u[k];
        }
        linalg::solve_in_place(self.n, &mut self.jac, out)
            .map_err(|_| Error::Internal(format!("singular Jacobian at {u:?}")))
    }
}

/// One backward step from `previous`.
pub fn backward_step(
    system: &SystemSpec,
    previous: &GridFunction,
    options: &BackwardOptions,
) -> Result<GridFunction> {
    let n = system.dimension();
    if previous.dim() != n {
        return Err(Error::Parameter(format!(
            "profile dimension {} does not match system dimension {n}",
            previous.dim()
        )));
    }
    if let Some(budget) = options.tv_budget {
        let tv = previous.variation();
        if tv > budget {
            return Err(Error::TvBudget { tv, budget });
        }
    }
    system.check_admissible(previous.left_state())?;

    let len = previous.len();
    let dx = previous.dx;
    let mut marcher = Marcher::new(system);
    let mut out = vec![0.0; len * n];
    let mut u = previous.left_state().to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut mid = vec![0.0; n];
    out[..n].copy_from_slice(&u);
    for i in 0..len - 1 {
        let p0 = previous.node(i);
        let p1 = previous.node(i + 1);
        for k in 0..n {
            mid[k] = 0.5 * (p0[k] + p1[k]);
        }
        marcher.slope(&u, p0, &mut k1)?;
        for k in 0..n {
            stage[k] = u[k] + 0.5 * dx * k1[k];
        }
        marcher.slope(&stage, &mid, &mut k2)?;
        for k in 0..n {
            stage[k] = u[k] + 0.5 * dx * k2[k];
        }
        marcher.slope(&stage, &mid, &mut k3)?;
        for k in 0..n {
            stage[k] = u[k] + dx * k3[k];
        }
        marcher.slope(&stage, p1, &mut k4)?;
        for k in 0..n {
            u[k] += dx / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if !system.admissible(&u) {
            return Err(Error::GridEscape {
                node: i + 1,
                x: previous.x(i + 1),
            });
        }
        out[(i + 1) * n..(i + 2) * n].copy_from_slice(&u);
    }
    GridFunction::new(previous.x_min, dx, out, previous.left_state().to_vec())
}

/// Applies [`backward_step`] `steps` times. `hook(n, u_n, u_{n-1})` runs
/// after every step; states are recorded every `options.stride` steps.
pub fn run_backward<H>(
    system: &SystemSpec,
    initial: &GridFunction,
    steps: usize,
    options: &BackwardOptions,
    mut hook: H,
) -> Result<Vec<BackwardRunState>>
where
    H: FnMut(usize, &GridFunction, &GridFunction),
{
    if steps == 0 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    let stride = options.stride.max(1);
    let mut records = Vec::new();
    let mut current = initial.clone();
    for step in 1..=steps {
        let next = backward_step(system, &current, options).map_err(|e| e.at_step(step))?;
        check_window(next.values(), next.dim(), options.tail_tolerance)
            .map_err(|e| e.at_step(step))?;
        hook(step, &next, &current);
        if step % stride == 0 || step == steps {
            records.push(BackwardRunState {
                step_index: step,
                profile: next.clone(),
                previous: Some(current.clone()),
            });
        }
        current = next;
    }
    Ok(records)
}

/// L1 norm of `u_n - u_{n-1} + A(u_n) u_{n,x}` with centered differences
/// at interior nodes.
pub fn equation_residual(
    system: &SystemSpec,
    previous: &GridFunction,
    current: &GridFunction,
) -> f64 {
    let n = system.dimension();
    let mut jac = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    let mut agrad = vec![0.0; n];
    let mut total = 0.0;
    for i in 1..current.len() - 1 {
        let u = current.node(i);
        system.jacobian(u, &mut jac);
        for k in 0..n {
            grad[k] = (current.node(i + 1)[k] - current.node(i - 1)[k]) / (2.0 * current.dx);
        }
        linalg::mat_vec(n, &jac, &grad, &mut agrad);
        total += (0..n)
            .map(|k| (u[k] - previous.node(i)[k] + agrad[k]).abs())
            .sum::<f64>();
    }
    total * current.dx
}

/// Largest component of `|int (u_n - u_{n-1}) dx + f(u_n(x_max)) - f(left)|`
/// with the trapezoid rule: the discrete conservation defect of one step.
pub fn mass_defect(system: &SystemSpec, previous: &GridFunction, current: &GridFunction) -> f64 {
    let n = system.dimension();
    let len = current.len();
    let mut total = vec![0.0; n];
    for i in 0..len {
        let w = if i == 0 || i + 1 == len { 0.5 } else { 1.0 };
        for k in 0..n {
            total[k] += w * current.dx * (current.node(i)[k] - previous.node(i)[k]);
        }
    }
    let mut f_end = vec![0.0; n];
    let mut f_left = vec![0.0; n];
    system.flux(current.node(len - 1), &mut f_end);
    system.flux(current.left_state(), &mut f_left);
    (0..n)
        .map(|k| (total[k] + f_end[k] - f_left[k]).abs())
        .fold(0.0, f64::max)
}
