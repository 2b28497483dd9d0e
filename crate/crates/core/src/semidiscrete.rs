//! Semi-discrete upwind scheme `du_n/dt + f(u_n) - f(u_{n-1}) = 0` on a
//! finite window of cells, integrated in time with classical RK4.

use crate::backward::check_window;
use crate::error::{Error, Result};
use crate::system::SystemSpec;

pub const DEFAULT_DT: f64 = 0.05;

/// Cells `n_min, n_min + 1, ...` of the lattice at time `t`. Every cell left
/// of the window holds `left_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub n_min: i64,
    pub time: f64,
    dim: usize,
    cells: Vec<f64>,
    left_state: Vec<f64>,
    /// `int_0^t (f(u_last) - f(left_state)) dt`, the net flux that has left
    /// the window.
    outflow: Vec<f64>,
}

impl LatticeState {
    pub fn new(n_min: i64, cells: Vec<f64>, left_state: Vec<f64>, time: f64) -> Result<Self> {
        let dim = left_state.len();
        if dim == 0 || !cells.len().is_multiple_of(dim) || cells.len() < 2 * dim {
            return Err(Error::Parameter(format!(
                "lattice needs at least two cells of dimension {dim}, got {} values",
                cells.len()
            )));
        }
        if !(time >= 0.0) {
            return Err(Error::Parameter(format!(
                "time must be nonnegative, got {time}"
            )));
        }
        Ok(Self {
            n_min,
            time,
            dim,
            cells,
            outflow: vec![0.0; dim],
            left_state,
        })
    }

    /// Restores the accumulated outflow of a saved state.
    pub fn with_outflow(mut self, outflow: Vec<f64>) -> Result<Self> {
        if outflow.len() != self.dim {
            return Err(Error::Parameter(format!(
                "outflow has {} components, state has {}",
                outflow.len(),
                self.dim
            )));
        }
        self.outflow = outflow;
        Ok(self)
    }

    pub fn from_fn(
        n_min: i64,
        len: usize,
        left_state: &[f64],
        mut f: impl FnMut(i64, &mut [f64]),
    ) -> Result<Self> {
        let dim = left_state.len();
        let mut cells = vec![0.0; len * dim];
        for (i, c) in cells.chunks_mut(dim.max(1)).enumerate() {
            f(n_min + i as i64, c);
        }
        Self::new(n_min, cells, left_state.to_vec(), 0.0)
    }

    pub fn len(&self) -> usize {
        self.cells.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> i64 {
        self.n_min + self.len() as i64 - 1
    }

    /// Cell by position in the window.
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.cells[i * self.dim..(i + 1) * self.dim]
    }

    /// Cell by lattice index; cells left of the window return `left_state`.
    pub fn at(&self, n: i64) -> Option<&[f64]> {
        if n < self.n_min {
            Some(&self.left_state)
        } else if n > self.n_max() {
            None
        } else {
            Some(self.cell((n - self.n_min) as usize))
        }
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn left_state(&self) -> &[f64] {
        &self.left_state
    }

    pub fn outflow(&self) -> &[f64] {
        &self.outflow
    }

    /// `sum_n (u_n - left_state)` per component.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in self.cells.chunks(self.dim) {
            for (k, v) in c.iter().enumerate() {
                m[k] += v - self.left_state[k];
            }
        }
        m
    }

    /// [`LatticeState::mass`] plus the accumulated outflow; constant in time.
    pub fn conserved_total(&self) -> Vec<f64> {
        self.mass()
            .iter()
            .zip(&self.outflow)
            .map(|(m, o)| m + o)
            .collect()
    }

    pub fn same_window(&self, other: &LatticeState) -> bool {
        self.dim == other.dim && self.n_min == other.n_min && self.len() == other.len()
    }

    /// `sum_n sum_k |u - w|` over the window.
    pub fn l1_distance(&self, other: &LatticeState) -> f64 {
        debug_assert!(self.same_window(other));
        self.cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn check_admissible(&self, system: &SystemSpec) -> Result<()> {
        for i in 0..self.len() {
            if !system.admissible(self.cell(i)) {
                return Err(Error::LatticeEscape {
                    cell: self.n_min + i as i64,
                    time: self.time,
                });
            }
        }
        system.check_admissible(&self.left_state)
    }
}

/// Writes `-(f(u_n) - f(u_{n-1}))` for every cell into `out` and returns
/// nothing; `fbuf` holds `f` of every cell afterwards and `fleft = f(left)`.
fn rhs_into(system: &SystemSpec, cells: &[f64], fleft: &[f64], fbuf: &mut [f64], out: &mut [f64]) {
    let n = fleft.len();
    for (u, f) in cells.chunks(n).zip(fbuf.chunks_mut(n)) {
        system.flux(u, f);
    }
    for k in 0..n {
        out[k] = -(fbuf[k] - fleft[k]);
    }
    for i in n..cells.len() {
        out[i] = -(fbuf[i] - fbuf[i - n]);
    }
}

/// `du_n/dt` for every cell of the window, with `left_state` as the ghost
/// neighbour of the first cell.
pub fn semidiscrete_rhs(system: &SystemSpec, state: &LatticeState) -> Result<Vec<f64>> {
    state.check_admissible(system)?;
    let n = state.dim();
    let mut fleft = vec![0.0; n];
    system.flux(state.left_state(), &mut fleft);
    let mut fbuf = vec![0.0; state.cells.len()];
    let mut out = vec![0.0; state.cells.len()];
    rhs_into(system, &state.cells, &fleft, &mut fbuf, &mut out);
    Ok(out)
}

/// `v_n = u_n - u_{n-1}` for every cell of the window.
pub fn lattice_difference(state: &LatticeState) -> Vec<f64> {
    let n = state.dim();
    let mut out = vec![0.0; state.cells.len()];
    for k in 0..n {
        out[k] = state.cells[k] - state.left_state[k];
    }
    for i in n..state.cells.len() {
        out[i] = state.cells[i] - state.cells[i - n];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    /// Hook every `stride` time steps (and at the start and the end).
    pub stride: usize,
    /// Relative outflow-tail tolerance for the window rule.
    pub tail_tolerance: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            stride: 20,
            tail_tolerance: 1e-8,
        }
    }
}

/// Scratch space for one RK4 step of the lattice.
pub(crate) struct Rk4Lattice {
    pub(crate) fleft: Vec<f64>,
    fbuf: Vec<f64>,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4Lattice {
    pub(crate) fn new(system: &SystemSpec, state: &LatticeState) -> Self {
        let len = state.cells.len();
        let mut fleft = vec![0.0; state.dim()];
        system.flux(state.left_state(), &mut fleft);
        Self {
            fleft,
            fbuf: vec![0.0; len],
            k: [
                vec![0.0; len],
                vec![0.0; len],
                vec![0.0; len],
                vec![0.0; len],
            ],
            stage: vec![0.0; len],
        }
    }

    /// Advances `state` by `dt`, accumulating the outflow with the same
    /// stage weights so that mass plus outflow is conserved exactly.
    pub(crate) fn step(&mut self, system: &SystemSpec, state: &mut LatticeState, dt: f64) {
        let n = state.dim;
        let len = state.cells.len();
        let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        let offsets = [0.0, 0.5, 0.5, 1.0];
        let mut edge = vec![0.0; n];
        for s in 0..4 {
            if s == 0 {
                self.stage.copy_from_slice(&state.cells);
            } else {
                let prev = &self.k[s - 1];
                for i in 0..len {
                    self.stage[i] = state.cells[i] + offsets[s] * dt * prev[i];
                }
            }
            rhs_into(
                system,
                &self.stage,
                &self.fleft,
                &mut self.fbuf,
                &mut self.k[s],
            );
            for k in 0..n {
                edge[k] += weights[s] * (self.fbuf[len - n + k] - self.fleft[k]);
            }
        }
        for i in 0..len {
            state.cells[i] += dt
                * (weights[0] * self.k[0][i]
                    + weights[1] * self.k[1][i]
                    + weights[2] * self.k[2][i]
                    + weights[3] * self.k[3][i]);
        }
        for k in 0..n {
            state.outflow[k] += dt * edge[k];
        }
        state.time += dt;
    }
}

/// Number of steps and the uniform step size that land exactly on `t_final`.
pub(crate) fn step_plan(t_final: f64, dt: f64) -> (usize, f64) {
    if t_final == 0.0 {
        return (0, dt);
    }
    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    (steps, t_final / steps as f64)
}

/// Integrates the lattice from `initial.time` for a duration `t_final`.
pub fn integrate<H>(
    system: &SystemSpec,
    initial: &LatticeState,
    t_final: f64,
    options: &IntegrateOptions,
    mut hook: H,
) -> Result<LatticeState>
where
    H: FnMut(&LatticeState),
{
    if !(t_final >= 0.0) {
        return Err(Error::Parameter(format!(
            "t_final must be nonnegative, got {t_final}"
        )));
    }
    if !(options.dt > 0.0) {
        return Err(Error::Parameter(format!(
            "dt must be positive, got {}",
            options.dt
        )));
    }
    initial.check_admissible(system)?;
    let mut state = initial.clone();
    hook(&state);
    let (steps, dt) = step_plan(t_final, options.dt);
    let start = state.time;
    let stride = options.stride.max(1);
    let mut rk = Rk4Lattice::new(system, &state);
    for step in 1..=steps {
        rk.step(system, &mut state, dt);
        state.time = start + step as f64 * dt;
        state.check_admissible(system)?;
        check_window(&state.cells, state.dim, options.tail_tolerance)?;
        if step % stride == 0 || step == steps {
            hook(&state);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::fundamental_semidiscrete;
    use crate::system::StateBox;

    fn scalar(lambda: f64) -> SystemSpec {
        SystemSpec::linear_in_box(&[lambda], None, StateBox::cube(1, -2.0, 2.0).unwrap(), 0.0)
            .unwrap()
    }

    #[test]
    fn constant_state_has_zero_rhs() {
        let sys = SystemSpec::chromatography();
        let s = LatticeState::from_fn(-3, 10, &[1.2, 0.8], |_, u| u.copy_from_slice(&[1.2, 0.8]))
            .unwrap();
        assert!(semidiscrete_rhs(&sys, &s)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(lattice_difference(&s).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_cell_rhs() {
        let s = LatticeState::from_fn(-2, 6, &[0.0], |n, u| u[0] = f64::from(n == 1)).unwrap();
        let rhs = semidiscrete_rhs(&scalar(0.5), &s).unwrap();
        assert_eq!(rhs, vec![0.0, 0.0, 0.0, -0.5, 0.5, 0.0]);
    }

    #[test]
    fn chromatography_rhs_value() {
        let sys = SystemSpec::chromatography();
        let s = LatticeState::new(0, vec![1.0, 1.0, 1.1, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        let rhs = semidiscrete_rhs(&sys, &s).unwrap();
        let expected = [-(1.1 / 3.1 - 1.0 / 3.0), -(1.0 / 3.1 - 1.0 / 3.0)];
        assert!((rhs[2] - expected[0]).abs() < 1e-15 && (rhs[3] - expected[1]).abs() < 1e-15);
        assert!((rhs[2] + 0.021_505).abs() < 5e-7 && (rhs[3] - 0.010_753).abs() < 5e-7);
    }

    #[test]
    fn differences() {
        let s = LatticeState::from_fn(0, 6, &[0.2], |n, u| u[0] = if n >= 3 { 0.7 } else { 0.2 })
            .unwrap();
        let v = lattice_difference(&s);
        for (a, b) in v.iter().zip([0.0, 0.0, 0.0, 0.5, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let ramp = LatticeState::from_fn(0, 6, &[-0.25], |n, u| u[0] = 0.25 * n as f64).unwrap();
        assert!(lattice_difference(&ramp)
            .iter()
            .all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_duration_returns_initial() {
        let sys = SystemSpec::shifted_burgers();
        let s = LatticeState::from_fn(0, 10, &[0.3], |n, u| u[0] = if n < 5 { 0.3 } else { 0.0 })
            .unwrap();
        let out = integrate(&sys, &s, 0.0, &IntegrateOptions::default(), |_| {}).unwrap();
        assert_eq!(out, s);
        assert!(integrate(&sys, &s, -1.0, &IntegrateOptions::default(), |_| {}).is_err());
    }

    #[test]
    fn poisson_law_from_unit_cell() {
        let sys = scalar(0.5);
        let s = LatticeState::from_fn(-5, 60, &[0.0], |n, u| u[0] = f64::from(n == 0)).unwrap();
        let mut sums = Vec::new();
        let out = integrate(
            &sys,
            &s,
            4.0,
            &IntegrateOptions {
                stride: 1,
                ..Default::default()
            },
            |st| sums.push(st.cells().iter().sum::<f64>()),
        )
        .unwrap();
        for n in out.n_min..=out.n_max() {
            let err = (out.at(n).unwrap()[0] - fundamental_semidiscrete(n, 4.0, 0.5)).abs();
            assert!(err < 1e-6, "cell {n}: {err}");
        }
        assert!((out.at(0).unwrap()[0] - 0.135_335).abs() < 1e-6);
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn mass_plus_outflow_is_conserved() {
        let sys = SystemSpec::chromatography();
        let s = LatticeState::from_fn(0, 80, &[1.0, 1.0], |n, u| {
            u[0] = if n >= 10 { 1.03 } else { 1.0 };
            u[1] = if n >= 20 { 0.98 } else { 1.0 };
        })
        .unwrap();
        let c0 = s.conserved_total();
        let out = integrate(&sys, &s, 30.0, &IntegrateOptions::default(), |st| {
            let c = st.conserved_total();
            for k in 0..2 {
                assert!((c[k] - c0[k]).abs() < 1e-9 * (1.0 + st.time));
            }
        })
        .unwrap();
        assert!(out.outflow().iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn escape_reports_cell_and_time() {
        let sys = SystemSpec::shifted_burgers();
        let s = LatticeState::from_fn(0, 10, &[0.3], |n, u| u[0] = if n == 4 { 0.9 } else { 0.3 })
            .unwrap();
        assert!(matches!(
            integrate(&sys, &s, 1.0, &IntegrateOptions::default(), |_| {}),
            Err(Error::LatticeEscape { cell: 4, .. })
        ));
    }

    #[test]
    fn window_rule() {
        let sys = scalar(0.5);
        let s = LatticeState::from_fn(0, 20, &[0.0], |n, u| u[0] = f64::from(n == 2)).unwrap();
        let err = integrate(&sys, &s, 40.0, &IntegrateOptions::default(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::WindowExceeded { .. }));
    }
}
