//! Wave decompositions, interaction potentials, the Lyapunov functional
//! `TV + C0 Q`, source-term diagnostics and linearized evolutions.

use serde::Serialize;

use crate::backward::{mass_defect, run_backward, BackwardOptions, GridFunction};
use crate::error::{Error, Result};
use crate::kernels::{BackwardWeight, SemidiscreteWeight};
use crate::linalg;
use crate::semidiscrete::{integrate, step_plan, IntegrateOptions, LatticeState, Rk4Lattice};
use crate::system::{SpectralData, SystemSpec};

/// Candidate values of `C0` scanned by the monotonicity experiments.
pub const C0_CANDIDATES: [f64; 4] = [1.0, 5.0, 10.0, 50.0];
/// Allowed increase of the Lyapunov functional between recorded samples.
pub const DEFAULT_SLACK: f64 = 1e-4;
/// Relative step for directional derivatives of the Jacobian.
pub const JACOBIAN_FD_STEP: f64 = 1e-5;

/// Which eigenvector basis produced a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// `r_i(u)` at the node itself.
    Pointwise,
    /// `r_i` of the averaged matrix of two neighbouring cells.
    Averaged,
}

/// Strengths `v^i` of the decomposed vectors at every location, with the
/// spectral data used for the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveComponents {
    basis: Basis,
    dim: usize,
    origin: f64,
    spacing: f64,
    weights: Vec<f64>,
    decomposed: Vec<f64>,
    strengths: Vec<f64>,
    eigenvalues: Vec<f64>,
    right: Vec<f64>,
    left: Vec<f64>,
}

impl WaveComponents {
    fn with_capacity(basis: Basis, dim: usize, origin: f64, spacing: f64, len: usize) -> Self {
        Self {
            basis,
            dim,
            origin,
            spacing,
            weights: Vec::with_capacity(len),
            decomposed: Vec::with_capacity(len * dim),
            strengths: Vec::with_capacity(len * dim),
            eigenvalues: Vec::with_capacity(len * dim),
            right: Vec::with_capacity(len * dim * dim),
            left: Vec::with_capacity(len * dim * dim),
        }
    }

    fn push(&mut self, weight: f64, vector: &[f64], spectral: &SpectralData) {
        let n = self.dim;
        self.weights.push(weight);
        self.decomposed.extend_from_slice(vector);
        let start = self.strengths.len();
        self.strengths.resize(start + n, 0.0);
        spectral.project(vector, &mut self.strengths[start..]);
        self.eigenvalues.extend_from_slice(spectral.eigenvalues());
        self.right.extend_from_slice(spectral.right_vectors());
        for i in 0..n {
            self.left.extend_from_slice(spectral.left(i));
        }
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Position of the first location (`x_min`, or `n_min` for a lattice).
    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight of a location.
    pub fn weight(&self, loc: usize) -> f64 {
        self.weights[loc]
    }

    /// `v^i` for every family at a location.
    pub fn strengths(&self, loc: usize) -> &[f64] {
        &self.strengths[loc * self.dim..(loc + 1) * self.dim]
    }

    /// The vector that was decomposed at a location.
    pub fn decomposed(&self, loc: usize) -> &[f64] {
        &self.decomposed[loc * self.dim..(loc + 1) * self.dim]
    }

    pub fn eigenvalues(&self, loc: usize) -> &[f64] {
        &self.eigenvalues[loc * self.dim..(loc + 1) * self.dim]
    }

    pub fn right(&self, loc: usize, family: usize) -> &[f64] {
        let n = self.dim;
        let start = loc * n * n + family * n;
        &self.right[start..start + n]
    }

    pub fn left(&self, loc: usize, family: usize) -> &[f64] {
        let n = self.dim;
        let start = loc * n * n + family * n;
        &self.left[start..start + n]
    }

    /// Weighted `|v^i|` of one family at every location.
    pub fn family_magnitudes(&self, family: usize) -> Vec<f64> {
        (0..self.len())
            .map(|loc| self.weights[loc] * self.strengths[loc * self.dim + family].abs())
            .collect()
    }

    pub fn family_variation(&self, family: usize) -> f64 {
        self.family_magnitudes(family).iter().sum()
    }

    /// `sum over locations and families of weight * |v^i|`.
    pub fn total_variation(&self) -> f64 {
        (0..self.dim).map(|i| self.family_variation(i)).sum()
    }

    /// Largest `|sum_i v^i r_i - w|` over all locations and components.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for loc in 0..self.len() {
            let v = self.strengths(loc);
            for k in 0..n {
                let rebuilt: f64 = (0..n).map(|i| v[i] * self.right(loc, i)[k]).sum();
                worst = worst.max((rebuilt - self.decomposed(loc)[k]).abs());
            }
        }
        worst
    }

    fn same_layout(&self, other: &WaveComponents) -> bool {
        self.dim == other.dim
            && self.len() == other.len()
            && self.origin == other.origin
            && self.spacing == other.spacing
    }
}

/// Centered differences inside, one-sided at the two ends; trapezoid
/// weights make `sum w |u_x|` telescope for monotone data.
fn grid_derivative(values: &[f64], dim: usize, dx: f64, loc: usize, out: &mut [f64]) {
    let len = values.len() / dim;
    let (a, b, h) = if loc == 0 {
        (0, 1, dx)
    } else if loc + 1 == len {
        (len - 2, len - 1, dx)
    } else {
        (loc - 1, loc + 1, 2.0 * dx)
    };
    for k in 0..dim {
        out[k] = (values[b * dim + k] - values[a * dim + k]) / h;
    }
}

fn trapezoid_weight(loc: usize, len: usize, dx: f64) -> f64 {
    if loc == 0 || loc + 1 == len {
        0.5 * dx
    } else {
        dx
    }
}

/// Projects `u_x` on the eigenvectors of `Df(u)` at every node.
pub fn decompose_backward(system: &SystemSpec, profile: &GridFunction) -> Result<WaveComponents> {
    let n = system.dimension();
    let len = profile.len();
    let mut out =
        WaveComponents::with_capacity(Basis::Pointwise, n, profile.x_min, profile.dx, len);
    let mut grad = vec![0.0; n];
    for loc in 0..len {
        grid_derivative(profile.values(), n, profile.dx, loc, &mut grad);
        let spectral = system.eigen_decompose(profile.node(loc))?;
        out.push(trapezoid_weight(loc, len, profile.dx), &grad, &spectral);
    }
    Ok(out)
}

/// Projects `u_n - u_{n-1}` on the eigenvectors of the averaged matrix of
/// the two cells.
pub fn decompose_semidiscrete(system: &SystemSpec, state: &LatticeState) -> Result<WaveComponents> {
    let n = system.dimension();
    let len = state.len();
    let mut out = WaveComponents::with_capacity(Basis::Averaged, n, state.n_min as f64, 1.0, len);
    let mut diff = vec![0.0; n];
    for loc in 0..len {
        let prev = if loc == 0 {
            state.left_state()
        } else {
            state.cell(loc - 1)
        };
        let cur = state.cell(loc);
        for k in 0..n {
            diff[k] = cur[k] - prev[k];
        }
        let spectral = system.averaged_jacobian(prev, cur)?;
        out.push(1.0, &diff, &spectral);
    }
    Ok(out)
}

/// `sum_{a,b} W(a - b) A_a B_b` with `W(d) = 1` for `d >= 0` and
/// `W(d) = ratio^{-d}` for `d < 0`, in linear time.
pub(crate) fn pair_sum(a: &[f64], b: &[f64], ratio: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let len = a.len();
    let mut ahead = 0.0;
    let mut total = 0.0;
    // suffix pass: ahead = sum_{b > a} ratio^{b-a} B_b
    let mut tails = vec![0.0; len];
    for i in (0..len.saturating_sub(1)).rev() {
        ahead = ratio * (b[i + 1] + ahead);
        tails[i] = ahead;
    }
    let mut behind = 0.0;
    for i in 0..len {
        behind += b[i];
        total += a[i] * (behind + tails[i]);
    }
    total
}

/// Interaction potential of the backward scheme for the pair
/// `(u_n, u_{n-1})`, with the exponential weight `P_0`.
pub fn potential_backward(
    system: &SystemSpec,
    current: &WaveComponents,
    previous: &WaveComponents,
) -> Result<f64> {
    if !current.same_layout(previous) {
        return Err(Error::Parameter("components do not share a grid".into()));
    }
    let n = current.dim();
    if n < 2 || current.is_empty() {
        return Ok(0.0);
    }
    let weight = BackwardWeight::for_system(system)?;
    let ratio = (-weight.rate() * current.spacing()).exp();
    let scale = 1.0 / weight.separation();
    let cur: Vec<Vec<f64>> = (0..n).map(|i| current.family_magnitudes(i)).collect();
    let prev: Vec<Vec<f64>> = (0..n).map(|i| previous.family_magnitudes(i)).collect();
    let mut q = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            q += pair_sum(&cur[i], &cur[j], ratio)
                + pair_sum(&prev[i], &cur[j], ratio)
                + pair_sum(&cur[i], &prev[j], ratio);
        }
    }
    Ok(scale * q)
}

/// Interaction potential of the lattice, with the geometric weight `P` and
/// absolute values on every product.
pub fn potential_semidiscrete(system: &SystemSpec, components: &WaveComponents) -> Result<f64> {
    let n = components.dim();
    if n < 2 || components.is_empty() {
        return Ok(0.0);
    }
    let weight = SemidiscreteWeight::for_system(system)?;
    let ratio = weight.ratio();
    let scale = 1.0 / weight.separation();
    // arrays over cells n_min-1 ..= n_max + 1, zero outside the window
    let padded = |family: usize, shift: usize| -> Vec<f64> {
        let mags = components.family_magnitudes(family);
        let mut out = vec![0.0; mags.len() + 2];
        out[1 + shift..1 + shift + mags.len()].copy_from_slice(&mags);
        out
    };
    let mut q = 0.0;
    for i in 0..n {
        let (a, a_shift) = (padded(i, 0), padded(i, 1));
        for j in i + 1..n {
            let (b, b_shift) = (padded(j, 0), padded(j, 1));
            q += pair_sum(&a, &b, ratio)
                + pair_sum(&a_shift, &b, ratio)
                + pair_sum(&a, &b_shift, ratio);
        }
    }
    Ok(scale * q)
}

/// L1 size of the source terms of the backward component equations,
/// `sum_k v^k_{n-1} (r_k(u_{n-1}) - r_k(u_n)) - sum_k lambda_k v^k_n D_x r_k(u_n)`,
/// projected on `l^i(u_n)`.
pub fn component_residual_backward(
    current: &WaveComponents,
    previous: &WaveComponents,
) -> Result<f64> {
    if !current.same_layout(previous) {
        return Err(Error::Parameter("components do not share a grid".into()));
    }
    let n = current.dim();
    let len = current.len();
    let dx = current.spacing();
    let mut source = vec![0.0; n];
    let mut dr = vec![0.0; n];
    let mut total = 0.0;
    for loc in 0..len {
        source.iter_mut().for_each(|s| *s = 0.0);
        let (a, b, h) = if loc == 0 {
            (0, 1.min(len - 1), dx)
        } else if loc + 1 == len {
            (len - 2, len - 1, dx)
        } else {
            (loc - 1, loc + 1, 2.0 * dx)
        };
        for k in 0..n {
            let vp = previous.strengths(loc)[k];
            let vc = current.strengths(loc)[k];
            let lam = current.eigenvalues(loc)[k];
            for m in 0..n {
                dr[m] = (current.right(b, k)[m] - current.right(a, k)[m]) / h;
                source[m] +=
                    vp * (previous.right(loc, k)[m] - current.right(loc, k)[m]) - lam * vc * dr[m];
            }
        }
        let projected: f64 = (0..n)
            .map(|i| linalg::dot(current.left(loc, i), &source).abs())
            .sum();
        total += current.weight(loc) * projected;
    }
    Ok(total)
}

/// L1 size of the source terms of the lattice component equations,
/// `-sum_k v^k_n d/dt r_{k,n} + sum_k lambda_{k,n-1} v^k_{n-1} (r_{k,n-1} - r_{k,n})`,
/// projected on `l^i_n`. The time derivative of the averaged eigenvectors
/// is taken along the flow by central differences.
pub fn component_residual_semidiscrete(
    system: &SystemSpec,
    state: &LatticeState,
    components: &WaveComponents,
) -> Result<f64> {
    const ETA: f64 = 1e-3;
    let n = system.dimension();
    let rates = crate::semidiscrete::semidiscrete_rhs(system, state)?;
    let zero = vec![0.0; n];
    let mut plus = (vec![0.0; n], vec![0.0; n]);
    let mut minus = (vec![0.0; n], vec![0.0; n]);
    let mut source = vec![0.0; n];
    let mut total = 0.0;
    for loc in 0..state.len() {
        let (prev, prev_rate) = if loc == 0 {
            (state.left_state(), &zero[..])
        } else {
            (state.cell(loc - 1), &rates[(loc - 1) * n..loc * n])
        };
        let cur = state.cell(loc);
        let cur_rate = &rates[loc * n..(loc + 1) * n];
        for k in 0..n {
            plus.0[k] = prev[k] + ETA * prev_rate[k];
            plus.1[k] = cur[k] + ETA * cur_rate[k];
            minus.0[k] = prev[k] - ETA * prev_rate[k];
            minus.1[k] = cur[k] - ETA * cur_rate[k];
        }
        let sp = system.averaged_jacobian(&plus.0, &plus.1)?;
        let sm = system.averaged_jacobian(&minus.0, &minus.1)?;
        source.iter_mut().for_each(|s| *s = 0.0);
        for k in 0..n {
            let vc = components.strengths(loc)[k];
            for m in 0..n {
                source[m] -= vc * (sp.right(k)[m] - sm.right(k)[m]) / (2.0 * ETA);
            }
            if loc > 0 {
                let vp = components.strengths(loc - 1)[k];
                let lam = components.eigenvalues(loc - 1)[k];
                for m in 0..n {
                    source[m] +=
                        lam * vp * (components.right(loc - 1, k)[m] - components.right(loc, k)[m]);
                }
            }
        }
        total += (0..n)
            .map(|i| linalg::dot(components.left(loc, i), &source).abs())
            .sum::<f64>();
    }
    Ok(total)
}

/// Functional values of one recorded state, independent of `C0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalSample {
    pub step: usize,
    pub time: f64,
    pub total_variation: f64,
    pub interaction_potential: f64,
    pub source_magnitude: f64,
    pub reconstruction_error: f64,
    /// Backward runs: conservation defect of the step. Lattice runs: drift
    /// of mass plus outflow since the start.
    pub mass_defect: f64,
}

/// Samples along one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FunctionalSeries {
    pub samples: Vec<FunctionalSample>,
}

/// Functional values of one recorded state for a given `C0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub step: usize,
    pub time: f64,
    pub total_variation: f64,
    pub interaction_potential: f64,
    pub lyapunov: f64,
    pub c0: f64,
    pub source_magnitude: f64,
    /// Set when the Lyapunov value exceeds the previous one by more than the slack.
    pub increase_flagged: bool,
}

impl FunctionalSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_reconstruction_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.reconstruction_error)
            .fold(0.0, f64::max)
    }

    pub fn max_mass_defect(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.mass_defect)
            .fold(0.0, f64::max)
    }
}

/// Lyapunov values `TV + C0 Q` along a series, flagging every increase
/// larger than `slack`.
pub fn lyapunov_track(series: &FunctionalSeries, c0: f64, slack: f64) -> Vec<FunctionalReport> {
    let mut reports: Vec<FunctionalReport> = Vec::with_capacity(series.len());
    for s in &series.samples {
        let lyapunov = s.total_variation + c0 * s.interaction_potential;
        let increase_flagged = reports
            .last()
            .is_some_and(|p| lyapunov > p.lyapunov + slack);
        reports.push(FunctionalReport {
            step: s.step,
            time: s.time,
            total_variation: s.total_variation,
            interaction_potential: s.interaction_potential,
            lyapunov,
            c0,
            source_magnitude: s.source_magnitude,
            increase_flagged,
        });
    }
    reports
}

/// Whether `TV + C0 Q` is nonincreasing within `slack` along the series.
pub fn is_monotone(series: &FunctionalSeries, c0: f64, slack: f64) -> bool {
    lyapunov_track(series, c0, slack)
        .iter()
        .all(|r| !r.increase_flagged)
}

/// Smallest candidate `C0` for which every series is monotone.
pub fn smallest_uniform_c0(
    series: &[FunctionalSeries],
    candidates: &[f64],
    slack: f64,
) -> Option<f64> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .find(|&c0| series.iter().all(|s| is_monotone(s, c0, slack)))
}

/// Functionals of the backward pair `(u_n, u_{n-1})`.
pub fn sample_backward(
    system: &SystemSpec,
    step: usize,
    current: &GridFunction,
    previous: &GridFunction,
) -> Result<FunctionalSample> {
    let prev = decompose_backward(system, previous)?;
    let cur = decompose_backward(system, current)?;
    Ok(FunctionalSample {
        step,
        time: step as f64,
        total_variation: cur.total_variation(),
        interaction_potential: potential_backward(system, &cur, &prev)?,
        source_magnitude: component_residual_backward(&cur, &prev)?,
        reconstruction_error: cur.reconstruction_error().max(prev.reconstruction_error()),
        mass_defect: mass_defect(system, previous, current),
    })
}

/// Functionals of a lattice snapshot; the mass defect is the drift of
/// mass plus outflow away from `reference_total`.
pub fn sample_semidiscrete(
    system: &SystemSpec,
    step: usize,
    state: &LatticeState,
    reference_total: &[f64],
) -> Result<FunctionalSample> {
    let comps = decompose_semidiscrete(system, state)?;
    let drift = state
        .conserved_total()
        .iter()
        .zip(reference_total)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(FunctionalSample {
        step,
        time: state.time,
        total_variation: comps.total_variation(),
        interaction_potential: potential_semidiscrete(system, &comps)?,
        source_magnitude: component_residual_semidiscrete(system, state, &comps)?,
        reconstruction_error: comps.reconstruction_error(),
        mass_defect: drift,
    })
}

/// Runs the backward scheme and samples the functionals after every
/// recorded step. `Q` couples `u_n` with `u_{n-1}`.
pub fn backward_series(
    system: &SystemSpec,
    initial: &GridFunction,
    steps: usize,
    options: &BackwardOptions,
) -> Result<FunctionalSeries> {
    let stride = options.stride.max(1);
    let mut series = FunctionalSeries::default();
    let mut failure = None;
    let mut prev_components: Option<WaveComponents> = None;
    let mut sample = |step: usize,
                      current: &GridFunction,
                      previous: &GridFunction|
     -> Result<FunctionalSample> {
        let prev = match prev_components.take() {
            Some(c) => c,
            None => decompose_backward(system, previous)?,
        };
        let cur = decompose_backward(system, current)?;
        let out = FunctionalSample {
            step,
            time: step as f64,
            total_variation: cur.total_variation(),
            interaction_potential: potential_backward(system, &cur, &prev)?,
            source_magnitude: component_residual_backward(&cur, &prev)?,
            reconstruction_error: cur.reconstruction_error().max(prev.reconstruction_error()),
            mass_defect: mass_defect(system, previous, current),
        };
        prev_components = Some(cur);
        Ok(out)
    };
    let recording = BackwardOptions {
        stride: 1,
        ..options.clone()
    };
    run_backward(
        system,
        initial,
        steps,
        &recording,
        |step, current, previous| {
            if failure.is_some() {
                return;
            }
            // every step feeds the next one its decomposition; only strided steps are kept
            match sample(step, current, previous) {
                Ok(s) if step % stride == 0 || step == steps => series.samples.push(s),
                Ok(_) => {}
                Err(e) => failure = Some(e.at_step(step)),
            }
        },
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(series),
    }
}

/// Integrates the lattice and samples the functionals at every hook call.
pub fn semidiscrete_series(
    system: &SystemSpec,
    initial: &LatticeState,
    t_final: f64,
    options: &IntegrateOptions,
) -> Result<FunctionalSeries> {
    let start = initial.conserved_total();
    let mut series = FunctionalSeries::default();
    let mut failure = None;
    let mut step = 0;
    integrate(system, initial, t_final, options, |state| {
        if failure.is_some() {
            return;
        }
        match sample_semidiscrete(system, step, state, &start) {
            Ok(s) => series.samples.push(s),
            Err(e) => failure = Some(e),
        }
        step += 1;
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(series),
    }
}

/// `DA(u)[h]` by central differences of the Jacobian along `h`.
fn jacobian_derivative(
    system: &SystemSpec,
    u: &[f64],
    h: &[f64],
    scratch: &mut [Vec<f64>; 3],
    out: &mut [f64],
) {
    let size = linalg::norm2(h);
    if size == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let eta = JACOBIAN_FD_STEP * system.state_box().diameter().max(1e-12);
    let [plus, minus, jac] = scratch;
    for k in 0..u.len() {
        plus[k] = u[k] + eta * h[k] / size;
        minus[k] = u[k] - eta * h[k] / size;
    }
    system.jacobian(plus, jac);
    out.copy_from_slice(jac);
    system.jacobian(minus, jac);
    for (o, m) in out.iter_mut().zip(jac.iter()) {
        *o = (*o - m) * size / (2.0 * eta);
    }
}

/// Tangent of [`crate::backward::backward_step`]: given `u_n` computed
/// from `u_{n-1}`, advances a perturbation `h_{n-1}` of `u_{n-1}` to the
/// perturbation `h_n` of `u_n`. The march differentiates every RK4 stage
/// of `u' = A(u)^{-1}(u_{n-1} - u)`, which gives
/// `h' = A(u)^{-1}(h_{n-1} - h - (DA(u) h) u')`.
pub fn linearized_backward_step(
    system: &SystemSpec,
    u_prev: &GridFunction,
    u_curr: &GridFunction,
    h_prev: &GridFunction,
) -> Result<GridFunction> {
    let n = system.dimension();
    if !u_prev.same_grid(u_curr) || !u_prev.same_grid(h_prev) || u_prev.dim() != n {
        return Err(Error::Parameter(
            "profiles and perturbation must share a grid".into(),
        ));
    }
    let len = u_curr.len();
    let dx = u_curr.dx;
    let offsets = [0.0, 0.5, 0.5, 1.0];
    let weights = [1.0, 2.0, 2.0, 1.0];
    let mut jac = vec![0.0; n * n];
    let mut da = vec![0.0; n * n];
    let mut scratch = [vec![0.0; n], vec![0.0; n], vec![0.0; n * n]];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dk = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let (mut stage, mut dstage, mut p, mut dp, mut rhs, mut tmp) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut out = vec![0.0; len * n];
    let mut h = vec![0.0; n];
    for i in 0..len - 1 {
        let u = u_curr.node(i);
        for s in 0..4 {
            let frac = offsets[s];
            for m in 0..n {
                p[m] = (1.0 - frac) * u_prev.node(i)[m] + frac * u_prev.node(i + 1)[m];
                dp[m] = (1.0 - frac) * h_prev.node(i)[m] + frac * h_prev.node(i + 1)[m];
                let (ks, dks) = if s == 0 {
                    (0.0, 0.0)
                } else {
                    (k[s - 1][m], dk[s - 1][m])
                };
                stage[m] = u[m] + frac * dx * ks;
                dstage[m] = h[m] + frac * dx * dks;
            }
            system.jacobian(&stage, &mut jac);
            let mut a = jac.clone();
            for m in 0..n {
                k[s][m] = p[m] - stage[m];
            }
            linalg::solve_in_place(n, &mut a, &mut k[s])
                .map_err(|_| Error::Internal(format!("singular Jacobian at {stage:?}")))?;
            jacobian_derivative(system, &stage, &dstage, &mut scratch, &mut da);
            linalg::mat_vec(n, &da, &k[s], &mut tmp);
            for m in 0..n {
                rhs[m] = dp[m] - dstage[m] - tmp[m];
            }
            let mut a = jac.clone();
            linalg::solve_in_place(n, &mut a, &mut rhs)
                .map_err(|_| Error::Internal(format!("singular Jacobian at {stage:?}")))?;
            dk[s].copy_from_slice(&rhs);
        }
        for m in 0..n {
            h[m] += dx / 6.0 * (0..4).map(|s| weights[s] * dk[s][m]).sum::<f64>();
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::GridEscape {
                node: i + 1,
                x: u_curr.x(i + 1),
            });
        }
        out[(i + 1) * n..(i + 2) * n].copy_from_slice(&h);
    }
    GridFunction::new(u_curr.x_min, dx, out, vec![0.0; n])
}

/// `dh_n/dt = -Df(u_n) h_n + Df(u_{n-1}) h_{n-1}`, with `h = 0` left of the
/// window.
pub fn linearized_semidiscrete_rhs(
    system: &SystemSpec,
    state: &LatticeState,
    h: &[f64],
) -> Result<Vec<f64>> {
    if h.len() != state.cells().len() {
        return Err(Error::Parameter(format!(
            "perturbation has {} values, lattice has {}",
            h.len(),
            state.cells().len()
        )));
    }
    state.check_admissible(system)?;
    let mut out = vec![0.0; h.len()];
    tangent_rhs(system, state.cells(), h, state.dim(), &mut out);
    Ok(out)
}

fn tangent_rhs(system: &SystemSpec, cells: &[f64], h: &[f64], n: usize, out: &mut [f64]) {
    let mut jac = vec![0.0; n * n];
    let mut prod = vec![0.0; n];
    let mut prev_prod = vec![0.0; n];
    for (c, (u, hv)) in cells.chunks(n).zip(h.chunks(n)).enumerate() {
        system.jacobian(u, &mut jac);
        linalg::mat_vec(n, &jac, hv, &mut prod);
        for k in 0..n {
            out[c * n + k] = -prod[k] + prev_prod[k];
        }
        prev_prod.copy_from_slice(&prod);
    }
}

/// Integrates the lattice together with a perturbation `h` by RK4 on the
/// joint system; the `h` part is the exact tangent of the `u` part.
pub fn integrate_tangent(
    system: &SystemSpec,
    initial: &LatticeState,
    h0: &[f64],
    t_final: f64,
    options: &IntegrateOptions,
) -> Result<(LatticeState, Vec<f64>)> {
    if h0.len() != initial.cells().len() {
        return Err(Error::Parameter(
            "perturbation does not match the lattice".into(),
        ));
    }
    if !(t_final >= 0.0 && options.dt > 0.0) {
        return Err(Error::Parameter(
            "t_final must be nonnegative and dt positive".into(),
        ));
    }
    initial.check_admissible(system)?;
    let n = initial.dim();
    let len = h0.len();
    let (steps, dt) = step_plan(t_final, options.dt);
    let start = initial.time;
    let mut state = initial.clone();
    let mut h = h0.to_vec();
    let mut rk = Rk4Lattice::new(system, &state);
    let offsets = [0.0, 0.5, 0.5, 1.0];
    let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    let mut dk = [
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    ];
    let mut ustage = vec![0.0; len];
    let mut hstage = vec![0.0; len];
    for step in 1..=steps {
        // u stages, reproduced exactly as the lattice step computes them
        let mut uk = [
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
        ];
        let mut fbuf = vec![0.0; len];
        for s in 0..4 {
            for i in 0..len {
                ustage[i] = state.cells()[i]
                    + if s == 0 {
                        0.0
                    } else {
                        offsets[s] * dt * uk[s - 1][i]
                    };
                hstage[i] = h[i]
                    + if s == 0 {
                        0.0
                    } else {
                        offsets[s] * dt * dk[s - 1][i]
                    };
            }
            for (u, f) in ustage.chunks(n).zip(fbuf.chunks_mut(n)) {
                system.flux(u, f);
            }
            for k in 0..n {
                uk[s][k] = -(fbuf[k] - rk.fleft[k]);
            }
            for i in n..len {
                uk[s][i] = -(fbuf[i] - fbuf[i - n]);
            }
            tangent_rhs(system, &ustage, &hstage, n, &mut dk[s]);
        }
        for i in 0..len {
            h[i] += dt * (0..4).map(|s| weights[s] * dk[s][i]).sum::<f64>();
        }
        rk.step(system, &mut state, dt);
        state.time = start + step as f64 * dt;
        state.check_admissible(system)?;
    }
    Ok((state, h))
}
