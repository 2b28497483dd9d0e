//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//! Run with `cargo test -p conslab --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::process::ExitCode;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use conslab::backward::{run_backward, BackwardOptions, GridFunction};
use conslab::functionals::{
    decompose_backward, integrate_tangent, linearized_backward_step, C0_CANDIDATES, DEFAULT_SLACK,
};
use conslab::harness::{
    cross_scheme_agreement, epsilon_study, lipschitz_study, lyapunov_experiment, perturbed,
    random_small_tv, InitialData, LyapunovSetup, RiemannProblem, Scheme, StudySetup,
    DEFAULT_EPSILONS, DEFAULT_T_PHYSICAL,
};
use conslab::kernels::{
    backward_oracle_relative, fundamental_backward, fundamental_semidiscrete, interaction_backward,
    interaction_semidiscrete, semidiscrete_oracle_relative, KernelParams,
};
use conslab::semidiscrete::{integrate, IntegrateOptions, LatticeState};
use conslab::{backward_step, StateBox, SystemSpec};

const MASS_TOLERANCE: f64 = 1e-9;
const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Worst conservation and reconstruction figures seen by any run.
#[derive(Default)]
struct Invariants {
    mass: (f64, String),
    reconstruction: (f64, String),
    observations: usize,
}

impl Invariants {
    fn record(&mut self, run: &str, mass: Option<f64>, reconstruction: Option<f64>) {
        self.observations += 1;
        if let Some(m) = mass {
            if !(m <= self.mass.0) {
                self.mass = (m, run.to_string());
            }
        }
        if let Some(r) = reconstruction {
            if !(r <= self.reconstruction.0) {
                self.reconstruction = (r, run.to_string());
            }
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn(&Mutex<Invariants>) -> conslab::Result<Outcome>;

fn wide_scalar(lambda: f64) -> SystemSpec {
    SystemSpec::linear_in_box(&[lambda], None, StateBox::cube(1, -1e3, 1e3).unwrap(), 0.0).unwrap()
}

fn scalar_linear(lambda: f64) -> SystemSpec {
    SystemSpec::linear_in_box(&[lambda], None, StateBox::cube(1, -1.0, 1.0).unwrap(), 0.1).unwrap()
}

fn builtins() -> Vec<SystemSpec> {
    vec![
        SystemSpec::linear(&[0.3, 0.7], Some(&[1.0, 0.5, 0.2, 1.0])).unwrap(),
        SystemSpec::shifted_burgers(),
        SystemSpec::chromatography(),
    ]
}

fn kernel_closed_forms(_: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let pairs = [(0.9, 0.1), (0.7, 0.3), (0.55, 0.45)];
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (l, m) in pairs {
        let p = KernelParams::new(l, m)?;
        for x0 in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let closed = interaction_backward(x0, p);
            let (oracle, _) = backward_oracle_relative(x0, p)?;
            worst = worst.max((closed - oracle).abs() / closed.abs());
            count += 1;
        }
        for n0 in [-5, -1, 0, 1, 5] {
            let closed = interaction_semidiscrete(n0, p);
            let (oracle, _) = semidiscrete_oracle_relative(n0, p)?;
            worst = worst.max((closed - oracle).abs() / closed.abs());
            count += 1;
        }
    }
    Ok(Outcome {
        pass: worst < 1e-6,
        detail: format!("{count} comparisons, worst relative disagreement {worst:.2e} (< 1e-6)"),
    })
}

fn gamma_error(dx: f64, width: f64, inv: &Mutex<Invariants>) -> conslab::Result<f64> {
    let lambda = 0.5;
    let sys = wide_scalar(lambda);
    let x_min = -0.5;
    let len = (20.5 / dx).round() as usize + 1;
    let spike = GridFunction::constant(x_min, dx, len, &[0.0])?.with_hat(&[1.0], 0.0, width);
    let mut defect = 0.0_f64;
    let records = run_backward(
        &sys,
        &spike,
        5,
        &BackwardOptions::for_system(&sys),
        |_, c, p| {
            defect = defect.max(conslab::backward::mass_defect(&sys, p, c));
        },
    )?;
    let last = &records.last().expect("five steps").profile;
    let recon = decompose_backward(&sys, last)?.reconstruction_error();
    inv.lock()
        .unwrap()
        .record(&format!("gamma dx={dx}"), Some(defect), Some(recon));
    let err: f64 = (0..last.len())
        .map(|i| (last.node(i)[0] - fundamental_backward(5, last.x(i), lambda)).abs())
        .sum::<f64>()
        * dx;
    Ok(err)
}

fn fundamental_solutions(inv: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let sys = wide_scalar(0.5);
    let delta = LatticeState::from_fn(-5, 80, &[0.0], |n, u| u[0] = f64::from(n == 0))?;
    let mut mass = 0.0_f64;
    let out = integrate(&sys, &delta, 4.0, &IntegrateOptions::default(), |s| {
        mass = mass.max((s.cells().iter().sum::<f64>() - 1.0).abs());
    })?;
    let poisson = (out.n_min..=out.n_max())
        .map(|n| (out.at(n).unwrap()[0] - fundamental_semidiscrete(n, 4.0, 0.5)).abs())
        .fold(0.0, f64::max);
    let recon = conslab::functionals::decompose_semidiscrete(&sys, &out)?.reconstruction_error();
    inv.lock()
        .unwrap()
        .record("poisson", Some(mass), Some(recon));
    let coarse = gamma_error(1e-3, 1e-2, inv)?;
    let fine = gamma_error(5e-4, 5e-3, inv)?;
    Ok(Outcome {
        pass: poisson < 1e-6 && coarse < 0.02 && fine <= 0.5 * coarse,
        detail: format!(
            "Poisson max cell error {poisson:.2e} (< 1e-6); Gamma L1 {coarse:.3e} (< 0.02), refined {fine:.3e} (ratio {:.3} <= 0.5)",
            fine / coarse
        ),
    })
}

fn straight_lines(_: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let chrom = SystemSpec::chromatography().verify_straight_line(100, 1e-4)?;
    let mut exact = Vec::new();
    for sys in [
        SystemSpec::linear(&[0.3, 0.7], None)?,
        SystemSpec::linear(&[0.3, 0.7], Some(&[1.0, 0.5, 0.2, 1.0]))?,
        SystemSpec::linear(
            &[0.2, 0.5, 0.8],
            Some(&[1.0, 0.2, 0.1, 0.3, 1.0, 0.2, 0.0, 0.4, 1.0]),
        )?,
        scalar_linear(0.5),
        SystemSpec::shifted_burgers(),
    ] {
        exact.push(sys.verify_straight_line(100, 1e-4)?);
    }
    Ok(Outcome {
        pass: chrom < 1e-6 && exact.iter().all(|d| *d == 0.0),
        detail: format!(
            "chromatography defect {chrom:.2e} (< 1e-6); linear/scalar defects {exact:?} (== 0)"
        ),
    })
}

fn lyapunov(inv: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let setup = LyapunovSetup::default();
    let jobs: Vec<(SystemSpec, Scheme)> = builtins()
        .into_iter()
        .flat_map(|s| [(s.clone(), Scheme::Backward), (s, Scheme::Semidiscrete)])
        .collect();
    let outcomes: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(sys, scheme)| scope.spawn(|| lyapunov_experiment(sys, *scheme, &setup)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut pass = true;
    let mut parts = Vec::new();
    for outcome in outcomes {
        let o = outcome?;
        let tv_ok = o.initial_tv.iter().all(|tv| *tv <= 0.05);
        pass &= tv_ok && o.uniform_c0.is_some() && o.series.len() == setup.count;
        inv.lock().unwrap().record(
            &format!("lyapunov {} {}", o.system, o.scheme),
            Some(o.max_mass_defect),
            Some(o.max_reconstruction_error),
        );
        let max_tv = o.initial_tv.iter().fold(0.0_f64, |m, v| m.max(*v));
        parts.push(format!(
            "{}/{}: C0={} (max TV0 {max_tv:.3})",
            o.system,
            o.scheme,
            o.uniform_c0.map_or("none".to_string(), |c| c.to_string())
        ));
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "{} data each, C0 in {C0_CANDIDATES:?}, slack {DEFAULT_SLACK:e}: {}",
            setup.count,
            parts.join("; ")
        ),
    })
}

fn entropy_convergence(inv: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let burgers = SystemSpec::shifted_burgers();
    let linear = scalar_linear(0.5);
    let setup = StudySetup::default();
    let problems = [
        (
            "shock",
            &burgers,
            RiemannProblem::new(&burgers, vec![0.4], vec![0.0])?,
        ),
        (
            "rarefaction",
            &burgers,
            RiemannProblem::new(&burgers, vec![0.0], vec![0.4])?,
        ),
        (
            "linear",
            &linear,
            RiemannProblem::new(&linear, vec![0.5], vec![0.0])?,
        ),
    ];
    let jobs: Vec<_> = problems
        .iter()
        .flat_map(|(name, sys, p)| {
            [Scheme::Backward, Scheme::Semidiscrete].map(|s| (*name, *sys, p, s))
        })
        .collect();
    let records: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, sys, p, s)| {
                scope.spawn(|| {
                    epsilon_study(sys, p, *s, &DEFAULT_EPSILONS, DEFAULT_T_PHYSICAL, &setup)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut pass = true;
    let mut parts = Vec::new();
    for ((name, _, _, scheme), rec) in jobs.iter().zip(records) {
        let rec = rec?;
        for e in &rec.entries {
            inv.lock().unwrap().record(
                &format!("converge {name} {scheme} eps={}", e.epsilon),
                e.mass_defect,
                e.reconstruction_error,
            );
        }
        let errs: Vec<String> = rec
            .entries
            .iter()
            .map(|e| match (&e.l1_error, &e.failure) {
                (Some(v), _) => format!("{v:.2e}"),
                (None, f) => format!("failed: {}", f.as_deref().unwrap_or("?")),
            })
            .collect();
        if *name == "linear" {
            let order = rec.order.unwrap_or(f64::NAN);
            pass &= (order - 0.5).abs() <= 0.15 && rec.errors().len() == DEFAULT_EPSILONS.len();
            parts.push(format!("{name}/{scheme} order {order:.3}"));
        } else {
            pass &= rec.strictly_decreasing();
            parts.push(format!("{name}/{scheme} [{}]", errs.join(", ")));
        }
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

fn scheme_independence(inv: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let sys = SystemSpec::chromatography();
    let s = std::f64::consts::FRAC_1_SQRT_2 * 0.05;
    let p = RiemannProblem::new(&sys, vec![1.0, 1.0], vec![1.0 + s, 1.0 - s])?;
    let entries = cross_scheme_agreement(
        &sys,
        &p,
        &DEFAULT_EPSILONS,
        DEFAULT_T_PHYSICAL,
        &StudySetup::default(),
    )?;
    for e in &entries {
        inv.lock().unwrap().record(
            &format!("cross eps={}", e.epsilon),
            Some(e.mass_defect),
            Some(e.reconstruction_error),
        );
    }
    let first = entries[0].l1_distance;
    let last = entries[entries.len() - 1].l1_distance;
    let listed: Vec<String> = entries
        .iter()
        .map(|e| format!("{:.2e}", e.l1_distance))
        .collect();
    Ok(Outcome {
        pass: last > 0.0 && first / last >= 2.0,
        detail: format!(
            "distances [{}], reduction {:.2}x (>= 2)",
            listed.join(", "),
            first / last
        ),
    })
}

fn linearization_backward() -> conslab::Result<f64> {
    let sys = SystemSpec::shifted_burgers();
    let opts = BackwardOptions::for_system(&sys);
    let (dx, len) = (1e-3, 16001);
    let u0 = GridFunction::from_fn(-4.0, dx, len, &[0.3], |x, u| {
        u[0] = 0.3 - 0.15 * (1.0 + (x - 2.0).tanh())
    })?;
    let bump = GridFunction::from_fn(-4.0, dx, len, &[0.0], |x, u| {
        u[0] = (-4.0 * (x - 1.0).powi(2)).exp()
    })?;
    let u1 = backward_step(&sys, &u0, &opts)?;
    let h = linearized_backward_step(&sys, &u0, &u1, &bump)?;
    let delta = 1e-6;
    let mut moved = u0.clone();
    for i in 0..len {
        moved.node_mut(i)[0] += delta * bump.node(i)[0];
    }
    let u1d = backward_step(&sys, &moved, &opts)?;
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..len {
        err += ((u1d.node(i)[0] - u1.node(i)[0]) / delta - h.node(i)[0]).abs();
        norm += h.node(i)[0].abs();
    }
    Ok(err / norm)
}

fn linearization_lattice() -> conslab::Result<f64> {
    let sys = SystemSpec::chromatography();
    let l = LatticeState::from_fn(0, 80, &[1.0, 1.0], |n, u| {
        u[0] = if n >= 5 { 1.03 } else { 1.0 };
        u[1] = if n >= 12 { 0.97 } else { 1.0 };
    })?;
    let h0: Vec<f64> = (0..160)
        .map(|i| {
            if (15..25).contains(&(i / 2)) {
                if i % 2 == 0 {
                    1.0
                } else {
                    -0.5
                }
            } else {
                0.0
            }
        })
        .collect();
    let opts = IntegrateOptions::default();
    let t = 20.0;
    let (_, h) = integrate_tangent(&sys, &l, &h0, t, &opts)?;
    let base = integrate(&sys, &l, t, &opts, |_| {})?;
    let delta = 1e-6;
    let cells: Vec<f64> = l
        .cells()
        .iter()
        .zip(&h0)
        .map(|(u, d)| u + delta * d)
        .collect();
    let moved = integrate(
        &sys,
        &LatticeState::new(0, cells, vec![1.0, 1.0], 0.0)?,
        t,
        &opts,
        |_| {},
    )?;
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..h.len() {
        err += ((moved.cells()[i] - base.cells()[i]) / delta - h[i]).abs();
        norm += h[i].abs();
    }
    Ok(err / norm)
}

fn stability(inv: &Mutex<Invariants>) -> conslab::Result<Outcome> {
    let backward_rel = linearization_backward()?;
    let lattice_rel = linearization_lattice()?;
    let setup = StudySetup {
        x_left: -10.0,
        x_right: 90.0,
        rescaled_dx: 0.02,
        dt: 0.05,
    };
    let (eps, t) = (1.0, 40.0);
    let mut nonlinear = Vec::new();
    let mut linear = Vec::new();
    let diagonal = SystemSpec::linear(&[0.3, 0.7], None)?;
    for sys in [
        SystemSpec::chromatography(),
        SystemSpec::shifted_burgers(),
        diagonal.clone(),
    ] {
        let n = sys.dimension();
        let pairs: Vec<(InitialData, InitialData)> = (0..5)
            .map(|k| -> conslab::Result<_> {
                let a = random_small_tv(&sys, 100 + k, 0.04, 20.0)?;
                let direction: Vec<f64> = (0..n)
                    .map(|i| {
                        if (i + k as usize).is_multiple_of(2) {
                            1.0
                        } else {
                            -0.5
                        }
                    })
                    .collect();
                let b = perturbed(&a, &direction, 4.0 + 3.0 * k as f64, 2.0, 0.01);
                Ok((a, b))
            })
            .collect::<conslab::Result<_>>()?;
        for scheme in [Scheme::Backward, Scheme::Semidiscrete] {
            let r = lipschitz_study(&sys, &pairs, scheme, eps, t, &setup)?;
            inv.lock().unwrap().record(
                &format!("lipschitz {} {scheme}", sys.name()),
                Some(r.mass_defect),
                Some(r.reconstruction_error),
            );
            let max_d0 = r.initial_distances.iter().fold(0.0_f64, |m, v| m.max(*v));
            if max_d0 > 0.01 + 1e-12 {
                return Ok(Outcome {
                    pass: false,
                    detail: format!("pair set has initial distance {max_d0} > 0.01"),
                });
            }
            if sys.name() == diagonal.name() && sys.is_linear() {
                linear.push((format!("{scheme}"), r.constant));
            } else {
                nonlinear.push((format!("{}/{scheme}", sys.name()), r.constant));
            }
        }
    }
    let l_max = nonlinear
        .iter()
        .chain(&linear)
        .map(|x| x.1)
        .fold(0.0, f64::max);
    let pass = backward_rel < 1e-4
        && lattice_rel < 1e-5
        && l_max <= 10.0
        && linear.iter().all(|(_, l)| (l - 1.0).abs() <= 1e-6);
    let fmt = |v: &[(String, f64)]| {
        v.iter()
            .map(|(k, l)| format!("{k} {l:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(Outcome {
        pass,
        detail: format!(
            "tangent vs divided difference: backward {backward_rel:.2e} (< 1e-4), lattice {lattice_rel:.2e} (< 1e-5); L: {} (<= 10); linear L: {} (1 +- 1e-6)",
            fmt(&nonlinear),
            fmt(&linear)
        ),
    })
}

fn main() -> ExitCode {
    let invariants = Mutex::new(Invariants::default());
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let checks: [(u8, &str, Check, Option<Duration>); 7] = [
        (
            1,
            "kernel closed forms",
            kernel_closed_forms,
            Some(Duration::from_secs(30)),
        ),
        (
            2,
            "fundamental solutions",
            fundamental_solutions,
            minutes(2),
        ),
        (3, "straight-line condition", straight_lines, None),
        (4, "Lyapunov monotonicity", lyapunov, minutes(10)),
        (5, "entropy convergence", entropy_convergence, minutes(10)),
        (6, "scheme independence", scheme_independence, minutes(10)),
        (7, "stability", stability, None),
    ];
    let mut all = true;
    // sequential, so each timing covers only its own criterion
    for (id, name, check, budget) in &checks {
        let clock = Instant::now();
        let outcome = check(&invariants).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        let elapsed = clock.elapsed();
        let pass = outcome.pass && budget.is_none_or(|b| elapsed <= b);
        all &= pass;
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s{})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.map_or(String::new(), |b| format!(", budget {}s", b.as_secs()))
        );
    }
    let inv = invariants.into_inner().unwrap();
    let pass8 = inv.mass.0 <= MASS_TOLERANCE
        && inv.reconstruction.0 <= RECONSTRUCTION_TOLERANCE
        && inv.observations > 0;
    all &= pass8;
    println!(
        "criterion 8 [{}] conservation and reconstruction: worst mass defect {:.2e} ({}) <= {MASS_TOLERANCE:e}; worst reconstruction error {:.2e} ({}) <= {RECONSTRUCTION_TOLERANCE:e}; {} runs observed",
        if pass8 { "PASS" } else { "FAIL" },
        inv.mass.0,
        inv.mass.1,
        inv.reconstruction.0,
        inv.reconstruction.1,
        inv.observations
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
