#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use conslab::backward::{run_backward, BackwardOptions, GridFunction};
use conslab::config::{parse_config, InitialSpec, RunConfig};
use conslab::functionals::{
    lyapunov_track, sample_backward, sample_semidiscrete, smallest_uniform_c0, FunctionalSeries,
    C0_CANDIDATES, DEFAULT_SLACK,
};
use conslab::harness::{
    cross_scheme_agreement, epsilon_study, fit_slope, lipschitz_study, perturbed, random_small_tv,
    InitialData, RiemannProblem, Scheme,
};
use conslab::io::{
    self, Manifest, Profile, ProfileMeta, RunRecord, SnapshotEntry, MANIFEST_FILE, RECORD_FILE,
};
use conslab::kernels::{self, BackwardWeight, KernelParams, SemidiscreteWeight};
use conslab::semidiscrete::{integrate, IntegrateOptions, LatticeState};
use conslab::{Error, SystemSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "conslab",
    version,
    about = "Backward and semidiscrete approximations of conservation laws"
)]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` from the config
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only report errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March the backward scheme and write grid profiles
    RunBackward,
    /// Integrate the upwind lattice and write snapshots
    RunSemidiscrete,
    /// Tabulate a kernel function
    Kernels(KernelArgs),
    /// Functional reports for a recorded run
    Diagnose {
        /// Run directory (or its record.json)
        record: PathBuf,
        /// Fix C0 instead of scanning the candidate set
        #[arg(long)]
        c0: Option<f64>,
        /// Exit with status 4 unless the Lyapunov functional is nonincreasing
        #[arg(long)]
        assert: bool,
    },
    /// Epsilon study against the exact or reference solution
    Converge,
    /// Distance between the two schemes for every epsilon
    Cross,
    /// Lipschitz constants over random small-variation pairs
    Stability,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelFn {
    FundamentalBackward,
    FundamentalSemidiscrete,
    InteractionBackward,
    InteractionSemidiscrete,
    WeightBackward,
    WeightSemidiscrete,
}

#[derive(clap::Args)]
struct KernelArgs {
    #[arg(value_enum)]
    function: KernelFn,
    /// Faster speed (also the speed of the fundamental solutions)
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
    /// Slower speed
    #[arg(long, default_value_t = 0.3)]
    mu: f64,
    /// Separation c for the weights
    #[arg(long, default_value_t = 0.2)]
    separation: f64,
    /// Speed cap K for the weights
    #[arg(long, default_value_t = 0.7)]
    speed_cap: f64,
    /// Step count n (backward) for the fundamental solution
    #[arg(long, default_value_t = 5)]
    n: u64,
    /// Time t for the semidiscrete fundamental solution
    #[arg(long, default_value_t = 4.0)]
    t: f64,
    /// Range start (real or integer argument)
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    from: f64,
    /// Range end
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    to: f64,
    /// Sample count for real arguments
    #[arg(long, default_value_t = 301)]
    points: usize,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Assert(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>().map(Error::root) {
            Some(Error::Config(_) | Error::Parse { .. }) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

struct RunContext {
    config_path: Option<PathBuf>,
    config_text: Option<String>,
    config: Option<RunConfig>,
    out: PathBuf,
    outputs: Vec<PathBuf>,
}

impl RunContext {
    fn new(cli: &Cli, needs_config: bool) -> Outcome<Self> {
        let (text, config) = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(Failure::Config)?;
                let cfg = parse_config(&text)
                    .with_context(|| format!("in {}", path.display()))
                    .map_err(Failure::Config)?;
                (Some(text), Some(cfg))
            }
            None if needs_config => {
                return Err(Failure::Config(anyhow!("this command needs --config PATH")))
            }
            None => (None, None),
        };
        let out = cli
            .out
            .clone()
            .or_else(|| config.as_ref().map(|c| c.output.clone()))
            .unwrap_or_else(|| PathBuf::from(conslab::config::DEFAULT_OUTPUT));
        fs::create_dir_all(&out)
            .with_context(|| format!("creating {}", out.display()))
            .map_err(Failure::Runtime)?;
        Ok(Self {
            config_path: cli.config.clone(),
            config_text: text,
            config,
            out,
            outputs: Vec::new(),
        })
    }

    fn config(&self) -> &RunConfig {
        self.config.as_ref().expect("checked at construction")
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(PathBuf::from(name));
        self.out.join(name)
    }

    fn finish(&self, command: &str, clock: Instant) -> Outcome {
        let manifest = Manifest {
            command: command.to_string(),
            version: Manifest::version_string(),
            config_path: self.config_path.clone(),
            config_text: self.config_text.clone(),
            config: self.config.clone(),
            outputs: self.outputs.clone(),
            wall_time_seconds: clock.elapsed().as_secs_f64(),
        };
        io::write_json(&self.out.join(MANIFEST_FILE), &manifest)?;
        Ok(())
    }
}

fn riemann(cfg: &RunConfig, system: &SystemSpec) -> Outcome<RiemannProblem> {
    match &cfg.initial {
        InitialSpec::Riemann {
            left,
            right,
            position,
        } => Ok(RiemannProblem::new(system, left.clone(), right.clone())?.at(*position)),
        _ => Err(Failure::Config(anyhow!(
            "initial.kind: this command needs riemann data"
        ))),
    }
}

fn backward_initial(cfg: &RunConfig, system: &SystemSpec) -> Outcome<GridFunction> {
    let grid = cfg.grid.ok_or_else(|| {
        Failure::Config(anyhow!(
            "grid: missing required table for the backward scheme"
        ))
    })?;
    let len = grid.len();
    Ok(match &cfg.initial {
        InitialSpec::Riemann { .. } => InitialData::Riemann(riemann(cfg, system)?)
            .sample_grid(1.0, grid.x_min, grid.dx, len)?,
        InitialSpec::Spike {
            direction,
            center,
            width,
        } => GridFunction::constant(grid.x_min, grid.dx, len, &vec![0.0; system.dimension()])?
            .with_hat(direction, *center, width.unwrap_or(10.0 * grid.dx)),
        InitialSpec::File { path } => {
            let (g, meta) =
                io::read_grid(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(w) = meta.system_warning(system.name()) {
                warn!("{w}");
            }
            g
        }
    })
}

fn lattice_initial(cfg: &RunConfig, system: &SystemSpec) -> Outcome<LatticeState> {
    let window = cfg.window.ok_or_else(|| {
        Failure::Config(anyhow!(
            "window: missing required table for the semidiscrete scheme"
        ))
    })?;
    let len = window.len();
    Ok(match &cfg.initial {
        InitialSpec::Riemann { .. } => {
            InitialData::Riemann(riemann(cfg, system)?).sample_lattice(1.0, window.n_min, len)?
        }
        InitialSpec::Spike {
            direction,
            center,
            width,
        } => {
            let zero = vec![0.0; system.dimension()];
            let w = width.unwrap_or(1.0);
            // unit mass spread over the cells within half a width of the center
            let cells: Vec<i64> = (window.n_min..=window.n_max)
                .filter(|n| (*n as f64 - center).abs() <= 0.5 * w)
                .collect();
            let share = 1.0 / cells.len().max(1) as f64;
            LatticeState::from_fn(window.n_min, len, &zero, |n, u| {
                if cells.contains(&n) {
                    for (v, d) in u.iter_mut().zip(direction) {
                        *v = share * d;
                    }
                }
            })?
        }
        InitialSpec::File { path } => {
            let (l, meta) =
                io::read_lattice(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(w) = meta.system_warning(system.name()) {
                warn!("{w}");
            }
            l
        }
    })
}

fn cmd_run_backward(ctx: &mut RunContext) -> Outcome {
    let cfg = ctx.config().clone();
    let system = cfg.system.build()?;
    let initial = backward_initial(&cfg, &system)?;
    let mut options = BackwardOptions::for_system(&system);
    options.stride = cfg.stride;
    if cfg.functionals.tv_budget.is_some() {
        options.tv_budget = cfg.functionals.tv_budget;
    }
    let steps = cfg.backward_steps();
    let records = run_backward(&system, &initial, steps, &options, |step, _, _| {
        info!("backward step {step}/{steps}");
    })?;
    let mut snapshots = Vec::new();
    let write =
        |ctx: &mut RunContext, name: String, g: &GridFunction, step: usize| -> Outcome<PathBuf> {
            let path = ctx.path(&name);
            io::write_profile(
                &path,
                &Profile::Grid(g.clone()),
                &ProfileMeta::new(system.name(), step as f64),
            )?;
            Ok(PathBuf::from(name))
        };
    let file = write(ctx, "profile_000000.csv".into(), &initial, 0)?;
    snapshots.push(SnapshotEntry {
        step: 0,
        time: 0.0,
        file,
        previous: None,
    });
    for r in &records {
        let n = r.step_index;
        let file = write(ctx, format!("profile_{n:06}.csv"), &r.profile, n)?;
        let recorded_before = snapshots.last().is_some_and(|s| s.step + 1 == n);
        let previous = match (&r.previous, recorded_before) {
            (Some(p), false) => Some(write(ctx, format!("previous_{n:06}.csv"), p, n - 1)?),
            _ => None,
        };
        snapshots.push(SnapshotEntry {
            step: n,
            time: n as f64,
            file,
            previous,
        });
    }
    let record = RunRecord {
        system: cfg.system.clone(),
        scheme: Scheme::Backward,
        snapshots,
    };
    let path = ctx.path(RECORD_FILE);
    io::write_json(&path, &record)?;
    info!(
        "wrote {} snapshots to {}",
        record.snapshots.len(),
        ctx.out.display()
    );
    Ok(())
}

fn cmd_run_semidiscrete(ctx: &mut RunContext) -> Outcome {
    let cfg = ctx.config().clone();
    let system = cfg.system.build()?;
    let initial = lattice_initial(&cfg, &system)?;
    let options = IntegrateOptions {
        dt: cfg.dt,
        stride: cfg.stride,
        ..IntegrateOptions::default()
    };
    let mut snaps: Vec<LatticeState> = Vec::new();
    integrate(&system, &initial, cfg.lattice_time(), &options, |s| {
        snaps.push(s.clone())
    })?;
    let mut snapshots = Vec::new();
    for (k, s) in snaps.iter().enumerate() {
        let step = ((s.time - initial.time) / cfg.dt).round() as usize;
        let name = format!("snapshot_{k:06}.csv");
        let path = ctx.path(&name);
        io::write_profile(
            &path,
            &Profile::Lattice(s.clone()),
            &ProfileMeta::new(system.name(), s.time),
        )?;
        snapshots.push(SnapshotEntry {
            step,
            time: s.time,
            file: name.into(),
            previous: None,
        });
    }
    let record = RunRecord {
        system: cfg.system.clone(),
        scheme: Scheme::Semidiscrete,
        snapshots,
    };
    let path = ctx.path(RECORD_FILE);
    io::write_json(&path, &record)?;
    info!(
        "wrote {} snapshots to {}",
        record.snapshots.len(),
        ctx.out.display()
    );
    Ok(())
}

fn cmd_kernels(ctx: &mut RunContext, a: &KernelArgs) -> Outcome {
    let params = || KernelParams::new(a.lambda, a.mu);
    let integer = matches!(
        a.function,
        KernelFn::FundamentalSemidiscrete
            | KernelFn::InteractionSemidiscrete
            | KernelFn::WeightSemidiscrete
    );
    let args: Vec<f64> = if integer {
        (a.from.ceil() as i64..=a.to.floor() as i64)
            .map(|n| n as f64)
            .collect()
    } else {
        let m = a.points.max(2);
        (0..m)
            .map(|i| a.from + (a.to - a.from) * i as f64 / (m - 1) as f64)
            .collect()
    };
    if args.is_empty() || !(a.to >= a.from) {
        return Err(Failure::Config(anyhow!(
            "empty range [{}, {}]",
            a.from,
            a.to
        )));
    }
    let (column, f): (&str, Box<dyn Fn(f64) -> f64>) = match a.function {
        KernelFn::FundamentalBackward => {
            if a.n == 0 || !(a.lambda > 0.0) {
                return Err(Failure::Config(anyhow!("need n >= 1 and lambda > 0")));
            }
            let (n, l) = (a.n, a.lambda);
            (
                "x",
                Box::new(move |x| kernels::fundamental_backward(n, x, l)),
            )
        }
        KernelFn::FundamentalSemidiscrete => {
            if !(a.lambda > 0.0) || !(a.t >= 0.0) {
                return Err(Failure::Config(anyhow!("need lambda > 0 and t >= 0")));
            }
            let (t, l) = (a.t, a.lambda);
            (
                "n",
                Box::new(move |n| kernels::fundamental_semidiscrete(n as i64, t, l)),
            )
        }
        KernelFn::InteractionBackward => {
            let p = params().map_err(|e| Failure::Config(e.into()))?;
            ("x0", Box::new(move |x| kernels::interaction_backward(x, p)))
        }
        KernelFn::InteractionSemidiscrete => {
            let p = params().map_err(|e| Failure::Config(e.into()))?;
            (
                "n0",
                Box::new(move |n| kernels::interaction_semidiscrete(n as i64, p)),
            )
        }
        KernelFn::WeightBackward => {
            let w = BackwardWeight::new(a.separation, a.speed_cap)
                .map_err(|e| Failure::Config(e.into()))?;
            ("x", Box::new(move |x| w.eval(x)))
        }
        KernelFn::WeightSemidiscrete => {
            let w = SemidiscreteWeight::new(a.separation, a.speed_cap)
                .map_err(|e| Failure::Config(e.into()))?;
            ("k", Box::new(move |k| w.eval(k as i64)))
        }
    };
    let rows: Vec<Vec<f64>> = args.iter().map(|x| vec![*x, f(*x)]).collect();
    let name = format!(
        "kernel_{}.csv",
        a.function
            .to_possible_value()
            .expect("not skipped")
            .get_name()
    );
    let path = ctx.path(&name);
    io::write_table(&path, &[column, "value"], &rows)?;
    info!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseSummary {
    scheme: Scheme,
    system: String,
    c0: Option<f64>,
    candidates: Vec<f64>,
    slack: f64,
    flagged_steps: Vec<usize>,
    max_reconstruction_error: f64,
    max_mass_defect: f64,
}

fn cmd_diagnose(ctx: &mut RunContext, record: &Path, c0: Option<f64>, assert: bool) -> Outcome {
    let (dir, record_path) = if record.is_dir() {
        (record.to_path_buf(), record.join(RECORD_FILE))
    } else {
        (
            record.parent().map(Path::to_path_buf).unwrap_or_default(),
            record.to_path_buf(),
        )
    };
    let rec: RunRecord = io::read_json(&record_path)
        .with_context(|| format!("reading {}", record_path.display()))?;
    let system = rec.system.build()?;
    if let Some(cfg) = &ctx.config {
        if cfg.system != rec.system {
            warn!(
                "record was written for {}, config names {}",
                rec.system.name(),
                cfg.system.name()
            );
        }
    }
    let (candidates, slack) = match &ctx.config {
        Some(cfg) => (cfg.functionals.c0.clone(), cfg.functionals.slack),
        None => (C0_CANDIDATES.to_vec(), DEFAULT_SLACK),
    };
    let load_grid = |f: &Path| -> Outcome<GridFunction> {
        let path = dir.join(f);
        Ok(io::read_grid(&path)
            .with_context(|| format!("reading {}", path.display()))?
            .0)
    };
    let mut series = FunctionalSeries::default();
    match rec.scheme {
        Scheme::Backward => {
            let mut last: Option<(usize, GridFunction)> = None;
            for s in &rec.snapshots {
                let current = load_grid(&s.file)?;
                if s.step > 0 {
                    let previous = match (&s.previous, last.take()) {
                        (Some(p), _) => load_grid(p)?,
                        (None, Some((step, g))) if step + 1 == s.step => g,
                        _ => {
                            return Err(Failure::Runtime(anyhow!(
                                "snapshot {} has no recorded predecessor",
                                s.step
                            )))
                        }
                    };
                    series
                        .samples
                        .push(sample_backward(&system, s.step, &current, &previous)?);
                }
                last = Some((s.step, current));
            }
        }
        Scheme::Semidiscrete => {
            let mut reference: Option<Vec<f64>> = None;
            for s in &rec.snapshots {
                let path = dir.join(&s.file);
                let (state, _) = io::read_lattice(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let reference = reference.get_or_insert_with(|| state.conserved_total());
                series
                    .samples
                    .push(sample_semidiscrete(&system, s.step, &state, reference)?);
            }
        }
    }
    if series.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "record holds no usable snapshots"
        )));
    }
    let chosen =
        c0.or_else(|| smallest_uniform_c0(std::slice::from_ref(&series), &candidates, slack));
    let track_c0 = chosen.unwrap_or_else(|| candidates.iter().copied().fold(0.0, f64::max));
    let reports = lyapunov_track(&series, track_c0, slack);
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| {
            vec![
                r.step as f64,
                r.total_variation,
                r.interaction_potential,
                r.lyapunov,
                r.c0,
                r.source_magnitude,
            ]
        })
        .collect();
    let path = ctx.path("diagnose.csv");
    io::write_table(
        &path,
        &["step", "tv", "q", "lyapunov", "c0", "source_magnitude"],
        &rows,
    )?;
    let flagged: Vec<usize> = reports
        .iter()
        .filter(|r| r.increase_flagged)
        .map(|r| r.step)
        .collect();
    let summary = DiagnoseSummary {
        scheme: rec.scheme,
        system: system.name().to_string(),
        c0: chosen,
        candidates,
        slack,
        flagged_steps: flagged.clone(),
        max_reconstruction_error: series.max_reconstruction_error(),
        max_mass_defect: series.max_mass_defect(),
    };
    let path = ctx.path("diagnose.json");
    io::write_json(&path, &summary)?;
    info!(
        "C0 = {}, {} increase(s) flagged",
        chosen.map_or("none".into(), |c| c.to_string()),
        flagged.len()
    );
    if assert && (chosen.is_none() || !flagged.is_empty()) {
        return Err(Failure::Assert(format!(
            "Lyapunov functional increased at steps {flagged:?} (C0 = {track_c0})"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ConvergeSummary {
    scheme: Scheme,
    order: Option<f64>,
    strictly_decreasing: bool,
}

fn cmd_converge(ctx: &mut RunContext) -> Outcome {
    let cfg = ctx.config().clone();
    let system = cfg.system.build()?;
    let problem = riemann(&cfg, &system)?;
    let study = &cfg.study;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for scheme in [Scheme::Backward, Scheme::Semidiscrete] {
        let rec = epsilon_study(
            &system,
            &problem,
            scheme,
            &study.epsilons,
            study.t_physical,
            &study.setup,
        )?;
        for e in &rec.entries {
            rows.push(vec![
                scheme.to_string(),
                io::fmt_value(e.epsilon),
                e.l1_error.map_or(String::new(), io::fmt_value),
                io::fmt_value(e.runtime_seconds),
                e.failure.clone().unwrap_or_default(),
            ]);
        }
        info!("{scheme}: order {:?}", rec.order);
        summary.push(ConvergeSummary {
            scheme,
            order: rec.order,
            strictly_decreasing: rec.strictly_decreasing(),
        });
    }
    let path = ctx.path("converge.csv");
    io::write_text_table(
        &path,
        &[
            "scheme",
            "epsilon",
            "l1_error",
            "runtime_seconds",
            "failure",
        ],
        &rows,
    )?;
    let path = ctx.path("converge.json");
    io::write_json(&path, &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct CrossSummary {
    slope: Option<f64>,
    reduction: f64,
}

fn cmd_cross(ctx: &mut RunContext) -> Outcome {
    let cfg = ctx.config().clone();
    let system = cfg.system.build()?;
    let problem = riemann(&cfg, &system)?;
    let study = &cfg.study;
    let entries = cross_scheme_agreement(
        &system,
        &problem,
        &study.epsilons,
        study.t_physical,
        &study.setup,
    )?;
    let rows: Vec<Vec<f64>> = entries
        .iter()
        .map(|e| vec![e.epsilon, e.l1_distance])
        .collect();
    let path = ctx.path("cross.csv");
    io::write_table(&path, &["epsilon", "l1_distance"], &rows)?;
    let eps: Vec<f64> = entries.iter().map(|e| e.epsilon.ln()).collect();
    let dist: Vec<f64> = entries.iter().map(|e| e.l1_distance.ln()).collect();
    let first = entries.first().map_or(0.0, |e| e.l1_distance);
    let last = entries.last().map_or(0.0, |e| e.l1_distance);
    let summary = CrossSummary {
        slope: fit_slope(&eps, &dist),
        reduction: first / last,
    };
    info!("distance reduced {:.2}x", summary.reduction);
    let path = ctx.path("cross.json");
    io::write_json(&path, &summary)?;
    Ok(())
}

fn cmd_stability(ctx: &mut RunContext) -> Outcome {
    let cfg = ctx.config().clone();
    let system = cfg.system.build()?;
    let study = &cfg.study;
    let n = system.dimension();
    let length = study.setup.x_right - study.setup.x_left;
    // pairs sit in the left part of the domain, leaving room to travel
    let span = 0.2 * length;
    let origin = study.setup.x_left + 0.1 * length;
    // the bump adds variation 2 * pair_distance / width; keep it within pair_tv
    let bump_width = (0.1 * span).max(2.0 * study.pair_distance / study.pair_tv);
    let mut pairs = Vec::with_capacity(study.pairs);
    for k in 0..study.pairs {
        let a = shift(
            random_small_tv(&system, cfg.seed + k as u64, study.pair_tv, span)?,
            origin,
        );
        let direction: Vec<f64> = (0..n)
            .map(|i| if (i + k) % 2 == 0 { 1.0 } else { -0.5 })
            .collect();
        let center = origin + span * (k as f64 + 0.5) / study.pairs as f64;
        let b = perturbed(&a, &direction, center, bump_width, study.pair_distance);
        pairs.push((a, b));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for scheme in [Scheme::Backward, Scheme::Semidiscrete] {
        for &eps in &study.epsilons {
            let r = lipschitz_study(&system, &pairs, scheme, eps, study.t_physical, &study.setup)?;
            info!("{scheme} eps={eps}: L = {:.6}", r.constant);
            rows.push(vec![
                scheme.to_string(),
                io::fmt_value(eps),
                io::fmt_value(r.constant),
            ]);
            reports.push(r);
        }
    }
    let path = ctx.path("stability.csv");
    io::write_text_table(&path, &["scheme", "epsilon", "lipschitz"], &rows)?;
    let path = ctx.path("stability.json");
    io::write_json(&path, &reports)?;
    Ok(())
}

fn shift(data: InitialData, by: f64) -> InitialData {
    match data {
        InitialData::Smooth { base, mut steps } => {
            for s in &mut steps {
                s.position += by;
            }
            InitialData::Smooth { base, steps }
        }
        other => other,
    }
}

fn run(cli: &Cli) -> Outcome {
    let clock = Instant::now();
    let needs_config = !matches!(cli.command, Command::Kernels(_) | Command::Diagnose { .. });
    let mut ctx = RunContext::new(cli, needs_config)?;
    let name = match &cli.command {
        Command::RunBackward => {
            cmd_run_backward(&mut ctx)?;
            "run-backward"
        }
        Command::RunSemidiscrete => {
            cmd_run_semidiscrete(&mut ctx)?;
            "run-semidiscrete"
        }
        Command::Kernels(a) => {
            cmd_kernels(&mut ctx, a)?;
            "kernels"
        }
        Command::Diagnose { record, c0, assert } => {
            let result = cmd_diagnose(&mut ctx, record, *c0, *assert);
            if let Err(Failure::Assert(_)) = &result {
                ctx.finish("diagnose", clock)?;
            }
            result?;
            "diagnose"
        }
        Command::Converge => {
            cmd_converge(&mut ctx)?;
            "converge"
        }
        Command::Cross => {
            cmd_cross(&mut ctx)?;
            "cross"
        }
        Command::Stability => {
            cmd_stability(&mut ctx)?;
            "stability"
        }
    };
    ctx.finish(name, clock)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Assert(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_ASSERT)
        }
    }
}
