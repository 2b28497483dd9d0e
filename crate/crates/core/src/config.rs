//! Run configuration: a flat TOML document with one table per concern.
//!
//! ```toml
//! system = "burgers-shifted"   # linear | burgers-shifted | chromatography
//! scheme = "semidiscrete"      # backward | semidiscrete
//! t_final = 10                 # or `steps`
//! dt = 0.05                    # lattice time step (default 0.05)
//! stride = 20                  # snapshot stride (default 1 backward, 20 lattice)
//! seed = 2024                  # default 2024
//! output = "out"               # default "out"
//!
//! [linear]                     # only with system = "linear"
//! eigenvalues = [0.3, 0.7]
//! eigenvectors = [1.0, 0.5, 0.2, 1.0]   # columns; optional
//!
//! [grid]                       # backward scheme
//! x_min = -1.0
//! x_max = 40.0
//! dx = 0.01
//!
//! [window]                     # semidiscrete scheme
//! n_min = -20
//! n_max = 200
//!
//! [initial]
//! kind = "riemann"             # riemann | spike | file
//! left = [0.4]
//! right = [0.0]
//! position = 0.0               # default 0
//!
//! [functionals]
//! tv_budget = 0.1              # default: built-in budget for nonlinear systems
//! c0 = [1, 5, 10, 50]
//! slack = 1e-4
//!
//! [study]
//! epsilons = [0.04, 0.02, 0.01, 0.005]
//! t_physical = 1.0
//! x_left = -0.25
//! x_right = 3.0
//! rescaled_dx = 0.0025
//! pairs = 5
//! pair_tv = 0.04
//! pair_distance = 0.01
//! ```
//!
//! Spike data take `direction`, `center` (default 0) and `width`
//! (default ten grid spacings, or one cell on the lattice); file data
//! take `path` to a profile CSV written by [`crate::io`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{ConfigIssue, Error, Result};
use crate::functionals::{C0_CANDIDATES, DEFAULT_SLACK};
use crate::harness::{Scheme, StudySetup, DEFAULT_EPSILONS, DEFAULT_T_PHYSICAL};
use crate::semidiscrete::DEFAULT_DT;
use crate::system::SystemSpec;

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_OUTPUT: &str = "out";
pub const DEFAULT_BACKWARD_STRIDE: usize = 1;
pub const DEFAULT_LATTICE_STRIDE: usize = 20;

/// Built-in systems selectable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum SystemChoice {
    Linear {
        eigenvalues: Vec<f64>,
        eigenvectors: Option<Vec<f64>>,
    },
    BurgersShifted,
    Chromatography,
}

impl SystemChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SystemChoice::Linear { .. } => "linear",
            SystemChoice::BurgersShifted => "burgers-shifted",
            SystemChoice::Chromatography => "chromatography",
        }
    }

    pub fn build(&self) -> Result<SystemSpec> {
        match self {
            SystemChoice::Linear {
                eigenvalues,
                eigenvectors,
            } => SystemSpec::linear(eigenvalues, eigenvectors.as_deref()),
            SystemChoice::BurgersShifted => Ok(SystemSpec::shifted_burgers()),
            SystemChoice::Chromatography => Ok(SystemSpec::chromatography()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub n_min: i64,
    pub n_max: i64,
}

impl WindowSpec {
    pub fn len(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialSpec {
    Riemann {
        left: Vec<f64>,
        right: Vec<f64>,
        position: f64,
    },
    /// Unit-mass hat along `direction` on top of the zero state.
    Spike {
        direction: Vec<f64>,
        center: f64,
        width: Option<f64>,
    },
    File {
        path: PathBuf,
    },
}

/// How long to run: backward steps are unit time each; lattice steps are `dt` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(usize),
    TFinal(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalsSpec {
    pub tv_budget: Option<f64>,
    pub c0: Vec<f64>,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub epsilons: Vec<f64>,
    pub t_physical: f64,
    pub setup: StudySetup,
    pub pairs: usize,
    pub pair_tv: f64,
    pub pair_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemChoice,
    pub scheme: Scheme,
    pub horizon: Horizon,
    pub dt: f64,
    pub stride: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub grid: Option<GridSpec>,
    pub window: Option<WindowSpec>,
    pub initial: InitialSpec,
    pub functionals: FunctionalsSpec,
    pub study: StudySpec,
}

impl RunConfig {
    /// Backward steps to take.
    pub fn backward_steps(&self) -> usize {
        match self.horizon {
            Horizon::Steps(n) => n,
            Horizon::TFinal(t) => t.round() as usize,
        }
    }

    /// Lattice integration time.
    pub fn lattice_time(&self) -> f64 {
        match self.horizon {
            Horizon::Steps(n) => n as f64 * self.dt,
            Horizon::TFinal(t) => t,
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "system",
    "scheme",
    "t_final",
    "steps",
    "dt",
    "stride",
    "seed",
    "output",
    "linear",
    "grid",
    "window",
    "initial",
    "functionals",
    "study",
];

/// Collects every problem with the document instead of stopping at the first.
struct Checker {
    issues: Vec<ConfigIssue>,
}

impl Checker {
    fn issue(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.into(),
            message: message.into(),
        });
    }

    fn unknown(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.issue(join(prefix, key), "unknown key");
            }
        }
    }

    fn table<'a>(&mut self, root: &'a Table, key: &str) -> Option<&'a Table> {
        match root.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issue(key, "expected a table");
                None
            }
        }
    }

    fn string<'a>(&mut self, t: &'a Table, prefix: &str, key: &str) -> Option<&'a str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.issue(join(prefix, key), "expected a string");
                None
            }
        }
    }

    fn float(&mut self, t: &Table, prefix: &str, key: &str) -> Option<f64> {
        match t.get(key) {
            None => None,
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.issue(join(prefix, key), "expected a number");
                None
            }
        }
    }

    fn positive(&mut self, t: &Table, prefix: &str, key: &str) -> Option<f64> {
        let x = self.float(t, prefix, key)?;
        if x > 0.0 && x.is_finite() {
            Some(x)
        } else {
            self.issue(
                join(prefix, key),
                format!("must be positive and finite, got {x}"),
            );
            None
        }
    }

    fn integer(&mut self, t: &Table, prefix: &str, key: &str) -> Option<i64> {
        match t.get(key) {
            None => None,
            Some(Value::Integer(i)) => Some(*i),
            Some(_) => {
                self.issue(join(prefix, key), "expected an integer");
                None
            }
        }
    }

    fn count(&mut self, t: &Table, prefix: &str, key: &str, min: i64) -> Option<usize> {
        let i = self.integer(t, prefix, key)?;
        if i >= min {
            Some(i as usize)
        } else {
            self.issue(
                join(prefix, key),
                format!("must be at least {min}, got {i}"),
            );
            None
        }
    }

    fn floats(&mut self, t: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
        let arr = match t.get(key) {
            None => return None,
            Some(Value::Array(a)) => a,
            Some(_) => {
                self.issue(join(prefix, key), "expected an array of numbers");
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            match v {
                Value::Float(x) if x.is_finite() => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                _ => {
                    self.issue(join(prefix, key), "expected an array of finite numbers");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn required<T>(&mut self, value: Option<T>, present: bool, key: &str) -> Option<T> {
        if !present {
            self.issue(key, "missing required key");
        }
        value
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Parses and validates a configuration document, reporting every
/// offending key at once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        Error::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    let mut c = Checker { issues: Vec::new() };
    c.unknown(&root, "", TOP_KEYS);

    let system = system_choice(&mut c, &root);
    let scheme_text = c.string(&root, "", "scheme");
    let scheme = c
        .required(scheme_text, root.contains_key("scheme"), "scheme")
        .and_then(|s| match s.parse::<Scheme>() {
            Ok(s) => Some(s),
            Err(_) => {
                c.issue(
                    "scheme",
                    format!("unknown scheme {s:?} (backward | semidiscrete)"),
                );
                None
            }
        });

    let horizon = match (root.contains_key("t_final"), root.contains_key("steps")) {
        (true, true) => {
            c.issue("t_final", "give either t_final or steps, not both");
            None
        }
        (true, false) => c.positive(&root, "", "t_final").map(Horizon::TFinal),
        (false, true) => c.count(&root, "", "steps", 1).map(Horizon::Steps),
        (false, false) => {
            c.issue("t_final", "missing required key (or give steps)");
            None
        }
    };
    let dt = if root.contains_key("dt") {
        c.positive(&root, "", "dt")
    } else {
        Some(DEFAULT_DT)
    };
    if let Some(dt) = dt {
        if dt > 0.5 {
            c.issue("dt", format!("must not exceed 0.5, got {dt}"));
        }
    }
    let stride = if root.contains_key("stride") {
        c.count(&root, "", "stride", 1)
    } else {
        Some(match scheme {
            Some(Scheme::Semidiscrete) => DEFAULT_LATTICE_STRIDE,
            _ => DEFAULT_BACKWARD_STRIDE,
        })
    };
    let seed = match c.integer(&root, "", "seed") {
        Some(s) if s < 0 => {
            c.issue("seed", "must be nonnegative");
            None
        }
        Some(s) => Some(s as u64),
        None => Some(DEFAULT_SEED),
    };
    let output = c
        .string(&root, "", "output")
        .unwrap_or(DEFAULT_OUTPUT)
        .into();

    let grid = grid_spec(&mut c, &root);
    let window = window_spec(&mut c, &root);
    match scheme {
        Some(Scheme::Backward) if grid.is_none() && !root.contains_key("grid") => {
            c.issue("grid", "missing required table for the backward scheme")
        }
        Some(Scheme::Semidiscrete) if window.is_none() && !root.contains_key("window") => c.issue(
            "window",
            "missing required table for the semidiscrete scheme",
        ),
        _ => {}
    }
    let dim = system.as_ref().map(|(_, s)| s.dimension());
    let initial = initial_spec(&mut c, &root, dim, system.as_ref().map(|(_, s)| s));
    let functionals = functionals_spec(&mut c, &root);
    let study = study_spec(&mut c, &root);

    if !c.issues.is_empty() {
        return Err(Error::Config(c.issues));
    }
    let missing = || Error::Internal("validated configuration lost a field".into());
    Ok(RunConfig {
        system: system.ok_or_else(missing)?.0,
        scheme: scheme.ok_or_else(missing)?,
        horizon: horizon.ok_or_else(missing)?,
        dt: dt.ok_or_else(missing)?,
        stride: stride.ok_or_else(missing)?,
        seed: seed.ok_or_else(missing)?,
        output,
        grid,
        window,
        initial: initial.ok_or_else(missing)?,
        functionals: functionals.ok_or_else(missing)?,
        study: study.ok_or_else(missing)?,
    })
}

fn system_choice(c: &mut Checker, root: &Table) -> Option<(SystemChoice, SystemSpec)> {
    let linear = c.table(root, "linear");
    let name = c.string(root, "", "system");
    let name = c.required(name, root.contains_key("system"), "system")?;
    if name != "linear" && linear.is_some() {
        c.issue(
            "linear",
            format!("only valid with system = \"linear\", not {name:?}"),
        );
    }
    let choice = match name {
        "linear" => {
            let Some(t) = linear else {
                c.issue("linear.eigenvalues", "missing required key");
                return None;
            };
            c.unknown(t, "linear", &["eigenvalues", "eigenvectors"]);
            let values = c.floats(t, "linear", "eigenvalues");
            let eigenvalues =
                c.required(values, t.contains_key("eigenvalues"), "linear.eigenvalues")?;
            let eigenvectors = c.floats(t, "linear", "eigenvectors");
            if t.contains_key("eigenvectors") && eigenvectors.is_none() {
                return None;
            }
            SystemChoice::Linear {
                eigenvalues,
                eigenvectors,
            }
        }
        "burgers-shifted" => SystemChoice::BurgersShifted,
        "chromatography" => SystemChoice::Chromatography,
        other => {
            c.issue(
                "system",
                format!("unknown system {other:?} (linear | burgers-shifted | chromatography)"),
            );
            return None;
        }
    };
    match choice.build() {
        Ok(spec) => Some((choice, spec)),
        Err(e) => {
            c.issue("linear.eigenvalues", e.to_string());
            None
        }
    }
}

fn grid_spec(c: &mut Checker, root: &Table) -> Option<GridSpec> {
    let t = c.table(root, "grid")?;
    c.unknown(t, "grid", &["x_min", "x_max", "dx"]);
    let x_min = c.float(t, "grid", "x_min");
    let x_min = c.required(x_min, t.contains_key("x_min"), "grid.x_min");
    let x_max = c.float(t, "grid", "x_max");
    let x_max = c.required(x_max, t.contains_key("x_max"), "grid.x_max");
    let dx = c.positive(t, "grid", "dx");
    let dx = c.required(dx, t.contains_key("dx"), "grid.dx");
    let (x_min, x_max, dx) = (x_min?, x_max?, dx?);
    if !(x_max > x_min) {
        c.issue(
            "grid.x_max",
            format!("must exceed x_min ({x_min}), got {x_max}"),
        );
        return None;
    }
    let g = GridSpec { x_min, x_max, dx };
    if g.len() < 2 {
        c.issue("grid.dx", "grid must have at least two nodes");
        return None;
    }
    Some(g)
}

fn window_spec(c: &mut Checker, root: &Table) -> Option<WindowSpec> {
    let t = c.table(root, "window")?;
    c.unknown(t, "window", &["n_min", "n_max"]);
    let n_min = c.integer(t, "window", "n_min");
    let n_min = c.required(n_min, t.contains_key("n_min"), "window.n_min");
    let n_max = c.integer(t, "window", "n_max");
    let n_max = c.required(n_max, t.contains_key("n_max"), "window.n_max");
    let (n_min, n_max) = (n_min?, n_max?);
    if n_max <= n_min {
        c.issue(
            "window.n_max",
            format!("must exceed n_min ({n_min}), got {n_max}"),
        );
        return None;
    }
    Some(WindowSpec { n_min, n_max })
}

fn state_in_box(
    c: &mut Checker,
    key: &str,
    v: Option<Vec<f64>>,
    dim: Option<usize>,
    system: Option<&SystemSpec>,
) -> Option<Vec<f64>> {
    let v = v?;
    if let Some(d) = dim {
        if v.len() != d {
            c.issue(key, format!("expected {d} components, got {}", v.len()));
            return None;
        }
    }
    if let Some(s) = system {
        if !s.state_box().contains(&v, 0.0) {
            c.issue(
                key,
                format!("state {v:?} lies outside the system's state box"),
            );
            return None;
        }
    }
    Some(v)
}

fn initial_spec(
    c: &mut Checker,
    root: &Table,
    dim: Option<usize>,
    system: Option<&SystemSpec>,
) -> Option<InitialSpec> {
    let Some(t) = c.table(root, "initial") else {
        if !root.contains_key("initial") {
            c.issue("initial", "missing required table");
        }
        return None;
    };
    let kind = c.string(t, "initial", "kind");
    let kind = c.required(kind, t.contains_key("kind"), "initial.kind")?;
    match kind {
        "riemann" => {
            c.unknown(t, "initial", &["kind", "left", "right", "position"]);
            let left = c.floats(t, "initial", "left");
            let left = c.required(left, t.contains_key("left"), "initial.left");
            let left = state_in_box(c, "initial.left", left, dim, system);
            let right = c.floats(t, "initial", "right");
            let right = c.required(right, t.contains_key("right"), "initial.right");
            let right = state_in_box(c, "initial.right", right, dim, system);
            let position = c.float(t, "initial", "position").unwrap_or(0.0);
            Some(InitialSpec::Riemann {
                left: left?,
                right: right?,
                position,
            })
        }
        "spike" => {
            c.unknown(t, "initial", &["kind", "direction", "center", "width"]);
            let direction = c.floats(t, "initial", "direction");
            let direction = c.required(direction, t.contains_key("direction"), "initial.direction");
            if let (Some(d), Some(n)) = (&direction, dim) {
                if d.len() != n {
                    c.issue(
                        "initial.direction",
                        format!("expected {n} components, got {}", d.len()),
                    );
                }
            }
            if let Some(s) = system {
                if !s.state_box().contains(&vec![0.0; s.dimension()], 0.0) {
                    c.issue(
                        "initial.kind",
                        "spike data need the zero state inside the system's state box",
                    );
                }
            }
            let center = c.float(t, "initial", "center").unwrap_or(0.0);
            let width = if t.contains_key("width") {
                Some(c.positive(t, "initial", "width")?)
            } else {
                None
            };
            Some(InitialSpec::Spike {
                direction: direction?,
                center,
                width,
            })
        }
        "file" => {
            c.unknown(t, "initial", &["kind", "path"]);
            let path = c.string(t, "initial", "path");
            let path = c.required(path, t.contains_key("path"), "initial.path")?;
            Some(InitialSpec::File { path: path.into() })
        }
        other => {
            c.issue(
                "initial.kind",
                format!("unknown initial data {other:?} (riemann | spike | file)"),
            );
            None
        }
    }
}

fn functionals_spec(c: &mut Checker, root: &Table) -> Option<FunctionalsSpec> {
    let empty = Table::new();
    let t = c.table(root, "functionals").unwrap_or(&empty);
    c.unknown(t, "functionals", &["tv_budget", "c0", "slack"]);
    let tv_budget = if t.contains_key("tv_budget") {
        Some(c.positive(t, "functionals", "tv_budget")?)
    } else {
        None
    };
    let c0 = match c.floats(t, "functionals", "c0") {
        Some(v) if v.is_empty() || v.iter().any(|x| *x <= 0.0) => {
            c.issue(
                "functionals.c0",
                "must be a nonempty list of positive numbers",
            );
            return None;
        }
        Some(v) => v,
        None if t.contains_key("c0") => return None,
        None => C0_CANDIDATES.to_vec(),
    };
    let slack = match c.float(t, "functionals", "slack") {
        Some(s) if s < 0.0 => {
            c.issue("functionals.slack", "must be nonnegative");
            return None;
        }
        Some(s) => s,
        None if t.contains_key("slack") => return None,
        None => DEFAULT_SLACK,
    };
    Some(FunctionalsSpec {
        tv_budget,
        c0,
        slack,
    })
}

fn study_spec(c: &mut Checker, root: &Table) -> Option<StudySpec> {
    let empty = Table::new();
    let t = c.table(root, "study").unwrap_or(&empty);
    c.unknown(
        t,
        "study",
        &[
            "epsilons",
            "t_physical",
            "x_left",
            "x_right",
            "rescaled_dx",
            "pairs",
            "pair_tv",
            "pair_distance",
        ],
    );
    let defaults = StudySetup::default();
    let mut ok = true;
    let epsilons = match c.floats(t, "study", "epsilons") {
        Some(v) if v.is_empty() || v.iter().any(|x| *x <= 0.0) => {
            c.issue(
                "study.epsilons",
                "must be a nonempty list of positive numbers",
            );
            ok = false;
            v
        }
        Some(v) => v,
        None => {
            ok &= !t.contains_key("epsilons");
            DEFAULT_EPSILONS.to_vec()
        }
    };
    let mut pos = |c: &mut Checker, key: &str, default: f64| -> f64 {
        if t.contains_key(key) {
            c.positive(t, "study", key).unwrap_or_else(|| {
                ok = false;
                default
            })
        } else {
            default
        }
    };
    let t_physical = pos(c, "t_physical", DEFAULT_T_PHYSICAL);
    let rescaled_dx = pos(c, "rescaled_dx", defaults.rescaled_dx);
    let pair_tv = pos(c, "pair_tv", 0.04);
    let pair_distance = pos(c, "pair_distance", 0.01);
    let x_left = c.float(t, "study", "x_left").unwrap_or(defaults.x_left);
    let x_right = c.float(t, "study", "x_right").unwrap_or(defaults.x_right);
    if !(x_right > x_left) {
        c.issue(
            "study.x_right",
            format!("must exceed x_left ({x_left}), got {x_right}"),
        );
        ok = false;
    }
    let pairs = if t.contains_key("pairs") {
        c.count(t, "study", "pairs", 1)
    } else {
        Some(5)
    };
    let dt = root
        .get("dt")
        .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
        .unwrap_or(defaults.dt);
    if !ok {
        return None;
    }
    Some(StudySpec {
        epsilons,
        t_physical,
        setup: StudySetup {
            x_left,
            x_right,
            rescaled_dx,
            dt,
        },
        pairs: pairs?,
        pair_tv,
        pair_distance,
    })
}
