//! Run configuration: a strict sectioned `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! [grid]
//! dim = 2
//! n_cells = 32          # one value for all axes, or a comma list
//! [params]
//! m = 1
//! n0 = "1 + 0.5*cos(2*3.141592653589793*x)"
//! ```
//!
//! Sections: `grid`, `params`, `control`, `sweep`, `output`. Unknown
//! sections, unknown keys and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::Grid;
use crate::model::{ModelParams, ScalarFn};
use crate::stepper::{InitialData, Numerics, RunSetup, StepControl};
use crate::sweep::SweepSettings;

const MAX_CELLS_3D: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub n_cells: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsConfig {
    pub m: f64,
    pub d1: f64,
    pub d2: f64,
    pub kappa: f64,
    pub mu: f64,
    pub alpha: f64,
    pub eps: f64,
    /// `None` selects the preset `D1 s^(m-1)`.
    pub diffusion: Option<Expr>,
    pub chi: Expr,
    pub f: Expr,
    pub phi: Expr,
    pub g: [Expr; 3],
    pub n0: Expr,
    pub c0: Expr,
    pub u0: [Expr; 3],
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub step: StepControl,
    pub numerics: Numerics,
    pub hypothesis_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
    /// Time between snapshots; 0 disables them.
    pub snapshot_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub grid: GridConfig,
    pub params: ParamsConfig,
    pub control: ControlConfig,
    pub sweep: SweepSettings,
    pub output: OutputConfig,
}

fn expr(s: &str) -> Expr {
    Expr::parse(s).expect("built-in expression parses")
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid: GridConfig {
                dim: 2,
                n_cells: vec![32, 32],
                extent: vec![1.0, 1.0],
            },
            params: ParamsConfig {
                m: 1.0,
                d1: 1.0,
                d2: 1.0,
                kappa: 0.0,
                mu: 0.0,
                alpha: 2.0,
                eps: 0.1,
                diffusion: None,
                chi: expr("1"),
                f: expr("s"),
                phi: expr("y"),
                g: [expr("0"), expr("0"), expr("0")],
                n0: expr("1 + 0.5*cos(2*3.141592653589793*x)*cos(3.141592653589793*y)"),
                c0: expr("0.5 + 0.5*y"),
                u0: [expr("0"), expr("0"), expr("0")],
                mass: None,
            },
            control: ControlConfig {
                step: StepControl::default(),
                numerics: Numerics::default(),
                hypothesis_samples: 1000,
            },
            sweep: SweepSettings::default(),
            output: OutputConfig {
                dir: PathBuf::from("out"),
                csv: "timeseries.csv".into(),
                snapshot_interval: 0.0,
            },
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_f64(key: &str, e: &Entry) -> Result<f64> {
    e.value.trim().parse::<f64>().map_err(|_| Error::Parse {
        line: e.line,
        reason: format!("`{key}` expects a number, got `{}`", e.value),
    })
}

fn parse_usize(key: &str, e: &Entry) -> Result<usize> {
    e.value.trim().parse::<usize>().map_err(|_| Error::Parse {
        line: e.line,
        reason: format!("`{key}` expects a nonnegative integer, got `{}`", e.value),
    })
}

fn parse_list<T>(key: &str, e: &Entry, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    e.value
        .split(',')
        .map(|s| {
            item(s.trim()).ok_or_else(|| Error::Parse {
                line: e.line,
                reason: format!("`{key}` has an invalid entry `{}`", s.trim()),
            })
        })
        .collect()
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool> {
    match e.value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse {
            line: e.line,
            reason: format!("`{key}` expects true or false, got `{other}`"),
        }),
    }
}

fn parse_expr(key: &str, e: &Entry, allowed: &[Var]) -> Result<Expr> {
    let ex = Expr::parse(&e.value).map_err(|err| Error::Parse {
        line: e.line,
        reason: format!("`{key}`: {err}"),
    })?;
    ex.require_vars(allowed)
        .map_err(|err| Error::validation(key, err.to_string()))?;
    Ok(ex)
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2
        && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\'')))
    {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

const SPACE: &[Var] = &[Var::X, Var::Y, Var::Z];
const SPACE_TIME: &[Var] = &[Var::X, Var::Y, Var::Z, Var::T];
const SCALAR: &[Var] = &[Var::S];

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                reason: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if !["grid", "params", "control", "sweep", "output"].contains(&name) {
                return Err(Error::Parse {
                    line,
                    reason: format!("unknown section [{name}]"),
                });
            }
            if sections.contains_key(name) {
                return Err(Error::Parse {
                    line,
                    reason: format!("section [{name}] appears twice"),
                });
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            reason: format!("expected `key = value`, got `{content}`"),
        })?;
        let section = current.as_ref().ok_or_else(|| Error::Parse {
            line,
            reason: "key outside of any section".into(),
        })?;
        let key = key.trim();
        let table = sections.get_mut(section).expect("section registered");
        if table.contains_key(key) {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate key `{key}`"),
            });
        }
        table.insert(
            key.to_string(),
            Entry {
                line,
                value: unquote(value).to_string(),
            },
        );
    }

    let mut cfg = Config::default();
    for (section, table) in &sections {
        for (key, e) in table {
            apply(&mut cfg, section, key, e)?;
        }
    }
    if let Some(grid) = sections.get("grid") {
        broadcast_grid(&mut cfg.grid, grid)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn broadcast_grid(grid: &mut GridConfig, table: &BTreeMap<String, Entry>) -> Result<()> {
    let dim = grid.dim;
    for (key, len) in [("n_cells", grid.n_cells.len()), ("extent", grid.extent.len())] {
        if len != 1 && len != dim {
            let line = table.get(key).map_or(0, |e| e.line);
            return Err(Error::Parse {
                line,
                reason: format!("`{key}` needs 1 or {dim} entries, got {len}"),
            });
        }
    }
    if grid.n_cells.len() == 1 {
        grid.n_cells = vec![grid.n_cells[0]; dim];
    }
    if grid.extent.len() == 1 {
        grid.extent = vec![grid.extent[0]; dim];
    }
    Ok(())
}

fn apply(cfg: &mut Config, section: &str, key: &str, e: &Entry) -> Result<()> {
    let p = &mut cfg.params;
    let c = &mut cfg.control;
    match (section, key) {
        ("grid", "dim") => {
            cfg.grid.dim = parse_usize(key, e)?;
            // resized by broadcasting when n_cells/extent are single values
            cfg.grid.n_cells.truncate(1);
            cfg.grid.extent.truncate(1);
        }
        ("grid", "n_cells") => cfg.grid.n_cells = parse_list(key, e, |s| s.parse().ok())?,
        ("grid", "extent") => cfg.grid.extent = parse_list(key, e, |s| s.parse().ok())?,

        ("params", "m") => p.m = parse_f64(key, e)?,
        ("params", "D1") => p.d1 = parse_f64(key, e)?,
        ("params", "D2") => p.d2 = parse_f64(key, e)?,
        ("params", "kappa") => p.kappa = parse_f64(key, e)?,
        ("params", "mu") => p.mu = parse_f64(key, e)?,
        ("params", "alpha") => p.alpha = parse_f64(key, e)?,
        ("params", "eps") => p.eps = parse_f64(key, e)?,
        ("params", "D") => p.diffusion = Some(parse_expr(key, e, SCALAR)?),
        ("params", "chi") => p.chi = parse_expr(key, e, SCALAR)?,
        ("params", "f") => p.f = parse_expr(key, e, SCALAR)?,
        ("params", "Phi") => p.phi = parse_expr(key, e, SPACE)?,
        ("params", "g_x") => p.g[0] = parse_expr(key, e, SPACE_TIME)?,
        ("params", "g_y") => p.g[1] = parse_expr(key, e, SPACE_TIME)?,
        ("params", "g_z") => p.g[2] = parse_expr(key, e, SPACE_TIME)?,
        ("params", "n0") => p.n0 = parse_expr(key, e, SPACE)?,
        ("params", "c0") => p.c0 = parse_expr(key, e, SPACE)?,
        ("params", "u0_x") => p.u0[0] = parse_expr(key, e, SPACE)?,
        ("params", "u0_y") => p.u0[1] = parse_expr(key, e, SPACE)?,
        ("params", "u0_z") => p.u0[2] = parse_expr(key, e, SPACE)?,
        ("params", "mass") => p.mass = Some(parse_f64(key, e)?),

        ("control", "t_end") => c.step.t_end = parse_f64(key, e)?,
        ("control", "cfl") => c.step.cfl = parse_f64(key, e)?,
        ("control", "dt_max") => c.step.dt_max = parse_f64(key, e)?,
        ("control", "dt_min") => c.step.dt_min = parse_f64(key, e)?,
        ("control", "output_interval") => c.step.output_interval = parse_f64(key, e)?,
        ("control", "pressure_tol") => c.numerics.pressure_tol = parse_f64(key, e)?,
        ("control", "solver_tol") => c.numerics.solver_tol = parse_f64(key, e)?,
        ("control", "max_iterations") => c.numerics.max_iterations = parse_usize(key, e)?,
        ("control", "div_tol") => c.numerics.div_tol = parse_f64(key, e)?,
        ("control", "c_floor") => c.numerics.c_floor = parse_f64(key, e)?,
        ("control", "n_floor") => c.numerics.n_floor = parse_f64(key, e)?,
        ("control", "K_diag") => c.numerics.k_diag = parse_f64(key, e)?,
        ("control", "exclude_boundary_layer") => {
            c.numerics.exclude_boundary_layer = parse_bool(key, e)?
        }
        ("control", "hypothesis_samples") => c.hypothesis_samples = parse_usize(key, e)?,

        ("sweep", "eps_list") => cfg.sweep.eps_list = parse_list(key, e, |s| s.parse().ok())?,
        ("sweep", "bound_factor") => cfg.sweep.bound_factor = parse_f64(key, e)?,
        ("sweep", "cauchy_slack") => cfg.sweep.cauchy_slack = parse_f64(key, e)?,
        ("sweep", "max_inversions") => cfg.sweep.max_inversions = parse_usize(key, e)?,

        ("output", "dir") => cfg.output.dir = PathBuf::from(&e.value),
        ("output", "csv") => cfg.output.csv = e.value.clone(),
        ("output", "snapshot_interval") => cfg.output.snapshot_interval = parse_f64(key, e)?,

        _ => {
            return Err(Error::Parse {
                line: e.line,
                reason: format!("unknown key `{key}` in [{section}]"),
            })
        }
    }
    Ok(())
}

fn rename(err: Error) -> Error {
    match err {
        Error::InvalidParameter { name, reason } => Error::Validation { key: name, reason },
        other => other,
    }
}

/// Checks every numeric and structural constraint.
pub fn validate(cfg: &Config) -> Result<()> {
    let g = &cfg.grid;
    if g.dim != 2 && g.dim != 3 {
        return Err(Error::validation("dim", "must be 2 or 3"));
    }
    if g.n_cells.len() != g.dim || g.extent.len() != g.dim {
        return Err(Error::validation("n_cells", "entry count must match dim"));
    }
    if g.n_cells.iter().any(|&n| n < 2) {
        return Err(Error::validation("n_cells", "need at least 2 cells per axis"));
    }
    if g.dim == 3 && g.n_cells.iter().any(|&n| n > MAX_CELLS_3D) {
        return Err(Error::validation(
            "n_cells",
            format!("3D grids are limited to {MAX_CELLS_3D} cells per axis"),
        ));
    }
    if g.extent.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::validation("extent", "must be positive"));
    }
    let params = cfg.model_params()?;
    let regime = params.regime().map_err(rename)?;
    if !regime.tag.is_admissible() {
        return Err(Error::validation(
            "m",
            format!(
                "inadmissible regime: need m > 2/3, or mu > 0 with alpha > 4/3 (m = {}, mu = {}, alpha = {})",
                params.m, params.mu, params.alpha
            ),
        ));
    }
    if let Some(mass) = cfg.params.mass {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::validation("mass", "must be positive"));
        }
    }
    let c = &cfg.control;
    c.step.validate().map_err(rename)?;
    let n = &c.numerics;
    if !(n.pressure_tol > 0.0 && n.pressure_tol <= 1e-4) {
        return Err(Error::validation("pressure_tol", "must lie in (0, 1e-4]"));
    }
    for (key, v) in [
        ("solver_tol", n.solver_tol),
        ("div_tol", n.div_tol),
        ("c_floor", n.c_floor),
        ("n_floor", n.n_floor),
        ("K_diag", n.k_diag),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::validation(key, "must be positive"));
        }
    }
    if n.max_iterations == 0 {
        return Err(Error::validation("max_iterations", "must be positive"));
    }
    if c.hypothesis_samples < 3 {
        return Err(Error::validation("hypothesis_samples", "must be at least 3"));
    }
    cfg.sweep.validate().map_err(rename)?;
    if !(cfg.output.snapshot_interval >= 0.0) {
        return Err(Error::validation("snapshot_interval", "must be nonnegative"));
    }
    if cfg.output.csv.is_empty() {
        return Err(Error::validation("csv", "must not be empty"));
    }
    Ok(())
}

/// Constant and identity expressions map to the closed-form variants.
fn scalar_fn(e: &Expr) -> ScalarFn {
    if e.variables().is_empty() {
        if let Ok(v) = e.eval_scalar(0.0) {
            return ScalarFn::Constant(v);
        }
    }
    if e.source().trim() == "s" {
        return ScalarFn::Identity;
    }
    ScalarFn::Expr(e.clone())
}

impl Config {
    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, &self.grid.n_cells, &self.grid.extent).map_err(rename)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let p = &self.params;
        let mut mp = ModelParams::new(p.m, p.d1, p.d2, p.kappa, p.mu, p.alpha, p.eps).map_err(rename)?;
        if let Some(d) = &p.diffusion {
            mp = mp.with_diffusion(ScalarFn::Expr(d.clone()));
        }
        let forcing = &p.g[..self.grid.dim];
        mp = mp
            .with_sensitivity(scalar_fn(&p.chi))
            .with_consumption(scalar_fn(&p.f))
            .with_potential((!p.phi.is_zero_constant()).then(|| p.phi.clone()))
            .with_forcing(if forcing.iter().all(Expr::is_zero_constant) {
                Vec::new()
            } else {
                forcing.to_vec()
            });
        Ok(mp)
    }

    pub fn run_setup(&self) -> Result<RunSetup> {
        Ok(RunSetup {
            grid: self.build_grid()?,
            params: self.model_params()?,
            control: self.control.step,
            numerics: self.control.numerics,
            initial: InitialData {
                n0: self.params.n0.clone(),
                c0: self.params.c0.clone(),
                u0: self.params.u0[..self.grid.dim].to_vec(),
                mass: self.params.mass,
            },
        })
    }

    /// Serializes to the text format; `parse_config(&c.emit())` reproduces `c`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let list_f = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let q = |e: &Expr| format!("\"{}\"", e.source());
        let _ = writeln!(s, "[grid]");
        let _ = writeln!(s, "dim = {}", g.dim);
        let _ = writeln!(
            s,
            "n_cells = {}",
            g.n_cells.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(s, "extent = {}", list_f(&g.extent));

        let p = &self.params;
        let _ = writeln!(s, "\n[params]");
        for (k, v) in [
            ("m", p.m),
            ("D1", p.d1),
            ("D2", p.d2),
            ("kappa", p.kappa),
            ("mu", p.mu),
            ("alpha", p.alpha),
            ("eps", p.eps),
        ] {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        if let Some(d) = &p.diffusion {
            let _ = writeln!(s, "D = {}", q(d));
        }
        let _ = writeln!(s, "chi = {}", q(&p.chi));
        let _ = writeln!(s, "f = {}", q(&p.f));
        let _ = writeln!(s, "Phi = {}", q(&p.phi));
        for (axis, e) in ["x", "y", "z"].iter().zip(&p.g) {
            let _ = writeln!(s, "g_{axis} = {}", q(e));
        }
        let _ = writeln!(s, "n0 = {}", q(&p.n0));
        let _ = writeln!(s, "c0 = {}", q(&p.c0));
        for (axis, e) in ["x", "y", "z"].iter().zip(&p.u0) {
            let _ = writeln!(s, "u0_{axis} = {}", q(e));
        }
        if let Some(m) = p.mass {
            let _ = writeln!(s, "mass = {m:?}");
        }

        let c = &self.control;
        let n = &c.numerics;
        let _ = writeln!(s, "\n[control]");
        for (k, v) in [
            ("t_end", c.step.t_end),
            ("cfl", c.step.cfl),
            ("dt_max", c.step.dt_max),
            ("dt_min", c.step.dt_min),
            ("output_interval", c.step.output_interval),
            ("pressure_tol", n.pressure_tol),
            ("solver_tol", n.solver_tol),
            ("div_tol", n.div_tol),
            ("c_floor", n.c_floor),
            ("n_floor", n.n_floor),
            ("K_diag", n.k_diag),
        ] {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "max_iterations = {}", n.max_iterations);
        let _ = writeln!(s, "exclude_boundary_layer = {}", n.exclude_boundary_layer);
        let _ = writeln!(s, "hypothesis_samples = {}", c.hypothesis_samples);

        let w = &self.sweep;
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "eps_list = {}", list_f(&w.eps_list));
        let _ = writeln!(s, "bound_factor = {:?}", w.bound_factor);
        let _ = writeln!(s, "cauchy_slack = {:?}", w.cauchy_slack);
        let _ = writeln!(s, "max_inversions = {}", w.max_inversions);

        let o = &self.output;
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = \"{}\"", o.dir.display());
        let _ = writeln!(s, "csv = \"{}\"", o.csv);
        let _ = writeln!(s, "snapshot_interval = {:?}", o.snapshot_interval);
        s
    }
}
