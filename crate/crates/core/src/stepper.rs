//! Time integration of the coupled system by first-order operator splitting.
//!
//! Each step runs, in order: the fluid update; transport, consumption and
//! implicit diffusion of the oxygen; transport, implicit frozen-coefficient
//! diffusion and reaction of the cell density.

use log::warn;

use crate::diagnostics::{monitor_bounds, BoundReport, DiagnosticsRow, Monitor, SpaceTimeAccumulator};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fluid::{max_divergence, pressure_project, FluidSolver, PressureSolve, SolverSettings};
use crate::grid::{integrate, Grid, ScalarField, VectorField};
use crate::linalg::{pcg, CgOptions};
use crate::model::ModelParams;
use crate::operators::{
    advective_upwind, chemotactic_coefficient, chemotactic_velocity, diffusion_coefficients,
    divergence, gradient, max_inflow_rate, BoundaryCondition,
};

/// Fraction of the explicit stability limit used when subcycling transport.
const SUBSTEP_SAFETY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
    pub pressure: ScalarField,
}

impl SimState {
    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub dt_max: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub output_interval: f64,
    /// Steps shorter than this are treated as a stability failure.
    pub dt_min: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_max: 2e-3,
            cfl: 0.5,
            t_end: 0.5,
            output_interval: 0.01,
            dt_min: 1e-9,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::invalid("dt_max", "must be positive"));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::invalid("cfl", "must lie in (0, 1]"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end", "must be nonnegative"));
        }
        if !(self.output_interval > 0.0) {
            return Err(Error::invalid("output_interval", "must be positive"));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::invalid("dt_min", "must lie in (0, dt_max]"));
        }
        Ok(())
    }
}

/// Solver tolerances, floors and diagnostic weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    pub pressure_tol: f64,
    pub solver_tol: f64,
    pub max_iterations: usize,
    pub div_tol: f64,
    pub c_floor: f64,
    pub n_floor: f64,
    pub k_diag: f64,
    pub exclude_boundary_layer: bool,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            pressure_tol: 1e-10,
            solver_tol: 1e-12,
            max_iterations: 20_000,
            div_tol: 1e-8,
            c_floor: 1e-12,
            n_floor: 1e-12,
            k_diag: 1.0,
            exclude_boundary_layer: false,
        }
    }
}

/// Initial-data expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub n0: Expr,
    pub c0: Expr,
    pub u0: Vec<Expr>,
    /// Requested total mass; defaults to a refined quadrature of `n0`.
    pub mass: Option<f64>,
}

fn refined_mass(expr: &Expr, grid: &Grid) -> Result<f64> {
    let sub = if grid.dim() == 2 { 8 } else { 4 };
    let mut total = 0.0;
    let sub_k = if grid.dim() == 3 { sub } else { 1 };
    for idx in 0..grid.cell_count() {
        let c = grid.cell_coords(idx);
        for kz in 0..sub_k {
            for ky in 0..sub {
                for kx in 0..sub {
                    let mut p = [0.0; 3];
                    let k = [kx, ky, kz];
                    for a in 0..grid.dim() {
                        p[a] = (c[a] as f64 + (k[a] as f64 + 0.5) / sub as f64) * grid.h(a);
                    }
                    total += expr.eval_point(p, 0.0)?;
                }
            }
        }
    }
    let samples = (sub as f64).powi(grid.dim() as i32);
    Ok(total * grid.cell_volume() / samples)
}

/// Samples and normalizes the initial state.
pub fn initial_data(init: &InitialData, grid: &Grid, pressure: &mut PressureSolve) -> Result<SimState> {
    let mut nv = Vec::with_capacity(grid.cell_count());
    let mut cv = Vec::with_capacity(grid.cell_count());
    for idx in 0..grid.cell_count() {
        let p = grid.cell_center(grid.cell_coords(idx));
        let n0 = init.n0.eval_point(p, 0.0)?;
        if !(n0 > 0.0) {
            return Err(Error::InitialData(format!(
                "n0 must be positive, got {n0} at ({:.4}, {:.4}, {:.4})",
                p[0], p[1], p[2]
            )));
        }
        nv.push(n0);
        cv.push(init.c0.eval_point(p, 0.0)?);
    }
    let negative_c = cv.iter().filter(|v| **v < 0.0).count();
    if negative_c > 0 {
        warn!("c0 negative in {negative_c} cells; clamped to 0");
        for v in cv.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let mut n = ScalarField::from_values(grid, nv)?;
    let requested = match init.mass {
        Some(m) => m,
        None => refined_mass(&init.n0, grid)?,
    };
    if !(requested > 0.0 && requested.is_finite()) {
        return Err(Error::InitialData(format!("requested mass {requested} is not positive")));
    }
    let scale = requested / integrate(&n);
    for v in n.values.iter_mut() {
        *v *= scale;
    }

    let mut u = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        if let Some(expr) = init.u0.get(a) {
            for f in 0..grid.face_count(a) {
                let c = grid.face_coords(a, f);
                if !grid.is_boundary_face(a, c) {
                    u.comps[a][f] = expr.eval_point(grid.face_center(a, c), 0.0)?;
                }
            }
        }
    }
    let (u, _) = pressure_project(&u, pressure)?;
    Ok(SimState {
        t: 0.0,
        n,
        c: ScalarField::from_values(grid, cv)?,
        u,
        pressure: ScalarField::zeros(grid),
    })
}

/// Stable step size from the advective, chemotactic and reaction limits.
pub fn cfl_dt(state: &SimState, params: &ModelParams, control: &StepControl) -> Result<f64> {
    let g = *state.grid();
    if g.cell_count() == 0 {
        return Err(Error::Domain("empty state".into()));
    }
    let mut rate = 0.0f64;
    for a in 0..g.dim() {
        let umax = state.u.comps[a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rate = rate.max(umax / g.h(a));
    }
    let chem = chemotactic_velocity(&state.c, params)?;
    for a in 0..g.dim() {
        let vmax = chem.comps[a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rate = rate.max(vmax / g.h(a));
    }
    let n_max = state.n.max().max(0.0);
    let reaction = params.kappa.abs()
        + params.mu * params.alpha * n_max.powf(params.alpha - 1.0)
        + 2.0 * params.eps * n_max;
    rate = rate.max(reaction);
    let dt = if rate > 0.0 {
        (control.cfl / rate).min(control.dt_max)
    } else {
        control.dt_max
    };
    if !(dt >= control.dt_min) {
        return Err(Error::stability(format!(
            "time step {dt:.3e} fell below dt_min = {:.3e}",
            control.dt_min
        )));
    }
    Ok(dt)
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    /// `kappa * int n*` with `n*` the density entering the reaction stage.
    pub growth: f64,
    /// `mu * int (n*)^alpha`
    pub degradation: f64,
    /// `eps * int (n*)^2`
    pub quadratic_sink: f64,
    /// Cells where the reaction used the Patankar fallback.
    pub patankar_cells: usize,
    pub transport_substeps: usize,
    pub advection_substeps: usize,
    pub fluid_residual: f64,
    pub forcing_ratio: Option<f64>,
    /// Sharp forcing constant measured on the first forced step.
    pub forcing_constant: Option<f64>,
    pub divergence: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub n_min: f64,
}

impl StepRecord {
    /// `|mass change - dt * (growth - degradation - quadratic_sink)|`
    pub fn mass_residual(&self) -> f64 {
        (self.mass_after
            - self.mass_before
            - self.dt * (self.growth - self.degradation - self.quadratic_sink))
            .abs()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SimState,
    pub record: StepRecord,
    /// Density entering the reaction stage.
    pub reaction_stage: ScalarField,
}

/// Owns the parameters and solver state of one simulation.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub params: ModelParams,
    pub numerics: Numerics,
    fluid: FluidSolver,
}

fn solve_implicit_diffusion(
    rhs: &ScalarField,
    conductivity: &VectorField,
    dt: f64,
    numerics: &Numerics,
) -> Result<ScalarField> {
    let g = *rhs.grid();
    let mut diag = vec![1.0; g.cell_count()];
    for a in 0..g.dim() {
        let h2 = g.h(a) * g.h(a);
        let k = &conductivity.comps[a];
        g.for_each_face(a, |f, l, r| {
            if let (Some(l), Some(r)) = (l, r) {
                diag[l] += dt * k[f] / h2;
                diag[r] += dt * k[f] / h2;
            }
        });
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        let field = ScalarField::from_values(&g, x.to_vec()).expect("sized");
        let mut flux = gradient(&field, BoundaryCondition::Neumann0);
        for (fc, kc) in flux.comps.iter_mut().zip(&conductivity.comps) {
            for (f, k) in fc.iter_mut().zip(kc) {
                *f *= k;
            }
        }
        let div = divergence(&flux);
        for ((o, xv), d) in out.iter_mut().zip(x).zip(&div.values) {
            *o = xv - dt * d;
        }
    };
    let scale = rhs.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut x = rhs.values.clone();
    pcg(
        apply,
        &diag,
        &rhs.values,
        &mut x,
        CgOptions {
            tolerance: numerics.solver_tol * scale,
            max_iterations: numerics.max_iterations,
            mean_free: false,
        },
    )?;
    ScalarField::from_values(&g, x)
}

impl Stepper {
    pub fn new(grid: &Grid, params: ModelParams, numerics: Numerics) -> Result<Self> {
        params.validate_scalars()?;
        if !(params.eps > 0.0) {
            return Err(Error::invalid("eps", "time stepping needs eps > 0"));
        }
        let pressure = PressureSolve::new(numerics.pressure_tol, numerics.max_iterations)?;
        let settings = SolverSettings {
            tolerance: numerics.solver_tol,
            max_iterations: numerics.max_iterations,
        };
        let fluid = FluidSolver::new(grid, &params, pressure, settings)?;
        Ok(Stepper {
            params,
            numerics,
            fluid,
        })
    }

    pub fn pressure_solver(&mut self) -> &mut PressureSolve {
        &mut self.fluid.pressure
    }

    fn advect_oxygen(&self, c: &mut ScalarField, u: &VectorField, dt: f64) -> usize {
        let rate = max_inflow_rate(u);
        let substeps = ((dt * rate / SUBSTEP_SAFETY).ceil() as usize).max(1);
        if rate == 0.0 {
            return 0;
        }
        let tau = dt / substeps as f64;
        for _ in 0..substeps {
            let adv = advective_upwind(c, u);
            for (v, a) in c.values.iter_mut().zip(&adv.values) {
                *v -= tau * a;
            }
        }
        substeps
    }

    fn consume_oxygen(&self, c: &mut ScalarField, n: &ScalarField, dt: f64) -> Result<()> {
        let eps = self.params.eps;
        for (cv, &nv) in c.values.iter_mut().zip(&n.values) {
            let uptake = (eps * nv.max(0.0)).ln_1p() / eps;
            if uptake == 0.0 {
                continue;
            }
            let f = self.params.f(*cv)?;
            if *cv > self.numerics.c_floor {
                *cv *= (-(f / *cv) * uptake * dt).exp();
            } else {
                *cv = (*cv - dt * f * uptake).max(0.0);
            }
        }
        Ok(())
    }

    /// Explicit upwind transport of `n` by the fluid and chemotactic velocities.
    fn transport_density(
        &self,
        n: &mut ScalarField,
        u: &VectorField,
        chem: &VectorField,
        dt: f64,
    ) -> usize {
        let g = *n.grid();
        let eps = self.params.eps;
        let mut out_rate = vec![0.0; g.cell_count()];
        for a in 0..g.dim() {
            let h = g.h(a);
            let (ua, va) = (&u.comps[a], &chem.comps[a]);
            g.for_each_face(a, |f, l, r| {
                if let (Some(l), Some(r)) = (l, r) {
                    for w in [ua[f], va[f]] {
                        if w > 0.0 {
                            out_rate[l] += w / h;
                        } else {
                            out_rate[r] -= w / h;
                        }
                    }
                }
            });
        }
        let max_rate = out_rate.iter().fold(0.0f64, |m, v| m.max(*v));
        if max_rate == 0.0 {
            return 0;
        }
        let substeps = ((dt * max_rate / SUBSTEP_SAFETY).ceil() as usize).max(1);
        let tau = dt / substeps as f64;
        let mut flux = VectorField::zeros(&g);
        for _ in 0..substeps {
            let nv = &n.values;
            for a in 0..g.dim() {
                let (ua, va) = (&u.comps[a], &chem.comps[a]);
                let comp = &mut flux.comps[a];
                g.for_each_face(a, |f, l, r| {
                    if let (Some(l), Some(r)) = (l, r) {
                        let fluid = if ua[f] >= 0.0 { ua[f] * nv[l] } else { ua[f] * nv[r] };
                        let donor = if va[f] > 0.0 { nv[l] } else { nv[r] };
                        comp[f] = fluid + va[f] * chemotactic_coefficient(donor, 1.0, eps);
                    }
                });
            }
            let div = divergence(&flux);
            for (v, d) in n.values.iter_mut().zip(&div.values) {
                *v -= tau * d;
            }
        }
        substeps
    }

    /// Reaction `kappa n - mu n^alpha - eps n^2` from the stage `n*`.
    fn react(&self, stage: &ScalarField, dt: f64) -> (ScalarField, usize) {
        let p = &self.params;
        let mut patankar = 0;
        let mut out = stage.map(|_| 0.0);
        for (o, &n) in out.values.iter_mut().zip(&stage.values) {
            let sink_rate = p.mu * n.powf(p.alpha - 1.0) + p.eps * n;
            let factor = 1.0 + dt * (p.kappa - sink_rate);
            *o = if factor >= 0.0 {
                n * factor
            } else {
                patankar += 1;
                n * (1.0 + dt * p.kappa.max(0.0)) / (1.0 + dt * ((-p.kappa).max(0.0) + sink_rate))
            };
        }
        (out, patankar)
    }

    /// Advances `state` by `dt`.
    pub fn step(&mut self, state: &SimState, dt: f64) -> Result<StepOutcome> {
        let g = *state.grid();
        let num = self.numerics;
        let mass_before = state.mass();
        let c_prev_max = state.c.max();

        let fluid = self
            .fluid
            .fluid_step(&state.u, &state.n, &self.params, dt, state.t)?;
        let u = &fluid.u;

        // oxygen
        let mut c = state.c.clone();
        let advection_substeps = self.advect_oxygen(&mut c, u, dt);
        self.consume_oxygen(&mut c, &state.n, dt)?;
        let unit = {
            let mut k = VectorField::zeros(&g);
            for a in 0..g.dim() {
                let comp = &mut k.comps[a];
                g.for_each_face(a, |f, l, r| {
                    if l.is_some() && r.is_some() {
                        comp[f] = 1.0;
                    }
                });
            }
            k
        };
        let mut c = solve_implicit_diffusion(&c, &unit, dt, &num)?;
        let mut clamp = 0.0f64;
        for v in c.values.iter_mut() {
            let clamped = v.clamp(0.0, c_prev_max.max(0.0));
            clamp = clamp.max((clamped - *v).abs());
            *v = clamped;
        }
        if clamp > 1e-9 * c_prev_max.max(1.0) {
            return Err(Error::stability(format!(
                "oxygen left [0, {c_prev_max:.6e}] by {clamp:.3e} after diffusion"
            )));
        }

        // cells
        let chem = chemotactic_velocity(&c, &self.params)?;
        let mut n = state.n.clone();
        let transport_substeps = self.transport_density(&mut n, u, &chem, dt);
        let conductivity = diffusion_coefficients(&state.n, &self.params)?;
        let mut n_diff = solve_implicit_diffusion(&n, &conductivity, dt, &num)?;
        let scale = n_diff.max().max(0.0);
        for (cell, v) in n_diff.values.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v >= -1e-12 * scale.max(1e-300) {
                    *v = 0.0;
                } else {
                    return Err(Error::Positivity {
                        field: "n",
                        value: *v,
                        cell,
                    });
                }
            }
        }
        // transport and diffusion conserve mass; remove solver and round-off drift
        let diffused_mass = integrate(&n_diff);
        if diffused_mass > 0.0 {
            let s = mass_before / diffused_mass;
            for v in n_diff.values.iter_mut() {
                *v *= s;
            }
        }
        let stage = n_diff;
        let (n_new, patankar_cells) = self.react(&stage, dt);

        let p = &self.params;
        let growth = p.kappa * integrate(&stage);
        let degradation = if p.mu != 0.0 {
            p.mu * integrate(&stage.map(|v| v.powf(p.alpha)))
        } else {
            0.0
        };
        let quadratic_sink = p.eps * integrate(&stage.map(|v| v * v));

        let new_state = SimState {
            t: state.t + dt,
            n: n_new,
            c,
            u: fluid.u.clone(),
            pressure: fluid.pressure.clone(),
        };
        let record = StepRecord {
            t: new_state.t,
            dt,
            mass_before,
            mass_after: new_state.mass(),
            growth,
            degradation,
            quadratic_sink,
            patankar_cells,
            transport_substeps,
            advection_substeps,
            fluid_residual: fluid.energy_residual,
            forcing_ratio: fluid.forcing_ratio,
            forcing_constant: fluid.forcing_constant,
            divergence: max_divergence(&new_state.u),
            c_max: new_state.c.max(),
            c_min: new_state.c.min(),
            n_min: new_state.n.min(),
        };
        check_step_invariants(&new_state, &record, c_prev_max, num.div_tol)?;
        Ok(StepOutcome {
            state: new_state,
            record,
            reaction_stage: stage,
        })
    }
}

fn check_step_invariants(state: &SimState, rec: &StepRecord, c_prev_max: f64, div_tol: f64) -> Result<()> {
    if !(state.n.is_finite() && state.c.is_finite() && state.u.is_finite()) {
        return Err(Error::stability("state is not finite"));
    }
    if rec.n_min < 0.0 {
        return Err(Error::stability(format!("positivity: min n = {:e}", rec.n_min)));
    }
    if rec.c_min < 0.0 || rec.c_max > c_prev_max {
        return Err(Error::stability(format!(
            "maximum principle: c in [{:e}, {:e}], previous max {:e}",
            rec.c_min, rec.c_max, c_prev_max
        )));
    }
    if rec.divergence > div_tol {
        return Err(Error::stability(format!(
            "incompressibility: max |div u| = {:e}",
            rec.divergence
        )));
    }
    Ok(())
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub grid: Grid,
    pub params: ModelParams,
    pub control: StepControl,
    pub numerics: Numerics,
    pub initial: InitialData,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<DiagnosticsRow>,
    pub steps: Vec<StepRecord>,
    pub final_state: SimState,
    pub accumulator: SpaceTimeAccumulator,
    pub bounds: BoundReport,
    /// States at the output times, when requested.
    pub samples: Vec<SimState>,
}

pub fn run(setup: &RunSetup) -> Result<RunOutput> {
    run_with_observer(setup, false, |_| Ok(()))
}

/// Runs to `t_end`, calling `observe` at every output time (including `t = 0`).
pub fn run_with_observer<F>(setup: &RunSetup, keep_samples: bool, mut observe: F) -> Result<RunOutput>
where
    F: FnMut(&SimState) -> Result<()>,
{
    setup.control.validate()?;
    let regime = setup.params.regime()?;
    if !regime.tag.is_admissible() {
        return Err(Error::invalid("m", "parameters lie outside both admissible regimes"));
    }
    let mut stepper = Stepper::new(&setup.grid, setup.params.clone(), setup.numerics)?;
    let mut state = initial_data(&setup.initial, &setup.grid, stepper.pressure_solver())
        .map_err(|e| Error::RunFailed {
            t: 0.0,
            source: Box::new(e),
        })?;
    let monitor = Monitor::new(&setup.params, &setup.numerics)?;
    let mut acc = SpaceTimeAccumulator::new(&setup.params)?;
    let mut rows = vec![monitor.row(&state, &acc)?];
    let mut steps = Vec::new();
    let mut samples = Vec::new();
    observe(&state)?;
    if keep_samples {
        samples.push(state.clone());
    }

    let control = setup.control;
    let t_end = control.t_end;
    let mut k_out = 1usize;
    let wrap = |t: f64| move |e: Error| Error::RunFailed { t, source: Box::new(e) };
    while state.t < t_end {
        let next_out = (k_out as f64 * control.output_interval).min(t_end);
        let dt_cfl = cfl_dt(&state, &setup.params, &control).map_err(wrap(state.t))?;
        let remaining = next_out - state.t;
        let (dt, hits_output) = if dt_cfl >= remaining * (1.0 - 1e-12) {
            (remaining, true)
        } else {
            (dt_cfl, false)
        };
        let outcome = stepper.step(&state, dt).map_err(wrap(state.t))?;
        let mut new_state = outcome.state;
        if hits_output {
            new_state.t = next_out;
        }
        acc.accumulate(&state, &new_state, &setup.params, dt)
            .map_err(wrap(state.t))?;
        steps.push(outcome.record);
        state = new_state;
        if hits_output {
            rows.push(monitor.row(&state, &acc).map_err(wrap(state.t))?);
            observe(&state)?;
            if keep_samples {
                samples.push(state.clone());
            }
            k_out += 1;
        }
    }
    let bounds = monitor_bounds(&rows, &steps, &setup.params, setup.grid.domain_volume(), &setup.numerics);
    Ok(RunOutput {
        rows,
        steps,
        final_state: state,
        accumulator: acc,
        bounds,
        samples,
    })
}
