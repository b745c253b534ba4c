//! Incompressible fluid update on the MAC grid.
//!
//! The step is explicit in convection and forcing, implicit in viscosity and
//! ends with a discrete Chorin projection. Convection uses the filtered
//! velocity `Y_eps u` as advecting field in a central, skew-symmetric flux
//! form, so it does no work on `u` when the advecting field is discretely
//! divergence free. The viscous solve is predicted with the previous step's
//! viscous pressure gradient (incremental pressure correction).

use crate::error::{Error, Result};
use crate::grid::{lp_norm, Grid, ScalarField, VectorField};
use crate::linalg::{pcg, CgOptions};
use crate::model::ModelParams;
use crate::operators::{divergence, gradient, BoundaryCondition};

/// Settings and last-solve report of the pressure Poisson solver.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSolve {
    /// Bound on the max-norm of the discrete divergence after projection.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub last_residual: f64,
    pub last_iterations: usize,
}

impl Default for PressureSolve {
    fn default() -> Self {
        PressureSolve {
            tolerance: 1e-10,
            max_iterations: 20_000,
            last_residual: 0.0,
            last_iterations: 0,
        }
    }
}

impl PressureSolve {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance <= 1e-4) {
            return Err(Error::invalid("pressure_tol", "must lie in (0, 1e-4]"));
        }
        if max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        Ok(PressureSolve {
            tolerance,
            max_iterations,
            ..Default::default()
        })
    }
}

/// Net outward flux through the walls.
pub fn net_boundary_flux(u: &VectorField) -> f64 {
    let g = *u.grid();
    let mut net = 0.0;
    for a in 0..g.dim() {
        let area = g.cell_volume() / g.h(a);
        let n_a = g.n()[a];
        for (idx, v) in u.comps[a].iter().enumerate() {
            let c = g.face_coords(a, idx);
            if c[a] == 0 {
                net -= v * area;
            } else if c[a] == n_a {
                net += v * area;
            }
        }
    }
    net
}

fn neumann_laplacian_diag(g: &Grid) -> Vec<f64> {
    let n = g.n();
    (0..g.cell_count())
        .map(|idx| {
            let c = g.cell_coords(idx);
            (0..g.dim())
                .map(|a| {
                    let nb = (c[a] > 0) as usize + (c[a] + 1 < n[a]) as usize;
                    nb as f64 / (g.h(a) * g.h(a))
                })
                .sum()
        })
        .collect()
}

/// Solves `-L phi = -rhs` with Neumann walls and zero mean.
pub fn solve_neumann_poisson(
    rhs: &ScalarField,
    solve: &mut PressureSolve,
) -> Result<ScalarField> {
    let g = *rhs.grid();
    let diag = neumann_laplacian_diag(&g);
    let b: Vec<f64> = rhs.values.iter().map(|v| -v).collect();
    let mut x = vec![0.0; g.cell_count()];
    let apply = |x: &[f64], out: &mut [f64]| {
        let f = ScalarField::from_values(&g, x.to_vec()).expect("sized");
        let l = divergence(&gradient(&f, BoundaryCondition::Neumann0));
        for (o, v) in out.iter_mut().zip(l.values) {
            *o = -v;
        }
    };
    let report = pcg(
        apply,
        &diag,
        &b,
        &mut x,
        CgOptions {
            tolerance: solve.tolerance,
            max_iterations: solve.max_iterations,
            mean_free: true,
        },
    )?;
    solve.last_residual = report.residual;
    solve.last_iterations = report.iterations;
    ScalarField::from_values(&g, x)
}

/// Discrete Chorin projection: returns the divergence-free part of `u_star`
/// and the potential `phi` with `u = u_star - grad(phi)`.
pub fn pressure_project(
    u_star: &VectorField,
    solve: &mut PressureSolve,
) -> Result<(VectorField, ScalarField)> {
    if !u_star.is_finite() {
        return Err(Error::Domain("projection input is not finite".into()));
    }
    let net = net_boundary_flux(u_star);
    let scale = u_star.max_abs().max(1.0) * u_star.grid().domain_volume();
    if net.abs() > 1e-12 * scale {
        return Err(Error::Compatibility { net });
    }
    let div = divergence(u_star);
    let phi = solve_neumann_poisson(&div, solve)?;
    let grad = gradient(&phi, BoundaryCondition::Neumann0);
    Ok((u_star.axpy(-1.0, &grad), phi))
}

/// Max-norm of the discrete divergence.
pub fn max_divergence(u: &VectorField) -> f64 {
    divergence(u).values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Applies `I - coef * Lap` to one velocity component under no-slip walls.
///
/// Wall-normal boundary faces are held at zero; transverse walls use a
/// mirrored ghost value.
fn apply_helmholtz(g: &Grid, a: usize, coef: f64, x: &[f64], out: &mut [f64]) {
    let n = g.n();
    let dim = g.dim();
    for (f, o) in out.iter_mut().enumerate() {
        let c = g.face_coords(a, f);
        if g.is_boundary_face(a, c) {
            *o = x[f];
            continue;
        }
        let xf = x[f];
        let mut lap = 0.0;
        for b in 0..dim {
            let s = g.face_stride(a, b);
            let h2 = g.h(b) * g.h(b);
            if b == a {
                let left = if c[a] == 1 { 0.0 } else { x[f - s] };
                let right = if c[a] + 1 == n[a] { 0.0 } else { x[f + s] };
                lap += (left - 2.0 * xf + right) / h2;
            } else {
                let low = if c[b] > 0 { x[f - s] - xf } else { -2.0 * xf };
                let high = if c[b] + 1 < n[b] { x[f + s] - xf } else { -2.0 * xf };
                lap += (low + high) / h2;
            }
        }
        *o = xf - coef * lap;
    }
}

fn helmholtz_diag(g: &Grid, a: usize, coef: f64) -> Vec<f64> {
    let n = g.n();
    (0..g.face_count(a))
        .map(|f| {
            let c = g.face_coords(a, f);
            if g.is_boundary_face(a, c) {
                return 1.0;
            }
            let mut d = 0.0;
            for b in 0..g.dim() {
                let h2 = g.h(b) * g.h(b);
                if b == a {
                    d += 2.0 / h2;
                } else {
                    let walls = (c[b] == 0) as usize + (c[b] + 1 == n[b]) as usize;
                    d += (2 + walls) as f64 / h2;
                }
            }
            1.0 + coef * d
        })
        .collect()
}

/// Discrete vector Laplacian with no-slip walls.
pub fn vector_laplacian(u: &VectorField) -> VectorField {
    let g = *u.grid();
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let mut tmp = vec![0.0; g.face_count(a)];
        apply_helmholtz(&g, a, 1.0, &u.comps[a], &mut tmp);
        for (f, o) in out.comps[a].iter_mut().enumerate() {
            if !g.is_boundary_face(a, g.face_coords(a, f)) {
                *o = u.comps[a][f] - tmp[f];
            }
        }
    }
    out
}

/// Dirichlet energy `||grad u||^2` including the wall layers; equals
/// `-<vector_laplacian(u), u>` when wall-normal faces vanish.
pub fn dirichlet_energy(u: &VectorField) -> f64 {
    let g = *u.grid();
    let n = g.n();
    let mut total = 0.0;
    for a in 0..g.dim() {
        let comp = &u.comps[a];
        for (f, &v) in comp.iter().enumerate() {
            let c = g.face_coords(a, f);
            for b in 0..g.dim() {
                let h2 = g.h(b) * g.h(b);
                let s = g.face_stride(a, b);
                if b == a {
                    if c[a] < n[a] {
                        let d = comp[f + s] - v;
                        total += d * d / h2;
                    }
                } else if g.is_boundary_face(a, c) {
                    continue;
                } else {
                    if c[b] + 1 < n[b] {
                        let d = comp[f + s] - v;
                        total += d * d / h2;
                    }
                    let walls = (c[b] == 0) as usize + (c[b] + 1 == n[b]) as usize;
                    total += walls as f64 * 2.0 * v * v / h2;
                }
            }
        }
    }
    total * g.cell_volume()
}

/// Solves `(I - coef * Lap) w = rhs` per component with zero wall-normal faces.
pub fn helmholtz_solve(
    rhs: &VectorField,
    coef: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<VectorField> {
    let g = *rhs.grid();
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let mut b = rhs.comps[a].clone();
        for (f, v) in b.iter_mut().enumerate() {
            if g.is_boundary_face(a, g.face_coords(a, f)) {
                *v = 0.0;
            }
        }
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let diag = helmholtz_diag(&g, a, coef);
        let mut x = b.clone();
        pcg(
            |x: &[f64], o: &mut [f64]| apply_helmholtz(&g, a, coef, x, o),
            &diag,
            &b,
            &mut x,
            CgOptions {
                tolerance: tolerance * scale,
                max_iterations,
                mean_free: false,
            },
        )?;
        out.comps[a] = x;
    }
    Ok(out)
}

/// Linear-solver settings shared by the viscous and filter solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-12,
            max_iterations: 20_000,
        }
    }
}

/// Filtered velocity `(I + eps A)^{-1} u`: a Helmholtz solve followed by projection.
pub fn yosida_apply(
    u: &VectorField,
    eps: f64,
    pressure: &mut PressureSolve,
    settings: SolverSettings,
) -> Result<VectorField> {
    if eps < 0.0 {
        return Err(Error::invalid("eps", "must be nonnegative"));
    }
    if eps == 0.0 {
        return Ok(pressure_project(u, pressure)?.0);
    }
    let w = helmholtz_solve(u, eps, settings.tolerance, settings.max_iterations)?;
    Ok(pressure_project(&w, pressure)?.0)
}

/// Skew-symmetric convection `div(w (x) u)` on face control volumes.
pub fn convection(w: &VectorField, u: &VectorField) -> VectorField {
    let g = *u.grid();
    let n = g.n();
    let dim = g.dim();
    let mut out = VectorField::zeros(&g);
    for a in 0..dim {
        let ua = &u.comps[a];
        let wa = &w.comps[a];
        let saa = g.face_stride(a, a);
        for (f, o) in out.comps[a].iter_mut().enumerate() {
            let c = g.face_coords(a, f);
            if g.is_boundary_face(a, c) {
                continue;
            }
            let mut total = 0.0;
            for b in 0..dim {
                if b == a {
                    let wr = 0.5 * (wa[f] + wa[f + saa]);
                    let ur = 0.5 * (ua[f] + ua[f + saa]);
                    let wl = 0.5 * (wa[f - saa] + wa[f]);
                    let ul = 0.5 * (ua[f - saa] + ua[f]);
                    total += (wr * ur - wl * ul) / g.h(a);
                    continue;
                }
                let sab = g.face_stride(a, b);
                let wb = &w.comps[b];
                // b-faces shared by the two cells straddling face f
                let wb_at = |ib: usize| {
                    let mut left = c;
                    left[a] -= 1;
                    left[b] = ib;
                    let mut right = c;
                    right[b] = ib;
                    0.5 * (wb[g.face_index(b, left)] + wb[g.face_index(b, right)])
                };
                let high = if c[b] + 1 < n[b] {
                    wb_at(c[b] + 1) * 0.5 * (ua[f] + ua[f + sab])
                } else {
                    0.0
                };
                let low = if c[b] > 0 {
                    wb_at(c[b]) * 0.5 * (ua[f - sab] + ua[f])
                } else {
                    0.0
                };
                total += (high - low) / g.h(b);
            }
            *o = total;
        }
    }
    out
}

/// Kinetic-energy norm `||u||^2`.
pub fn velocity_energy(u: &VectorField) -> f64 {
    u.dot(u)
}

/// Per-step fluid report.
#[derive(Debug, Clone)]
pub struct FluidStep {
    pub u: VectorField,
    pub pressure: ScalarField,
    /// `(|u+|^2 - |u|^2)/(2 dt) + |grad u+|^2 - <F, u+>`
    pub energy_residual: f64,
    /// `<F, u+>`
    pub forcing_work: f64,
    /// `<F, u+> / ((|n|_{6/5} + |g|_{6/5}) |grad u+|)` when defined.
    pub forcing_ratio: Option<f64>,
    /// Sharp constant of the same inequality for the first nonzero forcing:
    /// `sup_v <F, v> / ((|n|_{6/5} + |g|_{6/5}) |grad v|)` over no-slip `v`.
    pub forcing_constant: Option<f64>,
    pub divergence: f64,
    pub dirichlet: f64,
}

/// Fluid stepper with cached potential gradient and solver state.
#[derive(Debug, Clone)]
pub struct FluidSolver {
    grid: Grid,
    grad_potential: Option<VectorField>,
    /// Viscous part of the pressure from the previous step, reused as a
    /// predictor in the next viscous solve.
    viscous_pressure: Option<ScalarField>,
    forcing_constant: Option<f64>,
    pub pressure: PressureSolve,
    pub settings: SolverSettings,
}

impl FluidSolver {
    pub fn new(
        grid: &Grid,
        params: &ModelParams,
        pressure: PressureSolve,
        settings: SolverSettings,
    ) -> Result<Self> {
        let grad_potential = match &params.potential {
            Some(phi) if !phi.is_zero_constant() => {
                let mut values = Vec::with_capacity(grid.cell_count());
                for idx in 0..grid.cell_count() {
                    values.push(phi.eval_point(grid.cell_center(grid.cell_coords(idx)), 0.0)?);
                }
                let field = ScalarField::from_values(grid, values)?;
                Some(gradient(&field, BoundaryCondition::Neumann0))
            }
            _ => None,
        };
        Ok(FluidSolver {
            grid: *grid,
            grad_potential,
            viscous_pressure: None,
            forcing_constant: None,
            pressure,
            settings,
        })
    }

    /// Body force `n grad(Phi) + g(t)` on faces, zero on wall-normal faces.
    pub fn body_force(
        &self,
        n: &ScalarField,
        params: &ModelParams,
        t: f64,
    ) -> Result<(VectorField, f64)> {
        let g = self.grid;
        let mut force = VectorField::zeros(&g);
        if let Some(gp) = &self.grad_potential {
            let nv = &n.values;
            for a in 0..g.dim() {
                let comp = &mut force.comps[a];
                let gpa = &gp.comps[a];
                g.for_each_face(a, |f, l, r| {
                    if let (Some(l), Some(r)) = (l, r) {
                        comp[f] = 0.5 * (nv[l] + nv[r]) * gpa[f];
                    }
                });
            }
        }
        let mut g_norm = 0.0;
        if params.forcing.iter().any(|e| !e.is_zero_constant()) {
            let mut gf = VectorField::zeros(&g);
            for a in 0..g.dim() {
                let Some(expr) = params.forcing.get(a) else {
                    continue;
                };
                for f in 0..g.face_count(a) {
                    let c = g.face_coords(a, f);
                    if !g.is_boundary_face(a, c) {
                        gf.comps[a][f] = expr.eval_point(g.face_center(a, c), t)?;
                    }
                }
            }
            let centers = gf.to_cell_centers();
            let mag = ScalarField::from_values(
                &g,
                (0..g.cell_count())
                    .map(|i| centers.iter().map(|c| c.values[i].powi(2)).sum::<f64>().sqrt())
                    .collect(),
            )?;
            g_norm = lp_norm(&mag, 1.2)?;
            force = force.axpy(1.0, &gf);
        }
        Ok((force, g_norm))
    }

    /// One fluid step from `u` driven by the density `n` at time `t`.
    pub fn fluid_step(
        &mut self,
        u: &VectorField,
        n: &ScalarField,
        params: &ModelParams,
        dt: f64,
        t: f64,
    ) -> Result<FluidStep> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let g = self.grid;
        let w = yosida_apply(u, params.eps, &mut self.pressure, self.settings)?;
        let speed = (0..g.dim())
            .map(|a| w.comps[a].iter().fold(0.0f64, |m, v| m.max(v.abs())) / g.h(a))
            .fold(0.0, f64::max);
        if dt * speed > 1.0 + 1e-12 {
            return Err(Error::stability(format!(
                "advective CFL violated: dt * max|w|/h = {:.3e}",
                dt * speed
            )));
        }
        let (force, g_norm) = self.body_force(n, params, t + 0.5 * dt)?;
        let explicit = force.axpy(-1.0, &convection(&w, u));
        let (increment, psi) = pressure_project(&explicit, &mut self.pressure)?;
        let mut u_star = u.axpy(dt, &increment);
        if let Some(q) = &self.viscous_pressure {
            u_star = u_star.axpy(-dt, &gradient(q, BoundaryCondition::Neumann0));
        }
        let viscous = helmholtz_solve(
            &u_star,
            dt,
            self.settings.tolerance,
            self.settings.max_iterations,
        )?;
        let (u_new, phi) = pressure_project(&viscous, &mut self.pressure)?;
        let q_new = match self.viscous_pressure.take() {
            Some(q) => q.values.iter().zip(&phi.values).map(|(q, f)| q + f / dt).collect(),
            None => phi.values.iter().map(|f| f / dt).collect(),
        };
        let q_new = ScalarField::from_values(&g, q_new)?;
        let pressure = ScalarField::from_values(
            &g,
            psi.values.iter().zip(&q_new.values).map(|(p, q)| -(p + q)).collect(),
        )?;
        self.viscous_pressure = Some(q_new);

        let dirichlet = dirichlet_energy(&u_new);
        let forcing_work = force.dot(&u_new);
        let energy_residual = (velocity_energy(&u_new) - velocity_energy(u)) / (2.0 * dt)
            + dirichlet
            - forcing_work;
        let force_norm = lp_norm(&n.map(f64::abs), 1.2)? + g_norm;
        let denom = force_norm * dirichlet.sqrt();
        let forcing_ratio = if denom > 1e-300 && forcing_work.abs() > 0.0 {
            Some(forcing_work / denom)
        } else {
            None
        };
        if self.forcing_constant.is_none() && forcing_ratio.is_some() {
            self.forcing_constant = Some(self.dual_norm(&force)? / force_norm);
        }
        Ok(FluidStep {
            divergence: max_divergence(&u_new),
            u: u_new,
            pressure,
            energy_residual,
            forcing_work,
            forcing_ratio,
            forcing_constant: self.forcing_constant,
            dirichlet,
        })
    }

    /// `sup_v <f, v> / |grad v|` over no-slip fields, attained at `v = (-Lap)^{-1} f`.
    fn dual_norm(&self, f: &VectorField) -> Result<f64> {
        let g = self.grid;
        let length = (0..g.dim()).map(|a| g.extent(a)).fold(0.0, f64::max);
        // (I - c Lap) with a large c inverts the Laplacian up to a relative 1/(c pi^2)
        let v = helmholtz_solve(
            f,
            1e8 * length * length,
            self.settings.tolerance,
            self.settings.max_iterations,
        )?;
        let energy = dirichlet_energy(&v);
        Ok(if energy > 0.0 { f.dot(&v) / energy.sqrt() } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use std::f64::consts::PI;

    fn stream_velocity(g: &Grid, amp: f64) -> VectorField {
        let psi = |x: f64, y: f64| amp * (PI * x).sin().powi(2) * (PI * y).sin().powi(2);
        let hx = g.h(0);
        let hy = g.h(1);
        VectorField::from_fn(g, |a, p| {
            if a == 0 {
                (psi(p[0], p[1] + 0.5 * hy) - psi(p[0], p[1] - 0.5 * hy)) / hy
            } else {
                -(psi(p[0] + 0.5 * hx, p[1]) - psi(p[0] - 0.5 * hx, p[1])) / hx
            }
        })
    }

    fn wavy(g: &Grid) -> VectorField {
        let mut u = VectorField::from_fn(g, |a, p| {
            ((a + 2) as f64 * p[0] + 3.0 * p[1]).sin() + 0.3 * (5.0 * p[1] * p[0]).cos()
        });
        u.zero_boundary_normal();
        u
    }

    #[test]
    fn projection_examples() {
        let g = Grid::unit(2, 16).unwrap();
        let mut ps = PressureSolve::default();
        let u = stream_velocity(&g, 1.0);
        let (v, p) = pressure_project(&u, &mut ps).unwrap();
        assert!(v.axpy(-1.0, &u).max_abs() < 1e-10);
        assert!(p.values.iter().all(|x| x.abs() < 1e-9));

        let phi = ScalarField::from_fn(&g, |q| (PI * q[0]).cos() * q[1]);
        let grad = gradient(&phi, BoundaryCondition::Neumann0);
        let (v, _) = pressure_project(&grad, &mut ps).unwrap();
        assert!(v.max_abs() < 1e-9);

        let r = wavy(&g);
        let (v, _) = pressure_project(&r, &mut ps).unwrap();
        assert!(max_divergence(&v) <= 1e-8);
        let (v2, _) = pressure_project(&v, &mut ps).unwrap();
        assert!(v2.axpy(-1.0, &v).max_abs() < 1e-10);
    }

    #[test]
    fn incompatible_wall_flux() {
        let g = Grid::unit(2, 8).unwrap();
        let mut u = VectorField::zeros(&g);
        u.comps[0][g.face_index(0, [0, 3, 0])] = 1.0;
        let mut ps = PressureSolve::default();
        assert!(matches!(
            pressure_project(&u, &mut ps),
            Err(Error::Compatibility { .. })
        ));
        assert!(PressureSolve::new(1e-3, 10).is_err());
    }

    #[test]
    fn dirichlet_energy_matches_laplacian() {
        for dim in [2, 3] {
            let g = Grid::unit(dim, 6).unwrap();
            let mut u = VectorField::from_fn(&g, |a, p| {
                (1.0 + a as f64) * (3.0 * p[0] + p[1] + 2.0 * p[2]).sin()
            });
            u.zero_boundary_normal();
            let lap = vector_laplacian(&u);
            let e = dirichlet_energy(&u);
            assert!(e > 0.0);
            assert!((e + lap.dot(&u)).abs() < 1e-10 * e);
        }
    }

    #[test]
    fn convection_does_no_work_against_divergence_free_wind() {
        for dim in [2, 3] {
            let g = Grid::unit(dim, 6).unwrap();
            let mut ps = PressureSolve::default();
            let (w, _) = pressure_project(&wavy(&g), &mut ps).unwrap();
            let mut u = VectorField::from_fn(&g, |a, p| (p[0] * 7.0 + a as f64).cos() + p[1]);
            u.zero_boundary_normal();
            let work = convection(&w, &u).dot(&u);
            assert!(work.abs() < 1e-11, "dim {dim}: {work}");
        }
    }

    #[test]
    fn yosida_is_contractive() {
        let g = Grid::unit(2, 8).unwrap();
        let mut ps = PressureSolve::default();
        let u = wavy(&g);
        let s = SolverSettings::default();
        assert!(yosida_apply(&VectorField::zeros(&g), 0.5, &mut ps, s).unwrap().max_abs() == 0.0);
        for eps in [0.0, 0.01, 0.5, 3.0] {
            let w = yosida_apply(&u, eps, &mut ps, s).unwrap();
            assert!(w.norm_l2() <= u.norm_l2() * (1.0 + 1e-8));
        }
        let v = stream_velocity(&g, 1.0);
        let w0 = yosida_apply(&v, 0.0, &mut ps, s).unwrap();
        assert!(w0.axpy(-1.0, &v).max_abs() < 1e-10);
    }

    #[test]
    fn quiescent_fluid_stays_at_rest() {
        let g = Grid::unit(2, 8).unwrap();
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1).unwrap();
        let mut fs =
            FluidSolver::new(&g, &p, PressureSolve::default(), SolverSettings::default()).unwrap();
        let out = fs
            .fluid_step(&VectorField::zeros(&g), &ScalarField::zeros(&g), &p, 0.01, 0.0)
            .unwrap();
        assert_eq!(out.u.max_abs(), 0.0);
    }

    #[test]
    fn gradient_potential_with_constant_density_is_balanced_by_pressure() {
        let g = Grid::unit(2, 8).unwrap();
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1)
            .unwrap()
            .with_potential(Some(Expr::parse("x + 2*y").unwrap()));
        let mut fs =
            FluidSolver::new(&g, &p, PressureSolve::default(), SolverSettings::default()).unwrap();
        let n = ScalarField::constant(&g, 3.0);
        let out = fs.fluid_step(&VectorField::zeros(&g), &n, &p, 0.01, 0.0).unwrap();
        assert!(out.u.max_abs() < 1e-9);
    }

    #[test]
    fn decaying_shear_loses_energy_each_step() {
        let g = Grid::unit(2, 16).unwrap();
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1).unwrap();
        let mut fs =
            FluidSolver::new(&g, &p, PressureSolve::default(), SolverSettings::default()).unwrap();
        let mut ps = PressureSolve::default();
        let mut u = VectorField::from_fn(&g, |a, q| if a == 0 { (PI * q[1]).sin() } else { 0.0 });
        u.zero_boundary_normal();
        let mut u = pressure_project(&u, &mut ps).unwrap().0;
        let n = ScalarField::zeros(&g);
        let mut e = velocity_energy(&u);
        for k in 0..10 {
            let out = fs.fluid_step(&u, &n, &p, 1e-3, k as f64 * 1e-3).unwrap();
            let e_new = velocity_energy(&out.u);
            assert!(e_new < e);
            assert!(out.divergence <= 1e-8);
            e = e_new;
            u = out.u;
        }
    }

    #[test]
    fn steady_forcing_ratio_never_exceeds_the_sharp_constant() {
        let g = Grid::unit(2, 12).unwrap();
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1)
            .unwrap()
            .with_potential(Some(Expr::parse("y").unwrap()))
            .with_forcing(vec![
                Expr::parse("sin(3*x)*y").unwrap(),
                Expr::parse("cos(2*y) + x").unwrap(),
            ]);
        let mut fs =
            FluidSolver::new(&g, &p, PressureSolve::default(), SolverSettings::default()).unwrap();
        let n = ScalarField::from_fn(&g, |q| 1.0 + q[0] * q[1]);
        let mut u = VectorField::zeros(&g);
        let mut constant = None;
        for _ in 0..40 {
            let out = fs.fluid_step(&u, &n, &p, 0.01, 0.0).unwrap();
            let c1 = *constant.get_or_insert(out.forcing_constant.unwrap());
            assert_eq!(out.forcing_constant, Some(c1));
            assert!(out.forcing_ratio.unwrap() <= c1 * (1.0 + 1e-9));
            u = out.u;
        }
    }
}
