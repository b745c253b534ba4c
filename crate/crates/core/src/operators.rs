//! Discrete differential operators on the staggered grid.
//!
//! Sign conventions: `gradient` returns face-normal derivatives, `divergence`
//! maps face fluxes to cell rates `(F_right - F_left) / h` summed over axes.
//! Fluxes returned by `diffusion_flux` and `chemotaxis_flux` enter the density
//! equation as `n_t = div(diffusion) - div(chemotaxis)`.

use crate::error::{Error, Result};
use crate::grid::{FluxField, Grid, ScalarField, VectorField};
use crate::model::{d_eps, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Zero normal derivative: boundary faces carry zero gradient.
    Neumann0,
    /// Zero wall value, imposed half a cell outside the last center.
    Dirichlet0,
}

pub fn gradient(field: &ScalarField, bc: BoundaryCondition) -> VectorField {
    let g = *field.grid();
    let v = &field.values;
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let h = g.h(a);
        let comp = &mut out.comps[a];
        g.for_each_face(a, |f, l, r| {
            comp[f] = match (l, r, bc) {
                (Some(l), Some(r), _) => (v[r] - v[l]) / h,
                (_, _, BoundaryCondition::Neumann0) => 0.0,
                (None, Some(r), BoundaryCondition::Dirichlet0) => 2.0 * v[r] / h,
                (Some(l), None, BoundaryCondition::Dirichlet0) => -2.0 * v[l] / h,
                (None, None, _) => unreachable!(),
            };
        });
    }
    out
}

pub fn divergence(flux: &FluxField) -> ScalarField {
    let g = *flux.grid();
    let mut out = ScalarField::zeros(&g);
    for a in 0..g.dim() {
        let inv_h = 1.0 / g.h(a);
        let comp = &flux.comps[a];
        let fs = g.face_stride(a, a);
        for (idx, o) in out.values.iter_mut().enumerate() {
            let f = g.face_index(a, g.cell_coords(idx));
            *o += (comp[f + fs] - comp[f]) * inv_h;
        }
    }
    out
}

pub fn laplacian(field: &ScalarField, bc: BoundaryCondition) -> ScalarField {
    divergence(&gradient(field, bc))
}

/// Cell-centered weights of the first-derivative stencil along one axis at
/// index `i` of `n`: centered inside, second-order one-sided at the ends.
fn first_derivative_weights(i: usize, n: usize, h: f64) -> Vec<(isize, f64)> {
    let s = 1.0 / (2.0 * h);
    if i == 0 {
        if n >= 3 {
            vec![(0, -3.0 * s), (1, 4.0 * s), (2, -s)]
        } else {
            vec![(0, -1.0 / h), (1, 1.0 / h)]
        }
    } else if i == n - 1 {
        if n >= 3 {
            vec![(0, 3.0 * s), (-1, -4.0 * s), (-2, s)]
        } else {
            vec![(0, 1.0 / h), (-1, -1.0 / h)]
        }
    } else {
        vec![(-1, -s), (1, s)]
    }
}

fn second_derivative_weights(i: usize, n: usize, h: f64) -> Vec<(isize, f64)> {
    let s = 1.0 / (h * h);
    if i > 0 && i < n - 1 {
        return vec![(-1, s), (0, -2.0 * s), (1, s)];
    }
    let sign: isize = if i == 0 { 1 } else { -1 };
    match n {
        0..=2 => vec![],
        3 => vec![(0, s), (sign, -2.0 * s), (2 * sign, s)],
        _ => vec![
            (0, 2.0 * s),
            (sign, -5.0 * s),
            (2 * sign, 4.0 * s),
            (3 * sign, -s),
        ],
    }
}

/// Cells within one cell of the boundary, where the Hessian uses one-sided closures.
pub fn boundary_layer_mask(grid: &Grid) -> Vec<bool> {
    let n = grid.n();
    (0..grid.cell_count())
        .map(|idx| {
            let c = grid.cell_coords(idx);
            (0..grid.dim()).any(|a| c[a] == 0 || c[a] == n[a] - 1)
        })
        .collect()
}

/// Per cell, the squared Frobenius norm of the discrete Hessian.
pub fn hessian_frobenius_sq(field: &ScalarField) -> ScalarField {
    let g = *field.grid();
    let n = g.n();
    let dim = g.dim();
    let v = &field.values;
    let mut out = ScalarField::zeros(&g);
    for (idx, o) in out.values.iter_mut().enumerate() {
        let c = g.cell_coords(idx);
        let mut total = 0.0;
        for a in 0..dim {
            let sa = g.cell_stride(a) as isize;
            let d2: f64 = second_derivative_weights(c[a], n[a], g.h(a))
                .iter()
                .map(|&(off, w)| w * v[(idx as isize + off * sa) as usize])
                .sum();
            total += d2 * d2;
            for b in (a + 1)..dim {
                let sb = g.cell_stride(b) as isize;
                let wa = first_derivative_weights(c[a], n[a], g.h(a));
                let wb = first_derivative_weights(c[b], n[b], g.h(b));
                let mut mixed = 0.0;
                for &(oa, xa) in &wa {
                    for &(ob, xb) in &wb {
                        mixed += xa * xb * v[(idx as isize + oa * sa + ob * sb) as usize];
                    }
                }
                total += 2.0 * mixed * mixed;
            }
        }
        *o = total;
    }
    out
}

/// Upwind donor-cell flux `u * field` on interior faces; zero on walls.
pub fn upwind_flux(field: &ScalarField, u: &VectorField) -> FluxField {
    let g = *field.grid();
    let v = &field.values;
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let vel = &u.comps[a];
        let comp = &mut out.comps[a];
        g.for_each_face(a, |f, l, r| {
            if let (Some(l), Some(r)) = (l, r) {
                let w = vel[f];
                comp[f] = if w >= 0.0 { w * v[l] } else { w * v[r] };
            }
        });
    }
    out
}

/// Conservative upwind transport term `div(u * field)`; the density tendency is its negative.
pub fn advect_scalar(field: &ScalarField, u: &VectorField) -> ScalarField {
    divergence(&upwind_flux(field, u))
}

/// Advective-form upwind `u . grad(field)` built from face velocities.
///
/// An explicit Euler step with it is a convex combination of neighbours
/// whenever `dt * max_inflow_rate(u) <= 1`.
pub fn advective_upwind(field: &ScalarField, u: &VectorField) -> ScalarField {
    let g = *field.grid();
    let v = &field.values;
    let n = g.n();
    let mut out = ScalarField::zeros(&g);
    for a in 0..g.dim() {
        let inv_h = 1.0 / g.h(a);
        let vel = &u.comps[a];
        let fs = g.face_stride(a, a);
        let cs = g.cell_stride(a);
        for (idx, o) in out.values.iter_mut().enumerate() {
            let c = g.cell_coords(idx);
            let f = g.face_index(a, c);
            let (ul, ur) = (vel[f], vel[f + fs]);
            let mut t = 0.0;
            if c[a] > 0 && ul > 0.0 {
                t += ul * (v[idx] - v[idx - cs]);
            }
            if c[a] + 1 < n[a] && ur < 0.0 {
                t += ur * (v[idx + cs] - v[idx]);
            }
            *o += t * inv_h;
        }
    }
    out
}

/// Largest per-cell inflow rate `sum_a (max(u_left,0) - min(u_right,0)) / h_a`.
pub fn max_inflow_rate(u: &VectorField) -> f64 {
    let g = *u.grid();
    let mut rate = vec![0.0; g.cell_count()];
    for a in 0..g.dim() {
        let inv_h = 1.0 / g.h(a);
        let vel = &u.comps[a];
        let fs = g.face_stride(a, a);
        for (idx, r) in rate.iter_mut().enumerate() {
            let f = g.face_index(a, g.cell_coords(idx));
            *r += (vel[f].max(0.0) - vel[f + fs].min(0.0)) * inv_h;
        }
    }
    rate.into_iter().fold(0.0, f64::max)
}

fn check_nonnegative(field: &ScalarField, name: &'static str) -> Result<()> {
    if let Some((cell, &value)) = field
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0))
    {
        return Err(Error::Positivity {
            field: name,
            value,
            cell,
        });
    }
    Ok(())
}

/// Face conductivities `D_eps(mean n)` on interior faces, zero on walls.
pub fn diffusion_coefficients(n: &ScalarField, params: &ModelParams) -> Result<VectorField> {
    check_nonnegative(n, "n")?;
    let g = *n.grid();
    let v = &n.values;
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let comp = &mut out.comps[a];
        let mut err = None;
        g.for_each_face(a, |f, l, r| {
            if err.is_some() {
                return;
            }
            if let (Some(l), Some(r)) = (l, r) {
                match d_eps(0.5 * (v[l] + v[r]), params) {
                    Ok(d) => comp[f] = d,
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(out)
}

/// Nonlinear diffusion flux `D_eps(n_face) * dn/dx` with no-flux walls.
pub fn diffusion_flux(n: &ScalarField, params: &ModelParams) -> Result<FluxField> {
    let mut flux = diffusion_coefficients(n, params)?;
    let grad = gradient(n, BoundaryCondition::Neumann0);
    for (fc, gc) in flux.comps.iter_mut().zip(&grad.comps) {
        for (f, d) in fc.iter_mut().zip(gc) {
            *f *= d;
        }
    }
    Ok(flux)
}

/// Saturating chemotactic coefficient `n chi / (1 + eps n)`.
#[inline]
pub fn chemotactic_coefficient(n: f64, chi: f64, eps: f64) -> f64 {
    n * chi / (1.0 + eps * n)
}

/// Face chemotactic velocities `chi(c_face) * dc/dx`, zero on walls.
pub fn chemotactic_velocity(c: &ScalarField, params: &ModelParams) -> Result<VectorField> {
    let g = *c.grid();
    let cv = &c.values;
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let h = g.h(a);
        let comp = &mut out.comps[a];
        let mut err = None;
        g.for_each_face(a, |f, l, r| {
            if err.is_some() {
                return;
            }
            if let (Some(l), Some(r)) = (l, r) {
                match params.chi(0.5 * (cv[l] + cv[r])) {
                    Ok(chi) => comp[f] = chi * (cv[r] - cv[l]) / h,
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(out)
}

/// Mollified chemotaxis flux with the density upwinded by the chemotactic velocity.
///
/// The third argument is accepted for signature symmetry with the transport
/// terms and is not used.
pub fn chemotaxis_flux(
    n: &ScalarField,
    c: &ScalarField,
    _u: Option<&VectorField>,
    params: &ModelParams,
) -> Result<FluxField> {
    check_nonnegative(n, "n")?;
    check_nonnegative(c, "c")?;
    let g = *n.grid();
    let mut out = chemotactic_velocity(c, params)?;
    let nv = &n.values;
    let eps = params.eps;
    for a in 0..g.dim() {
        let comp = &mut out.comps[a];
        g.for_each_face(a, |f, l, r| {
            if let (Some(l), Some(r)) = (l, r) {
                let w = comp[f];
                let donor = if w > 0.0 {
                    nv[l]
                } else if w < 0.0 {
                    nv[r]
                } else {
                    0.5 * (nv[l] + nv[r])
                };
                // chemotactic_coefficient with chi folded into w
                comp[f] = chemotactic_coefficient(donor, 1.0, eps) * w;
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarFn;

    fn grid(n: usize) -> Grid {
        Grid::unit(2, n).unwrap()
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let g = grid(6);
        let c = ScalarField::constant(&g, 3.0);
        assert!(gradient(&c, BoundaryCondition::Neumann0).max_abs() == 0.0);
        let ramp = ScalarField::from_fn(&g, |p| 2.5 * p[0]);
        let gr = gradient(&ramp, BoundaryCondition::Neumann0);
        for idx in 0..g.face_count(0) {
            let fc = g.face_coords(0, idx);
            let want = if g.is_boundary_face(0, fc) { 0.0 } else { 2.5 };
            assert!((gr.comps[0][idx] - want).abs() < 1e-12);
        }
        assert!(gr.comps[1].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dirichlet_boundary_faces() {
        let g = grid(4);
        let f = ScalarField::constant(&g, 1.0);
        let gr = gradient(&f, BoundaryCondition::Dirichlet0);
        assert_eq!(gr.comps[0][g.face_index(0, [0, 1, 0])], 8.0);
        assert_eq!(gr.comps[0][g.face_index(0, [4, 1, 0])], -8.0);
    }

    #[test]
    fn divergence_telescopes() {
        let g = grid(5);
        let mut flux = VectorField::from_fn(&g, |_, _| 1.0);
        flux.zero_boundary_normal();
        let d = divergence(&flux);
        for idx in 0..g.cell_count() {
            let c = g.cell_coords(idx);
            let edge = c[0] == 0 || c[0] == 4 || c[1] == 0 || c[1] == 4;
            if !edge {
                assert!(d.values[idx].abs() < 1e-12);
            }
        }
        assert!(crate::grid::integrate(&d).abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_quadratic() {
        let g = grid(16);
        let f = ScalarField::from_fn(&g, |p| p[0] * p[0]);
        let l = laplacian(&f, BoundaryCondition::Neumann0);
        for idx in 0..g.cell_count() {
            let c = g.cell_coords(idx);
            if c[0] > 0 && c[0] < 15 {
                assert!((l.values[idx] - 2.0).abs() < 1e-9);
            }
        }
        assert!(laplacian(&ScalarField::constant(&g, 4.0), BoundaryCondition::Neumann0)
            .values
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn hessian_examples() {
        let g = grid(8);
        let z = hessian_frobenius_sq(&ScalarField::constant(&g, 1.0));
        assert!(z.values.iter().all(|v| v.abs() < 1e-20));
        let q = hessian_frobenius_sq(&ScalarField::from_fn(&g, |p| 0.5 * p[0] * p[0]));
        let xy = hessian_frobenius_sq(&ScalarField::from_fn(&g, |p| p[0] * p[1]));
        // the closures are exact for quadratics, so boundary cells agree too
        for idx in 0..g.cell_count() {
            assert!((q.values[idx] - 1.0).abs() < 1e-8, "{}", q.values[idx]);
            assert!((xy.values[idx] - 2.0).abs() < 1e-8, "{}", xy.values[idx]);
        }
        let g3 = Grid::unit(3, 5).unwrap();
        let xyz = hessian_frobenius_sq(&ScalarField::from_fn(&g3, |p| p[0] * p[2] + p[1] * p[1]));
        assert!(xyz.values.iter().all(|v| (v - 6.0).abs() < 1e-8));
        let mask = boundary_layer_mask(&g);
        assert_eq!(mask.iter().filter(|b| !**b).count(), 36);
    }

    #[test]
    fn advection_basics() {
        let g = grid(6);
        let f = ScalarField::from_fn(&g, |p| p[0] + p[1]);
        let zero = VectorField::zeros(&g);
        assert!(advect_scalar(&f, &zero).values.iter().all(|v| *v == 0.0));
        // discrete curl of a streamfunction is divergence free
        let psi = |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        let h = g.h(0);
        let u = VectorField::from_fn(&g, |a, p| {
            if a == 0 {
                (psi(p[0], p[1] + 0.5 * h) - psi(p[0], p[1] - 0.5 * h)) / h
            } else {
                -(psi(p[0] + 0.5 * h, p[1]) - psi(p[0] - 0.5 * h, p[1])) / h
            }
        });
        assert!(divergence(&u).values.iter().all(|v| v.abs() < 1e-12));
        let one = ScalarField::constant(&g, 1.0);
        assert!(advect_scalar(&one, &u).values.iter().all(|v| v.abs() < 1e-12));
        assert!(advective_upwind(&one, &u).values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn upwind_translation_by_one_cell() {
        let g = Grid::new(2, &[8, 2], &[8.0, 2.0]).unwrap();
        let mut u = VectorField::from_fn(&g, |a, _| if a == 0 { 1.0 } else { 0.0 });
        u.zero_boundary_normal();
        let mut n = ScalarField::from_fn(&g, |p| if p[0] > 2.0 && p[0] < 4.0 { 1.0 } else { 0.0 });
        let dt = 1.0;
        for _ in 0..3 {
            let t = advect_scalar(&n, &u);
            for (v, d) in n.values.iter_mut().zip(&t.values) {
                *v -= dt * d;
            }
        }
        for idx in 0..g.cell_count() {
            let i = g.cell_coords(idx)[0];
            let want = if i == 5 || i == 6 { 1.0 } else { 0.0 };
            assert_eq!(n.values[idx], want, "cell {i}");
        }
    }

    #[test]
    fn diffusion_flux_examples() {
        let g = Grid::new(2, &[2, 2], &[2.0, 2.0]).unwrap();
        let p = ModelParams::new(2.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1)
            .unwrap()
            .with_diffusion(ScalarFn::Identity);
        let n = ScalarField::from_values(&g, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let fl = diffusion_flux(&n, &p).unwrap();
        let face = g.face_index(0, [1, 0, 0]);
        assert!((fl.comps[0][face] - 1.6).abs() < 1e-14);
        assert_eq!(fl.comps[0][g.face_index(0, [0, 0, 0])], 0.0);
        let bad = ScalarField::from_values(&g, vec![1.0, -2.0, 1.0, 2.0]).unwrap();
        assert!(matches!(diffusion_flux(&bad, &p), Err(Error::Positivity { .. })));
        let lin = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1).unwrap();
        let grad = gradient(&n, BoundaryCondition::Neumann0);
        assert_eq!(diffusion_flux(&n, &lin).unwrap(), grad);
    }

    #[test]
    fn chemotaxis_flux_examples() {
        let g = grid(4);
        let p = ModelParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.1).unwrap();
        let n = ScalarField::from_fn(&g, |q| 1.0 + q[0]);
        let c0 = ScalarField::constant(&g, 0.3);
        assert_eq!(chemotaxis_flux(&n, &c0, None, &p).unwrap().max_abs(), 0.0);
        let c = ScalarField::from_fn(&g, |q| q[1]);
        let zero = ScalarField::zeros(&g);
        assert_eq!(chemotaxis_flux(&zero, &c, None, &p).unwrap().max_abs(), 0.0);
        // donor is the cell mass leaves: c increases in +y, so flow goes up from the lower cell
        let n2 = ScalarField::from_fn(&g, |q| 1.0 + 10.0 * q[1]);
        let fl = chemotaxis_flux(&n2, &c, None, &p).unwrap();
        let face = g.face_index(1, [0, 1, 0]);
        let donor = n2.values[g.cell_index(0, 0, 0)];
        let want = donor / (1.0 + 0.1 * donor) * 1.0;
        assert!((fl.comps[1][face] - want).abs() < 1e-14);
    }

    #[test]
    fn mollifier_saturates() {
        let mut prev = 0.0;
        for k in 0..200 {
            let s = k as f64 * 0.5;
            let v = chemotactic_coefficient(s, 2.0, 0.3);
            assert!(v >= prev);
            assert!(v <= 2.0 / 0.3);
            prev = v;
        }
    }
}
