//! Dense reference operators shared by the oracle and acceptance tests.
#![allow(dead_code)]

use chemoflow::grid::{Grid, VectorField};
use nalgebra::{DMatrix, DVector};

/// Deterministic pseudo-random values in [-1, 1).
pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// Cell (i, j) -> linear index, x fastest.
pub fn cell(nx: usize, i: usize, j: usize) -> usize {
    i + nx * j
}

/// Face arrays: x-faces are (nx+1) x ny, y-faces are nx x (ny+1).
pub fn xface(nx: usize, i: usize, j: usize) -> usize {
    i + (nx + 1) * j
}

pub fn yface(nx: usize, i: usize, j: usize) -> usize {
    i + nx * j
}

/// Dense gradient: cells -> [x-faces; y-faces].
pub fn gradient_matrix(nx: usize, ny: usize, hx: f64, hy: f64, dirichlet: bool) -> DMatrix<f64> {
    let nfx = (nx + 1) * ny;
    let nfy = nx * (ny + 1);
    let mut g = DMatrix::zeros(nfx + nfy, nx * ny);
    for j in 0..ny {
        for i in 0..=nx {
            let r = xface(nx, i, j);
            if i > 0 && i < nx {
                g[(r, cell(nx, i, j))] += 1.0 / hx;
                g[(r, cell(nx, i - 1, j))] -= 1.0 / hx;
            } else if dirichlet {
                // wall value 0 at half a cell from the centre
                if i == 0 {
                    g[(r, cell(nx, 0, j))] = 2.0 / hx;
                } else {
                    g[(r, cell(nx, nx - 1, j))] = -2.0 / hx;
                }
            }
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let r = nfx + yface(nx, i, j);
            if j > 0 && j < ny {
                g[(r, cell(nx, i, j))] += 1.0 / hy;
                g[(r, cell(nx, i, j - 1))] -= 1.0 / hy;
            } else if dirichlet {
                if j == 0 {
                    g[(r, cell(nx, i, 0))] = 2.0 / hy;
                } else {
                    g[(r, cell(nx, i, ny - 1))] = -2.0 / hy;
                }
            }
        }
    }
    g
}

/// Dense divergence: [x-faces; y-faces] -> cells.
pub fn divergence_matrix(nx: usize, ny: usize, hx: f64, hy: f64) -> DMatrix<f64> {
    let nfx = (nx + 1) * ny;
    let nfy = nx * (ny + 1);
    let mut d = DMatrix::zeros(nx * ny, nfx + nfy);
    for j in 0..ny {
        for i in 0..nx {
            let r = cell(nx, i, j);
            d[(r, xface(nx, i + 1, j))] += 1.0 / hx;
            d[(r, xface(nx, i, j))] -= 1.0 / hx;
            d[(r, nfx + yface(nx, i, j + 1))] += 1.0 / hy;
            d[(r, nfx + yface(nx, i, j))] -= 1.0 / hy;
        }
    }
    d
}

pub fn stack(u: &VectorField) -> DVector<f64> {
    DVector::from_iterator(
        u.comps.iter().map(Vec::len).sum(),
        u.comps.iter().flatten().copied(),
    )
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Random face field with zero wall-normal faces.
pub fn random_flux(g: &Grid, seed: u64) -> VectorField {
    let comps = (0..g.dim())
        .map(|a| noise(g.face_count(a), seed + a as u64))
        .collect();
    let mut u = VectorField::from_components(g, comps).unwrap();
    u.zero_boundary_normal();
    u
}

/// Mean-free dense Neumann solve: `D G phi = rhs`.
pub fn dense_neumann_solve(dg: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = dg.nrows();
    // -DG + (1/n) 11^T is symmetric positive definite and leaves mean-free data mean free
    let a = -dg + DMatrix::from_element(n, n, 1.0 / n as f64);
    let x = a.lu().solve(&(-rhs)).expect("nonsingular");
    let mean = x.mean();
    x.map(|v| v - mean)
}

/// Dense vector Laplacian on the unknown (interior) faces of one component.
/// Wall-normal neighbours are zero; transverse walls use a mirrored ghost.
pub fn component_laplacian(g: &Grid, axis: usize) -> (DMatrix<f64>, Vec<usize>) {
    let shape = g.face_shape(axis);
    let n = g.n();
    let unknowns: Vec<usize> = (0..g.face_count(axis))
        .filter(|&f| {
            let c = g.face_coords(axis, f);
            c[axis] > 0 && c[axis] < n[axis]
        })
        .collect();
    let pos = |f: usize| unknowns.iter().position(|&u| u == f);
    let mut l = DMatrix::zeros(unknowns.len(), unknowns.len());
    for (r, &f) in unknowns.iter().enumerate() {
        let c = g.face_coords(axis, f);
        for b in 0..g.dim() {
            let h2 = g.h(b) * g.h(b);
            l[(r, r)] -= 2.0 / h2;
            for step in [-1i64, 1] {
                let nb = c[b] as i64 + step;
                if nb < 0 || nb >= shape[b] as i64 {
                    // ghost outside a transverse wall mirrors the value
                    l[(r, r)] -= 1.0 / h2;
                    continue;
                }
                let mut cc = c;
                cc[b] = nb as usize;
                if let Some(k) = pos(g.face_index(axis, cc)) {
                    l[(r, k)] += 1.0 / h2;
                }
            }
        }
    }
    (l, unknowns)
}

