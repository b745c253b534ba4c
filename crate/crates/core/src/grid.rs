//! Uniform staggered (MAC) box grid in two or three dimensions.
//!
//! Scalars live at cell centers; the velocity component along axis `a` lives
//! on the faces normal to `a`. Storage is dense with the x index fastest.
//! Unused axes of a 2D grid have one cell and unit spacing so that loops can
//! be written once for both dimensions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    extent: [f64; 3],
    h: [f64; 3],
}

impl Grid {
    pub fn new(dim: usize, n_cells: &[usize], extent: &[f64]) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid("dim", "must be 2 or 3"));
        }
        if n_cells.len() != dim || extent.len() != dim {
            return Err(Error::invalid(
                "n_cells",
                format!("expected {dim} entries for n_cells and extent"),
            ));
        }
        let mut n = [1usize; 3];
        let mut ext = [1.0; 3];
        let mut h = [1.0; 3];
        for a in 0..dim {
            if n_cells[a] < 2 {
                return Err(Error::invalid("n_cells", "need at least 2 cells per axis"));
            }
            if !(extent[a] > 0.0) || !extent[a].is_finite() {
                return Err(Error::invalid("extent", "must be positive and finite"));
            }
            n[a] = n_cells[a];
            ext[a] = extent[a];
            h[a] = extent[a] / n_cells[a] as f64;
        }
        Ok(Grid {
            dim,
            n,
            extent: ext,
            h,
        })
    }

    /// Unit square (or cube) with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Grid> {
        Grid::new(dim, &vec![n; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; entry 2 is 1 in two dimensions.
    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    pub fn domain_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent[a]).product()
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn cell_coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        [i, j, k]
    }

    /// Index stride between neighbouring cells along `axis`.
    #[inline]
    pub fn cell_stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.n[0],
            _ => self.n[0] * self.n[1],
        }
    }

    /// Shape of the face array holding the component normal to `axis`.
    pub fn face_shape(&self, axis: usize) -> [usize; 3] {
        let mut s = self.n;
        s[axis] += 1;
        s
    }

    pub fn face_count(&self, axis: usize) -> usize {
        let s = self.face_shape(axis);
        s[0] * s[1] * s[2]
    }

    #[inline]
    pub fn face_index(&self, axis: usize, c: [usize; 3]) -> usize {
        let s = self.face_shape(axis);
        c[0] + s[0] * (c[1] + s[1] * c[2])
    }

    pub fn face_coords(&self, axis: usize, idx: usize) -> [usize; 3] {
        let s = self.face_shape(axis);
        [idx % s[0], (idx / s[0]) % s[1], idx / (s[0] * s[1])]
    }

    /// Stride between neighbouring faces of the `axis` array along `dir`.
    #[inline]
    pub fn face_stride(&self, axis: usize, dir: usize) -> usize {
        let s = self.face_shape(axis);
        match dir {
            0 => 1,
            1 => s[0],
            _ => s[0] * s[1],
        }
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = (c[a] as f64 + 0.5) * self.h[a];
        }
        p
    }

    pub fn face_center(&self, axis: usize, c: [usize; 3]) -> [f64; 3] {
        let mut p = self.cell_center(c);
        p[axis] = c[axis] as f64 * self.h[axis];
        p
    }

    /// True when the face lies on the domain boundary.
    #[inline]
    pub fn is_boundary_face(&self, axis: usize, c: [usize; 3]) -> bool {
        c[axis] == 0 || c[axis] == self.n[axis]
    }

    /// Calls `f(face, left_cell, right_cell)` for each face normal to `axis`;
    /// cells outside the domain are `None`.
    pub fn for_each_face<F>(&self, axis: usize, mut f: F)
    where
        F: FnMut(usize, Option<usize>, Option<usize>),
    {
        let s = self.face_shape(axis);
        let stride = self.cell_stride(axis);
        let mut idx = 0;
        for k in 0..s[2] {
            for j in 0..s[1] {
                for i in 0..s[0] {
                    let c = [i, j, k];
                    let ia = c[axis];
                    let right = if ia < self.n[axis] {
                        let mut cc = c;
                        cc[axis] = ia;
                        Some(self.cell_index(cc[0], cc[1], cc[2]))
                    } else {
                        None
                    };
                    let left = if ia > 0 {
                        Some(match right {
                            Some(r) => r - stride,
                            None => {
                                let mut cc = c;
                                cc[axis] = ia - 1;
                                self.cell_index(cc[0], cc[1], cc[2])
                            }
                        })
                    } else {
                        None
                    };
                    f(idx, left, right);
                    idx += 1;
                }
            }
        }
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            grid: *grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    pub fn constant(grid: &Grid, v: f64) -> Self {
        ScalarField {
            grid: *grid,
            values: vec![v; grid.cell_count()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Domain(format!(
                "scalar field needs {} values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        Ok(ScalarField {
            grid: *grid,
            values,
        })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn<F: FnMut([f64; 3]) -> f64>(grid: &Grid, mut f: F) -> Self {
        let values = (0..grid.cell_count())
            .map(|i| f(grid.cell_center(grid.cell_coords(i))))
            .collect();
        ScalarField {
            grid: *grid,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Face-centered vector field: component `a` is stored on faces normal to axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            grid: *grid,
            comps: (0..grid.dim()).map(|a| vec![0.0; grid.face_count(a)]).collect(),
        }
    }

    pub fn from_components(grid: &Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::Domain("component count must equal dim".into()));
        }
        for (a, c) in comps.iter().enumerate() {
            if c.len() != grid.face_count(a) {
                return Err(Error::Domain(format!(
                    "component {a} needs {} face values, got {}",
                    grid.face_count(a),
                    c.len()
                )));
            }
        }
        Ok(VectorField { grid: *grid, comps })
    }

    /// Samples component `a` of `f` at the centers of the faces normal to `a`.
    pub fn from_fn<F: FnMut(usize, [f64; 3]) -> f64>(grid: &Grid, mut f: F) -> Self {
        let comps = (0..grid.dim())
            .map(|a| {
                (0..grid.face_count(a))
                    .map(|i| f(a, grid.face_center(a, grid.face_coords(a, i))))
                    .collect()
            })
            .collect();
        VectorField { grid: *grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sets the normal component on every boundary face to zero.
    pub fn zero_boundary_normal(&mut self) {
        let g = self.grid;
        for a in 0..g.dim() {
            let comp = &mut self.comps[a];
            for (idx, v) in comp.iter_mut().enumerate() {
                if g.is_boundary_face(a, g.face_coords(a, idx)) {
                    *v = 0.0;
                }
            }
        }
    }

    /// Discrete L2 inner product; each face carries one cell volume.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let vol = self.grid.cell_volume();
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * vol
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().map(|v| s * v).collect())
                .collect(),
        }
    }

    /// Component-wise average to cell centers; returns `dim` scalar fields.
    pub fn to_cell_centers(&self) -> Vec<ScalarField> {
        let g = self.grid;
        (0..g.dim())
            .map(|a| {
                let comp = &self.comps[a];
                let fs = g.face_stride(a, a);
                ScalarField::from_values(
                    &g,
                    (0..g.cell_count())
                        .map(|idx| {
                            let f = g.face_index(a, g.cell_coords(idx));
                            0.5 * (comp[f] + comp[f + fs])
                        })
                        .collect(),
                )
                .expect("cell count matches")
            })
            .collect()
    }
}

/// Per-face normal flux of a conserved quantity; shares the face layout of [`VectorField`].
pub type FluxField = VectorField;

/// Sum of values times cell volume.
pub fn integrate(field: &ScalarField) -> f64 {
    field.values.iter().sum::<f64>() * field.grid.cell_volume()
}

/// Discrete `L^p` norm; `p = f64::INFINITY` gives the maximum modulus.
pub fn lp_norm(field: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(field.values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let sum: f64 = if p == 1.0 {
        field.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        field.values.iter().map(|v| v * v).sum()
    } else {
        field.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((sum * field.grid.cell_volume()).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy)]
pub enum FaceScheme<'a> {
    Arithmetic,
    /// Donor cell selected by the sign of the face-normal velocity.
    Upwind(&'a VectorField),
}

/// Face values of a cell field. Boundary faces take the adjacent cell value.
pub fn interpolate_to_faces(field: &ScalarField, scheme: FaceScheme<'_>) -> VectorField {
    let g = field.grid;
    let v = &field.values;
    let mut out = VectorField::zeros(&g);
    for a in 0..g.dim() {
        let comp = &mut out.comps[a];
        g.for_each_face(a, |f, l, r| {
            comp[f] = match (l, r) {
                (Some(l), Some(r)) => {
                    let vel = match scheme {
                        FaceScheme::Arithmetic => 0.0,
                        FaceScheme::Upwind(u) => u.comps[a][f],
                    };
                    if vel > 0.0 {
                        v[l]
                    } else if vel < 0.0 {
                        v[r]
                    } else {
                        0.5 * (v[l] + v[r])
                    }
                }
                (Some(c), None) | (None, Some(c)) => v[c],
                (None, None) => unreachable!("face without adjacent cells"),
            };
        });
    }
    out
}
