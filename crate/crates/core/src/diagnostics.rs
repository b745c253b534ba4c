//! Energy functional, dissipation terms, space-time integrals and bound monitors.

use crate::error::{Error, Result};
use crate::fluid::{dirichlet_energy, max_divergence};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::model::{d_eps, psi, ModelParams};
use crate::operators::{boundary_layer_mask, gradient, hessian_frobenius_sq, BoundaryCondition};
use crate::stepper::{Numerics, SimState, StepRecord};
use crate::sweep::select_interpolation_exponents;

/// Energy functional and dissipation terms at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    /// `int n log n`
    pub entropy: f64,
    /// `1/2 int |grad Psi(c)|^2`
    pub chemo: f64,
    /// `K_diag int |u|^2`
    pub kinetic: f64,
    pub y: f64,
    /// `int D_eps(n)/n |grad n|^2`
    pub d_n: f64,
    /// `int |D^2 c|^2 / c`
    pub d_hess: f64,
    /// `int |grad c|^4 / c^3`
    pub d_grad4: f64,
    /// `int |grad u|^2`
    pub d_gradu: f64,
    /// `int (mu/2 n^alpha + eps n^2) log n`, signed.
    pub reaction_entropy: f64,
}

fn sum_vol(g: &Grid, it: impl Iterator<Item = f64>) -> f64 {
    it.sum::<f64>() * g.cell_volume()
}

/// Cell-centered gradient magnitude from averaged face differences.
pub fn cell_gradient_norm(field: &ScalarField) -> ScalarField {
    let g = *field.grid();
    let centers = gradient(field, BoundaryCondition::Neumann0).to_cell_centers();
    ScalarField::from_values(
        &g,
        (0..g.cell_count())
            .map(|i| centers.iter().map(|c| c.values[i].powi(2)).sum::<f64>().sqrt())
            .collect(),
    )
    .expect("sized")
}

/// Cell-centered velocity magnitude.
pub fn cell_speed(u: &VectorField) -> ScalarField {
    let g = *u.grid();
    let centers = u.to_cell_centers();
    ScalarField::from_values(
        &g,
        (0..g.cell_count())
            .map(|i| centers.iter().map(|c| c.values[i].powi(2)).sum::<f64>().sqrt())
            .collect(),
    )
    .expect("sized")
}

/// Face-based `int |grad f|^2` over interior faces, weighted per face.
fn face_energy<W>(field: &ScalarField, mut weight: W) -> Result<f64>
where
    W: FnMut(f64) -> Result<f64>,
{
    let g = *field.grid();
    let v = &field.values;
    let mut total = 0.0;
    for a in 0..g.dim() {
        let h = g.h(a);
        let mut err = None;
        g.for_each_face(a, |_, l, r| {
            if err.is_some() {
                return;
            }
            if let (Some(l), Some(r)) = (l, r) {
                let d = (v[r] - v[l]) / h;
                match weight(0.5 * (v[l] + v[r])) {
                    Ok(w) => total += w * d * d,
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(total * g.cell_volume())
}

/// `1/2 int |grad c|^2 / h(c)` with the chain rule evaluated on faces.
pub fn chemo_energy(c: &ScalarField, params: &ModelParams, c_floor: f64) -> Result<f64> {
    Ok(0.5
        * face_energy(c, |cf| {
            let h = params.h(cf.max(c_floor))?;
            Ok(1.0 / h.max(f64::MIN_POSITIVE))
        })?)
}

/// `1/2 int |grad Psi(c)|^2` from the transformed field.
pub fn chemo_energy_via_psi(c: &ScalarField, params: &ModelParams, c_floor: f64) -> Result<f64> {
    let mut values = Vec::with_capacity(c.len());
    for &v in &c.values {
        values.push(psi(v.max(c_floor), params)?);
    }
    let transformed = ScalarField::from_values(c.grid(), values)?;
    Ok(0.5 * face_energy(&transformed, |_| Ok(1.0))?)
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub fn energy_report(state: &SimState, params: &ModelParams, numerics: &Numerics) -> Result<EnergyReport> {
    let g = *state.grid();
    let n = &state.n;
    let c = &state.c;
    let entropy = sum_vol(&g, n.values.iter().map(|&v| xlogx(v)));
    let chemo = chemo_energy(c, params, numerics.c_floor)?;
    let kinetic = numerics.k_diag * state.u.dot(&state.u);
    let d_n = face_energy(n, |nf| Ok(d_eps(nf.max(0.0), params)? / nf.max(numerics.n_floor)))?;

    let hess = hessian_frobenius_sq(c);
    let mask = if numerics.exclude_boundary_layer {
        boundary_layer_mask(&g)
    } else {
        vec![false; g.cell_count()]
    };
    let d_hess = sum_vol(
        &g,
        hess.values
            .iter()
            .zip(&c.values)
            .zip(&mask)
            .filter(|(_, skip)| !**skip)
            .map(|((hv, cv), _)| hv / cv.max(numerics.c_floor)),
    );
    let gc = cell_gradient_norm(c);
    let d_grad4 = sum_vol(
        &g,
        gc.values
            .iter()
            .zip(&c.values)
            .map(|(gv, cv)| gv.powi(4) / cv.max(numerics.c_floor).powi(3)),
    );
    let d_gradu = dirichlet_energy(&state.u);
    let reaction_entropy = sum_vol(
        &g,
        n.values.iter().map(|&v| {
            if v > 0.0 {
                (0.5 * params.mu * v.powf(params.alpha) + params.eps * v * v) * v.ln()
            } else {
                0.0
            }
        }),
    );
    Ok(EnergyReport {
        t: state.t,
        entropy,
        chemo,
        kinetic,
        y: entropy + chemo + kinetic,
        d_n,
        d_hess,
        d_grad4,
        d_gradu,
        reaction_entropy,
    })
}

/// Instantaneous integrands of the tracked space-time functionals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Integrands {
    pub np1: f64,
    pub flux_p2: f64,
    pub gradn_p3: Option<f64>,
    pub gradm2: f64,
    pub gradc4: f64,
    pub u103: f64,
    pub nalpha: f64,
    pub epsn2: f64,
    pub nuq: f64,
    pub gradm1: Option<f64>,
}

impl Integrands {
    fn combine(&self, other: &Integrands, f: impl Fn(f64, f64) -> f64) -> Integrands {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => Some(f(a, b)),
            _ => None,
        };
        Integrands {
            np1: f(self.np1, other.np1),
            flux_p2: f(self.flux_p2, other.flux_p2),
            gradn_p3: opt(self.gradn_p3, other.gradn_p3),
            gradm2: f(self.gradm2, other.gradm2),
            gradc4: f(self.gradc4, other.gradc4),
            u103: f(self.u103, other.u103),
            nalpha: f(self.nalpha, other.nalpha),
            epsn2: f(self.epsn2, other.epsn2),
            nuq: f(self.nuq, other.nuq),
            gradm1: opt(self.gradm1, other.gradm1),
        }
    }

    /// Values in CSV order; absent entries are `None`.
    pub fn as_columns(&self) -> [Option<f64>; 10] {
        [
            Some(self.np1),
            Some(self.flux_p2),
            self.gradn_p3,
            Some(self.gradm2),
            Some(self.gradc4),
            Some(self.u103),
            Some(self.nalpha),
            Some(self.epsn2),
            Some(self.nuq),
            self.gradm1,
        ]
    }
}

/// Trapezoidal running integrals over time of the tracked functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeAccumulator {
    pub p1: f64,
    pub p2: f64,
    pub p3: Option<f64>,
    pub q: f64,
    pub m: f64,
    pub totals: Integrands,
    last: Option<(f64, Integrands)>,
}

impl SpaceTimeAccumulator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let regime = params.regime()?;
        let exps = regime
            .exponents
            .ok_or_else(|| Error::invalid("m", "regime is not admissible"))?;
        let (_, q) = select_interpolation_exponents(exps.p1)?;
        let p3 = (params.m <= 2.0).then_some(exps.p3);
        let mut totals = Integrands::default();
        if p3.is_some() {
            totals.gradn_p3 = Some(0.0);
        }
        if params.m > 2.0 {
            totals.gradm1 = Some(0.0);
        }
        Ok(SpaceTimeAccumulator {
            p1: exps.p1,
            p2: exps.p2,
            p3,
            q,
            m: params.m,
            totals,
            last: None,
        })
    }

    pub fn integrands(&self, state: &SimState, params: &ModelParams) -> Result<Integrands> {
        let g = *state.grid();
        let n = &state.n;
        let eps = params.eps;
        let np1 = sum_vol(&g, n.values.iter().map(|v| (v + eps).powf(self.p1)));
        let grad_n = cell_gradient_norm(n);
        let mut flux = 0.0;
        for (nv, gv) in n.values.iter().zip(&grad_n.values) {
            flux += (d_eps(nv.max(0.0), params)? * gv).powf(self.p2);
        }
        let flux_p2 = flux * g.cell_volume();
        let gradn_p3 = self
            .p3
            .map(|p3| sum_vol(&g, grad_n.values.iter().map(|v| v.powf(p3))));
        let gradm2 = face_energy(&n.map(|v| (v + eps).powf(0.5 * self.m)), |_| Ok(1.0))?;
        let gradc4 = sum_vol(&g, cell_gradient_norm(&state.c).values.iter().map(|v| v.powi(4)));
        let speed = cell_speed(&state.u);
        let u103 = sum_vol(&g, speed.values.iter().map(|v| v.powf(10.0 / 3.0)));
        let nalpha = sum_vol(&g, n.values.iter().map(|v| v.max(0.0).powf(params.alpha)));
        let epsn2 = eps * sum_vol(&g, n.values.iter().map(|v| v * v));
        let nuq = sum_vol(
            &g,
            n.values
                .iter()
                .zip(&speed.values)
                .map(|(nv, sv)| (nv * sv).abs().powf(self.q)),
        );
        let gradm1 = if self.m > 2.0 {
            Some(face_energy(&n.map(|v| (v + eps).powf(self.m - 1.0)), |_| Ok(1.0))?)
        } else {
            None
        };
        Ok(Integrands {
            np1,
            flux_p2,
            gradn_p3,
            gradm2,
            gradc4,
            u103,
            nalpha,
            epsn2,
            nuq,
            gradm1,
        })
    }

    /// Adds the trapezoidal contribution of the step `prev -> new` of length `dt`.
    pub fn accumulate(
        &mut self,
        prev: &SimState,
        new: &SimState,
        params: &ModelParams,
        dt: f64,
    ) -> Result<()> {
        if dt == 0.0 {
            return Ok(());
        }
        let before = match self.last {
            Some((t, v)) if t == prev.t => v,
            _ => self.integrands(prev, params)?,
        };
        let after = self.integrands(new, params)?;
        let increment = before.combine(&after, |a, b| 0.5 * dt * (a + b));
        self.totals = self.totals.combine(&increment, |a, b| a + b);
        self.last = Some((new.t, after));
        Ok(())
    }
}

/// One row of the time-series output.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub linf_c: f64,
    pub min_n: f64,
    pub min_c: f64,
    pub div_u_max: f64,
    pub energy: EnergyReport,
    pub space_time: Integrands,
}

pub const CSV_COLUMNS: [&str; 24] = [
    "t",
    "mass",
    "linf_c",
    "min_n",
    "min_c",
    "div_u_max",
    "entropy",
    "chemo",
    "kinetic",
    "y",
    "d_n",
    "d_hess",
    "d_grad4",
    "d_gradu",
    "st_np1",
    "st_flux_p2",
    "st_gradn_p3",
    "st_gradm2",
    "st_gradc4",
    "st_u103",
    "st_nalpha",
    "st_epsn2",
    "st_nuq",
    "st_gradm1",
];

impl DiagnosticsRow {
    /// Values in `CSV_COLUMNS` order; regime-dependent columns may be `None`.
    pub fn values(&self) -> Vec<Option<f64>> {
        let e = &self.energy;
        let mut v = vec![
            Some(self.t),
            Some(self.mass),
            Some(self.linf_c),
            Some(self.min_n),
            Some(self.min_c),
            Some(self.div_u_max),
            Some(e.entropy),
            Some(e.chemo),
            Some(e.kinetic),
            Some(e.y),
            Some(e.d_n),
            Some(e.d_hess),
            Some(e.d_grad4),
            Some(e.d_gradu),
        ];
        v.extend(self.space_time.as_columns());
        v
    }
}

/// Builds diagnostics rows for one run.
#[derive(Debug, Clone)]
pub struct Monitor {
    params: ModelParams,
    numerics: Numerics,
}

impl Monitor {
    pub fn new(params: &ModelParams, numerics: &Numerics) -> Result<Self> {
        if !(numerics.k_diag > 0.0) {
            return Err(Error::invalid("K_diag", "must be positive"));
        }
        Ok(Monitor {
            params: params.clone(),
            numerics: *numerics,
        })
    }

    pub fn row(&self, state: &SimState, acc: &SpaceTimeAccumulator) -> Result<DiagnosticsRow> {
        Ok(DiagnosticsRow {
            t: state.t,
            mass: state.mass(),
            linf_c: state.c.max(),
            min_n: state.n.min(),
            min_c: state.c.min(),
            div_u_max: max_divergence(&state.u),
            energy: energy_report(state, &self.params, &self.numerics)?,
            space_time: acc.totals,
        })
    }
}

/// Outcome of one monitored bound over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: &'static str,
    pub held: bool,
    /// Smallest `bound - value` seen; negative when violated.
    pub worst_margin: f64,
    /// Time of the worst margin.
    pub worst_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub sup_y: f64,
    pub max_mass_residual: f64,
    /// Forcing constant from the first forced step and the extremes of the per-step ratio.
    pub forcing_ratio: Option<(f64, f64, f64)>,
}

impl BoundReport {
    pub fn all_held(&self) -> bool {
        self.checks.iter().all(|c| c.held)
    }

    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn violations(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.held).collect()
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    worst_t: f64,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker {
            name,
            worst: f64::INFINITY,
            worst_t: 0.0,
        }
    }

    fn observe(&mut self, margin: f64, t: f64) {
        if !(margin >= self.worst) {
            self.worst = margin;
            self.worst_t = t;
        }
    }

    fn finish(self) -> BoundCheck {
        BoundCheck {
            name: self.name,
            held: !(self.worst < 0.0) && !self.worst.is_nan(),
            worst_margin: self.worst,
            worst_t: self.worst_t,
        }
    }
}

/// Relative mass-identity tolerance per step.
pub const MASS_IDENTITY_TOL: f64 = 1e-11;
/// Allowed excess of the forcing ratio over the constant measured on the first forced step.
pub const FORCING_RATIO_SLACK: f64 = 0.5;

/// Checks every monitored bound along a completed run.
pub fn monitor_bounds(
    rows: &[DiagnosticsRow],
    steps: &[StepRecord],
    params: &ModelParams,
    volume: f64,
    numerics: &Numerics,
) -> BoundReport {
    let m0 = rows.first().map(|r| r.mass).unwrap_or(0.0);
    let c0 = rows.first().map(|r| r.linf_c).unwrap_or(0.0);
    let mut mass_bound = Tracker::new("mass_bound");
    let mut sink = Tracker::new("sink_budget");
    let mut max_principle = Tracker::new("max_principle");
    let mut c_min = Tracker::new("oxygen_nonnegative");
    let mut positivity = Tracker::new("positivity");
    let mut entropy = Tracker::new("entropy_floor");
    let mut incompressible = Tracker::new("incompressibility");
    let mut dissipation = Tracker::new("dissipation_nonnegative");
    let mut monotone = Tracker::new("accumulators_monotone");
    let mut finite = Tracker::new("energy_finite");
    let mut mass_identity = Tracker::new("mass_identity");
    let mut forcing = Tracker::new("forcing_constant");

    let mut prev_c = f64::INFINITY;
    let mut prev_acc: Option<&Integrands> = None;
    let mut sup_y = f64::NEG_INFINITY;
    for r in rows {
        let growth = (params.kappa * r.t).exp() * m0;
        mass_bound.observe(growth * (1.0 + 1e-8) - r.mass, r.t);
        let sinks = params.mu * r.space_time.nalpha + r.space_time.epsn2;
        sink.observe(growth + m0 - sinks, r.t);
        max_principle.observe((prev_c.min(c0) + 1e-12) - r.linf_c, r.t);
        prev_c = r.linf_c;
        c_min.observe(r.min_c, r.t);
        positivity.observe(r.min_n, r.t);
        entropy.observe(r.energy.entropy + volume / std::f64::consts::E, r.t);
        incompressible.observe(numerics.div_tol - r.div_u_max, r.t);
        let e = &r.energy;
        dissipation.observe(e.d_n.min(e.d_hess).min(e.d_grad4).min(e.d_gradu), r.t);
        if let Some(p) = prev_acc {
            let cur = r.space_time.as_columns();
            let worst = p
                .as_columns()
                .iter()
                .zip(cur.iter())
                .filter_map(|(a, b)| Some(b.as_ref()? - a.as_ref()?))
                .fold(f64::INFINITY, f64::min);
            monotone.observe(worst, r.t);
        }
        prev_acc = Some(&r.space_time);
        let fin = if e.y.is_finite() { 0.0 } else { -1.0 };
        finite.observe(fin, r.t);
        sup_y = sup_y.max(e.y);
    }

    let mut max_mass_residual = 0.0f64;
    let mut reference = None;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in steps {
        let res = s.mass_residual();
        max_mass_residual = max_mass_residual.max(res);
        mass_identity.observe(MASS_IDENTITY_TOL * s.mass_after.max(s.mass_before) - res, s.t);
        positivity.observe(s.n_min, s.t);
        c_min.observe(s.c_min, s.t);
        incompressible.observe(numerics.div_tol - s.divergence, s.t);
        if let (Some(ratio), Some(constant)) = (s.forcing_ratio, s.forcing_constant) {
            let c1: f64 = *reference.get_or_insert(constant);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            forcing.observe((1.0 + FORCING_RATIO_SLACK) * c1 - ratio, s.t);
        }
    }
    if reference.is_none() {
        forcing.observe(0.0, 0.0);
    }
    for t in [&mut mass_identity, &mut monotone] {
        if t.worst == f64::INFINITY {
            t.worst = 0.0;
        }
    }

    BoundReport {
        checks: vec![
            mass_bound.finish(),
            sink.finish(),
            max_principle.finish(),
            c_min.finish(),
            positivity.finish(),
            entropy.finish(),
            incompressible.finish(),
            dissipation.finish(),
            monotone.finish(),
            finite.finish(),
            mass_identity.finish(),
            forcing.finish(),
        ],
        sup_y,
        max_mass_residual,
        forcing_ratio: reference.map(|r| (r, lo, hi)),
    }
}

/// Ratio of the largest fluid energy residuals of a run and its half-step rerun.
pub fn residual_halving_ratio(coarse: &[StepRecord], fine: &[StepRecord]) -> f64 {
    let peak = |s: &[StepRecord]| s.iter().fold(0.0f64, |m, r| m.max(r.fluid_residual.abs()));
    peak(coarse) / peak(fine)
}
