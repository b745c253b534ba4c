//! Regularization sweeps and the interpolation exponents used by the
//! `|n u|^q` diagnostic.

use crate::diagnostics::Integrands;
use crate::error::{Error, Result};
use crate::grid::{integrate, ScalarField, VectorField};
use crate::stepper::{run_with_observer, RunSetup, SimState};

const Q_GRID_STEP: f64 = 1e-4;

/// `a(r, q) = 3 (r q - 2 r + 2 q) / (2 r q)`
pub fn interpolation_weight(r: f64, q: f64) -> f64 {
    3.0 * (r * q - 2.0 * r + 2.0 * q) / (2.0 * r * q)
}

/// True when `(r, q)` satisfies every constraint of the selection.
pub fn exponents_feasible(p1: f64, r: f64, q: f64) -> bool {
    let a = interpolation_weight(r, q);
    r > 1.2
        && r < p1.min(2.0)
        && (3.0 * r - 2.0) / r <= p1 * (1.0 + 1e-15)
        && q > 1.0
        && q < 2.0
        && a > 0.0
        && a < 1.0
        && 2.0 * q / (2.0 - q) * a < 2.0
}

/// Picks `(r, q)` for a given `p1 > 4/3`.
///
/// `r` is the midpoint of `(6/5, min(p1, 2, 2/(3 - p1)))`; `q` is the largest
/// point of the grid `1 + k 1e-4` inside `(1, 2)` meeting both constraints.
pub fn select_interpolation_exponents(p1: f64) -> Result<(f64, f64)> {
    if !(p1 > 4.0 / 3.0) || !p1.is_finite() {
        return Err(Error::Infeasible(format!("p1 = {p1} must exceed 4/3")));
    }
    let mut upper = p1.min(2.0);
    if p1 < 3.0 {
        upper = upper.min(2.0 / (3.0 - p1));
    }
    let r = 0.5 * (1.2 + upper);
    let steps = (1.0 / Q_GRID_STEP).round() as usize;
    for k in (1..steps).rev() {
        let q = 1.0 + k as f64 * Q_GRID_STEP;
        if exponents_feasible(p1, r, q) {
            return Ok((r, q));
        }
    }
    Err(Error::Infeasible(format!("no q on the grid fits r = {r}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub eps_list: Vec<f64>,
    /// Largest allowed max/min ratio across the sweep.
    pub bound_factor: f64,
    /// Largest relative increase tolerated for an inverted distance pair.
    pub cauchy_slack: f64,
    pub max_inversions: usize,
    /// Worker threads; 0 runs sequentially.
    pub threads: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            eps_list: vec![0.1, 0.05, 0.025, 0.0125],
            bound_factor: 3.0,
            cauchy_slack: 0.05,
            max_inversions: 1,
            threads: 0,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::invalid("eps_list", "must not be empty"));
        }
        for w in self.eps_list.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid("eps_list", "must be strictly decreasing"));
            }
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::invalid("eps_list", "entries must lie in (0, 1]"));
        }
        if !(self.bound_factor > 1.0) {
            return Err(Error::invalid("bound_factor", "must exceed 1"));
        }
        if !(self.cauchy_slack >= 0.0) {
            return Err(Error::invalid("cauchy_slack", "must be nonnegative"));
        }
        Ok(())
    }

    /// Thread count from `CHEMOFLOW_THREADS`, 0 when unset or invalid.
    pub fn threads_from_env() -> usize {
        std::env::var("CHEMOFLOW_THREADS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0)
    }
}

/// Summary of one run of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsSummary {
    pub eps: f64,
    pub sup_y: f64,
    /// Space-time integrals at the final time.
    pub totals: Integrands,
    pub bounds_held: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityVerdict {
    pub quantity: &'static str,
    /// max/min across the sweep of the absolute values.
    pub ratio: f64,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyVerdict {
    pub field: &'static str,
    pub distances: Vec<f64>,
    pub inversions: usize,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub eps_list: Vec<f64>,
    pub runs: Vec<EpsSummary>,
    pub uniformity: Vec<UniformityVerdict>,
    pub cauchy: Vec<CauchyVerdict>,
}

impl SweepReport {
    pub fn bounded(&self) -> bool {
        self.uniformity.iter().all(|v| v.held)
    }

    pub fn cauchy_trend(&self) -> bool {
        self.cauchy.iter().all(|v| v.held)
    }

    pub fn uniformity_of(&self, quantity: &str) -> Option<&UniformityVerdict> {
        self.uniformity.iter().find(|v| v.quantity == quantity)
    }

    pub fn cauchy_of(&self, field: &str) -> Option<&CauchyVerdict> {
        self.cauchy.iter().find(|v| v.field == field)
    }

    pub fn all_runs_held(&self) -> bool {
        self.runs.iter().all(|r| r.bounds_held)
    }
}

/// Output-time samples of one trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub n: Vec<ScalarField>,
    pub c: Vec<ScalarField>,
    pub u: Vec<VectorField>,
}

impl Trajectory {
    fn from_samples(samples: &[SimState]) -> Self {
        Trajectory {
            times: samples.iter().map(|s| s.t).collect(),
            n: samples.iter().map(|s| s.n.clone()).collect(),
            c: samples.iter().map(|s| s.c.clone()).collect(),
            u: samples.iter().map(|s| s.u.clone()).collect(),
        }
    }
}

fn scalar_l1(a: &ScalarField, b: &ScalarField) -> f64 {
    integrate(&ScalarField::from_values(
        a.grid(),
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect(),
    )
    .expect("same grid"))
}

fn vector_l1(a: &VectorField, b: &VectorField) -> f64 {
    let vol = a.grid().cell_volume();
    a.comps
        .iter()
        .zip(&b.comps)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum::<f64>()
        * vol
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Space-time L1 distances `(n, c, u)` between two trajectories with shared output times.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<(f64, f64, f64)> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(Error::Domain("trajectories do not share output times".into()));
    }
    let dn: Vec<f64> = a.n.iter().zip(&b.n).map(|(x, y)| scalar_l1(x, y)).collect();
    let dc: Vec<f64> = a.c.iter().zip(&b.c).map(|(x, y)| scalar_l1(x, y)).collect();
    let du: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| vector_l1(x, y)).collect();
    Ok((
        trapezoid(&a.times, &dn),
        trapezoid(&a.times, &dc),
        trapezoid(&a.times, &du),
    ))
}

fn run_one(setup: &RunSetup, eps: f64) -> Result<(EpsSummary, Trajectory)> {
    let mut s = setup.clone();
    s.params = s.params.with_eps(eps);
    let out = run_with_observer(&s, true, |_| Ok(())).map_err(|e| Error::SweepFailed {
        eps,
        source: Box::new(e),
    })?;
    Ok((
        EpsSummary {
            eps,
            sup_y: out.bounds.sup_y,
            totals: out.accumulator.totals,
            bounds_held: out.bounds.all_held(),
            steps: out.steps.len(),
        },
        Trajectory::from_samples(&out.samples),
    ))
}

fn ratio_verdict(quantity: &'static str, values: &[f64], factor: f64) -> UniformityVerdict {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if max == 0.0 { 1.0 } else { max / min };
    UniformityVerdict {
        quantity,
        ratio,
        held: ratio.is_finite() && ratio < factor,
    }
}

fn cauchy_verdict(field: &'static str, distances: Vec<f64>, settings: &SweepSettings) -> CauchyVerdict {
    let mut inversions = 0;
    let mut large = false;
    for w in distances.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            if w[1] - w[0] > settings.cauchy_slack * w[0] {
                large = true;
            }
        }
    }
    CauchyVerdict {
        field,
        held: !large && inversions <= settings.max_inversions,
        distances,
        inversions,
    }
}

/// Accumulators with eps-uniform bounds, as (column in `Integrands::as_columns`, name).
/// The remaining columns either scale with eps or are only bounded above,
/// so a max/min ratio says nothing about them.
pub const UNIFORM_COLUMNS: [(usize, &str); 5] = [
    (0, "st_np1"),
    (1, "st_flux_p2"),
    (4, "st_gradc4"),
    (5, "st_u103"),
    (8, "st_nuq"),
];

/// Runs `setup` for every eps of the sweep and assesses uniformity and the Cauchy trend.
pub fn epsilon_sweep(setup: &RunSetup, settings: &SweepSettings) -> Result<SweepReport> {
    settings.validate()?;
    let eps_list = &settings.eps_list;
    let results: Vec<Result<(EpsSummary, Trajectory)>> = if settings.threads <= 1 {
        eps_list.iter().map(|&e| run_one(setup, e)).collect()
    } else {
        let mut slots: Vec<Option<Result<(EpsSummary, Trajectory)>>> =
            eps_list.iter().map(|_| None).collect();
        let chunk = eps_list.len().div_ceil(settings.threads);
        std::thread::scope(|scope| {
            for (eps_chunk, slot_chunk) in eps_list.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                scope.spawn(move || {
                    for (e, slot) in eps_chunk.iter().zip(slot_chunk.iter_mut()) {
                        *slot = Some(run_one(setup, *e));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    };
    let mut runs = Vec::with_capacity(results.len());
    let mut trajectories = Vec::with_capacity(results.len());
    for r in results {
        let (s, t) = r?;
        runs.push(s);
        trajectories.push(t);
    }

    let mut dn = vec![];
    let mut dc = vec![];
    let mut du = vec![];
    for w in trajectories.windows(2) {
        let (a, b, c) = trajectory_distance(&w[0], &w[1])?;
        dn.push(a);
        dc.push(b);
        du.push(c);
    }

    let factor = settings.bound_factor;
    let mut uniformity = vec![ratio_verdict(
        "sup_y",
        &runs.iter().map(|r| r.sup_y).collect::<Vec<_>>(),
        factor,
    )];
    for (k, name) in UNIFORM_COLUMNS {
        let values: Option<Vec<f64>> = runs.iter().map(|r| r.totals.as_columns()[k]).collect();
        if let Some(values) = values {
            uniformity.push(ratio_verdict(name, &values, factor));
        }
    }

    Ok(SweepReport {
        eps_list: eps_list.clone(),
        runs,
        uniformity,
        cauchy: vec![
            cauchy_verdict("n", dn, settings),
            cauchy_verdict("c", dc, settings),
            cauchy_verdict("u", du, settings),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_examples() {
        let (r, q) = select_interpolation_exponents(2.0).unwrap();
        assert!((r - 1.6).abs() < 1e-15);
        assert!(exponents_feasible(2.0, r, q));
        assert!(!exponents_feasible(2.0, r, q + Q_GRID_STEP));
        let (r, q) = select_interpolation_exponents(5.0 / 3.0).unwrap();
        assert!((r - 1.35).abs() < 1e-15);
        assert!(exponents_feasible(5.0 / 3.0, r, q));
        assert!(matches!(
            select_interpolation_exponents(4.0 / 3.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn cauchy_rules() {
        let s = SweepSettings::default();
        assert!(cauchy_verdict("n", vec![3.0, 2.0, 1.0], &s).held);
        assert!(cauchy_verdict("n", vec![3.0, 3.1, 1.0], &s).held);
        assert!(!cauchy_verdict("n", vec![3.0, 3.3, 1.0], &s).held);
        assert!(!cauchy_verdict("n", vec![3.0, 3.1, 3.2], &s).held);
        assert!(cauchy_verdict("n", vec![], &s).held);
    }

    #[test]
    fn uniformity_rules() {
        assert!(ratio_verdict("x", &[1.0, 2.0, 2.9], 3.0).held);
        assert!(!ratio_verdict("x", &[1.0, 3.0], 3.0).held);
        assert!(ratio_verdict("x", &[0.0, 0.0], 3.0).held);
        assert!(!ratio_verdict("x", &[0.0, 1.0], 3.0).held);
    }

    #[test]
    fn settings_validation() {
        let mut s = SweepSettings::default();
        assert!(s.validate().is_ok());
        s.eps_list = vec![0.1, 0.1];
        assert!(s.validate().is_err());
        s.eps_list = vec![2.0];
        assert!(s.validate().is_err());
    }
}
