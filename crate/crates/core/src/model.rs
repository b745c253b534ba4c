//! Model parameters, model functions and the admissibility/exponent
//! bookkeeping for the regularized chemotaxis-fluid system.

use std::fmt;

use crate::error::{Error, Result};
use crate::expr::Expr;

/// A scalar function of one nonnegative argument (D, chi or f).
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    /// `coef * s^exponent`
    Power { coef: f64, exponent: f64 },
    Constant(f64),
    /// `s`
    Identity,
    Expr(Expr),
}

impl ScalarFn {
    pub fn eval(&self, s: f64) -> Result<f64> {
        match self {
            ScalarFn::Power { coef, exponent } => Ok(coef * s.powf(*exponent)),
            ScalarFn::Constant(c) => Ok(*c),
            ScalarFn::Identity => Ok(s),
            ScalarFn::Expr(e) => e.eval_scalar(s),
        }
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Power { coef, exponent } => write!(f, "{coef}*s^({exponent})"),
            ScalarFn::Constant(c) => write!(f, "{c}"),
            ScalarFn::Identity => f.write_str("s"),
            ScalarFn::Expr(e) => write!(f, "{e}"),
        }
    }
}

/// All scalar parameters and model functions of the regularized problem.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub m: f64,
    pub d1: f64,
    pub d2: f64,
    pub kappa: f64,
    pub mu: f64,
    pub alpha: f64,
    pub eps: f64,
    pub diffusion: ScalarFn,
    pub sensitivity: ScalarFn,
    pub consumption: ScalarFn,
    /// Potential Phi(x, y, z); `None` means Phi = 0.
    pub potential: Option<Expr>,
    /// Forcing components g_i(x, y, z, t); empty means g = 0.
    pub forcing: Vec<Expr>,
}

impl ModelParams {
    /// Parameters with the built-in presets `D(s) = D1 s^(m-1)`, `chi = 1`, `f(s) = s`,
    /// no potential and no forcing.
    pub fn new(m: f64, d1: f64, d2: f64, kappa: f64, mu: f64, alpha: f64, eps: f64) -> Result<Self> {
        let p = ModelParams {
            m,
            d1,
            d2,
            kappa,
            mu,
            alpha,
            eps,
            diffusion: ScalarFn::Power {
                coef: d1,
                exponent: m - 1.0,
            },
            sensitivity: ScalarFn::Constant(1.0),
            consumption: ScalarFn::Identity,
            potential: None,
            forcing: Vec::new(),
        };
        p.validate_scalars()?;
        Ok(p)
    }

    pub fn with_diffusion(mut self, d: ScalarFn) -> Self {
        self.diffusion = d;
        self
    }

    pub fn with_sensitivity(mut self, chi: ScalarFn) -> Self {
        self.sensitivity = chi;
        self
    }

    pub fn with_consumption(mut self, f: ScalarFn) -> Self {
        self.consumption = f;
        self
    }

    pub fn with_potential(mut self, phi: Option<Expr>) -> Self {
        self.potential = phi;
        self
    }

    pub fn with_forcing(mut self, g: Vec<Expr>) -> Self {
        self.forcing = g;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate_scalars(&self) -> Result<()> {
        let finite = [
            ("m", self.m),
            ("D1", self.d1),
            ("D2", self.d2),
            ("kappa", self.kappa),
            ("mu", self.mu),
            ("alpha", self.alpha),
            ("eps", self.eps),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if self.m <= 0.0 {
            return Err(Error::invalid("m", "must satisfy m > 0"));
        }
        if self.d1 <= 0.0 {
            return Err(Error::invalid("D1", "must satisfy D1 > 0"));
        }
        if self.d2 < self.d1 {
            return Err(Error::invalid("D2", "must satisfy D2 >= D1"));
        }
        if self.alpha <= 1.0 {
            return Err(Error::invalid("alpha", "must satisfy alpha > 1"));
        }
        if self.mu < 0.0 {
            return Err(Error::invalid("mu", "must satisfy mu >= 0"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::invalid("eps", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn chi(&self, s: f64) -> Result<f64> {
        self.sensitivity.eval(s)
    }

    pub fn f(&self, s: f64) -> Result<f64> {
        self.consumption.eval(s)
    }

    /// h = f / chi, the weight of the chemical part of the energy.
    pub fn h(&self, s: f64) -> Result<f64> {
        Ok(self.f(s)? / self.chi(s)?)
    }

    pub fn regime(&self) -> Result<Regime> {
        classify_regime(self.m, self.mu, self.alpha)
    }
}

/// Regularized diffusivity `D_eps(s) = D(s + eps)`.
pub fn d_eps(s: f64, params: &ModelParams) -> Result<f64> {
    if s < 0.0 || s.is_nan() {
        return Err(Error::Domain(format!("D_eps evaluated at negative density {s}")));
    }
    params.diffusion.eval(s + params.eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeTag {
    Case1,
    Case2,
    Both,
    Inadmissible,
}

impl RegimeTag {
    pub fn is_admissible(self) -> bool {
        self != RegimeTag::Inadmissible
    }
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegimeTag::Case1 => "Case1",
            RegimeTag::Case2 => "Case2",
            RegimeTag::Both => "Both",
            RegimeTag::Inadmissible => "Inadmissible",
        };
        f.write_str(s)
    }
}

/// Exponents of the space-time estimates for an admissible regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub p1: f64,
    pub p2: f64,
    /// Exponent for the gradient of n; its estimate only applies when m <= 2.
    pub p3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub tag: RegimeTag,
    /// 1 if mu = 0, else 0.
    pub delta_mu0: u8,
    pub exponents: Option<Exponents>,
    pub m: f64,
}

impl Regime {
    pub fn p1(&self) -> Option<f64> {
        self.exponents.map(|e| e.p1)
    }
}

/// Classifies (m, mu, alpha) against the two admissibility routes:
/// diffusion-dominated `m > 2/3` and damping-dominated `mu > 0, alpha > 4/3`.
pub fn classify_regime(m: f64, mu: f64, alpha: f64) -> Result<Regime> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid("m", "must satisfy m > 0"));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid("mu", "must satisfy mu >= 0"));
    }
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", "must satisfy alpha > 1"));
    }
    let diffusive = m > 2.0 / 3.0;
    let damped = mu > 0.0 && alpha > 4.0 / 3.0;
    let tag = match (diffusive, damped) {
        (true, true) => RegimeTag::Both,
        (true, false) => RegimeTag::Case1,
        (false, true) => RegimeTag::Case2,
        (false, false) => RegimeTag::Inadmissible,
    };
    let exponents = if diffusive {
        Some(Exponents {
            p1: (3.0 * m + 2.0) / 3.0,
            p2: (3.0 * m + 2.0) / (3.0 * m + 1.0),
            p3: (3.0 * m + 2.0) / 4.0,
        })
    } else if damped {
        Some(Exponents {
            p1: alpha,
            p2: 2.0 * alpha / (alpha + m),
            p3: 2.0 * alpha / (2.0 + alpha - m),
        })
    } else {
        None
    };
    Ok(Regime {
        tag,
        delta_mu0: u8::from(mu == 0.0),
        exponents,
        m,
    })
}

/// Outcome of one sampled structural condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Sample point with the worst value of the checked quantity.
    pub worst_point: f64,
    pub worst_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<ConditionCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// First and second derivative of `g` at `s` by centered differences with step `delta`;
/// falls back to second-order one-sided stencils when `s - 2*delta < 0`.
pub fn fd_derivatives<F>(g: F, s: f64, delta: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    if s - delta >= 0.0 {
        let gm = g(s - delta)?;
        let g0 = g(s)?;
        let gp = g(s + delta)?;
        Ok(((gp - gm) / (2.0 * delta), (gp - 2.0 * g0 + gm) / (delta * delta)))
    } else {
        let g0 = g(s)?;
        let g1 = g(s + delta)?;
        let g2 = g(s + 2.0 * delta)?;
        let g3 = g(s + 3.0 * delta)?;
        let d1 = (-3.0 * g0 + 4.0 * g1 - g2) / (2.0 * delta);
        let d2 = (2.0 * g0 - 5.0 * g1 + 4.0 * g2 - g3) / (delta * delta);
        Ok((d1, d2))
    }
}

fn checked(name: &str, s: f64, v: Result<f64>) -> Result<f64> {
    match v {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Evaluation {
            function: name.to_string(),
            point: format!("s = {s}"),
            reason: format!("non-finite value {v}"),
        }),
        Err(e) => Err(Error::Evaluation {
            function: name.to_string(),
            point: format!("s = {s}"),
            reason: e.to_string(),
        }),
    }
}

struct Worst {
    point: f64,
    value: f64,
    passed: bool,
}

impl Worst {
    fn new() -> Self {
        Worst {
            point: f64::NAN,
            value: f64::NAN,
            passed: true,
        }
    }
}

/// Samples the structural hypotheses on D, chi and f:
/// `(f/chi)' > 0`, `(f/chi)'' <= 0`, `(chi f)' >= 0` on `[0, c_max]`,
/// `chi > 0`, `f(0) = 0`, `f > 0` on `(0, c_max]`, and the envelope
/// `D1 s^(m-1) <= D(s) <= D2 s^(m-1)` on a log-spaced sample of `[1e-6, 1e6]`.
pub fn check_structural_hypotheses(
    params: &ModelParams,
    c_max: f64,
    n_samples: usize,
) -> Result<HypothesisReport> {
    if !(c_max > 0.0) {
        return Err(Error::invalid("c_max", "must be positive"));
    }
    if n_samples < 3 {
        return Err(Error::invalid("n_samples", "must be at least 3"));
    }
    let delta = 1e-4 * c_max;
    let h = |s: f64| checked("f/chi", s, params.h(s));
    let chi_f = |s: f64| {
        let c = checked("chi", s, params.chi(s))?;
        let f = checked("f", s, params.f(s))?;
        Ok(c * f)
    };

    let mut h1 = Worst::new();
    let mut h1_min = f64::INFINITY;
    let mut h2 = Worst::new();
    let mut h2_max = f64::NEG_INFINITY;
    let mut cf = Worst::new();
    let mut cf_min = f64::INFINITY;
    let mut chi_pos = Worst::new();
    let mut chi_min = f64::INFINITY;
    let mut f_pos = Worst::new();
    let mut f_min = f64::INFINITY;

    // Second differences carry roundoff of order eps_mach * |h| / delta^2.
    let scale_h = (0..n_samples)
        .map(|i| c_max * i as f64 / (n_samples - 1) as f64)
        .map(|s| h(s).map(f64::abs))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0_f64, f64::max);
    let h2_tol = 1e-6 * (1.0 + scale_h / (c_max * c_max));

    for i in 0..n_samples {
        let s = c_max * i as f64 / (n_samples - 1) as f64;
        let (dh, d2h) = fd_derivatives(h, s, delta)?;
        if dh < h1_min {
            h1_min = dh;
            h1.point = s;
            h1.value = dh;
        }
        if dh <= 0.0 {
            h1.passed = false;
        }
        if d2h > h2_max {
            h2_max = d2h;
            h2.point = s;
            h2.value = d2h;
        }
        if d2h > h2_tol {
            h2.passed = false;
        }
        let (dcf, _) = fd_derivatives(chi_f, s, delta)?;
        if dcf < cf_min {
            cf_min = dcf;
            cf.point = s;
            cf.value = dcf;
        }
        if dcf < -1e-9 {
            cf.passed = false;
        }
        let chi = checked("chi", s, params.chi(s))?;
        if chi < chi_min {
            chi_min = chi;
            chi_pos.point = s;
            chi_pos.value = chi;
        }
        if chi <= 0.0 {
            chi_pos.passed = false;
        }
        let f = checked("f", s, params.f(s))?;
        if s > 0.0 {
            if f < f_min {
                f_min = f;
                f_pos.point = s;
                f_pos.value = f;
            }
            if f <= 0.0 {
                f_pos.passed = false;
            }
        }
    }
    let f0 = checked("f", 0.0, params.f(0.0))?;
    let f_zero = ConditionCheck {
        name: "f(0) = 0",
        passed: f0 == 0.0,
        worst_point: 0.0,
        worst_value: f0,
    };

    // Envelope on a log-spaced sample.
    let mut env = Worst::new();
    let mut env_margin = f64::INFINITY;
    let (lo, hi) = (1e-6_f64.ln(), 1e6_f64.ln());
    for i in 0..n_samples {
        let sigma = (lo + (hi - lo) * i as f64 / (n_samples - 1) as f64).exp();
        let d = checked("D", sigma, params.diffusion.eval(sigma))?;
        let base = sigma.powf(params.m - 1.0);
        let lower = params.d1 * base;
        let upper = params.d2 * base;
        let tol = 1e-12 * upper.abs().max(lower.abs());
        let margin = (d - lower + tol).min(upper + tol - d) / base;
        if margin < env_margin {
            env_margin = margin;
            env.point = sigma;
            env.value = d;
        }
        if margin < 0.0 {
            env.passed = false;
        }
    }

    let to_check = |name, w: Worst| ConditionCheck {
        name,
        passed: w.passed,
        worst_point: w.point,
        worst_value: w.value,
    };
    Ok(HypothesisReport {
        checks: vec![
            to_check("(f/chi)' > 0", h1),
            to_check("(f/chi)'' <= 0", h2),
            to_check("(chi f)' >= 0", cf),
            to_check("chi > 0", chi_pos),
            to_check("f > 0 on (0, c_max]", f_pos),
            f_zero,
            to_check("D envelope", env),
        ],
    })
}

/// Adaptive Simpson quadrature with absolute tolerance `tol` and depth limit.
pub fn adaptive_simpson<F>(g: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let fa = g(a)?;
    let fb = g(b)?;
    let c = 0.5 * (a + b);
    let fc = g(c)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(g, a, b, fa, fc, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    g: &F,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = g(d)?;
    let fe = g(e)?;
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Tolerance { tolerance: tol, a, b });
    }
    let l = simpson_step(g, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)?;
    let r = simpson_step(g, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

pub const PSI_TOLERANCE: f64 = 1e-10;
pub const PSI_MAX_DEPTH: u32 = 40;

/// `Psi(s) = integral from 1 to s of 1/sqrt(h(sigma))`, `h = f/chi`.
pub fn psi(s: f64, params: &ModelParams) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("psi requires s > 0, got {s}")));
    }
    if s == 1.0 {
        return Ok(0.0);
    }
    let integrand = |sigma: f64| {
        let hv = checked("f/chi", sigma, params.h(sigma))?;
        if hv <= 0.0 {
            return Err(Error::Domain(format!(
                "f/chi must be positive between 1 and s, found {hv} at {sigma}"
            )));
        }
        Ok(1.0 / hv.sqrt())
    };
    let (a, b, sign) = if s > 1.0 { (1.0, s, 1.0) } else { (s, 1.0, -1.0) };
    let v = adaptive_simpson(&integrand, a, b, PSI_TOLERANCE, PSI_MAX_DEPTH)?;
    Ok(sign * v)
}
