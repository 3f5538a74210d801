//! Extremal dependence (EDM) and directional tail dependence (DTD).
//!
//! Inputs are assumed to be on the balanced Pareto(2) scale. Thresholds are
//! exceedance quantiles of the realised radii (see [`crate::quantile`]);
//! a pair is an exceedance when its radius is at least the threshold and
//! strictly positive.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, check_same_len, Error, Result};
use crate::quantile::quantile_in_place;
use crate::seed;

/// Tolerance on the four balance sums of a discrete angular measure.
pub const BALANCE_TOLERANCE: f64 = 1e-12;

/// Arguments of `arccos` beyond `1 + CLAMP_REPORT` are reported as violations.
pub const CLAMP_REPORT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    One,
    Two,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Estimator::One),
            "2" | "two" => Ok(Estimator::Two),
            other => Err(Error::InvalidParameter(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmEstimate {
    pub sigma: f64,
    pub n_exceed: usize,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtdEstimate {
    pub lambda_hat: f64,
    pub estimator: Estimator,
    /// `σ̂(X⁺, Y⁺)`; only computed by the second estimator.
    pub sigma_pp: Option<f64>,
    /// `σ̂(X⁺, Y⁻)`; only computed by the second estimator.
    pub sigma_pm: Option<f64>,
    /// `N` for the first estimator, `N⁺` for the second.
    pub n_plus: usize,
    pub n_minus: Option<usize>,
    pub threshold_plus: f64,
    pub threshold_minus: Option<f64>,
}

#[inline]
pub(crate) fn positive_part(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn radius(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[inline]
pub(crate) fn is_exceedance(r: f64, r0: f64) -> bool {
    r >= r0 && r > 0.0
}

/// Splits a series into its positive part `max(x, 0)` and negative part `-min(x, 0)`.
pub fn split_tails(series: &[f64]) -> (Vec<f64>, Vec<f64>) {
    series.iter().map(|&v| (positive_part(v), positive_part(-v))).unzip()
}

fn check_nonnegative(v: &[f64]) -> Result<()> {
    match v.iter().position(|a| !(*a >= 0.0 && a.is_finite())) {
        Some(i) => Err(Error::InvalidParameter(format!("EDM input must be finite and non-negative (position {i})"))),
        None => Ok(()),
    }
}

/// Mean of `x y / r²` over pairs whose radius reaches `r0`.
pub fn edm(x: &[f64], y: &[f64], r0: f64) -> Result<EdmEstimate> {
    check_same_len(x, y)?;
    check_nonnegative(x)?;
    check_nonnegative(y)?;
    if !(r0 > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be positive, got {r0}")));
    }
    edm_with_threshold(x, y, r0)
}

/// [`edm`] with the threshold set to the lower empirical `q`-quantile of the radii.
pub fn edm_at_quantile(x: &[f64], y: &[f64], q: f64) -> Result<EdmEstimate> {
    check_same_len(x, y)?;
    check_nonnegative(x)?;
    check_nonnegative(y)?;
    check_probability("q", q)?;
    if x.is_empty() {
        return Err(Error::NoExceedances { threshold: f64::NAN });
    }
    let mut radii: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| radius(a, b)).collect();
    let r0 = quantile_in_place(&mut radii, q);
    edm_with_threshold(x, y, r0)
}

fn edm_with_threshold(x: &[f64], y: &[f64], r0: f64) -> Result<EdmEstimate> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&a, &b) in x.iter().zip(y) {
        let r2 = a * a + b * b;
        if is_exceedance(r2.sqrt(), r0) {
            sum += a * b / r2;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoExceedances { threshold: r0 });
    }
    Ok(EdmEstimate { sigma: sum / n as f64, n_exceed: n, threshold: r0 })
}

/// First DTD estimator: `3/N Σ x⁺ y / r²` over `r = ‖(x⁺, y)‖ ≥ r0`, with
/// `r0` the `q`-quantile of the radii.
pub fn dtd_estimator_one(x: &[f64], y: &[f64], q: f64) -> Result<DtdEstimate> {
    let (terms, r0) = exceedance_terms_one(x, y, q)?;
    let sum: f64 = terms.iter().sum();
    let n = terms.len();
    Ok(DtdEstimate {
        lambda_hat: 3.0 * (sum / n as f64),
        estimator: Estimator::One,
        sigma_pp: None,
        sigma_pm: None,
        n_plus: n,
        n_minus: None,
        threshold_plus: r0,
        threshold_minus: None,
    })
}

/// Terms `x⁺ y / r²` of the first estimator, in index order, and the threshold.
pub(crate) fn exceedance_terms_one(x: &[f64], y: &[f64], q: f64) -> Result<(Vec<f64>, f64)> {
    check_same_len(x, y)?;
    check_probability("q", q)?;
    if x.is_empty() {
        return Err(Error::NoExceedances { threshold: f64::NAN });
    }
    let mut radii: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| radius(positive_part(a), b)).collect();
    let r0 = quantile_in_place(&mut radii, q);
    let mut terms = Vec::new();
    for (&a, &b) in x.iter().zip(y) {
        let xp = positive_part(a);
        let r2 = xp * xp + b * b;
        if is_exceedance(r2.sqrt(), r0) {
            terms.push(xp * b / r2);
        }
    }
    if terms.is_empty() {
        return Err(Error::NoExceedances { threshold: r0 });
    }
    Ok((terms, r0))
}

/// Second DTD estimator: `2 (σ̂(x⁺, y⁺) - σ̂(x⁺, y⁻))`, each EDM with its own
/// radius set and quantile threshold.
pub fn dtd_estimator_two(x: &[f64], y: &[f64], q_plus: f64, q_minus: f64) -> Result<DtdEstimate> {
    check_same_len(x, y)?;
    check_probability("q_plus", q_plus)?;
    check_probability("q_minus", q_minus)?;
    let xp: Vec<f64> = x.iter().map(|&v| positive_part(v)).collect();
    let (yp, ym) = split_tails(y);
    let pp = edm_at_quantile(&xp, &yp, q_plus)?;
    let pm = edm_at_quantile(&xp, &ym, q_minus)?;
    Ok(DtdEstimate {
        lambda_hat: 2.0 * (pp.sigma - pm.sigma),
        estimator: Estimator::Two,
        sigma_pp: Some(pp.sigma),
        sigma_pm: Some(pm.sigma),
        n_plus: pp.n_exceed,
        n_minus: Some(pm.n_exceed),
        threshold_plus: pp.threshold,
        threshold_minus: Some(pm.threshold),
    })
}

/// Dispatches to the chosen estimator; `q_minus` is ignored by the first.
pub fn estimate_dtd(x: &[f64], y: &[f64], estimator: Estimator, q_plus: f64, q_minus: f64) -> Result<DtdEstimate> {
    match estimator {
        Estimator::One => dtd_estimator_one(x, y, q_plus),
        Estimator::Two => dtd_estimator_two(x, y, q_plus, q_minus),
    }
}

/// A point mass of an angular measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta: f64,
    pub mass: f64,
}

/// Unit vector at `theta`, exact on the coordinate axes.
pub fn direction(theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    if c.abs() < 1e-15 {
        (0.0, s.signum())
    } else if s.abs() < 1e-15 {
        (c.signum(), 0.0)
    } else {
        (c, s)
    }
}

/// Finite angular measure on the unit circle satisfying the four balance
/// constraints `Σ m max(±cos θ, 0)² = Σ m max(±sin θ, 0)² = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteAngularMeasure {
    atoms: Vec<Atom>,
    dirs: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    /// `(X⁺, Y⁺)`: first quadrant.
    PlusPlus,
    /// `(X⁺, Y⁻)`: fourth quadrant.
    PlusMinus,
}

fn balance_sums(dirs: &[(f64, f64)], masses: impl Iterator<Item = f64>) -> [f64; 4] {
    let mut sums = [0.0; 4];
    for (&(c, s), m) in dirs.iter().zip(masses) {
        sums[0] += m * positive_part(c).powi(2);
        sums[1] += m * positive_part(-c).powi(2);
        sums[2] += m * positive_part(s).powi(2);
        sums[3] += m * positive_part(-s).powi(2);
    }
    sums
}

const SUM_NAMES: [&str; 4] = ["cos+", "cos-", "sin+", "sin-"];

impl DiscreteAngularMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(a.theta >= 0.0 && a.theta < 2.0 * PI) {
                return Err(Error::InvalidParameter(format!("atom angle {} outside [0, 2π)", a.theta)));
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::InvalidParameter(format!("atom mass {} must be positive", a.mass)));
            }
        }
        let dirs: Vec<(f64, f64)> = atoms.iter().map(|a| direction(a.theta)).collect();
        let sums = balance_sums(&dirs, atoms.iter().map(|a| a.mass));
        for (name, value) in SUM_NAMES.iter().zip(sums) {
            if (value - 1.0).abs() > BALANCE_TOLERANCE {
                return Err(Error::UnbalancedMeasure { sum_name: name, value });
            }
        }
        Ok(Self { atoms, dirs })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn balance_sums(&self) -> [f64; 4] {
        balance_sums(&self.dirs, self.atoms.iter().map(|a| a.mass))
    }

    /// Random balanced measure: up to `per_quadrant` atoms at uniform angles
    /// inside each open quadrant plus optional atoms on the axes. Interior
    /// masses are scaled per quadrant so that the four balance constraints
    /// hold; draws with no positive solution are discarded.
    pub fn random_balanced<R: Rng + ?Sized>(rng: &mut R, per_quadrant: usize) -> Result<Self> {
        let per_quadrant = per_quadrant.max(1);
        for _ in 0..10_000 {
            if let Some(atoms) = draw_balanced(rng, per_quadrant) {
                if let Ok(measure) = Self::new(atoms) {
                    return Ok(measure);
                }
            }
        }
        Err(Error::InvalidParameter("could not draw a balanced measure".into()))
    }

    /// Exact EDM of the requested quadrant, `½ Σ m cos θ |sin θ|` over its open interior.
    pub fn sigma(&self, quadrant: Quadrant) -> f64 {
        let mut sum = 0.0;
        for (a, &(c, s)) in self.atoms.iter().zip(&self.dirs) {
            let hit = match quadrant {
                Quadrant::PlusPlus => c > 0.0 && s > 0.0,
                Quadrant::PlusMinus => c > 0.0 && s < 0.0,
            };
            if hit {
                sum += a.mass * c * s.abs();
            }
        }
        0.5 * sum
    }

    /// Exact DTD, `Σ m cos θ sin θ` over the right half circle.
    pub fn lambda(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.dirs)
            .filter(|(_, &(c, _))| c > 0.0)
            .map(|(a, &(c, s))| a.mass * c * s)
            .sum()
    }

    /// `n` pairs `R (cos θ, sin θ)` with `R` Pareto(2) on `[1, ∞)` and the
    /// atom drawn with probability proportional to its mass.
    pub fn sample(&self, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seed::rng(seed, 0);
        let mut cumulative = Vec::with_capacity(self.atoms.len());
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.mass;
            cumulative.push(total);
        }
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = rng.random::<f64>() * total;
            let k = cumulative.partition_point(|&c| c <= pick).min(self.atoms.len() - 1);
            let u = 1.0 - rng.random::<f64>();
            let r = 1.0 / u.sqrt();
            let (c, s) = self.dirs[k];
            xs.push(r * c);
            ys.push(r * s);
        }
        (xs, ys)
    }
}

// Atom on each axis carries a fixed share of its balance sum; interior atoms
// of quadrant k are scaled by a common factor s_k. The four constraints form
// a cycle Q1 -cos+- Q4 -sin-- Q3 -cos-- Q2 -sin+- Q1, solved for s_1.
fn draw_balanced<R: Rng + ?Sized>(rng: &mut R, per_quadrant: usize) -> Option<Vec<Atom>> {
    let mut atoms = Vec::new();
    // remaining budget of cos+, cos-, sin+, sin- after axis atoms
    let mut budget = [1.0; 4];
    for (axis, slot) in [(0usize, 0usize), (1, 2), (2, 1), (3, 3)] {
        if rng.random_bool(0.3) {
            let share: f64 = rng.random_range(0.05..0.5);
            budget[slot] -= share;
            atoms.push(Atom { theta: axis as f64 * FRAC_PI_2, mass: share });
        }
    }
    let mut quadrants: Vec<Vec<Atom>> = Vec::with_capacity(4);
    // a[k] = sum m cos^2, b[k] = sum m sin^2 over quadrant k's interior atoms
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    for k in 0..4 {
        let count = rng.random_range(1..=per_quadrant);
        let mut cell = Vec::with_capacity(count);
        for _ in 0..count {
            let theta = k as f64 * FRAC_PI_2 + rng.random_range(0.01..(FRAC_PI_2 - 0.01));
            let mass = rng.random_range(0.2..2.0);
            let (c, s) = direction(theta);
            a[k] += mass * c * c;
            b[k] += mass * s * s;
            cell.push(Atom { theta, mass });
        }
        quadrants.push(cell);
    }
    let [cp, cm, sp, sm] = budget;
    // s1 = t; s4 from cos+, s2 from sin+, s3 from cos-, then sin- fixes t.
    let k3 = (cm - a[1] * sp / b[1]) / a[2];
    let l3 = a[1] * b[0] / (a[2] * b[1]);
    let coef = b[2] * l3 - b[3] * a[0] / a[3];
    if coef.abs() < 1e-9 {
        return None;
    }
    let t = (sm - b[2] * k3 - b[3] * cp / a[3]) / coef;
    let s2 = (sp - b[0] * t) / b[1];
    let scale = [t, s2, k3 + l3 * t, (cp - a[0] * t) / a[3]];
    if scale.iter().any(|&v| !(v > 1e-6 && v.is_finite())) {
        return None;
    }
    for (cell, f) in quadrants.into_iter().zip(scale) {
        atoms.extend(cell.into_iter().map(|at| Atom { theta: at.theta, mass: at.mass * f }));
    }
    Some(atoms)
}

/// Exact quadrant EDM of a balanced measure.
pub fn sigma_oracle(measure: &DiscreteAngularMeasure, quadrant: Quadrant) -> f64 {
    measure.sigma(quadrant)
}

/// Exact DTD of a balanced measure.
pub fn lambda_oracle(measure: &DiscreteAngularMeasure) -> f64 {
    measure.lambda()
}

/// Pairs realising the limit angular measure of `measure`; deterministic in `seed`.
pub fn sample_from_measure(measure: &DiscreteAngularMeasure, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    measure.sample(n, seed)
}

/// Position of `X⁺` on the extremal ball relative to `Y⁺` and `Y⁻`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCoordinate {
    pub theta_pp: f64,
    pub theta_pm: f64,
    pub xyz: [f64; 3],
    /// Largest amount by which an `arccos` argument exceeded 1 before clamping.
    pub clamp_excess: f64,
}

impl BallCoordinate {
    pub fn clamp_violation(&self) -> bool {
        self.clamp_excess > CLAMP_REPORT
    }

    /// `π/2 - θ_pp ≤ θ_pm ≤ π/2` within `tol`.
    pub fn satisfies_constraint(&self, tol: f64) -> bool {
        self.theta_pm >= FRAC_PI_2 - self.theta_pp - tol && self.theta_pm <= FRAC_PI_2 + tol
    }
}

fn ball_angle(sigma: f64, self_x: f64, self_y: f64) -> (f64, f64) {
    let arg = sigma / (self_x * self_y).sqrt();
    (arg.clamp(0.0, 1.0).acos(), (arg - 1.0).max(0.0))
}

/// Extremal-ball angles `θ = arccos(σ_xy / √(σ_xx σ_yy))` and Cartesian position.
pub fn ball_coordinates(sigma_pp: f64, sigma_pm: f64, sigma_xx: f64, sigma_yy_plus: f64, sigma_yy_minus: f64) -> Result<BallCoordinate> {
    for s in [sigma_pp, sigma_pm, sigma_xx, sigma_yy_plus, sigma_yy_minus] {
        if !(0.0..=0.5).contains(&s) {
            return Err(Error::InvalidParameter(format!("EDM {s} outside [0, 0.5]")));
        }
    }
    if sigma_xx == 0.0 || sigma_yy_plus == 0.0 || sigma_yy_minus == 0.0 {
        return Err(Error::DegenerateSelfEdm);
    }
    let (theta_pp, e1) = ball_angle(sigma_pp, sigma_xx, sigma_yy_plus);
    let (theta_pm, e2) = ball_angle(sigma_pm, sigma_xx, sigma_yy_minus);
    let (a, b) = (theta_pp.cos(), theta_pm.cos());
    let z = (1.0 - a * a - b * b).max(0.0).sqrt();
    Ok(BallCoordinate { theta_pp, theta_pm, xyz: [a, b, z], clamp_excess: e1.max(e2) })
}

/// [`ball_coordinates`] with the self-EDMs at their identical value 0.5.
pub fn ball_coordinates_default(sigma_pp: f64, sigma_pm: f64) -> Result<BallCoordinate> {
    ball_coordinates(sigma_pp, sigma_pm, 0.5, 0.5, 0.5)
}
