//! Copula samplers and the Monte Carlo size/power study.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::angular::Estimator;
use crate::error::{check_probability, Error, Result};
use crate::inference::{asymptotic_test, permutation_test, PermutationConfig};
use crate::margins::symmetric_pareto_quantile;
use crate::{par, seed};

fn default_nu() -> f64 {
    4.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Copula {
    Gumbel { theta: f64 },
    StudentT { rho: f64, #[serde(default = "default_nu")] nu: f64 },
}

impl Copula {
    pub fn family(&self) -> &'static str {
        match self {
            Copula::Gumbel { .. } => "gumbel",
            Copula::StudentT { .. } => "student_t",
        }
    }

    /// The dependence parameter: `θ` for Gumbel, `ρ` for Student-t.
    pub fn parameter(&self) -> f64 {
        match *self {
            Copula::Gumbel { theta } => theta,
            Copula::StudentT { rho, .. } => rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Copula::Gumbel { theta } if !(theta >= 1.0 && theta.is_finite()) => {
                Err(Error::InvalidParameter(format!("Gumbel theta must be >= 1, got {theta}")))
            }
            Copula::StudentT { rho, .. } if !(rho > -1.0 && rho < 1.0) => {
                Err(Error::InvalidParameter(format!("Student-t rho must lie in (-1, 1), got {rho}")))
            }
            Copula::StudentT { nu, .. } if !(nu > 0.0 && nu.is_finite()) => {
                Err(Error::InvalidParameter(format!("degrees of freedom must be positive, got {nu}")))
            }
            _ => Ok(()),
        }
    }
}

/// A copula together with the mixing probability of the reflected target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    #[serde(flatten)]
    pub copula: Copula,
    pub phi: f64,
}

impl CopulaSpec {
    pub fn validate(&self) -> Result<()> {
        self.copula.validate()?;
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::InvalidParameter(format!("phi must lie in [0, 1], got {}", self.phi)));
        }
        Ok(())
    }
}

/// Positive stable variable with Laplace transform `exp(-t^alpha)`, `0 < alpha < 1`.
fn positive_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let w = PI * rng.sample::<f64, _>(Open01);
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * w).sin() / w.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * w).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

fn gumbel_pair<R: Rng + ?Sized>(rng: &mut R, theta: f64) -> (f64, f64) {
    if theta == 1.0 {
        return (rng.sample(Open01), rng.sample(Open01));
    }
    let alpha = 1.0 / theta;
    let s = positive_stable(rng, alpha);
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    ((-(e1 / s).powf(alpha)).exp(), (-(e2 / s).powf(alpha)).exp())
}

fn student_pair<R: Rng + ?Sized>(rng: &mut R, rho: f64, chi: &ChiSquared<f64>, t: &StudentsT, nu: f64) -> (f64, f64) {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let w = (chi.sample(rng) / nu).sqrt();
    let y2 = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
    (t.cdf(z1 / w), t.cdf(y2 / w))
}

fn inside(u: f64) -> bool {
    u > 0.0 && u < 1.0
}

/// `n` pairs from the copula of `spec` (the mixing probability is not applied).
/// Pairs rounding onto the boundary of the square are redrawn.
pub fn sample_copula(spec: &CopulaSpec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let mut rng = seed::rng(seed, 0);
    let mut us = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    let mut draw: Box<dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> (f64, f64)> = match spec.copula {
        Copula::Gumbel { theta } => Box::new(move |r| gumbel_pair(r, theta)),
        Copula::StudentT { rho, nu } => {
            let chi = ChiSquared::new(nu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Box::new(move |r| student_pair(r, rho, &chi, &t, nu))
        }
    };
    while us.len() < n {
        let (u, v) = draw(&mut rng);
        if inside(u) && inside(v) {
            us.push(u);
            vs.push(v);
        }
    }
    Ok((us, vs))
}

/// Keep-flags of the mixture: `true` with probability `phi`.
fn mixture_keeps(n: usize, phi: f64, seed: u64) -> Vec<bool> {
    let mut rng = seed::rng(seed, 1);
    (0..n).map(|_| rng.random_bool(phi)).collect()
}

/// Replaces each `v` by `1 - v` with probability `1 - phi`, independently.
pub fn apply_mixture(v: &[f64], phi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi must lie in [0, 1], got {phi}")));
    }
    let keep = mixture_keeps(v.len(), phi, seed);
    Ok(v.iter().zip(keep).map(|(&x, k)| if k { x } else { 1.0 - x }).collect())
}

/// Maps uniforms to the unit-scale symmetric Pareto(2) distribution.
pub fn to_balanced(u: &[f64]) -> Result<Vec<f64>> {
    u.iter()
        .map(|&x| if inside(x) { Ok(symmetric_pareto_quantile(x)) } else { Err(Error::BoundaryValue { value: x }) })
        .collect()
}

/// Balanced sample of the mixed copula. The mixture is applied after the
/// margin transform as a sign flip, which is the same map because the
/// symmetric Pareto quantile satisfies `F⁻¹(1 - v) = -F⁻¹(v)`, and it cannot
/// push a tiny `v` onto the boundary.
pub fn sample_balanced(spec: &CopulaSpec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (u, v) = sample_copula(spec, n, seed)?;
    let x = to_balanced(&u)?;
    let y = to_balanced(&v)?;
    let keep = mixture_keeps(n, spec.phi, seed);
    let y = y.into_iter().zip(keep).map(|(b, k)| if k { b } else { -b }).collect();
    Ok((x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PermLambda1,
    PermLambda2,
    AsymLambda1,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::PermLambda1, TestKind::PermLambda2, TestKind::AsymLambda1];

    pub fn name(&self) -> &'static str {
        match self {
            TestKind::PermLambda1 => "perm_lambda1",
            TestKind::PermLambda2 => "perm_lambda2",
            TestKind::AsymLambda1 => "asym_lambda1",
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown test {s:?}")))
    }
}

fn default_permutations() -> usize {
    1000
}

/// One grid cell of a study. Every replication draws one sample and runs
/// each listed test on it; rejections are counted at every listed level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    #[serde(flatten)]
    pub spec: CopulaSpec,
    pub n: usize,
    pub q: f64,
    pub alpha_levels: Vec<f64>,
    pub tests: Vec<TestKind>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

impl StudyCell {
    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_probability("q", self.q)?;
        for &a in &self.alpha_levels {
            check_probability("alpha_star", a)?;
        }
        if self.k == 0 || self.n == 0 || self.permutations == 0 || self.tests.is_empty() || self.alpha_levels.is_empty() {
            return Err(Error::InvalidParameter("study cells need n, K, P >= 1 and at least one test and level".into()));
        }
        Ok(())
    }
}

/// One line of the study table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub family: String,
    pub param: f64,
    pub phi: f64,
    pub n: usize,
    pub q: f64,
    pub alpha_star: f64,
    pub test: TestKind,
    /// Replications that produced a p-value.
    #[serde(rename = "K")]
    pub k: usize,
    pub rejections: usize,
    pub rate: f64,
    pub seconds: f64,
    /// Replications whose test could not be computed.
    pub failures: usize,
}

/// Outcome of one test in one replication.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestOutcome {
    pub p_value: Option<f64>,
    pub seconds: f64,
}

/// One replication of `cell`: sample, transform, and run every requested test.
pub fn run_replication(cell: &StudyCell, cell_index: usize, rep: usize, master_seed: u64, timing: bool) -> Vec<TestOutcome> {
    let s = seed::derive(master_seed, &[cell_index as u64, rep as u64]);
    let sample = sample_balanced(&cell.spec, cell.n, s);
    cell.tests
        .iter()
        .map(|&test| {
            let start = timing.then(Instant::now);
            let p = sample.as_ref().map_err(|e| e.to_string()).and_then(|(x, y)| {
                run_test(test, x, y, cell.q, cell.permutations, seed::derive(s, &[test as u64])).map_err(|e| e.to_string())
            });
            let seconds = start.map_or(0.0, |t| t.elapsed().as_secs_f64());
            match p {
                Ok(p) => TestOutcome { p_value: Some(p), seconds },
                Err(e) => {
                    log::warn!("cell {cell_index} replication {rep} {}: {e}", test.name());
                    TestOutcome { p_value: None, seconds }
                }
            }
        })
        .collect()
}

fn run_test(test: TestKind, x: &[f64], y: &[f64], q: f64, permutations: usize, seed: u64) -> Result<f64> {
    let perm = |estimator| PermutationConfig { estimator, q_plus: q, q_minus: q, permutations, smoothed: false };
    Ok(match test {
        TestKind::PermLambda1 => permutation_test(x, y, &perm(Estimator::One), seed)?.p_value,
        TestKind::PermLambda2 => permutation_test(x, y, &perm(Estimator::Two), seed)?.p_value,
        TestKind::AsymLambda1 => asymptotic_test(x, y, q)?.p_value,
    })
}

/// Runs every cell of `grid`. Output is identical for a fixed seed whatever
/// the thread count; `timing` adds wall-clock seconds per test.
pub fn run_study(grid: &[StudyCell], master_seed: u64, timing: bool) -> Result<Vec<StudyRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("study grid is empty".into()));
    }
    for cell in grid {
        cell.validate()?;
    }
    let jobs: Vec<(usize, usize)> = grid.iter().enumerate().flat_map(|(c, cell)| (0..cell.k).map(move |r| (c, r))).collect();
    let outcomes = par::map(jobs.len(), |j| {
        let (c, r) = jobs[j];
        run_replication(&grid[c], c, r, master_seed, timing)
    });
    let mut rows = Vec::new();
    let mut offset = 0;
    for cell in grid {
        let reps = &outcomes[offset..offset + cell.k];
        offset += cell.k;
        for (t, &test) in cell.tests.iter().enumerate() {
            let p_values: Vec<f64> = reps.iter().filter_map(|o| o[t].p_value).collect();
            let seconds: f64 = reps.iter().map(|o| o[t].seconds).sum();
            for &alpha in &cell.alpha_levels {
                let rejections = p_values.iter().filter(|&&p| p <= alpha).count();
                let k = p_values.len();
                rows.push(StudyRow {
                    family: cell.spec.copula.family().to_string(),
                    param: cell.spec.copula.parameter(),
                    phi: cell.spec.phi,
                    n: cell.n,
                    q: cell.q,
                    alpha_star: alpha,
                    test,
                    k,
                    rejections,
                    rate: if k == 0 { f64::NAN } else { rejections as f64 / k as f64 },
                    seconds,
                    failures: cell.k - k,
                });
            }
        }
    }
    Ok(rows)
}

/// The power-study grid: Gumbel `θ ∈ {1.1, 1.5, 2, 3}` and Student-t
/// (`ν = 4`) `ρ ∈ {0.1, 0.4, 0.6, 0.8}`, `n ∈ {1000, 10000}`, `q = 0.99`,
/// levels 1% and 5%, all three tests.
pub fn power_grid(k: usize, phi: f64, permutations: usize) -> Vec<StudyCell> {
    let mut copulas: Vec<Copula> = [1.1, 1.5, 2.0, 3.0].into_iter().map(|theta| Copula::Gumbel { theta }).collect();
    copulas.extend([0.1, 0.4, 0.6, 0.8].into_iter().map(|rho| Copula::StudentT { rho, nu: 4.0 }));
    let mut grid = Vec::new();
    for n in [1000, 10_000] {
        for &copula in &copulas {
            grid.push(StudyCell {
                spec: CopulaSpec { copula, phi },
                n,
                q: 0.99,
                alpha_levels: vec![0.01, 0.05],
                tests: TestKind::ALL.to_vec(),
                k,
                permutations,
            });
        }
    }
    grid
}

/// The null grid: Gumbel `θ = 1.5` and Student-t `ρ = 0.4` at `φ = 0.5`,
/// `n = 10000`, `q = 0.99`, levels 1% and 5%, all three tests.
pub fn size_grid(k: usize, permutations: usize) -> Vec<StudyCell> {
    [Copula::Gumbel { theta: 1.5 }, Copula::StudentT { rho: 0.4, nu: 4.0 }]
        .into_iter()
        .map(|copula| StudyCell {
            spec: CopulaSpec { copula, phi: 0.5 },
            n: 10_000,
            q: 0.99,
            alpha_levels: vec![0.01, 0.05],
            tests: TestKind::ALL.to_vec(),
            k,
            permutations,
        })
        .collect()
}

/// Writes the study table as CSV.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "param", "phi", "n", "q", "alpha_star", "test", "K", "rejections", "rate", "seconds"])?;
    for r in rows {
        w.write_record([
            r.family.clone(),
            r.param.to_string(),
            r.phi.to_string(),
            r.n.to_string(),
            r.q.to_string(),
            r.alpha_star.to_string(),
            r.test.name().to_string(),
            r.k.to_string(),
            r.rejections.to_string(),
            r.rate.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
