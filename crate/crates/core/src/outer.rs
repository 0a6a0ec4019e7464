//! Gaussian outer bound on the distortion region and its symmetric form.
//!
//! Membership is tested on a finite grid of the free parameters
//! `(ρ̂, ρ̂0)` and of the universally quantified `β1`; the θ pair is found by
//! a one-dimensional search along `θ1θ2 = ρ̂`. Verdicts are therefore
//! relative to the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianProblem};
use crate::search::golden_section_max;

/// Constraints are accepted down to this negative margin.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

pub const CONSTRAINT_NAMES: [&str; 7] = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh"];

fn log_plus(x: f64) -> f64 {
    if x.is_infinite() {
        return f64::INFINITY;
    }
    x.ln().max(0.0)
}

/// Minimum sum rate (nats) for a cooperative encoder of a unit-variance
/// pair with correlation `rho12` to meet both distortions.
///
/// Distortions above 1 are clamped to 1; a non-positive distortion needs
/// infinite rate.
pub fn rd_joint(d1: f64, d2: f64, rho12: f64) -> f64 {
    if d1.is_nan() || d2.is_nan() {
        return f64::NAN;
    }
    if d1 <= 0.0 || d2 <= 0.0 {
        return f64::INFINITY;
    }
    let (d1, d2) = if d1 <= d2 { (d1.min(1.0), d2.min(1.0)) } else { (d2.min(1.0), d1.min(1.0)) };
    if d1 >= 1.0 {
        return 0.0;
    }
    let r2 = rho12 * rho12;
    if r2 >= (1.0 - d2) / (1.0 - d1) {
        0.5 * log_plus(1.0 / d1)
    } else if r2 <= (1.0 - d1) * (1.0 - d2) {
        0.5 * log_plus((1.0 - r2) / (d1 * d2))
    } else {
        let gap = rho12.abs() - ((1.0 - d1) * (1.0 - d2)).sqrt();
        0.5 * log_plus((1.0 - r2) / (d1 * d2 - gap * gap))
    }
}

/// Same with `S0` known at both ends: distortions are rescaled by the
/// private variances and the conditional correlation is used.
pub fn rd_joint_given_common(d1: f64, d2: f64, problem: &GaussianProblem) -> Result<f64> {
    let rho = gaussian::conditional_rho(problem)?.rho12_given_0;
    let v1 = 1.0 - problem.rho01 * problem.rho01;
    let v2 = 1.0 - problem.rho02 * problem.rho02;
    Ok(rd_joint(d1 / v1, d2 / v2, rho))
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// One point of the free parameters of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    pub rho_hat: f64,
    pub rho_hat0: f64,
    pub beta1: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// Quantities shared by every witness point of one `(d1, d2, problem)`.
#[derive(Debug, Clone, Copy)]
struct Setting {
    p1: f64,
    p2: f64,
    rho12_given_0: f64,
    r: f64,
    r_given: f64,
    v1: f64,
    v2: f64,
    d1: f64,
    d2: f64,
}

impl Setting {
    fn new(d1: f64, d2: f64, problem: &GaussianProblem) -> Result<Self> {
        problem.validate()?;
        let rho = gaussian::conditional_rho(problem)?.rho12_given_0;
        Ok(Self {
            p1: problem.p1,
            p2: problem.p2,
            rho12_given_0: rho,
            r: rd_joint(d1, d2, problem.rho12),
            r_given: rd_joint_given_common(d1, d2, problem)?,
            v1: 1.0 - problem.rho01 * problem.rho01,
            v2: 1.0 - problem.rho02 * problem.rho02,
            d1,
            d2,
        })
    }

    fn beta2(&self, beta1: f64) -> f64 {
        if self.rho12_given_0 == 0.0 {
            0.0
        } else {
            self.rho12_given_0 / beta1
        }
    }

    /// Constraints 1-4, which do not involve β or θ.
    fn first_four(&self, rho_hat: f64, rho_hat0: f64) -> [f64; 4] {
        let (p1, p2) = (self.p1, self.p2);
        let cross = 2.0 * (p1 * p2).sqrt();
        let c1 = 0.5 * (1.0 + p1 + p2 + rho_hat * cross).ln() - self.r;
        let one_minus = 1.0 - self.rho12_given_0 * self.rho12_given_0;
        let factor = if one_minus > 0.0 { ((1.0 - rho_hat * rho_hat) / one_minus).min(1.0) } else { 1.0 };
        let c2 = 0.5 * (1.0 + factor * (p1 + p2 + rho_hat0 * cross)).ln() - self.r_given;
        let shrink = (1.0 - rho_hat * rho_hat).min(1.0 - rho_hat0 * rho_hat0);
        let c3 = 1.0 + shrink * p1 - ratio(self.v1 * one_minus, self.d1);
        let c4 = 1.0 + shrink * p2 - ratio(self.v2 * one_minus, self.d2);
        [c1, c2, c3, c4]
    }

    /// Constraints 5-7.
    fn last_three(&self, rho_hat0: f64, beta1: f64, theta1: f64, theta2: f64) -> [f64; 3] {
        let (p1, p2) = (self.p1, self.p2);
        let beta2 = self.beta2(beta1);
        let q1 = ratio(rho_hat0 * rho_hat0, beta1 * beta1);
        let q2 = ratio(rho_hat0 * rho_hat0, beta2 * beta2);
        let a1 = ratio(self.v1 * (1.0 - beta1 * beta1), self.d1);
        let a2 = ratio(self.v2 * (1.0 - beta2 * beta2), self.d2);
        let t1 = 1.0 - theta1 * theta1;
        let t2 = 1.0 - theta2 * theta2;
        let c5 = 1.0 + ((t1 * p1 + t2 * p2).min((1.0 - q2) * p1 + (1.0 - q1) * p2)) - a1.max(1.0) * a2.max(1.0);
        let c6 = 1.0 + t1.min(1.0 - q2) * p1 - a1;
        let c7 = 1.0 + t2.min(1.0 - q1) * p2 - a2;
        [c5, c6, c7]
    }
}

/// All seven margins (right minus left side) at one witness point.
pub fn check_constraints(d1: f64, d2: f64, problem: &GaussianProblem, w: &WitnessPoint) -> Result<[f64; 7]> {
    let s = Setting::new(d1, d2, problem)?;
    let a = s.first_four(w.rho_hat, w.rho_hat0);
    let b = s.last_three(w.rho_hat0, w.beta1, w.theta1, w.theta2);
    Ok([a[0], a[1], a[2], a[3], b[0], b[1], b[2]])
}

/// Grid resolutions for the membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterGrid {
    pub rho_hat: usize,
    pub rho_hat0: usize,
    pub beta: usize,
    /// Coarse scan points of the θ search before golden-section refinement.
    pub theta_scan: usize,
    pub theta_iterations: usize,
    /// Bisection stops once the bracket on D is this narrow.
    pub tolerance: f64,
}

impl Default for OuterGrid {
    fn default() -> Self {
        Self { rho_hat: 101, rho_hat0: 51, beta: 51, theta_scan: 16, theta_iterations: 60, tolerance: 1e-5 }
    }
}

impl OuterGrid {
    fn validate(&self) -> Result<()> {
        if self.rho_hat < 2 || self.rho_hat0 < 2 || self.beta < 2 {
            return Err(Error::InvalidInput("outer grid resolutions must be at least 2".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("bisection tolerance must be positive".into()));
        }
        Ok(())
    }

    fn rho_hat_at(&self, i: usize) -> f64 {
        i as f64 / (self.rho_hat - 1) as f64
    }

    fn rho_hat0_at(&self, j: usize, rho: f64) -> f64 {
        rho.abs() * j as f64 / (self.rho_hat0 - 1) as f64
    }

    fn beta_at(&self, l: usize, rho: f64) -> f64 {
        let lo = rho.abs();
        lo + (1.0 - lo) * l as f64 / (self.beta - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub beta1: f64,
    pub beta2: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// `min(c5, c6, c7)` at the chosen θ.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterWitness {
    pub rho_hat: f64,
    pub rho_hat0: f64,
    pub records: Vec<BetaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    pub member: bool,
    pub violated_constraint: Option<String>,
    pub tightest_margin: f64,
}

/// Best `min(c5, c6, c7)` over `θ1 ∈ [ρ̂, 1]`, `θ2 = ρ̂/θ1`.
fn best_theta(s: &Setting, grid: &OuterGrid, rho_hat: f64, rho_hat0: f64, beta1: f64) -> (f64, f64, [f64; 3]) {
    let theta2_of = |t1: f64| if rho_hat == 0.0 { 0.0 } else { (rho_hat / t1).min(1.0) };
    if rho_hat == 0.0 {
        return (0.0, 0.0, s.last_three(rho_hat0, beta1, 0.0, 0.0));
    }
    let score = |t1: f64| {
        let c = s.last_three(rho_hat0, beta1, t1, theta2_of(t1));
        c[0].min(c[1]).min(c[2])
    };
    let (t1, _) = golden_section_max(rho_hat, 1.0, grid.theta_scan, grid.theta_iterations, score);
    let t2 = theta2_of(t1);
    (t1, t2, s.last_three(rho_hat0, beta1, t1, t2))
}

/// Score of a `(ρ̂, ρ̂0)` candidate: its worst margin, with early exit once
/// the candidate fails if `stop_on_failure`.
fn candidate(
    s: &Setting,
    grid: &OuterGrid,
    i: usize,
    j: usize,
    stop_on_failure: bool,
) -> (f64, [f64; 7], Option<OuterWitness>) {
    let rho_hat = grid.rho_hat_at(i);
    let rho_hat0 = grid.rho_hat0_at(j, s.rho12_given_0);
    let first = s.first_four(rho_hat, rho_hat0);
    let mut worst = [f64::INFINITY; 7];
    worst[..4].copy_from_slice(&first);
    let mut score = first.iter().copied().fold(f64::INFINITY, f64::min);
    if score < -MEMBERSHIP_TOL && stop_on_failure {
        return (score, worst, None);
    }
    let mut records = Vec::with_capacity(grid.beta);
    let mut worst_beta = f64::INFINITY;
    for l in 0..grid.beta {
        let beta1 = grid.beta_at(l, s.rho12_given_0);
        let (theta1, theta2, c) = best_theta(s, grid, rho_hat, rho_hat0, beta1);
        let margin = c[0].min(c[1]).min(c[2]);
        records.push(BetaRecord { beta1, beta2: s.beta2(beta1), theta1, theta2, margin });
        if margin < worst_beta {
            worst_beta = margin;
            worst[4..].copy_from_slice(&c);
        }
        if margin < -MEMBERSHIP_TOL && stop_on_failure {
            break;
        }
    }
    score = score.min(worst_beta);
    (score, worst, Some(OuterWitness { rho_hat, rho_hat0, records }))
}

fn candidates(grid: &OuterGrid) -> impl IndexedParallelIterator<Item = (usize, usize)> + '_ {
    (0..grid.rho_hat * grid.rho_hat0).into_par_iter().map(move |k| (k / grid.rho_hat0, k % grid.rho_hat0))
}

/// Fast yes/no membership (first passing candidate wins).
pub fn is_outer_member(d1: f64, d2: f64, problem: &GaussianProblem, grid: &OuterGrid) -> Result<bool> {
    grid.validate()?;
    let s = Setting::new(d1, d2, problem)?;
    Ok(candidates(grid).any(|(i, j)| candidate(&s, grid, i, j, true).0 >= -MEMBERSHIP_TOL))
}

/// Grid-relative membership with a witness (members) or the best
/// failing candidate (non-members).
pub fn outer_membership(
    d1: f64,
    d2: f64,
    problem: &GaussianProblem,
    grid: &OuterGrid,
) -> Result<(MembershipVerdict, OuterWitness)> {
    grid.validate()?;
    let s = Setting::new(d1, d2, problem)?;
    if let Some((i, j)) = candidates(grid).find_first(|&(i, j)| candidate(&s, grid, i, j, true).0 >= -MEMBERSHIP_TOL) {
        let (score, _, witness) = candidate(&s, grid, i, j, false);
        let verdict = MembershipVerdict { member: true, violated_constraint: None, tightest_margin: score };
        return Ok((verdict, witness.expect("full evaluation records β")));
    }
    // no candidate passes: report the least-violating one
    let scored: Vec<(f64, [f64; 7], Option<OuterWitness>)> =
        candidates(grid).map(|(i, j)| candidate(&s, grid, i, j, false)).collect();
    let mut best = 0;
    for (k, c) in scored.iter().enumerate() {
        if c.0 > scored[best].0 {
            best = k;
        }
    }
    let (score, margins, witness) = scored.into_iter().nth(best).expect("non-empty grid");
    let violated = margins.iter().position(|m| *m < -MEMBERSHIP_TOL).map(|k| CONSTRAINT_NAMES[k].to_string());
    let witness = witness.unwrap_or(OuterWitness { rho_hat: 0.0, rho_hat0: 0.0, records: vec![] });
    Ok((MembershipVerdict { member: false, violated_constraint: violated, tightest_margin: score }, witness))
}

fn require_symmetric_powers(problem: &GaussianProblem) -> Result<()> {
    if problem.p1 != problem.p2 {
        return Err(Error::InvalidInput(format!("powers differ: {} vs {}", problem.p1, problem.p2)));
    }
    Ok(())
}

/// Smallest D with `(D, D)` inside the grid outer bound, by bisection on
/// `[0, 1]`; returns the upper end of the final bracket.
pub fn symmetric_outer_min_distortion(problem: &GaussianProblem, grid: &OuterGrid) -> Result<f64> {
    require_symmetric_powers(problem)?;
    grid.validate()?;
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > grid.tolerance {
        let mid = 0.5 * (lo + hi);
        if is_outer_member(mid, mid, problem, grid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Closed-form symmetric sum rate `R(D, D)` for correlation `rho`.
pub fn rd_symmetric(d: f64, rho: f64) -> f64 {
    if d <= 0.0 {
        return f64::INFINITY;
    }
    let d = d.min(1.0);
    let a = rho.abs();
    if a <= 1.0 - d {
        0.5 * log_plus((1.0 - rho * rho) / (d * d))
    } else {
        0.5 * log_plus((1.0 + a) / (2.0 * d - (1.0 - a)))
    }
}

/// Membership of `(D, D)` in the symmetric bound, evaluated directly from
/// its symmetric form with the θ pair chosen analytically. Requires equal
/// powers and `ρ01 = ρ02`. Uses the same grid for `ρ̂`, `ρ̂0`, `β1`.
pub fn corollary_membership(d: f64, problem: &GaussianProblem, grid: &OuterGrid) -> Result<bool> {
    require_symmetric_powers(problem)?;
    if problem.rho01 != problem.rho02 {
        return Err(Error::InvalidInput("the symmetric bound needs rho01 = rho02".into()));
    }
    grid.validate()?;
    problem.validate()?;
    let p = problem.p1;
    let v = 1.0 - problem.rho01 * problem.rho01;
    let rho0 = gaussian::conditional_rho(problem)?.rho12_given_0;
    let r = rd_symmetric(d, problem.rho12);
    let r0 = rd_symmetric(d / v, rho0);
    let div = |n: f64, m: f64| if n == 0.0 { 0.0 } else { n / m };
    let tol = MEMBERSHIP_TOL;

    let passes = |i: usize, j: usize| -> bool {
        let rh = i as f64 / (grid.rho_hat - 1) as f64;
        let rh0 = rho0.abs() * j as f64 / (grid.rho_hat0 - 1) as f64;
        if 0.5 * (1.0 + 2.0 * (1.0 + rh) * p).ln() - r < -tol {
            return false;
        }
        let k = if 1.0 - rho0 * rho0 > 0.0 { ((1.0 - rh * rh) / (1.0 - rho0 * rho0)).min(1.0) } else { 1.0 };
        if 0.5 * (1.0 + k * 2.0 * (1.0 + rh0) * p).ln() - r0 < -tol {
            return false;
        }
        if 1.0 + (1.0 - rh * rh).min(1.0 - rh0 * rh0) * p - div(v * (1.0 - rho0 * rho0), d) < -tol {
            return false;
        }
        (0..grid.beta).all(|l| {
            let b1 = rho0.abs() + (1.0 - rho0.abs()) * l as f64 / (grid.beta - 1) as f64;
            let b2 = if rho0 == 0.0 { 0.0 } else { rho0 / b1 };
            let q1 = div(rh0 * rh0, b1 * b1);
            let q2 = div(rh0 * rh0, b2 * b2);
            let a1 = div(v * (1.0 - b1 * b1), d);
            let a2 = div(v * (1.0 - b2 * b2), d);
            // θ-free parts
            if 1.0 + (1.0 - q2) * p - a1 < -tol || 1.0 + (1.0 - q1) * p - a2 < -tol {
                return false;
            }
            let need5 = a1.max(1.0) * a2.max(1.0) - 1.0;
            if (2.0 - q1 - q2) * p - need5 < -tol {
                return false;
            }
            // x = θ1², θ2² = ρ̂²/x
            let x = if rh == 0.0 {
                0.0
            } else {
                if p == 0.0 {
                    // θ drops out entirely
                    return 1.0 - a1 >= -tol && 1.0 - a2 >= -tol && -need5 >= -tol;
                }
                let u6 = 1.0 - (a1 - 1.0) / p;
                let u7 = 1.0 - (a2 - 1.0) / p;
                if u7 <= 0.0 {
                    return false;
                }
                let lo = (rh * rh).max(rh * rh / u7);
                let hi = u6.min(1.0);
                if lo > hi {
                    // allow rounding slack on the interval ends
                    let slack = 1e-12 * (1.0 + p);
                    if lo - hi > slack {
                        return false;
                    }
                    hi
                } else {
                    rh.clamp(lo, hi)
                }
            };
            let y = if rh == 0.0 { 0.0 } else { rh * rh / x };
            let c5 = (2.0 - x - y) * p - need5;
            let c6 = 1.0 + (1.0 - x) * p - a1;
            let c7 = 1.0 + (1.0 - y) * p - a2;
            c5 >= -tol && c6 >= -tol && c7 >= -tol
        })
    };
    Ok((0..grid.rho_hat * grid.rho_hat0)
        .into_par_iter()
        .any(|k| passes(k / grid.rho_hat0, k % grid.rho_hat0)))
}
