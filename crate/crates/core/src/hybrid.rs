//! Gaussian hybrid-coding inner bound and the uncoded scheme it contains.
//!
//! Auxiliaries follow `V0 = S0 + W0`, `V_k = F_k (S0, S_k, V0)ᵀ + W_k`, and
//! the channel inputs are `X_k = G_k (S0, S_k, V0, V_k)ᵀ`. Joint statistics
//! of `(S0, S1, S2, V0, V1, V2, Y)` are obtained from a 7×7 transfer matrix
//! applied to `(S0, S1, S2, W0, W1, W2, Z)`. Here `S1`, `S2` are the scalar
//! private coordinates `S1p`, `S2p`.
//!
//! An auxiliary whose noise variance is `+inf` is switched off: it is a
//! constant, every coefficient that reads it is ignored, and it is dropped
//! from the decoder's observations and from all information terms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianProblem, LabeledCovariance};
use crate::search::PatternSearch;

pub const JOINT_LABELS: [&str; 7] = ["S0", "S1", "S2", "V0", "V1", "V2", "Y"];

/// Strict-inequality slack for the information constraints, in nats.
pub const MARGIN_SLACK: f64 = 1e-9;
/// Information below this is treated as zero when deciding whether an
/// auxiliary carries a message.
pub const INACTIVE_INFO: f64 = 1e-12;

fn power_ok(power: f64, limit: f64) -> bool {
    power <= limit * (1.0 + 1e-12) + 1e-12
}

mod variance_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "off" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad variance `{t}`"))),
        }
    }
}

/// Free variables of the hybrid scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub f1: [f64; 3],
    pub f2: [f64; 3],
    pub g1: [f64; 4],
    pub g2: [f64; 4],
    #[serde(with = "variance_serde")]
    pub omega0: f64,
    #[serde(with = "variance_serde")]
    pub omega1: f64,
    #[serde(with = "variance_serde")]
    pub omega2: f64,
}

pub const PARAM_DIM: usize = 17;

impl HybridParams {
    /// All coefficients zero, unit auxiliary noise.
    pub fn zero() -> Self {
        Self { f1: [0.0; 3], f2: [0.0; 3], g1: [0.0; 4], g2: [0.0; 4], omega0: 1.0, omega1: 1.0, omega2: 1.0 }
    }

    pub fn omegas(&self) -> [f64; 3] {
        [self.omega0, self.omega1, self.omega2]
    }

    /// Whether auxiliary `V_k` (k = 0, 1, 2) exists.
    pub fn aux_enabled(&self, k: usize) -> bool {
        self.omegas()[k].is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = self.f1.iter().chain(&self.f2).chain(&self.g1).chain(&self.g2);
        if coeffs.clone().any(|c| !c.is_finite()) {
            return Err(Error::ParameterOverflow("non-finite coefficient".into()));
        }
        for w in self.omegas() {
            if w.is_nan() || w < 0.0 {
                return Err(Error::ParameterOverflow(format!("noise variance {w} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Copy with every coefficient that reads a switched-off auxiliary set to zero.
    pub fn effective(&self) -> Self {
        let mut p = *self;
        if !self.aux_enabled(0) {
            p.f1[2] = 0.0;
            p.f2[2] = 0.0;
            p.g1[2] = 0.0;
            p.g2[2] = 0.0;
        }
        if !self.aux_enabled(1) {
            p.f1 = [0.0; 3];
            p.g1[3] = 0.0;
        }
        if !self.aux_enabled(2) {
            p.f2 = [0.0; 3];
            p.g2[3] = 0.0;
        }
        p
    }

    /// Drops every use of `S0` and `V0`; the result depends on the sources
    /// only through `(S1p, S2p)`.
    pub fn without_common_part(&self) -> Self {
        let mut p = *self;
        p.omega0 = f64::INFINITY;
        for f in [&mut p.f1, &mut p.f2] {
            f[0] = 0.0;
            f[2] = 0.0;
        }
        for g in [&mut p.g1, &mut p.g2] {
            g[0] = 0.0;
            g[2] = 0.0;
        }
        p
    }

    /// Reparametrizes `V_k ↦ c V_k` for k = 1, 2 (same scheme, rescaled auxiliary).
    pub fn rescale_aux(&self, k: usize, c: f64) -> Self {
        let mut p = *self;
        match k {
            1 => {
                p.f1.iter_mut().for_each(|f| *f *= c);
                p.omega1 *= c * c;
                p.g1[3] /= c;
            }
            2 => {
                p.f2.iter_mut().for_each(|f| *f *= c);
                p.omega2 *= c * c;
                p.g2[3] /= c;
            }
            _ => {}
        }
        p
    }

    fn to_vector(self) -> [f64; PARAM_DIM] {
        let mut v = [0.0; PARAM_DIM];
        v[0..3].copy_from_slice(&self.f1);
        v[3..6].copy_from_slice(&self.f2);
        v[6..10].copy_from_slice(&self.g1);
        v[10..14].copy_from_slice(&self.g2);
        for (i, w) in self.omegas().into_iter().enumerate() {
            v[14 + i] = if w.is_finite() { w.max(1e-300).ln() } else { 0.0 };
        }
        v
    }

    fn from_vector(v: &[f64], template: &Self) -> Self {
        let mut p = *template;
        p.f1.copy_from_slice(&v[0..3]);
        p.f2.copy_from_slice(&v[3..6]);
        p.g1.copy_from_slice(&v[6..10]);
        p.g2.copy_from_slice(&v[10..14]);
        let w = |i: usize, old: f64| if old.is_finite() { v[14 + i].clamp(-40.0, 40.0).exp() } else { old };
        p.omega0 = w(0, template.omega0);
        p.omega1 = w(1, template.omega1);
        p.omega2 = w(2, template.omega2);
        p
    }
}

/// The 7×7 matrix mapping `(S0,S1,S2,W0,W1,W2,Z)` to `(S0,S1,S2,V0,V1,V2,Y)`.
pub fn assemble_transfer_matrix(params: &HybridParams) -> DMatrix<f64> {
    let (f1, f2, g1, g2) = (params.f1, params.f2, params.g1, params.g2);
    let a71 = g1[0] + g2[0] + g1[2] + g2[2] + g1[3] * (f1[0] + f1[2]) + g2[3] * (f2[0] + f2[2]);
    #[rustfmt::skip]
    let rows = [
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        f1[0] + f1[2], f1[1], 0.0, f1[2], 1.0, 0.0, 0.0,
        f2[0] + f2[2], 0.0, f2[1], f2[2], 0.0, 1.0, 0.0,
        a71,
        g1[1] + g1[3] * f1[1],
        g2[1] + g2[3] * f2[1],
        g1[2] + g1[3] * f1[2] + g2[2] + g2[3] * f2[2],
        g1[3],
        g2[3],
        1.0,
    ];
    DMatrix::from_row_slice(7, 7, &rows)
}

/// Covariance of `(S0,S1,S2,V0,V1,V2,Y)`; switched-off auxiliaries have zero rows.
pub fn hybrid_joint_covariance(params: &HybridParams, problem: &GaussianProblem) -> Result<LabeledCovariance> {
    params.validate()?;
    let eff = params.effective();
    let mut a = assemble_transfer_matrix(&eff);
    let source = gaussian::build_source_covariance(problem)?;
    let mut base = DMatrix::zeros(7, 7);
    base.view_mut((0, 0), (3, 3)).copy_from(source.matrix());
    for k in 0..3 {
        if params.aux_enabled(k) {
            base[(3 + k, 3 + k)] = params.omegas()[k];
        } else {
            a.row_mut(3 + k).fill(0.0);
        }
    }
    base[(6, 6)] = 1.0;
    let cov = &a * base * a.transpose();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::ParameterOverflow("joint covariance has non-finite entries".into()));
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    LabeledCovariance::new_unchecked(JOINT_LABELS.to_vec(), cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridEvaluation {
    pub d1: f64,
    pub d2: f64,
    pub power1: f64,
    pub power2: f64,
    /// Right minus left side of the four information constraints, in nats.
    /// `None` marks a constraint with no message to deliver (every auxiliary
    /// it concerns is switched off or independent of the sources).
    pub margins: [Option<f64>; 4],
    pub feasible: bool,
    pub pseudo_inverse: bool,
}

impl HybridEvaluation {
    /// Smallest non-vacuous margin, `+inf` if all are vacuous.
    pub fn margin_min(&self) -> f64 {
        self.margins.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn info_feasible(&self) -> bool {
        self.margins.iter().flatten().all(|m| *m > MARGIN_SLACK)
    }
}

fn active_aux(params: &HybridParams) -> Vec<&'static str> {
    ["V0", "V1", "V2"]
        .into_iter()
        .enumerate()
        .filter(|(k, _)| params.aux_enabled(*k))
        .map(|(_, l)| l)
        .collect()
}

fn only_active<'a>(labels: &[&'a str], active: &[&str]) -> Vec<&'a str> {
    labels.iter().copied().filter(|l| !l.starts_with('V') || active.contains(l)).collect()
}

fn info_margin(cov: &LabeledCovariance, msgs: &[&str], cond: &[&str], sources: &[&str]) -> Result<f64> {
    let lhs = gaussian::gaussian_mutual_information(cov, msgs, sources, cond)?;
    let rhs = gaussian::gaussian_mutual_information(cov, msgs, &["Y"], cond)?;
    // nothing can tell more about Y than ½ log var(Y) (unit noise); a larger
    // value is round-off, and such a point is not certified
    let cap = 0.5 * cov.get("Y", "Y")?.max(1.0).ln();
    if lhs.is_infinite() || !rhs.is_finite() || rhs > cap + 1e-9 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(rhs - lhs)
}

pub fn evaluate_hybrid(params: &HybridParams, problem: &GaussianProblem) -> Result<HybridEvaluation> {
    let cov = hybrid_joint_covariance(params, problem)?;
    let eff = params.effective();

    let m = cov.matrix();
    let quad = |g: &[f64; 4], idx: [usize; 4]| -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                s += g[i] * m[(idx[i], idx[j])] * g[j];
            }
        }
        s.max(0.0)
    };
    let power1 = quad(&eff.g1, [0, 1, 3, 4]);
    let power2 = quad(&eff.g2, [0, 2, 3, 5]);

    let v0: Vec<&str> = if params.aux_enabled(0) { vec!["V0"] } else { vec![] };
    let carries = |k: usize| -> Result<bool> {
        if !params.aux_enabled(k) {
            return Ok(false);
        }
        let info = match k {
            0 => gaussian::gaussian_mutual_information(&cov, &["V0"], &["S0"], &[])?,
            1 => gaussian::gaussian_mutual_information(&cov, &["V1"], &["S0", "S1"], &v0)?,
            _ => gaussian::gaussian_mutual_information(&cov, &["V2"], &["S0", "S2"], &v0)?,
        };
        Ok(info > INACTIVE_INFO)
    };
    let carrying = [carries(0)?, carries(1)?, carries(2)?];
    // an auxiliary that says nothing about its source is treated as absent
    let active: Vec<&str> = ["V0", "V1", "V2"].into_iter().zip(carrying).filter(|(_, c)| *c).map(|(l, _)| l).collect();
    let mut observed = active.clone();
    observed.push("Y");
    let e1 = gaussian::mmse_reduce(&cov, "S1", &observed)?;
    let e2 = gaussian::mmse_reduce(&cov, "S2", &observed)?;

    let constraint = |msgs: &[&str], cond: &[&str], sources: &[&str], who: &[usize]| -> Result<Option<f64>> {
        if !who.iter().any(|&k| carrying[k]) {
            return Ok(None);
        }
        let msgs = only_active(msgs, &active);
        let cond = only_active(cond, &active);
        Ok(Some(info_margin(&cov, &msgs, &cond, sources)?))
    };
    let margins = [
        constraint(&["V1"], &["V0", "V2"], &["S0", "S1"], &[1])?,
        constraint(&["V2"], &["V0", "V1"], &["S0", "S2"], &[2])?,
        constraint(&["V1", "V2"], &["V0"], &["S0", "S1", "S2"], &[1, 2])?,
        constraint(&["V0", "V1", "V2"], &[], &["S0", "S1", "S2"], &[0, 1, 2])?,
    ];
    let mut eval = HybridEvaluation {
        d1: e1.error_variance,
        d2: e2.error_variance,
        power1,
        power2,
        margins,
        feasible: false,
        pseudo_inverse: e1.pseudo_inverse || e2.pseudo_inverse,
    };
    eval.feasible = eval.info_feasible()
        && power_ok(power1, problem.p1)
        && power_ok(power2, problem.p2)
        && eval.d1.is_finite()
        && eval.d2.is_finite();
    Ok(eval)
}

/// The four constraints written as determinant ratios exactly as stated
/// (sources enter as `(S0, S_k)`), evaluated with `log_det_ratio` over the
/// enabled auxiliaries. Vacuous constraints are still evaluated here.
pub fn determinant_form_margins(params: &HybridParams, problem: &GaussianProblem) -> Result<[f64; 4]> {
    determinant_margins(params, problem, true)
}

/// Same as [`determinant_form_margins`] with the private sources alone,
/// `Σ_(V0,V2,S1)` in place of `Σ_(V0,V2,S0,S1)`.
pub fn proof_form_margins(params: &HybridParams, problem: &GaussianProblem) -> Result<[f64; 4]> {
    determinant_margins(params, problem, false)
}

fn determinant_margins(params: &HybridParams, problem: &GaussianProblem, with_s0: bool) -> Result<[f64; 4]> {
    let cov = hybrid_joint_covariance(params, problem)?;
    let active = active_aux(params);
    let s0: &[&'static str] = if with_s0 { &["S0"] } else { &[] };
    let cat = |parts: &[&[&'static str]]| -> Vec<&'static str> { only_active(&parts.concat(), &active) };
    let one = |num_y: Vec<&str>, den_y: Vec<&str>, num_s: Vec<&str>, den_s: Vec<&str>| -> Result<f64> {
        let r = gaussian::log_det_ratio(&cov, &num_y, &den_y)?.value;
        let l = gaussian::log_det_ratio(&cov, &num_s, &den_s)?.value;
        Ok(r - l)
    };
    Ok([
        one(
            cat(&[&["V0", "V2", "Y"]]),
            cat(&[&["V0", "V2", "V1", "Y"]]),
            cat(&[&["V0", "V2"], s0, &["S1"]]),
            cat(&[&["V0", "V2", "V1"], s0, &["S1"]]),
        )?,
        one(
            cat(&[&["V0", "V1", "Y"]]),
            cat(&[&["V0", "V2", "V1", "Y"]]),
            cat(&[&["V0", "V1"], s0, &["S2"]]),
            cat(&[&["V0", "V2", "V1"], s0, &["S2"]]),
        )?,
        one(
            cat(&[&["V0", "Y"]]),
            cat(&[&["V0", "V2", "V1", "Y"]]),
            cat(&[&["V0"], s0, &["S1", "S2"]]),
            cat(&[&["V0", "V2", "V1"], s0, &["S1", "S2"]]),
        )?,
        one(
            vec!["Y"],
            cat(&[&["V0", "V2", "V1", "Y"]]),
            cat(&[s0, &["S1", "S2"]]),
            cat(&[&["V0", "V2", "V1"], s0, &["S1", "S2"]]),
        )?,
    ])
}

/// Gains of the uncoded scheme `X1 = g10 S0 + g11 U1`, `X2 = g20 S0 + g22 U2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncodedGains {
    pub g10: f64,
    pub g11: f64,
    pub g20: f64,
    pub g22: f64,
}

impl UncodedGains {
    pub fn powers(&self) -> (f64, f64) {
        (self.g10 * self.g10 + self.g11 * self.g11, self.g20 * self.g20 + self.g22 * self.g22)
    }

    pub fn satisfies(&self, problem: &GaussianProblem) -> bool {
        let (a, b) = self.powers();
        a <= problem.p1 + 1e-12 && b <= problem.p2 + 1e-12
    }

    /// Gains that transmit `X_k = a_k S0 + b_k S_kp`.
    pub fn from_source_coefficients(problem: &GaussianProblem, a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        let s1 = (1.0 - problem.rho01 * problem.rho01).max(0.0).sqrt();
        let s2 = (1.0 - problem.rho02 * problem.rho02).max(0.0).sqrt();
        Self { g10: a1 + b1 * problem.rho01, g11: b1 * s1, g20: a2 + b2 * problem.rho02, g22: b2 * s2 }
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Closed-form MMSE distortions of the uncoded scheme.
///
/// When `ρ0k = ±1` the private innovation `U_k` is undefined; it is taken
/// independent of everything else (ratios `0/0` evaluate to 0).
pub fn uncoded_distortions(gains: &UncodedGains, problem: &GaussianProblem) -> (f64, f64) {
    let GaussianProblem { rho01, rho02, rho12, .. } = *problem;
    let UncodedGains { g10, g11, g20, g22 } = *gains;
    let s1 = (1.0 - rho01 * rho01).max(0.0).sqrt();
    let s2 = (1.0 - rho02 * rho02).max(0.0).sqrt();
    let c = rho12 - rho01 * rho02;
    let common = g10 + g20;
    let var_y = common * common + g11 * g11 + g22 * g22 + 2.0 * g11 * g22 * ratio_or_zero(c, s1 * s2) + 1.0;
    let cov1 = rho01 * common + g11 * s1 + g22 * ratio_or_zero(c, s2);
    let cov2 = rho02 * common + g22 * s2 + g11 * ratio_or_zero(c, s1);
    ((1.0 - cov1 * cov1 / var_y).max(0.0), (1.0 - cov2 * cov2 / var_y).max(0.0))
}

/// Decoder weights `Ŝ_k = c_k Y` of the uncoded scheme.
pub fn uncoded_decoder(gains: &UncodedGains, problem: &GaussianProblem) -> (f64, f64) {
    let GaussianProblem { rho01, rho02, rho12, .. } = *problem;
    let UncodedGains { g10, g11, g20, g22 } = *gains;
    let s1 = (1.0 - rho01 * rho01).max(0.0).sqrt();
    let s2 = (1.0 - rho02 * rho02).max(0.0).sqrt();
    let c = rho12 - rho01 * rho02;
    let common = g10 + g20;
    let var_y = common * common + g11 * g11 + g22 * g22 + 2.0 * g11 * g22 * ratio_or_zero(c, s1 * s2) + 1.0;
    let cov1 = rho01 * common + g11 * s1 + g22 * ratio_or_zero(c, s2);
    let cov2 = rho02 * common + g22 * s2 + g11 * ratio_or_zero(c, s1);
    (cov1 / var_y, cov2 / var_y)
}

/// Writes the uncoded scheme as a hybrid scheme: no `V0`, inert `V1`, `V2`,
/// and `G_k` re-expressed in the `(S0, S_k)` basis.
pub fn embed_uncoded(gains: &UncodedGains, problem: &GaussianProblem) -> Result<HybridParams> {
    let s1 = (1.0 - problem.rho01 * problem.rho01).max(0.0).sqrt();
    let s2 = (1.0 - problem.rho02 * problem.rho02).max(0.0).sqrt();
    let row = |g0: f64, gk: f64, rho: f64, s: f64, k: usize| -> Result<[f64; 4]> {
        if s == 0.0 {
            if gk != 0.0 {
                return Err(Error::DegenerateBasis(format!("rho0{k} = ±1 leaves U{k} undefined")));
            }
            return Ok([g0, 0.0, 0.0, 0.0]);
        }
        Ok([g0 - gk * rho / s, gk / s, 0.0, 0.0])
    };
    Ok(HybridParams {
        f1: [0.0; 3],
        f2: [0.0; 3],
        g1: row(gains.g10, gains.g11, problem.rho01, s1, 1)?,
        g2: row(gains.g20, gains.g22, problem.rho02, s2, 2)?,
        omega0: f64::INFINITY,
        omega1: 1.0,
        omega2: 1.0,
    })
}

/// How a distortion pair is reduced to a single objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scalarization {
    /// `max(d1, d2)`.
    #[default]
    MaxDistortion,
    /// `d1 + λ d2`.
    Weighted { lambda: f64 },
    /// `max(d1 − t1, d2 − t2)`; non-positive means both targets are met.
    Targets { d1: f64, d2: f64 },
}

impl Scalarization {
    pub fn apply(&self, d1: f64, d2: f64) -> f64 {
        match *self {
            Scalarization::MaxDistortion => d1.max(d2),
            Scalarization::Weighted { lambda } => d1 + lambda * d2,
            Scalarization::Targets { d1: t1, d2: t2 } => (d1 - t1).max(d2 - t2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncodedOptimum {
    pub gains: UncodedGains,
    pub d1: f64,
    pub d2: f64,
    pub objective: f64,
}

pub fn optimize_uncoded(problem: &GaussianProblem, resolution: usize) -> Result<UncodedOptimum> {
    optimize_uncoded_with(problem, resolution, Scalarization::MaxDistortion, &[])
}

/// Grid over the two power circles followed by pattern-search refinement of
/// (angle, radius) pairs. `extra_starts` join the refinement stage.
pub fn optimize_uncoded_with(
    problem: &GaussianProblem,
    resolution: usize,
    scalarization: Scalarization,
    extra_starts: &[UncodedGains],
) -> Result<UncodedOptimum> {
    problem.validate()?;
    if resolution < 2 {
        return Err(Error::InvalidInput("uncoded grid resolution must be at least 2".into()));
    }
    let (r1, r2) = (problem.p1.sqrt(), problem.p2.sqrt());
    let gains_of = |x: &[f64]| -> UncodedGains {
        let a1 = r1 * x[2].clamp(0.0, 1.0);
        let a2 = r2 * x[3].clamp(0.0, 1.0);
        UncodedGains { g10: a1 * x[0].cos(), g11: a1 * x[0].sin(), g20: a2 * x[1].cos(), g22: a2 * x[1].sin() }
    };
    let objective = |x: &[f64]| -> f64 {
        let (d1, d2) = uncoded_distortions(&gains_of(x), problem);
        scalarization.apply(d1, d2)
    };
    let tau = std::f64::consts::TAU;
    let mut grid: Vec<(f64, Vec<f64>)> = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = vec![tau * i as f64 / resolution as f64, tau * j as f64 / resolution as f64, 1.0, 1.0];
            grid.push((objective(&x), x));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut starts: Vec<Vec<f64>> = grid.into_iter().take(4).map(|(_, x)| x).collect();
    for g in extra_starts {
        let a1 = (g.g10 * g.g10 + g.g11 * g.g11).sqrt();
        let a2 = (g.g20 * g.g20 + g.g22 * g.g22).sqrt();
        starts.push(vec![
            g.g11.atan2(g.g10),
            g.g22.atan2(g.g20),
            if r1 > 0.0 { (a1 / r1).min(1.0) } else { 0.0 },
            if r2 > 0.0 { (a2 / r2).min(1.0) } else { 0.0 },
        ]);
    }
    let step = tau / resolution as f64;
    let search = PatternSearch { steps: vec![step, step, 0.25, 0.25], shrink_limit: 1e-9, budget: 20_000, pairs: true };
    let mut best: Option<(f64, UncodedGains)> = None;
    for x0 in &starts {
        // start values count too, so an exact extra start is never lost
        for x in [x0.clone(), search.minimize(x0, objective).x] {
            let g = gains_of(&x);
            let v = objective(&x);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, g));
            }
        }
    }
    let (objective, gains) = best.expect("at least one start");
    let (d1, d2) = uncoded_distortions(&gains, problem);
    Ok(UncodedOptimum { gains, d1, d2, objective })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub d1: f64,
    pub d2: f64,
    pub std_err1: f64,
    pub std_err2: f64,
    pub n: usize,
}

/// Sample-level simulation of the uncoded scheme with the closed-form
/// linear MMSE decoders.
pub fn simulate_uncoded(problem: &GaussianProblem, gains: &UncodedGains, n: usize, seed: u64) -> Result<SimulationResult> {
    let dec = gaussian::conditional_rho(problem)?;
    let src = gaussian::sample_sources(problem, &dec, n, seed)?;
    let (c1, c2) = uncoded_decoder(gains, problem);
    // channel noise uses an independent stream derived from the seed
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut e1 = Vec::with_capacity(n);
    let mut e2 = Vec::with_capacity(n);
    for i in 0..n {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let x1 = gains.g10 * src.s0[i] + gains.g11 * src.u1[i];
        let x2 = gains.g20 * src.s0[i] + gains.g22 * src.u2[i];
        let y = x1 + x2 + z;
        e1.push((src.s1p[i] - c1 * y).powi(2));
        e2.push((src.s2p[i] - c2 * y).powi(2));
    }
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        (mean, (var / n as f64).sqrt())
    };
    let (d1, std_err1) = stats(&e1);
    let (d2, std_err2) = stats(&e2);
    Ok(SimulationResult { d1, d2, std_err1, std_err2, n })
}

/// Settings for [`optimize_hybrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridSearchConfig {
    /// Total number of scheme evaluations across all starts.
    pub budget: usize,
    /// Number of random starts in addition to the structured ones.
    pub random_starts: usize,
    pub seed: u64,
    pub scalarization: Scalarization,
    /// When false, `S0` and `V0` are never used by the scheme.
    pub use_common_part: bool,
    /// Grid resolution of the uncoded optimization that seeds the search.
    pub uncoded_resolution: usize,
}

impl Default for HybridSearchConfig {
    fn default() -> Self {
        Self {
            budget: 40_000,
            random_starts: 6,
            seed: 1,
            scalarization: Scalarization::MaxDistortion,
            use_common_part: true,
            uncoded_resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridOptimum {
    pub params: HybridParams,
    pub evaluation: Option<HybridEvaluation>,
    pub feasible: bool,
    pub objective: f64,
    pub evaluations: usize,
    pub diagnostics: Vec<String>,
}

/// Rescales `G_k` so that `power_k ≤ P_k`.
pub fn project_power(params: &HybridParams, problem: &GaussianProblem) -> Result<HybridParams> {
    let eval = evaluate_powers(params, problem)?;
    let mut p = *params;
    for (g, power, limit) in [(&mut p.g1, eval.0, problem.p1), (&mut p.g2, eval.1, problem.p2)] {
        if power > limit {
            let c = if limit > 0.0 { (limit * (1.0 - 1e-12) / power).sqrt() } else { 0.0 };
            g.iter_mut().for_each(|x| *x *= c);
        }
    }
    Ok(p)
}

fn evaluate_powers(params: &HybridParams, problem: &GaussianProblem) -> Result<(f64, f64)> {
    let cov = hybrid_joint_covariance(params, problem)?;
    let eff = params.effective();
    let m = cov.matrix();
    let quad = |g: &[f64; 4], idx: [usize; 4]| -> f64 {
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                s += g[i] * m[(idx[i], idx[j])] * g[j];
            }
        }
        s.max(0.0)
    };
    Ok((quad(&eff.g1, [0, 1, 3, 4]), quad(&eff.g2, [0, 2, 3, 5])))
}

const INFEASIBLE_BASE: f64 = 1e3;

fn penalized(eval: &HybridEvaluation, problem: &GaussianProblem, scalarization: &Scalarization) -> f64 {
    if eval.feasible {
        return scalarization.apply(eval.d1, eval.d2);
    }
    let mut violation = 0.0;
    for m in eval.margins.iter().flatten() {
        if !(*m > MARGIN_SLACK) {
            violation += if m.is_finite() { (2.0 * MARGIN_SLACK - m).min(1e3) } else { 1e3 };
        }
    }
    violation += (eval.power1 - problem.p1).max(0.0) + (eval.power2 - problem.p2).max(0.0);
    INFEASIBLE_BASE + violation + scalarization.apply(eval.d1, eval.d2)
}

fn frozen_mask(template: &HybridParams, use_common: bool) -> [bool; PARAM_DIM] {
    let mut frozen = [false; PARAM_DIM];
    let v0 = template.aux_enabled(0) && use_common;
    if !v0 {
        for i in [2, 5, 8, 12, 14] {
            frozen[i] = true;
        }
    }
    if !use_common {
        for i in [0, 3, 6, 10] {
            frozen[i] = true;
        }
    }
    if !template.aux_enabled(1) {
        for i in [0, 1, 2, 9, 15] {
            frozen[i] = true;
        }
    }
    if !template.aux_enabled(2) {
        for i in [3, 4, 5, 13, 16] {
            frozen[i] = true;
        }
    }
    frozen
}

const MAX_ROUNDS: usize = 64;
const MIN_START_BUDGET: usize = 200;

/// Gaussian kick around `params` on the coordinates the search may move.
fn perturb(params: &HybridParams, problem: &GaussianProblem, use_common: bool, rng: &mut ChaCha8Rng) -> Result<HybridParams> {
    let frozen = frozen_mask(params, use_common);
    let gscale = problem.p1.max(problem.p2).sqrt().max(0.1);
    let mut v = params.to_vector();
    for (i, x) in v.iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *x += z * match i {
            0..=5 => 0.3,
            6..=13 => 0.3 * gscale,
            _ => 0.7,
        };
    }
    project_power(&HybridParams::from_vector(&v, params), problem)
}

struct Candidate {
    score: f64,
    params: HybridParams,
    evaluations: usize,
}

fn run_start(
    start: HybridParams,
    problem: &GaussianProblem,
    cfg: &HybridSearchConfig,
    budget: usize,
) -> Result<Candidate> {
    let start = if cfg.use_common_part { start } else { start.without_common_part() };
    let frozen = frozen_mask(&start, cfg.use_common_part);
    let gscale = problem.p1.max(problem.p2).sqrt().max(0.1);
    let mut steps = vec![0.0; PARAM_DIM];
    for (i, s) in steps.iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        *s = match i {
            0..=5 => 0.25,
            6..=13 => 0.25 * gscale,
            _ => 0.5,
        };
    }
    let objective = |v: &[f64]| -> f64 {
        let p = HybridParams::from_vector(v, &start);
        let Ok(p) = project_power(&p, problem) else { return f64::INFINITY };
        match evaluate_hybrid(&p, problem) {
            Ok(e) => penalized(&e, problem, &cfg.scalarization),
            Err(_) => f64::INFINITY,
        }
    };
    let search = PatternSearch { steps, shrink_limit: 1e-6, budget, pairs: false };
    let out = search.minimize(&start.to_vector(), objective);
    let params = project_power(&HybridParams::from_vector(&out.x, &start), problem)?;
    Ok(Candidate { score: out.value, params, evaluations: out.evaluations })
}

/// Multi-start pattern search over the hybrid parameters.
///
/// Structured starts come first: the embedded uncoded optimum, the same
/// point with a common digital layer, then `extra_starts`, then seeded
/// random draws. Ties are broken by start order, so the result does not
/// depend on thread scheduling.
pub fn optimize_hybrid(problem: &GaussianProblem, cfg: &HybridSearchConfig) -> Result<HybridOptimum> {
    optimize_hybrid_with_starts(problem, cfg, &[])
}

pub fn optimize_hybrid_with_starts(
    problem: &GaussianProblem,
    cfg: &HybridSearchConfig,
    extra_starts: &[HybridParams],
) -> Result<HybridOptimum> {
    problem.validate()?;
    let mut diagnostics = Vec::new();
    let mut starts: Vec<HybridParams> = Vec::new();
    let uncoded = optimize_uncoded_with(problem, cfg.uncoded_resolution.max(2), cfg.scalarization, &[])?;
    let mut gains = uncoded.gains;
    // with ρ0k = ±1 the private coordinate is undefined and its gain only wastes power
    if problem.rho01.abs() >= 1.0 {
        gains.g11 = 0.0;
    }
    if problem.rho02.abs() >= 1.0 {
        gains.g22 = 0.0;
    }
    match embed_uncoded(&gains, problem) {
        Ok(p) => {
            starts.push(p);
            let mut layered = p;
            if cfg.use_common_part {
                layered.omega0 = 1.0;
                layered.g1[2] = 0.3 * problem.p1.sqrt();
                layered.g2[2] = 0.3 * problem.p2.sqrt();
            }
            layered.f1[1] = 1.0;
            layered.f2[1] = 1.0;
            layered.g1[3] = 0.3 * problem.p1.sqrt();
            layered.g2[3] = 0.3 * problem.p2.sqrt();
            starts.push(project_power(&layered, problem)?);
        }
        Err(e) => diagnostics.push(format!("uncoded start skipped: {e}")),
    }
    starts.extend_from_slice(extra_starts);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gmax = problem.p1.max(problem.p2).sqrt();
    let random_start = |rng: &mut ChaCha8Rng| -> Result<HybridParams> {
        let mut v = [0.0; PARAM_DIM];
        for (i, x) in v.iter_mut().enumerate() {
            *x = match i {
                0..=5 => rng.random_range(-1.0..1.0),
                6..=13 => rng.random_range(-1.0..1.0) * gmax,
                _ => rng.random_range(-3.0..3.0),
            };
        }
        project_power(&HybridParams::from_vector(&v, &HybridParams::zero()), problem)
    };
    for _ in 0..cfg.random_starts {
        starts.push(random_start(&mut rng)?);
    }

    if cfg.budget == 0 || starts.is_empty() {
        diagnostics.push("no evaluations performed".into());
        return Ok(HybridOptimum {
            params: HybridParams::zero(),
            evaluation: None,
            feasible: false,
            objective: f64::INFINITY,
            evaluations: 0,
            diagnostics,
        });
    }

    // first round: structured starts (the embedded uncoded one gets a double
    // share) and the random starts, each with a slice of half the budget
    let shares: Vec<usize> = (0..starts.len()).map(|i| if i == 0 { 2 } else { 1 }).collect();
    let total: usize = shares.iter().sum();
    let first = (cfg.budget / 2).max(1);
    let budgets: Vec<usize> = shares.iter().map(|s| (first * s / total).max(1)).collect();
    let mut best: Option<(usize, Candidate)> = None;
    let mut evaluations = 0;
    let mut index = 0;
    let mut absorb = |results: Vec<Result<Candidate>>, best: &mut Option<(usize, Candidate)>, evaluations: &mut usize| {
        for r in results {
            match r {
                Ok(c) => {
                    *evaluations += c.evaluations;
                    if best.as_ref().is_none_or(|(_, b)| c.score < b.score) {
                        *best = Some((index, c));
                    }
                }
                Err(e) => diagnostics.push(format!("start {index} failed: {e}")),
            }
            index += 1;
        }
    };
    let results: Vec<Result<Candidate>> =
        starts.par_iter().zip(budgets.par_iter()).map(|(s, b)| run_start(*s, problem, cfg, *b)).collect();
    absorb(results, &mut best, &mut evaluations);

    // later rounds spend what is left on fresh draws and perturbations of
    // the incumbent, one seeded batch at a time
    let batch = cfg.random_starts.max(2);
    for _ in 0..MAX_ROUNDS {
        let remaining = cfg.budget.saturating_sub(evaluations);
        let per_start = remaining / batch;
        if per_start < MIN_START_BUDGET {
            break;
        }
        let per_start = per_start.min(cfg.budget / 4).max(MIN_START_BUDGET);
        let incumbent = best.as_ref().map(|(_, c)| c.params);
        let mut round = Vec::with_capacity(batch);
        for k in 0..batch {
            match incumbent {
                Some(p) if k % 2 == 1 => round.push(perturb(&p, problem, cfg.use_common_part, &mut rng)?),
                _ => round.push(random_start(&mut rng)?),
            }
        }
        let results: Vec<Result<Candidate>> = round.par_iter().map(|s| run_start(*s, problem, cfg, per_start)).collect();
        absorb(results, &mut best, &mut evaluations);
    }
    let Some((index, cand)) = best else {
        return Err(Error::InvalidInput("every optimizer start failed".into()));
    };
    // re-verify the reported point without projection
    let evaluation = evaluate_hybrid(&cand.params, problem)?;
    if !evaluation.feasible {
        diagnostics.push(format!(
            "no feasible point found; best infeasible start {index}, margins {:?}, powers ({}, {})",
            evaluation.margins, evaluation.power1, evaluation.power2
        ));
    }
    Ok(HybridOptimum {
        params: cand.params,
        feasible: evaluation.feasible,
        objective: cfg.scalarization.apply(evaluation.d1, evaluation.d2),
        evaluation: Some(evaluation),
        evaluations,
        diagnostics,
    })
}
