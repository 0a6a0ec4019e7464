//! Jointly Gaussian sources with a common component, sent over the
//! additive MAC `Y = X1 + X2 + Z` with unit-variance noise.
//!
//! Sources are normalized to unit variance; `S1p`/`S2p` denote the private
//! coordinates that carry the quadratic distortion.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues above this are accepted as PSD (and clamped by downstream users).
pub const PSD_TOL: f64 = 1e-9;
/// Stricter bound used when validating the source correlations themselves.
pub const SOURCE_PSD_TOL: f64 = 1e-10;
/// Symmetry tolerance for labeled covariances.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub const SOURCE_LABELS: [&str; 3] = ["S0", "S1p", "S2p"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProblem {
    pub rho01: f64,
    pub rho02: f64,
    pub rho12: f64,
    pub p1: f64,
    pub p2: f64,
}

impl GaussianProblem {
    pub fn new(rho01: f64, rho02: f64, rho12: f64, p1: f64, p2: f64) -> Result<Self> {
        let problem = Self { rho01, rho02, rho12, p1, p2 };
        problem.validate()?;
        Ok(problem)
    }

    /// Symmetric powers `P1 = P2 = p`.
    pub fn symmetric(rho01: f64, rho02: f64, rho12: f64, p: f64) -> Result<Self> {
        Self::new(rho01, rho02, rho12, p, p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("rho01", self.rho01), ("rho02", self.rho02), ("rho12", self.rho12)] {
            if !r.is_finite() || r.abs() > 1.0 {
                return Err(Error::InvalidProblem(format!("{name} = {r} is outside [-1, 1]")));
            }
        }
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidProblem(format!("{name} = {p} must be finite and >= 0")));
            }
        }
        let min_eig = linalg::min_eigenvalue(&self.source_matrix());
        if min_eig < -SOURCE_PSD_TOL {
            return Err(Error::NotPsd { eigenvalue: min_eig });
        }
        Ok(())
    }

    fn source_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0, self.rho01, self.rho02, //
                self.rho01, 1.0, self.rho12, //
                self.rho02, self.rho12, 1.0,
            ],
        )
    }

    /// Same private correlation and powers with the common part removed.
    pub fn without_common_part(&self) -> Self {
        Self { rho01: 0.0, rho02: 0.0, ..*self }
    }

    pub fn with_powers(&self, p1: f64, p2: f64) -> Self {
        Self { p1, p2, ..*self }
    }

    pub fn is_symmetric(&self) -> bool {
        self.p1 == self.p2 && self.rho01 == self.rho02
    }
}

/// Covariance matrix whose rows and columns carry coordinate names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCovariance {
    labels: Vec<String>,
    matrix: DMatrix<f64>,
}

impl LabeledCovariance {
    pub fn new<S: Into<String>>(labels: Vec<S>, matrix: DMatrix<f64>) -> Result<Self> {
        let cov = Self::new_unchecked(labels, matrix)?;
        let asym = linalg::max_asymmetry(&cov.matrix);
        if asym > SYMMETRY_TOL {
            return Err(Error::Dimension(format!("matrix asymmetric by {asym:e}")));
        }
        let min_eig = linalg::min_eigenvalue(&cov.matrix);
        if min_eig < -PSD_TOL {
            return Err(Error::NotPsd { eigenvalue: min_eig });
        }
        Ok(cov)
    }

    /// Checks labels and shape but skips the eigenvalue test.
    pub fn new_unchecked<S: Into<String>>(labels: Vec<S>, matrix: DMatrix<f64>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for a {}x{} matrix",
                labels.len(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels, matrix })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn indices(&self, labels: &[&str]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index_of(l)).collect()
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.matrix[(self.index_of(a)?, self.index_of(b)?)])
    }

    /// Principal sub-block in the requested label order.
    pub fn block(&self, labels: &[&str]) -> Result<DMatrix<f64>> {
        let idx = self.indices(labels)?;
        Ok(linalg::select(&self.matrix, &idx, &idx))
    }

    pub fn sub(&self, labels: &[&str]) -> Result<LabeledCovariance> {
        Ok(Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            matrix: self.block(labels)?,
        })
    }

    /// Rescaled to unit variances (zero-variance coordinates are left alone),
    /// with the standard deviations used.
    pub fn normalized(&self) -> (LabeledCovariance, Vec<f64>) {
        let (m, d) = linalg::equilibrate(&self.matrix);
        let sd = d.iter().map(|x| 1.0 / x).collect();
        (Self { labels: self.labels.clone(), matrix: m }, sd)
    }

    /// Conditional covariance of `keep` given `given` (Schur complement).
    pub fn conditional(&self, keep: &[&str], given: &[&str]) -> Result<(DMatrix<f64>, bool)> {
        let k = self.indices(keep)?;
        let g = self.indices(given)?;
        Ok(linalg::schur_complement(&self.matrix, &k, &g))
    }
}

/// Split of the conditional correlation `ρ12|0 = β1 β2` used to write
/// `U_k = β_k U + √(1−β_k²) B_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceDecomposition {
    pub beta1: f64,
    pub beta2: f64,
    pub rho12_given_0: f64,
}

impl SourceDecomposition {
    /// Builds a decomposition from an explicit `β1`; `β2 = ρ12|0 / β1`.
    pub fn with_beta1(rho12_given_0: f64, beta1: f64) -> Result<Self> {
        if beta1.abs() > 1.0 || beta1.abs() < rho12_given_0.abs() {
            return Err(Error::InvalidInput(format!(
                "|beta1| = {} must lie in [|rho12|0|, 1] = [{}, 1]",
                beta1.abs(),
                rho12_given_0.abs()
            )));
        }
        let beta2 = if beta1 == 0.0 { 0.0 } else { rho12_given_0 / beta1 };
        Ok(Self { beta1, beta2, rho12_given_0 })
    }
}

pub fn build_source_covariance(problem: &GaussianProblem) -> Result<LabeledCovariance> {
    problem.validate()?;
    LabeledCovariance::new_unchecked(SOURCE_LABELS.to_vec(), problem.source_matrix())
}

/// `ρ12|0 = (ρ12 − ρ01ρ02) / √((1−ρ01²)(1−ρ02²))` with the default split:
/// `β1 = β2 = √ρ12|0` when nonnegative, otherwise `β1 = √|ρ12|0|`, `β2 = −√|ρ12|0|`.
pub fn conditional_rho(problem: &GaussianProblem) -> Result<SourceDecomposition> {
    let denom = ((1.0 - problem.rho01 * problem.rho01) * (1.0 - problem.rho02 * problem.rho02)).sqrt();
    if !(denom > 0.0) {
        return Err(Error::DegenerateConditioning(format!(
            "rho01 = {}, rho02 = {}: a private source is a copy of the common part",
            problem.rho01, problem.rho02
        )));
    }
    let rho = ((problem.rho12 - problem.rho01 * problem.rho02) / denom).clamp(-1.0, 1.0);
    let root = rho.abs().sqrt();
    let (beta1, beta2) = if rho >= 0.0 { (root, root) } else { (root, -root) };
    Ok(SourceDecomposition { beta1, beta2, rho12_given_0: rho })
}

/// Linear MMSE estimate of one coordinate from a set of others.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmseEstimate {
    /// Weights on the observed coordinates, in the order they were given.
    pub coefficients: Vec<f64>,
    pub error_variance: f64,
    /// Set when the observation block was singular and the pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

pub fn mmse_reduce(cov: &LabeledCovariance, target: &str, observed: &[&str]) -> Result<MmseEstimate> {
    let t = cov.index_of(target)?;
    let o = cov.indices(observed)?;
    let var_t = cov.matrix[(t, t)];
    if o.is_empty() {
        return Ok(MmseEstimate { coefficients: vec![], error_variance: var_t.max(0.0), pseudo_inverse: false });
    }
    // work in unit-variance coordinates so scale does not decide rank
    let (norm, sd) = cov.normalized();
    let soo = linalg::select(&norm.matrix, &o, &o);
    let sot = linalg::select(&norm.matrix, &o, &[t]);
    let (coef, pseudo) = linalg::solve_psd(&soo, &sot);
    let explained: f64 = (0..o.len()).map(|i| sot[(i, 0)] * coef[(i, 0)]).sum();
    let unit = if var_t > 0.0 { 1.0 } else { 0.0 };
    Ok(MmseEstimate {
        coefficients: (0..o.len()).map(|i| coef[(i, 0)] * sd[t] / sd[o[i]]).collect(),
        error_variance: (var_t * (unit - explained)).max(0.0),
        pseudo_inverse: pseudo,
    })
}

/// Half log-determinant ratio in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDetRatio {
    pub value: f64,
    /// One of the two blocks was singular; `value` is then `±inf` (or NaN if both were).
    pub singular: bool,
}

/// `½ (log|Σ_a| − log|Σ_b|)`.
pub fn log_det_ratio(cov: &LabeledCovariance, subset_a: &[&str], subset_b: &[&str]) -> Result<LogDetRatio> {
    let la = linalg::log_det(&cov.block(subset_a)?);
    let lb = linalg::log_det(&cov.block(subset_b)?);
    let singular = la.is_infinite() || lb.is_infinite();
    Ok(LogDetRatio { value: 0.5 * (la - lb), singular })
}

/// Gaussian conditional mutual information `I(A; B | C)` in nats, computed
/// from Schur complements of `A`'s covariance.
///
/// Returns `+inf` when `A` becomes deterministic given `B, C` but not given
/// `C`, and 0 when `A` is already deterministic given `C`.
pub fn gaussian_mutual_information(cov: &LabeledCovariance, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    // unit variances: "deterministic" then means relative to the variable's own spread
    let (cov, _) = cov.normalized();
    let (given_c, _) = cov.conditional(a, c)?;
    let bc: Vec<&str> = b.iter().chain(c.iter()).copied().collect();
    let (given_bc, _) = cov.conditional(a, &bc)?;
    let l_c = linalg::log_det_absolute(&given_c);
    let l_bc = linalg::log_det_absolute(&given_bc);
    Ok(match (l_c.is_finite(), l_bc.is_finite()) {
        (true, true) => (0.5 * (l_c - l_bc)).max(0.0),
        (true, false) => f64::INFINITY,
        (false, _) => {
            // A has a deterministic component given C; drop it through ranks.
            let r_c = linalg::pivoted_cholesky(&given_c).rank;
            let r_bc = linalg::pivoted_cholesky(&given_bc).rank;
            if r_bc < r_c {
                f64::INFINITY
            } else {
                0.0
            }
        }
    })
}

/// Draws of the source decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSamples {
    pub s0: Vec<f64>,
    pub s1p: Vec<f64>,
    pub s2p: Vec<f64>,
    pub u: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl SourceSamples {
    pub fn len(&self) -> usize {
        self.s0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s0.is_empty()
    }
}

/// Samples `(S0, S1p, S2p, U)` through
/// `S_kp = ρ0k S0 + √(1−ρ0k²) U_k`, `U_k = β_k U + √(1−β_k²) B_k`.
pub fn sample_sources(
    problem: &GaussianProblem,
    decomposition: &SourceDecomposition,
    n: usize,
    seed: u64,
) -> Result<SourceSamples> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let (b1, b2) = (decomposition.beta1, decomposition.beta2);
    if b1.abs() > 1.0 || b2.abs() > 1.0 {
        return Err(Error::InvalidInput("|beta| must not exceed 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c1 = (1.0 - problem.rho01 * problem.rho01).max(0.0).sqrt();
    let c2 = (1.0 - problem.rho02 * problem.rho02).max(0.0).sqrt();
    let n1 = (1.0 - b1 * b1).max(0.0).sqrt();
    let n2 = (1.0 - b2 * b2).max(0.0).sqrt();
    let mut out = SourceSamples {
        s0: Vec::with_capacity(n),
        s1p: Vec::with_capacity(n),
        s2p: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        u1: Vec::with_capacity(n),
        u2: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let s0: f64 = StandardNormal.sample(&mut rng);
        let u: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let u1 = if n1 == 0.0 { b1 * u } else { b1 * u + n1 * e1 };
        let u2 = if n2 == 0.0 { b2 * u } else { b2 * u + n2 * e2 };
        out.s0.push(s0);
        out.s1p.push(problem.rho01 * s0 + c1 * u1);
        out.s2p.push(problem.rho02 * s0 + c2 * u2);
        out.u.push(u);
        out.u1.push(u1);
        out.u2.push(u2);
    }
    Ok(out)
}

/// Empirical covariance (1/n normalization about the sample mean) of equal-length columns.
pub fn empirical_covariance(columns: &[&[f64]]) -> DMatrix<f64> {
    let k = columns.len();
    let n = columns.first().map_or(0, |c| c.len());
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = columns[i]
                .iter()
                .zip(columns[j].iter())
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .sum();
            m[(i, j)] = s / n as f64;
            m[(j, i)] = s / n as f64;
        }
    }
    m
}
