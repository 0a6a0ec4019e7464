//! Pearson correlation, correlation ratio and maximal correlation of finite
//! pmfs, their conditional forms, and property runners for the inequalities
//! relating them.
//!
//! Real values of a coordinate are read from its alphabet labels; a label
//! that does not parse as a number stands for its index.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pmf::JointPmf;

/// Variances below this are treated as zero.
const VAR_EPS: f64 = 1e-14;
/// Property checks tolerate this much violation.
pub const PROPERTY_TOL: f64 = 1e-9;

/// Numeric values of one coordinate.
pub fn coordinate_values(pmf: &JointPmf, label: &str) -> Result<Vec<f64>> {
    let i = pmf.index_of(label)?;
    Ok(pmf.alphabets()[i].iter().enumerate().map(|(k, s)| s.trim().parse().unwrap_or(k as f64)).collect())
}

/// `p[(c·na + a)·nb + b]` for three groups of coordinates, each flattened
/// to a single index.
struct Grouped {
    na: usize,
    nb: usize,
    nc: usize,
    p: Vec<f64>,
}

impl Grouped {
    fn new(pmf: &JointPmf, a: &[&str], b: &[&str], c: &[&str]) -> Result<Self> {
        let mut all: Vec<&str> = Vec::new();
        for l in a.iter().chain(b).chain(c) {
            if all.contains(l) {
                return Err(Error::DuplicateLabel((*l).into()));
            }
            all.push(l);
        }
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidInput("both sides need at least one label".into()));
        }
        let m = pmf.marginal(&all)?;
        let shape = m.shape();
        let (ka, kb) = (a.len(), a.len() + b.len());
        let size = |r: std::ops::Range<usize>| shape[r].iter().product::<usize>();
        let (na, nb, nc) = (size(0..ka), size(ka..kb), size(kb..shape.len()));
        let flat = |idx: &[usize], r: std::ops::Range<usize>| r.fold(0, |acc, d| acc * shape[d] + idx[d]);
        let mut p = vec![0.0; na * nb * nc];
        m.for_each(|idx, q| {
            let (ia, ib, ic) = (flat(idx, 0..ka), flat(idx, ka..kb), flat(idx, kb..shape.len()));
            p[(ic * na + ia) * nb + ib] += q;
        });
        Ok(Self { na, nb, nc, p })
    }

    fn at(&self, c: usize, a: usize, b: usize) -> f64 {
        self.p[(c * self.na + a) * self.nb + b]
    }

    fn pc(&self, c: usize) -> f64 {
        self.p[c * self.na * self.nb..(c + 1) * self.na * self.nb].iter().sum()
    }

    fn pca(&self, c: usize, a: usize) -> f64 {
        (0..self.nb).map(|b| self.at(c, a, b)).sum()
    }

    fn pcb(&self, c: usize, b: usize) -> f64 {
        (0..self.na).map(|a| self.at(c, a, b)).sum()
    }
}

/// Pearson correlation, conditional on `cond` when it is non-empty:
/// `E[cov(A,B|C)] / √(E[var(A|C)] E[var(B|C)])`.
pub fn pearson(pmf: &JointPmf, a: &str, b: &str, cond: &[&str]) -> Result<f64> {
    let g = Grouped::new(pmf, &[a], &[b], cond)?;
    let (va, vb) = (coordinate_values(pmf, a)?, coordinate_values(pmf, b)?);
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for c in 0..g.nc {
        let pc = g.pc(c);
        if pc <= 0.0 {
            continue;
        }
        let (mut ma, mut mb, mut mab, mut maa, mut mbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..g.na {
            for j in 0..g.nb {
                let q = g.at(c, i, j) / pc;
                ma += q * va[i];
                mb += q * vb[j];
                mab += q * va[i] * vb[j];
                maa += q * va[i] * va[i];
                mbb += q * vb[j] * vb[j];
            }
        }
        cov += pc * (mab - ma * mb);
        var_a += pc * (maa - ma * ma);
        var_b += pc * (mbb - mb * mb);
    }
    if var_a <= VAR_EPS {
        return Err(Error::DegenerateVariable(a.into()));
    }
    if var_b <= VAR_EPS {
        return Err(Error::DegenerateVariable(b.into()));
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation of paired observations.
pub fn pearson_samples(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Dimension(format!("need paired samples, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= VAR_EPS * n {
        return Err(Error::DegenerateVariable("x".into()));
    }
    if syy <= VAR_EPS * n {
        return Err(Error::DegenerateVariable("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Both expressions of the (conditional) correlation ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioForms {
    /// `√(E[var(E[T|P,C] | C)] / E[var(T|C)])`.
    pub explained: f64,
    /// `√(1 − E[var(T|P,C)] / E[var(T|C)])`.
    pub residual: f64,
}

pub fn correlation_ratio_forms(pmf: &JointPmf, target: &str, predictors: &[&str], cond: &[&str]) -> Result<RatioForms> {
    let g = Grouped::new(pmf, &[target], predictors, cond)?;
    let v = coordinate_values(pmf, target)?;
    let (mut total, mut explained, mut residual) = (0.0, 0.0, 0.0);
    for c in 0..g.nc {
        let pc = g.pc(c);
        if pc <= 0.0 {
            continue;
        }
        let mean_c: f64 = (0..g.na).map(|a| g.pca(c, a) * v[a]).sum::<f64>() / pc;
        total += (0..g.na).map(|a| g.pca(c, a) * (v[a] - mean_c).powi(2)).sum::<f64>();
        for b in 0..g.nb {
            let pb = g.pcb(c, b);
            if pb <= 0.0 {
                continue;
            }
            let mean_cb: f64 = (0..g.na).map(|a| g.at(c, a, b) * v[a]).sum::<f64>() / pb;
            explained += pb * (mean_cb - mean_c).powi(2);
            residual += (0..g.na).map(|a| g.at(c, a, b) * (v[a] - mean_cb).powi(2)).sum::<f64>();
        }
    }
    if total <= VAR_EPS {
        return Err(Error::DegenerateVariable(target.into()));
    }
    Ok(RatioForms {
        explained: (explained / total).clamp(0.0, 1.0).sqrt(),
        residual: (1.0 - residual / total).clamp(0.0, 1.0).sqrt(),
    })
}

/// Correlation ratio of `target` on `predictors`, conditional on `cond`.
pub fn correlation_ratio(pmf: &JointPmf, target: &str, predictors: &[&str], cond: &[&str]) -> Result<f64> {
    Ok(correlation_ratio_forms(pmf, target, predictors, cond)?.explained)
}

/// The normalized joint matrix with the trivial direction of every
/// conditioning slice removed, restricted to the support.
fn centered_matrix(g: &Grouped) -> DMatrix<f64> {
    let rows: Vec<(usize, usize)> =
        (0..g.nc).flat_map(|c| (0..g.na).map(move |a| (c, a))).filter(|&(c, a)| g.pca(c, a) > 0.0).collect();
    let cols: Vec<(usize, usize)> =
        (0..g.nc).flat_map(|c| (0..g.nb).map(move |b| (c, b))).filter(|&(c, b)| g.pcb(c, b) > 0.0).collect();
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let ((c, a), (c2, b)) = (rows[i], cols[j]);
        if c != c2 {
            return 0.0;
        }
        let (pa, pb) = (g.pca(c, a), g.pcb(c, b));
        (g.at(c, a, b) - pa * pb / g.pc(c)) / (pa * pb).sqrt()
    })
}

/// Maximal correlation of the groups `a` and `b`, conditional on `cond`,
/// from the singular values of the normalized joint matrix.
pub fn maximal_correlation(pmf: &JointPmf, a: &[&str], b: &[&str], cond: &[&str]) -> Result<f64> {
    let g = Grouped::new(pmf, a, b, cond)?;
    let m = centered_matrix(&g);
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let s = m.singular_values();
    Ok(s.iter().cloned().fold(0.0, f64::max).min(1.0))
}

/// Maximal correlation by alternating conditional expectations: power
/// iteration in function space from a seeded random start.
pub fn maximal_correlation_ace(
    pmf: &JointPmf,
    a: &[&str],
    b: &[&str],
    cond: &[&str],
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    let g = Grouped::new(pmf, a, b, cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f: Vec<f64> = (0..g.nc * g.na).map(|_| rng.random::<f64>() - 0.5).collect();
    let pca: Vec<f64> = (0..g.nc * g.na).map(|k| g.pca(k / g.na, k % g.na)).collect();
    let pcb: Vec<f64> = (0..g.nc * g.nb).map(|k| g.pcb(k / g.nb, k % g.nb)).collect();
    // centre per slice and scale to unit second moment; returns the norm
    let normalize = |h: &mut [f64], w: &[f64], n: usize| -> f64 {
        for c in 0..g.nc {
            let pc: f64 = w[c * n..(c + 1) * n].iter().sum();
            if pc > 0.0 {
                let mean: f64 = (0..n).map(|i| w[c * n + i] * h[c * n + i]).sum::<f64>() / pc;
                (0..n).for_each(|i| h[c * n + i] -= mean);
            }
        }
        let norm = h.iter().zip(w).map(|(x, p)| p * x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            h.iter_mut().for_each(|x| *x /= norm);
        }
        norm
    };
    if normalize(&mut f, &pca, g.na) == 0.0 {
        return Ok(0.0);
    }
    let mut rho = 0.0;
    let mut steady = 0;
    for _ in 0..iterations {
        let mut h = vec![0.0; g.nc * g.nb];
        for c in 0..g.nc {
            for bb in 0..g.nb {
                if pcb[c * g.nb + bb] > 0.0 {
                    h[c * g.nb + bb] =
                        (0..g.na).map(|aa| g.at(c, aa, bb) * f[c * g.na + aa]).sum::<f64>() / pcb[c * g.nb + bb];
                }
            }
        }
        if normalize(&mut h, &pcb, g.nb) < 1e-300 {
            return Ok(0.0);
        }
        let mut next = vec![0.0; g.nc * g.na];
        for c in 0..g.nc {
            for aa in 0..g.na {
                if pca[c * g.na + aa] > 0.0 {
                    next[c * g.na + aa] =
                        (0..g.nb).map(|bb| g.at(c, aa, bb) * h[c * g.nb + bb]).sum::<f64>() / pca[c * g.na + aa];
                }
            }
        }
        let r = normalize(&mut next, &pca, g.na);
        f = next;
        steady = if (r - rho).abs() < 1e-15 { steady + 1 } else { 0 };
        rho = r;
        if steady >= 5 {
            break;
        }
    }
    Ok(rho.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measures {
    pub pearson: f64,
    /// Correlation ratio of the first coordinate on the second.
    pub ratio_12: f64,
    pub ratio_21: f64,
    pub maximal: f64,
}

fn measures(pmf: &JointPmf, a: &str, b: &str, cond: &[&str]) -> Result<Measures> {
    Ok(Measures {
        pearson: pearson(pmf, a, b, cond)?,
        ratio_12: correlation_ratio(pmf, a, &[b], cond)?,
        ratio_21: correlation_ratio(pmf, b, &[a], cond)?,
        maximal: maximal_correlation(pmf, &[a], &[b], cond)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub ratio_12: f64,
    pub ratio_21: f64,
    pub maximal: f64,
    /// The same measures given each remaining coordinate; coordinates
    /// under which either side degenerates are left out.
    pub conditional: BTreeMap<String, Measures>,
}

pub fn correlation_report(pmf: &JointPmf, a: &str, b: &str) -> Result<CorrelationReport> {
    let m = measures(pmf, a, b, &[])?;
    let mut conditional = BTreeMap::new();
    for c in pmf.names().iter().filter(|n| *n != a && *n != b) {
        match measures(pmf, a, b, &[c.as_str()]) {
            Ok(cm) => {
                conditional.insert(c.clone(), cm);
            }
            Err(Error::DegenerateVariable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(CorrelationReport { pearson: m.pearson, ratio_12: m.ratio_12, ratio_21: m.ratio_21, maximal: m.maximal, conditional })
}

/// Outcome of a property run. Margins are right minus left side, so a
/// negative margin is a violation once it passes the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub instances: usize,
    pub checks: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_check: String,
    pub worst_instance: usize,
}

impl MarginReport {
    fn empty() -> Self {
        Self { instances: 0, checks: 0, violations: 0, worst_margin: f64::INFINITY, worst_check: String::new(), worst_instance: 0 }
    }

    fn record(&mut self, instance: usize, name: &str, margin: f64) {
        self.checks += 1;
        if margin < -PROPERTY_TOL {
            self.violations += 1;
        }
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst_check = name.into();
            self.worst_instance = instance;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.instances += other.instances;
        self.checks += other.checks;
        self.violations += other.violations;
        if other.worst_margin < self.worst_margin {
            self.worst_margin = other.worst_margin;
            self.worst_check = other.worst_check;
            self.worst_instance = other.worst_instance;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn run_checks<T: Sync>(items: &[T], check: impl Fn(&T, &mut dyn FnMut(&str, f64)) -> Result<()> + Sync) -> Result<MarginReport> {
    let parts = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut r = MarginReport::empty();
            r.instances = 1;
            check(item, &mut |name, m| r.record(i, name, m))?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(MarginReport::empty(), MarginReport::merge))
}

/// Random pmf over real-valued coordinates named `names`, with values
/// drawn from `[-1, 1]` and flat-Dirichlet masses.
pub fn random_pmf(names: &[&str], sizes: &[usize], rng: &mut impl Rng) -> Result<JointPmf> {
    let alphabets = sizes.iter().map(|&n| (0..n).map(|_| format!("{}", rng.random_range(-1.0..1.0))).collect()).collect();
    let total: usize = sizes.iter().product();
    let mut masses: Vec<f64> = (0..total).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= s);
    JointPmf::new(names.iter().map(|s| s.to_string()).collect(), alphabets, masses)
}

/// Seeded random pmfs over `(W0, W1, W2)`, each coordinate with `k` symbols.
pub fn random_triples(count: usize, k: usize, seed: u64) -> Result<Vec<JointPmf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_pmf(&["W0", "W1", "W2"], &[k, k, k], &mut rng)).collect()
}

/// Checks the ordering chains, the monotonicity in the predictor, both
/// forms of the correlation ratio, and the product identity
/// `1 − θ²(W1, W2W0) = (1 − θ²(W1, W0))(1 − θ²(W1, W2 | W0))`.
/// Coordinates are read positionally as `(W0, W1, W2)`.
pub fn verify_lemma_chain(instances: &[JointPmf]) -> Result<MarginReport> {
    run_checks(instances, |pmf, rec| {
        let names = pmf.names();
        if names.len() != 3 {
            return Err(Error::Dimension("lemma chain needs three coordinates".into()));
        }
        let (w0, w1, w2) = (names[0].as_str(), names[1].as_str(), names[2].as_str());
        for cond in [&[][..], &[w0][..]] {
            let tag = if cond.is_empty() { "" } else { " | W0" };
            let r = pearson(pmf, w1, w2, cond)?.abs();
            let t12 = correlation_ratio_forms(pmf, w1, &[w2], cond)?;
            let t21 = correlation_ratio(pmf, w2, &[w1], cond)?;
            let m = maximal_correlation(pmf, &[w1], &[w2], cond)?;
            rec(&format!("|rho| <= theta_12{tag}"), t12.explained - r);
            rec(&format!("|rho| <= theta_21{tag}"), t21 - r);
            rec(&format!("theta_12 <= rho_m{tag}"), m - t12.explained);
            rec(&format!("theta_21 <= rho_m{tag}"), m - t21);
            rec(&format!("rho_m <= 1{tag}"), 1.0 - m);
            // squares: the root amplifies rounding near zero
            rec(&format!("ratio forms agree{tag}"), -(t12.explained.powi(2) - t12.residual.powi(2)).abs());
        }
        let t_joint = correlation_ratio(pmf, w1, &[w2, w0], &[])?;
        let t_0 = correlation_ratio(pmf, w1, &[w0], &[])?;
        let t_2g0 = correlation_ratio(pmf, w1, &[w2], &[w0])?;
        rec("theta monotone in predictor", t_joint - t_0);
        let m_joint = maximal_correlation(pmf, &[w1], &[w2, w0], &[])?;
        let m_0 = maximal_correlation(pmf, &[w1], &[w0], &[])?;
        rec("rho_m monotone in predictor", m_joint - m_0);
        let lhs = 1.0 - t_joint * t_joint;
        let rhs = (1.0 - t_0 * t_0) * (1.0 - t_2g0 * t_2g0);
        rec("product identity", -(lhs - rhs).abs());
        Ok(())
    })
}

/// A pmf over `(W, Y, X, Z)` with `X` and `Z` conditionally independent
/// given `(Y, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTriple {
    joint: JointPmf,
    identical: bool,
}

impl MarkovTriple {
    /// Builds `p(w, y) p(x | y, w) p(z | y, w)`; `p_x[w][y]` and `p_z[w][y]`
    /// are rows over the value lists.
    pub fn from_parts(
        p_wy: &JointPmf,
        x_values: &[f64],
        p_x: &[Vec<Vec<f64>>],
        z_values: &[f64],
        p_z: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let base = p_wy.renamed(&["W", "Y"])?;
        let label = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>();
        let joint = base.extend("X", label(x_values), &["W", "Y"], |p| p_x[p[0]][p[1]].clone())?;
        let joint = joint.extend("Z", label(z_values), &["W", "Y"], |p| p_z[p[0]][p[1]].clone())?;
        let identical = x_values == z_values && p_x == p_z;
        Ok(Self { joint, identical })
    }

    /// Accepts a pmf over `(W, Y, X, Z)` only if `I(X; Z | Y W)` vanishes.
    pub fn from_joint(joint: JointPmf) -> Result<Self> {
        for l in ["W", "Y", "X", "Z"] {
            joint.index_of(l)?;
        }
        if joint.names().len() != 4 {
            return Err(Error::Dimension("expected exactly W, Y, X, Z".into()));
        }
        let cmi = joint.mutual_information(&["X"], &["Z"], &["Y", "W"])?;
        if cmi > 1e-12 {
            return Err(Error::InvalidPmf(format!("X and Z are not conditionally independent given (Y, W): {cmi:e}")));
        }
        let joint = joint.marginal(&["W", "Y", "X", "Z"])?;
        let xz_same = joint.alphabets()[2] == joint.alphabets()[3];
        let a = joint.marginal(&["W", "Y", "X"])?;
        let b = joint.marginal(&["W", "Y", "Z"])?;
        let identical = xz_same && a.masses().iter().zip(b.masses()).all(|(p, q)| (p - q).abs() < 1e-15);
        Ok(Self { joint, identical })
    }

    pub fn joint(&self) -> &JointPmf {
        &self.joint
    }

    /// Whether `(X, Y, W)` and `(Z, Y, W)` have the same distribution.
    pub fn identical(&self) -> bool {
        self.identical
    }

    /// A seeded random triple; `identical` reuses the `X` kernel for `Z`.
    pub fn random(sizes: [usize; 4], identical: bool, rng: &mut impl Rng) -> Result<Self> {
        let [nw, ny, nx, nz] = sizes;
        let p_wy = random_pmf(&["W", "Y"], &[nw, ny], rng)?;
        let row = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        };
        let kernel = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<Vec<Vec<f64>>> {
            (0..nw).map(|_| (0..ny).map(|_| row(n, rng)).collect()).collect()
        };
        let x_values: Vec<f64> = (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p_x = kernel(nx, rng);
        if identical {
            return Self::from_parts(&p_wy, &x_values, &p_x, &x_values, &p_x);
        }
        let z_values: Vec<f64> = (0..nz).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p_z = kernel(nz, rng);
        Self::from_parts(&p_wy, &x_values, &p_x, &z_values, &p_z)
    }
}

/// Checks the three data-processing inequalities given `W` and, for
/// triples with identical halves, the equalities. The outer two always hold
/// with equality; the middle one only when `X` is binary and `W` constant,
/// since otherwise the pooled ratio and the per-slice maximal correlation
/// of `(X, Y)` differ.
pub fn verify_dpi(triples: &[MarkovTriple]) -> Result<MarginReport> {
    run_checks(triples, |t, rec| {
        let j = &t.joint;
        let w = &["W"][..];
        let r_xz = pearson(j, "X", "Z", w)?;
        let t_xz = correlation_ratio(j, "X", &["Z"], w)?;
        let m_xz = maximal_correlation(j, &["X"], &["Z"], w)?;
        let t_xy = correlation_ratio(j, "X", &["Y"], w)?;
        let t_zy = correlation_ratio(j, "Z", &["Y"], w)?;
        let m_xy = maximal_correlation(j, &["X"], &["Y"], w)?;
        let m_zy = maximal_correlation(j, &["Z"], &["Y"], w)?;
        rec("rho(X,Z|W) <= theta theta", t_xy * t_zy - r_xz);
        rec("theta(X,Z|W) <= theta rho_m", t_xy * m_zy - t_xz);
        rec("rho_m(X,Z|W) <= rho_m rho_m", m_xy * m_zy - m_xz);
        if t.identical {
            rec("equality for rho", -(t_xy * t_zy - r_xz).abs());
            rec("equality for rho_m", -(m_xy * m_zy - m_xz).abs());
            let support = |l: &str| -> Result<usize> { Ok(j.marginal(&[l])?.masses().iter().filter(|p| **p > 0.0).count()) };
            if support("X")? <= 2 && support("W")? == 1 {
                rec("equality for theta", -(t_xy * m_zy - t_xz).abs());
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tensorization {
    pub single: f64,
    pub product: f64,
    /// `single − product`; non-negative up to rounding.
    pub margin: f64,
}

/// Maximal correlation of `n` independent copies of a pair against the
/// single-letter value.
pub fn verify_tensorization(pair: &JointPmf, n: usize) -> Result<Tensorization> {
    if pair.names().len() != 2 || n == 0 {
        return Err(Error::InvalidInput("need a two-coordinate pmf and n >= 1".into()));
    }
    let single = maximal_correlation(pair, &[pair.names()[0].as_str()], &[pair.names()[1].as_str()], &[])?;
    let mut joint = pair.renamed(&["A1", "B1"])?;
    for i in 2..=n {
        let (a, b) = (format!("A{i}"), format!("B{i}"));
        joint = joint.product(&pair.renamed(&[&a, &b])?)?;
    }
    let aa: Vec<String> = (1..=n).map(|i| format!("A{i}")).collect();
    let bb: Vec<String> = (1..=n).map(|i| format!("B{i}")).collect();
    let a: Vec<&str> = aa.iter().map(|s| s.as_str()).collect();
    let b: Vec<&str> = bb.iter().map(|s| s.as_str()).collect();
    let product = maximal_correlation(&joint, &a, &b, &[])?;
    Ok(Tensorization { single, product, margin: single - product })
}

/// Tensorization checks over seeded random pairs of `k`-symbol alphabets.
pub fn verify_tensorization_suite(count: usize, k: usize, n: usize, seed: u64) -> Result<MarginReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..count).map(|_| random_pmf(&["A", "B"], &[k, k], &mut rng)).collect::<Result<Vec<_>>>()?;
    run_checks(&pairs, |p, rec| {
        let t = verify_tensorization(p, n)?;
        rec("rho_m of product <= single letter", t.margin);
        Ok(())
    })
}

/// Empirical pmf of a bivariate Gaussian with correlation `rho`, each axis
/// quantized into `bins` equal cells on `[-range, range]` (outliers go to
/// the edge cells).
pub fn discretized_gaussian(rho: f64, n: usize, bins: usize, range: f64, seed: u64) -> Result<JointPmf> {
    if !(rho.abs() <= 1.0) || bins == 0 || n == 0 || !(range > 0.0) {
        return Err(Error::InvalidInput("need |rho| <= 1, bins > 0, n > 0 and range > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = |x: f64| (((x + range) / (2.0 * range) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    let mut counts = vec![0u64; bins * bins];
    let s = (1.0 - rho * rho).sqrt();
    for _ in 0..n {
        let u: f64 = StandardNormal.sample(&mut rng);
        let v: f64 = StandardNormal.sample(&mut rng);
        counts[cell(u) * bins + cell(rho * u + s * v)] += 1;
    }
    let centre = |i: usize| format!("{}", -range + (i as f64 + 0.5) * 2.0 * range / bins as f64);
    let axis: Vec<String> = (0..bins).map(centre).collect();
    JointPmf::new(
        vec!["U".into(), "V".into()],
        vec![axis.clone(), axis],
        counts.iter().map(|&c| c as f64 / n as f64).collect(),
    )
}

/// Maximal correlation of the discretized Gaussian pair.
pub fn gaussian_maximal_correlation_mc(rho: f64, n: usize, bins: usize, range: f64, seed: u64) -> Result<f64> {
    let pmf = discretized_gaussian(rho, n, bins, range, seed)?;
    maximal_correlation(&pmf, &["U"], &["V"], &[])
}

/// Seeded Markov triples: a quarter with identical halves, a quarter of
/// those with binary `X` and constant `W`, the rest unrelated halves.
pub fn random_markov_triples(count: usize, seed: u64) -> Result<Vec<MarkovTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| match i % 4 {
            0 => MarkovTriple::random([2, 3, 3, 3], true, &mut rng),
            1 => MarkovTriple::random([1, 3, 2, 2], true, &mut rng),
            2 => MarkovTriple::random([3, 3, 3, 3], false, &mut rng),
            _ => MarkovTriple::random([2, 3, 2, 3], false, &mut rng),
        })
        .collect()
}

/// Tolerance on the discretized Gaussian maximal correlation.
pub const GAUSSIAN_MC_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Chain,
    Dpi,
    Tensorization,
    Gaussian,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Chain, Suite::Dpi, Suite::Tensorization, Suite::Gaussian];

    pub fn default_count(self) -> usize {
        match self {
            Suite::Chain => 1000,
            Suite::Dpi => 500,
            Suite::Tensorization => 100,
            Suite::Gaussian => 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub count: usize,
    pub seed: u64,
    pub report: MarginReport,
}

/// Runs one property suite. `count` is the number of instances, except for
/// the Gaussian suite where it is the sample size per correlation.
pub fn run_property_suite(suite: Suite, count: usize, seed: u64) -> Result<SuiteReport> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    let report = match suite {
        Suite::Chain => verify_lemma_chain(&random_triples(count, 3, seed)?)?,
        Suite::Dpi => verify_dpi(&random_markov_triples(count, seed)?)?,
        Suite::Tensorization => verify_tensorization_suite(count, 3, 2, seed)?,
        Suite::Gaussian => {
            let rhos = [0.2, 0.5, 0.8];
            run_checks(&rhos, |&rho, rec| {
                let m = gaussian_maximal_correlation_mc(rho, count, 64, 4.0, seed)?;
                rec(&format!("rho_m = |rho| at {rho}"), GAUSSIAN_MC_TOL - (m - rho).abs());
                Ok(())
            })?
        }
    };
    Ok(SuiteReport { suite, count, seed, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dsbs(p: f64) -> JointPmf {
        JointPmf::new(
            vec!["A".into(), "B".into()],
            vec![vec!["-1".into(), "1".into()], vec!["-1".into(), "1".into()]],
            vec![(1.0 - p) / 2.0, p / 2.0, p / 2.0, (1.0 - p) / 2.0],
        )
        .unwrap()
    }

    fn independent() -> JointPmf {
        let a = JointPmf::new(vec!["A".into()], vec![vec!["0".into(), "1".into(), "5".into()]], vec![0.2, 0.3, 0.5]).unwrap();
        let b = JointPmf::new(vec!["B".into()], vec![vec!["2".into(), "3".into()]], vec![0.6, 0.4]).unwrap();
        a.product(&b).unwrap()
    }

    #[test]
    fn identical_coordinates() {
        let p = dsbs(0.0);
        assert!((pearson(&p, "A", "B", &[]).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation_ratio(&p, "A", &["B"], &[]).unwrap() - 1.0).abs() < 1e-12);
        assert!((maximal_correlation(&p, &["A"], &["B"], &[]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_coordinates() {
        let p = independent();
        assert!(pearson(&p, "A", "B", &[]).unwrap().abs() < 1e-12);
        assert!(correlation_ratio(&p, "A", &["B"], &[]).unwrap().abs() < 1e-7);
        assert!(maximal_correlation(&p, &["A"], &["B"], &[]).unwrap().abs() < 1e-12);
        assert!(maximal_correlation_ace(&p, &["A"], &["B"], &[], 1000, 3).unwrap() < 1e-12);
    }

    #[test]
    fn binary_symmetric_pair() {
        let p = dsbs(0.1);
        assert!((correlation_ratio(&p, "A", &["B"], &[]).unwrap() - 0.8).abs() < 1e-12);
        assert!((maximal_correlation(&p, &["A"], &["B"], &[]).unwrap() - 0.8).abs() < 1e-12);
        assert!((pearson(&p, "A", "B", &[]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variable() {
        let p = JointPmf::from_sizes(&["A", "B"], &[2, 2], vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(pearson(&p, "A", "B", &[]), Err(Error::DegenerateVariable(_))));
        assert!(matches!(correlation_ratio(&p, "A", &["B"], &[]), Err(Error::DegenerateVariable(_))));
    }

    #[test]
    fn sample_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let s = (1.0f64 - 0.25).sqrt();
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let u: f64 = StandardNormal.sample(&mut rng);
            let v: f64 = StandardNormal.sample(&mut rng);
            x.push(u);
            y.push(0.5 * u + s * v);
        }
        assert!((pearson_samples(&x, &y).unwrap() - 0.5).abs() < 0.01);
    }

    #[test]
    fn conditional_maximal_is_largest_slice() {
        // given W = 0 the pair is a DSBS(0.1), given W = 1 a DSBS(0.3)
        let mut m = Vec::new();
        for (pw, p) in [(0.3, 0.1), (0.7, 0.3)] {
            m.extend([(1.0 - p) / 2.0, p / 2.0, p / 2.0, (1.0 - p) / 2.0].map(|x| pw * x));
        }
        let j = JointPmf::from_sizes(&["W", "A", "B"], &[2, 2, 2], m).unwrap();
        let r = maximal_correlation(&j, &["A"], &["B"], &["W"]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        let ace = maximal_correlation_ace(&j, &["A"], &["B"], &["W"], 100_000, 1).unwrap();
        assert!((ace - 0.8).abs() < 1e-8);
    }

    #[test]
    fn chain_suite_small() {
        let r = verify_lemma_chain(&random_triples(100, 3, 11).unwrap()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.instances, 100);
    }

    #[test]
    fn chain_on_independent_triple() {
        let w0 = JointPmf::new(vec!["W0".into()], vec![vec!["0".into(), "1".into()]], vec![0.4, 0.6]).unwrap();
        let p = w0.product(&independent()).unwrap();
        let r = verify_lemma_chain(&[p.clone()]).unwrap();
        assert!(r.passed());
        assert!(correlation_ratio(&p, "A", &["B", "W0"], &[]).unwrap() < 1e-7);
    }

    #[test]
    fn dpi_suite_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut triples = Vec::new();
        for i in 0..60 {
            triples.push(MarkovTriple::random([2, 3, 3, 3], i % 3 == 0, &mut rng).unwrap());
            triples.push(MarkovTriple::random([2, 2, 2, 2], i % 2 == 0, &mut rng).unwrap());
            triples.push(MarkovTriple::random([1, 3, 2, 2], i % 2 == 0, &mut rng).unwrap());
        }
        let r = verify_dpi(&triples).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn dpi_rejects_non_markov() {
        let j = JointPmf::from_sizes(&["W", "Y", "X", "Z"], &[1, 2, 2, 4], {
            let mut v = vec![0.0; 16];
            v[0] = 0.25;
            v[5] = 0.25;
            v[10] = 0.25;
            v[15] = 0.25;
            v
        })
        .unwrap();
        // Y fixes X but X and Z still share one bit beyond Y
        assert!(matches!(MarkovTriple::from_joint(j), Err(Error::InvalidPmf(_))));
    }

    #[test]
    fn dpi_independent_x() {
        let p_wy = JointPmf::from_sizes(&["W", "Y"], &[1, 2], vec![0.5, 0.5]).unwrap();
        let px = vec![vec![vec![0.3, 0.7], vec![0.3, 0.7]]];
        let pz = vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]];
        let t = MarkovTriple::from_parts(&p_wy, &[0.0, 1.0], &px, &[0.0, 1.0], &pz).unwrap();
        let j = t.joint();
        assert!(pearson(j, "X", "Z", &["W"]).unwrap().abs() < 1e-12);
        assert!(maximal_correlation(j, &["X"], &["Z"], &["W"]).unwrap() < 1e-12);
        assert!(correlation_ratio(j, "X", &["Y"], &["W"]).unwrap() < 1e-7);
        assert!(MarkovTriple::from_joint(j.clone()).is_ok());
    }

    #[test]
    fn tensorization_examples() {
        let t = verify_tensorization(&dsbs(0.1), 2).unwrap();
        assert!((t.product - 0.8).abs() < 1e-9 && t.margin.abs() < 1e-9);
        let t = verify_tensorization(&dsbs(0.3), 1).unwrap();
        assert_eq!(t.single, t.product);
        let ind = independent();
        assert!(verify_tensorization(&ind, 3).unwrap().product < 1e-9);
    }

    #[test]
    fn report_holds_the_chain() {
        let p = &random_triples(1, 3, 99).unwrap()[0];
        let r = correlation_report(p, "W1", "W2").unwrap();
        assert!(r.pearson.abs() <= r.ratio_12.min(r.ratio_21) + 1e-9);
        assert!(r.ratio_12.max(r.ratio_21) <= r.maximal + 1e-9 && r.maximal <= 1.0);
        assert!(r.conditional.contains_key("W0"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ratio_forms_agree(seed in any::<u64>()) {
            let p = &random_triples(1, 3, seed).unwrap()[0];
            for cond in [&[][..], &["W0"][..]] {
                let f = correlation_ratio_forms(p, "W1", &["W2"], cond).unwrap();
                prop_assert!((f.explained - f.residual).abs() < 1e-12);
            }
        }

        #[test]
        fn svd_matches_ace(seed in any::<u64>()) {
            let p = &random_triples(1, 3, seed).unwrap()[0];
            let a = maximal_correlation(p, &["W1"], &["W2"], &["W0"]).unwrap();
            let b = maximal_correlation_ace(p, &["W1"], &["W2"], &["W0"], 200_000, seed).unwrap();
            prop_assert!((a - b).abs() < 1e-8, "{} {}", a, b);
        }

        #[test]
        fn maximal_ignores_labels(seed in any::<u64>()) {
            let p = &random_triples(1, 3, seed).unwrap()[0];
            let base = maximal_correlation(p, &["W1"], &["W2"], &[]).unwrap();
            // relabel with a strictly monotone recoding and permute the order
            let mut alph = p.alphabets().to_vec();
            for s in alph[1].iter_mut() {
                let v: f64 = s.parse().unwrap();
                *s = format!("{}", v.exp() * 10.0);
            }
            let mut masses = vec![0.0; 27];
            p.for_each(|i, m| masses[(i[0] * 3 + (2 - i[1])) * 3 + i[2]] = m);
            alph[1].reverse();
            let q = JointPmf::new(p.names().to_vec(), alph, masses).unwrap();
            let other = maximal_correlation(&q, &["W1"], &["W2"], &[]).unwrap();
            prop_assert!((base - other).abs() < 1e-12);
        }
    }
}
