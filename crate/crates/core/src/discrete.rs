//! Finite-alphabet tools: common-part extraction, certificates for points of
//! the hybrid inner bound, and the lossless / common-message / distributed
//! source coding special cases.
//!
//! Searches are bounded by auxiliary-cardinality limits. A search that comes
//! back empty says nothing about the region itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::{ChannelPmf, JointPmf};

/// Strict information inequalities need this much slack, in nats.
pub const STRICT_SLACK: f64 = 1e-9;
/// Non-strict inequalities tolerate this much violation.
pub const WEAK_TOL: f64 = 1e-12;
/// An auxiliary carrying less information than this about its source is
/// treated as private randomness.
pub const INACTIVE_INFO: f64 = 1e-12;

/// Gács-Körner common part of a two-coordinate pmf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonPart {
    pub f1: Vec<usize>,
    pub f2: Vec<usize>,
    pub size: usize,
}

fn two_coordinates(pmf: &JointPmf) -> Result<(usize, usize)> {
    match pmf.shape()[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Dimension(format!("expected a pmf of two sources, got {} coordinates", pmf.names().len()))),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the support graph between the two alphabets,
/// numbered in order of first appearance (first alphabet, then second).
/// Symbols of zero probability are assigned to component 0.
pub fn extract_common_part(pmf: &JointPmf) -> Result<CommonPart> {
    let (n1, n2) = two_coordinates(pmf)?;
    let mut parent: Vec<usize> = (0..n1 + n2).collect();
    let mut seen = vec![false; n1 + n2];
    for a in 0..n1 {
        for b in 0..n2 {
            if pmf.get(&[a, b]) > 0.0 {
                seen[a] = true;
                seen[n1 + b] = true;
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, n1 + b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n1 + n2];
    let mut size = 0;
    let mut map = vec![0; n1 + n2];
    for v in 0..n1 + n2 {
        if !seen[v] {
            continue;
        }
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = size;
            size += 1;
        }
        map[v] = label[r];
    }
    Ok(CommonPart { f1: map[..n1].to_vec(), f2: map[n1..].to_vec(), size: size.max(1) })
}

/// `I(A; B | C)` in nats over labelled coordinates.
pub fn mutual_information(pmf: &JointPmf, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64> {
    pmf.mutual_information(a, b, c)
}

/// Per-letter distortion tables `d_k[s][ŝ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionTables {
    pub d1: Vec<Vec<f64>>,
    pub d2: Vec<Vec<f64>>,
}

impl DistortionTables {
    pub fn hamming(n1: usize, n2: usize) -> Self {
        let h = |n: usize| (0..n).map(|a| (0..n).map(|b| if a == b { 0.0 } else { 1.0 }).collect()).collect();
        Self { d1: h(n1), d2: h(n2) }
    }

    fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        for (d, n) in [(&self.d1, n1), (&self.d2, n2)] {
            if d.len() != n || d.is_empty() {
                return Err(Error::Dimension(format!("distortion table has {} rows, source has {n} symbols", d.len())));
            }
            let m = d[0].len();
            if m == 0 || d.iter().any(|r| r.len() != m) {
                return Err(Error::Dimension("ragged distortion table".into()));
            }
            if d.iter().flatten().any(|x| !(*x >= 0.0)) {
                return Err(Error::InvalidInput("distortions must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteSearchConfig {
    /// Largest `|V0|, |V1|, |V2|` tried; an artifact restriction.
    pub max_cardinality: [usize; 3],
    /// Lattice resolution of random simplex points.
    pub grid: usize,
    /// Random candidates per cardinality triple.
    pub samples: usize,
    /// Deterministic maps are enumerated when there are at most this many.
    pub enumerate_limit: usize,
    pub seed: u64,
}

impl Default for DiscreteSearchConfig {
    fn default() -> Self {
        Self { max_cardinality: [2, 2, 2], grid: 5, samples: 2000, enumerate_limit: 4096, seed: 1 }
    }
}

/// Conditional tables and maps of a finite hybrid scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub cardinalities: [usize; 3],
    /// `p_v0[s0][v0]`.
    pub p_v0: Vec<Vec<f64>>,
    /// `p_v1[s1][v0][v1]`.
    pub p_v1: Vec<Vec<Vec<f64>>>,
    pub p_v2: Vec<Vec<Vec<f64>>>,
    /// `x1[v0][v1][s1]`; empty for source coding.
    pub x1: Vec<Vec<Vec<usize>>>,
    pub x2: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerCertificate {
    pub scheme: Scheme,
    pub common_part: CommonPart,
    /// `ŝ_k` indexed by `((v0·|V1| + v1)·|V2| + v2)·|Y| + y` (`|Y| = 1` for source coding).
    pub s_hat1: Vec<usize>,
    pub s_hat2: Vec<usize>,
    pub d1: f64,
    pub d2: f64,
    /// Right minus left side; `None` when the constraint has no message to
    /// carry or does not apply.
    pub margins: [Option<f64>; 4],
    pub cardinality_limit: [usize; 3],
}

/// What the four right-hand sides are measured against.
#[derive(Debug, Clone, Copy)]
enum Target<'a> {
    Channel(&'a ChannelPmf),
    Rates(f64, f64),
}

struct Setup<'a> {
    source: &'a JointPmf,
    common: CommonPart,
    dist: &'a DistortionTables,
    target: Target<'a>,
    d1: f64,
    d2: f64,
    n: [usize; 3],
}

impl<'a> Setup<'a> {
    fn new(
        source: &'a JointPmf,
        dist: &'a DistortionTables,
        target: Target<'a>,
        d1: f64,
        d2: f64,
    ) -> Result<Self> {
        let (n1, n2) = two_coordinates(source)?;
        dist.validate(n1, n2)?;
        if let Target::Channel(ch) = target {
            ch.validate()?;
        }
        let common = extract_common_part(source)?;
        let n = [common.size, n1, n2];
        Ok(Self { source, common, dist, target, d1, d2, n })
    }

    fn inputs(&self) -> Option<(usize, usize, usize)> {
        match self.target {
            Target::Channel(ch) => Some(ch.sizes()),
            Target::Rates(..) => None,
        }
    }
}

/// Joint pmf of `(S1, S2, V0, V1, V2[, Y])`.
fn scheme_joint(setup: &Setup, scheme: &Scheme) -> Result<JointPmf> {
    let src = setup.source.renamed(&["S1", "S2"])?;
    let [c0, c1, c2] = scheme.cardinalities;
    let f1 = &setup.common.f1;
    let names = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
    let j = src.extend("V0", names(c0), &["S1"], |p| scheme.p_v0[f1[p[0]]].clone())?;
    let j = j.extend("V1", names(c1), &["S1", "V0"], |p| scheme.p_v1[p[0]][p[1]].clone())?;
    let j = j.extend("V2", names(c2), &["S2", "V0"], |p| scheme.p_v2[p[0]][p[1]].clone())?;
    match setup.target {
        Target::Channel(ch) => j.extend("Y", ch.y.clone(), &["S1", "S2", "V0", "V1", "V2"], |p| {
            let x1 = scheme.x1[p[2]][p[3]][p[0]];
            let x2 = scheme.x2[p[2]][p[4]][p[1]];
            ch.table[x1][x2].clone()
        }),
        Target::Rates(..) => Ok(j),
    }
}

struct Evaluation {
    d1: f64,
    d2: f64,
    margins: [Option<f64>; 4],
    s_hat1: Vec<usize>,
    s_hat2: Vec<usize>,
}

/// Which auxiliaries carry information about their sources.
fn carrying(j: &JointPmf) -> Result<[bool; 3]> {
    Ok([
        j.mutual_information(&["V0"], &["S1", "S2"], &[])? > INACTIVE_INFO,
        j.mutual_information(&["V1"], &["S1"], &["V0"])? > INACTIVE_INFO,
        j.mutual_information(&["V2"], &["S2"], &["V0"])? > INACTIVE_INFO,
    ])
}

fn keep<'b>(labels: &[&'b str], on: &[bool; 3]) -> Vec<&'b str> {
    labels
        .iter()
        .copied()
        .filter(|l| match *l {
            "V0" => on[0],
            "V1" => on[1],
            "V2" => on[2],
            _ => true,
        })
        .collect()
}

/// The four margins for a joint built either way. `y` names the channel
/// output coordinate.
fn margins_of(j: &JointPmf, target: Target, on: &[bool; 3]) -> Result<[Option<f64>; 4]> {
    let term = |msgs: &[&str], cond: &[&str], src: &[&str], who: &[usize], rhs_rate: Option<f64>| -> Result<Option<f64>> {
        if !who.iter().any(|&k| on[k]) {
            return Ok(None);
        }
        let m = keep(msgs, on);
        let c = keep(cond, on);
        let lhs = j.mutual_information(&m, src, &c)?;
        let rhs = match rhs_rate {
            Some(r) => r,
            None => j.mutual_information(&m, &["Y"], &c)?,
        };
        Ok(Some(rhs - lhs))
    };
    match target {
        Target::Channel(_) => Ok([
            term(&["V1"], &["V0", "V2"], &["S1"], &[1], None)?,
            term(&["V2"], &["V0", "V1"], &["S2"], &[2], None)?,
            term(&["V1", "V2"], &["V0"], &["S1", "S2"], &[1, 2], None)?,
            term(&["V0", "V1", "V2"], &[], &["S1", "S2"], &[0, 1, 2], None)?,
        ]),
        Target::Rates(r1, r2) => Ok([
            term(&["V1"], &["V0", "V2"], &["S1"], &[1], Some(r1))?,
            term(&["V2"], &["V0", "V1"], &["S2"], &[2], Some(r2))?,
            None,
            term(&["V0", "V1", "V2"], &[], &["S1", "S2"], &[0, 1, 2], Some(r1 + r2))?,
        ]),
    }
}

/// Bayes decoder for one source given the decoder's observations.
fn best_reconstruction(
    j: &JointPmf,
    source: &str,
    dist: &[Vec<f64>],
    observed: &[&str],
    dims: [usize; 4],
) -> Result<(f64, Vec<usize>)> {
    let mut labels = vec![source];
    labels.extend_from_slice(observed);
    let m = j.marginal(&labels)?;
    let shape = m.shape();
    let ctx: usize = shape[1..].iter().product();
    let nhat = dist[0].len();
    let mut cost = vec![0.0; ctx * nhat];
    m.for_each(|idx, p| {
        if p > 0.0 {
            let mut c = 0;
            for (d, &i) in idx[1..].iter().enumerate() {
                c = c * shape[d + 1] + i;
            }
            for h in 0..nhat {
                cost[c * nhat + h] += p * dist[idx[0]][h];
            }
        }
    });
    let mut choice = vec![0; ctx];
    let mut total = 0.0;
    for c in 0..ctx {
        let row = &cost[c * nhat..(c + 1) * nhat];
        let mut best = 0;
        for h in 1..nhat {
            if row[h] < row[best] {
                best = h;
            }
        }
        choice[c] = best;
        total += row[best];
    }
    // spread over the full (v0, v1, v2, y) index, ignoring unobserved auxiliaries
    let full: usize = dims.iter().product();
    let names = ["V0", "V1", "V2", "Y"];
    let mut table = vec![0; full];
    for (flat, slot) in table.iter_mut().enumerate() {
        let mut rem = flat;
        let mut coords = [0; 4];
        for d in (0..4).rev() {
            coords[d] = rem % dims[d];
            rem /= dims[d];
        }
        let mut c = 0;
        for (k, o) in observed.iter().enumerate() {
            let d = names.iter().position(|n| n == o).expect("observed label");
            c = c * shape[k + 1] + coords[d];
        }
        *slot = choice[c];
    }
    Ok((total, table))
}

fn evaluate(setup: &Setup, scheme: &Scheme) -> Result<Evaluation> {
    let j = scheme_joint(setup, scheme)?;
    let on = carrying(&j)?;
    let margins = margins_of(&j, setup.target, &on)?;
    let mut observed = keep(&["V0", "V1", "V2"], &on);
    let ny = match setup.target {
        Target::Channel(ch) => {
            observed.push("Y");
            ch.y.len()
        }
        Target::Rates(..) => 1,
    };
    let [c0, c1, c2] = scheme.cardinalities;
    let dims = [c0, c1, c2, ny];
    let (d1, s_hat1) = best_reconstruction(&j, "S1", &setup.dist.d1, &observed, dims)?;
    let (d2, s_hat2) = best_reconstruction(&j, "S2", &setup.dist.d2, &observed, dims)?;
    Ok(Evaluation { d1, d2, margins, s_hat1, s_hat2 })
}

fn accepts(setup: &Setup, e: &Evaluation) -> bool {
    e.d1 <= setup.d1 + 1e-12 && e.d2 <= setup.d2 + 1e-12 && e.margins.iter().flatten().all(|m| *m > STRICT_SLACK)
}

fn onehot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Digits of `index` in a mixed radix, least significant first.
struct Digits {
    index: usize,
}

impl Digits {
    fn take(&mut self, radix: usize) -> usize {
        let d = self.index % radix;
        self.index /= radix;
        d
    }
}

fn count_deterministic(setup: &Setup, card: [usize; 3]) -> Option<usize> {
    let [n0, n1, n2] = setup.n;
    let [c0, c1, c2] = card;
    let mut total: usize = 1;
    let mut mul = |base: usize, exp: usize| -> Option<()> {
        for _ in 0..exp {
            total = total.checked_mul(base)?;
        }
        Some(())
    };
    mul(c0, n0)?;
    mul(c1, n1 * c0)?;
    mul(c2, n2 * c0)?;
    if let Some((x1, x2, _)) = setup.inputs() {
        mul(x1, c0 * c1 * n1)?;
        mul(x2, c0 * c2 * n2)?;
    }
    Some(total)
}

fn deterministic_scheme(setup: &Setup, card: [usize; 3], index: usize) -> Scheme {
    let [n0, n1, n2] = setup.n;
    let [c0, c1, c2] = card;
    let mut d = Digits { index };
    let p_v0 = (0..n0).map(|_| onehot(c0, d.take(c0))).collect();
    let p_v1 = (0..n1).map(|_| (0..c0).map(|_| onehot(c1, d.take(c1))).collect()).collect();
    let p_v2 = (0..n2).map(|_| (0..c0).map(|_| onehot(c2, d.take(c2))).collect()).collect();
    let (x1, x2) = match setup.inputs() {
        Some((a, b, _)) => (
            (0..c0).map(|_| (0..c1).map(|_| (0..n1).map(|_| d.take(a)).collect()).collect()).collect(),
            (0..c0).map(|_| (0..c2).map(|_| (0..n2).map(|_| d.take(b)).collect()).collect()).collect(),
        ),
        None => (vec![], vec![]),
    };
    Scheme { cardinalities: card, p_v0, p_v1, p_v2, x1, x2 }
}

/// A random point of the probability simplex: a lattice point of
/// resolution `grid` or a flat Dirichlet draw.
fn simplex_point(rng: &mut ChaCha8Rng, n: usize, grid: usize, lattice: bool) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    if lattice {
        let mut v = vec![0.0; n];
        for _ in 0..grid.max(1) {
            v[rng.random_range(0..n)] += 1.0;
        }
        v.iter().map(|x| x / grid.max(1) as f64).collect()
    } else {
        // normalized unit exponentials are flat-Dirichlet distributed
        let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn random_scheme(setup: &Setup, card: [usize; 3], seed: u64, grid: usize) -> Scheme {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = rng.random_bool(0.5);
    let [n0, n1, n2] = setup.n;
    let [c0, c1, c2] = card;
    let p_v0 = (0..n0).map(|_| simplex_point(&mut rng, c0, grid, lattice)).collect();
    let p_v1 = (0..n1).map(|_| (0..c0).map(|_| simplex_point(&mut rng, c1, grid, lattice)).collect()).collect();
    let p_v2 = (0..n2).map(|_| (0..c0).map(|_| simplex_point(&mut rng, c2, grid, lattice)).collect()).collect();
    let (x1, x2) = match setup.inputs() {
        Some((a, b, _)) => (
            (0..c0).map(|_| (0..c1).map(|_| (0..n1).map(|_| rng.random_range(0..a)).collect()).collect()).collect(),
            (0..c0).map(|_| (0..c2).map(|_| (0..n2).map(|_| rng.random_range(0..b)).collect()).collect()).collect(),
        ),
        None => (vec![], vec![]),
    };
    Scheme { cardinalities: card, p_v0, p_v1, p_v2, x1, x2 }
}

fn cardinality_order(limit: [usize; 3]) -> Vec<[usize; 3]> {
    let mut all = Vec::new();
    for c0 in 1..=limit[0].max(1) {
        for c1 in 1..=limit[1].max(1) {
            for c2 in 1..=limit[2].max(1) {
                all.push([c0, c1, c2]);
            }
        }
    }
    all.sort_by_key(|c| (c.iter().sum::<usize>(), *c));
    all
}

fn certificate(setup: &Setup, scheme: Scheme, e: Evaluation, cfg: &DiscreteSearchConfig) -> InnerCertificate {
    InnerCertificate {
        scheme,
        common_part: setup.common.clone(),
        s_hat1: e.s_hat1,
        s_hat2: e.s_hat2,
        d1: e.d1,
        d2: e.d2,
        margins: e.margins,
        cardinality_limit: cfg.max_cardinality,
    }
}

fn search(setup: &Setup, cfg: &DiscreteSearchConfig) -> Result<Option<InnerCertificate>> {
    for (ci, card) in cardinality_order(cfg.max_cardinality).into_iter().enumerate() {
        let try_one = |scheme: Scheme| -> Option<(Scheme, Evaluation)> {
            let e = evaluate(setup, &scheme).ok()?;
            accepts(setup, &e).then_some((scheme, e))
        };
        if let Some(count) = count_deterministic(setup, card).filter(|&c| c <= cfg.enumerate_limit) {
            if let Some((s, e)) = (0..count).into_par_iter().find_map_first(|i| try_one(deterministic_scheme(setup, card, i))) {
                return Ok(Some(certificate(setup, s, e, cfg)));
            }
        }
        let found = (0..cfg.samples).into_par_iter().find_map_first(|i| {
            try_one(random_scheme(setup, card, mix_seed(cfg.seed, ci as u64, i as u64), cfg.grid))
        });
        if let Some((s, e)) = found {
            return Ok(Some(certificate(setup, s, e, cfg)));
        }
    }
    Ok(None)
}

/// Looks for a scheme showing `(d1, d2)` lies in the inner bound for
/// sending `source` over `channel`.
pub fn certify_inner_point(
    source: &JointPmf,
    channel: &ChannelPmf,
    d1: f64,
    d2: f64,
    dist: &DistortionTables,
    cfg: &DiscreteSearchConfig,
) -> Result<Option<InnerCertificate>> {
    let setup = Setup::new(source, dist, Target::Channel(channel), d1, d2)?;
    search(&setup, cfg)
}

/// Same search for distributed source coding at rates `(r1, r2)` nats.
pub fn dsc_inner_check(
    source: &JointPmf,
    r1: f64,
    r2: f64,
    d1: f64,
    d2: f64,
    dist: &DistortionTables,
    cfg: &DiscreteSearchConfig,
) -> Result<Option<InnerCertificate>> {
    if !(r1 >= 0.0 && r2 >= 0.0) {
        return Err(Error::InvalidInput("rates must be non-negative".into()));
    }
    let setup = Setup::new(source, dist, Target::Rates(r1, r2), d1, d2)?;
    search(&setup, cfg)
}

/// Recomputed figures of merit of a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Revalidation {
    pub d1: f64,
    pub d2: f64,
    pub margins: [Option<f64>; 4],
}

/// Rebuilds the full joint of sources, common part, auxiliaries, inputs,
/// output and reconstructions from the certificate tables and recomputes
/// everything from it.
pub fn revalidate(
    cert: &InnerCertificate,
    source: &JointPmf,
    channel: Option<&ChannelPmf>,
    rates: Option<(f64, f64)>,
    dist: &DistortionTables,
) -> Result<Revalidation> {
    let s = &cert.scheme;
    let [c0, c1, c2] = s.cardinalities;
    let cp = extract_common_part(source)?;
    let num = |n: usize| (0..n).map(|i| format!("#{i}")).collect::<Vec<_>>();
    let j = source.renamed(&["S1", "S2"])?;
    let j = j.extend_fn("S0", cp.size, &["S1"], |p| cp.f1[p[0]])?;
    let j = j.extend("V0", num(c0), &["S0"], |p| s.p_v0[p[0]].clone())?;
    let j = j.extend("V1", num(c1), &["V0", "S1"], |p| s.p_v1[p[1]][p[0]].clone())?;
    let j = j.extend("V2", num(c2), &["V0", "S2"], |p| s.p_v2[p[1]][p[0]].clone())?;
    let (j, target, ny) = match (channel, rates) {
        (Some(ch), _) => {
            let (a, b, _) = ch.sizes();
            let j = j.extend_fn("X1", a, &["V0", "V1", "S1"], |p| s.x1[p[0]][p[1]][p[2]])?;
            let j = j.extend_fn("X2", b, &["V0", "V2", "S2"], |p| s.x2[p[0]][p[1]][p[2]])?;
            let j = j.extend("Y", ch.y.clone(), &["X1", "X2"], |p| ch.table[p[0]][p[1]].clone())?;
            (j, Target::Channel(ch), ch.y.len())
        }
        (None, Some((r1, r2))) => (j.extend_fn("Y", 1, &[], |_| 0)?, Target::Rates(r1, r2), 1),
        (None, None) => return Err(Error::InvalidInput("need a channel or a rate pair".into())),
    };
    let at = |p: &[usize]| ((p[0] * c1 + p[1]) * c2 + p[2]) * ny + p[3];
    let h1 = dist.d1[0].len();
    let h2 = dist.d2[0].len();
    let j = j.extend_fn("R1", h1, &["V0", "V1", "V2", "Y"], |p| cert.s_hat1[at(p)])?;
    let j = j.extend_fn("R2", h2, &["V0", "V1", "V2", "Y"], |p| cert.s_hat2[at(p)])?;
    let expected = |a: &str, b: &str, d: &[Vec<f64>]| -> Result<f64> {
        let m = j.marginal(&[a, b])?;
        let mut t = 0.0;
        m.for_each(|idx, p| t += p * d[idx[0]][idx[1]]);
        Ok(t)
    };
    let d1 = expected("S1", "R1", &dist.d1)?;
    let d2 = expected("S2", "R2", &dist.d2)?;
    // the common part is a function of each source, so including it is free
    let on = [
        j.mutual_information(&["V0"], &["S0"], &[])? > INACTIVE_INFO,
        j.mutual_information(&["V1"], &["S1", "S0"], &["V0"])? > INACTIVE_INFO,
        j.mutual_information(&["V2"], &["S2", "S0"], &["V0"])? > INACTIVE_INFO,
    ];
    let margins = margins_of(&j, target, &on)?;
    Ok(Revalidation { d1, d2, margins })
}

/// Witness for lossless transmission: `p_W`, `p_{X1|S1,W}`, `p_{X2|S2,W}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosslessWitness {
    pub p_w: Vec<f64>,
    /// `p_x1[w][s1][x1]`.
    pub p_x1: Vec<Vec<Vec<f64>>>,
    pub p_x2: Vec<Vec<Vec<f64>>>,
    /// Right minus left side of the four entropy conditions, in nats.
    pub margins: [f64; 4],
}

fn lossless_margins(
    source: &JointPmf,
    cp: &CommonPart,
    ch: &ChannelPmf,
    w: &LosslessWitness,
) -> Result<[f64; 4]> {
    let nw = w.p_w.len();
    let num = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
    let j = source.renamed(&["S1", "S2"])?;
    let j = j.extend_fn("S0", cp.size, &["S1"], |p| cp.f1[p[0]])?;
    let j = j.extend("W", num(nw), &[], |_| w.p_w.clone())?;
    let j = j.extend("X1", ch.x1.clone(), &["W", "S1"], |p| w.p_x1[p[0]][p[1]].clone())?;
    let j = j.extend("X2", ch.x2.clone(), &["W", "S2"], |p| w.p_x2[p[0]][p[1]].clone())?;
    let j = j.extend("Y", ch.y.clone(), &["X1", "X2"], |p| ch.table[p[0]][p[1]].clone())?;
    let h = |a: &[&str], c: &[&str]| -> Result<f64> {
        let ac: Vec<&str> = a.iter().chain(c).copied().collect();
        Ok(j.entropy(&ac)? - j.entropy(c)?)
    };
    Ok([
        j.mutual_information(&["X1"], &["Y"], &["X2", "S2", "W"])? - h(&["S1"], &["S2"])?,
        j.mutual_information(&["X2"], &["Y"], &["X1", "S1", "W"])? - h(&["S2"], &["S1"])?,
        j.mutual_information(&["X1", "X2"], &["Y"], &["S0", "W"])? - h(&["S1", "S2"], &["S0"])?,
        j.mutual_information(&["X1", "X2"], &["Y"], &[])? - h(&["S1", "S2"], &[])?,
    ])
}

/// Searches `|W| ≤ 2` input distributions for which the four lossless
/// conditions hold.
pub fn check_lossless_admissible(
    source: &JointPmf,
    channel: &ChannelPmf,
    cfg: &DiscreteSearchConfig,
) -> Result<Option<LosslessWitness>> {
    let (n1, n2) = two_coordinates(source)?;
    channel.validate()?;
    let cp = extract_common_part(source)?;
    let (a, b, _) = channel.sizes();
    let ok = |w: LosslessWitness| -> Option<LosslessWitness> {
        let m = lossless_margins(source, &cp, channel, &w).ok()?;
        m.iter().all(|x| *x >= -WEAK_TOL).then_some(LosslessWitness { margins: m, ..w })
    };
    let g = cfg.grid.max(1);
    for nw in 1..=2usize {
        let weights: Vec<Vec<f64>> = if nw == 1 {
            vec![vec![1.0]]
        } else {
            (1..g).map(|i| vec![i as f64 / g as f64, 1.0 - i as f64 / g as f64]).collect()
        };
        // deterministic input maps
        let per_w = (a as f64).powi(n1 as i32) * (b as f64).powi(n2 as i32);
        let total = per_w.powi(nw as i32) * weights.len() as f64;
        if total <= cfg.enumerate_limit as f64 {
            let count = total as usize;
            let found = (0..count).into_par_iter().find_map_first(|i| {
                let mut d = Digits { index: i };
                let p_w = weights[d.take(weights.len())].clone();
                let p_x1 = (0..nw).map(|_| (0..n1).map(|_| onehot(a, d.take(a))).collect()).collect();
                let p_x2 = (0..nw).map(|_| (0..n2).map(|_| onehot(b, d.take(b))).collect()).collect();
                ok(LosslessWitness { p_w, p_x1, p_x2, margins: [0.0; 4] })
            });
            if found.is_some() {
                return Ok(found);
            }
        }
        let found = (0..cfg.samples).into_par_iter().find_map_first(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 100 + nw as u64, i as u64));
            let lattice = rng.random_bool(0.5);
            let p_w = simplex_point(&mut rng, nw, g, lattice);
            let p_x1 = (0..nw).map(|_| (0..n1).map(|_| simplex_point(&mut rng, a, g, lattice)).collect()).collect();
            let p_x2 = (0..nw).map(|_| (0..n2).map(|_| simplex_point(&mut rng, b, g, lattice)).collect()).collect();
            ok(LosslessWitness { p_w, p_x1, p_x2, margins: [0.0; 4] })
        });
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}

/// Rate bounds (nats) of one input distribution `p_W p_{X1|W} p_{X2|W}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPolytope {
    pub p_w: Vec<f64>,
    pub p_x1: Vec<Vec<f64>>,
    pub p_x2: Vec<Vec<f64>>,
    /// `I(X1; Y | X2 W)`.
    pub i1: f64,
    /// `I(X2; Y | X1 W)`.
    pub i2: f64,
    /// `I(X1 X2; Y | W)`.
    pub i12: f64,
    /// `I(X1 X2; Y)`.
    pub isum: f64,
}

impl CapacityPolytope {
    /// Whether `(r0, r1, r2)` satisfies the four bounds up to `slack`.
    pub fn contains(&self, r: [f64; 3], slack: f64) -> bool {
        r.iter().all(|x| *x >= -slack)
            && r[1] <= self.i1 + slack
            && r[2] <= self.i2 + slack
            && r[1] + r[2] <= self.i12 + slack
            && r[0] + r[1] + r[2] <= self.isum + slack
    }

    /// Corner points with the common rate as large as possible.
    pub fn corner_points(&self) -> Vec<[f64; 3]> {
        let a = self.i1.min(self.i12);
        let b = self.i2.min(self.i12);
        let mut pts = vec![[0.0, 0.0], [a, 0.0], [a, (self.i12 - a).min(b).max(0.0)], [(self.i12 - b).min(a).max(0.0), b], [0.0, b]];
        pts.dedup();
        pts.into_iter().map(|[r1, r2]| [(self.isum - r1 - r2).max(0.0), r1, r2]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRegion {
    pub polytopes: Vec<CapacityPolytope>,
}

impl CapacityRegion {
    pub fn contains(&self, r: [f64; 3], slack: f64) -> bool {
        self.polytopes.iter().any(|p| p.contains(r, slack))
    }
}

fn lattice_points(n: usize, g: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, g: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if n == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / g as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n - 1, left - k, g, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, g, g, &mut Vec::new(), &mut out);
    out
}

/// Polytopes of the common-message capacity region for lattice input
/// distributions of resolution `grid`, with `|W| ≤ 2`.
pub fn capacity_region_common_message(channel: &ChannelPmf, grid: usize) -> Result<CapacityRegion> {
    channel.validate()?;
    if grid == 0 {
        return Err(Error::InvalidInput("grid resolution must be positive".into()));
    }
    let (a, b, _) = channel.sizes();
    let rows1 = lattice_points(a, grid);
    let rows2 = lattice_points(b, grid);
    let mut configs: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = Vec::new();
    for r1 in &rows1 {
        for r2 in &rows2 {
            configs.push((vec![1.0], vec![r1.clone()], vec![r2.clone()]));
        }
    }
    for w in lattice_points(2, grid).into_iter().filter(|w| w[0] > 0.0 && w[1] > 0.0) {
        for r1a in &rows1 {
            for r1b in &rows1 {
                for r2a in &rows2 {
                    for r2b in &rows2 {
                        configs.push((w.clone(), vec![r1a.clone(), r1b.clone()], vec![r2a.clone(), r2b.clone()]));
                    }
                }
            }
        }
    }
    let polytopes = configs
        .into_par_iter()
        .map(|(p_w, p_x1, p_x2)| -> Result<CapacityPolytope> {
            let num = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
            let j = JointPmf::new(vec!["W".into()], vec![num(p_w.len())], p_w.clone())?;
            let j = j.extend("X1", channel.x1.clone(), &["W"], |p| p_x1[p[0]].clone())?;
            let j = j.extend("X2", channel.x2.clone(), &["W"], |p| p_x2[p[0]].clone())?;
            let j = j.extend("Y", channel.y.clone(), &["X1", "X2"], |p| channel.table[p[0]][p[1]].clone())?;
            Ok(CapacityPolytope {
                i1: j.mutual_information(&["X1"], &["Y"], &["X2", "W"])?,
                i2: j.mutual_information(&["X2"], &["Y"], &["X1", "W"])?,
                i12: j.mutual_information(&["X1", "X2"], &["Y"], &["W"])?,
                isum: j.mutual_information(&["X1", "X2"], &["Y"], &[])?,
                p_w,
                p_x1,
                p_x2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CapacityRegion { polytopes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf2(n1: usize, n2: usize, masses: Vec<f64>) -> JointPmf {
        JointPmf::from_sizes(&["A", "B"], &[n1, n2], masses).unwrap()
    }

    fn uniform_pair() -> JointPmf {
        pmf2(2, 2, vec![0.25; 4])
    }

    fn dsbs(p: f64) -> JointPmf {
        pmf2(2, 2, vec![(1.0 - p) / 2.0, p / 2.0, p / 2.0, (1.0 - p) / 2.0])
    }

    fn block4() -> JointPmf {
        let mut m = vec![0.0; 16];
        for a in 0..4 {
            for b in 0..4 {
                if a / 2 == b / 2 {
                    m[a * 4 + b] = 1.0 / 8.0;
                }
            }
        }
        pmf2(4, 4, m)
    }

    fn quick() -> DiscreteSearchConfig {
        DiscreteSearchConfig { samples: 300, ..Default::default() }
    }

    #[test]
    fn common_part_examples() {
        let diag = pmf2(3, 3, vec![0.2, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.3]);
        let cp = extract_common_part(&diag).unwrap();
        assert_eq!((cp.f1.clone(), cp.f2.clone(), cp.size), (vec![0, 1, 2], vec![0, 1, 2], 3));
        assert_eq!(extract_common_part(&uniform_pair()).unwrap().size, 1);
        let cp = extract_common_part(&block4()).unwrap();
        assert_eq!(cp.f1, vec![0, 0, 1, 1]);
        assert_eq!(cp.f2, vec![0, 0, 1, 1]);
        assert_eq!(cp.size, 2);
    }

    #[test]
    fn common_part_is_idempotent() {
        let p = block4();
        let cp = extract_common_part(&p).unwrap();
        let joint = p.renamed(&["S1", "S2"]).unwrap().extend_fn("S0", cp.size, &["S1"], |v| cp.f1[v[0]]).unwrap();
        let again = extract_common_part(&joint.marginal(&["S0", "S1"]).unwrap()).unwrap();
        assert_eq!(again.f1, (0..cp.size).collect::<Vec<_>>());
        assert_eq!(again.size, cp.size);
    }

    /// Every pair of functions that agree on the support factors through
    /// the extracted common part.
    fn assert_maximal(p: &JointPmf) {
        let cp = extract_common_part(p).unwrap();
        let (n1, n2) = (p.shape()[0], p.shape()[1]);
        let k = n1.max(n2);
        let total1 = k.pow(n1 as u32);
        let total2 = k.pow(n2 as u32);
        let digits = |mut i: usize, n: usize| -> Vec<usize> {
            (0..n)
                .map(|_| {
                    let d = i % k;
                    i /= k;
                    d
                })
                .collect()
        };
        let m1: Vec<f64> = (0..n1).map(|a| (0..n2).map(|b| p.get(&[a, b])).sum()).collect();
        for i in 0..total1 {
            let g1 = digits(i, n1);
            for j in 0..total2 {
                let g2 = digits(j, n2);
                let common = (0..n1).all(|a| (0..n2).all(|b| p.get(&[a, b]) == 0.0 || g1[a] == g2[b]));
                if !common {
                    continue;
                }
                // g1 must be constant on every extracted component (on the support)
                for a in 0..n1 {
                    for a2 in 0..n1 {
                        if m1[a] > 0.0 && m1[a2] > 0.0 && cp.f1[a] == cp.f1[a2] {
                            assert_eq!(g1[a], g1[a2]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn common_part_is_maximal() {
        assert_maximal(&block4());
        assert_maximal(&pmf2(3, 3, vec![0.2, 0.1, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.4]));
        assert_maximal(&dsbs(0.2));
        assert_maximal(&pmf2(3, 2, vec![0.5, 0.0, 0.0, 0.25, 0.0, 0.25]));
    }

    #[test]
    fn dsbs_information() {
        let mi = mutual_information(&dsbs(0.1), &["A"], &["B"], &[]).unwrap();
        assert!((mi - 0.3680642071684971).abs() < 1e-12);
    }

    #[test]
    fn constant_reconstruction_is_certified() {
        let ch = ChannelPmf::binary_adder();
        let dist = DistortionTables::hamming(2, 2);
        let cert = certify_inner_point(&dsbs(0.3), &ch, 0.5, 0.5, &dist, &quick()).unwrap().unwrap();
        assert_eq!(cert.scheme.cardinalities, [1, 1, 1]);
        let dsc = dsc_inner_check(&dsbs(0.3), 0.0, 0.0, 0.5, 0.5, &dist, &quick()).unwrap().unwrap();
        assert!(dsc.margins.iter().all(|m| m.is_none()));
        assert!(dsc.d1 <= 0.5);
    }

    #[test]
    fn uncoded_over_noiseless_channel() {
        let ch = ChannelPmf::noiseless(2);
        let dist = DistortionTables::hamming(2, 2);
        let cert = certify_inner_point(&uniform_pair(), &ch, 0.0, 0.0, &dist, &quick()).unwrap().unwrap();
        assert_eq!((cert.d1, cert.d2), (0.0, 0.0));
        let r = revalidate(&cert, &uniform_pair(), Some(&ch), None, &dist).unwrap();
        assert!(r.d1.abs() < 1e-12 && r.d2.abs() < 1e-12);
    }

    #[test]
    fn useless_channel_gives_nothing() {
        let ch = ChannelPmf::useless(2, 2);
        let dist = DistortionTables::hamming(2, 2);
        assert!(certify_inner_point(&uniform_pair(), &ch, 0.0, 0.0, &dist, &quick()).unwrap().is_none());
    }

    #[test]
    fn certificates_revalidate() {
        let dist = DistortionTables::hamming(2, 2);
        let ch = ChannelPmf::binary_adder();
        let cases = [(dsbs(0.1), 0.1, 0.1), (dsbs(0.2), 0.3, 0.2), (uniform_pair(), 0.3, 0.3)];
        let mut found = 0;
        for (src, d1, d2) in cases {
            if let Some(cert) = certify_inner_point(&src, &ch, d1, d2, &dist, &quick()).unwrap() {
                found += 1;
                let r = revalidate(&cert, &src, Some(&ch), None, &dist).unwrap();
                assert!((r.d1 - cert.d1).abs() < 1e-9 && (r.d2 - cert.d2).abs() < 1e-9);
                for (a, b) in r.margins.iter().zip(&cert.margins) {
                    match (a, b) {
                        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                        (None, None) => {}
                        _ => panic!("vacuity differs"),
                    }
                }
            }
        }
        assert!(found >= 2);
    }

    #[test]
    fn slepian_wolf_rates() {
        let src = dsbs(0.1);
        let dist = DistortionTables::hamming(2, 2);
        let h1 = src.entropy(&["A"]).unwrap();
        let h12 = src.entropy(&["A", "B"]).unwrap();
        let eps = 1e-3;
        let cert = dsc_inner_check(&src, h1 + eps, h1 + eps, 0.0, 0.0, &dist, &quick()).unwrap();
        let cert = cert.expect("lossless at full rates");
        let r = revalidate(&cert, &src, None, Some((h1 + eps, h1 + eps)), &dist).unwrap();
        assert!(r.d1.abs() < 1e-12 && r.margins.iter().flatten().all(|m| *m > 0.0));
        // below the joint entropy nothing lossless exists
        let r = 0.45 * h12;
        assert!(dsc_inner_check(&src, r, r, 0.0, 0.0, &dist, &quick()).unwrap().is_none());
    }

    #[test]
    fn common_free_search_respects_the_reduced_region() {
        let cfg = DiscreteSearchConfig { max_cardinality: [1, 2, 2], ..quick() };
        let ch = ChannelPmf::binary_adder();
        let dist = DistortionTables::hamming(2, 2);
        let src = dsbs(0.15);
        for d in [0.1, 0.2, 0.3] {
            if let Some(c) = certify_inner_point(&src, &ch, d, d, &dist, &cfg).unwrap() {
                assert_eq!(c.scheme.cardinalities[0], 1);
                // the three constraints without a common layer are the first three
                assert!(c.margins[..3].iter().flatten().all(|m| *m > STRICT_SLACK));
            }
        }
    }

    #[test]
    fn lossless_examples() {
        let cfg = quick();
        let det = pmf2(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(check_lossless_admissible(&det, &ChannelPmf::useless(2, 2), &cfg).unwrap().is_some());
        // two uniform bits cannot pass the adder (at most log 3 nats)
        assert!(check_lossless_admissible(&uniform_pair(), &ChannelPmf::binary_adder(), &cfg).unwrap().is_none());
        let w = check_lossless_admissible(&uniform_pair(), &ChannelPmf::noiseless(2), &cfg).unwrap().unwrap();
        assert!(w.margins.iter().all(|m| *m >= -WEAK_TOL));
        // a shared bit passes the adder when sent coherently
        let shared = pmf2(2, 2, vec![0.5, 0.0, 0.0, 0.5]);
        assert!(check_lossless_admissible(&shared, &ChannelPmf::binary_adder(), &cfg).unwrap().is_some());
    }

    #[test]
    fn common_message_corners() {
        let bit = 2f64.ln();
        let region = capacity_region_common_message(&ChannelPmf::noiseless(2), 4).unwrap();
        let slack = 0.02 * bit;
        assert!(region.contains([0.0, bit, bit], slack));
        assert!(region.contains([2.0 * bit, 0.0, 0.0], slack));
        assert!(!region.contains([2.0 * bit, bit, 0.0], slack));
        let dead = capacity_region_common_message(&ChannelPmf::useless(2, 2), 4).unwrap();
        assert!(dead.contains([0.0, 0.0, 0.0], 1e-12));
        assert!(!dead.contains([1e-6, 0.0, 0.0], 1e-12));
        for p in &dead.polytopes {
            assert!(p.corner_points().iter().all(|c| c.iter().all(|x| x.abs() < 1e-12)));
        }
    }
}
