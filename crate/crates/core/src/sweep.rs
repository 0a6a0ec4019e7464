//! Symmetric power sweeps of the uncoded, hybrid and outer bounds, with and
//! without the common part, and CSV emission.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianProblem;
use crate::hybrid::{
    embed_uncoded, evaluate_hybrid, optimize_hybrid_with_starts, optimize_uncoded_with, HybridOptimum, HybridParams,
    HybridSearchConfig, Scalarization, UncodedGains, UncodedOptimum,
};
use crate::outer::{outer_membership, symmetric_outer_min_distortion, OuterGrid};

pub const CSV_HEADER: &str = "curve,param_db,param_linear,d1,d2,feasible,margin_min,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    UncodedC,
    UncodedNc,
    HybridC,
    HybridNc,
    OuterC,
    OuterNc,
}

impl Curve {
    pub const ALL: [Curve; 6] = [Curve::UncodedC, Curve::UncodedNc, Curve::HybridC, Curve::HybridNc, Curve::OuterC, Curve::OuterNc];

    pub fn name(self) -> &'static str {
        match self {
            Curve::UncodedC => "uncoded_c",
            Curve::UncodedNc => "uncoded_nc",
            Curve::HybridC => "hybrid_c",
            Curve::HybridNc => "hybrid_nc",
            Curve::OuterC => "outer_c",
            Curve::OuterNc => "outer_nc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown curve `{s}`")))
    }

    /// Whether the curve runs on the problem with the common part removed.
    pub fn without_common(self) -> bool {
        matches!(self, Curve::UncodedNc | Curve::HybridNc | Curve::OuterNc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerScale {
    Db,
    Linear,
}

impl PowerScale {
    pub fn to_linear(self, v: f64) -> f64 {
        match self {
            PowerScale::Db => 10f64.powf(v / 10.0),
            PowerScale::Linear => v,
        }
    }
}

/// A symmetric power sweep. The powers of `problem` are replaced by each
/// grid value; the `_nc` curves run on the same problem with
/// `ρ01 = ρ02 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub problem: GaussianProblem,
    pub scale: PowerScale,
    pub grid: Vec<f64>,
    pub curves: Vec<Curve>,
    pub seed: u64,
    pub uncoded_resolution: usize,
    pub hybrid: HybridSearchConfig,
    pub outer: OuterGrid,
    /// Fill the `seconds` column; off by default so output is byte-stable.
    pub record_time: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            problem: GaussianProblem { rho01: 0.8, rho02: 0.8, rho12: 0.3, p1: 1.0, p2: 1.0 },
            scale: PowerScale::Db,
            grid: (0..=20).map(f64::from).collect(),
            curves: Curve::ALL.to_vec(),
            seed: 1,
            uncoded_resolution: 64,
            hybrid: HybridSearchConfig::default(),
            outer: OuterGrid { tolerance: 1e-7, ..OuterGrid::default() },
            record_time: false,
        }
    }
}

impl SweepSpec {
    /// Evenly spaced grid of `points` values on `[start, stop]`.
    pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
        match points {
            0 => vec![],
            1 => vec![start],
            n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.curves.is_empty() {
            return Err(Error::InvalidInput("curve set is empty".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("grid is empty".into()));
        }
        if self.grid.iter().any(|v| !v.is_finite()) || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("grid must be finite and strictly increasing".into()));
        }
        if self.scale == PowerScale::Linear && self.grid[0] < 0.0 {
            return Err(Error::InvalidInput("linear powers must be non-negative".into()));
        }
        if self.uncoded_resolution < 2 {
            return Err(Error::InvalidInput("uncoded resolution must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub curve: Curve,
    pub param_db: f64,
    pub param_linear: f64,
    pub d1: f64,
    pub d2: f64,
    pub feasible: bool,
    /// Hybrid: smallest information margin. Uncoded: smallest power slack.
    /// Outer: tightest constraint margin at the reported point.
    pub margin_min: f64,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Hybrid parameters behind a hybrid row, for re-validation on reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPoint {
    pub curve: Curve,
    pub param_linear: f64,
    pub problem: GaussianProblem,
    pub params: HybridParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub rows: Vec<RegionSample>,
    pub hybrid_points: Vec<HybridPoint>,
}

fn mix(seed: u64, i: usize) -> u64 {
    let z = seed ^ (i as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    (z ^ (z >> 31)).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

struct Timed<T> {
    value: Result<T>,
    seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Timed<T> {
    let t = Instant::now();
    let value = f();
    Timed { value, seconds: t.elapsed().as_secs_f64() }
}

fn uncoded_row(o: &Timed<UncodedOptimum>, problem: &GaussianProblem) -> (f64, f64, bool, f64) {
    match &o.value {
        Ok(u) => {
            let (a, b) = u.gains.powers();
            (u.d1, u.d2, u.gains.satisfies(problem), (problem.p1 - a).min(problem.p2 - b))
        }
        Err(_) => (f64::NAN, f64::NAN, false, f64::NAN),
    }
}

fn hybrid_row(o: &Timed<HybridOptimum>) -> (f64, f64, bool, f64) {
    match &o.value {
        Ok(h) => match &h.evaluation {
            Some(e) => (e.d1, e.d2, h.feasible, e.margin_min()),
            None => (f64::NAN, f64::NAN, false, f64::NAN),
        },
        Err(_) => (f64::NAN, f64::NAN, false, f64::NAN),
    }
}

/// The scheme behind an inner-bound row.
#[derive(Debug, Clone, Copy)]
enum Scheme {
    Uncoded(UncodedGains),
    Hybrid(HybridParams),
}

fn point(spec: &SweepSpec, index: usize, value: f64) -> Vec<(RegionSample, Option<Scheme>)> {
    let p = spec.scale.to_linear(value);
    let pc = spec.problem.with_powers(p, p);
    let pn = pc.without_common_part();
    let want = |c: Curve| spec.curves.contains(&c);
    let need_hybrid = want(Curve::HybridC) || want(Curve::HybridNc);
    let need_uncoded = need_hybrid || want(Curve::UncodedC) || want(Curve::UncodedNc);
    let res = spec.uncoded_resolution;
    let scal = Scalarization::MaxDistortion;

    let unc_nc = need_uncoded.then(|| timed(|| optimize_uncoded_with(&pn, res, scal, &[])));
    let unc_c = need_uncoded.then(|| {
        // with ρ0k = 0 the private gain multiplies S_kp itself
        let transferred: Vec<UncodedGains> = unc_nc
            .as_ref()
            .and_then(|u| u.value.as_ref().ok())
            .map(|u| UncodedGains::from_source_coefficients(&pc, 0.0, u.gains.g11, 0.0, u.gains.g22))
            .into_iter()
            .collect();
        timed(|| optimize_uncoded_with(&pc, res, scal, &transferred))
    });
    let cfg = HybridSearchConfig { seed: mix(spec.seed, index), uncoded_resolution: res, ..spec.hybrid };
    let embedded = |u: &Option<Timed<UncodedOptimum>>, problem: &GaussianProblem| -> Vec<HybridParams> {
        u.as_ref()
            .and_then(|u| u.value.as_ref().ok())
            .and_then(|u| embed_uncoded(&u.gains, problem).ok())
            .into_iter()
            .collect()
    };
    let hyb_nc = need_hybrid.then(|| {
        let c = HybridSearchConfig { use_common_part: false, ..cfg };
        timed(|| optimize_hybrid_with_starts(&pn, &c, &embedded(&unc_nc, &pn)))
    });
    let hyb_c = want(Curve::HybridC).then(|| {
        let mut starts = embedded(&unc_c, &pc);
        if let Some(Ok(h)) = hyb_nc.as_ref().map(|h| &h.value) {
            starts.push(h.params.without_common_part());
        }
        timed(|| optimize_hybrid_with_starts(&pc, &cfg, &starts))
    });
    let outer = |problem: &GaussianProblem| {
        timed(|| {
            let d = symmetric_outer_min_distortion(problem, &spec.outer)?;
            let (verdict, _) = outer_membership(d, d, problem, &spec.outer)?;
            Ok((d, verdict.member, verdict.tightest_margin))
        })
    };
    let out_c = want(Curve::OuterC).then(|| outer(&pc));
    let out_nc = want(Curve::OuterNc).then(|| outer(&pn));

    let mut rows = Vec::new();
    let db = 10.0 * p.log10();
    for curve in Curve::ALL.into_iter().filter(|c| want(*c)) {
        let problem = if curve.without_common() { pn } else { pc };
        let (d1, d2, feasible, margin_min, seconds, error, scheme) = match curve {
            Curve::UncodedC | Curve::UncodedNc => {
                let o = if curve == Curve::UncodedC { unc_c.as_ref() } else { unc_nc.as_ref() }.expect("computed");
                let (d1, d2, f, m) = uncoded_row(o, &problem);
                let scheme = o.value.as_ref().ok().map(|u| Scheme::Uncoded(u.gains));
                (d1, d2, f, m, o.seconds, o.value.as_ref().err().map(|e| e.to_string()), scheme)
            }
            Curve::HybridC | Curve::HybridNc => {
                let o = if curve == Curve::HybridC { hyb_c.as_ref() } else { hyb_nc.as_ref() }.expect("computed");
                let scheme = o.value.as_ref().ok().map(|h| Scheme::Hybrid(h.params));
                let (d1, d2, f, m) = hybrid_row(o);
                (d1, d2, f, m, o.seconds, o.value.as_ref().err().map(|e| e.to_string()), scheme)
            }
            Curve::OuterC | Curve::OuterNc => {
                let o = if curve == Curve::OuterC { out_c.as_ref() } else { out_nc.as_ref() }.expect("computed");
                match &o.value {
                    Ok((d, member, m)) => (*d, *d, *member, *m, o.seconds, None, None),
                    Err(e) => (f64::NAN, f64::NAN, false, f64::NAN, o.seconds, Some(e.to_string()), None),
                }
            }
        };
        rows.push((RegionSample {
            curve,
            param_db: db,
            param_linear: p,
            d1,
            d2,
            feasible,
            margin_min,
            seconds: if spec.record_time { seconds } else { 0.0 },
            error,
        }, scheme));
    }
    rows
}

/// Row values of `scheme` run at the powers of `problem`.
fn rescore(scheme: &Scheme, problem: &GaussianProblem) -> Option<(f64, f64, bool, f64)> {
    match scheme {
        Scheme::Uncoded(g) => {
            let (d1, d2) = crate::hybrid::uncoded_distortions(g, problem);
            let (a, b) = g.powers();
            Some((d1, d2, g.satisfies(problem), (problem.p1 - a).min(problem.p2 - b)))
        }
        Scheme::Hybrid(h) => {
            let e = evaluate_hybrid(h, problem).ok()?;
            Some((e.d1, e.d2, e.feasible, e.margin_min()))
        }
    }
}

/// A scheme that works at a lower power still works at a higher one with
/// the same distortions, so each inner-bound row takes the best feasible
/// scheme found at or below its power.
fn monotone_envelope(spec: &SweepSpec, per_point: &mut [Vec<(RegionSample, Option<Scheme>)>]) {
    for curve in [Curve::UncodedC, Curve::UncodedNc, Curve::HybridC, Curve::HybridNc] {
        let mut carried: Option<(f64, Scheme)> = None;
        for rows in per_point.iter_mut() {
            let Some((row, scheme)) = rows.iter_mut().find(|(r, _)| r.curve == curve) else { continue };
            let objective = row.d1.max(row.d2);
            if let Some((best, s)) = carried {
                if !row.feasible || best < objective {
                    let problem = if curve.without_common() { spec.problem.without_common_part() } else { spec.problem }
                        .with_powers(row.param_linear, row.param_linear);
                    if let Some((d1, d2, f, m)) = rescore(&s, &problem).filter(|r| r.2) {
                        row.d1 = d1;
                        row.d2 = d2;
                        row.feasible = f;
                        row.margin_min = m;
                        row.error = None;
                        *scheme = Some(s);
                    }
                }
            }
            if row.feasible {
                if let Some(s) = *scheme {
                    let objective = row.d1.max(row.d2);
                    if carried.is_none_or(|(b, _)| objective < b) {
                        carried = Some((objective, s));
                    }
                }
            }
        }
    }
}

/// Runs every requested curve at every grid point. Module errors flag the
/// affected row and the sweep continues. Rows are sorted by curve, then by
/// grid position.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let mut per_point: Vec<Vec<(RegionSample, Option<Scheme>)>> =
        spec.grid.par_iter().enumerate().map(|(i, v)| point(spec, i, *v)).collect();
    monotone_envelope(spec, &mut per_point);
    let mut rows: Vec<(usize, RegionSample)> = Vec::new();
    let mut hybrid_points = Vec::new();
    for (i, r) in per_point.into_iter().enumerate() {
        for (row, scheme) in r {
            if let Some(Scheme::Hybrid(params)) = scheme {
                let problem = if row.curve.without_common() { spec.problem.without_common_part() } else { spec.problem }
                    .with_powers(row.param_linear, row.param_linear);
                hybrid_points.push(HybridPoint { curve: row.curve, param_linear: row.param_linear, problem, params });
            }
            rows.push((i, row));
        }
    }
    rows.sort_by_key(|(i, s)| (s.curve, *i));
    hybrid_points.sort_by(|a, b| (a.curve, a.param_linear).partial_cmp(&(b.curve, b.param_linear)).expect("finite powers"));
    Ok(SweepOutput { rows: rows.into_iter().map(|(_, s)| s).collect(), hybrid_points })
}

/// One line per row under [`CSV_HEADER`], numbers in shortest round-trip form.
pub fn to_csv(rows: &[RegionSample]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.curve.name(),
            r.param_db,
            r.param_linear,
            r.d1,
            r.d2,
            r.feasible,
            r.margin_min,
            r.seconds
        );
    }
    out
}

/// Parses CSV written by [`to_csv`]. Error messages are not carried.
pub fn from_csv(text: &str) -> Result<Vec<RegionSample>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidInput("missing or unexpected CSV header".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::InvalidInput(format!("bad number `{s}`"))) };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::InvalidInput(format!("expected 8 fields: `{l}`")));
            }
            Ok(RegionSample {
                curve: Curve::parse(f[0])?,
                param_db: num(f[1])?,
                param_linear: num(f[2])?,
                d1: num(f[3])?,
                d2: num(f[4])?,
                feasible: f[5] == "true",
                margin_min: num(f[6])?,
                seconds: num(f[7])?,
                error: None,
            })
        })
        .collect()
}

/// Re-evaluates a reloaded hybrid point; returns `(d1, d2, feasible)`.
pub fn revalidate_hybrid_point(point: &HybridPoint) -> Result<(f64, f64, bool)> {
    let e = evaluate_hybrid(&point.params, &point.problem)?;
    Ok((e.d1, e.d2, e.feasible))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub feasible: bool,
}

/// Trace of the `(D1, D2)` trade-off: minimizes `D1 + λ D2` for each weight.
pub fn pareto_trace(
    problem: &GaussianProblem,
    lambdas: &[f64],
    hybrid: Option<&HybridSearchConfig>,
    uncoded_resolution: usize,
) -> Result<Vec<ParetoPoint>> {
    problem.validate()?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidInput(format!("weight {lambda} must be finite and >= 0")));
            }
            let scal = Scalarization::Weighted { lambda };
            match hybrid {
                None => {
                    let u = optimize_uncoded_with(problem, uncoded_resolution, scal, &[])?;
                    Ok(ParetoPoint { lambda, d1: u.d1, d2: u.d2, feasible: true })
                }
                Some(cfg) => {
                    let h = optimize_hybrid_with_starts(problem, &HybridSearchConfig { scalarization: scal, ..*cfg }, &[])?;
                    let (d1, d2) = h.evaluation.map(|e| (e.d1, e.d2)).unwrap_or((f64::NAN, f64::NAN));
                    Ok(ParetoPoint { lambda, d1, d2, feasible: h.feasible })
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(grid: Vec<f64>) -> SweepSpec {
        SweepSpec {
            grid,
            uncoded_resolution: 16,
            hybrid: HybridSearchConfig { budget: 3000, random_starts: 1, ..Default::default() },
            outer: OuterGrid { rho_hat: 41, rho_hat0: 21, beta: 21, tolerance: 1e-6, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn single_point_gives_one_row_per_curve() {
        let out = run_sweep(&small(vec![5.0])).unwrap();
        assert_eq!(out.rows.len(), 6);
        let names: Vec<_> = out.rows.iter().map(|r| r.curve).collect();
        assert_eq!(names, Curve::ALL.to_vec());
        assert_eq!(out.hybrid_points.len(), 2);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(vec![0.0]);
        s.curves.clear();
        assert!(matches!(run_sweep(&s), Err(Error::InvalidInput(_))));
        assert!(run_sweep(&small(vec![1.0, 1.0])).is_err());
        assert!(run_sweep(&small(vec![])).is_err());
    }

    #[test]
    fn ordering_and_reload() {
        let spec = small(vec![0.0, 10.0]);
        let out = run_sweep(&spec).unwrap();
        let csv = to_csv(&out.rows);
        assert_eq!(from_csv(&csv).unwrap().len(), out.rows.len());
        let get = |c: Curve, i: usize| out.rows.iter().filter(|r| r.curve == c).nth(i).unwrap().d1;
        for i in 0..2 {
            for (u, h, o) in [(Curve::UncodedC, Curve::HybridC, Curve::OuterC), (Curve::UncodedNc, Curve::HybridNc, Curve::OuterNc)] {
                assert!(get(o, i) <= get(h, i) + 1e-6);
                assert!(get(h, i) <= get(u, i) + 1e-9);
            }
            assert!(get(Curve::HybridC, i) <= get(Curve::HybridNc, i) + 1e-9);
            assert!(get(Curve::UncodedC, i) <= get(Curve::UncodedNc, i) + 1e-9);
        }
        let json = serde_json::to_string(&out.hybrid_points).unwrap();
        let back: Vec<HybridPoint> = serde_json::from_str(&json).unwrap();
        for p in &back {
            let (d1, d2, f) = revalidate_hybrid_point(p).unwrap();
            let row = out.rows.iter().find(|r| r.curve == p.curve && r.param_linear == p.param_linear).unwrap();
            assert!((d1 - row.d1).abs() < 1e-9 && (d2 - row.d2).abs() < 1e-9 && f == row.feasible);
        }
    }

    #[test]
    fn deterministic_csv() {
        let mut spec = small(vec![3.0]);
        spec.curves = vec![Curve::HybridC, Curve::OuterNc];
        let a = to_csv(&run_sweep(&spec).unwrap().rows);
        let b = to_csv(&run_sweep(&spec).unwrap().rows);
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
        assert_eq!(a.lines().count(), 3);
    }

    #[test]
    fn pareto_endpoints() {
        let p = GaussianProblem::symmetric(0.8, 0.8, 0.3, 10.0).unwrap();
        let t = pareto_trace(&p, &[0.1, 1.0, 10.0], None, 32).unwrap();
        assert!(t[0].d1 <= t[2].d1 + 1e-9 && t[0].d2 >= t[2].d2 - 1e-9);
    }
}
