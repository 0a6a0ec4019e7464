//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mac_jscc::correlation::{run_property_suite, Suite};
use mac_jscc::discrete::{
    capacity_region_common_message, dsc_inner_check, extract_common_part, DiscreteSearchConfig, DistortionTables,
};
use mac_jscc::gaussian::{conditional_rho, empirical_covariance, mmse_reduce, sample_sources};
use mac_jscc::hybrid::{embed_uncoded, evaluate_hybrid, hybrid_joint_covariance, simulate_uncoded, uncoded_distortions};
use mac_jscc::outer::{corollary_membership, is_outer_member, rd_joint, rd_joint_given_common, OuterGrid};
use mac_jscc::pmf::ChannelPmf;
use mac_jscc::sweep::{run_sweep, Curve, RegionSample, SweepSpec};
use mac_jscc::{GaussianProblem, HybridParams, JointPmf, LabeledCovariance, UncodedGains};

type Check = Result<String, String>;

fn random_problem(rng: &mut ChaCha8Rng) -> GaussianProblem {
    loop {
        let p = GaussianProblem::new(
            rng.random_range(-0.95..0.95),
            rng.random_range(-0.95..0.95),
            rng.random_range(-0.95..0.95),
            rng.random_range(0.1..20.0),
            rng.random_range(0.1..20.0),
        );
        if let Ok(p) = p {
            return p;
        }
    }
}

fn random_gains(problem: &GaussianProblem, rng: &mut ChaCha8Rng) -> UncodedGains {
    let circle = |p: f64, rng: &mut ChaCha8Rng| {
        let r = p.sqrt() * rng.random_range(0.0..1.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        (r * a.cos(), r * a.sin())
    };
    let (g10, g11) = circle(problem.p1, rng);
    let (g20, g22) = circle(problem.p2, rng);
    UncodedGains { g10, g11, g20, g22 }
}

fn max_d(r: &RegionSample) -> f64 {
    r.d1.max(r.d2)
}

fn ordering_and_common(rows: &[RegionSample], elapsed: f64) -> (Check, Check) {
    let curve = |c: Curve| rows.iter().filter(|r| r.curve == c).collect::<Vec<_>>();
    let [uc, unc, hc, hnc, oc, onc] = Curve::ALL.map(curve);
    let mut order = Vec::new();
    let mut common = Vec::new();
    let mut worst_outer = f64::INFINITY;
    let mut worst_uncoded = f64::INFINITY;
    for i in 0..uc.len() {
        for (u, h, o) in [(uc[i], hc[i], oc[i]), (unc[i], hnc[i], onc[i])] {
            if let Some(e) = u.error.as_ref().or(h.error.as_ref()).or(o.error.as_ref()) {
                order.push(format!("{} dB: {e}", u.param_db));
                continue;
            }
            if !h.feasible {
                order.push(format!("{} dB {}: infeasible hybrid point", h.param_db, h.curve.name()));
            }
            worst_outer = worst_outer.min(max_d(h) + 1e-6 - o.d1);
            worst_uncoded = worst_uncoded.min(max_d(u) + 1e-9 - max_d(h));
            if o.d1 > max_d(h) + 1e-6 {
                order.push(format!("{} dB {}: outer {} > hybrid {}", o.param_db, o.curve.name(), o.d1, max_d(h)));
            }
            if max_d(h) > max_d(u) + 1e-9 {
                order.push(format!("{} dB {}: hybrid {} > uncoded {}", h.param_db, h.curve.name(), max_d(h), max_d(u)));
            }
        }
        for (c, nc) in [(hc[i], hnc[i]), (uc[i], unc[i])] {
            if max_d(c) > max_d(nc) + 1e-9 {
                common.push(format!("{} dB {}: {} > {}", c.param_db, c.curve.name(), max_d(c), max_d(nc)));
            }
        }
    }
    if elapsed > 600.0 {
        order.push(format!("sweep took {elapsed:.0} s"));
    }
    let first = if order.is_empty() {
        Ok(format!(
            "{} points x 2 configurations, worst slack outer {worst_outer:.3e}, uncoded {worst_uncoded:.3e}, {elapsed:.0} s",
            uc.len()
        ))
    } else {
        Err(order.join("; "))
    };
    let second = if common.is_empty() {
        let gain = (0..hc.len()).map(|i| max_d(hnc[i]) - max_d(hc[i])).fold(f64::INFINITY, f64::min);
        Ok(format!("hybrid and uncoded never worse with the common part (smallest hybrid gain {gain:.3e})"))
    } else {
        Err(common.join("; "))
    };
    (first, second)
}

/// First-principles covariance of `(S0, S1p, S2p, Y)` for the uncoded
/// scheme, built from the innovations `(S0, U1, U2, Z)`.
fn uncoded_covariance(problem: &GaussianProblem, g: &UncodedGains) -> LabeledCovariance {
    let s1 = (1.0 - problem.rho01.powi(2)).sqrt();
    let s2 = (1.0 - problem.rho02.powi(2)).sqrt();
    let c = (problem.rho12 - problem.rho01 * problem.rho02) / (s1 * s2);
    let base = DMatrix::from_row_slice(4, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, c, 0.0, 0.0, c, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let map = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            problem.rho01, s1, 0.0, 0.0, //
            problem.rho02, 0.0, s2, 0.0, //
            g.g10 + g.g20, g.g11, g.g22, 1.0,
        ],
    );
    LabeledCovariance::new(vec!["S0", "S1p", "S2p", "Y"], &map * base * map.transpose()).unwrap()
}

fn uncoded_closed_form_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_problem(&mut rng);
        let g = random_gains(&p, &mut rng);
        let (d1, d2) = uncoded_distortions(&g, &p);
        let cov = uncoded_covariance(&p, &g);
        let m1 = mmse_reduce(&cov, "S1p", &["Y"]).map_err(|e| e.to_string())?.error_variance;
        let m2 = mmse_reduce(&cov, "S2p", &["Y"]).map_err(|e| e.to_string())?.error_variance;
        worst = worst.max((d1 - m1).abs()).max((d2 - m2).abs());
    }
    if worst > 1e-10 {
        return Err(format!("closed form vs MMSE reduction differs by {worst:.3e}"));
    }
    let mut worst_z = 0.0f64;
    for i in 0..20 {
        let p = random_problem(&mut rng);
        let g = random_gains(&p, &mut rng);
        let (d1, d2) = uncoded_distortions(&g, &p);
        let s = simulate_uncoded(&p, &g, 1_000_000, 100 + i).map_err(|e| e.to_string())?;
        worst_z = worst_z.max((s.d1 - d1).abs() / s.std_err1).max((s.d2 - d2).abs() / s.std_err2);
    }
    if worst_z > 3.0 {
        return Err(format!("Monte Carlo off by {worst_z:.2} standard errors"));
    }
    Ok(format!("MMSE max error {worst:.2e}; Monte Carlo worst {worst_z:.2} standard errors"))
}

fn embedding_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_problem(&mut rng);
        let g = random_gains(&p, &mut rng);
        let (d1, d2) = uncoded_distortions(&g, &p);
        let e = embed_uncoded(&g, &p).and_then(|h| evaluate_hybrid(&h, &p)).map_err(|e| e.to_string())?;
        worst = worst.max((e.d1 - d1).abs()).max((e.d2 - d2).abs());
    }
    if worst > 1e-9 {
        return Err(format!("embedded scheme differs by {worst:.3e}"));
    }
    Ok(format!("100 instances, max difference {worst:.2e}"))
}

fn covariance_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for set in 0..10u64 {
        let p = GaussianProblem::symmetric(0.8, 0.8, 0.3, 1.0).unwrap();
        let mut c = || rng.random_range(-0.5..0.5);
        let params = HybridParams {
            f1: [c(), c(), c()],
            f2: [c(), c(), c()],
            g1: [c(), c(), c(), c()],
            g2: [c(), c(), c(), c()],
            omega0: 0.1 + c().abs(),
            omega1: 0.1 + c().abs(),
            omega2: 0.1 + c().abs(),
        };
        let analytic = hybrid_joint_covariance(&params, &p).map_err(|e| e.to_string())?;
        let dec = conditional_rho(&p).map_err(|e| e.to_string())?;
        let src = sample_sources(&p, &dec, n, 500 + set).map_err(|e| e.to_string())?;
        let mut noise = ChaCha8Rng::seed_from_u64(900 + set);
        let mut cols: Vec<Vec<f64>> = (0..7).map(|_| Vec::with_capacity(n)).collect();
        for i in 0..n {
            let mut w = |var: f64| var.sqrt() * noise.sample::<f64, _>(StandardNormal);
            let (s0, s1, s2) = (src.s0[i], src.s1p[i], src.s2p[i]);
            let v0 = s0 + w(params.omega0);
            let v1 = params.f1[0] * s0 + params.f1[1] * s1 + params.f1[2] * v0 + w(params.omega1);
            let v2 = params.f2[0] * s0 + params.f2[1] * s2 + params.f2[2] * v0 + w(params.omega2);
            let x1 = params.g1[0] * s0 + params.g1[1] * s1 + params.g1[2] * v0 + params.g1[3] * v1;
            let x2 = params.g2[0] * s0 + params.g2[1] * s2 + params.g2[2] * v0 + params.g2[3] * v2;
            let y = x1 + x2 + w(1.0);
            for (col, v) in cols.iter_mut().zip([s0, s1, s2, v0, v1, v2, y]) {
                col.push(v);
            }
        }
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let empirical = empirical_covariance(&refs);
        worst = worst.max((analytic.matrix() - empirical).amax());
    }
    if worst > 0.01 {
        return Err(format!("largest entry difference {worst:.4}"));
    }
    Ok(format!("10 parameter sets, largest entry difference {worst:.4}"))
}

fn branch_equal(d1: f64, d2: f64, _rho: f64) -> f64 {
    0.5 * (1.0 / d1.min(d2)).ln()
}

fn branch_independent(d1: f64, d2: f64, rho: f64) -> f64 {
    0.5 * ((1.0 - rho * rho) / (d1 * d2)).ln()
}

fn branch_middle(d1: f64, d2: f64, rho: f64) -> f64 {
    let gap = rho.abs() - ((1.0 - d1) * (1.0 - d2)).sqrt();
    0.5 * ((1.0 - rho * rho) / (d1 * d2 - gap * gap)).ln()
}

fn rd_cases() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let rho: f64 = rng.random_range(0.05..0.95);
        let (d1, d2, a, b): (f64, f64, f64, f64) = if k % 2 == 0 {
            // ρ² = (1 − d2)/(1 − d1): one reconstruction is free given the other
            let d1 = rng.random_range(0.01..0.9);
            let d2 = 1.0 - rho * rho * (1.0 - d1);
            (d1, d2, branch_equal(d1, d2, rho), branch_middle(d1, d2, rho))
        } else {
            // ρ² = (1 − d1)(1 − d2)
            let d1 = rng.random_range(0.01..(1.0 - rho * rho).min(0.95));
            let d2 = 1.0 - rho * rho / (1.0 - d1);
            (d1, d2, branch_independent(d1, d2, rho), branch_middle(d1, d2, rho))
        };
        let at = rd_joint(d1, d2, rho);
        worst = worst.max((a - b).abs()).max((at - a).abs());
        for eps in [1e-12, -1e-12] {
            worst = worst.max((rd_joint(d1, d2 + eps, rho) - at).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("case boundary jump {worst:.3e}"));
    }
    let mut violations = 0;
    for _ in 0..10_000 {
        let rho: f64 = rng.random_range(-1.0..1.0);
        let d1: f64 = rng.random_range(0.001..1.0);
        let d2: f64 = rng.random_range(0.001..1.0);
        let e1: f64 = rng.random_range(0.0..0.2);
        let e2: f64 = rng.random_range(0.0..0.2);
        if rd_joint(d1 + e1, d2 + e2, rho) > rd_joint(d1, d2, rho) + 1e-12 {
            violations += 1;
        }
    }
    if violations > 0 {
        return Err(format!("{violations} monotonicity violations"));
    }
    let mut mismatches = 0;
    for _ in 0..1000 {
        let rho12: f64 = rng.random_range(-0.99..0.99);
        let p = GaussianProblem::symmetric(0.0, 0.0, rho12, 1.0).unwrap();
        let (d1, d2) = (rng.random_range(0.001..1.0), rng.random_range(0.001..1.0));
        if rd_joint_given_common(d1, d2, &p).unwrap() != rd_joint(d1, d2, rho12) {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Err(format!("{mismatches} reductions without common part are not exact"));
    }
    Ok(format!("boundary gap {worst:.2e}; 10^4 monotone probes; exact reduction"))
}

fn corollary_consistency() -> Check {
    let grid = OuterGrid { rho_hat: 51, rho_hat0: 26, beta: 26, ..OuterGrid::default() };
    let mut disagreements = Vec::new();
    let mut members = 0;
    for (rho0, rho12) in [(0.8, 0.3), (0.0, 0.3)] {
        for i in 0..20 {
            let p = 10f64.powf(i as f64 / 19.0 * 2.0);
            let problem = GaussianProblem::symmetric(rho0, rho0, rho12, p).unwrap();
            for j in 0..20 {
                let d = (j as f64 + 0.5) / 20.0;
                let a = corollary_membership(d, &problem, &grid).map_err(|e| e.to_string())?;
                let b = is_outer_member(d, d, &problem, &grid).map_err(|e| e.to_string())?;
                members += a as usize;
                if a != b {
                    disagreements.push(format!("rho0 {rho0}, P {p:.3}, D {d}: {a} vs {b}"));
                }
            }
        }
    }
    if disagreements.is_empty() {
        Ok(format!("2 x 400 (P, D) points agree ({members} members)"))
    } else {
        Err(disagreements.join("; "))
    }
}

fn correlation_suites() -> Check {
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for (suite, count) in [(Suite::Chain, 1000), (Suite::Dpi, 500), (Suite::Tensorization, 100), (Suite::Gaussian, 1_000_000)] {
        let r = run_property_suite(suite, count, 8).map_err(|e| e.to_string())?;
        let line = format!("{:?}: {} violations, worst margin {:.2e}", suite, r.report.violations, r.report.worst_margin);
        if r.report.passed() {
            parts.push(line);
        } else {
            failed.push(format!("{line} ({})", r.report.worst_check));
        }
    }
    if failed.is_empty() {
        Ok(parts.join("; "))
    } else {
        Err(failed.join("; "))
    }
}

fn discrete_cases() -> Check {
    let ln2 = std::f64::consts::LN_2;
    let region = capacity_region_common_message(&ChannelPmf::noiseless(2), 4).map_err(|e| e.to_string())?;
    let slack = 0.02 * ln2;
    for corner in [[0.0, ln2, ln2], [2.0 * ln2, 0.0, 0.0]] {
        if !region.contains(corner, slack) {
            return Err(format!("corner {corner:?} not certified"));
        }
    }
    let p = 0.1;
    let dsbs = JointPmf::from_sizes(&["S1", "S2"], &[2, 2], vec![(1.0 - p) / 2.0, p / 2.0, p / 2.0, (1.0 - p) / 2.0]).unwrap();
    let h12 = dsbs.entropy(&["S1", "S2"]).unwrap();
    let cfg = DiscreteSearchConfig::default();
    let dist = DistortionTables::hamming(2, 2);
    for (r1, r2) in [(0.5 * h12, 0.45 * h12), (0.9 * h12, 0.05 * h12), (0.0, 0.0)] {
        if dsc_inner_check(&dsbs, r1, r2, 0.0, 0.0, &dist, &cfg).map_err(|e| e.to_string())?.is_some() {
            return Err(format!("certificate below the joint entropy at rates ({r1}, {r2})"));
        }
    }
    let mut block = vec![0.0; 16];
    for (s1, s2, m) in [(0, 0, 0.2), (0, 1, 0.05), (1, 0, 0.05), (1, 1, 0.2), (2, 2, 0.15), (2, 3, 0.1), (3, 2, 0.1), (3, 3, 0.15)] {
        block[s1 * 4 + s2] = m;
    }
    let pmf = JointPmf::from_sizes(&["S1", "S2"], &[4, 4], block).unwrap();
    let cp = extract_common_part(&pmf).map_err(|e| e.to_string())?;
    if cp.size != 2 || cp.f1 != vec![0, 0, 1, 1] || cp.f2 != vec![0, 0, 1, 1] {
        return Err(format!("block map {:?} / {:?}", cp.f1, cp.f2));
    }
    Ok("both corners within 0.02 bit, no certificate below H(S1,S2), block map exact".into())
}

fn determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_mac-jscc");
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = |name: &str| configs.join(name).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = [
        vec!["sweep".into(), "--config".into(), cfg("sweep_small.json")],
        vec!["sweep".into(), "--config".into(), cfg("sweep_small.json"), "--pareto".into(), "0.5,2".into()],
        vec!["inner-hybrid".into(), "--config".into(), cfg("hybrid_target.json"), "--seed".into(), "7".into()],
        vec!["inner-uncoded".into(), "--power".into(), "3".into()],
        vec!["outer".into(), "--config".into(), cfg("outer_point.json")],
        vec!["discrete-certify".into(), "--config".into(), cfg("certify_noiseless.json"), "--seed".into(), "3".into()],
        vec!["discrete-certify".into(), "--config".into(), cfg("slepian_wolf.json")],
        vec!["lossless-check".into(), "--config".into(), cfg("lossless_adder.json")],
        vec!["capacity-cm".into(), "--config".into(), cfg("capacity_noiseless.json")],
        vec!["correlation".into(), "--config".into(), cfg("correlation_block.json")],
        vec!["correlation".into(), "--gaussian-rho".into(), "0.5".into(), "--samples".into(), "200000".into()],
        vec!["properties".into(), "--count".into(), "50".into(), "--seed".into(), "11".into()],
        vec!["simulate".into(), "--config".into(), cfg("simulate.json"), "--seed".into(), "5".into()],
    ]
    .to_vec();
    let mut mismatched = Vec::new();
    for args in &runs {
        let run = |threads: &str| {
            Command::new(bin).args(args).args(["--threads", threads]).output().map_err(|e| e.to_string())
        };
        let (a, b) = (run("1")?, run("3")?);
        if a.stdout.is_empty() || a.stdout != b.stdout || a.status.code() != b.status.code() {
            mismatched.push(args[0].clone());
        }
    }
    if mismatched.is_empty() {
        Ok(format!("{} invocations over all 10 subcommands, byte-identical across thread counts", runs.len()))
    } else {
        Err(format!("outputs differ for {}", mismatched.join(", ")))
    }
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, result: Check| match result {
        Ok(detail) => println!("PASS criterion {n:2} ({name}): {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL criterion {n:2} ({name}): {detail}");
        }
    };

    let start = Instant::now();
    let sweep = run_sweep(&SweepSpec::default());
    let elapsed = start.elapsed().as_secs_f64();
    match sweep {
        Ok(out) => {
            let (first, second) = ordering_and_common(&out.rows, elapsed);
            report(1, "bound ordering", first);
            report(2, "common part helps", second);
        }
        Err(e) => {
            report(1, "bound ordering", Err(e.to_string()));
            report(2, "common part helps", Err(e.to_string()));
        }
    }
    report(3, "uncoded closed form", uncoded_closed_form_agreement());
    report(4, "uncoded embedding", embedding_agreement());
    report(5, "hybrid covariance", covariance_oracle());
    report(6, "rate-distortion cases", rd_cases());
    report(7, "symmetric outer bound", corollary_consistency());
    report(8, "correlation suites", correlation_suites());
    report(9, "discrete special cases", discrete_cases());
    report(10, "determinism", determinism());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
