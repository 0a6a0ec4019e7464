use mac_jscc::discrete::{certify_inner_point, revalidate, DiscreteSearchConfig, DistortionTables, InnerCertificate};
use mac_jscc::hybrid::HybridSearchConfig;
use mac_jscc::outer::OuterGrid;
use mac_jscc::pmf::ChannelPmf;
use mac_jscc::sweep::{from_csv, revalidate_hybrid_point, run_sweep, to_csv, SweepSpec};
use mac_jscc::JointPmf;

#[test]
fn certificate_survives_json_and_revalidates() {
    // a shared bit plus private noise: the common part is non-trivial
    let source = JointPmf::from_sizes(&["A", "B"], &[4, 4], {
        let mut t = vec![0.0; 16];
        for (a, b, m) in [(0, 0, 0.3), (0, 1, 0.1), (1, 0, 0.05), (1, 1, 0.05), (2, 2, 0.25), (3, 3, 0.25)] {
            t[a * 4 + b] = m;
        }
        t
    })
    .unwrap();
    let channel = ChannelPmf::binary_adder();
    let dist = DistortionTables::hamming(4, 4);
    let cert = certify_inner_point(&source, &channel, 0.3, 0.3, &dist, &DiscreteSearchConfig::default())
        .unwrap()
        .expect("reachable targets are certified");
    let text = serde_json::to_string(&cert).unwrap();
    let back: InnerCertificate = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cert);
    let r = revalidate(&back, &source, Some(&channel), None, &dist).unwrap();
    assert!((r.d1 - cert.d1).abs() < 1e-9 && (r.d2 - cert.d2).abs() < 1e-9);
    assert!(r.d1 <= 0.3 && r.d2 <= 0.3);
    for (a, b) in r.margins.iter().zip(&cert.margins) {
        match (a, b) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9 && *x > 0.0),
            (None, None) => {}
            _ => panic!("carrying pattern changed: {:?} vs {:?}", r.margins, cert.margins),
        }
    }
}

#[test]
fn sweep_csv_is_stable_and_points_revalidate() {
    let spec = SweepSpec {
        grid: vec![2.0, 12.0],
        hybrid: HybridSearchConfig { budget: 2000, random_starts: 1, ..Default::default() },
        outer: OuterGrid { rho_hat: 31, rho_hat0: 16, beta: 16, tolerance: 1e-5, ..Default::default() },
        ..SweepSpec::default()
    };
    let a = run_sweep(&spec).unwrap();
    let b = run_sweep(&spec).unwrap();
    let csv = to_csv(&a.rows);
    assert_eq!(csv, to_csv(&b.rows));
    let reloaded = from_csv(&csv).unwrap();
    assert_eq!(to_csv(&reloaded), csv);
    for p in &a.hybrid_points {
        let row = a.rows.iter().find(|r| r.curve == p.curve && r.param_linear == p.param_linear).unwrap();
        let (d1, d2, feasible) = revalidate_hybrid_point(p).unwrap();
        assert_eq!(feasible, row.feasible);
        assert!((d1 - row.d1).abs() < 1e-12 && (d2 - row.d2).abs() < 1e-12);
    }
}
