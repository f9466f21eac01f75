use heatbound::bounds::PowerPsi;
use heatbound::bsde::{
    bmo_norm_estimate, liyau_bsde_demo, max_principle_check, q_representation_check, riccati_on_torus, solve_bsde_mc,
    submartingale_diagnostic, BsdeProblem, BsdeSpec, EntropicDriver, LiyauDemoConfig, LiyauTerminal, McConfig,
    PsiDriver, Terminal,
};
use heatbound::heatpde::{ScalarField, TorusGrid};

fn cosine() -> BsdeProblem {
    BsdeProblem::new(1.0, Terminal::TorusCosine { a: 0.5 }, vec![0.0]).unwrap()
}

#[test]
fn corrected_residual_is_first_order() {
    let run = |steps: usize| {
        let cfg = McConfig::with_steps(1.0, steps, steps, 4000, 5);
        let stats = solve_bsde_mc(&cosine(), &EntropicDriver, &cfg).unwrap().residual_stats();
        (stats.strong.value, stats.corrected.value)
    };
    let (s1, c1) = run(50);
    let (s2, c2) = run(100);
    assert!((1.5..=3.0).contains(&(c1 / c2)), "corrected ratio {}", c1 / c2);
    // the raw residual only gains a factor √2
    assert!((1.2..1.7).contains(&(s1 / s2)), "strong ratio {}", s1 / s2);
}

#[test]
fn q_representation_holds() {
    for problem in [cosine(), BsdeProblem::new(1.0, Terminal::SmoothStep { a: 0.8, width: 0.5 }, vec![0.2]).unwrap()] {
        let paths = solve_bsde_mc(&problem, &EntropicDriver, &McConfig::with_steps(1.0, 100, 100, 20_000, 4)).unwrap();
        let r = q_representation_check(&paths).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn forward_gaussian_submartingale_matches_closed_form() {
    // Y = log p_{t0+T−t}; under Q the mean of |Z_t|² is |x0|²/s0² + (1/s_t − 1/s0)
    let (t0, x0) = (1.0, 0.5);
    let problem = BsdeProblem::new(1.0, Terminal::ForwardGaussianLog { t0 }, vec![x0]).unwrap();
    let paths = solve_bsde_mc(&problem, &EntropicDriver, &McConfig::with_steps(1.0, 200, 25, 40_000, 8)).unwrap();
    let report = submartingale_diagnostic(&paths, 0.0).unwrap();
    assert!(report.passed);
    let s0 = t0 + 1.0;
    for (t, a) in report.times.iter().zip(&report.a) {
        let s = t0 + 1.0 - t;
        let exact = x0 * x0 / (s0 * s0) + (1.0 / s - 1.0 / s0);
        // Euler weights carry an O(dt) bias on top of sampling noise
        assert!((a.value - exact).abs() < 4.0 * a.stderr + 5e-3, "t={t}: {} vs {exact} +- {}", a.value, a.stderr);
    }
}

#[test]
fn submartingale_with_positive_k() {
    let paths = solve_bsde_mc(&cosine(), &EntropicDriver, &McConfig::with_steps(1.0, 140, 20, 20_000, 2)).unwrap();
    let flat = submartingale_diagnostic(&paths, 0.0).unwrap();
    let tilted = submartingale_diagnostic(&paths, 0.5).unwrap();
    assert!(flat.passed && tilted.passed);
    for (f, t) in flat.a.iter().zip(&tilted.a) {
        assert!(t.value >= f.value);
    }
    assert!(submartingale_diagnostic(&paths, -1.0).is_err());
}

#[test]
fn smooth_step_respects_maximum_principle_and_bmo() {
    let problem = BsdeProblem::new(1.0, Terminal::SmoothStep { a: 0.8, width: 0.5 }, vec![0.0]).unwrap();
    let paths = solve_bsde_mc(&problem, &EntropicDriver, &McConfig::with_steps(1.0, 100, 10, 5000, 6)).unwrap();
    assert!(max_principle_check(&paths, 1e-6).unwrap().passed);
    let bmo = bmo_norm_estimate(&paths, 0.0).unwrap();
    assert!(bmo.value <= 4.0 * 0.8 + 3.0 * bmo.stderr);
    let mid = bmo_norm_estimate(&paths, 0.5).unwrap();
    assert!(mid.value <= bmo.value);
}

#[test]
fn psi_driver_residual_is_small() {
    let driver = PsiDriver(PowerPsi(0.5));
    let paths = solve_bsde_mc(&cosine(), &driver, &McConfig::with_steps(1.0, 200, 200, 2000, 3)).unwrap();
    let stats = paths.residual_stats();
    assert!(stats.weak.value.abs() < 4.0 * stats.weak.stderr + 1e-4, "{:?}", stats.weak);
    assert!(stats.corrected.value < 0.2 * stats.strong.value);
    assert!(paths.y0 > 0.0);
    // the Q-representation is specific to the entropic driver
    assert!(q_representation_check(&paths).is_err());
}

#[test]
fn spec_round_trip_and_offset() {
    let spec: BsdeSpec = serde_json::from_str(
        r#"{"horizon": 1.0, "terminal": {"family": "torus_cosine", "a": 0.5}, "x0": [0.0], "offset": 2.0}"#,
    )
    .unwrap();
    let shifted = BsdeProblem::from_spec(&spec).unwrap();
    let cfg = McConfig::with_steps(1.0, 20, 20, 200, 1);
    let a = solve_bsde_mc(&cosine(), &EntropicDriver, &cfg).unwrap();
    let b = solve_bsde_mc(&shifted, &EntropicDriver, &cfg).unwrap();
    assert!((b.y0 - a.y0 - 2.0).abs() < 1e-14);
    assert!(serde_json::from_str::<BsdeSpec>(r#"{"horizon": 1, "terminal": {"family": "nope"}, "x0": [0]}"#).is_err());
}

#[test]
fn liyau_cosine_terminal_mc_matches_riccati() {
    let cfg = LiyauDemoConfig { terminal: LiyauTerminal::Cosine { eps: 0.3 }, ..LiyauDemoConfig::constant(1.0, 1, 1.0, 20_000, 4) };
    let d = liyau_bsde_demo(&cfg).unwrap();
    assert!(d.mc.stderr > 0.0);
    // discretised drift adds an O(dt) bias
    assert!((d.mc.value - d.oracle).abs() < 3.0 * d.mc.stderr + 2e-3, "{:?} vs {}", d.mc, d.oracle);
    assert!(d.oracle <= 1.0 / (1.0 + 1.0 / (1.3)) + 1e-3);
}

#[test]
fn riccati_constant_data_follows_the_ode() {
    let grid = TorusGrid::periodic(1, 32).unwrap();
    let y0 = ScalarField::from_fn(grid, |_| 2.0).unwrap();
    let snaps = riccati_on_torus(&y0, 2, 1.0, 0.25).unwrap();
    for (k, s) in snaps.iter().enumerate() {
        let t = 0.25 * k as f64;
        let exact = 2.0 / (1.0 + t);
        assert!((s.max() - exact).abs() < 1e-12 && (s.min() - exact).abs() < 1e-12);
    }
}
