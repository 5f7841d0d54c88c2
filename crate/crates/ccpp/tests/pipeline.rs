//! Baselines against the conformal encodings, and experiment outputs.

use ccpp::baselines::{encode_sa, encode_saa, saa_threshold};
use ccpp::bench::{bundled, emit_outputs, run_experiment, ExperimentConfig, Method, MethodOptions, HIST_BINS};
use ccpp::encode::encode_mip;
use ccpp::problem::{load_problem_str, sample, CcoProblem};
use ccpp::quantile::{empirical_quantile, ConformalLevel};
use ccpp::solve::{solve_bnb, SolveConfig};
use proptest::prelude::*;

fn problem(a: [f64; 2], c: [f64; 2], delta: f64) -> CcoProblem {
    let text = serde_json::json!({
        "n": 2, "d": 2,
        "objective": format!("{}*x[0] + {}*x[1]", c[0], c[1]),
        "chance": [format!("{}*x[0] + {}*x[1] + y[0]*x[0] - y[1] - 1", a[0], a[1])],
        "delta": delta,
        "bounds": [[-2, 2], [-2, 2]],
        "distribution": {"kind": "iid", "count": 2, "component": {"kind": "normal", "mean": 0, "variance": 1}}
    });
    load_problem_str(&text.to_string()).unwrap().problem
}

fn cfg() -> SolveConfig {
    SolveConfig {
        multistart: 2,
        ..SolveConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenario_points_are_conformal_feasible(
        a in prop::array::uniform2(-1.5f64..1.5),
        c in prop::array::uniform2(-1.0f64..1.0),
        seed in 0u64..1000,
        delta in 0.15f64..0.5,
    ) {
        let p = problem(a, c, delta);
        let train = sample(&ccpp::problem::Distribution::Iid {
            count: 2,
            component: Box::new(ccpp::problem::Distribution::Normal { mean: 0.0, variance: 1.0 }),
        }, 10, seed).unwrap();
        let level = ConformalLevel::new(delta, 10).unwrap();
        let sa = solve_bnb(&encode_sa(&p, &train).unwrap(), &cfg()).unwrap();
        let cpp = solve_bnb(&encode_mip(&p, &train, &level).unwrap(), &cfg()).unwrap();
        if sa.has_point() {
            let scores = p.chance_scores(&sa.x, &train).unwrap().remove(0);
            prop_assert!(empirical_quantile(&scores, &level).unwrap() <= 1e-9);
            prop_assert!(cpp.has_point());
            prop_assert!(cpp.objective <= sa.objective + 1e-6);
        }
        // SAA enforcing at least as many samples as the conformal rank is
        // at least as conservative.
        let omega = 0.05;
        if saa_threshold(10, omega) >= level.rank {
            let saa = solve_bnb(&encode_saa(&p, &train, omega, 0.0).unwrap(), &cfg()).unwrap();
            if saa.has_point() {
                prop_assert!(cpp.objective <= saa.objective + 1e-6);
            }
        }
    }

    #[test]
    fn tightening_never_improves_the_objective(
        a in prop::array::uniform2(-1.5f64..1.5),
        c in prop::array::uniform2(-1.0f64..1.0),
        seed in 0u64..1000,
        chi in 0.0f64..0.5,
    ) {
        let mut p = problem(a, c, 0.3);
        let train = sample(&ccpp::problem::Distribution::Iid {
            count: 2,
            component: Box::new(ccpp::problem::Distribution::Normal { mean: 0.0, variance: 1.0 }),
        }, 8, seed).unwrap();
        let level = ConformalLevel::new(0.3, 8).unwrap();
        let loose = encode_mip(&p, &train, &level).map(|g| solve_bnb(&g, &cfg()).unwrap());
        p.chi = chi;
        let tight = encode_mip(&p, &train, &level).map(|g| solve_bnb(&g, &cfg()).unwrap());
        if let (Ok(l), Ok(t)) = (loose, tight) {
            if t.has_point() {
                prop_assert!(l.has_point());
                prop_assert!(l.objective <= t.objective + 1e-6);
            }
        }
    }
}

#[test]
fn experiment_outputs_conserve_counts() {
    let inst = bundled("case1").unwrap().unwrap();
    let cfg = ExperimentConfig {
        trials: 300,
        k: 50,
        l: 200,
        v: 100,
        seed: 9,
        options: MethodOptions::new(Method::CppMip),
    };
    let (reports, summary) = run_experiment(&inst, &cfg).unwrap();
    assert_eq!(reports.len(), 300);
    assert!(reports.iter().enumerate().all(|(i, r)| r.trial == i));
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&reports, &summary, dir.path(), false).unwrap();
    let table = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(table.lines().count(), 301);
    for metric in ["bound", "objective", "ec0", "ecc"] {
        let mut r = csv::Reader::from_path(dir.path().join(format!("hist_{metric}.csv"))).unwrap();
        let counts: Vec<usize> = r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect();
        assert_eq!(counts.len(), HIST_BINS);
        assert_eq!(counts.iter().sum::<usize>(), summary.with_point, "{metric}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["trials"], 300);
    assert_eq!(json["method"], "cpp-mip");
}

#[test]
fn single_trial_smoke_run() {
    for (name, method) in [("jcco", Method::Union), ("case1", Method::Sa), ("case1", Method::Penalty)] {
        let inst = bundled(name).unwrap().unwrap();
        let cfg = ExperimentConfig {
            trials: 1,
            k: 60,
            l: 300,
            v: 200,
            seed: 1,
            options: MethodOptions::new(method),
        };
        let (reports, summary) = run_experiment(&inst, &cfg).unwrap();
        assert_eq!(summary.trials, 1);
        assert!(reports[0].has_point(), "{name} {method}: {:?}", reports[0]);
        assert!((0.0..=1.0).contains(&reports[0].ec0));
    }
}

#[test]
fn undersized_experiments_are_rejected() {
    let inst = bundled("case1").unwrap().unwrap();
    let cfg = ExperimentConfig {
        trials: 1,
        k: 10,
        l: 10,
        v: 10,
        seed: 0,
        options: MethodOptions::new(Method::CppMip),
    };
    assert!(run_experiment(&inst, &cfg).is_err());
}
