use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pslab_cli::{load_config, parse_config, CovSource};
use pslab_core::survival_sim::{case2, case_alternative_theta};
use pslab_core::ProcedureConfig;

fn pslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pslab"))
        .args(args)
        .env_remove("PSLAB_THREADS")
        .output()
        .expect("run pslab")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = pslab(args);
    assert!(
        out.status.success(),
        "pslab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(name)
}

#[test]
fn cor_matrix_two_binary_factors_is_exact() {
    let got = stdout_ok(&["cor-matrix", "--levels", "2,2"]);
    let want = "stratum,1.1,1.2,2.1,2.2\n\
                1.1,1/1,-1/1,-1/1,1/1\n\
                1.2,-1/1,1/1,1/1,-1/1\n\
                2.1,-1/1,1/1,1/1,-1/1\n\
                2.2,1/1,-1/1,-1/1,1/1\n";
    assert_eq!(got, want);
}

#[test]
fn cor_matrix_two_by_three_entries() {
    let got = stdout_ok(&["cor-matrix", "--levels", "2,3"]);
    let rows: Vec<Vec<&str>> = got.lines().map(|l| l.split(',').collect()).collect();
    // Q = 6 - 5 + 1 = 2: sharing factor 1 gives (1 - 2) / 2, factor 2 gives
    // (1 - 3) / 2, nothing shared gives 1 / 2
    assert_eq!(rows[1][1], "1/1");
    assert_eq!(rows[1][2], "-1/2");
    assert_eq!(rows[1][4], "-1/1");
    assert_eq!(rows[1][5], "1/2");
}

#[test]
fn eigen_reports_closed_form_maximum() {
    let got = stdout_ok(&["eigen", "--levels", "2,3"]);
    let max: Vec<&str> = got.lines().filter(|l| l.ends_with(",true")).collect();
    // prod n / Q = 6 / 2
    assert!(!max.is_empty());
    assert!(max.iter().all(|l| l.contains(",3/1,")), "{got}");
    let mult: usize = got
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(mult, 6);
}

#[test]
fn eigen_basis_file_has_one_row_per_vector() {
    let dir = tempfile::tempdir().unwrap();
    let basis = dir.path().join("basis.csv");
    stdout_ok(&[
        "eigen",
        "--levels",
        "2,2,3",
        "--basis",
        basis.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(basis).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
}

#[test]
fn bad_invocations_fail_with_message() {
    let out = pslab(&["frobnicate"]);
    assert!(!out.status.success());
    let out = pslab(&["cor-matrix", "--levels", "1,2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2"));
    let out = pslab(&["reproduce", "table9"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "levels = 2,2\nbiass = 0.8\n").unwrap();
    let out = pslab(&["simulate-tests", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2: unknown key `biass`"), "{err}");
}

#[test]
fn minimal_config_file_takes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("min.conf");
    std::fs::write(&path, "levels = 3,2\n").unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!(cfg.setup.spec.levels(), &[3, 2]);
    assert_eq!(cfg.setup.procedure, ProcedureConfig::pocock_simon(0.9));
    assert_eq!(cfg.setup.model.theta, 0.0);
    assert_eq!(cfg.setup.design.n, 600);
    assert_eq!(cfg.setup.design.enrollment_months, 29.0);
    assert_eq!(cfg.setup.design.followup_months, 36.0);
    assert_eq!(cfg.setup.design.censor_hazard, 0.01);
    assert_eq!(cfg.replications, 1000);
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.threads, None);
    assert_eq!(cfg.cov_source, CovSource::Analytic { sigma2: None });
    assert!(!cfg.pool_sparse_cells);
}

#[test]
fn case2_preset_matches_published_design() {
    let cfg = load_config(&preset("case2.conf")).unwrap();
    assert_eq!(cfg.setup, case2(case_alternative_theta()));
    assert_eq!(cfg.setup.procedure, ProcedureConfig::pocock_simon(0.9));
    assert_eq!(cfg.setup.design.n, 600);
    assert!((cfg.setup.model.theta - 0.7f64.ln()).abs() < 1e-15);
    assert_eq!(cfg.replications, 5000);
}

#[test]
fn other_presets_parse() {
    for name in ["case1.conf", "four-factor.conf"] {
        load_config(&preset(name)).unwrap();
    }
    let four = load_config(&preset("four-factor.conf")).unwrap();
    assert_eq!(
        four.setup,
        pslab_core::survival_sim::four_factor(
            pslab_core::survival_sim::four_factor_alternative_theta()
        )
    );
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.conf");
    std::fs::write(
        &path,
        format!(
            "levels = 2,2\neffects = 1:2:ln(10), 2:2:ln(5)\ntheta = ln(0.7)\nn = 120\n\
             tests = T_L,T_RL,T_SL,T_S,T_RS,T_PL,T_RPL\nscore_model = 1:2\n\
             cov_per_stratum = 100\ncov_replications = 200\npool_sparse_cells = true\n\
             replications = 40\nseed = 7\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_tests_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        stdout_ok(&[
            "--threads",
            threads,
            "simulate-tests",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        outputs.push((
            std::fs::read(out.join("replications.csv")).unwrap(),
            std::fs::read(out.join("summary.csv")).unwrap(),
        ));
    }
    assert!(outputs[0].0.len() > 1000);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let summary = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert_eq!(summary.lines().count(), 1 + 7);

    // a different seed gives different trials
    let out = dir.path().join("other");
    stdout_ok(&[
        "simulate-tests",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "8",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_ne!(
        std::fs::read(out.join("replications.csv")).unwrap(),
        outputs[0].0
    );
}

#[test]
fn mc_cov_output_feeds_a_file_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let mc = dir.path().join("mc");
    let report = stdout_ok(&[
        "mc-cov",
        "--levels",
        "2,2",
        "--per-stratum",
        "100",
        "--reps",
        "300",
        "--out-dir",
        mc.to_str().unwrap(),
    ]);
    assert!(report.starts_with("configuration,sigma2"));
    for f in ["cov.csv", "mev.csv", "classes.csv"] {
        assert!(mc.join(f).is_file(), "{f}");
    }
    let classes = std::fs::read_to_string(mc.join("classes.csv")).unwrap();
    assert_eq!(classes.lines().count(), 1 + 3);

    let cov = mc.join("cov.csv");
    let text = format!(
        "levels = 2,2\ncov_source = file\ncov_file = {}\ntests = T_RL\nn = 80\nreplications = 5\n",
        cov.display()
    );
    let cfg = parse_config(&text, dir.path()).unwrap();
    let scenario = pslab_cli::commands::build_scenario(&cfg).unwrap();
    assert_eq!(scenario.cov.len(), 16);
    assert!(scenario.cov[0] > 0.1 && scenario.cov[0] < 0.4);

    // unequal prevalence needs an explicit covariance source
    let out = pslab(&[
        "mc-cov",
        "--levels",
        "2,3",
        "--prevalence",
        "0.5,0.5;0.25,0.5,0.25",
        "--n",
        "600",
        "--reps",
        "100",
        "--out-dir",
        dir.path().join("uneq").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(!dir.path().join("uneq/classes.csv").exists());
}

#[test]
fn reproduce_table_a2_two_by_two() {
    let got = stdout_ok(&[
        "reproduce",
        "tableA2",
        "--rows",
        "2 2",
        "--reps",
        "2000",
        "--per-stratum",
        "500",
    ]);
    let lines: Vec<&str> = got.lines().collect();
    assert_eq!(lines.len(), 2);
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(f[0], "2x2");
    let sigma2: f64 = f[1].parse().unwrap();
    assert_eq!(f[2], "0.23509");
    assert!((sigma2 - 0.23509).abs() <= 0.02, "{sigma2}");
    let diff: f64 = f[3].parse().unwrap();
    assert!((diff - (sigma2 - 0.23509).abs()).abs() < 1e-5);
}

#[test]
fn reproduce_test_table_lists_published_values() {
    let got = stdout_ok(&["reproduce", "table3", "--reps", "30", "--sigma2", "0.235"]);
    let lines: Vec<&str> = got.lines().collect();
    assert!(lines[0].starts_with("table,scenario,hypothesis,test,quantity,simulated,published"));
    let t_s_null = lines
        .iter()
        .find(|l| l.starts_with("table3,case2,null,T_S,rate,"))
        .expect("T_S null row");
    assert!(t_s_null.contains(",0.0096,"));
    assert!(lines
        .iter()
        .any(|l| l.contains("n_naive_variance_median,") && l.contains(",139.0959,")));
}

#[test]
fn reproduce_a5_row_selection() {
    let got = stdout_ok(&[
        "reproduce",
        "tableA5",
        "--rows",
        "6",
        "--reps",
        "50",
        "--n",
        "3000",
    ]);
    let lines: Vec<&str> = got.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("\"1/7, 2/7, 4/7\""), "{}", lines[1]);
    assert!(lines[1].contains(",1.00874,"));
}
