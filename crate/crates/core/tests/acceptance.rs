//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test -p pslab-core --test acceptance -- 4 5`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use pslab_core::experiment::{
    analytic_cov, four_factor_battery, monte_carlo_cov, run_scenario, two_factor_battery,
};
use pslab_core::inference::{
    fit_beta0, log_partial_likelihood, logrank_sums, score_components, score_test,
};
use pslab_core::mc_lab::{collect_imbalances, estimate_cov, mev_product};
use pslab_core::published::{table_a1, TABLE_A2, TABLE_A3, TABLE_A4};
use pslab_core::survival_sim::{case1, case2, case_alternative_theta, four_factor};
use pslab_core::theory::{
    constraint_residuals, cor_matrix_for_levels, eigenbasis, is_eigenpair, spectrum, to_f64,
};
use pslab_core::{
    CovEstimate, FactorSpec, Partition, ProcedureConfig, RobustOptions, Scenario, ScenarioResult,
    TrialSetup, WorkingModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_210_601;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn expect(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn within(&mut self, name: &str, x: f64, lo: f64, hi: f64) {
        self.expect(
            (lo..=hi).contains(&x),
            format!("{name}={x:.4} in [{lo}, {hi}]"),
        );
    }

    fn finish(self) -> Outcome {
        let pass = self.failures.is_empty();
        let detail = if pass {
            self.notes.join("; ")
        } else {
            format!("failed: {}", self.failures.join("; "))
        };
        Outcome { pass, detail }
    }
}

fn close5(x: f64, printed: f64) -> bool {
    (x - printed).abs() <= 5e-6 + 1e-12
}

fn criterion_1() -> Outcome {
    let mut c = Check::new();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for row in table_a1() {
        let cor = cor_matrix_for_levels(&row.levels).unwrap();
        let got = to_f64(cor.class_value(row.mask()));
        compared += 1;
        if !close5(got, row.theoretical) {
            mismatches.push(format!(
                "{:?}/{:?}: {got:.6} vs {}",
                row.levels, row.shared, row.theoretical
            ));
        }
    }
    c.expect(
        mismatches.is_empty(),
        format!("{compared} class correlations match to 5 decimals {mismatches:?}"),
    );

    let mut configs: Vec<(Vec<usize>, f64)> = Vec::new();
    configs.extend(TABLE_A2.iter().map(|r| (r.0.to_vec(), r.2)));
    configs.extend(TABLE_A3.iter().map(|r| (r.0.to_vec(), r.2)));
    configs.extend(TABLE_A4.iter().map(|r| (r.0.to_vec(), r.2)));
    let mut bad_lambda = Vec::new();
    let mut bad_constraints = Vec::new();
    let mut bad_basis = Vec::new();
    let mut basis_checked = 0;
    for (levels, printed) in &configs {
        let cor = cor_matrix_for_levels(levels).unwrap();
        if !constraint_residuals(&cor).all_zero() {
            bad_constraints.push(levels.clone());
        }
        let s = spectrum(&cor);
        if !close5(s.lambda_max_f64(), *printed) {
            bad_lambda.push(format!("{levels:?}: {} vs {printed}", s.lambda_max_f64()));
        }
        if cor.num_strata() <= 256 {
            basis_checked += 1;
            let blocks = eigenbasis(&cor);
            let total: usize = blocks.iter().map(|b| b.vectors.len()).sum();
            let exact = blocks.iter().all(|b| {
                b.vectors
                    .iter()
                    .all(|v| is_eigenpair(&cor, &b.eigenvalue, v))
            });
            if total != cor.num_strata()
                || s.multiplicities.iter().sum::<usize>() != cor.num_strata()
                || !exact
            {
                bad_basis.push(levels.clone());
            }
        }
    }
    c.expect(
        bad_constraints.is_empty(),
        format!(
            "constraint residuals exactly zero for {} configurations {bad_constraints:?}",
            configs.len()
        ),
    );
    c.expect(
        bad_lambda.is_empty(),
        format!(
            "lambda_max matches {} published values {bad_lambda:?}",
            configs.len()
        ),
    );
    c.expect(
        bad_basis.is_empty(),
        format!("exact eigenbasis for {basis_checked} configurations {bad_basis:?}"),
    );
    c.finish()
}

fn mc(levels: &[usize], per_stratum: usize, reps: usize) -> (FactorSpec, CovEstimate) {
    let spec = FactorSpec::uniform(levels).unwrap();
    let est = monte_carlo_cov(
        &spec,
        ProcedureConfig::pocock_simon(0.9),
        per_stratum,
        reps,
        SEED,
    )
    .unwrap();
    (spec, est)
}

struct Sigmas {
    two: f64,
    four: f64,
}

fn criterion_2() -> (Outcome, Sigmas) {
    let mut c = Check::new();
    let (spec, est) = mc(&[2, 2], 500, 2000);
    c.within("sigma2(2x2)", est.sigma2, 0.215, 0.255);
    c.within(
        "mev_product(2x2)",
        mev_product(&spec, est.sigma2).unwrap(),
        0.86,
        1.00,
    );
    let (_, est4) = mc(&[2, 2, 2, 2], 500, 1000);
    c.within("sigma2(2x2x2x2)", est4.sigma2, 0.64, 0.72);
    let cor = cor_matrix_for_levels(&[2, 2, 2, 2]).unwrap();
    let worst = est4
        .class_correlations
        .iter()
        .map(|(&mask, &r)| (r - to_f64(cor.class_value(mask))).abs())
        .fold(0.0, f64::max);
    c.within("max class |diff|", worst, 0.0, 0.05);
    (
        c.finish(),
        Sigmas {
            two: est.sigma2,
            four: est4.sigma2,
        },
    )
}

fn criterion_3() -> Outcome {
    let mut c = Check::new();
    let spec =
        FactorSpec::independent(&[2, 3], vec![vec![0.5, 0.5], vec![0.25, 0.5, 0.25]]).unwrap();
    let samples =
        collect_imbalances(&spec, ProcedureConfig::pocock_simon(0.9), 50_000, 500, SEED).unwrap();
    let est = estimate_cov(&spec, &samples).unwrap();
    c.within("mev_hat", est.mev, 0.93, 1.02);
    c.finish()
}

fn scenario(setup: TrialSetup, tests: Vec<pslab_core::NamedTest>, cov: Vec<f64>) -> ScenarioResult {
    run_scenario(&Scenario {
        setup,
        tests,
        cov,
        robust: RobustOptions::default(),
        replications: 1000,
        master_seed: SEED,
    })
    .unwrap()
}

fn rate(r: &ScenarioResult, label: &str) -> f64 {
    let s = r.summary(label).unwrap();
    assert!(
        s.failures == 0,
        "{label}: {} failed replications",
        s.failures
    );
    s.rate()
}

fn criterion_4(sig: &Sigmas) -> Outcome {
    let mut c = Check::new();
    let r = scenario(
        case1(0.0),
        two_factor_battery(false),
        analytic_cov(&[2, 2], sig.two).unwrap(),
    );
    for label in ["T_L", "T_RL", "T_SL", "T_S", "T_RS"] {
        c.within(label, rate(&r, label), 0.015, 0.036);
    }
    c.finish()
}

fn criterion_5_and_8(sig: &Sigmas) -> (Outcome, Outcome) {
    let r = scenario(
        case2(0.0),
        two_factor_battery(true),
        analytic_cov(&[2, 2], sig.two).unwrap(),
    );
    let mut c = Check::new();
    c.within("T_L", rate(&r, "T_L"), 0.0, 0.012);
    c.within("T_RL", rate(&r, "T_RL"), 0.014, 0.036);
    c.within("T_SL", rate(&r, "T_SL"), 0.015, 0.040);
    c.within("T_S:misspecified", rate(&r, "T_S:misspecified"), 0.0, 0.018);
    c.within(
        "T_RS:misspecified",
        rate(&r, "T_RS:misspecified"),
        0.015,
        0.038,
    );
    let five = c.finish();

    let mut d = Check::new();
    let median = |label: &str| r.summary(label).unwrap().gtg_over_psi.unwrap().median;
    d.within("T_L ratio", median("T_L"), 1.0, 1.5);
    d.within("correct-model ratio", median("T_S:correct"), 0.0, 0.02);
    d.within("misspecified ratio", median("T_S:misspecified"), 0.30, 0.55);
    (five, d.finish())
}

fn criterion_6(sig: &Sigmas) -> Outcome {
    let mut c = Check::new();
    let r = scenario(
        case2(case_alternative_theta()),
        two_factor_battery(true),
        analytic_cov(&[2, 2], sig.two).unwrap(),
    );
    let (l, rl, sl, rs) = (
        rate(&r, "T_L"),
        rate(&r, "T_RL"),
        rate(&r, "T_SL"),
        rate(&r, "T_RS:misspecified"),
    );
    c.expect(
        sl > rs && rs > rl && rl > l,
        format!("T_SL {sl:.4} > T_RS {rs:.4} > T_RL {rl:.4} > T_L {l:.4}"),
    );
    c.within("T_L", l, 0.55, 0.65);
    c.within("T_SL", sl, 0.95, 1.0);
    c.finish()
}

/// Tolerance for "approximately equal" rejection rates at R = 1000.
const APPROX: f64 = 0.012;

fn criterion_7(sig: &Sigmas) -> Outcome {
    let mut c = Check::new();
    let r = scenario(
        four_factor(0.0),
        four_factor_battery(),
        analytic_cov(&[2, 2, 2, 2], sig.four).unwrap(),
    );
    let (l, pl, s, rpl, rs) = (
        rate(&r, "T_L"),
        rate(&r, "T_PL"),
        rate(&r, "T_S"),
        rate(&r, "T_RPL"),
        rate(&r, "T_RS"),
    );
    c.expect(
        l < pl && l < s && (pl - s).abs() <= APPROX,
        format!("T_L {l:.4} < T_PL {pl:.4} ~ T_S {s:.4}"),
    );
    c.expect(
        pl.max(s) < rpl.min(rs) && (rpl - rs).abs() <= APPROX,
        format!("T_PL, T_S < T_RPL {rpl:.4} ~ T_RS {rs:.4}"),
    );
    c.within("T_L", l, 0.0, 0.015);
    c.within("T_RPL", rpl, 0.017, 0.037);
    c.within("T_RS", rs, 0.017, 0.037);
    c.finish()
}

fn criterion_9() -> Outcome {
    let mut c = Check::new();
    let fixtures = common::fixtures(9, 500, 12);
    let worst_hyper = fixtures
        .iter()
        .map(|d| {
            let (u, _) = logrank_sums(d, &Partition::whole(4)).unwrap();
            (u - common::hypergeometric_numerator(d)).abs()
        })
        .fold(0.0, f64::max);
    c.expect(
        worst_hyper <= 1e-12,
        format!(
            "hypergeometric max |diff| {worst_hyper:.1e} on {} datasets",
            fixtures.len()
        ),
    );
    let worst_empty = fixtures
        .iter()
        .map(|d| {
            let (u, _) = logrank_sums(d, &Partition::whole(4)).unwrap();
            (score_components(d, &WorkingModel::empty()).unwrap().u - u).abs()
        })
        .fold(0.0, f64::max);
    c.expect(
        worst_empty <= 1e-12,
        format!("empty-model score vs log-rank max |diff| {worst_empty:.1e}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = WorkingModel::indicators(&[(1, 2), (2, 2)]);
    let (mut worst_fd, mut worst_b, mut n) = (0.0f64, 0.0f64, 0);
    while n < 50 {
        let data = common::continuous_dataset(&mut rng, 40);
        let Ok(comp) = score_components(&data, &model) else {
            continue;
        };
        let h = 1e-5;
        let fd = (log_partial_likelihood(&data, &model, h, &comp.fit.beta).unwrap()
            - log_partial_likelihood(&data, &model, -h, &comp.fit.beta).unwrap())
            / (2.0 * h);
        worst_fd = worst_fd.max((fd - comp.u).abs() / comp.u.abs().max(1e-3));
        let t = score_test(&data, &model).unwrap();
        let fit = fit_beta0(&data, &model).unwrap();
        let design = model.stratum_design(&data.levels).unwrap();
        let eta: Vec<f64> = data
            .subjects
            .iter()
            .map(|s| {
                design[s.stratum]
                    .iter()
                    .zip(&fit.beta)
                    .map(|(w, b)| w * b)
                    .sum()
            })
            .collect();
        let direct = common::direct_lin_wei(&data, &eta);
        worst_b = worst_b.max((t.variance - direct).abs() / direct);
        n += 1;
    }
    c.expect(
        worst_fd <= 1e-5,
        format!("finite-difference score max rel {worst_fd:.1e}"),
    );
    c.expect(
        worst_b <= 1e-10,
        format!("residual variance identity max rel {worst_b:.1e}"),
    );
    c.finish()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();

    if want(1) {
        let (o, secs) = timed(criterion_1);
        results.push((1, o, secs));
    }
    if [2, 4, 5, 6, 7, 8].iter().any(|&k| want(k)) {
        let ((two, sig), secs) = timed(criterion_2);
        if want(2) {
            results.push((2, two, secs));
        }
        if want(4) {
            let (o, secs) = timed(|| criterion_4(&sig));
            results.push((4, o, secs));
        }
        if want(5) || want(8) {
            let ((five, eight), secs) = timed(|| criterion_5_and_8(&sig));
            if want(5) {
                results.push((5, five, secs));
            }
            if want(8) {
                results.push((8, eight, secs));
            }
        }
        if want(6) {
            let (o, secs) = timed(|| criterion_6(&sig));
            results.push((6, o, secs));
        }
        if want(7) {
            let (o, secs) = timed(|| criterion_7(&sig));
            results.push((7, o, secs));
        }
    }
    if want(3) {
        let (o, secs) = timed(criterion_3);
        results.push((3, o, secs));
    }
    if want(9) {
        let (o, secs) = timed(criterion_9);
        results.push((9, o, secs));
    }

    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (k, o, secs) in &results {
        all &= o.pass;
        println!(
            "criterion {k}: {} ({secs:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
