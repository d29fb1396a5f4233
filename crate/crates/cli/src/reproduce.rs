//! Re-run the published simulation protocols at a reduced scale and print
//! the results next to the published values.
//!
//! `--scale f` shrinks the replication count first: `R = max(round(f * R_published),
//! min(500, R_published))`. Whatever reduction the floor on `R` absorbs is then
//! applied to the imbalance-study sample size (never below 50 subjects per
//! stratum). Trial designs and model parameters are never scaled.

use std::collections::BTreeSet;
use std::io::Write;

use anyhow::{bail, ensure, Result};
use clap::{Args, ValueEnum};
use pslab_core::experiment::{
    analytic_cov, first_indicator_model, monte_carlo_cov, run_scenario, two_indicator_model,
};
use pslab_core::mc_lab::{collect_imbalances, estimate_cov, mev_product};
use pslab_core::published::{self, DIAGNOSTICS};
use pslab_core::survival_sim::{
    case1, case2, case_alternative_theta, four_factor, four_factor_alternative_theta,
};
use pslab_core::theory::{cor_matrix_for_levels, lambda_max_closed_form, to_f64};
use pslab_core::{
    FactorSpec, NamedTest, ProcedureConfig, RobustOptions, Scenario, TestSpec, TrialSetup,
    WorkingModel,
};

use crate::commands::join_levels;
use crate::OutputArg;

pub const REPS_FLOOR: usize = 500;
pub const PER_STRATUM_FLOOR: usize = 50;
pub const PUBLISHED_PER_STRATUM: usize = 500;
pub const PUBLISHED_A5_N: usize = 500_000;
pub const PUBLISHED_MC_REPS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_210_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    #[value(name = "table1")]
    Table1,
    #[value(name = "table2")]
    Table2,
    #[value(name = "table3")]
    Table3,
    #[value(name = "table4")]
    Table4,
    #[value(name = "tableA1")]
    TableA1,
    #[value(name = "tableA2")]
    TableA2,
    #[value(name = "tableA3")]
    TableA3,
    #[value(name = "tableA4")]
    TableA4,
    #[value(name = "tableA5")]
    TableA5,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    pub target: Target,
    /// Fraction of the published replication budget.
    #[arg(long, default_value_t = 0.2)]
    pub scale: f64,
    /// Replications, overriding --scale.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Subjects per stratum in imbalance studies, overriding --scale.
    #[arg(long)]
    pub per_stratum: Option<usize>,
    /// Subjects per replication for tableA5, overriding --scale.
    #[arg(long)]
    pub n: Option<usize>,
    /// Row filter: level lists separated by `;` (e.g. "2 2;3 4"), or
    /// 1-based row numbers for tableA5.
    #[arg(long)]
    pub rows: Option<String>,
    /// Imbalance variance for the robust tests; estimated when absent.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArg,
}

/// Replications and sample-size factor for a study published with
/// `published_reps` replications.
pub fn plan_reps(scale: f64, reps: Option<usize>, published_reps: usize) -> (usize, f64) {
    if let Some(r) = reps {
        return (r, 1.0);
    }
    let target = (published_reps as f64 * scale).max(1.0);
    let r = (target.round() as usize).max(REPS_FLOOR.min(published_reps));
    (r, (target / r as f64).min(1.0))
}

impl ReproduceArgs {
    fn mc_plan(&self) -> (usize, usize) {
        let (reps, rest) = plan_reps(self.scale, self.reps, PUBLISHED_MC_REPS);
        let per = self.per_stratum.unwrap_or_else(|| {
            ((PUBLISHED_PER_STRATUM as f64 * rest).round() as usize).max(PER_STRATUM_FLOOR)
        });
        (reps, per)
    }

    fn level_rows(&self) -> Result<Option<BTreeSet<Vec<usize>>>> {
        let Some(rows) = &self.rows else {
            return Ok(None);
        };
        let mut set = BTreeSet::new();
        for part in rows.split(';').filter(|p| !p.trim().is_empty()) {
            let levels = part
                .split(|c: char| c.is_whitespace() || c == ',' || c == 'x')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| anyhow::anyhow!("bad row `{}`", part.trim()))?;
            set.insert(levels);
        }
        Ok(Some(set))
    }
}

pub fn reproduce(args: &ReproduceArgs) -> Result<()> {
    ensure!(
        args.scale > 0.0 && args.scale.is_finite(),
        "--scale must be positive"
    );
    if let Some(r) = args.reps {
        ensure!(r >= 2, "--reps must be at least 2");
    }
    let mut out = args.out.writer()?;
    match args.target {
        Target::Table1 | Target::Table2 | Target::Table3 | Target::Table4 => {
            if args.rows.is_some() {
                bail!("--rows applies to the appendix tables only");
            }
            test_table(args, &mut out)
        }
        Target::TableA1 => table_a1(args, &mut out),
        Target::TableA2 => variance_table(args, &mut out, a2_rows()),
        Target::TableA3 => variance_table(args, &mut out, a3_rows()),
        Target::TableA4 => variance_table(args, &mut out, a4_rows()),
        Target::TableA5 => table_a5(args, &mut out),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.5}")
}

fn minimization() -> ProcedureConfig {
    ProcedureConfig::pocock_simon(pslab_core::survival_sim::MINIMIZATION_BIAS)
}

fn estimate(
    levels: &[usize],
    per_stratum: usize,
    reps: usize,
    seed: u64,
) -> Result<pslab_core::CovEstimate> {
    let spec = FactorSpec::uniform(levels)?;
    log::info!(
        "{}: {reps} replications, {per_stratum} per stratum",
        join_levels(levels)
    );
    Ok(monte_carlo_cov(
        &spec,
        minimization(),
        per_stratum,
        reps,
        seed,
    )?)
}

fn table_a1(args: &ReproduceArgs, out: &mut dyn Write) -> Result<()> {
    let (reps, per) = args.mc_plan();
    let filter = args.level_rows()?;
    let rows = published::table_a1();
    let mut configs: Vec<[usize; 4]> = Vec::new();
    for r in &rows {
        if !configs.contains(&r.levels) {
            configs.push(r.levels);
        }
    }
    if let Some(f) = &filter {
        for levels in f {
            ensure!(
                configs.iter().any(|c| c[..] == levels[..]),
                "row {} is not in this table",
                join_levels(levels)
            );
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "levels",
        "agreement",
        "theoretical",
        "simulated",
        "theoretical_abs_difference",
        "published_simulated",
        "abs_difference",
    ])?;
    for levels in configs {
        if filter
            .as_ref()
            .is_some_and(|f| !f.contains(&levels.to_vec()))
        {
            continue;
        }
        let est = estimate(&levels, per, reps, args.seed)?;
        let cor = cor_matrix_for_levels(&levels)?;
        for row in rows.iter().filter(|r| r.levels == levels) {
            let theoretical = to_f64(cor.class_value(row.mask()));
            let sim = est.class_correlation(row.mask()).unwrap_or(f64::NAN);
            let eps: String = row
                .shared
                .iter()
                .map(|&s| if s { '1' } else { '0' })
                .collect();
            w.write_record([
                join_levels(&levels),
                eps,
                fmt(theoretical),
                fmt(sim),
                fmt((theoretical - sim).abs()),
                fmt(row.simulated),
                fmt((sim - row.simulated).abs()),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Levels and published sigma2, lambda_max and their product.
type VarianceRow = (Vec<usize>, f64, f64, f64);

fn a2_rows() -> Vec<VarianceRow> {
    published::TABLE_A2
        .iter()
        .map(|(l, s, lm, p)| (l.to_vec(), *s, *lm, *p))
        .collect()
}

fn a3_rows() -> Vec<VarianceRow> {
    published::TABLE_A3
        .iter()
        .map(|(l, s, lm, p)| (l.to_vec(), *s, *lm, *p))
        .collect()
}

fn a4_rows() -> Vec<VarianceRow> {
    published::TABLE_A4
        .iter()
        .map(|(l, s, lm, p)| (l.to_vec(), *s, *lm, *p))
        .collect()
}

fn variance_table(args: &ReproduceArgs, out: &mut dyn Write, rows: Vec<VarianceRow>) -> Result<()> {
    let (reps, per) = args.mc_plan();
    let filter = args.level_rows()?;
    if let Some(f) = &filter {
        for levels in f {
            ensure!(
                rows.iter().any(|r| &r.0 == levels),
                "row {} is not in this table",
                join_levels(levels)
            );
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "levels",
        "sigma2",
        "published_sigma2",
        "sigma2_abs_difference",
        "lambda_max",
        "published_lambda_max",
        "mev_product",
        "published_mev_product",
        "mev_abs_difference",
        "mev_hat",
        "replications",
        "per_stratum",
    ])?;
    for (levels, p_sigma2, p_lambda, p_product) in rows {
        if filter.as_ref().is_some_and(|f| !f.contains(&levels)) {
            continue;
        }
        let est = estimate(&levels, per, reps, args.seed)?;
        let lambda = to_f64(&lambda_max_closed_form(&levels)?);
        let product = est.sigma2 * lambda;
        w.write_record([
            join_levels(&levels),
            fmt(est.sigma2),
            fmt(p_sigma2),
            fmt((est.sigma2 - p_sigma2).abs()),
            fmt(lambda),
            fmt(p_lambda),
            fmt(product),
            fmt(p_product),
            fmt((product - p_product).abs()),
            fmt(est.mev),
            reps.to_string(),
            per.to_string(),
        ])?;
        w.flush()?;
    }
    Ok(())
}

fn table_a5(args: &ReproduceArgs, out: &mut dyn Write) -> Result<()> {
    let (reps, rest) = plan_reps(args.scale, args.reps, PUBLISHED_MC_REPS);
    let n = args.n.unwrap_or_else(|| {
        ((PUBLISHED_A5_N as f64 * rest).round() as usize).max(6 * PER_STRATUM_FLOOR)
    });
    let selected: Option<BTreeSet<usize>> = match &args.rows {
        None => None,
        Some(r) => Some(
            r.split([';', ',', ' '])
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow::anyhow!("tableA5 rows are 1-based row numbers"))?,
        ),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "prevalence",
        "sigma2",
        "mev_hat",
        "published_mev",
        "abs_difference",
        "replications",
        "n",
    ])?;
    for (k, (probs, label, published)) in published::TABLE_A5.iter().enumerate() {
        if selected.as_ref().is_some_and(|s| !s.contains(&(k + 1))) {
            continue;
        }
        let spec = FactorSpec::independent(&[2, 3], vec![vec![0.5, 0.5], probs.to_vec()])?;
        log::info!("{label}: {reps} replications, n = {n}");
        let samples = collect_imbalances(&spec, minimization(), n, reps, args.seed)?;
        let est = estimate_cov(&spec, &samples)?;
        w.write_record([
            label.to_string(),
            fmt(est.sigma2),
            fmt(est.mev),
            fmt(*published),
            fmt((est.mev - published).abs()),
            reps.to_string(),
            n.to_string(),
        ])?;
        w.flush()?;
    }
    Ok(())
}

struct Study {
    table: &'static str,
    scenario: &'static str,
    setup: fn(f64) -> TrialSetup,
    alternative_theta: f64,
    tests: Vec<NamedTest>,
    /// Test whose summary carries the variance diagnostics.
    diagnostics_from: &'static str,
    published_reps: usize,
}

fn studies(target: Target) -> Vec<Study> {
    let lr = || {
        vec![
            NamedTest::plain(TestSpec::LogRank),
            NamedTest::plain(TestSpec::RobustLogRank),
            NamedTest::plain(TestSpec::StratifiedLogRank),
        ]
    };
    let score = |m: WorkingModel| {
        vec![
            NamedTest::plain(TestSpec::Score(m.clone())),
            NamedTest::plain(TestSpec::RobustScore(m)),
        ]
    };
    let two = |table, scenario, setup: fn(f64) -> TrialSetup, tests, diag| Study {
        table,
        scenario,
        setup,
        alternative_theta: case_alternative_theta(),
        tests,
        diagnostics_from: diag,
        published_reps: 5000,
    };
    match target {
        Target::Table1 => vec![
            two("table1", "case1", case1, lr(), "T_L"),
            two("table1", "case2", case2, lr(), "T_L"),
        ],
        Target::Table2 => vec![
            two(
                "table2",
                "case1",
                case1,
                score(WorkingModel::empty()),
                "T_S",
            ),
            two(
                "table2",
                "case2",
                case2,
                score(two_indicator_model()),
                "T_S",
            ),
        ],
        Target::Table3 => vec![two(
            "table3",
            "case2",
            case2,
            score(first_indicator_model()),
            "T_S",
        )],
        Target::Table4 => vec![Study {
            table: "table4",
            scenario: "four-factor",
            setup: four_factor,
            alternative_theta: four_factor_alternative_theta(),
            tests: pslab_core::experiment::four_factor_battery(),
            diagnostics_from: "T_S",
            published_reps: 10_000,
        }],
        _ => unreachable!(),
    }
}

fn test_table(args: &ReproduceArgs, out: &mut dyn Write) -> Result<()> {
    let studies = studies(args.target);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "table",
        "scenario",
        "hypothesis",
        "test",
        "quantity",
        "simulated",
        "published",
        "abs_difference",
        "replications",
    ])?;
    for study in studies {
        let levels = (study.setup)(0.0).spec.levels().to_vec();
        let sigma2 = match args.sigma2 {
            Some(s) => s,
            None => {
                let (reps, per) = args.mc_plan();
                let est = estimate(&levels, per, reps, args.seed)?;
                let spec = FactorSpec::uniform(&levels)?;
                log::info!(
                    "sigma2 = {:.5}, mev product {:.5}",
                    est.sigma2,
                    mev_product(&spec, est.sigma2)?
                );
                est.sigma2
            }
        };
        let cov = analytic_cov(&levels, sigma2)?;
        let (reps, _) = plan_reps(args.scale, args.reps, study.published_reps);
        for alternative in [false, true] {
            let theta = if alternative {
                study.alternative_theta
            } else {
                0.0
            };
            let scenario = Scenario {
                setup: (study.setup)(theta),
                tests: study.tests.clone(),
                cov: cov.clone(),
                robust: RobustOptions::default(),
                replications: reps,
                master_seed: args.seed,
            };
            log::info!(
                "{} {} theta = {theta:.4}: {reps} trials",
                study.table,
                study.scenario
            );
            let result = run_scenario(&scenario)?;
            let hypothesis = if alternative { "alternative" } else { "null" };
            let mut row = |test: &str, quantity: &str, sim: f64, published: Option<f64>| {
                w.write_record([
                    study.table.to_string(),
                    study.scenario.to_string(),
                    hypothesis.to_string(),
                    test.to_string(),
                    quantity.to_string(),
                    format!("{sim:.4}"),
                    published.map(|p| format!("{p:.4}")).unwrap_or_default(),
                    published
                        .map(|p| format!("{:.4}", (sim - p).abs()))
                        .unwrap_or_default(),
                    reps.to_string(),
                ])
            };
            for s in &result.summaries {
                let published =
                    published::published_rate(study.table, study.scenario, alternative, &s.label);
                row(&s.label, "rate", s.rate(), published)?;
            }
            if let Some(s) = result.summary(study.diagnostics_from) {
                let spreads = [
                    s.gtcovg_over_gtg,
                    s.gtg_over_psi,
                    s.n_psi,
                    s.n_naive_variance,
                    s.n_robust_variance,
                ];
                for (name, spread) in pslab_core::experiment::DIAGNOSTIC_NAMES.iter().zip(spreads) {
                    let Some(spread) = spread else { continue };
                    let published = DIAGNOSTICS
                        .iter()
                        .find(|d| {
                            d.table == study.table
                                && d.scenario == study.scenario
                                && d.alternative == alternative
                                && d.name == *name
                        })
                        .map(|d| d.median);
                    row(
                        s.label.as_str(),
                        &format!("{name}_median"),
                        spread.median,
                        published,
                    )?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}
