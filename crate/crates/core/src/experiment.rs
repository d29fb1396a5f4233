//! Replicated test-calibration studies: simulate trials, run a battery of
//! tests on each, and summarize rejection rates and variance diagnostics.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{
    diagnostics, logrank_test, robust_logrank_test, robust_score_test_from_components,
    robust_variance, score_components, score_test_from_components, stratified_logrank_test,
    Diagnostics, Partition, RobustOptions, ScoreComponents, TestKind, TestReport, WorkingModel,
};
use crate::mc_lab::{collect_imbalances, estimate_cov, CovEstimate};
use crate::randomization::ProcedureConfig;
use crate::rng::{stream, Domain};
use crate::strata::FactorSpec;
use crate::survival_sim::{TrialDataset, TrialSetup};
use crate::theory::cor_matrix_for_levels;

/// Which statistic to compute, with its analysis options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TestSpec {
    LogRank,
    RobustLogRank,
    StratifiedLogRank,
    /// Stratified on the levels of the listed 1-based factors.
    PartialLogRank(Vec<usize>),
    RobustPartialLogRank(Vec<usize>),
    Score(WorkingModel),
    RobustScore(WorkingModel),
}

impl TestSpec {
    pub fn kind(&self) -> TestKind {
        match self {
            TestSpec::LogRank => TestKind::LogRank,
            TestSpec::RobustLogRank => TestKind::RobustLogRank,
            TestSpec::StratifiedLogRank => TestKind::StratifiedLogRank,
            TestSpec::PartialLogRank(_) => TestKind::PartialLogRank,
            TestSpec::RobustPartialLogRank(_) => TestKind::RobustPartialLogRank,
            TestSpec::Score(_) => TestKind::Score,
            TestSpec::RobustScore(_) => TestKind::RobustScore,
        }
    }
}

/// A test with the label used in reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedTest {
    pub label: String,
    pub spec: TestSpec,
}

impl NamedTest {
    pub fn new(label: impl Into<String>, spec: TestSpec) -> Self {
        Self {
            label: label.into(),
            spec,
        }
    }

    /// Labelled with the test's short name.
    pub fn plain(spec: TestSpec) -> Self {
        Self::new(spec.kind().label(), spec)
    }
}

/// Full description of a replicated study.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub setup: TrialSetup,
    pub tests: Vec<NamedTest>,
    /// Row-major `M_s x M_s` covariance of the normalized imbalances used by
    /// the robust tests.
    pub cov: Vec<f64>,
    pub robust: RobustOptions,
    pub replications: usize,
    pub master_seed: u64,
}

/// `sigma2 * Cor` for equal-prevalence factors.
pub fn analytic_cov(levels: &[usize], sigma2: f64) -> Result<Vec<f64>> {
    Ok(cor_matrix_for_levels(levels)?
        .matrix_f64()
        .into_iter()
        .map(|c| sigma2 * c)
        .collect())
}

/// Monte Carlo imbalance covariance with `per_stratum` subjects per stratum
/// on average.
pub fn monte_carlo_cov(
    spec: &FactorSpec,
    procedure: ProcedureConfig,
    per_stratum: usize,
    replications: usize,
    master_seed: u64,
) -> Result<CovEstimate> {
    let n = per_stratum * spec.num_strata();
    let samples = collect_imbalances(spec, procedure, n, replications, master_seed)?;
    estimate_cov(spec, &samples)
}

/// Working model with indicators for the second level of factors 1 and 2.
pub fn two_indicator_model() -> WorkingModel {
    WorkingModel::indicators(&[(1, 2), (2, 2)])
}

/// Working model omitting the second factor.
pub fn first_indicator_model() -> WorkingModel {
    WorkingModel::indicators(&[(1, 2)])
}

/// Log-rank family plus score tests for the two-factor studies. Without
/// prognostic factors the score tests use `W = 0`; otherwise both the
/// correct (`:correct`) and the misspecified (`:misspecified`) working
/// models are run.
pub fn two_factor_battery(prognostic: bool) -> Vec<NamedTest> {
    let mut tests = vec![
        NamedTest::plain(TestSpec::LogRank),
        NamedTest::plain(TestSpec::RobustLogRank),
        NamedTest::plain(TestSpec::StratifiedLogRank),
    ];
    if prognostic {
        for (tag, model) in [
            ("correct", two_indicator_model()),
            ("misspecified", first_indicator_model()),
        ] {
            tests.push(NamedTest::new(
                format!("T_S:{tag}"),
                TestSpec::Score(model.clone()),
            ));
            tests.push(NamedTest::new(
                format!("T_RS:{tag}"),
                TestSpec::RobustScore(model),
            ));
        }
    } else {
        tests.push(NamedTest::plain(TestSpec::Score(WorkingModel::empty())));
        tests.push(NamedTest::plain(TestSpec::RobustScore(
            WorkingModel::empty(),
        )));
    }
    tests
}

/// Tests for the four-factor study: score tests with a model missing two
/// factors, and log-rank tests stratified on the first two factors.
pub fn four_factor_battery() -> Vec<NamedTest> {
    vec![
        NamedTest::plain(TestSpec::Score(two_indicator_model())),
        NamedTest::plain(TestSpec::RobustScore(two_indicator_model())),
        NamedTest::plain(TestSpec::LogRank),
        NamedTest::plain(TestSpec::PartialLogRank(vec![1, 2])),
        NamedTest::plain(TestSpec::RobustPartialLogRank(vec![1, 2])),
    ]
}

/// Outcome of one test on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub report: TestReport,
    pub diagnostics: Option<Diagnostics>,
}

/// All outcomes of one replication, in test order. A failed test keeps its
/// error message.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub outcomes: Vec<std::result::Result<TestOutcome, String>>,
}

#[derive(Default)]
struct Cache {
    scores: HashMap<Vec<(usize, usize)>, ScoreComponents>,
}

impl Cache {
    fn score(&mut self, data: &TrialDataset, model: &WorkingModel) -> Result<&ScoreComponents> {
        if !self.scores.contains_key(&model.columns) {
            let comp = score_components(data, model)?;
            self.scores.insert(model.columns.clone(), comp);
        }
        Ok(&self.scores[&model.columns])
    }
}

fn score_reports(
    data: &TrialDataset,
    comp: &ScoreComponents,
    cov: &[f64],
    opts: RobustOptions,
) -> Result<(TestReport, TestReport)> {
    let naive = score_test_from_components(data, comp)?;
    let rc = robust_variance(data, &comp.residuals, cov, opts)?;
    let robust = robust_score_test_from_components(data, comp, rc)?;
    Ok((naive, robust))
}

fn run_test(
    test: &TestSpec,
    data: &TrialDataset,
    scenario: &Scenario,
    cache: &mut Cache,
) -> Result<TestOutcome> {
    let ms = data.num_strata();
    let levels = &data.levels;
    let opts = scenario.robust;
    let cov = &scenario.cov;
    let plain = |report| TestOutcome {
        report,
        diagnostics: None,
    };
    let paired =
        |naive: TestReport, robust: TestReport, keep_robust: bool| -> Result<TestOutcome> {
            let d = diagnostics(&naive, &robust)?;
            Ok(TestOutcome {
                report: if keep_robust { robust } else { naive },
                diagnostics: Some(d),
            })
        };
    match test {
        TestSpec::LogRank | TestSpec::RobustLogRank => {
            let naive = logrank_test(data)?;
            match robust_logrank_test(data, &Partition::whole(ms), cov, opts) {
                Ok(robust) => paired(naive, robust, matches!(test, TestSpec::RobustLogRank)),
                Err(e) if matches!(test, TestSpec::LogRank) => {
                    log::debug!("log-rank diagnostics unavailable: {e}");
                    Ok(plain(naive))
                }
                Err(e) => Err(e),
            }
        }
        TestSpec::StratifiedLogRank => Ok(plain(stratified_logrank_test(
            data,
            &Partition::identity(ms),
        )?)),
        TestSpec::PartialLogRank(factors) | TestSpec::RobustPartialLogRank(factors) => {
            let partition = Partition::by_factors(levels, factors)?;
            let naive = stratified_logrank_test(data, &partition)?;
            let robust = robust_logrank_test(data, &partition, cov, opts);
            match robust {
                Ok(r) => paired(naive, r, matches!(test, TestSpec::RobustPartialLogRank(_))),
                Err(e) if matches!(test, TestSpec::PartialLogRank(_)) => {
                    log::debug!("partial log-rank diagnostics unavailable: {e}");
                    Ok(plain(naive))
                }
                Err(e) => Err(e),
            }
        }
        TestSpec::Score(model) | TestSpec::RobustScore(model) => {
            let comp = cache.score(data, model)?;
            match score_reports(data, comp, cov, opts) {
                Ok((naive, robust)) => {
                    paired(naive, robust, matches!(test, TestSpec::RobustScore(_)))
                }
                Err(e) if matches!(test, TestSpec::Score(_)) => {
                    log::debug!("score diagnostics unavailable: {e}");
                    Ok(plain(score_test_from_components(data, comp)?))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Simulate replication `index` and run every test on it.
pub fn run_replication(scenario: &Scenario, index: usize) -> Result<Replication> {
    let mut rng = stream(scenario.master_seed, Domain::Trial, index as u64);
    let data = scenario.setup.simulate(&mut rng)?;
    Ok(analyze(scenario, &data, index))
}

/// Run every test of the scenario on a given dataset.
pub fn analyze(scenario: &Scenario, data: &TrialDataset, index: usize) -> Replication {
    let mut cache = Cache::default();
    let outcomes = scenario
        .tests
        .iter()
        .map(|t| run_test(&t.spec, data, scenario, &mut cache).map_err(|e| e.to_string()))
        .collect();
    Replication { index, outcomes }
}

fn validate(scenario: &Scenario) -> Result<()> {
    if scenario.replications == 0 {
        return Err(Error::InvalidInput(
            "at least one replication is required".into(),
        ));
    }
    if scenario.tests.is_empty() {
        return Err(Error::InvalidInput("no tests selected".into()));
    }
    let ms = scenario.setup.spec.num_strata();
    if scenario.cov.len() != ms * ms {
        return Err(Error::Dimension(format!(
            "covariance has {} entries, expected {ms}x{ms}",
            scenario.cov.len()
        )));
    }
    scenario.setup.design.validate()?;
    scenario.setup.procedure.validate()?;
    scenario.setup.model.validate(&scenario.setup.spec)
}

/// Run all replications in parallel; results come back in replication order.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult> {
    validate(scenario)?;
    let replications = (0..scenario.replications)
        .into_par_iter()
        .map(|r| run_replication(scenario, r))
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize(&scenario.tests, &replications);
    Ok(ScenarioResult {
        labels: scenario.tests.iter().map(|t| t.label.clone()).collect(),
        replications,
        summaries,
    })
}

/// Median, minimum and maximum of a diagnostic across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Replications contributing a value.
    pub count: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        let median = if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        };
        Some(Self {
            median,
            min: v[0],
            max: v[k - 1],
            count: k,
        })
    }
}

/// Aggregates for one test across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSummary {
    pub label: String,
    pub kind: TestKind,
    pub completed: usize,
    pub failures: usize,
    pub rejections: usize,
    pub gtcovg_over_gtg: Option<Spread>,
    pub gtg_over_psi: Option<Spread>,
    pub n_psi: Option<Spread>,
    pub n_naive_variance: Option<Spread>,
    pub n_robust_variance: Option<Spread>,
}

impl TestSummary {
    /// Rejection rate among completed replications.
    pub fn rate(&self) -> f64 {
        if self.completed == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.completed as f64
        }
    }
}

fn summarize(tests: &[NamedTest], reps: &[Replication]) -> Vec<TestSummary> {
    tests
        .iter()
        .enumerate()
        .map(|(k, test)| {
            let ok: Vec<&TestOutcome> = reps
                .iter()
                .filter_map(|r| r.outcomes[k].as_ref().ok())
                .collect();
            let diag: Vec<Diagnostics> = ok.iter().filter_map(|o| o.diagnostics).collect();
            let spread = |f: &dyn Fn(&Diagnostics) -> Option<f64>| {
                Spread::of(&diag.iter().filter_map(f).collect::<Vec<_>>())
            };
            TestSummary {
                label: test.label.clone(),
                kind: test.spec.kind(),
                completed: ok.len(),
                failures: reps.len() - ok.len(),
                rejections: ok.iter().filter(|o| o.report.rejected).count(),
                gtcovg_over_gtg: spread(&|d| d.gtcovg_over_gtg),
                gtg_over_psi: spread(&|d| d.gtg_over_psi),
                n_psi: spread(&|d| Some(d.n_psi)),
                n_naive_variance: spread(&|d| Some(d.n_naive_variance)),
                n_robust_variance: spread(&|d| Some(d.n_robust_variance)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub labels: Vec<String>,
    pub replications: Vec<Replication>,
    pub summaries: Vec<TestSummary>,
}

impl ScenarioResult {
    pub fn summary(&self, label: &str) -> Option<&TestSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    pub fn rate(&self, label: &str) -> Option<f64> {
        self.summary(label).map(TestSummary::rate)
    }

    /// One row per replication and test.
    pub fn write_replications<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            replication: usize,
            test: &'a str,
            statistic: Option<f64>,
            numerator: Option<f64>,
            variance: Option<f64>,
            psi: Option<f64>,
            gtg: Option<f64>,
            gtcovg: Option<f64>,
            reject: Option<u8>,
            error: &'a str,
        }
        let mut w = csv::Writer::from_writer(out);
        for rep in &self.replications {
            for (label, outcome) in self.labels.iter().zip(&rep.outcomes) {
                let row = match outcome {
                    Ok(o) => {
                        let rc = o.report.robust.as_ref();
                        Row {
                            replication: rep.index,
                            test: label,
                            statistic: Some(o.report.statistic),
                            numerator: Some(o.report.numerator),
                            variance: Some(o.report.variance),
                            psi: rc.map(|c| c.psi),
                            gtg: rc.map(|c| c.gtg),
                            gtcovg: rc.map(|c| c.gtcovg),
                            reject: Some(o.report.rejected as u8),
                            error: "",
                        }
                    }
                    Err(e) => Row {
                        replication: rep.index,
                        test: label,
                        statistic: None,
                        numerator: None,
                        variance: None,
                        psi: None,
                        gtg: None,
                        gtcovg: None,
                        reject: None,
                        error: e,
                    },
                };
                w.serialize(row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per test: rejection rate and diagnostic spreads.
    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "test".to_string(),
            "kind".into(),
            "completed".into(),
            "failures".into(),
            "rejections".into(),
            "rate".into(),
        ];
        for name in DIAGNOSTIC_NAMES {
            for stat in ["median", "min", "max"] {
                header.push(format!("{name}_{stat}"));
            }
        }
        w.write_record(&header)?;
        for s in &self.summaries {
            let mut rec = vec![
                s.label.clone(),
                s.kind.label().to_string(),
                s.completed.to_string(),
                s.failures.to_string(),
                s.rejections.to_string(),
                format!("{}", s.rate()),
            ];
            for spread in [
                s.gtcovg_over_gtg,
                s.gtg_over_psi,
                s.n_psi,
                s.n_naive_variance,
                s.n_robust_variance,
            ] {
                match spread {
                    Some(sp) => rec.extend([sp.median, sp.min, sp.max].map(|x| x.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), 3)),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DIAGNOSTIC_NAMES: [&str; 5] = [
    "gtcovg_over_gtg",
    "gtg_over_psi",
    "n_psi",
    "n_naive_variance",
    "n_robust_variance",
];
