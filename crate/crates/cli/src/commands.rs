use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use pslab_core::experiment::{analytic_cov, monte_carlo_cov, run_scenario};
use pslab_core::mc_lab::{compare_classes, write_class_comparison, write_mev_report, MevRow};
use pslab_core::theory::{cor_matrix_for_levels, eigenbasis, spectrum, to_f64};
use pslab_core::{
    CovEstimate, FactorSpec, NamedTest, ProcedureConfig, RobustOptions, Scenario, TestKind,
    TestSpec, WorkingModel,
};

use crate::config::{self, CovSource, ExperimentConfig};
use crate::OutputArg;

pub(crate) fn exact(r: &num_rational::BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn stratum_label(spec: &FactorSpec, z: usize) -> String {
    spec.decode(pslab_core::StratumIndex(z))
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(".")
}

fn subset_label(mask: usize, m: usize) -> String {
    let factors: Vec<String> = (0..m)
        .filter(|k| mask & (1 << k) != 0)
        .map(|k| (k + 1).to_string())
        .collect();
    if factors.is_empty() {
        "-".into()
    } else {
        factors.join("+")
    }
}

#[derive(Debug, Args)]
pub struct CorMatrixArgs {
    /// Factor levels, e.g. 2,2.
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<usize>,
    /// Print decimals instead of exact p/q fractions.
    #[arg(long)]
    pub decimal: bool,
    /// Also write the spectrum CSV here.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArg,
}

pub fn cor_matrix(args: &CorMatrixArgs) -> Result<()> {
    let levels = &args.levels[..];
    let cor = cor_matrix_for_levels(levels)?;
    let spec = FactorSpec::uniform(levels)?;
    let ms = cor.num_strata();
    let mut w = csv::Writer::from_writer(args.out.writer()?);
    let mut header = vec!["stratum".to_string()];
    header.extend((0..ms).map(|z| stratum_label(&spec, z)));
    w.write_record(&header)?;
    for a in 0..ms {
        let mut row = vec![stratum_label(&spec, a)];
        row.extend((0..ms).map(|b| {
            let c = cor.entry(a, b);
            if args.decimal {
                format!("{:.6}", to_f64(c))
            } else {
                exact(c)
            }
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    if let Some(path) = &args.spectrum {
        write_spectrum(levels, File::create(path)?)?;
    }
    Ok(())
}

fn write_spectrum(levels: &[usize], out: impl Write) -> Result<()> {
    let cor = cor_matrix_for_levels(levels)?;
    let report = spectrum(&cor);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subset", "multiplicity", "eigenvalue", "value", "is_max"])?;
    for (mask, lambda) in report.eigenvalues.iter().enumerate() {
        w.write_record([
            subset_label(mask, levels.len()),
            report.multiplicities[mask].to_string(),
            exact(lambda),
            format!("{:.6}", to_f64(lambda)),
            (*lambda == report.lambda_max).to_string(),
        ])?;
    }
    w.flush()?;
    if report.matches_closed_form == Some(false) {
        log::warn!("subset eigenvalues disagree with the closed-form maximum");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<usize>,
    /// Write the decomposable eigenbasis here.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArg,
}

pub fn eigen(args: &EigenArgs) -> Result<()> {
    let levels = &args.levels[..];
    write_spectrum(levels, args.out.writer()?)?;
    if let Some(path) = &args.basis {
        let cor = cor_matrix_for_levels(levels)?;
        let spec = FactorSpec::uniform(levels)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["subset".to_string(), "eigenvalue".into(), "vector".into()];
        header.extend((0..cor.num_strata()).map(|z| stratum_label(&spec, z)));
        w.write_record(&header)?;
        for block in eigenbasis(&cor) {
            for (k, v) in block.vectors.iter().enumerate() {
                let mut row = vec![
                    subset_label(block.subset, levels.len()),
                    exact(&block.eigenvalue),
                    (k + 1).to_string(),
                ];
                row.extend(v.iter().map(i64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ProcedureArgs {
    /// minimization, permuted-block, efron, urn, big-stick or complete.
    #[arg(long, default_value = "minimization")]
    pub procedure: String,
    #[arg(long, default_value_t = 0.9)]
    pub bias: f64,
    /// squared or absolute.
    #[arg(long, default_value = "squared")]
    pub measure: String,
    #[arg(long, default_value_t = 4)]
    pub block_size: usize,
    #[arg(long, default_value = "1,1")]
    pub urn: String,
    #[arg(long, default_value_t = 3)]
    pub big_stick_bound: u32,
}

impl ProcedureArgs {
    pub fn config(&self) -> Result<ProcedureConfig> {
        let measure = config::parse_measure(&self.measure).map_err(anyhow::Error::msg)?;
        let urn: Vec<u32> = self
            .urn
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .context("--urn expects alpha,beta")?;
        ensure!(urn.len() == 2, "--urn expects alpha,beta");
        let cfg = config::procedure_from(
            &self.procedure,
            self.bias,
            measure,
            self.block_size,
            (urn[0], urn[1]),
            self.big_stick_bound,
        )
        .map_err(anyhow::Error::msg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct McCovArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<usize>,
    /// Per-factor level probabilities, factors separated by `;`.
    #[arg(long)]
    pub prevalence: Option<String>,
    #[command(flatten)]
    pub procedure: ProcedureArgs,
    /// Average subjects per stratum; ignored when --n is given.
    #[arg(long, default_value_t = 500)]
    pub per_stratum: usize,
    /// Subjects per replication.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for cov.csv, mev.csv and, for equal prevalence, classes.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn factor_spec(levels: &[usize], prevalence: Option<&str>) -> Result<FactorSpec> {
    let probs = match prevalence {
        Some(p) => config::parse_prevalence(p).map_err(anyhow::Error::msg)?,
        None => None,
    };
    Ok(match probs {
        Some(p) => FactorSpec::independent(levels, p)?,
        None => FactorSpec::uniform(levels)?,
    })
}

pub fn mc_cov(args: &McCovArgs) -> Result<()> {
    let spec = factor_spec(&args.levels, args.prevalence.as_deref())?;
    let procedure = args.procedure.config()?;
    let n = args.n.unwrap_or(args.per_stratum * spec.num_strata());
    let samples =
        pslab_core::mc_lab::collect_imbalances(&spec, procedure, n, args.reps, args.seed)?;
    let est = pslab_core::mc_lab::estimate_cov(&spec, &samples)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_cov(&est.cov, est.num_strata, &args.out_dir.join("cov.csv"))?;
    let label = match &args.prevalence {
        Some(p) => format!("{} [{p}]", join_levels(&args.levels)),
        None => join_levels(&args.levels),
    };
    let row = MevRow::from_estimate(label, &spec, &est);
    write_mev_report(
        std::slice::from_ref(&row),
        File::create(args.out_dir.join("mev.csv"))?,
    )?;
    if spec.has_equal_prevalence() {
        let cor = cor_matrix_for_levels(&args.levels)?;
        write_class_comparison(
            &compare_classes(&cor, &est),
            File::create(args.out_dir.join("classes.csv"))?,
        )?;
    }
    write_mev_report(&[row], std::io::stdout().lock())?;
    Ok(())
}

pub fn join_levels(levels: &[usize]) -> String {
    levels
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// Square matrix as headerless CSV, one row per stratum.
pub fn write_cov(cov: &[f64], ms: usize, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    for row in cov.chunks(ms) {
        w.write_record(row.iter().map(|x| format!("{x:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cov(path: &Path, ms: usize) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut cov = Vec::with_capacity(ms * ms);
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(
            rec.len() == ms,
            "{}: row {} has {} entries, expected {ms}",
            path.display(),
            k + 1,
            rec.len()
        );
        for x in rec.iter() {
            cov.push(
                x.parse::<f64>().with_context(|| {
                    format!("{}: row {}: bad number `{x}`", path.display(), k + 1)
                })?,
            );
        }
    }
    ensure!(
        cov.len() == ms * ms,
        "{}: expected {ms} rows, found {}",
        path.display(),
        cov.len() / ms
    );
    Ok(cov)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override `replications`.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `output_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn test_spec(kind: TestKind, cfg: &ExperimentConfig) -> TestSpec {
    let model = || WorkingModel::indicators(&cfg.score_model);
    match kind {
        TestKind::LogRank => TestSpec::LogRank,
        TestKind::RobustLogRank => TestSpec::RobustLogRank,
        TestKind::StratifiedLogRank => TestSpec::StratifiedLogRank,
        TestKind::PartialLogRank => TestSpec::PartialLogRank(cfg.partial_factors.clone()),
        TestKind::RobustPartialLogRank => {
            TestSpec::RobustPartialLogRank(cfg.partial_factors.clone())
        }
        TestKind::Score => TestSpec::Score(model()),
        TestKind::RobustScore => TestSpec::RobustScore(model()),
    }
}

/// Covariance for the robust tests, plus the Monte Carlo estimate when one
/// was run.
pub fn scenario_cov(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Option<CovEstimate>)> {
    let spec = &cfg.setup.spec;
    let ms = spec.num_strata();
    if !cfg.tests.iter().any(|t| t.is_robust()) {
        return Ok((vec![0.0; ms * ms], None));
    }
    let estimate = || {
        log::info!(
            "estimating imbalance covariance: {} replications, {} per stratum",
            cfg.cov_replications,
            cfg.cov_per_stratum
        );
        monte_carlo_cov(
            spec,
            cfg.setup.procedure,
            cfg.cov_per_stratum,
            cfg.cov_replications,
            cfg.seed,
        )
    };
    Ok(match &cfg.cov_source {
        CovSource::Analytic { sigma2: Some(s) } => (analytic_cov(spec.levels(), *s)?, None),
        CovSource::Analytic { sigma2: None } => {
            let est = estimate()?;
            (analytic_cov(spec.levels(), est.sigma2)?, Some(est))
        }
        CovSource::MonteCarlo => {
            let est = estimate()?;
            (est.cov.clone(), Some(est))
        }
        CovSource::File(path) => (read_cov(path, ms)?, None),
    })
}

pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let (cov, est) = scenario_cov(cfg)?;
    if let Some(est) = est {
        log::info!(
            "sigma2 = {:.5}, largest eigenvalue {:.5}",
            est.sigma2,
            est.mev
        );
    }
    Ok(Scenario {
        setup: cfg.setup.clone(),
        tests: cfg
            .tests
            .iter()
            .map(|&k| NamedTest::plain(test_spec(k, cfg)))
            .collect(),
        cov,
        robust: RobustOptions {
            pool_sparse_cells: cfg.pool_sparse_cells,
        },
        replications: cfg.replications,
        master_seed: cfg.seed,
    })
}

pub fn simulate_tests(args: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = config::load_config(&args.config)?;
    if let Some(r) = args.reps {
        if r == 0 {
            bail!("--reps must be at least 1");
        }
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.out_dir {
        cfg.output_dir = d.clone();
    }
    crate::init_threads(crate::resolve_threads(threads, cfg.threads)?)?;
    let scenario = build_scenario(&cfg)?;
    let result = run_scenario(&scenario)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let reps_path = cfg.output_dir.join("replications.csv");
    result.write_replications(BufWriter::new(File::create(&reps_path)?))?;
    result.write_summary(File::create(cfg.output_dir.join("summary.csv"))?)?;
    let mut out = std::io::stdout().lock();
    for s in &result.summaries {
        writeln!(
            out,
            "{:<8} rate {:.4}  ({} rejections / {} completed, {} failed)",
            s.label,
            s.rate(),
            s.rejections,
            s.completed,
            s.failures
        )?;
    }
    writeln!(out, "wrote {}", cfg.output_dir.display())?;
    Ok(())
}
