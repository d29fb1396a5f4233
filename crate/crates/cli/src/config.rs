//! Flat `key = value` experiment configuration.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; keys may appear once. Real numbers accept `ln(x)`,
//! `-ln(x)` and `a/b`. Lists are comma separated. Only `levels` is required.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `levels` | required | factor levels, e.g. `2,2` |
//! | `prevalence` | `uniform` | `uniform` or per-factor probabilities, factors separated by `;` |
//! | `procedure` | `minimization` | `minimization`, `permuted-block`, `efron`, `urn`, `big-stick`, `complete` |
//! | `bias` | `0.9` | minimization / Efron preferred-arm probability |
//! | `measure` | `squared` | minimization imbalance measure, `squared` or `absolute` |
//! | `block_size` | `4` | permuted-block size |
//! | `urn` | `1,1` | Wei urn `alpha,beta` |
//! | `big_stick_bound` | `3` | big-stick imbalance bound |
//! | `log_baseline_hazard` | `ln(0.0625)` | log baseline hazard per month |
//! | `effects` | none | `factor:level:log_hr` entries |
//! | `theta` | `0` | treatment log hazard ratio |
//! | `n` | `600` | subjects per trial |
//! | `enrollment_months` | `29` | uniform entry window |
//! | `followup_months` | `36` | study cutoff from study start |
//! | `censor_hazard` | `0.01` | exponential dropout hazard |
//! | `tests` | `T_L,T_RL,T_SL,T_S,T_RS` | tests to run |
//! | `score_model` | none | working-model indicators `factor:level` |
//! | `partial_factors` | `1` | factors defining the partial stratification |
//! | `cov_source` | `analytic` | `analytic`, `monte-carlo` or `file` |
//! | `sigma2` | estimated | fixed imbalance variance for `analytic` |
//! | `cov_file` | none | covariance CSV for `file` |
//! | `cov_per_stratum` | `500` | Monte Carlo subjects per stratum |
//! | `cov_replications` | `2000` | Monte Carlo replications |
//! | `replications` | `1000` | simulated trials |
//! | `seed` | `1` | master seed |
//! | `threads` | all cores | worker threads |
//! | `output_dir` | `pslab-out` | where CSVs are written |
//! | `pool_sparse_cells` | `false` | pool sparse stratum-arm cells |

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pslab_core::survival_sim::MINIMIZATION_BIAS;
use pslab_core::{
    FactorSpec, HazardModel, ImbalanceMeasure, ProcedureConfig, TestKind, TrialDesign, TrialSetup,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: `{key}` is set twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const KEYS: &[&str] = &[
    "levels",
    "prevalence",
    "procedure",
    "bias",
    "measure",
    "block_size",
    "urn",
    "big_stick_bound",
    "log_baseline_hazard",
    "effects",
    "theta",
    "n",
    "enrollment_months",
    "followup_months",
    "censor_hazard",
    "tests",
    "score_model",
    "partial_factors",
    "cov_source",
    "sigma2",
    "cov_file",
    "cov_per_stratum",
    "cov_replications",
    "replications",
    "seed",
    "threads",
    "output_dir",
    "pool_sparse_cells",
];

#[derive(Debug, Clone, PartialEq)]
pub enum CovSource {
    /// `sigma2 * Cor`; `sigma2` is estimated by Monte Carlo when absent.
    Analytic {
        sigma2: Option<f64>,
    },
    MonteCarlo,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setup: TrialSetup,
    pub tests: Vec<TestKind>,
    pub score_model: Vec<(usize, usize)>,
    pub partial_factors: Vec<usize>,
    pub cov_source: CovSource,
    pub cov_per_stratum: usize,
    pub cov_replications: usize,
    pub replications: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    pub pool_sparse_cells: bool,
}

/// Parse a real number, allowing `ln(x)`, `-ln(x)` and `a/b`.
pub fn parse_real(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) if rest.trim_start().starts_with("ln(") => (-1.0, rest.trim_start()),
        _ => (1.0, t),
    };
    if let Some(inner) = body.strip_prefix("ln(").and_then(|r| r.strip_suffix(')')) {
        let x = parse_real(inner)?;
        if x <= 0.0 {
            return Err(format!("ln of non-positive value {x}"));
        }
        return Ok(sign * x.ln());
    }
    if let Some((a, b)) = t.split_once('/') {
        let (a, b) = (parse_real(a)?, parse_real(b)?);
        return Ok(a / b);
    }
    t.parse::<f64>()
        .map_err(|_| format!("expected a number, got `{t}`"))
        .and_then(|x| {
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{t}` is not finite"))
            }
        })
}

fn parse_list<T>(text: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if text.trim().is_empty() || text.trim() == "none" {
        return Ok(Vec::new());
    }
    text.split(',').map(|p| f(p.trim())).collect()
}

fn parse_usize(text: &str) -> Result<usize, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("expected a non-negative integer, got `{}`", text.trim()))
}

fn parse_bool(text: &str) -> Result<bool, String> {
    match text.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_pair(text: &str) -> Result<(usize, usize), String> {
    let (f, l) = text
        .split_once(':')
        .ok_or_else(|| format!("expected `factor:level`, got `{text}`"))?;
    Ok((parse_usize(f)?, parse_usize(l)?))
}

fn parse_effect(text: &str) -> Result<(usize, usize, f64), String> {
    let parts: Vec<&str> = text.splitn(3, ':').collect();
    if parts.len() != 3 {
        return Err(format!("expected `factor:level:log_hr`, got `{text}`"));
    }
    Ok((
        parse_usize(parts[0])?,
        parse_usize(parts[1])?,
        parse_real(parts[2])?,
    ))
}

/// Parse `uniform` or `p11,p12;p21,p22,p23`.
pub fn parse_prevalence(text: &str) -> Result<Option<Vec<Vec<f64>>>, String> {
    if text.trim() == "uniform" {
        return Ok(None);
    }
    text.split(';')
        .map(|f| parse_list(f, parse_real))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Build a procedure from its name and parameters.
pub fn procedure_from(
    name: &str,
    bias: f64,
    measure: ImbalanceMeasure,
    block_size: usize,
    urn: (u32, u32),
    bound: u32,
) -> Result<ProcedureConfig, String> {
    Ok(match name {
        "minimization" | "pocock-simon" => ProcedureConfig::PocockSimon { bias, measure },
        "permuted-block" => ProcedureConfig::StratifiedPermutedBlock { block_size },
        "efron" => ProcedureConfig::EfronBiasedCoin { bias },
        "urn" => ProcedureConfig::WeiUrn {
            alpha: urn.0,
            beta: urn.1,
        },
        "big-stick" => ProcedureConfig::BigStick { bound },
        "complete" => ProcedureConfig::Complete,
        other => return Err(format!("unknown procedure `{other}`")),
    })
}

pub fn parse_measure(text: &str) -> Result<ImbalanceMeasure, String> {
    match text.trim() {
        "squared" => Ok(ImbalanceMeasure::Squared),
        "absolute" => Ok(ImbalanceMeasure::Absolute),
        other => Err(format!("expected squared or absolute, got `{other}`")),
    }
}

pub fn parse_levels(text: &str) -> Result<Vec<usize>, String> {
    let levels = parse_list(text, parse_usize)?;
    if levels.is_empty() {
        return Err("at least one factor is required".into());
    }
    Ok(levels)
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: body.to_string(),
        })?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key });
        }
        if !seen.insert(key.clone()) {
            return Err(ConfigError::Duplicate { line, key });
        }
        out.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

/// Parse configuration text; relative `cov_file` paths resolve against
/// `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let entries = tokenize(text)?;
    let get = |key: &str| entries.iter().find(|e| e.key == key);
    fn value<T>(
        e: Option<&Entry>,
        default: T,
        f: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, ConfigError> {
        match e {
            None => Ok(default),
            Some(e) => f(&e.value).map_err(|message| ConfigError::BadValue {
                line: e.line,
                key: e.key.clone(),
                message,
            }),
        }
    }
    let invalid = |key: &str, message: String| match get(key) {
        Some(e) => ConfigError::BadValue {
            line: e.line,
            key: e.key.clone(),
            message,
        },
        None => ConfigError::Invalid(message),
    };

    let levels_entry = get("levels").ok_or(ConfigError::Missing("levels"))?;
    let levels = value(Some(levels_entry), Vec::new(), parse_levels)?;
    let prevalence = value(get("prevalence"), None, parse_prevalence)?;
    let spec = match prevalence {
        None => FactorSpec::uniform(&levels),
        Some(p) => FactorSpec::independent(&levels, p),
    }
    .map_err(|e| invalid("prevalence", e.to_string()))?;

    let bias = value(get("bias"), MINIMIZATION_BIAS, parse_real)?;
    let measure = value(get("measure"), ImbalanceMeasure::Squared, parse_measure)?;
    let block_size = value(get("block_size"), 4, parse_usize)?;
    let urn = value(get("urn"), (1, 1), |t| {
        let v = parse_list(t, parse_usize)?;
        match v[..] {
            [a, b] => Ok((a as u32, b as u32)),
            _ => Err("expected `alpha,beta`".into()),
        }
    })?;
    let bound = value(get("big_stick_bound"), 3, parse_usize)? as u32;
    let procedure_name = value(get("procedure"), "minimization".to_string(), |t| {
        Ok(t.to_string())
    })?;
    let procedure = procedure_from(&procedure_name, bias, measure, block_size, urn, bound)
        .map_err(|m| invalid("procedure", m))?;
    procedure
        .validate()
        .map_err(|e| invalid("procedure", e.to_string()))?;

    let log_baseline = value(get("log_baseline_hazard"), 0.0625f64.ln(), parse_real)?;
    let theta = value(get("theta"), 0.0, parse_real)?;
    let effects = value(get("effects"), Vec::new(), |t| parse_list(t, parse_effect))?;
    let mut model = HazardModel::new(log_baseline, theta);
    for (f, l, b) in effects {
        model = model.with_effect(f, l, b);
    }
    model
        .validate(&spec)
        .map_err(|e| invalid("effects", e.to_string()))?;

    let design = TrialDesign {
        n: value(get("n"), 600, parse_usize)?,
        enrollment_months: value(get("enrollment_months"), 29.0, parse_real)?,
        followup_months: value(get("followup_months"), 36.0, parse_real)?,
        censor_hazard: value(get("censor_hazard"), 0.01, parse_real)?,
    };
    design
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("trial design: {e}")))?;

    let tests = value(
        get("tests"),
        vec![
            TestKind::LogRank,
            TestKind::RobustLogRank,
            TestKind::StratifiedLogRank,
            TestKind::Score,
            TestKind::RobustScore,
        ],
        |t| {
            parse_list(t, |s| {
                TestKind::parse(s).ok_or_else(|| format!("unknown test `{s}`"))
            })
        },
    )?;
    if tests.is_empty() {
        return Err(invalid("tests", "no tests selected".into()));
    }
    let score_model = value(get("score_model"), Vec::new(), |t| {
        parse_list(t, parse_pair)
    })?;
    pslab_core::WorkingModel::indicators(&score_model)
        .stratum_design(&levels)
        .map_err(|e| invalid("score_model", e.to_string()))?;
    let partial_factors = value(get("partial_factors"), vec![1], |t| {
        parse_list(t, parse_usize)
    })?;
    if partial_factors.iter().any(|&f| f == 0 || f > levels.len()) {
        return Err(invalid(
            "partial_factors",
            format!("factors must lie in 1..={}", levels.len()),
        ));
    }

    let sigma2 = value(get("sigma2"), None, |t| parse_real(t).map(Some))?;
    let cov_file = value(get("cov_file"), None, |t| Ok(Some(base.join(t))))?;
    let cov_source = match value(get("cov_source"), "analytic".to_string(), |t| {
        Ok(t.to_string())
    })?
    .as_str()
    {
        "analytic" => {
            if !spec.has_equal_prevalence() {
                return Err(invalid(
                    "cov_source",
                    "analytic covariance needs equal prevalence; use monte-carlo or file".into(),
                ));
            }
            CovSource::Analytic { sigma2 }
        }
        "monte-carlo" => CovSource::MonteCarlo,
        "file" => {
            let path =
                cov_file.ok_or_else(|| invalid("cov_source", "`cov_file` is required".into()))?;
            if !path.is_file() {
                return Err(invalid(
                    "cov_file",
                    format!("{} does not exist", path.display()),
                ));
            }
            CovSource::File(path)
        }
        other => {
            return Err(invalid(
                "cov_source",
                format!("expected analytic, monte-carlo or file, got `{other}`"),
            ))
        }
    };

    let replications = value(get("replications"), 1000, parse_usize)?;
    if replications == 0 {
        return Err(invalid("replications", "must be at least 1".into()));
    }
    let seed = value(get("seed"), 1u64, |t| {
        t.parse::<u64>()
            .map_err(|_| format!("expected a 64-bit unsigned seed, got `{t}`"))
    })?;
    let threads = value(get("threads"), None, |t| parse_usize(t).map(Some))?;
    let output_dir = value(get("output_dir"), PathBuf::from("pslab-out"), |t| {
        Ok(PathBuf::from(t))
    })?;

    Ok(ExperimentConfig {
        setup: TrialSetup {
            spec,
            procedure,
            model,
            design,
        },
        tests,
        score_model,
        partial_factors,
        cov_source,
        cov_per_stratum: value(get("cov_per_stratum"), 500, parse_usize)?,
        cov_replications: value(get("cov_replications"), 2000, parse_usize)?,
        replications,
        seed,
        threads,
        output_dir,
        pool_sparse_cells: value(get("pool_sparse_cells"), false, parse_bool)?,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}
