//! Treatment-effect tests for right-censored data: unstratified, stratified
//! and partially stratified log-rank tests, the Cox score test with the
//! Lin-Wei robust variance, and robust variants whose variance accounts for
//! correlated within-stratum imbalances through `G' Cov G`.
//!
//! Risk sets use the Breslow convention for tied times. All tests are
//! one-sided for a treatment benefit (negative statistic) at level 0.025.

use std::fmt;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::survival_sim::{SubjectRecord, TrialDataset};

pub const ALPHA_ONE_SIDED: f64 = 0.025;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 50;

fn level_of(levels: &[usize], z: usize, k: usize) -> usize {
    let stride: usize = levels[k + 1..].iter().product();
    (z / stride) % levels[k]
}

/// Indicator columns `W_i` of the Cox working model; each column is
/// `I(Z_factor = level)` with 1-based factor and level.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkingModel {
    pub columns: Vec<(usize, usize)>,
}

impl WorkingModel {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn indicators(columns: &[(usize, usize)]) -> Self {
        Self {
            columns: columns.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Design row for every stratum.
    pub fn stratum_design(&self, levels: &[usize]) -> Result<Vec<Vec<f64>>> {
        for &(factor, level) in &self.columns {
            if factor == 0 || factor > levels.len() || level == 0 || level > levels[factor - 1] {
                return Err(Error::LevelOutOfRange { factor, level });
            }
        }
        let ms: usize = levels.iter().product();
        Ok((0..ms)
            .map(|z| {
                self.columns
                    .iter()
                    .map(|&(f, l)| (level_of(levels, z, f - 1) + 1 == l) as u8 as f64)
                    .collect()
            })
            .collect())
    }
}

/// Grouping of randomization strata into analysis strata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    block_of: Vec<usize>,
    num_blocks: usize,
}

impl Partition {
    /// One block holding every stratum.
    pub fn whole(num_strata: usize) -> Self {
        Self {
            block_of: vec![0; num_strata],
            num_blocks: 1,
        }
    }

    /// Every randomization stratum is its own block.
    pub fn identity(num_strata: usize) -> Self {
        Self {
            block_of: (0..num_strata).collect(),
            num_blocks: num_strata,
        }
    }

    /// Blocks formed by the levels of the given 1-based factors.
    pub fn by_factors(levels: &[usize], factors: &[usize]) -> Result<Self> {
        if let Some(&f) = factors.iter().find(|&&f| f == 0 || f > levels.len()) {
            return Err(Error::InvalidInput(format!("no factor {f}")));
        }
        let ms: usize = levels.iter().product();
        let block_of = (0..ms)
            .map(|z| {
                factors.iter().fold(0, |acc, &f| {
                    acc * levels[f - 1] + level_of(levels, z, f - 1)
                })
            })
            .collect();
        let num_blocks = factors.iter().map(|&f| levels[f - 1]).product();
        Ok(Self {
            block_of,
            num_blocks,
        })
    }

    pub fn from_blocks(block_of: Vec<usize>) -> Self {
        let num_blocks = block_of.iter().max().map_or(0, |m| m + 1);
        Self {
            block_of,
            num_blocks,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn block_of(&self, stratum: usize) -> usize {
        self.block_of[stratum]
    }

    fn check(&self, data: &TrialDataset) -> Result<()> {
        if self.block_of.len() != data.num_strata() {
            return Err(Error::Dimension(format!(
                "partition covers {} strata, data has {}",
                self.block_of.len(),
                data.num_strata()
            )));
        }
        Ok(())
    }

    fn members(&self, data: &TrialDataset) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_blocks];
        for (i, s) in data.subjects.iter().enumerate() {
            out[self.block_of[s.stratum]].push(i);
        }
        out
    }
}

/// Risk-set aggregates at each distinct event time, ascending.
#[derive(Debug, Clone, Default)]
struct EventTable {
    times: Vec<f64>,
    /// Events at the time.
    d: Vec<f64>,
    /// Treatment-arm events at the time.
    d1: Vec<f64>,
    /// `sum_{X_k >= t} exp(eta_k)`.
    r0: Vec<f64>,
    /// `sum_{X_k >= t} exp(eta_k) I_k`.
    r1: Vec<f64>,
}

impl EventTable {
    fn build(subjects: &[SubjectRecord], idx: &[usize], eta: &[f64]) -> Self {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| subjects[a].time.total_cmp(&subjects[b].time));
        let n = order.len();
        let mut suffix0 = vec![0.0; n + 1];
        let mut suffix1 = vec![0.0; n + 1];
        for p in (0..n).rev() {
            let i = order[p];
            let w = eta[i].exp();
            suffix0[p] = suffix0[p + 1] + w;
            suffix1[p] = suffix1[p + 1] + w * subjects[i].arm.indicator() as f64;
        }
        let mut table = Self::default();
        let mut p = 0;
        while p < n {
            let t = subjects[order[p]].time;
            let mut q = p;
            let (mut d, mut d1) = (0.0, 0.0);
            while q < n && subjects[order[q]].time == t {
                let s = &subjects[order[q]];
                if s.event {
                    d += 1.0;
                    d1 += s.arm.indicator() as f64;
                }
                q += 1;
            }
            if d > 0.0 {
                table.times.push(t);
                table.d.push(d);
                table.d1.push(d1);
                table.r0.push(suffix0[p]);
                table.r1.push(suffix1[p]);
            }
            p = q;
        }
        table
    }

    /// `sum_events (I_i - R1/R0)`.
    fn score(&self) -> f64 {
        (0..self.times.len())
            .map(|u| self.d1[u] - self.d[u] * self.r1[u] / self.r0[u])
            .sum()
    }

    /// `sum_events R1 R0c / R0^2` with unit weights.
    fn logrank_variance(&self) -> f64 {
        (0..self.times.len())
            .map(|u| {
                let p = self.r1[u] / self.r0[u];
                self.d[u] * p * (1.0 - p)
            })
            .sum()
    }

    /// Lin-Wei residuals for the subjects in `idx`, written into `out`.
    fn residuals(&self, subjects: &[SubjectRecord], idx: &[usize], eta: &[f64], out: &mut [f64]) {
        let k = self.times.len();
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        let (mut sa, mut sb) = (0.0, 0.0);
        for u in 0..k {
            sa += self.d[u] / self.r0[u];
            sb += self.d[u] * self.r1[u] / (self.r0[u] * self.r0[u]);
            a[u] = sa;
            b[u] = sb;
        }
        for &i in idx {
            let s = &subjects[i];
            let ind = s.arm.indicator() as f64;
            // event times <= X_i
            let m = self.times.partition_point(|&t| t <= s.time);
            let mut o = 0.0;
            if s.event {
                let u = m - 1;
                o += ind - self.r1[u] / self.r0[u];
            }
            if m > 0 {
                o -= eta[i].exp() * (ind * a[m - 1] - b[m - 1]);
            }
            out[i] = o;
        }
    }
}

/// Result of the constrained (`theta = 0`) Cox fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the score in `beta` at exit.
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

fn linear_predictor(
    data: &TrialDataset,
    design: &[Vec<f64>],
    theta: f64,
    beta: &[f64],
) -> Vec<f64> {
    data.subjects
        .iter()
        .map(|s| {
            theta * s.arm.indicator() as f64
                + design[s.stratum]
                    .iter()
                    .zip(beta)
                    .map(|(w, b)| w * b)
                    .sum::<f64>()
        })
        .collect()
}

/// Breslow log partial likelihood at `(theta, beta)`.
pub fn log_partial_likelihood(
    data: &TrialDataset,
    model: &WorkingModel,
    theta: f64,
    beta: &[f64],
) -> Result<f64> {
    let design = model.stratum_design(&data.levels)?;
    if beta.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} columns",
            beta.len(),
            model.dim()
        )));
    }
    let eta = linear_predictor(data, &design, theta, beta);
    let idx: Vec<usize> = (0..data.len()).collect();
    let table = EventTable::build(&data.subjects, &idx, &eta);
    let event_eta: f64 = data
        .subjects
        .iter()
        .zip(&eta)
        .filter(|(s, _)| s.event)
        .map(|(_, e)| e)
        .sum();
    Ok(event_eta
        - (0..table.times.len())
            .map(|u| table.d[u] * table.r0[u].ln())
            .sum::<f64>())
}

/// Log-likelihood, gradient and information in `beta` at `theta = 0`.
fn cox_terms(data: &TrialDataset, design: &[Vec<f64>], beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let eta = linear_predictor(data, design, 0.0, beta);
    let subjects = &data.subjects;
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[b].time.total_cmp(&subjects[a].time));
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut q = 0;
    while q < order.len() {
        let t = subjects[order[q]].time;
        let start = q;
        while q < order.len() && subjects[order[q]].time == t {
            let i = order[q];
            let w = eta[i].exp();
            let x = &design[subjects[i].stratum];
            s0 += w;
            for a in 0..p {
                s1[a] += w * x[a];
                for b in 0..p {
                    s2[a * p + b] += w * x[a] * x[b];
                }
            }
            q += 1;
        }
        for &i in &order[start..q] {
            if !subjects[i].event {
                continue;
            }
            let x = &design[subjects[i].stratum];
            ll += eta[i] - s0.ln();
            for a in 0..p {
                let ma = s1[a] / s0;
                grad[a] += x[a] - ma;
                for b in 0..p {
                    info[a * p + b] += s2[a * p + b] / s0 - ma * s1[b] / s0;
                }
            }
        }
    }
    (ll, grad, info)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximum partial likelihood estimate of `beta` under `theta = 0` by
/// Newton-Raphson with step halving.
pub fn fit_beta0(data: &TrialDataset, model: &WorkingModel) -> Result<CoxFit> {
    if data.num_events() == 0 {
        return Err(Error::NoEvents);
    }
    let design = model.stratum_design(&data.levels)?;
    let p = model.dim();
    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut info) = cox_terms(data, &design, &beta);
    let mut iterations = 0;
    while sup_norm(&grad) > GRADIENT_TOLERANCE {
        if iterations == MAX_NEWTON_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations,
                gradient: sup_norm(&grad),
            });
        }
        iterations += 1;
        let step = cholesky_solve(&info, &grad)?;
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let next = cox_terms(data, &design, &trial);
            if next.0.is_finite() && next.0 >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = trial;
                (ll, grad, info) = next;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::NonConvergence {
                    iterations,
                    gradient: sup_norm(&grad),
                });
            }
        }
    }
    Ok(CoxFit {
        beta,
        iterations,
        gradient_norm: sup_norm(&grad),
        log_likelihood: ll,
    })
}

/// Numerator and residuals of the score test at `beta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComponents {
    pub fit: CoxFit,
    /// `U_theta(0, beta0)`, unscaled.
    pub u: f64,
    /// `N^{-1/2} U`.
    pub numerator: f64,
    /// Lin-Wei residuals `O_i`.
    pub residuals: Vec<f64>,
}

/// Fit the working model and compute the score and residuals.
pub fn score_components(data: &TrialDataset, model: &WorkingModel) -> Result<ScoreComponents> {
    let fit = fit_beta0(data, model)?;
    let design = model.stratum_design(&data.levels)?;
    let eta = linear_predictor(data, &design, 0.0, &fit.beta);
    let idx: Vec<usize> = (0..data.len()).collect();
    let table = EventTable::build(&data.subjects, &idx, &eta);
    let u = table.score();
    let mut residuals = vec![0.0; data.len()];
    table.residuals(&data.subjects, &idx, &eta, &mut residuals);
    Ok(ScoreComponents {
        fit,
        u,
        numerator: u / (data.len() as f64).sqrt(),
        residuals,
    })
}

/// Residuals with `exp(beta' W) = 1`, computed separately within each block
/// of `partition`.
pub fn logrank_residuals(data: &TrialDataset, partition: &Partition) -> Result<Vec<f64>> {
    partition.check(data)?;
    let eta = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for idx in partition.members(data) {
        let table = EventTable::build(&data.subjects, &idx, &eta);
        table.residuals(&data.subjects, &idx, &eta, &mut out);
    }
    Ok(out)
}

/// Which test a report belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestKind {
    LogRank,
    RobustLogRank,
    StratifiedLogRank,
    PartialLogRank,
    RobustPartialLogRank,
    Score,
    RobustScore,
}

impl TestKind {
    pub const ALL: [TestKind; 7] = [
        TestKind::LogRank,
        TestKind::RobustLogRank,
        TestKind::StratifiedLogRank,
        TestKind::PartialLogRank,
        TestKind::RobustPartialLogRank,
        TestKind::Score,
        TestKind::RobustScore,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TestKind::LogRank => "T_L",
            TestKind::RobustLogRank => "T_RL",
            TestKind::StratifiedLogRank => "T_SL",
            TestKind::PartialLogRank => "T_PL",
            TestKind::RobustPartialLogRank => "T_RPL",
            TestKind::Score => "T_S",
            TestKind::RobustScore => "T_RS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix("T_").unwrap_or(&key);
        Self::ALL
            .into_iter()
            .find(|k| k.label().trim_start_matches("T_") == key)
    }

    pub fn is_robust(self) -> bool {
        matches!(
            self,
            TestKind::RobustLogRank | TestKind::RobustPartialLogRank | TestKind::RobustScore
        )
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-stratum inputs to the robust variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumCell {
    pub n: usize,
    /// Stratum mean of the arm-signed residuals, `E_z`.
    pub mean: f64,
    pub var_control: f64,
    pub var_treatment: f64,
}

/// Pieces of `B_R = psi + G' Cov G`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustComponents {
    /// `N^{-1} sum_z N_z (V_z1/2 + V_z0/2)`.
    pub psi: f64,
    /// `G_z = sqrt(N_z / N) E_z`.
    pub g: Vec<f64>,
    pub gtg: f64,
    pub gtcovg: f64,
    pub cells: Vec<StratumCell>,
}

impl RobustComponents {
    pub fn variance(&self) -> f64 {
        self.psi + self.gtcovg
    }
}

/// Options for the robust variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RobustOptions {
    /// Pool a stratum-arm cell with fewer than 2 residuals with the other
    /// arm of the same stratum instead of failing.
    pub pool_sparse_cells: bool,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn check_cov(cov: &[f64], ms: usize) -> Result<()> {
    if cov.len() != ms * ms {
        return Err(Error::Dimension(format!(
            "covariance has {} entries, expected {ms}x{ms}",
            cov.len()
        )));
    }
    for a in 0..ms {
        for b in 0..a {
            let (x, y) = (cov[a * ms + b], cov[b * ms + a]);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs()) {
                return Err(Error::InvalidInput("covariance is not symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Robust variance from per-subject residuals, grouped by randomization
/// stratum and arm.
///
/// A residual estimates `O_i1` for a treated subject and `-O_i0` for a
/// control, so cell statistics use the arm-signed value `(2 I_i - 1) O_i`.
pub fn robust_variance(
    data: &TrialDataset,
    residuals: &[f64],
    cov: &[f64],
    opts: RobustOptions,
) -> Result<RobustComponents> {
    let ms = data.num_strata();
    check_cov(cov, ms)?;
    if residuals.len() != data.len() {
        return Err(Error::Dimension(
            "one residual per subject is required".into(),
        ));
    }
    let mut groups: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; ms];
    for (s, &r) in data.subjects.iter().zip(residuals) {
        groups[s.stratum][s.arm.indicator() as usize].push(s.arm.sign() as f64 * r);
    }
    let n = data.len() as f64;
    let mut cells = Vec::with_capacity(ms);
    let mut psi = 0.0;
    for (z, [control, treatment]) in groups.iter().enumerate() {
        let nz = control.len() + treatment.len();
        if nz == 0 {
            cells.push(StratumCell {
                n: 0,
                mean: 0.0,
                var_control: 0.0,
                var_treatment: 0.0,
            });
            continue;
        }
        let all: Vec<f64> = control.iter().chain(treatment).copied().collect();
        let var_of = |cell: &[f64], arm: u8| -> Result<f64> {
            if cell.len() >= 2 {
                return Ok(sample_variance(cell));
            }
            if opts.pool_sparse_cells && all.len() >= 2 {
                log::warn!(
                    "stratum {z} arm {arm}: pooling {} residual(s) with the other arm",
                    cell.len()
                );
                return Ok(sample_variance(&all));
            }
            Err(Error::SparseCell {
                stratum: z,
                arm,
                count: cell.len(),
            })
        };
        let var_control = var_of(control, 0)?;
        let var_treatment = var_of(treatment, 1)?;
        let mean = all.iter().sum::<f64>() / nz as f64;
        psi += nz as f64 * (0.5 * var_control + 0.5 * var_treatment);
        cells.push(StratumCell {
            n: nz,
            mean,
            var_control,
            var_treatment,
        });
    }
    psi /= n;
    let g: Vec<f64> = cells
        .iter()
        .map(|c| (c.n as f64 / n).sqrt() * c.mean)
        .collect();
    let gtg = g.iter().map(|x| x * x).sum();
    let gtcovg = (0..ms)
        .map(|a| g[a] * (0..ms).map(|b| cov[a * ms + b] * g[b]).sum::<f64>())
        .sum();
    Ok(RobustComponents {
        psi,
        g,
        gtg,
        gtcovg,
        cells,
    })
}

/// One test outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub kind: TestKind,
    pub n: usize,
    pub statistic: f64,
    /// `N^{-1/2}` times the summed score.
    pub numerator: f64,
    /// Variance of the numerator used in the denominator.
    pub variance: f64,
    /// `Phi(T)`.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub rejected: bool,
    pub robust: Option<RobustComponents>,
}

fn report(
    kind: TestKind,
    n: usize,
    numerator: f64,
    variance: f64,
    robust: Option<RobustComponents>,
) -> Result<TestReport> {
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::ZeroVariance(variance));
    }
    let statistic = numerator / variance.sqrt();
    let normal = Normal::standard();
    let p_one_sided = normal.cdf(statistic);
    let p_two_sided = 2.0 * normal.cdf(-statistic.abs());
    Ok(TestReport {
        kind,
        n,
        statistic,
        numerator,
        variance,
        p_one_sided,
        p_two_sided,
        rejected: p_one_sided < ALPHA_ONE_SIDED,
        robust,
    })
}

fn whole_table(data: &TrialDataset) -> Result<EventTable> {
    if data.num_events() == 0 {
        return Err(Error::NoEvents);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(EventTable::build(
        &data.subjects,
        &idx,
        &vec![0.0; data.len()],
    ))
}

/// Unstratified log-rank test `T_L = U / sqrt(N sigma^2)`.
pub fn logrank_test(data: &TrialDataset) -> Result<TestReport> {
    let table = whole_table(data)?;
    let n = data.len() as f64;
    report(
        TestKind::LogRank,
        data.len(),
        table.score() / n.sqrt(),
        table.logrank_variance() / n,
        None,
    )
}

/// Log-rank statistic summed over analysis strata: `sum U / sqrt(sum V)`.
/// Blocks without events contribute nothing.
pub fn stratified_logrank_test(data: &TrialDataset, partition: &Partition) -> Result<TestReport> {
    let (u, v) = logrank_sums(data, partition)?;
    let kind = if partition.num_blocks() == data.num_strata() {
        TestKind::StratifiedLogRank
    } else {
        TestKind::PartialLogRank
    };
    let n = data.len() as f64;
    report(kind, data.len(), u / n.sqrt(), v / n, None)
}

/// Unscaled log-rank numerator and variance summed over the blocks of
/// `partition`.
pub fn logrank_sums(data: &TrialDataset, partition: &Partition) -> Result<(f64, f64)> {
    partition.check(data)?;
    if data.num_events() == 0 {
        return Err(Error::NoEvents);
    }
    let eta = vec![0.0; data.len()];
    let (mut u, mut v) = (0.0, 0.0);
    for (b, idx) in partition.members(data).iter().enumerate() {
        let table = EventTable::build(&data.subjects, idx, &eta);
        if table.times.is_empty() {
            log::debug!("analysis stratum {b} has no events");
            continue;
        }
        u += table.score();
        v += table.logrank_variance();
    }
    Ok((u, v))
}

/// Cox score test with the Lin-Wei variance `N^{-1} sum O_i^2`.
pub fn score_test(data: &TrialDataset, model: &WorkingModel) -> Result<TestReport> {
    let comp = score_components(data, model)?;
    score_test_from_components(data, &comp)
}

/// `T_S` from already computed components.
pub fn score_test_from_components(
    data: &TrialDataset,
    comp: &ScoreComponents,
) -> Result<TestReport> {
    let b = comp.residuals.iter().map(|o| o * o).sum::<f64>() / data.len() as f64;
    report(TestKind::Score, data.len(), comp.numerator, b, None)
}

/// Robust log-rank (`partition` = whole population) or robust partially
/// stratified log-rank test.
pub fn robust_logrank_test(
    data: &TrialDataset,
    partition: &Partition,
    cov: &[f64],
    opts: RobustOptions,
) -> Result<TestReport> {
    let plain = if partition.num_blocks() == 1 {
        logrank_test(data)?
    } else {
        stratified_logrank_test(data, partition)?
    };
    let residuals = logrank_residuals(data, partition)?;
    let comp = robust_variance(data, &residuals, cov, opts)?;
    let kind = if partition.num_blocks() == 1 {
        TestKind::RobustLogRank
    } else {
        TestKind::RobustPartialLogRank
    };
    report(
        kind,
        data.len(),
        plain.numerator,
        comp.variance(),
        Some(comp),
    )
}

/// Robust score test `T_RS`.
pub fn robust_score_test(
    data: &TrialDataset,
    model: &WorkingModel,
    cov: &[f64],
    opts: RobustOptions,
) -> Result<TestReport> {
    let comp = score_components(data, model)?;
    robust_score_test_from_components(
        data,
        &comp,
        robust_variance(data, &comp.residuals, cov, opts)?,
    )
}

/// `T_RS` from components and a robust variance built on their residuals.
pub fn robust_score_test_from_components(
    data: &TrialDataset,
    comp: &ScoreComponents,
    rc: RobustComponents,
) -> Result<TestReport> {
    report(
        TestKind::RobustScore,
        data.len(),
        comp.numerator,
        rc.variance(),
        Some(rc),
    )
}

/// Score test and its robust counterpart sharing one model fit.
pub fn score_and_robust_score(
    data: &TrialDataset,
    model: &WorkingModel,
    cov: &[f64],
    opts: RobustOptions,
) -> Result<(TestReport, TestReport)> {
    let comp = score_components(data, model)?;
    Ok((
        score_test_from_components(data, &comp)?,
        robust_score_test_from_components(
            data,
            &comp,
            robust_variance(data, &comp.residuals, cov, opts)?,
        )?,
    ))
}

/// Table-style diagnostics pairing a naive test with its robust version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `G' Cov G / G' G`; `None` when `G' G = 0`.
    pub gtcovg_over_gtg: Option<f64>,
    /// `G' G / psi`.
    pub gtg_over_psi: Option<f64>,
    /// `N psi`.
    pub n_psi: f64,
    /// `N` times the naive variance.
    pub n_naive_variance: f64,
    /// `N` times the robust variance.
    pub n_robust_variance: f64,
}

pub fn diagnostics(naive: &TestReport, robust: &TestReport) -> Result<Diagnostics> {
    let rc = robust
        .robust
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no robust components", robust.kind)))?;
    let n = robust.n as f64;
    Ok(Diagnostics {
        gtcovg_over_gtg: (rc.gtg > 0.0).then(|| rc.gtcovg / rc.gtg),
        gtg_over_psi: (rc.psi > 0.0).then(|| rc.gtg / rc.psi),
        n_psi: n * rc.psi,
        n_naive_variance: n * naive.variance,
        n_robust_variance: n * robust.variance,
    })
}
