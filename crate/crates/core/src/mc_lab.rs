//! Monte Carlo estimation of the covariance of normalized within-stratum
//! imbalances `d_N(z) = D_N(z) / sqrt(N_z)` at the end of allocation.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;
use crate::randomization::{Allocator, ProcedureConfig};
use crate::rng::{stream, Domain};
use crate::strata::FactorSpec;
use crate::theory::{lambda_max_closed_form, to_f64, CorrelationSpec};

/// End-of-allocation imbalances of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSample {
    /// `d_N(z)`; zero for empty strata.
    pub d: Vec<f64>,
    /// `N_z`.
    pub sizes: Vec<u32>,
}

impl ImbalanceSample {
    pub fn is_present(&self, z: usize) -> bool {
        self.sizes[z] > 0
    }

    pub fn empty_strata(&self) -> usize {
        self.sizes.iter().filter(|&&n| n == 0).count()
    }
}

/// Run one allocation of `n` subjects and return its normalized imbalances.
pub fn simulate_imbalance<R: rand::Rng + ?Sized>(
    spec: &FactorSpec,
    cfg: ProcedureConfig,
    n: usize,
    rng: &mut R,
) -> Result<ImbalanceSample> {
    let mut alloc = Allocator::new(spec, cfg)?;
    for _ in 0..n {
        let z = spec.sample_stratum(rng);
        alloc.assign(z, rng)?;
    }
    let state = alloc.state();
    let sizes: Vec<u32> = (0..state.num_strata())
        .map(|z| state.stratum_size(z))
        .collect();
    let d = sizes
        .iter()
        .enumerate()
        .map(|(z, &nz)| {
            if nz == 0 {
                0.0
            } else {
                state.stratum_imbalance(z) as f64 / (nz as f64).sqrt()
            }
        })
        .collect();
    Ok(ImbalanceSample { d, sizes })
}

/// `replications` independent allocations of `n` subjects; replication `r`
/// uses its own random stream, so the result does not depend on the thread
/// count.
pub fn collect_imbalances(
    spec: &FactorSpec,
    cfg: ProcedureConfig,
    n: usize,
    replications: usize,
    master_seed: u64,
) -> Result<Vec<ImbalanceSample>> {
    if replications < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: replications,
        });
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "at least one subject is required".into(),
        ));
    }
    cfg.validate()?;
    let samples = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(master_seed, Domain::Imbalance, r);
            simulate_imbalance(spec, cfg, n, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let empty: usize = samples.iter().map(ImbalanceSample::empty_strata).sum();
    if empty > 0 {
        log::warn!("{empty} empty stratum cells excluded pairwise");
    }
    Ok(samples)
}

/// Summary of the sampled covariance structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub num_strata: usize,
    /// Row-major sample covariance (n - 1 denominator).
    pub cov: Vec<f64>,
    /// Mean of the diagonal of `cov`.
    pub sigma2: f64,
    /// Monte Carlo standard error of `sigma2` across replications.
    pub sigma2_se: f64,
    /// Average correlation over stratum pairs with agreement mask `I`.
    pub class_correlations: BTreeMap<usize, f64>,
    /// Largest eigenvalue of `cov`.
    pub mev: f64,
    pub replications: usize,
    /// Replication-stratum cells with `N_z = 0`.
    pub empty_cells: usize,
}

impl CovEstimate {
    pub fn cov_entry(&self, a: usize, b: usize) -> f64 {
        self.cov[a * self.num_strata + b]
    }

    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        self.cov_entry(a, b) / (self.cov_entry(a, a) * self.cov_entry(b, b)).sqrt()
    }

    pub fn class_correlation(&self, mask: usize) -> Option<f64> {
        self.class_correlations.get(&mask).copied()
    }
}

fn pair_cov(samples: &[ImbalanceSample], a: usize, b: usize) -> f64 {
    let mut n = 0usize;
    let (mut sa, mut sb) = (0.0, 0.0);
    for s in samples {
        if s.is_present(a) && s.is_present(b) {
            n += 1;
            sa += s.d[a];
            sb += s.d[b];
        }
    }
    if n < 2 {
        return f64::NAN;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let mut acc = 0.0;
    for s in samples {
        if s.is_present(a) && s.is_present(b) {
            acc += (s.d[a] - ma) * (s.d[b] - mb);
        }
    }
    acc / (n - 1) as f64
}

/// Sample covariance, pooled variance, class-averaged correlations and the
/// largest eigenvalue.
pub fn estimate_cov(spec: &FactorSpec, samples: &[ImbalanceSample]) -> Result<CovEstimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let ms = spec.num_strata();
    if let Some(bad) = samples
        .iter()
        .find(|s| s.d.len() != ms || s.sizes.len() != ms)
    {
        return Err(Error::Dimension(format!(
            "sample has {} strata, spec has {ms}",
            bad.d.len()
        )));
    }
    if samples.iter().any(|s| s.d.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput(
            "non-finite normalized imbalance".into(),
        ));
    }
    let upper: Vec<Vec<f64>> = (0..ms)
        .into_par_iter()
        .map(|a| (a..ms).map(|b| pair_cov(samples, a, b)).collect())
        .collect();
    let mut cov = vec![0.0; ms * ms];
    for a in 0..ms {
        for b in a..ms {
            let v = upper[a][b - a];
            cov[a * ms + b] = v;
            cov[b * ms + a] = v;
        }
    }
    if cov.iter().any(|x| x.is_nan()) {
        return Err(Error::TooFewSamples { needed: 2, got: 1 });
    }
    let sigma2 = (0..ms).map(|z| cov[z * ms + z]).sum::<f64>() / ms as f64;

    // Spread of per-replication pooled squared deviations.
    let means: Vec<f64> = (0..ms).map(|z| stratum_mean(samples, z)).collect();
    let per_rep: Vec<f64> = samples
        .iter()
        .map(|s| {
            let present: Vec<usize> = (0..ms).filter(|&z| s.is_present(z)).collect();
            present
                .iter()
                .map(|&z| (s.d[z] - means[z]).powi(2))
                .sum::<f64>()
                / present.len().max(1) as f64
        })
        .collect();
    let r = per_rep.len() as f64;
    let mean_rep = per_rep.iter().sum::<f64>() / r;
    let var_rep = per_rep.iter().map(|x| (x - mean_rep).powi(2)).sum::<f64>() / (r - 1.0);
    let sigma2_se = (var_rep / r).sqrt();

    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for a in 0..ms {
        for b in 0..ms {
            let denom = (cov[a * ms + a] * cov[b * ms + b]).sqrt();
            if denom > 0.0 {
                let e = sums.entry(spec.agreement_mask(a, b)).or_insert((0.0, 0));
                e.0 += cov[a * ms + b] / denom;
                e.1 += 1;
            }
        }
    }
    let class_correlations = sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    let mev = max_eigenvalue(&cov, ms)?;
    Ok(CovEstimate {
        num_strata: ms,
        cov,
        sigma2,
        sigma2_se,
        class_correlations,
        mev,
        replications: samples.len(),
        empty_cells: samples.iter().map(ImbalanceSample::empty_strata).sum(),
    })
}

fn stratum_mean(samples: &[ImbalanceSample], z: usize) -> f64 {
    let (s, n) = samples
        .iter()
        .filter(|s| s.is_present(z))
        .fold((0.0, 0usize), |(s, n), x| (s + x.d[z], n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// `sigma2 * lambda_max` with the exact closed-form `lambda_max`.
pub fn mev_product(spec: &FactorSpec, sigma2: f64) -> Result<f64> {
    if !spec.has_equal_prevalence() {
        return Err(Error::UnequalPrevalence(
            "the closed-form maximum eigenvalue needs equally prevalent strata".into(),
        ));
    }
    Ok(sigma2 * to_f64(&lambda_max_closed_form(spec.levels())?))
}

/// One row of a theoretical-versus-simulated correlation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassComparison {
    pub levels: Vec<usize>,
    /// `agreement[k]` is true when factor `k + 1` is shared.
    pub agreement: Vec<bool>,
    pub theoretical: f64,
    pub simulated: f64,
}

impl ClassComparison {
    pub fn abs_difference(&self) -> f64 {
        (self.theoretical - self.simulated).abs()
    }
}

/// Compare each off-diagonal class value with its Monte Carlo estimate.
pub fn compare_classes(cor: &CorrelationSpec, est: &CovEstimate) -> Vec<ClassComparison> {
    let m = cor.num_factors();
    let full = (1usize << m) - 1;
    (0..full)
        .filter_map(|mask| {
            est.class_correlation(mask)
                .map(|simulated| ClassComparison {
                    levels: cor.levels().to_vec(),
                    agreement: (0..m).map(|k| mask & (1 << k) != 0).collect(),
                    theoretical: to_f64(cor.class_value(mask)),
                    simulated,
                })
        })
        .collect()
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// CSV: `levels,agreement,theoretical,simulated,abs_difference`.
pub fn write_class_comparison<W: Write>(rows: &[ClassComparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "levels",
        "agreement",
        "theoretical",
        "simulated",
        "abs_difference",
    ])?;
    for row in rows {
        let eps: Vec<u8> = row.agreement.iter().map(|&b| b as u8).collect();
        w.write_record([
            join(&row.levels, "x"),
            join(&eps, ""),
            format!("{:.5}", row.theoretical),
            format!("{:.5}", row.simulated),
            format!("{:.5}", row.abs_difference()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a maximum-eigenvalue report.
#[derive(Debug, Clone, PartialEq)]
pub struct MevRow {
    /// Free-form configuration label (levels or prevalences).
    pub label: String,
    pub sigma2: f64,
    /// Exact closed-form eigenvalue, for equal prevalence.
    pub lambda_max: Option<f64>,
    /// `sigma2 * lambda_max`.
    pub mev_product: Option<f64>,
    /// Largest eigenvalue of the sample covariance.
    pub mev_hat: f64,
}

impl MevRow {
    pub fn from_estimate(label: impl Into<String>, spec: &FactorSpec, est: &CovEstimate) -> Self {
        let lambda_max = spec
            .has_equal_prevalence()
            .then(|| {
                lambda_max_closed_form(spec.levels())
                    .ok()
                    .map(|l| to_f64(&l))
            })
            .flatten();
        Self {
            label: label.into(),
            sigma2: est.sigma2,
            lambda_max,
            mev_product: lambda_max.map(|l| l * est.sigma2),
            mev_hat: est.mev,
        }
    }
}

/// CSV: `configuration,sigma2,lambda_max,mev_product,mev_hat`.
pub fn write_mev_report<W: Write>(rows: &[MevRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "configuration",
        "sigma2",
        "lambda_max",
        "mev_product",
        "mev_hat",
    ])?;
    let opt = |x: Option<f64>, digits: usize| x.map_or(String::new(), |v| format!("{v:.digits$}"));
    for row in rows {
        w.write_record([
            row.label.clone(),
            format!("{:.5}", row.sigma2),
            opt(row.lambda_max, 5),
            opt(row.mev_product, 5),
            format!("{:.8}", row.mev_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::cor_matrix_for_levels;
    use proptest::prelude::*;

    fn sample(d: Vec<f64>) -> ImbalanceSample {
        let sizes = vec![4; d.len()];
        ImbalanceSample { d, sizes }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = FactorSpec::uniform(&[2, 2]).unwrap();
        let cfg = ProcedureConfig::pocock_simon(0.9);
        let a = collect_imbalances(&spec, cfg, 200, 6, 11).unwrap();
        let b = collect_imbalances(&spec, cfg, 200, 6, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, collect_imbalances(&spec, cfg, 200, 6, 12).unwrap());
        assert!(collect_imbalances(&spec, cfg, 200, 1, 11).is_err());
    }

    #[test]
    fn permuted_blocks_shrink() {
        let spec = FactorSpec::uniform(&[2, 2]).unwrap();
        let cfg = ProcedureConfig::StratifiedPermutedBlock { block_size: 4 };
        for s in collect_imbalances(&spec, cfg, 4000, 20, 3).unwrap() {
            for z in 0..4 {
                assert!(s.d[z].abs() <= 2.0 / (s.sizes[z] as f64).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn complete_randomization_variance_is_one() {
        let spec = FactorSpec::uniform(&[2, 3]).unwrap();
        let samples = collect_imbalances(&spec, ProcedureConfig::Complete, 600, 1500, 5).unwrap();
        let est = estimate_cov(&spec, &samples).unwrap();
        assert!((est.sigma2 - 1.0).abs() < 0.06, "{}", est.sigma2);
        for (mask, c) in &est.class_correlations {
            if *mask != 3 {
                assert!(c.abs() < 0.06, "{mask}: {c}");
            }
        }
    }

    #[test]
    fn hand_computed_covariance() {
        let spec = FactorSpec::uniform(&[2, 2]).unwrap();
        let samples = vec![
            sample(vec![1.0, -1.0, -1.0, 1.0]),
            sample(vec![-1.0, 1.0, 1.0, -1.0]),
            sample(vec![0.0, 0.0, 0.0, 0.0]),
        ];
        let est = estimate_cov(&spec, &samples).unwrap();
        assert!((est.sigma2 - 1.0).abs() < 1e-12);
        assert!((est.cov_entry(0, 1) + 1.0).abs() < 1e-12);
        assert!((est.class_correlation(0).unwrap() - 1.0).abs() < 1e-12);
        assert!((est.class_correlation(1).unwrap() + 1.0).abs() < 1e-12);
        assert!((est.mev - 4.0).abs() < 1e-9);
        assert!(estimate_cov(&spec, &samples[..1]).is_err());
    }

    #[test]
    fn empty_strata_are_excluded_pairwise() {
        let spec = FactorSpec::uniform(&[2, 2]).unwrap();
        let mut samples = vec![
            sample(vec![1.0, 2.0, 0.5, 0.0]),
            sample(vec![3.0, 0.0, 0.5, 1.0]),
            sample(vec![2.0, 1.0, 1.5, 2.0]),
        ];
        samples[1].sizes[1] = 0;
        samples[1].d[1] = 0.0;
        let est = estimate_cov(&spec, &samples).unwrap();
        // stratum 1 uses replications 0 and 2 only: values 2, 1
        assert!((est.cov_entry(1, 1) - 0.5).abs() < 1e-12);
        // pair (0,1): x = (1, 2), y = (2, 1)
        assert!((est.cov_entry(0, 1) + 0.5).abs() < 1e-12);
        assert_eq!(est.empty_cells, 1);
    }

    #[test]
    fn mev_product_examples() {
        let two = FactorSpec::uniform(&[2, 2]).unwrap();
        assert!((mev_product(&two, 0.23509).unwrap() - 0.94036).abs() < 1e-5);
        let three = FactorSpec::uniform(&[2, 2, 2]).unwrap();
        assert!((mev_product(&three, 0.48872).unwrap() - 0.97744).abs() < 1e-5);
        let seven = FactorSpec::uniform(&[2; 7]).unwrap();
        assert!((mev_product(&seven, 0.93641).unwrap() - 0.99884).abs() < 1e-5);
        let unequal =
            FactorSpec::independent(&[2, 3], vec![vec![0.5, 0.5], vec![0.25, 0.5, 0.25]]).unwrap();
        assert!(matches!(
            mev_product(&unequal, 0.5),
            Err(Error::UnequalPrevalence(_))
        ));
    }

    #[test]
    fn reports_have_expected_columns() {
        let spec = FactorSpec::uniform(&[2, 2]).unwrap();
        let cfg = ProcedureConfig::pocock_simon(0.9);
        let samples = collect_imbalances(&spec, cfg, 400, 50, 1).unwrap();
        let est = estimate_cov(&spec, &samples).unwrap();
        let rows = compare_classes(&cor_matrix_for_levels(&[2, 2]).unwrap(), &est);
        assert_eq!(rows.len(), 3);
        let mut buf = Vec::new();
        write_class_comparison(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .starts_with("levels,agreement,theoretical,simulated,abs_difference\n2x2,00,1.00000,"));
        let mut buf = Vec::new();
        write_mev_report(&[MevRow::from_estimate("2x2", &spec, &est)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains(",4.00000,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn estimate_is_order_invariant(
            values in proptest::collection::vec(-3.0f64..3.0, 40),
            rotate in 0usize..10,
        ) {
            let spec = FactorSpec::uniform(&[2, 2]).unwrap();
            let samples: Vec<ImbalanceSample> =
                values.chunks(4).map(|c| sample(c.to_vec())).collect();
            let mut shuffled = samples.clone();
            shuffled.rotate_left(rotate);
            shuffled.reverse();
            let a = estimate_cov(&spec, &samples).unwrap();
            let b = estimate_cov(&spec, &shuffled).unwrap();
            prop_assert!((a.sigma2 - b.sigma2).abs() < 1e-12);
            prop_assert!((a.mev - b.mev).abs() < 1e-9);
            for (x, y) in a.cov.iter().zip(&b.cov) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
