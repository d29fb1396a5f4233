//! Factor-level lattice, mixed-radix stratum coding and covariate sampling.
//!
//! Factors and levels follow the clinical convention and are numbered from 1
//! in the public API: factor `k` takes levels `1..=n_k`. The linear stratum
//! index is a mixed-radix number with factor 1 as the most significant digit,
//! so for `n = (2, 3)` the strata are ordered
//! `(1,1) (1,2) (1,3) (2,1) (2,2) (2,3)`.

use rand::Rng;

use crate::error::{Error, Result};

const PROB_TOLERANCE: f64 = 1e-12;

/// How stratum prevalences are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum PrevalenceModel {
    /// Factors are independent; one level-probability vector per factor.
    Independent(Vec<Vec<f64>>),
    /// Arbitrary joint distribution, one probability per stratum in linear order.
    Joint(Vec<f64>),
}

/// Prognostic factors, their level counts and the population prevalence model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    levels: Vec<usize>,
    prevalence: PrevalenceModel,
    strides: Vec<usize>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

/// A stratum in linear (mixed-radix) form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StratumIndex(pub usize);

/// Covariates of one simulated subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectCovariates {
    pub stratum: StratumIndex,
    /// 1-based level of each factor.
    pub raw_levels: Vec<usize>,
}

fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidFactorSpec(format!(
            "{what} contains a negative or non-finite probability"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::InvalidFactorSpec(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl FactorSpec {
    /// Independent factors with equally prevalent levels.
    pub fn uniform(levels: &[usize]) -> Result<Self> {
        let probs = levels
            .iter()
            .map(|&n| vec![1.0 / n.max(1) as f64; n])
            .collect();
        Self::independent(levels, probs)
    }

    /// Independent factors with the given per-factor level probabilities.
    pub fn independent(levels: &[usize], probs: Vec<Vec<f64>>) -> Result<Self> {
        Self::validate_levels(levels)?;
        if probs.len() != levels.len() {
            return Err(Error::InvalidFactorSpec(format!(
                "{} probability vectors for {} factors",
                probs.len(),
                levels.len()
            )));
        }
        for (k, (p, &n)) in probs.iter().zip(levels).enumerate() {
            if p.len() != n {
                return Err(Error::InvalidFactorSpec(format!(
                    "factor {} has {} levels but {} probabilities",
                    k + 1,
                    n,
                    p.len()
                )));
            }
            check_probabilities(p, &format!("factor {} level distribution", k + 1))?;
        }
        Ok(Self::assemble(levels, PrevalenceModel::Independent(probs)))
    }

    /// Dependent factors described by a joint distribution over strata.
    pub fn joint(levels: &[usize], weights: Vec<f64>) -> Result<Self> {
        Self::validate_levels(levels)?;
        let num_strata: usize = levels.iter().product();
        if weights.len() != num_strata {
            return Err(Error::InvalidFactorSpec(format!(
                "joint distribution has {} entries, expected {}",
                weights.len(),
                num_strata
            )));
        }
        check_probabilities(&weights, "joint distribution")?;
        Ok(Self::assemble(levels, PrevalenceModel::Joint(weights)))
    }

    fn validate_levels(levels: &[usize]) -> Result<()> {
        if levels.is_empty() {
            return Err(Error::InvalidFactorSpec("no factors".into()));
        }
        if let Some(k) = levels.iter().position(|&n| n < 2) {
            return Err(Error::InvalidFactorSpec(format!(
                "factor {} has fewer than 2 levels",
                k + 1
            )));
        }
        levels
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidFactorSpec("too many strata".into()))?;
        Ok(())
    }

    fn assemble(levels: &[usize], prevalence: PrevalenceModel) -> Self {
        let m = levels.len();
        let mut strides = vec![1usize; m];
        for k in (0..m.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * levels[k + 1];
        }
        let num_strata = strides[0] * levels[0];
        let weights: Vec<f64> = match &prevalence {
            PrevalenceModel::Joint(w) => w.clone(),
            PrevalenceModel::Independent(p) => (0..num_strata)
                .map(|z| (0..m).map(|k| p[k][(z / strides[k]) % levels[k]]).product())
                .collect(),
        };
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            levels: levels.to_vec(),
            prevalence,
            strides,
            weights,
            cumulative,
        }
    }

    pub fn num_factors(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn prevalence_model(&self) -> &PrevalenceModel {
        &self.prevalence
    }

    /// `M_s`, the product of the level counts.
    pub fn num_strata(&self) -> usize {
        self.strides[0] * self.levels[0]
    }

    /// Population probability `w_z` of every stratum, in linear order.
    pub fn stratum_weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every stratum has prevalence `1/M_s` (to 1e-12).
    pub fn has_equal_prevalence(&self) -> bool {
        let target = 1.0 / self.num_strata() as f64;
        self.weights
            .iter()
            .all(|w| (w - target).abs() <= PROB_TOLERANCE)
    }

    /// Marginal probability of `level` (1-based) of `factor` (1-based).
    pub fn level_probability(&self, factor: usize, level: usize) -> Result<f64> {
        self.check_factor_level(factor, level)?;
        Ok(match &self.prevalence {
            PrevalenceModel::Independent(p) => p[factor - 1][level - 1],
            PrevalenceModel::Joint(_) => self
                .marginal_members(factor, level)?
                .iter()
                .map(|z| self.weights[z.0])
                .sum(),
        })
    }

    /// 0-based level of factor index `k` (0-based) in stratum `z`.
    #[inline]
    pub fn level_of(&self, z: usize, k: usize) -> usize {
        (z / self.strides[k]) % self.levels[k]
    }

    /// Mixed-radix encoding of 1-based levels.
    pub fn encode(&self, multi_index: &[usize]) -> Result<StratumIndex> {
        if multi_index.len() != self.levels.len() {
            return Err(Error::Dimension(format!(
                "{} levels given for {} factors",
                multi_index.len(),
                self.levels.len()
            )));
        }
        let mut linear = 0;
        for (k, &level) in multi_index.iter().enumerate() {
            self.check_factor_level(k + 1, level)?;
            linear += (level - 1) * self.strides[k];
        }
        Ok(StratumIndex(linear))
    }

    /// 1-based levels of stratum `z`.
    pub fn decode(&self, z: StratumIndex) -> Vec<usize> {
        (0..self.levels.len())
            .map(|k| self.level_of(z.0, k) + 1)
            .collect()
    }

    /// Bitmask of the factors on which two strata agree (bit `k` = factor `k + 1`).
    #[inline]
    pub fn agreement_mask(&self, a: usize, b: usize) -> usize {
        (0..self.levels.len())
            .filter(|&k| self.level_of(a, k) == self.level_of(b, k))
            .fold(0, |mask, k| mask | (1 << k))
    }

    /// Draw the stratum of a new subject.
    pub fn sample_stratum<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.prevalence {
            PrevalenceModel::Independent(p) => {
                let mut z = 0;
                for (k, probs) in p.iter().enumerate() {
                    z += pick(probs.iter().copied(), rng.random::<f64>()) * self.strides[k];
                }
                z
            }
            PrevalenceModel::Joint(_) => {
                let u: f64 = rng.random();
                let last = self.cumulative.len() - 1;
                let z = self.cumulative.partition_point(|&c| c <= u).min(last);
                // skip trailing zero-mass strata hit through rounding
                if self.weights[z] > 0.0 {
                    z
                } else {
                    (0..=z).rev().find(|&i| self.weights[i] > 0.0).unwrap_or(z)
                }
            }
        }
    }

    fn check_factor_level(&self, factor: usize, level: usize) -> Result<()> {
        if factor == 0
            || factor > self.levels.len()
            || level == 0
            || level > self.levels[factor - 1]
        {
            return Err(Error::LevelOutOfRange { factor, level });
        }
        Ok(())
    }

    /// Strata with `level` of `factor` (both 1-based), ascending.
    pub fn marginal_members(&self, factor: usize, level: usize) -> Result<Vec<StratumIndex>> {
        self.check_factor_level(factor, level)?;
        let k = factor - 1;
        Ok((0..self.num_strata())
            .filter(|&z| self.level_of(z, k) == level - 1)
            .map(StratumIndex)
            .collect())
    }
}

fn pick(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    last_positive
}

/// All strata in ascending linear order.
pub fn enumerate_strata(spec: &FactorSpec) -> Vec<StratumIndex> {
    (0..spec.num_strata()).map(StratumIndex).collect()
}

/// Draw one subject's covariates from the prevalence model.
pub fn sample_covariates<R: Rng + ?Sized>(spec: &FactorSpec, rng: &mut R) -> SubjectCovariates {
    let z = StratumIndex(spec.sample_stratum(rng));
    SubjectCovariates {
        stratum: z,
        raw_levels: spec.decode(z),
    }
}
