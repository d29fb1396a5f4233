//! Exact asymptotic correlation structure of the normalized within-stratum
//! imbalances under minimization with equally prevalent strata.
//!
//! A correlation matrix that is invariant under permutations of the levels of
//! every factor is determined by one value `c_I` per agreement set `I` (the
//! factors on which two strata share a level). Subsets are bitmasks with bit
//! `k` standing for factor `k + 1`. All arithmetic here is exact; conversion to
//! `f64` happens only through the `*_f64` accessors.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::strata::FactorSpec;

pub const MAX_SUBSET_FACTORS: usize = 24;

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn check_subset_limit(m: usize) -> Result<()> {
    if m > MAX_SUBSET_FACTORS {
        return Err(Error::TooManyFactors(m));
    }
    Ok(())
}

/// Level-permutation-invariant correlation matrix stored by agreement class.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    levels: Vec<usize>,
    strides: Vec<usize>,
    class_values: Vec<BigRational>,
    denominator: BigInt,
}

impl CorrelationSpec {
    /// Build from explicit class values `c_I`, indexed by agreement mask.
    pub fn from_class_values(levels: &[usize], class_values: Vec<BigRational>) -> Result<Self> {
        check_subset_limit(levels.len())?;
        if levels.iter().any(|&n| n < 2) {
            return Err(Error::InvalidFactorSpec(
                "every factor needs >= 2 levels".into(),
            ));
        }
        if class_values.len() != 1 << levels.len() {
            return Err(Error::Dimension(format!(
                "{} class values for {} factors",
                class_values.len(),
                levels.len()
            )));
        }
        let denominator = class_values.iter().fold(BigInt::one(), |acc, c| {
            num_integer::lcm(acc, c.denom().clone())
        });
        let m = levels.len();
        let mut strides = vec![1usize; m];
        for k in (0..m.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * levels[k + 1];
        }
        Ok(Self {
            levels: levels.to_vec(),
            strides,
            class_values,
            denominator,
        })
    }

    /// The identity correlation (stratified complete randomization).
    pub fn identity(levels: &[usize]) -> Result<Self> {
        check_subset_limit(levels.len())?;
        let full = (1usize << levels.len()) - 1;
        let values = (0..=full)
            .map(|mask| {
                if mask == full {
                    BigRational::one()
                } else {
                    BigRational::zero()
                }
            })
            .collect();
        Self::from_class_values(levels, values)
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn num_factors(&self) -> usize {
        self.levels.len()
    }

    pub fn num_strata(&self) -> usize {
        self.strides[0] * self.levels[0]
    }

    fn full_mask(&self) -> usize {
        (1 << self.levels.len()) - 1
    }

    /// Common denominator `Q` of the class values.
    pub fn denominator(&self) -> &BigInt {
        &self.denominator
    }

    pub fn class_value(&self, mask: usize) -> &BigRational {
        &self.class_values[mask]
    }

    pub fn class_values(&self) -> &[BigRational] {
        &self.class_values
    }

    /// Agreement mask of two strata given in linear form.
    pub fn agreement_mask(&self, a: usize, b: usize) -> usize {
        let mut mask = 0;
        for k in 0..self.levels.len() {
            if (a / self.strides[k]) % self.levels[k] == (b / self.strides[k]) % self.levels[k] {
                mask |= 1 << k;
            }
        }
        mask
    }

    pub fn entry(&self, a: usize, b: usize) -> &BigRational {
        &self.class_values[self.agreement_mask(a, b)]
    }

    /// Dense exact matrix, row-major.
    pub fn matrix(&self) -> Vec<Vec<BigRational>> {
        let n = self.num_strata();
        (0..n)
            .map(|a| (0..n).map(|b| self.entry(a, b).clone()).collect())
            .collect()
    }

    /// Dense floating-point matrix, row-major.
    pub fn matrix_f64(&self) -> Vec<f64> {
        let values: Vec<f64> = self.class_values.iter().map(to_f64).collect();
        let n = self.num_strata();
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                out.push(values[self.agreement_mask(a, b)]);
            }
        }
        out
    }

    /// Exact product `C v` for an integer vector.
    pub fn apply(&self, v: &[i64]) -> Vec<BigRational> {
        let n = self.num_strata();
        assert_eq!(v.len(), n, "vector length must equal the number of strata");
        let classes = self.class_values.len();
        let mut sums = vec![0i128; classes];
        (0..n)
            .map(|a| {
                sums.iter_mut().for_each(|s| *s = 0);
                for (b, &vb) in v.iter().enumerate() {
                    sums[self.agreement_mask(a, b)] += vb as i128;
                }
                sums.iter()
                    .zip(&self.class_values)
                    .filter(|(s, _)| **s != 0)
                    .fold(BigRational::zero(), |acc, (s, c)| {
                        acc + c * BigRational::from_integer(BigInt::from(*s))
                    })
            })
            .collect()
    }
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Closed-form correlation matrix for equally prevalent strata:
/// `c_I = (M - 1 - sum_{i in I} n_i) / (prod n_i - sum n_i + M - 1)` and
/// `c_full = 1`.
pub fn build_cor_matrix(spec: &FactorSpec) -> Result<CorrelationSpec> {
    if !spec.has_equal_prevalence() {
        return Err(Error::UnequalPrevalence(
            "the closed-form correlation needs equally prevalent strata".into(),
        ));
    }
    cor_matrix_for_levels(spec.levels())
}

/// [`build_cor_matrix`] for equally prevalent levels given directly.
pub fn cor_matrix_for_levels(levels: &[usize]) -> Result<CorrelationSpec> {
    let m = levels.len();
    check_levels(levels)?;
    check_subset_limit(m)?;
    let q = closed_form_denominator(levels);
    let full = (1usize << m) - 1;
    let values = (0..=full)
        .map(|mask| {
            if mask == full {
                return BigRational::one();
            }
            let shared: i64 = (0..m)
                .filter(|k| mask & (1 << k) != 0)
                .map(|k| levels[k] as i64)
                .sum();
            BigRational::new(BigInt::from(m as i64 - 1 - shared), q.clone())
        })
        .collect();
    CorrelationSpec::from_class_values(levels, values)
}

fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.len() < 2 {
        return Err(Error::TooFewFactors(levels.len()));
    }
    if let Some(k) = levels.iter().position(|&n| n < 2) {
        return Err(Error::InvalidFactorSpec(format!(
            "factor {} has {} level(s); at least 2 are needed",
            k + 1,
            levels[k]
        )));
    }
    Ok(())
}

/// `Q = prod n_i - sum n_i + M - 1`.
pub fn closed_form_denominator(levels: &[usize]) -> BigInt {
    let product = levels
        .iter()
        .fold(BigInt::one(), |acc, &n| acc * BigInt::from(n));
    let sum: i64 = levels.iter().map(|&n| n as i64).sum();
    product - BigInt::from(sum) + BigInt::from(levels.len() as i64 - 1)
}

/// `lambda_max = prod n_i / Q`.
pub fn lambda_max_closed_form(levels: &[usize]) -> Result<BigRational> {
    check_levels(levels)?;
    let product = levels
        .iter()
        .fold(BigInt::one(), |acc, &n| acc * BigInt::from(n));
    Ok(BigRational::new(product, closed_form_denominator(levels)))
}

/// Residuals of the margin-sum constraints, one pair per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResiduals {
    /// Covariance of a margin's sum with a stratum inside that margin.
    pub inside: Vec<BigRational>,
    /// Covariance of a margin's sum with a stratum differing only on that factor.
    pub outside: Vec<BigRational>,
}

impl ConstraintResiduals {
    pub fn max_abs(&self) -> BigRational {
        self.inside
            .iter()
            .chain(&self.outside)
            .map(|r| r.abs())
            .fold(BigRational::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn all_zero(&self) -> bool {
        self.inside.iter().chain(&self.outside).all(Zero::is_zero)
    }
}

fn prod_minus_one(levels: &[usize], mask: usize) -> BigInt {
    (0..levels.len())
        .filter(|k| mask & (1 << k) != 0)
        .fold(BigInt::one(), |acc, k| {
            acc * BigInt::from(levels[k] as i64 - 1)
        })
}

/// Evaluate the 2M linear constraints that margin sums of normalized
/// imbalances are uncorrelated with every stratum:
///
/// * `sum_{I: j in I} c_I prod_{i not in I} (n_i - 1) = 0`
/// * `sum_{I: j not in I} c_I prod_{i not in I, i != j} (n_i - 1) = 0`
pub fn constraint_residuals(cor: &CorrelationSpec) -> ConstraintResiduals {
    let m = cor.num_factors();
    let full = cor.full_mask();
    let mut inside = Vec::with_capacity(m);
    let mut outside = Vec::with_capacity(m);
    for j in 0..m {
        let bit = 1 << j;
        let mut r_in = BigRational::zero();
        let mut r_out = BigRational::zero();
        for mask in 0..=full {
            let complement = full & !mask;
            let c = cor.class_value(mask);
            if c.is_zero() {
                continue;
            }
            if mask & bit != 0 {
                r_in += c * BigRational::from_integer(prod_minus_one(&cor.levels, complement));
            } else {
                r_out +=
                    c * BigRational::from_integer(prod_minus_one(&cor.levels, complement & !bit));
            }
        }
        inside.push(r_in);
        outside.push(r_out);
    }
    ConstraintResiduals { inside, outside }
}

/// Eigenvalues of a level-permutation-invariant correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// `lambda_J` indexed by the subset mask `J`.
    pub eigenvalues: Vec<BigRational>,
    /// `m_J = prod_{j not in J} (n_j - 1)`.
    pub multiplicities: Vec<usize>,
    /// Largest eigenvalue from the subset formula.
    pub lambda_max: BigRational,
    /// Closed-form maximum for the minimization matrix, when applicable.
    pub lambda_max_closed_form: Option<BigRational>,
    /// Subset formula agrees with the closed form: `lambda_J = lambda_max`
    /// for `#J < M - 1`, else zero.
    pub matches_closed_form: Option<bool>,
}

impl SpectrumReport {
    pub fn lambda_max_f64(&self) -> f64 {
        to_f64(&self.lambda_max)
    }
}

/// `lambda_J = sum_I (-1)^{#(J^c ∩ I^c)} c_I prod_{j in J ∩ I^c} (n_j - 1)`
/// for every subset `J`, with multiplicities.
pub fn spectrum(cor: &CorrelationSpec) -> SpectrumReport {
    let m = cor.num_factors();
    let full = cor.full_mask();
    let products: Vec<BigRational> = (0..=full)
        .map(|mask| BigRational::from_integer(prod_minus_one(&cor.levels, mask)))
        .collect();
    let eigenvalues: Vec<BigRational> = (0..=full)
        .map(|j_mask| {
            let j_comp = full & !j_mask;
            let mut acc = BigRational::zero();
            for i_mask in 0..=full {
                let c = cor.class_value(i_mask);
                if c.is_zero() {
                    continue;
                }
                let i_comp = full & !i_mask;
                let term = c * &products[j_mask & i_comp];
                if (j_comp & i_comp).count_ones() % 2 == 1 {
                    acc -= term;
                } else {
                    acc += term;
                }
            }
            acc
        })
        .collect();
    let multiplicities = (0..=full)
        .map(|j_mask| {
            (0..m)
                .filter(|k| j_mask & (1 << k) == 0)
                .map(|k| cor.levels[k] - 1)
                .product()
        })
        .collect();
    let lambda_max = eigenvalues
        .iter()
        .max()
        .cloned()
        .unwrap_or_else(BigRational::zero);

    let closed = (m >= 2 && cor_matrix_for_levels(&cor.levels).ok().as_ref() == Some(cor))
        .then(|| lambda_max_closed_form(&cor.levels).ok())
        .flatten();
    let matches_closed_form = closed.as_ref().map(|lmax| {
        eigenvalues.iter().enumerate().all(|(j_mask, lambda)| {
            if (j_mask.count_ones() as usize) + 1 < m {
                lambda == lmax
            } else {
                lambda.is_zero()
            }
        }) && &lambda_max == lmax
    });
    SpectrumReport {
        eigenvalues,
        multiplicities,
        lambda_max,
        lambda_max_closed_form: closed,
        matches_closed_form,
    }
}

/// Eigenvectors sharing the eigenvalue of subset `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBlock {
    pub subset: usize,
    pub eigenvalue: BigRational,
    pub vectors: Vec<Vec<i64>>,
}

/// Per-factor basis: all-ones for factors in `J`, consecutive differences
/// `e_k - e_{k+1}` otherwise.
fn factor_basis(n: usize, in_subset: bool) -> Vec<Vec<i64>> {
    if in_subset {
        vec![vec![1; n]]
    } else {
        (0..n - 1)
            .map(|k| {
                let mut v = vec![0; n];
                v[k] = 1;
                v[k + 1] = -1;
                v
            })
            .collect()
    }
}

fn kron(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

/// Decomposable eigenbasis: for each `J`, all tensor products of the
/// per-factor bases in factor order (factor 1 most significant).
pub fn eigenbasis(cor: &CorrelationSpec) -> Vec<EigenBlock> {
    let report = spectrum(cor);
    let m = cor.num_factors();
    (0..report.eigenvalues.len())
        .map(|j_mask| {
            let mut vectors: Vec<Vec<i64>> = vec![vec![1]];
            for k in 0..m {
                let basis = factor_basis(cor.levels[k], j_mask & (1 << k) != 0);
                vectors = vectors
                    .iter()
                    .flat_map(|v| basis.iter().map(move |b| kron(v, b)))
                    .collect();
            }
            EigenBlock {
                subset: j_mask,
                eigenvalue: report.eigenvalues[j_mask].clone(),
                vectors,
            }
        })
        .collect()
}

/// `C v == lambda v` in exact arithmetic.
pub fn is_eigenpair(cor: &CorrelationSpec, lambda: &BigRational, v: &[i64]) -> bool {
    cor.apply(v)
        .iter()
        .zip(v)
        .all(|(cv, &x)| *cv == lambda * rat(x))
}
