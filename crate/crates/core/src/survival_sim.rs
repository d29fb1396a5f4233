//! Right-censored survival trials with exponential proportional hazards,
//! uniform staggered entry, an administrative cutoff and optional random
//! censoring. Time is measured in months.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomization::{Allocator, Arm, ProcedureConfig};
use crate::strata::FactorSpec;

/// Log hazard ratio applied when factor `factor` is at level `level`
/// (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelEffect {
    pub factor: usize,
    pub level: usize,
    pub log_hr: f64,
}

/// `log lambda(Z, I) = log_baseline + sum of matching level effects + theta * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardModel {
    pub log_baseline: f64,
    pub effects: Vec<LevelEffect>,
    pub theta: f64,
}

impl HazardModel {
    pub fn new(log_baseline: f64, theta: f64) -> Self {
        Self {
            log_baseline,
            effects: Vec::new(),
            theta,
        }
    }

    pub fn with_effect(mut self, factor: usize, level: usize, log_hr: f64) -> Self {
        self.effects.push(LevelEffect {
            factor,
            level,
            log_hr,
        });
        self
    }

    pub fn validate(&self, spec: &FactorSpec) -> Result<()> {
        if !self.log_baseline.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidInput(
                "hazard parameters must be finite".into(),
            ));
        }
        for e in &self.effects {
            if e.factor == 0
                || e.factor > spec.num_factors()
                || e.level == 0
                || e.level > spec.levels()[e.factor - 1]
            {
                return Err(Error::LevelOutOfRange {
                    factor: e.factor,
                    level: e.level,
                });
            }
            if !e.log_hr.is_finite() {
                return Err(Error::InvalidInput(
                    "log hazard ratios must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn log_hazard(&self, spec: &FactorSpec, stratum: usize, arm: Arm) -> f64 {
        let covariate: f64 = self
            .effects
            .iter()
            .filter(|e| spec.level_of(stratum, e.factor - 1) + 1 == e.level)
            .map(|e| e.log_hr)
            .sum();
        self.log_baseline + covariate + self.theta * arm.indicator() as f64
    }

    pub fn hazard(&self, spec: &FactorSpec, stratum: usize, arm: Arm) -> f64 {
        self.log_hazard(spec, stratum, arm).exp()
    }
}

/// Enrollment and censoring design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialDesign {
    pub n: usize,
    pub enrollment_months: f64,
    /// Administrative cutoff measured from study start; may be infinite.
    pub followup_months: f64,
    /// Rate of independent exponential censoring from entry; 0 disables it.
    pub censor_hazard: f64,
}

impl TrialDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(
                "a trial needs at least 2 subjects".into(),
            ));
        }
        if !(self.enrollment_months.is_finite() && self.enrollment_months >= 0.0) {
            return Err(Error::InvalidInput(
                "enrollment window must be finite and >= 0".into(),
            ));
        }
        if self.followup_months.is_nan() || self.followup_months < self.enrollment_months {
            return Err(Error::InvalidInput(
                "follow-up must cover the enrollment window".into(),
            ));
        }
        if self.followup_months <= 0.0 {
            return Err(Error::InvalidInput("follow-up must be positive".into()));
        }
        if !(self.censor_hazard.is_finite() && self.censor_hazard >= 0.0) {
            return Err(Error::InvalidInput(
                "censoring hazard must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Observed data for one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectRecord {
    /// Linear randomization stratum.
    pub stratum: usize,
    pub arm: Arm,
    /// `X_i`, months from entry.
    pub time: f64,
    /// `delta_i`.
    pub event: bool,
}

/// One simulated (or loaded) trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub levels: Vec<usize>,
    pub subjects: Vec<SubjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    subject: usize,
    stratum: usize,
    arm: u8,
    time: f64,
    event: u8,
}

impl TrialDataset {
    pub fn new(levels: Vec<usize>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let ms: usize = levels.iter().product();
        for (i, s) in subjects.iter().enumerate() {
            if s.stratum >= ms {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: stratum {} out of range",
                    s.stratum
                )));
            }
            if !(s.time.is_finite() && s.time > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: time must be positive"
                )));
            }
        }
        Ok(Self { levels, subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn num_strata(&self) -> usize {
        self.levels.iter().product()
    }

    pub fn num_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn censoring_fraction(&self) -> f64 {
        1.0 - self.num_events() as f64 / self.len().max(1) as f64
    }

    /// Copy with every arm label flipped.
    pub fn with_arms_swapped(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.subjects {
            s.arm = s.arm.other();
        }
        out
    }

    /// CSV with columns `subject,stratum,arm,time,event`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, s) in self.subjects.iter().enumerate() {
            w.serialize(CsvRow {
                subject: i,
                stratum: s.stratum,
                arm: s.arm.indicator(),
                time: s.time,
                event: s.event as u8,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(levels: Vec<usize>, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut subjects = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if row.event > 1 {
                return Err(Error::InvalidInput(format!(
                    "subject {}: event flag must be 0 or 1",
                    row.subject
                )));
            }
            subjects.push(SubjectRecord {
                stratum: row.stratum,
                arm: Arm::from_indicator(row.arm)?,
                time: row.time,
                event: row.event == 1,
            });
        }
        Self::new(levels, subjects)
    }
}

/// Simulate one trial: entry times are drawn first and sorted, then subjects
/// are processed in entry order (covariates, allocation, survival, censoring).
pub fn simulate_trial<R: Rng + ?Sized>(
    spec: &FactorSpec,
    cfg: ProcedureConfig,
    model: &HazardModel,
    design: &TrialDesign,
    rng: &mut R,
) -> Result<TrialDataset> {
    design.validate()?;
    model.validate(spec)?;
    let mut entries: Vec<f64> = (0..design.n)
        .map(|_| rng.random::<f64>() * design.enrollment_months)
        .collect();
    entries.sort_by(f64::total_cmp);

    let censor = (design.censor_hazard > 0.0)
        .then(|| Exp::new(design.censor_hazard))
        .transpose()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut allocator = Allocator::new(spec, cfg)?;
    let mut subjects = Vec::with_capacity(design.n);
    for entry in entries {
        let z = spec.sample_stratum(rng);
        let arm = allocator.assign(z, rng)?;
        let rate = model.hazard(spec, z, arm);
        let survival = Exp::new(rate)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .sample(rng);
        let random_censor = censor.map_or(f64::INFINITY, |c| c.sample(rng));
        let admin = design.followup_months - entry;
        let censor_time = random_censor.min(admin);
        let (time, event) = if survival < censor_time {
            (survival, true)
        } else {
            (censor_time, false)
        };
        subjects.push(SubjectRecord {
            stratum: z,
            arm,
            time,
            event,
        });
    }
    TrialDataset::new(spec.levels().to_vec(), subjects)
}

/// Everything needed to simulate a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub spec: FactorSpec,
    pub procedure: ProcedureConfig,
    pub model: HazardModel,
    pub design: TrialDesign,
}

impl TrialSetup {
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrialDataset> {
        simulate_trial(&self.spec, self.procedure, &self.model, &self.design, rng)
    }
}

pub const MINIMIZATION_BIAS: f64 = 0.9;

fn two_factor_design() -> TrialDesign {
    TrialDesign {
        n: 600,
        enrollment_months: 29.0,
        followup_months: 36.0,
        censor_hazard: 0.01,
    }
}

/// Two non-prognostic binary factors.
pub fn case1(theta: f64) -> TrialSetup {
    TrialSetup {
        spec: FactorSpec::uniform(&[2, 2]).expect("valid levels"),
        procedure: ProcedureConfig::pocock_simon(MINIMIZATION_BIAS),
        model: HazardModel::new(0.0625f64.ln(), theta),
        design: two_factor_design(),
    }
}

/// Two strongly prognostic binary factors (hazard ratios 10 and 5).
pub fn case2(theta: f64) -> TrialSetup {
    TrialSetup {
        model: HazardModel::new(0.0625f64.ln(), theta)
            .with_effect(1, 2, 10f64.ln())
            .with_effect(2, 2, 5f64.ln()),
        ..case1(theta)
    }
}

/// Four prognostic binary factors, administrative censoring only.
pub fn four_factor(theta: f64) -> TrialSetup {
    TrialSetup {
        spec: FactorSpec::uniform(&[2, 2, 2, 2]).expect("valid levels"),
        procedure: ProcedureConfig::pocock_simon(MINIMIZATION_BIAS),
        model: HazardModel::new(0.015f64.ln(), theta)
            .with_effect(1, 2, 3f64.ln())
            .with_effect(2, 2, 2f64.ln())
            .with_effect(3, 2, 2f64.ln())
            .with_effect(4, 2, 2f64.ln()),
        design: TrialDesign {
            n: 1000,
            enrollment_months: 30.0,
            followup_months: 50.0,
            censor_hazard: 0.0,
        },
    }
}

/// Treatment log hazard ratio under the alternative, two-factor studies.
pub fn case_alternative_theta() -> f64 {
    0.7f64.ln()
}

/// Treatment log hazard ratio under the alternative, four-factor study.
pub fn four_factor_alternative_theta() -> f64 {
    0.78f64.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        xs[xs.len() / 2]
    }

    fn draw_times(setup: &TrialSetup, stratum: usize, arm: Arm, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let exp = Exp::new(setup.model.hazard(&setup.spec, stratum, arm)).unwrap();
        (0..n).map(|_| exp.sample(&mut rng)).collect()
    }

    #[test]
    fn no_censoring_means_all_events() {
        let mut setup = case2(0.0);
        setup.design.followup_months = f64::INFINITY;
        setup.design.censor_hazard = 0.0;
        let data = setup.simulate(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(data.num_events(), 600);
    }

    #[test]
    fn lowest_risk_medians() {
        let m = median(draw_times(&case2(0.0), 0, Arm::Control, 100_000, 2));
        assert!((m - 2f64.ln() / 0.0625).abs() < 0.5, "{m}");
        assert!((2f64.ln() / 0.0625 - 11.09).abs() < 0.01);
        let m = median(draw_times(&four_factor(0.0), 0, Arm::Control, 100_000, 3));
        assert!((m - 46.2).abs() < 1.0, "{m}");
    }

    #[test]
    fn highest_risk_hazard() {
        let setup = four_factor(0.0);
        let top = setup.spec.num_strata() - 1;
        let rate = setup.model.hazard(&setup.spec, top, Arm::Control);
        assert!((rate - 0.36).abs() < 1e-12);
        assert!((2f64.ln() / rate - 1.925).abs() < 0.001);
    }

    #[test]
    fn case2_censoring_fraction() {
        // Expected censored fraction from the design: entry A' ~ U(0, e),
        // window A = f - A', random censoring rate c, event rate l.
        // P(censored | A) = c/(l+c) (1 - exp(-(l+c)A)) + exp(-(l+c)A).
        let analytic = |setup: &TrialSetup| {
            let d = setup.design;
            let c = d.censor_hazard;
            let mut total = 0.0;
            for z in 0..setup.spec.num_strata() {
                for arm in [Arm::Control, Arm::Treatment] {
                    let k = setup.model.hazard(&setup.spec, z, arm) + c;
                    let lo = d.followup_months - d.enrollment_months;
                    let mean_exp = ((-k * lo).exp() - (-k * d.followup_months).exp())
                        / (k * d.enrollment_months);
                    total += c / k * (1.0 - mean_exp) + mean_exp;
                }
            }
            total / (2 * setup.spec.num_strata()) as f64
        };
        for (theta, seed) in [(0.0, 4), (case_alternative_theta(), 5)] {
            let setup = case2(theta);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fractions: Vec<f64> = (0..60)
                .map(|_| setup.simulate(&mut rng).unwrap().censoring_fraction())
                .collect();
            let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
            assert!((mean - analytic(&setup)).abs() < 0.01, "{theta}: {mean}");
            if theta != 0.0 {
                assert!((mean - 0.14).abs() < 0.03, "{mean}");
            }
        }
    }

    #[test]
    fn observed_times_respect_cutoff() {
        let setup = case2(case_alternative_theta());
        let data = setup.simulate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(data.len(), 600);
        assert!(data.subjects.iter().all(|s| s.time > 0.0 && s.time <= 36.0));
        let four = four_factor(0.0)
            .simulate(&mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        assert!(four.subjects.iter().all(|s| s.time <= 50.0));
        // administrative censoring only: every censored subject entered within
        // the window, so its time is at least followup - enrollment
        assert!(four
            .subjects
            .iter()
            .filter(|s| !s.event)
            .all(|s| s.time >= 20.0));
    }

    #[test]
    fn exponential_means_per_cell() {
        let mut setup = case2(case_alternative_theta());
        setup.design = TrialDesign {
            n: 40_000,
            enrollment_months: 0.0,
            followup_months: f64::INFINITY,
            censor_hazard: 0.0,
        };
        let data = setup.simulate(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        for z in 0..4 {
            for arm in [Arm::Control, Arm::Treatment] {
                let times: Vec<f64> = data
                    .subjects
                    .iter()
                    .filter(|s| s.stratum == z && s.arm == arm)
                    .map(|s| s.time)
                    .collect();
                let n = times.len() as f64;
                let mean = times.iter().sum::<f64>() / n;
                let expected = 1.0 / setup.model.hazard(&setup.spec, z, arm);
                assert!(
                    (mean - expected).abs() < 3.0 * expected / n.sqrt(),
                    "{z} {arm:?}"
                );
            }
        }
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn null_arms_are_exchangeable_within_strata() {
        let setup = case2(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pooled: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; 4];
        for _ in 0..30 {
            for s in setup.simulate(&mut rng).unwrap().subjects {
                // censored observations enter with a sign so the test compares (X, delta)
                let v = if s.event { s.time } else { -s.time };
                pooled[s.stratum][s.arm.indicator() as usize].push(v);
            }
        }
        for [a, b] in pooled {
            let (n, m) = (a.len() as f64, b.len() as f64);
            let critical = 1.95 * ((n + m) / (n * m)).sqrt(); // alpha = 0.001
            assert!(ks_statistic(a, b) < critical);
        }
    }

    #[test]
    fn deterministic_and_csv_round_trip() {
        let setup = case2(0.0);
        let a = setup.simulate(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = setup.simulate(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"subject,stratum,arm,time,event\n"));
        let back = TrialDataset::read_csv(vec![2, 2], buf.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut setup = case1(0.0);
        setup.design.followup_months = 10.0;
        assert!(setup.simulate(&mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let mut setup = case1(0.0);
        setup.model = setup.model.with_effect(3, 2, 1.0);
        assert!(setup.simulate(&mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let bad = "subject,stratum,arm,time,event\n0,7,1,1.0,1\n";
        assert!(TrialDataset::read_csv(vec![2, 2], bad.as_bytes()).is_err());
        let bad = "subject,stratum,arm,time,event\n0,1,2,1.0,1\n";
        assert!(TrialDataset::read_csv(vec![2, 2], bad.as_bytes()).is_err());
    }
}
