//! Online treatment assignment: Pocock–Simon minimization and the stratified
//! reference procedures (permuted block, Efron biased coin, Wei urn, big
//! stick, complete randomization).
//!
//! Every biased draw follows one convention: a uniform `u` in `[0, 1)` is
//! drawn and the preferred arm is taken iff `u < p`. Ties in minimization
//! assign the treatment arm iff `u < 0.5`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::strata::{FactorSpec, SubjectCovariates};

/// Treatment arm in a two-arm 1:1 trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    /// Treatment indicator `I_i`.
    #[inline]
    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    /// Contribution to `D = n_treatment - n_control`.
    #[inline]
    pub fn sign(self) -> i64 {
        match self {
            Arm::Control => -1,
            Arm::Treatment => 1,
        }
    }

    #[inline]
    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }

    pub fn from_indicator(i: u8) -> Result<Arm> {
        match i {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treatment),
            _ => Err(Error::InvalidInput(format!("arm indicator {i}"))),
        }
    }
}

/// Overall imbalance measure for minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImbalanceMeasure {
    /// Sum of squared marginal imbalances.
    #[default]
    Squared,
    /// Sum of absolute marginal imbalances.
    Absolute,
}

pub const DEFAULT_BLOCK_SIZE: usize = 4;
pub const DEFAULT_URN: (u32, u32) = (1, 1);

/// An assignment procedure together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcedureConfig {
    PocockSimon {
        bias: f64,
        measure: ImbalanceMeasure,
    },
    StratifiedPermutedBlock {
        block_size: usize,
    },
    EfronBiasedCoin {
        bias: f64,
    },
    WeiUrn {
        alpha: u32,
        beta: u32,
    },
    BigStick {
        bound: u32,
    },
    Complete,
}

impl ProcedureConfig {
    pub fn pocock_simon(bias: f64) -> Self {
        ProcedureConfig::PocockSimon {
            bias,
            measure: ImbalanceMeasure::Squared,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProcedureConfig::PocockSimon { .. } => "pocock_simon",
            ProcedureConfig::StratifiedPermutedBlock { .. } => "stratified_permuted_block",
            ProcedureConfig::EfronBiasedCoin { .. } => "efron_biased_coin",
            ProcedureConfig::WeiUrn { .. } => "wei_urn",
            ProcedureConfig::BigStick { .. } => "big_stick",
            ProcedureConfig::Complete => "complete",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProcedure(msg));
        match *self {
            ProcedureConfig::PocockSimon { bias, .. }
            | ProcedureConfig::EfronBiasedCoin { bias } => {
                if !(bias > 0.5 && bias <= 1.0) {
                    return bad(format!("bias {bias} is outside (1/2, 1]"));
                }
            }
            ProcedureConfig::StratifiedPermutedBlock { block_size } => {
                if block_size < 2 || block_size % 2 != 0 {
                    return bad(format!("block size {block_size} must be even and >= 2"));
                }
            }
            ProcedureConfig::BigStick { bound } => {
                if bound < 1 {
                    return bad("big stick bound must be >= 1".into());
                }
            }
            ProcedureConfig::WeiUrn { .. } | ProcedureConfig::Complete => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct BlockCursor {
    schedule: Vec<Arm>,
    next: usize,
}

/// Per-stratum and marginal treatment counts, updated online.
#[derive(Debug, Clone)]
pub struct AllocationState {
    num_factors: usize,
    level_counts: Vec<usize>,
    margin_offsets: Vec<usize>,
    /// For each stratum, the `num_factors` margin slots it belongs to.
    stratum_margins: Vec<usize>,
    /// `[control, treatment]` per stratum.
    counts: Vec<[u32; 2]>,
    /// `D_m(j; h)` flattened by `margin_offsets`.
    margins: Vec<i64>,
    total: usize,
    blocks: Vec<BlockCursor>,
}

impl AllocationState {
    pub fn new(spec: &FactorSpec) -> Self {
        let levels = spec.levels().to_vec();
        let m = levels.len();
        let mut margin_offsets = Vec::with_capacity(m);
        let mut acc = 0;
        for &n in &levels {
            margin_offsets.push(acc);
            acc += n;
        }
        let num_strata = spec.num_strata();
        let mut stratum_margins = Vec::with_capacity(num_strata * m);
        for z in 0..num_strata {
            for (k, offset) in margin_offsets.iter().enumerate() {
                stratum_margins.push(offset + spec.level_of(z, k));
            }
        }
        Self {
            num_factors: m,
            level_counts: levels,
            margin_offsets,
            stratum_margins,
            counts: vec![[0, 0]; num_strata],
            margins: vec![0; acc],
            total: 0,
            blocks: Vec::new(),
        }
    }

    pub fn num_strata(&self) -> usize {
        self.counts.len()
    }

    /// Subjects assigned so far.
    pub fn total_assigned(&self) -> usize {
        self.total
    }

    /// `(control, treatment)` counts of stratum `z`.
    pub fn stratum_counts(&self, z: usize) -> (u32, u32) {
        let [c, t] = self.counts[z];
        (c, t)
    }

    pub fn stratum_size(&self, z: usize) -> u32 {
        let [c, t] = self.counts[z];
        c + t
    }

    /// `D_m(z)`.
    pub fn stratum_imbalance(&self, z: usize) -> i64 {
        let [c, t] = self.counts[z];
        t as i64 - c as i64
    }

    /// `D_m(j; h)` for 1-based factor and level.
    pub fn marginal_imbalance(&self, factor: usize, level: usize) -> Result<i64> {
        if factor == 0
            || factor > self.num_factors
            || level == 0
            || level > self.level_counts[factor - 1]
        {
            return Err(Error::LevelOutOfRange { factor, level });
        }
        Ok(self.margins[self.margin_offsets[factor - 1] + level - 1])
    }

    /// Marginal imbalances touched by a subject of stratum `z`, one per factor.
    pub fn touched_margins(&self, z: usize) -> impl Iterator<Item = i64> + '_ {
        self.margin_slots(z).iter().map(|&s| self.margins[s])
    }

    #[inline]
    fn margin_slots(&self, z: usize) -> &[usize] {
        &self.stratum_margins[z * self.num_factors..(z + 1) * self.num_factors]
    }

    /// `Imb(m)` over all levels of all factors.
    pub fn overall_imbalance(&self, measure: ImbalanceMeasure) -> i64 {
        match measure {
            ImbalanceMeasure::Squared => self.margins.iter().map(|d| d * d).sum(),
            ImbalanceMeasure::Absolute => self.margins.iter().map(|d| d.abs()).sum(),
        }
    }

    /// Record an assignment.
    pub fn record(&mut self, z: usize, arm: Arm) {
        self.counts[z][arm.indicator() as usize] += 1;
        let sign = arm.sign();
        for k in 0..self.num_factors {
            let slot = self.stratum_margins[z * self.num_factors + k];
            self.margins[slot] += sign;
        }
        self.total += 1;
    }

    fn check_stratum(&self, z: usize) -> Result<()> {
        if z >= self.counts.len() {
            return Err(Error::CorruptedState(format!(
                "stratum {z} outside 0..{}",
                self.counts.len()
            )));
        }
        Ok(())
    }

    /// O(sum of levels) consistency check: every factor's margins must add up
    /// to the same overall imbalance.
    fn quick_check(&self) -> Result<()> {
        let mut expected = None;
        for (k, &offset) in self.margin_offsets.iter().enumerate() {
            let s: i64 = self.margins[offset..offset + self.level_counts[k]]
                .iter()
                .sum();
            match expected {
                None => expected = Some(s),
                Some(e) if e != s => {
                    return Err(Error::CorruptedState(format!(
                        "factor {} margins sum to {s}, factor 1 to {e}",
                        k + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Full invariant check: margins are sums of strata and counts add up.
    pub fn check_invariants(&self) -> Result<()> {
        let assigned: usize = self.counts.iter().map(|[c, t]| (c + t) as usize).sum();
        if assigned != self.total {
            return Err(Error::CorruptedState(format!(
                "stratum counts sum to {assigned}, total is {}",
                self.total
            )));
        }
        let mut rebuilt = vec![0i64; self.margins.len()];
        for z in 0..self.counts.len() {
            let d = self.stratum_imbalance(z);
            for &slot in self.margin_slots(z) {
                rebuilt[slot] += d;
            }
        }
        if rebuilt != self.margins {
            return Err(Error::CorruptedState(
                "marginal imbalances differ from the sum over strata".into(),
            ));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn margins_mut(&mut self) -> &mut [i64] {
        &mut self.margins
    }
}

/// Arm that minimizes the overall imbalance after assignment, or `None` on a
/// tie, given the current marginal imbalances of the subject's levels.
///
/// Only the subject's own margins change, so the comparison reduces to
/// `sum_j f(D_j + 1) - f(D_j - 1)`.
pub fn minimization_preference(
    touched: impl Iterator<Item = i64>,
    measure: ImbalanceMeasure,
) -> Option<Arm> {
    let delta: i64 = match measure {
        // (D+1)^2 - (D-1)^2 = 4D
        ImbalanceMeasure::Squared => touched.map(|d| 4 * d).sum(),
        ImbalanceMeasure::Absolute => touched.map(|d| (d + 1).abs() - (d - 1).abs()).sum(),
    };
    match delta.signum() {
        -1 => Some(Arm::Treatment),
        1 => Some(Arm::Control),
        _ => None,
    }
}

#[inline]
fn coin<R: Rng + ?Sized>(rng: &mut R, preferred: Option<Arm>, bias: f64) -> Arm {
    let u: f64 = rng.random();
    match preferred {
        Some(arm) if u < bias => arm,
        Some(arm) => arm.other(),
        None if u < 0.5 => Arm::Treatment,
        None => Arm::Control,
    }
}

/// Pocock–Simon minimization step; records the chosen arm in `state`.
pub fn pocock_simon_assign<R: Rng + ?Sized>(
    state: &mut AllocationState,
    subject: &SubjectCovariates,
    cfg: &ProcedureConfig,
    rng: &mut R,
) -> Result<Arm> {
    let ProcedureConfig::PocockSimon { bias, measure } = *cfg else {
        return Err(Error::InvalidProcedure(format!(
            "{} is not minimization",
            cfg.name()
        )));
    };
    let z = subject.stratum.0;
    state.check_stratum(z)?;
    state.quick_check()?;
    let arm = coin(
        rng,
        minimization_preference(state.touched_margins(z), measure),
        bias,
    );
    state.record(z, arm);
    Ok(arm)
}

/// One step of a stratified reference procedure; records the chosen arm.
pub fn reference_assign<R: Rng + ?Sized>(
    state: &mut AllocationState,
    subject: &SubjectCovariates,
    cfg: &ProcedureConfig,
    rng: &mut R,
) -> Result<Arm> {
    let z = subject.stratum.0;
    state.check_stratum(z)?;
    let arm = reference_choice(state, z, cfg, rng)?;
    state.record(z, arm);
    Ok(arm)
}

fn lagging_arm(d: i64) -> Option<Arm> {
    match d.signum() {
        -1 => Some(Arm::Treatment),
        1 => Some(Arm::Control),
        _ => None,
    }
}

fn reference_choice<R: Rng + ?Sized>(
    state: &mut AllocationState,
    z: usize,
    cfg: &ProcedureConfig,
    rng: &mut R,
) -> Result<Arm> {
    let d = state.stratum_imbalance(z);
    Ok(match *cfg {
        ProcedureConfig::PocockSimon { .. } => {
            return Err(Error::InvalidProcedure(
                "minimization is not a reference procedure".into(),
            ))
        }
        ProcedureConfig::StratifiedPermutedBlock { block_size } => {
            if state.blocks.len() != state.counts.len() {
                state.blocks = vec![BlockCursor::default(); state.counts.len()];
            }
            let cursor = &mut state.blocks[z];
            if cursor.next >= cursor.schedule.len() {
                cursor.schedule.clear();
                cursor.schedule.extend(
                    std::iter::repeat_n(Arm::Treatment, block_size / 2)
                        .chain(std::iter::repeat_n(Arm::Control, block_size / 2)),
                );
                cursor.schedule.shuffle(rng);
                cursor.next = 0;
            }
            let arm = cursor.schedule[cursor.next];
            cursor.next += 1;
            arm
        }
        ProcedureConfig::EfronBiasedCoin { bias } => coin(rng, lagging_arm(d), bias),
        ProcedureConfig::BigStick { bound } => {
            if d.abs() >= bound as i64 {
                lagging_arm(d).expect("nonzero imbalance")
            } else {
                coin(rng, None, 0.5)
            }
        }
        ProcedureConfig::WeiUrn { alpha, beta } => {
            let (control, treatment) = state.stratum_counts(z);
            // drawing arm j adds beta balls of the other arm
            let treatment_balls = alpha as f64 + beta as f64 * control as f64;
            let control_balls = alpha as f64 + beta as f64 * treatment as f64;
            let total = treatment_balls + control_balls;
            let p = if total > 0.0 {
                treatment_balls / total
            } else {
                0.5
            };
            if rng.random::<f64>() < p {
                Arm::Treatment
            } else {
                Arm::Control
            }
        }
        ProcedureConfig::Complete => coin(rng, None, 0.5),
    })
}

/// A procedure bound to its running state.
#[derive(Debug, Clone)]
pub struct Allocator {
    cfg: ProcedureConfig,
    state: AllocationState,
}

impl Allocator {
    pub fn new(spec: &FactorSpec, cfg: ProcedureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: AllocationState::new(spec),
        })
    }

    pub fn state(&self) -> &AllocationState {
        &self.state
    }

    pub fn into_state(self) -> AllocationState {
        self.state
    }

    /// Assign a subject of stratum `z`.
    pub fn assign<R: Rng + ?Sized>(&mut self, z: usize, rng: &mut R) -> Result<Arm> {
        self.state.check_stratum(z)?;
        let arm = match self.cfg {
            ProcedureConfig::PocockSimon { bias, measure } => coin(
                rng,
                minimization_preference(self.state.touched_margins(z), measure),
                bias,
            ),
            cfg => reference_choice(&mut self.state, z, &cfg, rng)?,
        };
        self.state.record(z, arm);
        Ok(arm)
    }
}

/// Result of a full sequential allocation.
#[derive(Debug, Clone)]
pub struct AllocationRun {
    pub assignments: Vec<Arm>,
    pub covariates: Vec<crate::strata::SubjectCovariates>,
    /// Overall imbalance (squared measure unless minimization uses absolute) after each subject.
    pub imbalance_trace: Vec<i64>,
    pub final_state: AllocationState,
}

/// Sample `n` subjects and assign them in arrival order.
pub fn run_allocation<R: Rng + ?Sized>(
    spec: &FactorSpec,
    cfg: &ProcedureConfig,
    n: usize,
    rng: &mut R,
) -> Result<AllocationRun> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "at least one subject is required".into(),
        ));
    }
    let measure = match cfg {
        ProcedureConfig::PocockSimon { measure, .. } => *measure,
        _ => ImbalanceMeasure::Squared,
    };
    let mut allocator = Allocator::new(spec, *cfg)?;
    let mut assignments = Vec::with_capacity(n);
    let mut covariates = Vec::with_capacity(n);
    let mut imbalance_trace = Vec::with_capacity(n);
    for _ in 0..n {
        let subject = crate::strata::sample_covariates(spec, rng);
        let arm = allocator.assign(subject.stratum.0, rng)?;
        assignments.push(arm);
        covariates.push(subject);
        imbalance_trace.push(allocator.state.overall_imbalance(measure));
    }
    Ok(AllocationRun {
        assignments,
        covariates,
        imbalance_trace,
        final_state: allocator.into_state(),
    })
}

/// Write an allocation trace as CSV: `subject_index,stratum_linear,arm,imb_after`.
pub fn write_trace<W: Write>(run: &AllocationRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_index", "stratum_linear", "arm", "imb_after"])?;
    for (i, ((arm, subj), imb)) in run
        .assignments
        .iter()
        .zip(&run.covariates)
        .zip(&run.imbalance_trace)
        .enumerate()
    {
        w.write_record([
            i.to_string(),
            subj.stratum.0.to_string(),
            arm.indicator().to_string(),
            imb.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
