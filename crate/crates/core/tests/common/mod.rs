#![allow(dead_code)]

use pslab_core::survival_sim::SubjectRecord;
use pslab_core::{Arm, TrialDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small datasets with heavy ties: integer times 1..=4, random arms,
/// strata and censoring; at least one event.
pub fn small_dataset(rng: &mut impl Rng, max_n: usize) -> TrialDataset {
    loop {
        let n = rng.random_range(2..=max_n);
        let subjects: Vec<SubjectRecord> = (0..n)
            .map(|_| SubjectRecord {
                stratum: rng.random_range(0..4),
                arm: if rng.random_bool(0.5) {
                    Arm::Treatment
                } else {
                    Arm::Control
                },
                time: rng.random_range(1..=4) as f64,
                event: rng.random_bool(0.7),
            })
            .collect();
        if subjects.iter().any(|s| s.event) {
            return TrialDataset::new(vec![2, 2], subjects).unwrap();
        }
    }
}

/// Datasets with continuous times, so no ties.
pub fn continuous_dataset(rng: &mut impl Rng, n: usize) -> TrialDataset {
    loop {
        let subjects: Vec<SubjectRecord> = (0..n)
            .map(|_| {
                let stratum = rng.random_range(0..4);
                let rate = if stratum >= 2 { 3.0 } else { 1.0 };
                SubjectRecord {
                    stratum,
                    arm: if rng.random_bool(0.5) {
                        Arm::Treatment
                    } else {
                        Arm::Control
                    },
                    time: -rng.random::<f64>().ln() / rate,
                    event: rng.random_bool(0.8),
                }
            })
            .collect();
        if subjects.iter().filter(|s| s.event).count() >= 3 {
            return TrialDataset::new(vec![2, 2], subjects).unwrap();
        }
    }
}

pub fn fixtures(seed: u64, count: usize, max_n: usize) -> Vec<TrialDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| small_dataset(&mut rng, max_n)).collect()
}

fn choose(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c as f64
}

/// Sum over event times of observed minus expected treatment events, with
/// the expectation taken from the hypergeometric distribution of the
/// treatment events among the `d` failures in the risk set.
pub fn hypergeometric_numerator(data: &TrialDataset) -> f64 {
    let mut times: Vec<f64> = data
        .subjects
        .iter()
        .filter(|s| s.event)
        .map(|s| s.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut total = 0.0;
    for t in times {
        let at_risk: Vec<&SubjectRecord> = data.subjects.iter().filter(|s| s.time >= t).collect();
        let n = at_risk.len() as u64;
        let n1 = at_risk.iter().filter(|s| s.arm == Arm::Treatment).count() as u64;
        let dying: Vec<&&SubjectRecord> =
            at_risk.iter().filter(|s| s.time == t && s.event).collect();
        let d = dying.len() as u64;
        let observed = dying.iter().filter(|s| s.arm == Arm::Treatment).count() as f64;
        let denom = choose(n, d);
        let expected: f64 = (0..=d.min(n1))
            .map(|x| x as f64 * choose(n1, x) * choose(n - n1, d - x) / denom)
            .sum();
        total += observed - expected;
    }
    total
}

/// Lin-Wei variance evaluated term by term from its double-sum definition,
/// with `eta_i` the working-model linear predictor of subject `i`.
pub fn direct_lin_wei(data: &TrialDataset, eta: &[f64]) -> f64 {
    let s = &data.subjects;
    let n = s.len();
    let ind = |i: usize| s[i].arm.indicator() as f64;
    let r0 = |t: f64| -> f64 {
        (0..n)
            .filter(|&k| s[k].time >= t)
            .map(|k| eta[k].exp())
            .sum()
    };
    let r1 = |t: f64| -> f64 {
        (0..n)
            .filter(|&k| s[k].time >= t)
            .map(|k| eta[k].exp() * ind(k))
            .sum()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut o = 0.0;
        if s[i].event {
            o += ind(i) - r1(s[i].time) / r0(s[i].time);
        }
        for j in 0..n {
            if !s[j].event || s[i].time < s[j].time {
                continue;
            }
            let (a, b) = (r0(s[j].time), r1(s[j].time));
            o -= eta[i].exp() / a * (ind(i) - b / a);
        }
        total += o * o;
    }
    total / n as f64
}
