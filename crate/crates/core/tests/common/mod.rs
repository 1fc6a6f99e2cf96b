//! Reference implementations and generators shared by the integration
//! tests. Nothing here calls into the code under test except to build
//! fixtures, so the oracles stay independent.

#![allow(dead_code)]

use std::collections::BTreeMap;

use num::{BigRational, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soi_core::soi::{count_events, SoiEntry};
use soi_core::{SoiAssignment, SoiCategory};

/// Event counts and every category whose defining predicate holds, found by
/// walking the sequence one epoch at a time.
pub struct OracleVerdict {
    pub forgetting: u32,
    pub recollecting: u32,
    pub first_correct: Option<usize>,
    pub matches: Vec<SoiCategory>,
}

pub fn soi_oracle(seq: &[bool], cutoff: usize) -> OracleVerdict {
    let mut forgetting = 0;
    let mut recollecting = 0;
    let mut seen_forgetting = false;
    let mut first_correct = None;
    let mut prev: Option<bool> = None;
    for (t, &bit) in seq.iter().enumerate() {
        if bit && first_correct.is_none() {
            first_correct = Some(t + 1);
        }
        match (prev, bit) {
            (Some(true), false) => {
                forgetting += 1;
                seen_forgetting = true;
            }
            (Some(false), true) if seen_forgetting => recollecting += 1,
            _ => {}
        }
        prev = Some(bit);
    }
    let all_correct = seq.iter().all(|&b| b);
    let never_correct = first_correct.is_none();
    let learned_once = forgetting == 0 && !never_correct && !all_correct;

    let mut matches = Vec::new();
    if all_correct {
        matches.push(SoiCategory::Ace);
    }
    if forgetting == 1 && recollecting >= 1 {
        matches.push(SoiCategory::Frge1t);
    }
    if forgetting >= 2 && recollecting >= 1 {
        matches.push(SoiCategory::FrgeGe2t);
    }
    if (forgetting >= 1 && recollecting == 0) || never_correct {
        matches.push(SoiCategory::Une);
    }
    if learned_once && first_correct.unwrap() <= cutoff {
        matches.push(SoiCategory::Ele);
    }
    if learned_once && first_correct.unwrap() > cutoff {
        matches.push(SoiCategory::Lle);
    }
    OracleVerdict {
        forgetting,
        recollecting,
        first_correct,
        matches,
    }
}

pub fn bits(mask: u32, len: usize) -> Vec<bool> {
    (0..len).map(|i| mask >> (len - 1 - i) & 1 == 1).collect()
}

pub fn parse_bits(s: &[u8]) -> Vec<bool> {
    s.iter().map(|&b| b == 1).collect()
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact mean, rounded once to f64.
pub fn exact_mean(xs: &[f64]) -> f64 {
    let n = BigRational::from_integer(xs.len().into());
    let sum = xs.iter().map(|&x| rational(x)).fold(BigRational::zero(), |a, b| a + b);
    (sum / n).to_f64().unwrap()
}

/// Population standard deviation: variance computed exactly, then one
/// rounding to f64 and one correctly rounded square root.
pub fn exact_std(xs: &[f64]) -> f64 {
    let n = BigRational::from_integer(xs.len().into());
    let vals: Vec<BigRational> = xs.iter().map(|&x| rational(x)).collect();
    let mean = vals.iter().fold(BigRational::zero(), |a, b| a + b) / &n;
    let var = vals
        .iter()
        .map(|v| {
            let d = v - &mean;
            &d * &d
        })
        .fold(BigRational::zero(), |a, b| a + b)
        / n;
    var.to_f64().unwrap().sqrt()
}

/// One sequence per category at E = 10, τ = 5.
pub fn representative(category: SoiCategory) -> Vec<bool> {
    parse_bits(match category {
        SoiCategory::Une => &[1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        SoiCategory::Ace => &[1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
        SoiCategory::Frge1t => &[1, 0, 1, 1, 1, 1, 1, 1, 1, 1],
        SoiCategory::FrgeGe2t => &[0, 1, 0, 0, 0, 1, 0, 1, 0, 0],
        SoiCategory::Ele => &[0, 0, 1, 1, 1, 1, 1, 1, 1, 1],
        SoiCategory::Lle => &[0, 0, 0, 0, 0, 0, 0, 0, 1, 1],
    })
}

pub fn entry(category: SoiCategory) -> SoiEntry {
    SoiEntry {
        category,
        events: count_events(&representative(category)).unwrap(),
    }
}

pub fn assignment(run_id: &str, cats: impl IntoIterator<Item = (String, SoiCategory)>) -> SoiAssignment {
    SoiAssignment {
        run_id: run_id.to_string(),
        late_cutoff: Some(5),
        entries: cats.into_iter().map(|(id, c)| (id, entry(c))).collect(),
    }
}

pub fn id(i: usize) -> String {
    format!("ex-{i:05}")
}

/// A pair of assignments over the same `n` ids. Categories are uniform;
/// about half the examples keep their source category in the target so the
/// diagonal is populated.
pub fn random_pair(n: usize, seed: u64) -> (SoiAssignment, SoiAssignment) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for i in 0..n {
        let from = SoiCategory::ALL[rng.random_range(0..6)];
        let to = if rng.random_bool(0.5) {
            from
        } else {
            SoiCategory::ALL[rng.random_range(0..6)]
        };
        a.insert(id(i), from);
        b.insert(id(i), to);
    }
    (assignment("single", a), assignment("multi", b))
}

/// Brute-force transition counts keyed by (source, target) category.
pub fn recount(a: &SoiAssignment, b: &SoiAssignment) -> BTreeMap<(SoiCategory, SoiCategory), usize> {
    let mut counts = BTreeMap::new();
    for (id, ea) in &a.entries {
        let eb = &b.entries[id];
        *counts.entry((ea.category, eb.category)).or_insert(0) += 1;
    }
    counts
}

/// Small random two-head model plus a random batch for task `a`. Shapes
/// and values vary with `seed`.
pub fn grad_check_case(seed: u64) -> (soi_core::toy::MultiHeadModel, Vec<soi_core::toy::Example>) {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..6);
    let hidden = rng.random_range(2..7);
    let classes = rng.random_range(2..5);
    let model = soi_core::toy::MultiHeadModel::new(input, hidden, &[("a", classes), ("b", 2)], seed);
    let batch = (0..rng.random_range(1..9))
        .map(|i| soi_core::toy::Example {
            id: format!("g{i}"),
            features: (0..input).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect(),
            label: rng.random_range(0..classes as u32),
        })
        .collect();
    (model, batch)
}
