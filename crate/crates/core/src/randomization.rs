//! Complete randomization (CR), the random allocation rule (RA) and
//! permuted block designs (PBD): sampling, reference-set counting and
//! exhaustive enumeration.

use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Cr,
    Ra,
    Pbd,
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Procedure::Cr => "CR",
            Procedure::Ra => "RA",
            Procedure::Pbd => "PBD",
        })
    }
}

/// A randomization procedure over `k` arms and `n` patients.
///
/// * CR rolls an independent die per patient. `weights` are the number of
///   faces per arm (integers) or arbitrary positive allocation weights.
/// * RA draws without replacement from an urn holding `targets[j]` balls
///   for arm `j`.
/// * PBD runs RA independently on consecutive blocks of composition `block`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "procedure", rename_all = "snake_case")]
pub enum RandomizationSpec {
    Cr { weights: Vec<f64>, n: usize },
    Ra { targets: Vec<usize> },
    Pbd { block: Vec<usize>, blocks: usize },
}

/// Treatment arm (index into the dose grid) per patient, in enrollment order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreatmentSequence(pub Vec<usize>);

impl TreatmentSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn arms(&self) -> &[usize] {
        &self.0
    }

    pub fn arm_counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &a in &self.0 {
            c[a] += 1;
        }
        c
    }

    /// CSV with columns `enrollment_index,arm` (1-based index).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("enrollment_index,arm\n");
        for (i, a) in self.0.iter().enumerate() {
            let _ = writeln!(out, "{},{a}", i + 1);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let idx: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid("bad enrollment_index"))?;
            let arm: usize = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid("bad arm"))?;
            rows.push((idx, arm));
        }
        rows.sort_by_key(|r| r.0);
        Ok(Self(rows.into_iter().map(|r| r.1).collect()))
    }
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::one(), |acc, v| acc * v)
}

fn multinomial(parts: &[usize]) -> BigUint {
    let n: usize = parts.iter().sum();
    parts
        .iter()
        .fold(factorial(n), |acc, &p| acc / factorial(p))
}

/// Exact reference-set size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceCount {
    /// Number of equally likely randomization outcomes. For RA and PBD
    /// these are the sequences themselves; for CR it is `faces^n`.
    pub count: BigUint,
    /// Number of distinct treatment sequences with positive probability.
    pub distinct: BigUint,
}

impl SequenceCount {
    pub fn log10(&self) -> f64 {
        big_log10(&self.count)
    }
}

pub fn big_log10(v: &BigUint) -> f64 {
    let s = v.to_str_radix(10);
    let lead = &s[..s.len().min(17)];
    let lead: f64 = lead.parse().unwrap_or(0.0);
    lead.log10() + (s.len() - s.len().min(17)) as f64
}

impl RandomizationSpec {
    pub fn cr(weights: Vec<f64>, n: usize) -> Result<Self> {
        let s = RandomizationSpec::Cr { weights, n };
        s.validate()?;
        Ok(s)
    }

    pub fn ra(targets: Vec<usize>) -> Result<Self> {
        let s = RandomizationSpec::Ra { targets };
        s.validate()?;
        Ok(s)
    }

    pub fn pbd(block: Vec<usize>, blocks: usize) -> Result<Self> {
        let s = RandomizationSpec::Pbd { block, blocks };
        s.validate()?;
        Ok(s)
    }

    /// PBD from a total sample size; `n` must be a multiple of the block length.
    pub fn pbd_for_n(block: Vec<usize>, n: usize) -> Result<Self> {
        let m: usize = block.iter().sum();
        if m == 0 || !n.is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "n={n} is not a multiple of the block length {m}; partial blocks are not allowed"
            )));
        }
        Self::pbd(block, n / m)
    }

    pub fn procedure(&self) -> Procedure {
        match self {
            RandomizationSpec::Cr { .. } => Procedure::Cr,
            RandomizationSpec::Ra { .. } => Procedure::Ra,
            RandomizationSpec::Pbd { .. } => Procedure::Pbd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RandomizationSpec::Cr { weights, n } => {
                if weights.len() < 2 {
                    return Err(Error::invalid("CR needs at least two arms"));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::invalid("CR weights must be positive"));
                }
                if *n == 0 {
                    return Err(Error::invalid("CR needs n >= 1"));
                }
            }
            RandomizationSpec::Ra { targets } => {
                if targets.len() < 2 {
                    return Err(Error::invalid("RA needs at least two arms"));
                }
                if targets.iter().any(|&t| t < 1) {
                    return Err(Error::invalid("RA targets must all be >= 1"));
                }
            }
            RandomizationSpec::Pbd { block, blocks } => {
                if block.len() < 2 {
                    return Err(Error::invalid("PBD needs at least two arms"));
                }
                if block.iter().any(|&t| t < 1) {
                    return Err(Error::invalid("PBD block composition must be >= 1 per arm"));
                }
                if *blocks < 1 {
                    return Err(Error::invalid("PBD needs at least one block"));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        match self {
            RandomizationSpec::Cr { weights, .. } => weights.len(),
            RandomizationSpec::Ra { targets } => targets.len(),
            RandomizationSpec::Pbd { block, .. } => block.len(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            RandomizationSpec::Cr { n, .. } => *n,
            RandomizationSpec::Ra { targets } => targets.iter().sum(),
            RandomizationSpec::Pbd { block, blocks } => block.iter().sum::<usize>() * blocks,
        }
    }

    /// Marginal assignment probability of each arm for any single patient.
    pub fn allocation_ratio(&self) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            RandomizationSpec::Cr { weights, .. } => weights.clone(),
            RandomizationSpec::Ra { targets } => targets.iter().map(|&t| t as f64).collect(),
            RandomizationSpec::Pbd { block, .. } => block.iter().map(|&t| t as f64).collect(),
        };
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    /// Group sizes fixed by the design (RA and PBD only).
    pub fn fixed_group_sizes(&self) -> Option<Vec<usize>> {
        match self {
            RandomizationSpec::Cr { .. } => None,
            RandomizationSpec::Ra { targets } => Some(targets.clone()),
            RandomizationSpec::Pbd { block, blocks } => {
                Some(block.iter().map(|b| b * blocks).collect())
            }
        }
    }

    fn integer_faces(&self) -> Option<Vec<usize>> {
        match self {
            RandomizationSpec::Cr { weights, .. } => {
                if weights
                    .iter()
                    .all(|w| w.fract() == 0.0 && *w >= 1.0 && *w < 1e6)
                {
                    Some(weights.iter().map(|&w| w as usize).collect())
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TreatmentSequence {
        match self {
            RandomizationSpec::Cr { weights, n } => {
                let total: f64 = weights.iter().sum();
                let mut cum = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w / total;
                    cum.push(acc);
                }
                let k = weights.len();
                let seq = (0..*n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        cum.iter().position(|&c| u < c).unwrap_or(k - 1)
                    })
                    .collect();
                TreatmentSequence(seq)
            }
            RandomizationSpec::Ra { targets } => {
                let mut urn = urn(targets);
                urn.shuffle(rng);
                TreatmentSequence(urn)
            }
            RandomizationSpec::Pbd { block, blocks } => {
                let base = urn(block);
                let mut seq = Vec::with_capacity(base.len() * blocks);
                for _ in 0..*blocks {
                    let mut b = base.clone();
                    b.shuffle(rng);
                    seq.extend(b);
                }
                TreatmentSequence(seq)
            }
        }
    }

    /// Draws until every arm has at least `min_per_arm` patients; returns the
    /// sequence and the number of rejected draws. Only CR can reject.
    pub fn sample_with_min<R: Rng + ?Sized>(
        &self,
        min_per_arm: usize,
        rng: &mut R,
    ) -> (TreatmentSequence, usize) {
        let k = self.k();
        let mut rejected = 0;
        loop {
            let seq = self.sample(rng);
            if seq.arm_counts(k).iter().all(|&c| c >= min_per_arm) {
                return (seq, rejected);
            }
            rejected += 1;
            assert!(
                rejected < 1_000_000,
                "could not draw a sequence with {min_per_arm} patients per arm"
            );
        }
    }

    pub fn contains(&self, seq: &TreatmentSequence) -> bool {
        if seq.len() != self.n() || seq.0.iter().any(|&a| a >= self.k()) {
            return false;
        }
        match self {
            RandomizationSpec::Cr { .. } => true,
            RandomizationSpec::Ra { targets } => &seq.arm_counts(self.k()) == targets,
            RandomizationSpec::Pbd { block, .. } => {
                let m: usize = block.iter().sum();
                seq.0.chunks(m).all(|chunk| {
                    let mut c = vec![0; block.len()];
                    chunk.iter().for_each(|&a| c[a] += 1);
                    &c == block
                })
            }
        }
    }

    /// Probability of `seq` under the procedure.
    pub fn probability(&self, seq: &TreatmentSequence) -> f64 {
        if !self.contains(seq) {
            return 0.0;
        }
        match self {
            RandomizationSpec::Cr { .. } => {
                let p = self.allocation_ratio();
                seq.0.iter().map(|&a| p[a]).product()
            }
            _ => 1.0 / self.count().distinct.to_f64().unwrap_or(f64::INFINITY),
        }
    }

    pub fn count(&self) -> SequenceCount {
        match self {
            RandomizationSpec::Cr { n, .. } => {
                let k = self.k() as u64;
                let faces: u64 = self
                    .integer_faces()
                    .map(|f| f.iter().sum::<usize>() as u64)
                    .unwrap_or(k);
                SequenceCount {
                    count: BigUint::from(faces).pow(*n as u32),
                    distinct: BigUint::from(k).pow(*n as u32),
                }
            }
            RandomizationSpec::Ra { targets } => {
                let c = multinomial(targets);
                SequenceCount {
                    count: c.clone(),
                    distinct: c,
                }
            }
            RandomizationSpec::Pbd { block, blocks } => {
                let c = multinomial(block).pow(*blocks as u32);
                SequenceCount {
                    count: c.clone(),
                    distinct: c,
                }
            }
        }
    }

    /// Every sequence of the reference set with its probability.
    pub fn enumerate(&self, cap: u64) -> Result<SequenceIter> {
        let distinct = self.count().distinct;
        if distinct > BigUint::from(cap) {
            return Err(Error::EnumerationTooLarge {
                count: distinct.to_string(),
                cap,
            });
        }
        let total = distinct.to_u64().expect("below cap");
        let state = match self {
            RandomizationSpec::Cr { n, .. } => IterState::Cr {
                digits: vec![0; *n],
                probs: self.allocation_ratio(),
                k: self.k(),
            },
            RandomizationSpec::Ra { targets } => IterState::Ra {
                current: urn(targets),
            },
            RandomizationSpec::Pbd { block, blocks } => IterState::Pbd {
                perms: multiset_permutations(&urn(block)),
                digits: vec![0; *blocks],
            },
        };
        Ok(SequenceIter {
            state,
            remaining: total,
            prob: 1.0 / total as f64,
        })
    }
}

/// Default cap on exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

fn urn(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(arm, &c)| std::iter::repeat_n(arm, c))
        .collect()
}

/// Lexicographic successor; false when `v` is the last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn multiset_permutations(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut cur = sorted.to_vec();
    let mut out = vec![cur.clone()];
    while next_permutation(&mut cur) {
        out.push(cur.clone());
    }
    out
}

enum IterState {
    Cr {
        digits: Vec<usize>,
        probs: Vec<f64>,
        k: usize,
    },
    Ra {
        current: Vec<usize>,
    },
    Pbd {
        perms: Vec<Vec<usize>>,
        digits: Vec<usize>,
    },
}

pub struct SequenceIter {
    state: IterState,
    remaining: u64,
    prob: f64,
}

impl Iterator for SequenceIter {
    type Item = (TreatmentSequence, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let more = self.remaining > 0;
        match &mut self.state {
            IterState::Cr { digits, probs, k } => {
                let p = digits.iter().map(|&a| probs[a]).product();
                let out = TreatmentSequence(digits.clone());
                if more {
                    for d in digits.iter_mut().rev() {
                        *d += 1;
                        if *d < *k {
                            break;
                        }
                        *d = 0;
                    }
                }
                Some((out, p))
            }
            IterState::Ra { current } => {
                let out = TreatmentSequence(current.clone());
                if more {
                    next_permutation(current);
                }
                Some((out, self.prob))
            }
            IterState::Pbd { perms, digits } => {
                let seq: Vec<usize> = digits
                    .iter()
                    .flat_map(|&d| perms[d].iter().cloned())
                    .collect();
                if more {
                    for d in digits.iter_mut().rev() {
                        *d += 1;
                        if *d < perms.len() {
                            break;
                        }
                        *d = 0;
                    }
                }
                Some((TreatmentSequence(seq), self.prob))
            }
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.remaining as usize;
        (r, Some(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn trial_design_counts() {
        let pbd = RandomizationSpec::pbd_for_n(vec![1, 2, 2, 2], 49).unwrap();
        assert_eq!(pbd.count().count, BigUint::from(630u32).pow(7));
        assert!((pbd.count().log10() - (3.94e19f64).log10()).abs() < 1e-3);

        let ra = RandomizationSpec::ra(vec![7, 14, 14, 14]).unwrap();
        let expected = factorial(49) / (factorial(7) * factorial(14).pow(3));
        assert_eq!(ra.count().count, expected);
        assert!((ra.count().log10() - (1.82e26f64).log10()).abs() < 1e-3);

        let cr = RandomizationSpec::cr(vec![1.0, 2.0, 2.0, 2.0], 49).unwrap();
        assert_eq!(cr.count().count, BigUint::from(7u32).pow(49));
        assert_eq!(cr.count().distinct, BigUint::from(4u32).pow(49));
        assert!((cr.count().log10() - (2.57e41f64).log10()).abs() < 1e-3);
    }

    #[test]
    fn pbd_rejects_partial_blocks() {
        assert!(RandomizationSpec::pbd_for_n(vec![1, 2, 2, 2], 50).is_err());
    }

    #[test]
    fn ra_and_pbd_realize_targets() {
        let mut rng = stream(11, 0);
        let ra = RandomizationSpec::ra(vec![7, 14, 14, 14]).unwrap();
        let pbd = RandomizationSpec::pbd_for_n(vec![1, 2, 2, 2], 49).unwrap();
        for _ in 0..1000 {
            let s = ra.sample(&mut rng);
            assert_eq!(s.arm_counts(4), vec![7, 14, 14, 14]);
            let s = pbd.sample(&mut rng);
            for w in s.0.chunks(7) {
                let mut c = [0; 4];
                w.iter().for_each(|&a| c[a] += 1);
                assert_eq!(c, [1, 2, 2, 2]);
            }
            assert!(pbd.contains(&s) && ra.contains(&s));
        }
    }

    #[test]
    fn cr_frequency_converges() {
        let cr = RandomizationSpec::cr(vec![1.0, 1.0], 1_000_000).unwrap();
        let s = cr.sample(&mut stream(3, 9));
        let f = s.arm_counts(2)[0] as f64 / 1e6;
        assert!((f - 0.5).abs() < 0.002);
    }

    #[test]
    fn small_enumerations() {
        let ra = RandomizationSpec::ra(vec![2, 2]).unwrap();
        let all: Vec<_> = ra.enumerate(100).unwrap().collect();
        assert_eq!(all.len(), 6);
        assert!(all.iter().all(|(_, p)| (p - 1.0 / 6.0).abs() < 1e-15));
        let distinct: HashSet<_> = all.iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(distinct.len(), 6);

        let pbd = RandomizationSpec::pbd(vec![1, 1], 2).unwrap();
        let all: Vec<_> = pbd.enumerate(100).unwrap().collect();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));

        for spec in [
            RandomizationSpec::cr(vec![1.0, 2.0, 3.0], 5).unwrap(),
            RandomizationSpec::ra(vec![2, 3, 2]).unwrap(),
            RandomizationSpec::pbd(vec![1, 2], 3).unwrap(),
        ] {
            let total: f64 = spec.enumerate(1_000_000).unwrap().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (s, p) in spec.enumerate(1_000_000).unwrap() {
                assert!((spec.probability(&s) - p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn enumeration_cap_enforced() {
        let ra = RandomizationSpec::ra(vec![7, 14, 14, 14]).unwrap();
        match ra.enumerate(DEFAULT_ENUMERATION_CAP) {
            Err(Error::EnumerationTooLarge { count, .. }) => assert!(count.len() > 20),
            _ => panic!("expected cap error"),
        }
    }

    #[test]
    fn nesting_of_reference_sets() {
        let pbd = RandomizationSpec::pbd(vec![1, 2], 2).unwrap();
        let ra = RandomizationSpec::ra(vec![2, 4]).unwrap();
        let cr = RandomizationSpec::cr(vec![1.0, 2.0], 6).unwrap();
        let ra_set: HashSet<_> = ra.enumerate(1000).unwrap().map(|(s, _)| s).collect();
        for (s, _) in pbd.enumerate(1000).unwrap() {
            assert!(ra_set.contains(&s));
        }
        for s in &ra_set {
            assert!(cr.contains(s));
        }
    }

    #[test]
    fn sampling_matches_enumerated_law() {
        // Chi-square goodness of fit over a 36-sequence PBD and a 30-sequence RA.
        for spec in [
            RandomizationSpec::pbd(vec![1, 1, 1], 2).unwrap(),
            RandomizationSpec::ra(vec![1, 2, 2]).unwrap(),
        ] {
            let probs: HashMap<_, _> = spec.enumerate(1000).unwrap().collect();
            let mut rng = stream(5, 77);
            let draws = 200_000usize;
            let mut freq: HashMap<TreatmentSequence, usize> = HashMap::new();
            for _ in 0..draws {
                *freq.entry(spec.sample(&mut rng)).or_default() += 1;
            }
            let chi2: f64 = probs
                .iter()
                .map(|(s, p)| {
                    let e = p * draws as f64;
                    let o = *freq.get(s).unwrap_or(&0) as f64;
                    (o - e).powi(2) / e
                })
                .sum();
            let df = probs.len() as f64 - 1.0;
            let crit = statrs::function::gamma::gamma_ur(df / 2.0, chi2 / 2.0);
            assert!(crit > 0.001, "p-value {crit} chi2 {chi2}");
        }
    }

    #[test]
    fn sequence_csv_roundtrip() {
        let s = TreatmentSequence(vec![0, 2, 1, 1, 3]);
        assert_eq!(TreatmentSequence::from_csv(&s.to_csv()).unwrap(), s);
    }
}
