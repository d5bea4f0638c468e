//! Minimal diagnoses of inconsistent assignments.
//!
//! A diagnosis is a set of concepts whose outputs, once negated, make the
//! assignment consistent with the rule set. It is minimal when no strict
//! subset is itself a diagnosis.
//!
//! Enumeration builds a hitting-set tree breadth first: a node is a candidate
//! flip set `F`; if `a ⊕ F` still violates a rule, every minimal diagnosis
//! containing `F` must also touch that rule's support, so the node branches on
//! the support of the violated rule with the smallest support. Nodes that
//! contain an already-found diagnosis are closed. Flipping can break rules
//! that held before, which is why each node is re-evaluated instead of
//! reasoning about conflict sets alone.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::ConceptId;
use crate::rules::{Assignment, GroundRuleSet};

/// Largest hierarchy the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_CONCEPTS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosisError {
    #[error("no diagnosis with at most {max_cardinality} flips")]
    BoundExceeded { max_cardinality: usize },
    #[error("max_cardinality must be at least 1")]
    ZeroBound,
    #[error("exhaustive search supports at most {max} concepts, got {got}")]
    TooLarge { max: usize, got: usize },
    #[error("flip set {flips:?} does not make the assignment consistent")]
    NotADiagnosis { flips: Vec<usize> },
    #[error("no diagnoses to select from")]
    NoCandidates,
    #[error("strategy {0:?} needs scored diagnoses")]
    Unscored(Strategy),
}

/// A flip set plus, once scored, its likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    /// Concepts assumed faulty, ascending.
    pub flip_set: Vec<ConceptId>,
    pub likelihood: Option<f64>,
}

impl Diagnosis {
    pub fn new(mut flip_set: Vec<ConceptId>) -> Self {
        flip_set.sort_unstable();
        flip_set.dedup();
        Diagnosis {
            flip_set,
            likelihood: None,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.flip_set.len()
    }

    pub fn contains(&self, o: ConceptId) -> bool {
        self.flip_set.binary_search(&o).is_ok()
    }

    /// Concepts assumed normal: everything not in the flip set.
    pub fn normal_set(&self, num_concepts: usize) -> Vec<ConceptId> {
        (0..num_concepts)
            .map(ConceptId)
            .filter(|&o| !self.contains(o))
            .collect()
    }

    pub fn with_likelihood(mut self, l: f64) -> Self {
        self.likelihood = Some(l);
        self
    }
}

/// Deterministic output order: ascending cardinality, then lexicographic ids.
fn canonical_order(ds: &mut [Diagnosis]) {
    ds.sort_by(|a, b| {
        a.cardinality()
            .cmp(&b.cardinality())
            .then_with(|| a.flip_set.cmp(&b.flip_set))
    });
}

fn is_subset(small: &[ConceptId], big: &[ConceptId]) -> bool {
    // Both sorted.
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

/// All subset-minimal diagnoses with at most `max_cardinality` flips.
///
/// Returns an empty list when `a` is already consistent, and
/// [`DiagnosisError::BoundExceeded`] when `a` is inconsistent but every
/// diagnosis is larger than the bound.
pub fn enumerate_minimal_diagnoses(
    k: &GroundRuleSet,
    a: &Assignment,
    max_cardinality: usize,
) -> Result<Vec<Diagnosis>, DiagnosisError> {
    if max_cardinality == 0 {
        return Err(DiagnosisError::ZeroBound);
    }
    assert_eq!(a.len(), k.num_concepts(), "assignment length");
    if k.is_consistent(a) {
        return Ok(Vec::new());
    }

    let mut found: Vec<Vec<ConceptId>> = Vec::new();
    let mut frontier: Vec<Vec<ConceptId>> = vec![Vec::new()];
    let mut bits = a.bits().to_vec();

    for depth in 0..=max_cardinality {
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for node in frontier {
            if found.iter().any(|d| is_subset(d, &node)) {
                continue;
            }
            for o in &node {
                bits[o.0] = !bits[o.0];
            }
            let branch = k
                .rules()
                .iter()
                .filter(|r| !r.eval_bits(&bits))
                .min_by_key(|r| r.support.len());
            for o in &node {
                bits[o.0] = !bits[o.0];
            }

            match branch {
                None => found.push(node),
                Some(rule) if depth < max_cardinality => {
                    for &o in &rule.support {
                        if node.binary_search(&o).is_ok() {
                            continue;
                        }
                        let mut child = node.clone();
                        let pos = child.binary_search(&o).unwrap_err();
                        child.insert(pos, o);
                        if seen.insert(child.clone()) {
                            next.push(child);
                        }
                    }
                }
                Some(_) => {}
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    if found.is_empty() {
        return Err(DiagnosisError::BoundExceeded { max_cardinality });
    }
    let mut out: Vec<Diagnosis> = found.into_iter().map(Diagnosis::new).collect();
    canonical_order(&mut out);
    Ok(out)
}

/// Exhaustive reference: tries all `2^|O|` flip sets. Test oracle only.
pub fn brute_force_diagnoses(
    k: &GroundRuleSet,
    a: &Assignment,
) -> Result<Vec<Diagnosis>, DiagnosisError> {
    let n = k.num_concepts();
    if n > BRUTE_FORCE_MAX_CONCEPTS {
        return Err(DiagnosisError::TooLarge {
            max: BRUTE_FORCE_MAX_CONCEPTS,
            got: n,
        });
    }
    if k.is_consistent(a) {
        return Ok(Vec::new());
    }
    let mut consistent_masks: Vec<u32> = (0u32..(1 << n))
        .filter(|&mask| {
            let bits: Vec<bool> = (0..n).map(|i| a.bits()[i] ^ (mask >> i & 1 == 1)).collect();
            k.is_consistent_bits(&bits)
        })
        .collect();
    consistent_masks.sort_by_key(|m| m.count_ones());
    let mut minimal: Vec<u32> = Vec::new();
    for m in consistent_masks {
        if !minimal.iter().any(|&d| d & !m == 0) {
            minimal.push(m);
        }
    }
    let mut out: Vec<Diagnosis> = minimal
        .into_iter()
        .map(|m| Diagnosis::new((0..n).filter(|i| m >> i & 1 == 1).map(ConceptId).collect()))
        .collect();
    canonical_order(&mut out);
    Ok(out)
}

/// Negates the diagnosis' outputs and checks the result is consistent.
pub fn resolve(
    k: &GroundRuleSet,
    a: &Assignment,
    d: &Diagnosis,
) -> Result<Assignment, DiagnosisError> {
    let revised = a.flipped(&d.flip_set);
    if k.is_consistent(&revised) {
        Ok(revised)
    } else {
        Err(DiagnosisError::NotADiagnosis {
            flips: d.flip_set.iter().map(|o| o.0).collect(),
        })
    }
}

/// How one diagnosis is picked among several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Uniform over all minimal diagnoses.
    Uniform,
    /// Proportional to a likelihood built from predictive confidence alone.
    Predictive,
    /// The most likely diagnosis.
    Greedy,
    /// One draw from the full likelihood.
    Sampling,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Uniform,
        Strategy::Predictive,
        Strategy::Greedy,
        Strategy::Sampling,
    ];

    pub fn needs_likelihood(self) -> bool {
        !matches!(self, Strategy::Uniform)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Predictive => "predictive",
            Strategy::Greedy => "greedy",
            Strategy::Sampling => "sampling",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy '{s}' (uniform|predictive|greedy|sampling)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// Every weight was zero and the draw fell back to uniform.
    pub fell_back: bool,
}

/// Picks one diagnosis. `Predictive` and `Sampling` draw proportionally to
/// the stored likelihoods (the caller scores them accordingly); `Greedy`
/// takes the argmax, breaking ties on the lexicographically smallest flip set.
pub fn select_diagnosis<R: Rng + ?Sized>(
    ds: &[Diagnosis],
    strategy: Strategy,
    rng: &mut R,
) -> Result<Selection, DiagnosisError> {
    if strategy == Strategy::Uniform || ds.len() <= 1 {
        return select_weighted(ds, None, strategy, rng);
    }
    let weights = ds
        .iter()
        .map(|d| d.likelihood)
        .collect::<Option<Vec<f64>>>()
        .ok_or(DiagnosisError::Unscored(strategy))?;
    select_weighted(ds, Some(&weights), strategy, rng)
}

/// [`select_diagnosis`] with weights supplied alongside the diagnoses.
pub fn select_weighted<R: Rng + ?Sized>(
    ds: &[Diagnosis],
    weights: Option<&[f64]>,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Selection, DiagnosisError> {
    if ds.is_empty() {
        return Err(DiagnosisError::NoCandidates);
    }
    if ds.len() == 1 {
        return Ok(Selection {
            index: 0,
            fell_back: false,
        });
    }
    let uniform = |rng: &mut R, fell_back| Selection {
        index: rng.gen_range(0..ds.len()),
        fell_back,
    };
    if strategy == Strategy::Uniform {
        return Ok(uniform(rng, false));
    }
    let weights = weights.ok_or(DiagnosisError::Unscored(strategy))?;
    assert_eq!(weights.len(), ds.len(), "one weight per diagnosis");

    match strategy {
        Strategy::Greedy => {
            let mut best = 0;
            for i in 1..ds.len() {
                if weights[i] > weights[best]
                    || (weights[i] == weights[best] && ds[i].flip_set < ds[best].flip_set)
                {
                    best = i;
                }
            }
            Ok(Selection {
                index: best,
                fell_back: false,
            })
        }
        _ => match WeightedIndex::new(weights) {
            Ok(dist) => Ok(Selection {
                index: dist.sample(rng),
                fell_back: false,
            }),
            Err(_) => Ok(uniform(rng, true)),
        },
    }
}
