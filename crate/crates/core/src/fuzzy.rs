//! Fuzzy scoring of rules, concepts and diagnoses.
//!
//! Connectives are the product t-norm, the max t-conorm and `1 - a`
//! negation. Quantifiers are generalized means with exponent `q` over the
//! datapoints of a batch:
//!
//! ```text
//! exists_q(phi) = mean(phi^q)^(1/q)
//! forall_q(phi) = 1 - mean((1 - phi)^q)^(1/q)
//! ```
//!
//! A rule's truth degree is `forall_q` of its per-datapoint implication truth
//! `1 - P(o) + P(o)·P(consequent)`; exclusion is split into one-vs-one pairs
//! and averaged over siblings. A concept's conflict degree is one minus the
//! mean truth of the rules it anchors, and it discounts the confidence of
//! that concept's output when scoring diagnoses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::Diagnosis;
use crate::hierarchy::{ConceptId, LabelHierarchy};
use crate::rules::{GroundRuleSet, RuleKind};

pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-7;
pub const DEFAULT_Q: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum FuzzyError {
    #[error("truth value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("quantifier over an empty set")]
    EmptyQuantifier,
    #[error("q must be ≥ 1")]
    ZeroExponent,
    #[error("batch has {got} values, expected {rows} × {cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("batch must contain at least one datapoint")]
    EmptyBatch,
    #[error("non-finite probability at row {row}, concept {col}")]
    NonFinite { row: usize, col: usize },
    #[error("probability {value} at row {row}, concept {col} outside [0, 1]")]
    ProbabilityRange { row: usize, col: usize, value: f64 },
    #[error("clamp epsilon {0} outside [0, 0.5)")]
    BadEpsilon(f64),
}

fn check_unit(a: f64) -> Result<f64, FuzzyError> {
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(FuzzyError::OutOfRange(a))
    }
}

/// Product t-norm.
pub fn t_norm(a: f64, b: f64) -> Result<f64, FuzzyError> {
    Ok(check_unit(a)? * check_unit(b)?)
}

/// Max t-conorm.
pub fn t_conorm(a: f64, b: f64) -> Result<f64, FuzzyError> {
    Ok(check_unit(a)?.max(check_unit(b)?))
}

pub fn f_neg(a: f64) -> Result<f64, FuzzyError> {
    Ok(1.0 - check_unit(a)?)
}

fn check_phi(phi: &[f64], q: u32) -> Result<(), FuzzyError> {
    if q == 0 {
        return Err(FuzzyError::ZeroExponent);
    }
    if phi.is_empty() {
        return Err(FuzzyError::EmptyQuantifier);
    }
    phi.iter().try_for_each(|&v| check_unit(v).map(drop))
}

pub fn exists_q(phi: &[f64], q: u32) -> Result<f64, FuzzyError> {
    check_phi(phi, q)?;
    Ok(generalized_mean(phi.iter().copied(), phi.len(), q))
}

pub fn forall_q(phi: &[f64], q: u32) -> Result<f64, FuzzyError> {
    check_phi(phi, q)?;
    Ok(1.0 - generalized_mean(phi.iter().map(|v| 1.0 - v), phi.len(), q))
}

/// `(mean(x^q))^(1/q)` with pairwise summation of the powers.
fn generalized_mean(xs: impl Iterator<Item = f64>, n: usize, q: u32) -> f64 {
    let powered: Vec<f64> = xs.map(|x| x.powi(q as i32)).collect();
    let mean = pairwise_sum(&powered) / n as f64;
    if q == 1 {
        mean
    } else {
        mean.powf(1.0 / q as f64)
    }
}

/// Pairwise summation; the result depends only on the input order, never on
/// how work is scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 128;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Per-datapoint, per-concept probabilities, row-major `(rows, concepts)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    clamp_epsilon: f64,
}

impl ProbBatch {
    pub fn new(values: Vec<f64>, rows: usize, cols: usize) -> Result<Self, FuzzyError> {
        Self::with_epsilon(values, rows, cols, DEFAULT_CLAMP_EPSILON)
    }

    /// Validates and clamps into `[eps, 1 - eps]`. `eps = 0` keeps crisp values.
    pub fn with_epsilon(
        mut values: Vec<f64>,
        rows: usize,
        cols: usize,
        eps: f64,
    ) -> Result<Self, FuzzyError> {
        if !(0.0..0.5).contains(&eps) {
            return Err(FuzzyError::BadEpsilon(eps));
        }
        if rows == 0 {
            return Err(FuzzyError::EmptyBatch);
        }
        if values.len() != rows * cols {
            return Err(FuzzyError::Shape {
                rows,
                cols,
                got: values.len(),
            });
        }
        for (i, v) in values.iter_mut().enumerate() {
            let (row, col) = (i / cols, i % cols);
            if !v.is_finite() {
                return Err(FuzzyError::NonFinite { row, col });
            }
            if !(0.0..=1.0).contains(v) {
                return Err(FuzzyError::ProbabilityRange { row, col, value: *v });
            }
            *v = v.clamp(eps, 1.0 - eps);
        }
        Ok(ProbBatch {
            values,
            rows,
            cols,
            clamp_epsilon: eps,
        })
    }

    pub fn from_f32(values: &[f32], rows: usize, cols: usize) -> Result<Self, FuzzyError> {
        Self::new(values.iter().map(|&v| v as f64).collect(), rows, cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn clamp_epsilon(&self) -> f64 {
        self.clamp_epsilon
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.cols..(x + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, x: usize, o: ConceptId) -> f64 {
        self.values[x * self.cols + o.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn column_map(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.rows).map(|x| f(self.row(x))).collect()
    }
}

/// How the per-concept average over rule truths is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictGrouping {
    /// Average over the enabled families; a family with no rule at the
    /// concept contributes truth 1.
    PerFamily,
    /// Average over the ground rules actually anchored at the concept.
    PerGroundRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzyConfig {
    pub q: u32,
    pub conflict_grouping: ConflictGrouping,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        FuzzyConfig {
            q: DEFAULT_Q,
            conflict_grouping: ConflictGrouping::PerFamily,
        }
    }
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<(), FuzzyError> {
        if self.q == 0 {
            Err(FuzzyError::ZeroExponent)
        } else {
            Ok(())
        }
    }
}

/// Truth of `∀x (o(x) → parent(x))`; 1 for the root.
pub fn truth_composition(p: &ProbBatch, o: ConceptId, h: &LabelHierarchy, q: u32) -> f64 {
    match h.parent_opt(o) {
        None => 1.0,
        Some(parent) => forall_unchecked(&p.column_map(|r| implication(r[o.0], r[parent.0])), q),
    }
}

/// Truth of `∀x (o(x) → ∨ children(x))` with max as the disjunction; 1 for leaves.
pub fn truth_decomposition(p: &ProbBatch, o: ConceptId, h: &LabelHierarchy, q: u32) -> f64 {
    let kids = h.children(o);
    if kids.is_empty() {
        return 1.0;
    }
    let phi = p.column_map(|r| {
        let best = kids.iter().map(|c| r[c.0]).fold(0.0, f64::max);
        implication(r[o.0], best)
    });
    forall_unchecked(&phi, q)
}

/// Truth of `∀x (o(x) → ¬s(x))` averaged over siblings `s`; 1 without siblings.
pub fn truth_exclusion(p: &ProbBatch, o: ConceptId, h: &LabelHierarchy, q: u32) -> f64 {
    let sibs = h.siblings(o);
    if sibs.is_empty() {
        return 1.0;
    }
    let total: f64 = sibs
        .iter()
        .map(|s| forall_unchecked(&p.column_map(|r| 1.0 - r[o.0] * r[s.0]), q))
        .sum();
    total / sibs.len() as f64
}

/// Reichenbach implication `¬a ∨ b` as `1 - a + a·b`.
#[inline]
fn implication(a: f64, b: f64) -> f64 {
    1.0 - (a - a * b)
}

fn forall_unchecked(phi: &[f64], q: u32) -> f64 {
    1.0 - generalized_mean(phi.iter().map(|v| 1.0 - v), phi.len(), q)
}

/// Per-family truth degrees of one concept; `None` where the family has no
/// rule at this concept or is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyTruth {
    pub composition: Option<f64>,
    pub decomposition: Option<f64>,
    pub exclusion: Option<f64>,
}

impl FamilyTruth {
    pub fn get(&self, kind: RuleKind) -> Option<f64> {
        match kind {
            RuleKind::Composition => self.composition,
            RuleKind::Decomposition => self.decomposition,
            RuleKind::Exclusion => self.exclusion,
        }
    }

    fn set(&mut self, kind: RuleKind, v: f64) {
        match kind {
            RuleKind::Composition => self.composition = Some(v),
            RuleKind::Decomposition => self.decomposition = Some(v),
            RuleKind::Exclusion => self.exclusion = Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictProfile {
    /// Conflict degree per concept.
    pub c: Vec<f64>,
    pub truths: Vec<FamilyTruth>,
}

impl ConflictProfile {
    /// A profile with zero conflict everywhere (confidence-only scoring).
    pub fn zero(num_concepts: usize) -> Self {
        ConflictProfile {
            c: vec![0.0; num_concepts],
            truths: vec![FamilyTruth::default(); num_concepts],
        }
    }
}

/// Batch-level conflict degrees. Rule truths are computed independently per
/// concept (in parallel) with order-fixed reductions, so the result does not
/// depend on the thread count.
pub fn conflict_profile(
    p: &ProbBatch,
    h: &LabelHierarchy,
    k: &GroundRuleSet,
    cfg: &FuzzyConfig,
) -> ConflictProfile {
    assert_eq!(p.cols(), h.len(), "batch width");
    let families = k.families();
    let per_concept: Vec<(f64, FamilyTruth)> = (0..h.len())
        .into_par_iter()
        .map(|i| {
            let o = ConceptId(i);
            let mut truth = FamilyTruth::default();
            for rule in k.anchored_at(o) {
                let g = match rule.kind {
                    RuleKind::Composition => truth_composition(p, o, h, cfg.q),
                    RuleKind::Decomposition => truth_decomposition(p, o, h, cfg.q),
                    RuleKind::Exclusion => truth_exclusion(p, o, h, cfg.q),
                };
                truth.set(rule.kind, g);
            }
            let c = match cfg.conflict_grouping {
                ConflictGrouping::PerFamily => {
                    let enabled: Vec<f64> = RuleKind::ALL
                        .iter()
                        .filter(|&&kind| families.contains(kind))
                        .map(|&kind| truth.get(kind).unwrap_or(1.0))
                        .collect();
                    mean_complement(&enabled)
                }
                ConflictGrouping::PerGroundRule => {
                    let present: Vec<f64> =
                        RuleKind::ALL.iter().filter_map(|&kind| truth.get(kind)).collect();
                    mean_complement(&present)
                }
            };
            (c.clamp(0.0, 1.0), truth)
        })
        .collect();
    let (c, truths) = per_concept.into_iter().unzip();
    ConflictProfile { c, truths }
}

fn mean_complement(truths: &[f64]) -> f64 {
    if truths.is_empty() {
        0.0
    } else {
        1.0 - truths.iter().sum::<f64>() / truths.len() as f64
    }
}

/// Probability that an output is normal, given its confidence `p`, its
/// conflict degree `c`, and whether it was predicted true.
#[inline]
pub fn normality(p: f64, c: f64, predicted_true: bool) -> f64 {
    let confidence = if predicted_true { p } else { 1.0 - p };
    confidence * (1.0 - c)
}

/// Independent-failure likelihood: normal outputs contribute `n_o`, flipped
/// outputs `1 - n_o`.
pub fn diagnosis_likelihood(d: &Diagnosis, normality: &[f64]) -> f64 {
    flip_likelihood(&d.flip_set, normality)
}

pub(crate) fn flip_likelihood(flips: &[ConceptId], normality: &[f64]) -> f64 {
    let mut flips = flips.iter().peekable();
    let mut l = 1.0;
    for (i, &n) in normality.iter().enumerate() {
        if flips.peek().is_some_and(|o| o.0 == i) {
            flips.next();
            l *= 1.0 - n;
        } else {
            l *= n;
        }
    }
    l
}
