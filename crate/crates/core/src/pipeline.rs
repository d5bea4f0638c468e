//! Batch revision of hierarchical pseudo labels.
//!
//! For one batch of per-concept probabilities:
//!
//! 1. binarize every row at `binarize_threshold`;
//! 2. compute the conflict profile once from the batch probabilities;
//! 3. for each inconsistent row, enumerate minimal diagnoses, score them,
//!    pick one per the configured [`Strategy`] and apply it;
//! 4. read the leaf label off the surviving root-to-leaf path (`-1` when the
//!    revised row is empty or could not be repaired within the bound).
//!
//! Rows are independent after step 2. Each row draws from its own RNG stream
//! keyed by `(seed, row index)`, so results do not depend on the number of
//! worker threads. Diagnoses depend only on the binarized row, so they are
//! computed once per distinct pattern in the batch.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::{
    enumerate_minimal_diagnoses, select_weighted, Diagnosis, DiagnosisError, Strategy,
};
use crate::fuzzy::{
    conflict_profile, flip_likelihood, normality, ConflictGrouping, ConflictProfile, FuzzyConfig,
    FuzzyError, ProbBatch,
};
use crate::hierarchy::{HierarchyError, LabelHierarchy};
use crate::rules::{Assignment, GroundRuleSet, RuleFamilies, RuleKind};
use crate::tensor::TensorError;

/// Label value for rows that yield no pseudo label.
pub const IGNORE: i32 = -1;

/// Rows of a probability simplex must sum to 1 within this tolerance.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("batch has {got} concepts per row, hierarchy has {expected}")]
    Width { expected: usize, got: usize },
    #[error("buffer holds {got} values, expected {rows} rows × {cols} concepts")]
    Buffer { rows: usize, cols: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("row {row} is not on the probability simplex (sum {sum})")]
    NotSimplex { row: usize, sum: f64 },
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// An engine invariant failed; this is a bug, not bad input.
    #[error("internal contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionConfig {
    pub binarize_threshold: f64,
    pub strategy: Strategy,
    pub fuzzy: FuzzyConfig,
    /// `None` means hierarchy depth plus two.
    pub max_cardinality: Option<usize>,
    pub seed: u64,
    /// Confidence threshold of the thresholding baseline.
    pub tau: f64,
    pub families: RuleFamilies,
}

impl Default for RevisionConfig {
    fn default() -> Self {
        RevisionConfig {
            binarize_threshold: 0.5,
            strategy: Strategy::Sampling,
            fuzzy: FuzzyConfig::default(),
            max_cardinality: None,
            seed: 0,
            tau: 0.95,
            families: RuleFamilies::ALL,
        }
    }
}

impl RevisionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.binarize_threshold) {
            return Err(PipelineError::Config(format!(
                "threshold {} must lie in (0, 1)",
                self.binarize_threshold
            )));
        }
        if !open_unit(self.tau) {
            return Err(PipelineError::Config(format!("tau {} must lie in (0, 1)", self.tau)));
        }
        if self.max_cardinality == Some(0) {
            return Err(PipelineError::Config("max_card must be ≥ 1".into()));
        }
        if self.fuzzy.q == 0 {
            return Err(PipelineError::Config("q must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn max_cardinality_for(&self, h: &LabelHierarchy) -> usize {
        self.max_cardinality.unwrap_or(h.num_levels() + 2)
    }

    /// Builds a config from string pairs, starting at the defaults. Keys:
    /// `threshold`, `strategy`, `q`, `grouping` (`per_family`|`per_ground_rule`),
    /// `max_card`, `seed`, `tau`, `families` (comma list of
    /// `composition,decomposition,exclusion`).
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, PipelineError> {
        let mut cfg = RevisionConfig::default();
        for (key, value) in pairs {
            let bad = |what: &str| PipelineError::Config(format!("{key}: cannot parse '{value}' as {what}"));
            match key {
                "threshold" => cfg.binarize_threshold = value.parse().map_err(|_| bad("a number"))?,
                "tau" => cfg.tau = value.parse().map_err(|_| bad("a number"))?,
                "q" => cfg.fuzzy.q = value.parse().map_err(|_| bad("an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an integer"))?,
                "max_card" => {
                    cfg.max_cardinality = Some(value.parse().map_err(|_| bad("an integer"))?)
                }
                "strategy" => cfg.strategy = value.parse().map_err(PipelineError::Config)?,
                "grouping" => {
                    cfg.fuzzy.conflict_grouping = match value {
                        "per_family" => ConflictGrouping::PerFamily,
                        "per_ground_rule" => ConflictGrouping::PerGroundRule,
                        _ => return Err(bad("per_family|per_ground_rule")),
                    }
                }
                "families" => cfg.families = parse_families(value).ok_or_else(|| bad("rule families"))?,
                _ => return Err(PipelineError::Config(format!("unknown key '{key}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_families(s: &str) -> Option<RuleFamilies> {
    let mut f = RuleFamilies {
        composition: false,
        decomposition: false,
        exclusion: false,
    };
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let kind = match part {
            "composition" | "C" => RuleKind::Composition,
            "decomposition" | "D" => RuleKind::Decomposition,
            "exclusion" | "E" => RuleKind::Exclusion,
            _ => return None,
        };
        f.set(kind, true);
    }
    (f.count() > 0).then_some(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    /// Already consistent; passed through.
    Consistent,
    /// Repaired by applying one diagnosis.
    Revised,
    /// No diagnosis within the cardinality bound; left as-is and ignored.
    BoundExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RevisionStats {
    pub rows: usize,
    /// Rows that were already consistent.
    pub consistent: usize,
    /// Rows changed by a diagnosis.
    pub revised: usize,
    /// Rows whose final label is `-1` (empty rows and bound-exceeded rows).
    pub ignored: usize,
    pub bound_exceeded: usize,
    /// Draws that fell back to uniform because every likelihood was zero.
    pub uniform_fallbacks: usize,
    /// Count of applied diagnoses by flip-set size.
    pub cardinality_histogram: BTreeMap<usize, usize>,
    /// Conflict degree per concept for this batch.
    pub conflict_degrees: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisionResult {
    width: usize,
    revised: Vec<bool>,
    pub leaf_labels: Vec<i32>,
    pub outcomes: Vec<RowOutcome>,
    pub stats: RevisionStats,
    pub profile: Option<ConflictProfile>,
}

impl RevisionResult {
    fn empty(width: usize) -> Self {
        RevisionResult {
            width,
            revised: Vec::new(),
            leaf_labels: Vec::new(),
            outcomes: Vec::new(),
            stats: RevisionStats {
                conflict_degrees: vec![0.0; width],
                ..RevisionStats::default()
            },
            profile: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.leaf_labels.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Revised bits of row `i`.
    pub fn row(&self, i: usize) -> &[bool] {
        &self.revised[i * self.width..(i + 1) * self.width]
    }

    pub fn assignment(&self, i: usize) -> Assignment {
        Assignment::new(self.row(i).to_vec())
    }

    /// Row-major `rows × width` revised bits.
    pub fn revised_bits(&self) -> &[bool] {
        &self.revised
    }

    /// The revised rows as crisp probabilities, for feeding back in.
    pub fn revised_as_probabilities(&self) -> Vec<f64> {
        self.revised.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// A parsed hierarchy, its compiled rules and a revision config. Immutable;
/// share it across threads and call [`RevisionEngine::revise`] concurrently.
#[derive(Debug, Clone)]
pub struct RevisionEngine {
    hierarchy: LabelHierarchy,
    rules: GroundRuleSet,
    config: RevisionConfig,
}

impl RevisionEngine {
    pub fn new(hierarchy: LabelHierarchy, config: RevisionConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let rules = GroundRuleSet::compile_with(&hierarchy, config.families);
        Ok(RevisionEngine {
            hierarchy,
            rules,
            config,
        })
    }

    /// Session-style constructor: hierarchy text plus string config pairs.
    pub fn from_text<'a>(
        hierarchy_text: &str,
        config: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, PipelineError> {
        let h = LabelHierarchy::parse(hierarchy_text)?;
        Self::new(h, RevisionConfig::from_pairs(config)?)
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hierarchy
    }

    pub fn rules(&self) -> &GroundRuleSet {
        &self.rules
    }

    pub fn config(&self) -> &RevisionConfig {
        &self.config
    }

    /// Revises a contiguous row-major float32 buffer of `rows × |O|` values.
    /// An empty buffer yields empty outputs and zeroed stats.
    pub fn revise_buffer(&self, probs: &[f32], rows: usize) -> Result<RevisionResult, PipelineError> {
        let cols = self.hierarchy.len();
        if probs.len() != rows * cols {
            return Err(PipelineError::Buffer {
                rows,
                cols,
                got: probs.len(),
            });
        }
        if rows == 0 {
            return Ok(RevisionResult::empty(cols));
        }
        self.revise(&ProbBatch::from_f32(probs, rows, cols)?)
    }

    pub fn revise(&self, p: &ProbBatch) -> Result<RevisionResult, PipelineError> {
        self.revise_seeded(p, self.config.seed)
    }

    /// As [`RevisionEngine::revise`] with the configured seed replaced.
    pub fn revise_seeded(&self, p: &ProbBatch, seed: u64) -> Result<RevisionResult, PipelineError> {
        let h = &self.hierarchy;
        let cfg = &self.config;
        let width = h.len();
        if p.cols() != width {
            return Err(PipelineError::Width {
                expected: width,
                got: p.cols(),
            });
        }
        let rows = p.rows();
        let max_card = cfg.max_cardinality_for(h);

        let profile = conflict_profile(p, h, &self.rules, &cfg.fuzzy);
        let conflict: Vec<f64> = match cfg.strategy {
            Strategy::Predictive => vec![0.0; width],
            _ => profile.c.clone(),
        };

        // Binarize and intern row patterns.
        let mut bits = vec![false; rows * width];
        bits.par_chunks_mut(width).enumerate().for_each(|(x, out)| {
            for (b, &v) in out.iter_mut().zip(p.row(x)) {
                *b = v >= cfg.binarize_threshold;
            }
        });
        let mut pattern_index: HashMap<&[bool], u32> = HashMap::new();
        let mut patterns: Vec<&[bool]> = Vec::new();
        let row_pattern: Vec<u32> = bits
            .chunks(width)
            .map(|row| {
                *pattern_index.entry(row).or_insert_with(|| {
                    patterns.push(row);
                    (patterns.len() - 1) as u32
                })
            })
            .collect();

        let diagnoses: Vec<Result<Vec<Diagnosis>, DiagnosisError>> = patterns
            .par_iter()
            .map(|row| {
                enumerate_minimal_diagnoses(&self.rules, &Assignment::new(row.to_vec()), max_card)
            })
            .collect();
        for d in &diagnoses {
            if let Err(e) = d {
                if !matches!(e, DiagnosisError::BoundExceeded { .. }) {
                    return Err(PipelineError::Contract(e.to_string()));
                }
            }
        }

        let mut revised = bits.clone();
        let per_row: Vec<Result<RowInfo, PipelineError>> = revised
            .par_chunks_mut(width)
            .enumerate()
            .map(|(x, out)| {
                let ds = match &diagnoses[row_pattern[x] as usize] {
                    Ok(ds) if ds.is_empty() => return Ok(RowInfo::consistent(self.leaf_label(out))),
                    Ok(ds) => ds,
                    Err(_) => return Ok(RowInfo::bound_exceeded()),
                };
                let weights: Option<Vec<f64>> = cfg.strategy.needs_likelihood().then(|| {
                    let n: Vec<f64> = (0..width)
                        .map(|o| normality(p.row(x)[o], conflict[o], out[o]))
                        .collect();
                    ds.iter().map(|d| flip_likelihood(&d.flip_set, &n)).collect()
                });
                let mut rng = row_rng(seed, x as u64);
                let pick = select_weighted(ds, weights.as_deref(), cfg.strategy, &mut rng)
                    .map_err(|e| PipelineError::Contract(e.to_string()))?;
                let chosen = &ds[pick.index];
                for o in &chosen.flip_set {
                    out[o.0] = !out[o.0];
                }
                if !self.rules.is_consistent_bits(out) {
                    return Err(PipelineError::Contract(format!(
                        "row {x}: diagnosis {:?} left the row inconsistent",
                        chosen.flip_set
                    )));
                }
                Ok(RowInfo {
                    outcome: RowOutcome::Revised,
                    label: self.leaf_label(out),
                    cardinality: Some(chosen.cardinality()),
                    fell_back: pick.fell_back,
                })
            })
            .collect();

        let mut stats = RevisionStats {
            rows,
            conflict_degrees: profile.c.clone(),
            ..RevisionStats::default()
        };
        let mut leaf_labels = Vec::with_capacity(rows);
        let mut outcomes = Vec::with_capacity(rows);
        for info in per_row {
            let info = info?;
            match info.outcome {
                RowOutcome::Consistent => stats.consistent += 1,
                RowOutcome::Revised => stats.revised += 1,
                RowOutcome::BoundExceeded => stats.bound_exceeded += 1,
            }
            if info.label == IGNORE {
                stats.ignored += 1;
            }
            if let Some(c) = info.cardinality {
                *stats.cardinality_histogram.entry(c).or_insert(0) += 1;
            }
            stats.uniform_fallbacks += info.fell_back as usize;
            leaf_labels.push(info.label);
            outcomes.push(info.outcome);
        }

        Ok(RevisionResult {
            width,
            revised,
            leaf_labels,
            outcomes,
            stats,
            profile: Some(profile),
        })
    }

    /// The single true leaf of a row, or `-1` if there is none or several.
    pub fn leaf_label(&self, row: &[bool]) -> i32 {
        let mut found = IGNORE;
        for &leaf in self.hierarchy.leaf_ids() {
            if row[leaf.0] {
                if found != IGNORE {
                    return IGNORE;
                }
                found = leaf.0 as i32;
            }
        }
        found
    }
}

struct RowInfo {
    outcome: RowOutcome,
    label: i32,
    cardinality: Option<usize>,
    fell_back: bool,
}

impl RowInfo {
    fn consistent(label: i32) -> Self {
        RowInfo {
            outcome: RowOutcome::Consistent,
            label,
            cardinality: None,
            fell_back: false,
        }
    }

    fn bound_exceeded() -> Self {
        RowInfo {
            outcome: RowOutcome::BoundExceeded,
            label: IGNORE,
            cardinality: None,
            fell_back: false,
        }
    }
}

/// The RNG stream of one datapoint.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// One-shot revision with a freshly compiled engine.
pub fn revise_batch(
    p: &ProbBatch,
    h: &LabelHierarchy,
    cfg: &RevisionConfig,
) -> Result<RevisionResult, PipelineError> {
    RevisionEngine::new(h.clone(), cfg.clone())?.revise(p)
}

/// Confidence thresholding: argmax class if its probability reaches `tau`,
/// else `-1`. Rows must lie on the probability simplex.
pub fn confidence_threshold_baseline(
    p_leaves: &[f64],
    classes: usize,
    tau: f64,
) -> Result<Vec<i32>, PipelineError> {
    if classes == 0 || !p_leaves.len().is_multiple_of(classes) {
        return Err(PipelineError::Config(format!(
            "{} values do not split into rows of {classes} classes",
            p_leaves.len()
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(PipelineError::Config(format!("tau {tau} must lie in (0, 1]")));
    }
    p_leaves
        .chunks(classes)
        .enumerate()
        .map(|(row, probs)| {
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
            {
                return Err(PipelineError::NotSimplex { row, sum });
            }
            let (best, &max) = probs
                .iter()
                .enumerate()
                .fold((0, &probs[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            Ok(if max >= tau { best as i32 } else { IGNORE })
        })
        .collect()
}

pub fn write_stats(path: impl AsRef<Path>, stats: &RevisionStats) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    std::fs::write(path, json + "\n").map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}
