//! Synthetic hierarchical classification data.
//!
//! Each superclass has a mean drawn at distance `super_sep` from the origin;
//! its leaves sit at a further `leaf_sep` offset, and points scatter around
//! their leaf mean with isotropic noise. A superclass cluster is therefore
//! the union of its leaves' clusters.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::hierarchy::{ConceptId, HierarchyNode, LabelHierarchy};
use crate::pipeline::row_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub superclasses: usize,
    pub leaves_per_superclass: usize,
    pub dim: usize,
    /// Training pool size (labeled plus unlabeled).
    pub n_train: usize,
    pub n_test: usize,
    pub labeled_fraction: f64,
    pub super_sep: f64,
    pub leaf_sep: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            superclasses: 2,
            leaves_per_superclass: 3,
            dim: 8,
            n_train: 20_000,
            n_test: 5_000,
            labeled_fraction: 0.01,
            super_sep: 6.0,
            leaf_sep: 4.0,
            noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.superclasses * self.leaves_per_superclass
    }

    pub fn num_labeled(&self) -> usize {
        (self.labeled_fraction * self.n_train as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.superclasses < 2 || self.leaves_per_superclass < 2 {
            return Err(SimError::Config(
                "need at least 2 superclasses with at least 2 leaves each".into(),
            ));
        }
        if self.dim == 0 {
            return Err(SimError::Config("dim must be positive".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(SimError::Config(format!(
                "labeled fraction {} must lie in (0, 1]",
                self.labeled_fraction
            )));
        }
        if self.num_labeled() < self.num_classes() {
            return Err(SimError::Infeasible {
                labeled: self.num_labeled(),
                classes: self.num_classes(),
            });
        }
        if self.n_test == 0 {
            return Err(SimError::Config("n_test must be positive".into()));
        }
        for (name, v) in [
            ("super_sep", self.super_sep),
            ("leaf_sep", self.leaf_sep),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Leaf class `k` is named `c{k}`, superclass `j` is `s{j}`.
pub fn leaf_name(k: usize) -> String {
    format!("c{k}")
}

/// Root → `s0..` → `c0..`, leaves grouped consecutively.
pub fn official_hierarchy(cfg: &SynthConfig) -> LabelHierarchy {
    grouped_hierarchy(&official_groups(cfg))
}

/// Same shape as the official hierarchy but with leaves dealt into
/// superclasses at random. The grouping is guaranteed to differ.
pub fn random_hierarchy(cfg: &SynthConfig, seed: u64) -> LabelHierarchy {
    let mut rng = row_rng(seed, 0x7261_6e64);
    let official = official_groups(cfg);
    let mut order: Vec<usize> = (0..cfg.num_classes()).collect();
    loop {
        order.shuffle(&mut rng);
        let mut groups: Vec<Vec<usize>> = order
            .chunks(cfg.leaves_per_superclass)
            .map(|g| {
                let mut g = g.to_vec();
                g.sort_unstable();
                g
            })
            .collect();
        groups.sort();
        if groups != official {
            return grouped_hierarchy(&groups);
        }
    }
}

fn official_groups(cfg: &SynthConfig) -> Vec<Vec<usize>> {
    (0..cfg.superclasses)
        .map(|j| (j * cfg.leaves_per_superclass..(j + 1) * cfg.leaves_per_superclass).collect())
        .collect()
}

fn grouped_hierarchy(groups: &[Vec<usize>]) -> LabelHierarchy {
    let root = HierarchyNode::branch(
        "Root",
        groups
            .iter()
            .enumerate()
            .map(|(j, g)| {
                HierarchyNode::branch(
                    format!("s{j}"),
                    g.iter().map(|&k| HierarchyNode::leaf(leaf_name(k))).collect(),
                )
            })
            .collect(),
    );
    LabelHierarchy::from_root(&root).expect("synthetic hierarchy is well formed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    /// Class index per point (`c{k}` has index `k`).
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub hierarchy: LabelHierarchy,
    /// `num_classes × dim` leaf cluster means.
    pub leaf_means: Vec<f64>,
    pub train: Split,
    pub labeled_mask: Vec<bool>,
    pub test: Split,
}

impl SynthDataset {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.train.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.train.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    /// Multi-hot target over `h` for class `k`: its leaf and all ancestors.
    pub fn path_target(h: &LabelHierarchy, k: usize) -> Vec<f64> {
        let mut t = vec![0.0; h.len()];
        let leaf = h.id_of(&leaf_name(k)).expect("class present in hierarchy");
        for o in h.path_from_root(leaf) {
            t[o.0] = 1.0;
        }
        t
    }

    /// Concept id of class `k` in `h`.
    pub fn class_concept(h: &LabelHierarchy, k: usize) -> ConceptId {
        h.id_of(&leaf_name(k)).expect("class present in hierarchy")
    }
}

pub fn gen_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset, SimError> {
    cfg.validate()?;
    let d = cfg.dim;
    let classes = cfg.num_classes();
    let mut rng = row_rng(seed, 0);

    let mut leaf_means = Vec::with_capacity(classes * d);
    for _ in 0..cfg.superclasses {
        let centre = random_direction(&mut rng, d, cfg.super_sep);
        for _ in 0..cfg.leaves_per_superclass {
            let offset = random_direction(&mut rng, d, cfg.leaf_sep);
            leaf_means.extend(centre.iter().zip(&offset).map(|(a, b)| a + b));
        }
    }

    let sample = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(rng);
        let mut features = Vec::with_capacity(n * d);
        for &k in &labels {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                features.push(leaf_means[k * d + j] + cfg.noise * z);
            }
        }
        Split { features, labels }
    };
    let train = sample(cfg.n_train, &mut rng);
    let test = sample(cfg.n_test, &mut rng);

    // One labeled point per class first, then a random fill.
    let n_labeled = cfg.num_labeled();
    let mut order: Vec<usize> = (0..cfg.n_train).collect();
    order.shuffle(&mut rng);
    let mut labeled_mask = vec![false; cfg.n_train];
    let mut covered = vec![false; classes];
    let mut count = 0;
    for &i in &order {
        let k = train.labels[i];
        if !covered[k] {
            covered[k] = true;
            labeled_mask[i] = true;
            count += 1;
        }
    }
    for &i in &order {
        if count == n_labeled {
            break;
        }
        if !labeled_mask[i] {
            labeled_mask[i] = true;
            count += 1;
        }
    }

    Ok(SynthDataset {
        config: cfg.clone(),
        seed,
        hierarchy: official_hierarchy(cfg),
        leaf_means,
        train,
        labeled_mask,
        test,
    })
}

fn random_direction<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x * scale / norm).collect()
}
