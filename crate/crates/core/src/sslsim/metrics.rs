//! Confusion-matrix metrics and pseudo-label quality.

use serde::{Deserialize, Serialize};

use super::data::SynthDataset;
use super::model::{Head, ToyModel};
use super::SimError;
use crate::fuzzy::ProbBatch;
use crate::hierarchy::LabelHierarchy;
use crate::pipeline::{RevisionConfig, RevisionEngine, IGNORE};

/// `classes × classes` counts, rows = truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Self {
        let mut c = Confusion::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            c.add(t, p, 1);
        }
        c
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.classes + pred] += n;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merges classes through `map` (class → coarse class).
    pub fn project(&self, map: &[usize], coarse: usize) -> Confusion {
        let mut c = Confusion::new(coarse);
        for t in 0..self.classes {
            for p in 0..self.classes {
                c.add(map[t], map[p], self.get(t, p));
            }
        }
        c
    }

    pub fn accuracy(&self) -> f64 {
        let hits: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        hits as f64 / self.total().max(1) as f64
    }

    /// IoU per class in percent; `None` when the class occurs in neither
    /// truth nor prediction.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
                let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| 100.0 * tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean over defined classes (0 if none are defined).
    pub fn miou(&self) -> f64 {
        let defined: Vec<f64> = self.iou().into_iter().flatten().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

/// Quality of pseudo labels on the unlabeled pool, before and after
/// revision, against ground truth.
///
/// The leaf figures score the category label read off each row (its single
/// true leaf, `-1` otherwise): precision over emitted labels, recall over all
/// rows. The concept figures score every binarized concept bit against the
/// full-path truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoQuality {
    pub leaf_precision_before: f64,
    pub leaf_precision_after: f64,
    pub leaf_recall_before: f64,
    pub leaf_recall_after: f64,
    pub concept_precision_before: f64,
    pub concept_precision_after: f64,
    pub concept_recall_before: f64,
    pub concept_recall_after: f64,
    pub rows: usize,
    /// Rows whose leaf label is `-1` after revision.
    pub ignored_rows: usize,
    pub revised_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Leaf IoU in percent, by class index; `None` = undefined.
    pub per_leaf_iou: Vec<Option<f64>>,
    /// Classes excluded from the leaf mean because their IoU is undefined.
    pub undefined_leaf_classes: Vec<usize>,
    /// `miou_per_level[l - 1]` is mIoU at level `l`, in percent.
    pub miou_per_level: Vec<f64>,
    pub accuracy: f64,
    pub pseudo: Option<PseudoQuality>,
}

impl Metrics {
    pub fn miou1(&self) -> f64 {
        self.miou_per_level[0]
    }
}

/// `class → index among level-l concepts` for every level of `h`, where
/// class `k` is the `k`-th leaf.
pub fn level_maps(h: &LabelHierarchy) -> Vec<(Vec<usize>, usize)> {
    (1..=h.num_levels())
        .map(|l| {
            let members = h.level_members(l);
            let map = h
                .leaf_ids()
                .iter()
                .map(|&leaf| {
                    let a = h.ancestor_at_level(leaf, l).expect("uniform depth");
                    members.iter().position(|&m| m == a).expect("ancestor is a member")
                })
                .collect();
            (map, members.len())
        })
        .collect()
}

/// Leaf-level confusion plus its projection to every level of `h`.
pub fn metrics_from_predictions(
    h: &LabelHierarchy,
    truth: &[usize],
    pred: &[usize],
) -> Metrics {
    let leaf = Confusion::from_labels(truth, pred, h.num_classes());
    let per_leaf_iou = leaf.iou();
    let undefined_leaf_classes = (0..per_leaf_iou.len()).filter(|&k| per_leaf_iou[k].is_none()).collect();
    let miou_per_level = level_maps(h)
        .into_iter()
        .map(|(map, n)| leaf.project(&map, n).miou())
        .collect();
    Metrics {
        per_leaf_iou,
        undefined_leaf_classes,
        miou_per_level,
        accuracy: 100.0 * leaf.accuracy(),
        pseudo: None,
    }
}

/// Column of each class in the model's output.
pub fn class_columns(model: &ToyModel, train_h: &LabelHierarchy, classes: usize) -> Vec<usize> {
    match model.head {
        Head::Softmax => (0..classes).collect(),
        Head::Sigmoid => (0..classes)
            .map(|k| SynthDataset::class_concept(train_h, k).0)
            .collect(),
    }
}

/// Leaf decision: argmax over leaf outputs; ancestral outputs are ignored.
pub fn predict_classes(probs: &[f64], outputs: usize, columns: &[usize]) -> Vec<usize> {
    probs
        .chunks_exact(outputs)
        .map(|row| {
            let mut best = 0;
            for (k, &c) in columns.iter().enumerate() {
                if row[c] > row[columns[best]] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Test-set mIoU at every level (projected through the dataset's own
/// hierarchy) and, for the sigmoid head, pseudo-label quality on the
/// unlabeled pool when `revision` is given.
pub fn evaluate(
    model: &ToyModel,
    ds: &SynthDataset,
    train_h: &LabelHierarchy,
    revision: Option<&RevisionConfig>,
) -> Result<Metrics, SimError> {
    let columns = class_columns(model, train_h, ds.num_classes());
    let probs = model.predict_proba(&ds.test.features);
    let pred = predict_classes(&probs, model.outputs, &columns);
    let mut m = metrics_from_predictions(&ds.hierarchy, &ds.test.labels, &pred);
    if let (Head::Sigmoid, Some(cfg)) = (model.head, revision) {
        m.pseudo = Some(pseudo_quality(model, ds, train_h, cfg)?);
    }
    Ok(m)
}

pub fn pseudo_quality(
    model: &ToyModel,
    ds: &SynthDataset,
    train_h: &LabelHierarchy,
    cfg: &RevisionConfig,
) -> Result<PseudoQuality, SimError> {
    let d = ds.dim();
    let k = train_h.len();
    let idx = ds.unlabeled_indices();
    if idx.is_empty() {
        return Ok(PseudoQuality::default());
    }
    let mut x = Vec::with_capacity(idx.len() * d);
    for &i in &idx {
        x.extend_from_slice(&ds.train.features[i * d..(i + 1) * d]);
    }
    let probs = model.predict_proba(&x);
    let engine = RevisionEngine::new(train_h.clone(), cfg.clone())?;
    let result = engine.revise(&ProbBatch::new(probs.clone(), idx.len(), k)?)?;

    let targets: Vec<Vec<f64>> = (0..ds.num_classes())
        .map(|c| SynthDataset::path_target(train_h, c))
        .collect();
    let (mut before, mut after) = ([0u64; 3], [0u64; 3]);
    let (mut leaf_before, mut leaf_after) = ([0u64; 2], [0u64; 2]);
    let mut bits = vec![false; k];
    for (r, &i) in idx.iter().enumerate() {
        let class = ds.train.labels[i];
        let truth = &targets[class];
        for o in 0..k {
            let t = truth[o] == 1.0;
            bits[o] = probs[r * k + o] >= cfg.binarize_threshold;
            tally(&mut before, bits[o], t);
            tally(&mut after, result.row(r)[o], t);
        }
        let want = SynthDataset::class_concept(train_h, class).0 as i32;
        for (acc, label) in [
            (&mut leaf_before, engine.leaf_label(&bits)),
            (&mut leaf_after, result.leaf_labels[r]),
        ] {
            if label != IGNORE {
                acc[0] += 1;
                acc[1] += (label == want) as u64;
            }
        }
    }
    let ratio = |hit: u64, of: u64| if of == 0 { 1.0 } else { hit as f64 / of as f64 };
    let rows = idx.len() as u64;
    Ok(PseudoQuality {
        leaf_precision_before: ratio(leaf_before[1], leaf_before[0]),
        leaf_precision_after: ratio(leaf_after[1], leaf_after[0]),
        leaf_recall_before: ratio(leaf_before[1], rows),
        leaf_recall_after: ratio(leaf_after[1], rows),
        concept_precision_before: ratio(before[0], before[0] + before[1]),
        concept_precision_after: ratio(after[0], after[0] + after[1]),
        concept_recall_before: ratio(before[0], before[0] + before[2]),
        concept_recall_after: ratio(after[0], after[0] + after[2]),
        rows: idx.len(),
        ignored_rows: result.stats.ignored,
        revised_rows: result.stats.revised,
    })
}

/// `[tp, fp, fn]`
fn tally(acc: &mut [u64; 3], pred: bool, truth: bool) {
    match (pred, truth) {
        (true, true) => acc[0] += 1,
        (true, false) => acc[1] += 1,
        (false, true) => acc[2] += 1,
        _ => {}
    }
}
