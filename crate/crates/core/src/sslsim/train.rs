//! The self-training loop.
//!
//! Each iteration draws a labeled and an unlabeled mini-batch. Weakly
//! perturbed unlabeled points are predicted, turned into pseudo labels
//! (diagnosis and revision, or confidence thresholding when diagnosis is
//! off), and the strongly perturbed copies are trained towards them:
//! `L = L^l + λ·L^u`, one SGD step per iteration.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::{gen_synthetic, random_hierarchy, SynthConfig, SynthDataset};
use super::metrics::{class_columns, evaluate, Metrics};
use super::model::{loss_and_grad, Head, LossInputs, Losses, ToyModel};
use super::SimError;
use crate::diagnosis::Strategy;
use crate::fuzzy::{FuzzyConfig, ProbBatch};
use crate::hierarchy::LabelHierarchy;
use crate::pipeline::{confidence_threshold_baseline, row_rng, RevisionConfig, RevisionEngine, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchySource {
    Official,
    /// Same shape, leaves dealt into superclasses at random.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub data: SynthConfig,
    pub lambda: f64,
    pub tau: f64,
    pub q: u32,
    pub strategy: Strategy,
    pub threshold: f64,
    /// Sigmoid-per-concept head; `false` is the flat softmax baseline,
    /// which always uses thresholding.
    pub hierarchical_head: bool,
    /// Revise pseudo labels by diagnosis; `false` thresholds leaf confidence.
    pub diagnosis: bool,
    /// Score diagnoses by likelihood; `false` picks uniformly.
    pub fuzzy_likelihood: bool,
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub lr: f64,
    pub iterations: usize,
    /// Leading iterations trained on labeled data only.
    pub warmup: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub init_scale: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub hierarchy: HierarchySource,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            data: SynthConfig::default(),
            lambda: 5.0,
            tau: 0.95,
            q: 5,
            strategy: Strategy::Sampling,
            threshold: 0.5,
            hierarchical_head: true,
            diagnosis: true,
            fuzzy_likelihood: true,
            weak_sigma: 0.1,
            strong_sigma: 0.5,
            lr: 0.5,
            iterations: 300,
            warmup: 100,
            labeled_batch: 64,
            unlabeled_batch: 448,
            init_scale: 0.01,
            eval_every: 100,
            seed: 0,
            hierarchy: HierarchySource::Official,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.data.validate()?;
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda {} must be finite and ≥ 0", self.lambda));
        }
        if !(self.weak_sigma >= 0.0 && self.strong_sigma > self.weak_sigma && self.strong_sigma.is_finite()) {
            return bad(format!(
                "need strong_sigma > weak_sigma ≥ 0, got {} and {}",
                self.strong_sigma, self.weak_sigma
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.labeled_batch == 0 {
            return bad("labeled_batch must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be finite and ≥ 0".into());
        }
        self.revision_config().validate()?;
        Ok(())
    }

    /// The revision settings this run hands to the pipeline.
    pub fn revision_config(&self) -> RevisionConfig {
        RevisionConfig {
            binarize_threshold: self.threshold,
            strategy: if self.fuzzy_likelihood {
                self.strategy
            } else {
                Strategy::Uniform
            },
            fuzzy: FuzzyConfig {
                q: self.q,
                ..FuzzyConfig::default()
            },
            seed: self.seed,
            tau: self.tau,
            ..RevisionConfig::default()
        }
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = SimConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|m| SimError::Config(format!("line {}: {m}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got '{v}'")),
            }
        }
        match key {
            "superclasses" => self.data.superclasses = num(key, value)?,
            "leaves_per_superclass" => self.data.leaves_per_superclass = num(key, value)?,
            "dim" => self.data.dim = num(key, value)?,
            "n_train" => self.data.n_train = num(key, value)?,
            "n_test" => self.data.n_test = num(key, value)?,
            "labeled_fraction" => self.data.labeled_fraction = num(key, value)?,
            "super_sep" => self.data.super_sep = num(key, value)?,
            "leaf_sep" => self.data.leaf_sep = num(key, value)?,
            "noise" => self.data.noise = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "threshold" => self.threshold = num(key, value)?,
            "hierarchical_head" => self.hierarchical_head = flag(key, value)?,
            "diagnosis" => self.diagnosis = flag(key, value)?,
            "fuzzy_likelihood" => self.fuzzy_likelihood = flag(key, value)?,
            "weak_sigma" => self.weak_sigma = num(key, value)?,
            "strong_sigma" => self.strong_sigma = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "labeled_batch" => self.labeled_batch = num(key, value)?,
            "unlabeled_batch" => self.unlabeled_batch = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "hierarchy" => {
                self.hierarchy = match value {
                    "official" => HierarchySource::Official,
                    "random" => HierarchySource::Random,
                    _ => return Err(format!("hierarchy: expected official or random, got '{value}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// The config as `key = value` lines that [`SimConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("superclasses", d.superclasses.to_string());
        put("leaves_per_superclass", d.leaves_per_superclass.to_string());
        put("dim", d.dim.to_string());
        put("n_train", d.n_train.to_string());
        put("n_test", d.n_test.to_string());
        put("labeled_fraction", d.labeled_fraction.to_string());
        put("super_sep", d.super_sep.to_string());
        put("leaf_sep", d.leaf_sep.to_string());
        put("noise", d.noise.to_string());
        put("lambda", self.lambda.to_string());
        put("tau", self.tau.to_string());
        put("q", self.q.to_string());
        put("strategy", self.strategy.name().to_string());
        put("threshold", self.threshold.to_string());
        put("hierarchical_head", self.hierarchical_head.to_string());
        put("diagnosis", self.diagnosis.to_string());
        put("fuzzy_likelihood", self.fuzzy_likelihood.to_string());
        put("weak_sigma", self.weak_sigma.to_string());
        put("strong_sigma", self.strong_sigma.to_string());
        put("lr", self.lr.to_string());
        put("iterations", self.iterations.to_string());
        put("warmup", self.warmup.to_string());
        put("labeled_batch", self.labeled_batch.to_string());
        put("unlabeled_batch", self.unlabeled_batch.to_string());
        put("init_scale", self.init_scale.to_string());
        put("eval_every", self.eval_every.to_string());
        put("seed", self.seed.to_string());
        put(
            "hierarchy",
            match self.hierarchy {
                HierarchySource::Official => "official",
                HierarchySource::Random => "random",
            }
            .to_string(),
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossHistory {
    pub supervised: Vec<f64>,
    pub unsupervised: Vec<f64>,
    pub total: Vec<f64>,
    /// Fraction of unlabeled rows that received a pseudo label.
    pub mask_rate: Vec<f64>,
    /// Leaf accuracy of the pseudo labels that were kept.
    pub pseudo_accuracy: Vec<Option<f64>>,
}

impl LossHistory {
    fn push(&mut self, l: Losses, mask_rate: f64, pseudo_accuracy: Option<f64>) {
        self.supervised.push(l.supervised);
        self.unsupervised.push(l.unsupervised);
        self.total.push(l.total);
        self.mask_rate.push(mask_rate);
        self.pseudo_accuracy.push(pseudo_accuracy);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: SimConfig,
    /// The hierarchy the model was trained with.
    pub hierarchy: String,
    pub losses: LossHistory,
    /// Metrics at iteration 0 and every `eval_every` iterations after.
    pub history: Vec<Checkpoint>,
    pub final_metrics: Metrics,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Everything a run needs besides the config, built once.
pub struct Setup {
    pub dataset: SynthDataset,
    pub train_hierarchy: LabelHierarchy,
    pub model: ToyModel,
}

pub fn setup(cfg: &SimConfig) -> Result<Setup, SimError> {
    cfg.validate()?;
    let dataset = gen_synthetic(&cfg.data, cfg.seed)?;
    let train_hierarchy = match cfg.hierarchy {
        HierarchySource::Official => dataset.hierarchy.clone(),
        HierarchySource::Random => random_hierarchy(&cfg.data, cfg.seed),
    };
    let (head, outputs) = if cfg.hierarchical_head {
        (Head::Sigmoid, train_hierarchy.len())
    } else {
        (Head::Softmax, dataset.num_classes())
    };
    let model = ToyModel::new(
        dataset.dim(),
        outputs,
        head,
        cfg.init_scale,
        &mut row_rng(cfg.seed, 1),
    );
    Ok(Setup {
        dataset,
        train_hierarchy,
        model,
    })
}

/// A finished run: its report plus the trained model and its data.
pub struct Trained {
    pub report: TrainReport,
    pub model: ToyModel,
    pub dataset: SynthDataset,
    pub train_hierarchy: LabelHierarchy,
}

pub fn train(cfg: &SimConfig) -> Result<TrainReport, SimError> {
    Ok(run(cfg)?.report)
}

pub fn run(cfg: &SimConfig) -> Result<Trained, SimError> {
    let Setup {
        dataset: ds,
        train_hierarchy: th,
        mut model,
    } = setup(cfg)?;
    let d = ds.dim();
    let k = model.outputs;
    let classes = ds.num_classes();
    let rev_cfg = cfg.revision_config();
    let engine = RevisionEngine::new(th.clone(), rev_cfg.clone())?;
    let columns = class_columns(&model, &th, classes);
    let targets: Vec<Vec<f64>> = (0..classes)
        .map(|c| match model.head {
            Head::Sigmoid => SynthDataset::path_target(&th, c),
            Head::Softmax => (0..classes).map(|j| (j == c) as u8 as f64).collect(),
        })
        .collect();
    let use_diagnosis = cfg.diagnosis && model.head == Head::Sigmoid;

    let labeled = ds.labeled_indices();
    let unlabeled = ds.unlabeled_indices();
    let n_u = if unlabeled.is_empty() { 0 } else { cfg.unlabeled_batch };
    // Independent streams: labeled sampling never sees unlabeled draws.
    let mut pick_l = row_rng(cfg.seed, 2);
    let mut noise_l = row_rng(cfg.seed, 3);
    let mut pick_u = row_rng(cfg.seed, 4);
    let mut noise_u = row_rng(cfg.seed, 5);

    let eval = |m: &ToyModel| evaluate(m, &ds, &th, Some(&rev_cfg));
    let mut history = vec![Checkpoint {
        iteration: 0,
        metrics: eval(&model)?,
    }];
    let mut losses = LossHistory::default();

    let mut x_l = Vec::with_capacity(cfg.labeled_batch * d);
    let mut y_l = Vec::with_capacity(cfg.labeled_batch * k);
    let mut y_u = vec![0.0; n_u * k];
    let mut mask = vec![false; n_u];
    for it in 0..cfg.iterations {
        x_l.clear();
        y_l.clear();
        for _ in 0..cfg.labeled_batch {
            let i = labeled[pick_l.gen_range(0..labeled.len())];
            perturb(&ds.train.features[i * d..(i + 1) * d], cfg.weak_sigma, &mut noise_l, &mut x_l);
            y_l.extend_from_slice(&targets[ds.train.labels[i]]);
        }

        let idx_u: Vec<usize> = (0..n_u).map(|_| unlabeled[pick_u.gen_range(0..unlabeled.len())]).collect();
        let mut x_weak = Vec::with_capacity(n_u * d);
        let mut x_strong = Vec::with_capacity(n_u * d);
        for &i in &idx_u {
            let x = &ds.train.features[i * d..(i + 1) * d];
            perturb(x, cfg.weak_sigma, &mut noise_u, &mut x_weak);
            perturb(x, cfg.strong_sigma, &mut noise_u, &mut x_strong);
        }
        let mut pseudo_class = vec![IGNORE; n_u];
        if n_u > 0 {
            let p_weak = model.predict_proba(&x_weak);
            if use_diagnosis {
                // Labeled predictions join the batch so conflict degrees see
                // them too; only the unlabeled rows become targets.
                let n_l = cfg.labeled_batch;
                let mut p_all = model.predict_proba(&x_l);
                p_all.extend_from_slice(&p_weak);
                let seed = cfg.seed ^ (it as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let r = engine.revise_seeded(&ProbBatch::new(p_all, n_l + n_u, k)?, seed)?;
                for i in 0..n_u {
                    let label = r.leaf_labels[n_l + i];
                    mask[i] = label != IGNORE;
                    for (t, &b) in y_u[i * k..(i + 1) * k].iter_mut().zip(r.row(n_l + i)) {
                        *t = b as u8 as f64;
                    }
                    if mask[i] {
                        let leaf = label as usize;
                        pseudo_class[i] = columns.iter().position(|&c| c == leaf).unwrap() as i32;
                    }
                }
            } else {
                let leaf_p = leaf_simplex(&p_weak, k, &columns);
                let labels = confidence_threshold_baseline(&leaf_p, classes, cfg.tau)?;
                for (i, &c) in labels.iter().enumerate() {
                    mask[i] = c != IGNORE;
                    let row = &mut y_u[i * k..(i + 1) * k];
                    if mask[i] {
                        row.copy_from_slice(&targets[c as usize]);
                    } else {
                        row.fill(0.0);
                    }
                }
                pseudo_class = labels;
            }
        }

        let inputs = LossInputs {
            x_l: &x_l,
            y_l: &y_l,
            x_u: &x_strong,
            y_u: &y_u,
            mask_u: &mask,
            lambda: if it < cfg.warmup { 0.0 } else { cfg.lambda },
        };
        let (l, grad) = loss_and_grad(&model, &inputs);
        if !l.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SimError::Divergence {
                iteration: it,
                supervised: l.supervised,
                unsupervised: l.unsupervised,
            });
        }
        model.sgd_step(&grad, cfg.lr);

        let kept = mask.iter().filter(|&&m| m).count();
        let correct = idx_u
            .iter()
            .zip(&pseudo_class)
            .filter(|(&i, &c)| c != IGNORE && ds.train.labels[i] == c as usize)
            .count();
        losses.push(
            l,
            if n_u == 0 { 0.0 } else { kept as f64 / n_u as f64 },
            (kept > 0).then(|| correct as f64 / kept as f64),
        );

        if (it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            history.push(Checkpoint {
                iteration: it + 1,
                metrics: eval(&model)?,
            });
        }
    }

    let final_metrics = history.last().expect("initial checkpoint").metrics.clone();
    let report = TrainReport {
        config: cfg.clone(),
        hierarchy: th.to_json(),
        losses,
        history,
        final_metrics,
    };
    Ok(Trained {
        report,
        model,
        dataset: ds,
        train_hierarchy: th,
    })
}

fn perturb(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.extend(x.iter().map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal)));
}

/// Leaf outputs renormalised to sum to one per row.
fn leaf_simplex(probs: &[f64], outputs: usize, columns: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len() / outputs * columns.len());
    for row in probs.chunks_exact(outputs) {
        let start = out.len();
        out.extend(columns.iter().map(|&c| row[c]));
        let s: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= s);
    }
    out
}
