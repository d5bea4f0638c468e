#![allow(dead_code)]

use logicdiag::hierarchy::{HierarchyNode, LabelHierarchy};
use logicdiag::sslsim::model::{loss_and_grad, losses, LossInputs};
use logicdiag::sslsim::{Head, ToyModel};
use logicdiag::{Assignment, ConceptId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A random uniform-depth tree with 2..=4 levels and at most `max_nodes`
/// nodes. Internal nodes get 1..=3 children.
pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> LabelHierarchy {
    loop {
        let levels = rng.gen_range(2..=4);
        let mut counter = 0;
        let root = grow(rng, levels, &mut counter);
        if counter <= max_nodes {
            return LabelHierarchy::from_root(&root).expect("generated tree is valid");
        }
    }
}

fn grow<R: Rng>(rng: &mut R, levels: usize, counter: &mut usize) -> HierarchyNode {
    let name = format!("n{}", *counter);
    *counter += 1;
    if levels == 1 {
        return HierarchyNode::leaf(name);
    }
    let k = rng.gen_range(1..=3);
    HierarchyNode::branch(name, (0..k).map(|_| grow(rng, levels - 1, counter)).collect())
}

pub fn random_assignment<R: Rng>(rng: &mut R, n: usize) -> Assignment {
    let density = rng.gen_range(0.1..0.9);
    Assignment::new((0..n).map(|_| rng.gen_bool(density)).collect())
}

/// Direct reading of the hierarchy axioms, independent of the compiled rules:
/// a true concept needs a true parent, a true child when it has any, and no
/// true sibling.
pub fn naive_consistent(h: &LabelHierarchy, bits: &[bool]) -> bool {
    h.ids().all(|o| {
        if !bits[o.0] {
            return true;
        }
        let up = h.parent_opt(o).is_none_or(|p| bits[p.0]);
        let down = h.children(o).is_empty() || h.children(o).iter().any(|c| bits[c.0]);
        let apart = h.siblings(o).iter().all(|s| !bits[s.0]);
        up && down && apart
    })
}

/// Every set that is empty or a root-to-leaf path.
pub fn expected_consistent(h: &LabelHierarchy) -> Vec<Vec<ConceptId>> {
    let mut out = vec![Vec::new()];
    for &leaf in h.leaf_ids() {
        let mut p = h.path_from_root(leaf);
        p.sort();
        out.push(p);
    }
    out.sort();
    out
}

/// Norm-wise relative error between analytic and central-difference
/// gradients on one random small instance.
pub fn gradient_check(rng: &mut ChaCha8Rng, head: Head) -> f64 {
    let (d, k) = (rng.gen_range(1..5), rng.gen_range(2..6));
    let (n_l, n_u) = (rng.gen_range(1..6), rng.gen_range(0..6));
    let model = ToyModel::new(d, k, head, 1.0, rng);
    let x_l: Vec<f64> = (0..n_l * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x_u: Vec<f64> = (0..n_u * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let target = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        match head {
            Head::Sigmoid => (0..k).map(|_| rng.gen_bool(0.5) as u8 as f64).collect(),
            Head::Softmax => {
                let c = rng.gen_range(0..k);
                (0..k).map(|j| (j == c) as u8 as f64).collect()
            }
        }
    };
    let y_l: Vec<f64> = (0..n_l).flat_map(|_| target(rng)).collect();
    let y_u: Vec<f64> = (0..n_u).flat_map(|_| target(rng)).collect();
    let mask_u: Vec<bool> = (0..n_u).map(|_| rng.gen_bool(0.7)).collect();
    let inp = LossInputs {
        x_l: &x_l,
        y_l: &y_l,
        x_u: &x_u,
        y_u: &y_u,
        mask_u: &mask_u,
        lambda: rng.gen_range(0.5..5.0),
    };
    let (_, analytic) = loss_and_grad(&model, &inp);
    let eps = 1e-5;
    let numeric: Vec<f64> = (0..model.weights.len())
        .map(|w| {
            let mut plus = model.clone();
            plus.weights[w] += eps;
            let mut minus = model.clone();
            minus.weights[w] -= eps;
            (losses(&plus, &inp).total - losses(&minus, &inp).total) / (2.0 * eps)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}
