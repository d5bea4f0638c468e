mod common;

use common::{expected_consistent, gradient_check, naive_consistent, random_assignment, random_tree};
use logicdiag::diagnosis::{brute_force_diagnoses, enumerate_minimal_diagnoses, resolve, select_weighted};
use logicdiag::fuzzy::{
    conflict_profile, diagnosis_likelihood, exists_q, forall_q, normality, truth_composition,
    truth_decomposition, truth_exclusion,
};
use logicdiag::hierarchy::builtin;
use logicdiag::pipeline::row_rng;
use logicdiag::sslsim::{run, Head, SimConfig, SynthConfig};
use logicdiag::{
    Assignment, ConceptId, Diagnosis, FuzzyConfig, GroundRuleSet, LabelHierarchy, ProbBatch,
    RevisionConfig, RevisionEngine, Strategy,
};
use proptest::prelude::*;
use rand::Rng;

fn all_assignments(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..1 << n).map(move |m| (0..n).map(|i| m >> i & 1 == 1).collect())
}

fn random_batch<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> ProbBatch {
    let v = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
    ProbBatch::new(v, rows, cols).unwrap()
}

#[test]
fn consistent_sets_are_empty_or_paths() {
    let mut rng = row_rng(11, 0);
    for _ in 0..60 {
        let h = random_tree(&mut rng, 14);
        let k = GroundRuleSet::compile(&h);
        let mut found: Vec<Vec<ConceptId>> = all_assignments(h.len())
            .filter(|b| k.is_consistent_bits(b))
            .map(|b| Assignment::new(b).true_set())
            .collect();
        found.sort();
        assert_eq!(found.len(), 1 + h.leaf_ids().len());
        assert_eq!(found, expected_consistent(&h));
    }
}

#[test]
fn compiled_rules_match_naive_reading() {
    let mut rng = row_rng(12, 0);
    for _ in 0..40 {
        let h = random_tree(&mut rng, 12);
        let k = GroundRuleSet::compile(&h);
        for bits in all_assignments(h.len()) {
            assert_eq!(k.is_consistent_bits(&bits), naive_consistent(&h, &bits), "{bits:?}");
        }
    }
}

#[test]
fn enumeration_matches_oracle_and_is_sound_and_minimal() {
    let mut rng = row_rng(13, 0);
    for _ in 0..40 {
        let h = random_tree(&mut rng, 12);
        let k = GroundRuleSet::compile(&h);
        for _ in 0..20 {
            let a = random_assignment(&mut rng, h.len());
            let fast = enumerate_minimal_diagnoses(&k, &a, h.len()).unwrap();
            assert_eq!(fast, brute_force_diagnoses(&k, &a).unwrap());
            for d in &fast {
                assert!(resolve(&k, &a, d).is_ok());
                // Dropping any single flip leaves an inconsistency.
                for skip in 0..d.cardinality() {
                    let mut smaller = d.flip_set.clone();
                    smaller.remove(skip);
                    assert!(!k.is_consistent(&a.flipped(&smaller)));
                }
            }
        }
    }
}

#[test]
fn quantifier_bounds_and_monotonicity() {
    let mut rng = row_rng(14, 0);
    for _ in 0..2000 {
        let n = rng.gen_range(1..20);
        let q = rng.gen_range(1..8);
        let phi: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let f = forall_q(&phi, q).unwrap();
        let e = exists_q(&phi, q).unwrap();
        assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&e));
        let mut raised = phi.clone();
        let i = rng.gen_range(0..n);
        raised[i] = rng.gen_range(raised[i]..=1.0);
        assert!(forall_q(&raised, q).unwrap() >= f - 1e-15);
        assert!(exists_q(&raised, q).unwrap() >= e - 1e-15);
        let mean = phi.iter().sum::<f64>() / n as f64;
        assert!((forall_q(&phi, 1).unwrap() - mean).abs() < 1e-12);
        assert!((exists_q(&phi, 1).unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn crisp_batches_have_zero_conflict_exactly_when_consistent() {
    let mut rng = row_rng(15, 0);
    for _ in 0..300 {
        let h = random_tree(&mut rng, 12);
        let k = GroundRuleSet::compile(&h);
        let rows = rng.gen_range(1..5);
        let mut v = Vec::new();
        let mut all_ok = true;
        for _ in 0..rows {
            let a = random_assignment(&mut rng, h.len());
            all_ok &= k.is_consistent(&a);
            v.extend(a.bits().iter().map(|&b| b as u8 as f64));
        }
        let p = ProbBatch::with_epsilon(v, rows, h.len(), 0.0).unwrap();
        let q = rng.gen_range(1..6);
        let prof = conflict_profile(&p, &h, &k, &FuzzyConfig { q, ..FuzzyConfig::default() });
        assert!(prof.c.iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(prof.c.iter().all(|&c| c == 0.0), all_ok);
        for o in h.ids() {
            for g in [
                truth_composition(&p, o, &h, q),
                truth_decomposition(&p, o, &h, q),
                truth_exclusion(&p, o, &h, q),
            ] {
                assert!((0.0..=1.0).contains(&g));
            }
        }
    }
}

#[test]
fn likelihood_partitions_unity() {
    let mut rng = row_rng(16, 0);
    for n in 1..=10 {
        let norm: Vec<f64> = (0..n)
            .map(|_| normality(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let total: f64 = all_assignments(n)
            .map(|b| {
                let flips = (0..n).filter(|&i| b[i]).map(ConceptId).collect();
                diagnosis_likelihood(&Diagnosis::new(flips), &norm)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "n = {n}: {total}");
    }
}

fn revision_case<R: Rng>(rng: &mut R) -> (LabelHierarchy, ProbBatch, RevisionConfig) {
    let h = random_tree(rng, 12);
    let rows = rng.gen_range(1..24);
    let p = random_batch(rng, rows, h.len());
    let cfg = RevisionConfig {
        strategy: Strategy::ALL[rng.gen_range(0..4)],
        seed: rng.gen(),
        ..RevisionConfig::default()
    };
    (h, p, cfg)
}

#[test]
fn revision_is_sound_and_idempotent() {
    let mut rng = row_rng(17, 0);
    for _ in 0..300 {
        let (h, p, cfg) = revision_case(&mut rng);
        let engine = RevisionEngine::new(h, cfg).unwrap();
        let r = engine.revise(&p).unwrap();
        for i in 0..r.rows() {
            if r.leaf_labels[i] != -1 || r.assignment(i).none_true() {
                assert!(engine.rules().is_consistent(&r.assignment(i)));
            }
        }
        let again = ProbBatch::new(r.revised_as_probabilities(), r.rows(), r.width()).unwrap();
        let r2 = engine.revise(&again).unwrap();
        assert_eq!(r2.revised_bits(), r.revised_bits());
        assert_eq!(r2.leaf_labels, r.leaf_labels);
    }
}

#[test]
fn revision_ignores_thread_count() {
    let h = builtin::h3();
    let mut rng = row_rng(18, 0);
    let p = random_batch(&mut rng, 3000, h.len());
    let engine = RevisionEngine::new(h, RevisionConfig::default()).unwrap();
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| engine.revise(&p).unwrap())
    };
    let one = in_pool(1);
    for threads in [2, 4, 8] {
        let many = in_pool(threads);
        assert_eq!(many.revised_bits(), one.revised_bits());
        assert_eq!(many.leaf_labels, one.leaf_labels);
        assert_eq!(many.stats, one.stats);
    }
}

#[test]
fn single_diagnosis_is_strategy_independent() {
    // Root and Cat on, Animal off: within one flip only turning Animal on helps.
    let h = builtin::h3();
    let k = GroundRuleSet::compile(&h);
    let a = Assignment::from_true_set(7, &[ConceptId(0), ConceptId(2)]);
    let ds = enumerate_minimal_diagnoses(&k, &a, 1).unwrap();
    assert_eq!(ds, vec![Diagnosis::new(vec![ConceptId(1)])]);
    let mut rng = row_rng(19, 0);
    for s in Strategy::ALL {
        let sel = select_weighted(&ds, Some(&[0.0]), s, &mut rng).unwrap();
        assert_eq!(sel.index, 0);
        assert!(!sel.fell_back);
    }
}

#[test]
fn zero_weights_fall_back_to_uniform() {
    let ds: Vec<Diagnosis> = (0..3).map(|i| Diagnosis::new(vec![ConceptId(i)])).collect();
    let mut rng = row_rng(20, 0);
    let mut seen = [0usize; 3];
    for _ in 0..3000 {
        let sel = select_weighted(&ds, Some(&[0.0; 3]), Strategy::Sampling, &mut rng).unwrap();
        assert!(sel.fell_back);
        seen[sel.index] += 1;
    }
    assert!(seen.iter().all(|&c| c > 850), "{seen:?}");
}

fn small_sim() -> SimConfig {
    SimConfig {
        data: SynthConfig {
            n_train: 600,
            n_test: 60,
            labeled_fraction: 0.1,
            ..SynthConfig::default()
        },
        iterations: 40,
        warmup: 5,
        labeled_batch: 16,
        unlabeled_batch: 32,
        eval_every: 20,
        ..SimConfig::default()
    }
}

#[test]
fn zero_lambda_matches_no_unlabeled_batch() {
    for hierarchical_head in [true, false] {
        let base = SimConfig {
            hierarchical_head,
            ..small_sim()
        };
        let a = run(&SimConfig { lambda: 0.0, ..base.clone() }).unwrap();
        let b = run(&SimConfig { unlabeled_batch: 0, ..base }).unwrap();
        assert_eq!(a.model.weights, b.model.weights);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = row_rng(21, 0);
    for head in [Head::Sigmoid, Head::Softmax] {
        for _ in 0..10 {
            let err = gradient_check(&mut rng, head);
            assert!(err < 1e-5, "{head:?}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h3_enumeration_agrees_with_oracle(bits in proptest::collection::vec(any::<bool>(), 7)) {
        let h = builtin::h3();
        let k = GroundRuleSet::compile(&h);
        let a = Assignment::new(bits);
        prop_assert_eq!(
            enumerate_minimal_diagnoses(&k, &a, 7).unwrap(),
            brute_force_diagnoses(&k, &a).unwrap()
        );
    }

    #[test]
    fn buffer_entry_point_matches_batch(seed in any::<u64>(), rows in 1usize..40) {
        let h = builtin::h3();
        let mut rng = row_rng(seed, 0);
        let buf: Vec<f32> = (0..rows * 7).map(|_| rng.gen()).collect();
        let engine = RevisionEngine::new(h, RevisionConfig { seed, ..RevisionConfig::default() }).unwrap();
        let a = engine.revise_buffer(&buf, rows).unwrap();
        let b = engine.revise(&ProbBatch::from_f32(&buf, rows, 7).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
