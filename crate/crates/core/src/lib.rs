//! Logic-based diagnosis and revision of hierarchical pseudo labels.
//!
//! A [`hierarchy::LabelHierarchy`] compiles into propositional
//! [`rules::GroundRuleSet`]s. Predictions that violate them are repaired by
//! enumerating minimal diagnoses ([`diagnosis`]) and choosing one according
//! to fuzzy-logic likelihoods ([`fuzzy`]). [`pipeline`] runs this over
//! batches; [`sslsim`] is a small self-training harness built on top.

pub mod diagnosis;
pub mod fuzzy;
pub mod hierarchy;
pub mod pipeline;
pub mod rules;
pub mod sslsim;
pub mod tensor;

pub use diagnosis::{Diagnosis, DiagnosisError, Strategy};
pub use fuzzy::{ConflictGrouping, FuzzyConfig, FuzzyError, ProbBatch};
pub use hierarchy::{ConceptId, HierarchyError, LabelHierarchy};
pub use pipeline::{PipelineError, RevisionConfig, RevisionEngine, RevisionResult, RevisionStats};
pub use rules::{Assignment, GroundRuleSet, RuleFamilies, RuleKind};
pub use tensor::TensorError;
