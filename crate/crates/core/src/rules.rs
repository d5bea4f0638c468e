//! Ground propositional rules compiled from a label hierarchy.
//!
//! Three families are grounded per concept `o`:
//!
//! - Composition, `o → parent(o)`, for every non-root concept;
//! - Decomposition, `o → ∨ children(o)`, for every internal concept;
//! - Exclusion, `o → ∧ ¬siblings(o)`, for every concept that has siblings.
//!
//! The same rule set applies to every datapoint, so evaluation works on a
//! single boolean [`Assignment`] at a time.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hierarchy::{ConceptId, LabelHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    Composition,
    Decomposition,
    Exclusion,
}

impl RuleKind {
    pub const ALL: [RuleKind; 3] = [
        RuleKind::Composition,
        RuleKind::Decomposition,
        RuleKind::Exclusion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleKind::Composition => "composition",
            RuleKind::Decomposition => "decomposition",
            RuleKind::Exclusion => "exclusion",
        };
        f.write_str(s)
    }
}

/// Which rule families take part in a rule set (the rule-subset ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFamilies {
    pub composition: bool,
    pub decomposition: bool,
    pub exclusion: bool,
}

impl RuleFamilies {
    pub const ALL: RuleFamilies = RuleFamilies {
        composition: true,
        decomposition: true,
        exclusion: true,
    };

    pub fn only(kind: RuleKind) -> Self {
        let mut f = RuleFamilies {
            composition: false,
            decomposition: false,
            exclusion: false,
        };
        f.set(kind, true);
        f
    }

    pub fn contains(&self, kind: RuleKind) -> bool {
        match kind {
            RuleKind::Composition => self.composition,
            RuleKind::Decomposition => self.decomposition,
            RuleKind::Exclusion => self.exclusion,
        }
    }

    pub fn set(&mut self, kind: RuleKind, on: bool) {
        match kind {
            RuleKind::Composition => self.composition = on,
            RuleKind::Decomposition => self.decomposition = on,
            RuleKind::Exclusion => self.exclusion = on,
        }
    }

    pub fn count(&self) -> usize {
        RuleKind::ALL.iter().filter(|&&k| self.contains(k)).count()
    }
}

impl Default for RuleFamilies {
    fn default() -> Self {
        RuleFamilies::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundRule {
    pub kind: RuleKind,
    pub anchor: ConceptId,
    /// `[parent]`, the children, or the siblings, depending on `kind`.
    pub consequents: Vec<ConceptId>,
    /// `{anchor} ∪ consequents`, sorted ascending.
    pub support: Vec<ConceptId>,
}

impl GroundRule {
    fn new(kind: RuleKind, anchor: ConceptId, consequents: Vec<ConceptId>) -> Self {
        let mut support = consequents.clone();
        support.push(anchor);
        support.sort_unstable();
        GroundRule {
            kind,
            anchor,
            consequents,
            support,
        }
    }

    /// Crisp truth of the rule under one assignment.
    pub fn eval(&self, a: &Assignment) -> bool {
        self.eval_bits(a.bits())
    }

    #[inline]
    pub fn eval_bits(&self, bits: &[bool]) -> bool {
        if !bits[self.anchor.0] {
            return true;
        }
        match self.kind {
            RuleKind::Composition => bits[self.consequents[0].0],
            RuleKind::Decomposition => self.consequents.iter().any(|c| bits[c.0]),
            RuleKind::Exclusion => self.consequents.iter().all(|c| !bits[c.0]),
        }
    }
}

/// Binarized outputs, one truth value per concept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment(Vec<bool>);

impl Assignment {
    pub fn new(bits: Vec<bool>) -> Self {
        Assignment(bits)
    }

    pub fn empty(len: usize) -> Self {
        Assignment(vec![false; len])
    }

    pub fn from_true_set(len: usize, trues: &[ConceptId]) -> Self {
        let mut bits = vec![false; len];
        for o in trues {
            bits[o.0] = true;
        }
        Assignment(bits)
    }

    /// Parses a `0`/`1` string in concept-id order.
    pub fn from_bitstring(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Assignment)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, o: ConceptId) -> bool {
        self.0[o.0]
    }

    pub fn true_set(&self) -> Vec<ConceptId> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(ConceptId(i)))
            .collect()
    }

    pub fn none_true(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// Copy with every concept in `flips` negated.
    pub fn flipped(&self, flips: &[ConceptId]) -> Assignment {
        let mut bits = self.0.clone();
        for o in flips {
            bits[o.0] = !bits[o.0];
        }
        Assignment(bits)
    }

    pub fn to_bitstring(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// The compiled knowledge base for one hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundRuleSet {
    rules: Vec<GroundRule>,
    num_concepts: usize,
    families: RuleFamilies,
    by_anchor: Vec<[Option<usize>; 3]>,
}

impl GroundRuleSet {
    /// All three families.
    pub fn compile(h: &LabelHierarchy) -> Self {
        Self::compile_with(h, RuleFamilies::ALL)
    }

    /// Rules are ordered by family (composition, decomposition, exclusion),
    /// then by ascending anchor id.
    pub fn compile_with(h: &LabelHierarchy, families: RuleFamilies) -> Self {
        let n = h.len();
        let mut rules = Vec::new();
        let mut by_anchor = vec![[None; 3]; n];
        for kind in RuleKind::ALL {
            if !families.contains(kind) {
                continue;
            }
            for o in h.ids() {
                let consequents = match kind {
                    RuleKind::Composition => match h.parent_opt(o) {
                        Some(p) => vec![p],
                        None => continue,
                    },
                    RuleKind::Decomposition => {
                        if h.is_leaf(o) {
                            continue;
                        }
                        h.children(o).to_vec()
                    }
                    RuleKind::Exclusion => {
                        let s = h.siblings(o);
                        if s.is_empty() {
                            continue;
                        }
                        s
                    }
                };
                by_anchor[o.0][kind.index()] = Some(rules.len());
                rules.push(GroundRule::new(kind, o, consequents));
            }
        }
        GroundRuleSet {
            rules,
            num_concepts: n,
            families,
            by_anchor,
        }
    }

    pub fn rules(&self) -> &[GroundRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn families(&self) -> RuleFamilies {
        self.families
    }

    pub fn of_kind(&self, kind: RuleKind) -> impl Iterator<Item = &GroundRule> + '_ {
        self.rules.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: RuleKind) -> usize {
        self.of_kind(kind).count()
    }

    /// The rule of family `kind` anchored at `o`, if it exists.
    pub fn anchored(&self, o: ConceptId, kind: RuleKind) -> Option<&GroundRule> {
        self.by_anchor[o.0][kind.index()].map(|i| &self.rules[i])
    }

    /// Every rule anchored at `o`, in family order.
    pub fn anchored_at(&self, o: ConceptId) -> impl Iterator<Item = &GroundRule> + '_ {
        self.by_anchor[o.0].iter().flatten().map(|&i| &self.rules[i])
    }

    pub fn is_consistent(&self, a: &Assignment) -> bool {
        self.is_consistent_bits(a.bits())
    }

    pub fn is_consistent_bits(&self, bits: &[bool]) -> bool {
        assert_eq!(bits.len(), self.num_concepts, "assignment length");
        self.rules.iter().all(|r| r.eval_bits(bits))
    }

    pub fn violated_rules(&self, a: &Assignment) -> Vec<&GroundRule> {
        assert_eq!(a.len(), self.num_concepts, "assignment length");
        self.rules.iter().filter(|r| !r.eval(a)).collect()
    }
}
