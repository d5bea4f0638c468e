//! Tree-shaped label hierarchies.
//!
//! A hierarchy is read from nested JSON objects (`{"name": .., "children": [..]}`).
//! Concept ids are assigned in depth-first document order, parents before
//! children, so the id of a concept is also its channel index in probability
//! tensors. Leaves sit at level 1 and the root at level `L`; every leaf must be
//! at the same depth.
//!
//! When the document lists several top-level nodes (a JSON array), a virtual
//! root named [`VIRTUAL_ROOT`] is inserted above them.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name given to the root inserted above multiple top-level nodes.
pub const VIRTUAL_ROOT: &str = "Root";

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("malformed hierarchy at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("hierarchy is empty")]
    Empty,
    #[error("hierarchy must contain at least one leaf below the root '{0}'")]
    NoLeaves(String),
    #[error("node #{position} has an empty name")]
    EmptyName { position: usize },
    #[error("node '{name}' has an empty children array (omit the key for leaves)")]
    EmptyChildren { name: String },
    #[error("duplicate concept name '{name}' (node #{position})")]
    DuplicateName { name: String, position: usize },
    #[error("leaf '{name}' is at depth {depth}, expected every leaf at depth {expected}")]
    NonUniformDepth {
        name: String,
        depth: usize,
        expected: usize,
    },
    #[error("concept '{0}' is the root and has no parent")]
    NoParent(String),
    #[error("unknown concept '{0}'")]
    UnknownConcept(String),
    #[error("concept id {0} out of range")]
    IdOutOfRange(usize),
}

/// Index of a concept in its hierarchy (and of its channel in a probability row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

impl ConceptId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One node of the on-disk hierarchy format. Leaves omit `children`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyNode {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<HierarchyNode>>,
}

impl HierarchyNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        HierarchyNode {
            name: name.into(),
            children: None,
        }
    }

    pub fn branch(name: impl Into<String>, children: Vec<HierarchyNode>) -> Self {
        HierarchyNode {
            name: name.into(),
            children: Some(children),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode {
    pub id: ConceptId,
    pub name: String,
}

/// An immutable, validated label hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHierarchy {
    nodes: Vec<ConceptNode>,
    root: ConceptId,
    parent: Vec<Option<ConceptId>>,
    children: Vec<Vec<ConceptId>>,
    level: Vec<usize>,
    num_levels: usize,
    leaf_ids: Vec<ConceptId>,
    by_name: HashMap<String, ConceptId>,
}

impl LabelHierarchy {
    /// Parses the JSON hierarchy format: either a single root object or an
    /// array of top-level objects (which get a virtual root).
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        let trimmed = text.trim_start();
        let top: Vec<HierarchyNode> = if trimmed.starts_with('[') {
            serde_json::from_str(text).map_err(malformed)?
        } else if trimmed.is_empty() {
            return Err(HierarchyError::Empty);
        } else {
            vec![serde_json::from_str(text).map_err(malformed)?]
        };
        Self::from_top_level(top)
    }

    /// Builds a hierarchy from in-memory top-level nodes. More than one node
    /// gets a virtual root.
    pub fn from_top_level(mut top: Vec<HierarchyNode>) -> Result<Self, HierarchyError> {
        let root = match top.len() {
            0 => return Err(HierarchyError::Empty),
            1 => top.pop().unwrap(),
            _ => HierarchyNode::branch(VIRTUAL_ROOT, top),
        };
        Self::from_root(&root)
    }

    pub fn from_root(root: &HierarchyNode) -> Result<Self, HierarchyError> {
        let mut b = Builder::default();
        b.visit(root, None, 0)?;
        let Builder {
            nodes,
            parent,
            children,
            depth,
            by_name,
        } = b;

        if children[0].is_empty() {
            return Err(HierarchyError::NoLeaves(nodes[0].name.clone()));
        }

        let mut leaf_ids = Vec::new();
        let mut expected = None;
        for (i, kids) in children.iter().enumerate() {
            if !kids.is_empty() {
                continue;
            }
            leaf_ids.push(ConceptId(i));
            match expected {
                None => expected = Some(depth[i]),
                Some(e) if e != depth[i] => {
                    return Err(HierarchyError::NonUniformDepth {
                        name: nodes[i].name.clone(),
                        depth: depth[i],
                        expected: e,
                    })
                }
                Some(_) => {}
            }
        }
        let leaf_depth = expected.expect("root has children, so a leaf exists");
        let num_levels = leaf_depth + 1;
        let level = depth.iter().map(|d| num_levels - d).collect();

        Ok(LabelHierarchy {
            nodes,
            root: ConceptId(0),
            parent,
            children,
            level,
            num_levels,
            leaf_ids,
            by_name,
        })
    }

    /// The canonical tree (always a single root object, virtual root included).
    pub fn to_node_tree(&self) -> HierarchyNode {
        fn build(h: &LabelHierarchy, o: ConceptId) -> HierarchyNode {
            let kids = h.children(o);
            let name = h.name(o).to_string();
            if kids.is_empty() {
                HierarchyNode::leaf(name)
            } else {
                HierarchyNode::branch(name, kids.iter().map(|&c| build(h, c)).collect())
            }
        }
        build(self, self.root)
    }

    /// Canonical pretty-printed JSON; `parse(to_json())` reproduces `self`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_node_tree()).expect("tree serializes")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = ConceptId> + '_ {
        (0..self.nodes.len()).map(ConceptId)
    }

    pub fn root(&self) -> ConceptId {
        self.root
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn leaf_ids(&self) -> &[ConceptId] {
        &self.leaf_ids
    }

    /// Number of leaf categories `C`.
    pub fn num_classes(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn name(&self, o: ConceptId) -> &str {
        &self.nodes[o.0].name
    }

    pub fn id_of(&self, name: &str) -> Result<ConceptId, HierarchyError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| HierarchyError::UnknownConcept(name.to_string()))
    }

    pub fn check_id(&self, o: ConceptId) -> Result<ConceptId, HierarchyError> {
        if o.0 < self.nodes.len() {
            Ok(o)
        } else {
            Err(HierarchyError::IdOutOfRange(o.0))
        }
    }

    pub fn parent(&self, o: ConceptId) -> Result<ConceptId, HierarchyError> {
        self.parent[o.0].ok_or_else(|| HierarchyError::NoParent(self.name(o).to_string()))
    }

    pub fn parent_opt(&self, o: ConceptId) -> Option<ConceptId> {
        self.parent[o.0]
    }

    pub fn children(&self, o: ConceptId) -> &[ConceptId] {
        &self.children[o.0]
    }

    /// The other children of `o`'s parent; empty for the root and only children.
    pub fn siblings(&self, o: ConceptId) -> Vec<ConceptId> {
        match self.parent[o.0] {
            None => Vec::new(),
            Some(p) => self.children[p.0].iter().copied().filter(|&s| s != o).collect(),
        }
    }

    pub fn level(&self, o: ConceptId) -> usize {
        self.level[o.0]
    }

    pub fn is_leaf(&self, o: ConceptId) -> bool {
        self.children[o.0].is_empty()
    }

    pub fn is_root(&self, o: ConceptId) -> bool {
        o == self.root
    }

    /// Concepts at level `l` (`O_l`), in id order.
    pub fn level_members(&self, l: usize) -> Vec<ConceptId> {
        self.ids().filter(|&o| self.level[o.0] == l).collect()
    }

    /// Position of a leaf in `leaf_ids` (its class index in `0..C`).
    pub fn class_index(&self, leaf: ConceptId) -> Option<usize> {
        self.leaf_ids.binary_search(&leaf).ok()
    }

    /// The ancestor of `o` (or `o` itself) sitting at level `l`.
    pub fn ancestor_at_level(&self, o: ConceptId, l: usize) -> Option<ConceptId> {
        let mut cur = o;
        while self.level[cur.0] < l {
            cur = self.parent[cur.0]?;
        }
        (self.level[cur.0] == l).then_some(cur)
    }

    /// Concepts on the path from the root down to `o`, root first.
    pub fn path_from_root(&self, o: ConceptId) -> Vec<ConceptId> {
        let mut path = vec![o];
        let mut cur = o;
        while let Some(p) = self.parent[cur.0] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Tab-separated `id  name  level  parent_id` lines (parent `-` for the root).
    pub fn id_table(&self) -> String {
        let mut out = String::new();
        for o in self.ids() {
            let parent = match self.parent[o.0] {
                Some(p) => p.to_string(),
                None => "-".to_string(),
            };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", o, self.name(o), self.level(o), parent));
        }
        out
    }
}

fn malformed(e: serde_json::Error) -> HierarchyError {
    HierarchyError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<ConceptNode>,
    parent: Vec<Option<ConceptId>>,
    children: Vec<Vec<ConceptId>>,
    depth: Vec<usize>,
    by_name: HashMap<String, ConceptId>,
}

impl Builder {
    fn visit(
        &mut self,
        node: &HierarchyNode,
        parent: Option<ConceptId>,
        depth: usize,
    ) -> Result<ConceptId, HierarchyError> {
        let id = ConceptId(self.nodes.len());
        if node.name.trim().is_empty() {
            return Err(HierarchyError::EmptyName { position: id.0 });
        }
        if self.by_name.insert(node.name.clone(), id).is_some() {
            return Err(HierarchyError::DuplicateName {
                name: node.name.clone(),
                position: id.0,
            });
        }
        self.nodes.push(ConceptNode {
            id,
            name: node.name.clone(),
        });
        self.parent.push(parent);
        self.children.push(Vec::new());
        self.depth.push(depth);

        if let Some(kids) = &node.children {
            if kids.is_empty() {
                return Err(HierarchyError::EmptyChildren {
                    name: node.name.clone(),
                });
            }
            for kid in kids {
                let cid = self.visit(kid, Some(id), depth + 1)?;
                self.children[id.0].push(cid);
            }
        }
        Ok(id)
    }
}

/// Hierarchies shipped with the crate.
pub mod builtin {
    use super::LabelHierarchy;

    pub const H3_JSON: &str = include_str!("../data/h3.json");
    pub const PASCAL_VOC_JSON: &str = include_str!("../data/pascal_voc.json");
    pub const CITYSCAPES_JSON: &str = include_str!("../data/cityscapes.json");
    pub const COCO_JSON: &str = include_str!("../data/coco.json");

    /// Root → {Animal → {Cat, Bird}, Vehicle → {Car, Boat}}.
    pub fn h3() -> LabelHierarchy {
        LabelHierarchy::parse(H3_JSON).expect("bundled hierarchy is valid")
    }

    pub fn pascal_voc() -> LabelHierarchy {
        LabelHierarchy::parse(PASCAL_VOC_JSON).expect("bundled hierarchy is valid")
    }

    pub fn cityscapes() -> LabelHierarchy {
        LabelHierarchy::parse(CITYSCAPES_JSON).expect("bundled hierarchy is valid")
    }

    pub fn coco() -> LabelHierarchy {
        LabelHierarchy::parse(COCO_JSON).expect("bundled hierarchy is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(h: &LabelHierarchy, n: &str) -> ConceptId {
        h.id_of(n).unwrap()
    }

    #[test]
    fn h3_shape() {
        let h = builtin::h3();
        assert_eq!(h.len(), 7);
        assert_eq!(h.num_levels(), 3);
        assert_eq!(h.num_classes(), 4);
        let leaves: Vec<&str> = h.leaf_ids().iter().map(|&o| h.name(o)).collect();
        assert_eq!(leaves, ["Cat", "Bird", "Car", "Boat"]);
        let order: Vec<&str> = h.nodes().iter().map(|n| n.name.as_str()).collect();
        assert_eq!(order, ["Root", "Animal", "Cat", "Bird", "Vehicle", "Car", "Boat"]);
        assert_eq!(h.level(id(&h, "Root")), 3);
        assert_eq!(h.level(id(&h, "Vehicle")), 2);
        assert_eq!(h.level(id(&h, "Boat")), 1);
    }

    #[test]
    fn parent_queries() {
        let h = builtin::h3();
        assert_eq!(h.parent(id(&h, "Cat")).unwrap(), id(&h, "Animal"));
        assert_eq!(h.parent(id(&h, "Animal")).unwrap(), id(&h, "Root"));
        assert_eq!(
            h.parent(id(&h, "Root")),
            Err(HierarchyError::NoParent("Root".into()))
        );
    }

    #[test]
    fn sibling_queries() {
        let h = builtin::h3();
        assert_eq!(h.siblings(id(&h, "Animal")), vec![id(&h, "Vehicle")]);
        assert_eq!(h.siblings(id(&h, "Cat")), vec![id(&h, "Bird")]);
        assert!(h.siblings(id(&h, "Root")).is_empty());
    }

    #[test]
    fn virtual_root_inserted() {
        let text = r#"[
            {"name": "Animal", "children": [{"name": "Cat"}, {"name": "Bird"}]},
            {"name": "Vehicle", "children": [{"name": "Car"}, {"name": "Boat"}]}
        ]"#;
        let h = LabelHierarchy::parse(text).unwrap();
        assert_eq!(h.name(h.root()), VIRTUAL_ROOT);
        assert_eq!(h.num_levels(), 3);
        assert_eq!(h, builtin::h3());
    }

    #[test]
    fn single_element_array_is_the_root() {
        let h = LabelHierarchy::parse(r#"[{"name": "A", "children": [{"name": "b"}]}]"#).unwrap();
        assert_eq!(h.name(h.root()), "A");
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn lone_root_rejected() {
        assert_eq!(
            LabelHierarchy::parse(r#"{"name": "Root"}"#),
            Err(HierarchyError::NoLeaves("Root".into()))
        );
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(LabelHierarchy::parse("   "), Err(HierarchyError::Empty));
        assert_eq!(LabelHierarchy::parse("[]"), Err(HierarchyError::Empty));
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = r#"{"name": "R", "children": [
            {"name": "A", "children": [{"name": "x"}]},
            {"name": "B", "children": [{"name": "x"}]}]}"#;
        assert_eq!(
            LabelHierarchy::parse(text),
            Err(HierarchyError::DuplicateName {
                name: "x".into(),
                position: 4
            })
        );
    }

    #[test]
    fn non_uniform_depth_rejected() {
        let text = r#"{"name": "R", "children": [
            {"name": "A", "children": [{"name": "x"}]},
            {"name": "y"}]}"#;
        let err = LabelHierarchy::parse(text).unwrap_err();
        assert!(matches!(err, HierarchyError::NonUniformDepth { ref name, depth: 1, expected: 2 } if name == "y"));
    }

    #[test]
    fn malformed_reports_position() {
        let err = LabelHierarchy::parse("{\n  \"name\": \"R\",\n  \"kids\": []\n}").unwrap_err();
        match err {
            HierarchyError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            LabelHierarchy::parse(r#"{"name": "R", "children": [}"#),
            Err(HierarchyError::Malformed { .. })
        ));
    }

    #[test]
    fn empty_children_and_names_rejected() {
        assert!(matches!(
            LabelHierarchy::parse(r#"{"name": "R", "children": [{"name": "a", "children": []}]}"#),
            Err(HierarchyError::EmptyChildren { .. })
        ));
        assert!(matches!(
            LabelHierarchy::parse(r#"{"name": "R", "children": [{"name": ""}]}"#),
            Err(HierarchyError::EmptyName { position: 1 })
        ));
    }

    #[test]
    fn dataset_hierarchies() {
        let voc = builtin::pascal_voc();
        assert_eq!(voc.num_classes(), 21);
        assert_eq!(voc.num_levels(), 3);
        let city = builtin::cityscapes();
        assert_eq!(city.num_classes(), 19);
        assert_eq!(city.level_members(2).len(), 6);
        let coco = builtin::coco();
        assert_eq!(coco.num_levels(), 4);
        assert_eq!(coco.level_members(3).len(), 2);
        assert_eq!(coco.level_members(2).len(), 12);
        assert_eq!(coco.num_classes(), 80);
        assert_eq!(coco.len(), 95);
    }

    #[test]
    fn round_trip_canonical_json() {
        for h in [
            builtin::h3(),
            builtin::pascal_voc(),
            builtin::cityscapes(),
            builtin::coco(),
        ] {
            let again = LabelHierarchy::parse(&h.to_json()).unwrap();
            assert_eq!(again, h);
            assert_eq!(again.to_json(), h.to_json());
        }
    }

    #[test]
    fn ancestors_and_paths() {
        let h = builtin::h3();
        let cat = id(&h, "Cat");
        assert_eq!(h.ancestor_at_level(cat, 2), Some(id(&h, "Animal")));
        assert_eq!(h.ancestor_at_level(cat, 1), Some(cat));
        assert_eq!(h.ancestor_at_level(id(&h, "Animal"), 1), None);
        assert_eq!(
            h.path_from_root(cat),
            vec![id(&h, "Root"), id(&h, "Animal"), cat]
        );
        assert_eq!(h.class_index(id(&h, "Car")), Some(2));
        assert_eq!(h.class_index(id(&h, "Animal")), None);
    }

    #[test]
    fn id_table_format() {
        let h = builtin::h3();
        let table = h.id_table();
        let first: Vec<&str> = table.lines().take(3).collect();
        assert_eq!(first, ["0\tRoot\t3\t-", "1\tAnimal\t2\t0", "2\tCat\t1\t1"]);
    }
}
