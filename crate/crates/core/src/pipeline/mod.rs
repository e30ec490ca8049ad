//! Pipeline forests.
//!
//! A pipeline is an ordered list of trees. Each tree is rooted by a `module`
//! manager; internal nodes are managers and leaves are passes. Structure is
//! checked against production rules R1–R9 (see [`grammar`]).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::registry::PassLevel;

pub mod grammar;
pub mod random;
pub mod skeleton;

pub use grammar::{parse_pipeline, validate, ParseError, Rule, ValidationReport, Violation, ViolationKind};
pub use skeleton::{build_skeleton_variant, minimal_wrap, nest_under, wrap_block, SkeletonError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PipelineNode {
    Manager {
        level: PassLevel,
        children: Vec<PipelineNode>,
    },
    Leaf {
        pass: String,
        level: PassLevel,
    },
}

impl PipelineNode {
    pub fn leaf(pass: impl Into<String>, level: PassLevel) -> Self {
        PipelineNode::Leaf {
            pass: pass.into(),
            level,
        }
    }

    pub fn manager(level: PassLevel, children: Vec<PipelineNode>) -> Self {
        PipelineNode::Manager { level, children }
    }

    pub fn level(&self) -> PassLevel {
        match self {
            PipelineNode::Manager { level, .. } | PipelineNode::Leaf { level, .. } => *level,
        }
    }

    pub fn is_manager(&self) -> bool {
        matches!(self, PipelineNode::Manager { .. })
    }

    pub fn children(&self) -> &[PipelineNode] {
        match self {
            PipelineNode::Manager { children, .. } => children,
            PipelineNode::Leaf { .. } => &[],
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            PipelineNode::Leaf { .. } => 1,
            PipelineNode::Manager { children, .. } => children.iter().map(Self::leaf_count).sum(),
        }
    }

    fn collect_leaves(&self, out: &mut Vec<TypedPass>) {
        match self {
            PipelineNode::Leaf { pass, level } => out.push(TypedPass::new(pass.clone(), *level)),
            PipelineNode::Manager { children, .. } => {
                children.iter().for_each(|c| c.collect_leaves(out))
            }
        }
    }

    fn write_to(&self, out: &mut String) {
        match self {
            PipelineNode::Leaf { pass, .. } => out.push_str(pass),
            PipelineNode::Manager { level, children } => {
                out.push_str(level.keyword());
                out.push('(');
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    child.write_to(out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for PipelineNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_to(&mut s);
        f.write_str(&s)
    }
}

/// A pass name together with the level it runs at in a given pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedPass {
    pub name: String,
    pub level: PassLevel,
}

impl TypedPass {
    pub fn new(name: impl Into<String>, level: PassLevel) -> Self {
        TypedPass {
            name: name.into(),
            level,
        }
    }
}

/// Index path to a node: tree index, then child indices.
pub type NodePath = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PipelineForest {
    pub trees: Vec<PipelineNode>,
}

impl PipelineForest {
    pub fn new(trees: Vec<PipelineNode>) -> Self {
        PipelineForest { trees }
    }

    /// Left-to-right depth-first leaf order.
    pub fn leaf_sequence(&self) -> Vec<TypedPass> {
        let mut out = Vec::new();
        self.trees.iter().for_each(|t| t.collect_leaves(&mut out));
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(PipelineNode::leaf_count).sum()
    }

    /// Canonical pipeline string: no whitespace, comma separated.
    pub fn to_pipeline_string(&self) -> String {
        let mut out = String::new();
        for (i, tree) in self.trees.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            tree.write_to(&mut out);
        }
        out
    }

    pub fn node(&self, path: &[usize]) -> Option<&PipelineNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.trees.get(*first)?;
        for &i in rest {
            node = node.children().get(i)?;
        }
        Some(node)
    }

    pub fn node_mut(&mut self, path: &[usize]) -> Option<&mut PipelineNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.trees.get_mut(*first)?;
        for &i in rest {
            node = match node {
                PipelineNode::Manager { children, .. } => children.get_mut(i)?,
                PipelineNode::Leaf { .. } => return None,
            };
        }
        Some(node)
    }

    /// Mutable access to the child list a path points into: the tree list
    /// for a one-element path, otherwise the parent manager's children.
    fn sibling_list_mut(&mut self, path: &[usize]) -> Option<&mut Vec<PipelineNode>> {
        match path.len() {
            0 => None,
            1 => Some(&mut self.trees),
            n => match self.node_mut(&path[..n - 1])? {
                PipelineNode::Manager { children, .. } => Some(children),
                PipelineNode::Leaf { .. } => None,
            },
        }
    }

    /// Inserts `node` so that it ends up at `path`, shifting later siblings.
    pub fn insert_at(&mut self, path: &[usize], node: PipelineNode) -> bool {
        let idx = match path.last() {
            Some(i) => *i,
            None => return false,
        };
        match self.sibling_list_mut(path) {
            Some(list) if idx <= list.len() => {
                list.insert(idx, node);
                true
            }
            _ => false,
        }
    }

    /// Replaces the node at `path`, returning the old one.
    pub fn replace_at(&mut self, path: &[usize], node: PipelineNode) -> Option<PipelineNode> {
        let slot = self.node_mut(path)?;
        Some(std::mem::replace(slot, node))
    }

    /// Removes the node at `path` and then any manager (or tree) left empty.
    pub fn remove_pruning(&mut self, path: &[usize]) -> Option<PipelineNode> {
        let idx = *path.last()?;
        let list = self.sibling_list_mut(path)?;
        if idx >= list.len() {
            return None;
        }
        let removed = list.remove(idx);
        let mut parent: Vec<usize> = path[..path.len() - 1].to_vec();
        while !parent.is_empty() {
            let empty = matches!(
                self.node(&parent),
                Some(PipelineNode::Manager { children, .. }) if children.is_empty()
            );
            if !empty {
                break;
            }
            let i = *parent.last().unwrap();
            self.sibling_list_mut(&parent)?.remove(i);
            parent.pop();
        }
        Some(removed)
    }

    /// Paths of all leaves in leaf-sequence order.
    pub fn leaf_paths(&self) -> Vec<NodePath> {
        let mut out = Vec::new();
        self.walk(&mut |path, node| {
            if !node.is_manager() {
                out.push(path.to_vec());
            }
        });
        out
    }

    /// Paths of all managers in pre-order, roots included.
    pub fn manager_paths(&self) -> Vec<NodePath> {
        let mut out = Vec::new();
        self.walk(&mut |path, node| {
            if node.is_manager() {
                out.push(path.to_vec());
            }
        });
        out
    }

    /// Pre-order traversal with paths.
    pub fn walk(&self, visit: &mut dyn FnMut(&[usize], &PipelineNode)) {
        fn go(
            node: &PipelineNode,
            path: &mut Vec<usize>,
            visit: &mut dyn FnMut(&[usize], &PipelineNode),
        ) {
            visit(path, node);
            for (i, child) in node.children().iter().enumerate() {
                path.push(i);
                go(child, path, visit);
                path.pop();
            }
        }
        let mut path = Vec::new();
        for (i, tree) in self.trees.iter().enumerate() {
            path.push(i);
            go(tree, &mut path, visit);
            path.pop();
        }
    }

    pub fn structural_metrics(&self) -> StructuralMetrics {
        fn depth(node: &PipelineNode) -> usize {
            match node {
                PipelineNode::Leaf { .. } => 0,
                PipelineNode::Manager { children, .. } => {
                    1 + children.iter().map(depth).max().unwrap_or(0)
                }
            }
        }
        let mut widths = Vec::new();
        self.walk(&mut |_, node| {
            if let PipelineNode::Manager { children, .. } = node {
                widths.push(children.len());
            }
        });
        StructuralMetrics {
            tree_count: self.trees.len(),
            max_depth: self.trees.iter().map(depth).max().unwrap_or(0),
            widths,
        }
    }
}

impl fmt::Display for PipelineForest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_pipeline_string())
    }
}

/// Shape summary of a forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuralMetrics {
    pub tree_count: usize,
    /// Largest number of managers on any root-to-leaf path.
    pub max_depth: usize,
    /// Child count of every manager, pre-order.
    pub widths: Vec<usize>,
}
