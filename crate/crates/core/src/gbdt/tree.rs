use serde::{Deserialize, Serialize};

use crate::matrix::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    /// Present values `<= threshold` go left.
    Threshold { threshold: f64 },
    /// Present categories in `left` go left, all others right.
    Categories { left: Vec<u32> },
    /// Separates missing from present values; missing follows the default
    /// direction, present values the other one.
    IsMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Already scaled by the learning rate.
        value: f64,
        samples: u32,
    },
    Split {
        feature: usize,
        predicate: Predicate,
        default_direction: Direction,
        left: usize,
        right: usize,
        samples: u32,
        gain: f64,
    },
}

/// A regression tree stored as an arena; node 0 is the root and children
/// always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

pub(crate) fn route(predicate: &Predicate, default: Direction, value: Value) -> Direction {
    match (predicate, value) {
        (_, Value::Missing) => default,
        (Predicate::IsMissing, _) => default.flip(),
        (Predicate::Threshold { threshold }, Value::Num(x)) => {
            if x <= *threshold {
                Direction::Left
            } else {
                Direction::Right
            }
        }
        (Predicate::Categories { left }, Value::Cat(c)) => {
            if left.binary_search(&c).is_ok() {
                Direction::Left
            } else {
                Direction::Right
            }
        }
        // Kind mismatches are rejected before prediction; treat as missing.
        _ => default,
    }
}

impl Tree {
    pub fn leaf(value: f64, samples: u32) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, samples }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Child reached from split node `node` for `value`.
    pub fn next(&self, node: usize, value: Value) -> usize {
        match &self.nodes[node] {
            Node::Split {
                predicate,
                default_direction,
                left,
                right,
                ..
            } => match route(predicate, *default_direction, value) {
                Direction::Left => *left,
                Direction::Right => *right,
            },
            Node::Leaf { .. } => node,
        }
    }

    pub fn predict(&self, row: &[Value]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, .. } => i = self.next(i, row[*feature]),
            }
        }
    }

    /// Features referenced by any split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}
