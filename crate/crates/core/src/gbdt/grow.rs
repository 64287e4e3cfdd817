//! Histogram split search and best-first tree growth.

use super::binning::{BinnedData, FeatureBins};
use super::tree::{Direction, Node, Predicate, Tree};
use crate::par;

/// Rows below this many (row x feature) updates build histograms serially.
const PARALLEL_HISTOGRAM_WORK: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeatureHistogram {
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
}

pub(crate) type Histogram = Vec<FeatureHistogram>;

fn build_feature_histogram(binned: &BinnedData, feature: usize, rows: &[u32], grads: &[f64]) -> FeatureHistogram {
    let slots = binned.layout(feature).n_bins + 1;
    let mut sums = vec![0.0; slots];
    let mut counts = vec![0u32; slots];
    let bins = &binned.bins[feature];
    for &r in rows {
        let b = bins[r as usize] as usize;
        sums[b] += grads[r as usize];
        counts[b] += 1;
    }
    FeatureHistogram { sums, counts }
}

pub(crate) fn build_histogram(binned: &BinnedData, rows: &[u32], grads: &[f64]) -> Histogram {
    let n_features = binned.n_features();
    if rows.len() * n_features >= PARALLEL_HISTOGRAM_WORK {
        par::map_range(n_features, |f| build_feature_histogram(binned, f, rows, grads))
    } else {
        (0..n_features)
            .map(|f| build_feature_histogram(binned, f, rows, grads))
            .collect()
    }
}

fn subtract(mut parent: Histogram, child: &Histogram) -> Histogram {
    for (p, c) in parent.iter_mut().zip(child) {
        for (s, cs) in p.sums.iter_mut().zip(&c.sums) {
            *s -= cs;
        }
        for (n, cn) in p.counts.iter_mut().zip(&c.counts) {
            *n -= cn;
        }
    }
    parent
}

/// How training rows are routed, expressed on bin indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum BinRule {
    /// Present bins `<= boundary` go left.
    Boundary(usize),
    /// `left[bin]` for every present bin.
    Set(Vec<bool>),
    IsMissing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub predicate: Predicate,
    pub default_direction: Direction,
    /// Reduction of the sum of squared residuals.
    pub gain: f64,
    pub left_count: usize,
    pub right_count: usize,
    pub(crate) rule: BinRule,
}

impl SplitCandidate {
    pub(crate) fn goes_left(&self, bin: usize, missing_bin: usize) -> bool {
        if bin == missing_bin {
            return self.default_direction == Direction::Left;
        }
        match &self.rule {
            BinRule::Boundary(b) => bin <= *b,
            BinRule::Set(left) => left[bin],
            BinRule::IsMissing => self.default_direction == Direction::Right,
        }
    }
}

struct Scan {
    best: Option<SplitCandidate>,
    /// `G_L^2 / N_L + G_R^2 / N_R` of `best`, or the parent term.
    best_score: f64,
    parent_term: f64,
    total_sum: f64,
    total_count: usize,
    feature: usize,
    min_leaf: usize,
}

impl Scan {
    fn new(total_sum: f64, total_count: usize, feature: usize, min_leaf: usize) -> Self {
        let parent_term = if total_count == 0 {
            0.0
        } else {
            total_sum * total_sum / total_count as f64
        };
        Scan {
            best: None,
            best_score: parent_term,
            parent_term,
            total_sum,
            total_count,
            feature,
            min_leaf,
        }
    }

    /// Offers a partition whose left side has (`sum`, `count`).
    #[inline]
    fn offer(&mut self, sum: f64, count: usize, make: impl FnOnce() -> (Predicate, Direction, BinRule)) {
        let right_count = self.total_count - count;
        if count < self.min_leaf || right_count < self.min_leaf {
            return;
        }
        let right_sum = self.total_sum - sum;
        let left_term = sum * sum / count as f64;
        let right_term = right_sum * right_sum / right_count as f64;
        let score = left_term + right_term;
        if score <= self.best_score {
            return;
        }
        let gain = score - self.parent_term;
        if gain <= 1e-11 * (1.0 + score) {
            return;
        }
        let (predicate, default_direction, rule) = make();
        self.best_score = score;
        self.best = Some(SplitCandidate {
            feature: self.feature,
            predicate,
            default_direction,
            gain,
            left_count: count,
            right_count,
            rule,
        });
    }

    /// Offers a boundary with both routings of the missing bin.
    fn offer_both(
        &mut self,
        present_sum: f64,
        present_count: usize,
        missing: (f64, usize),
        make: impl Fn() -> (Predicate, BinRule),
    ) {
        if missing.1 == 0 {
            // No missing rows here: send future missing values to the larger side.
            let right = self.total_count - present_count;
            let default = if present_count >= right { Direction::Left } else { Direction::Right };
            self.offer(present_sum, present_count, || {
                let (p, r) = make();
                (p, default, r)
            });
            return;
        }
        self.offer(present_sum + missing.0, present_count + missing.1, || {
            let (p, r) = make();
            (p, Direction::Left, r)
        });
        self.offer(present_sum, present_count, || {
            let (p, r) = make();
            (p, Direction::Right, r)
        });
    }
}

/// Best split of one feature given its node histogram, or `None` when no
/// positive-gain split leaves `min_leaf` samples on both sides.
pub(crate) fn best_split_for_feature(
    hist: &FeatureHistogram,
    layout: &FeatureBins,
    feature: usize,
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n_bins = layout.n_bins;
    let missing = (hist.sums[n_bins], hist.counts[n_bins] as usize);
    let total_sum: f64 = hist.sums.iter().sum();
    let total_count: usize = hist.counts.iter().map(|&c| c as usize).sum();
    let present_count = total_count - missing.1;
    let mut scan = Scan::new(total_sum, total_count, feature, min_leaf.max(1));
    if total_count < 2 {
        return None;
    }

    if missing.1 > 0 && present_count > 0 {
        // Present rows left, missing rows right.
        scan.offer(total_sum - missing.0, present_count, || {
            (Predicate::IsMissing, Direction::Right, BinRule::IsMissing)
        });
    }

    if layout.categorical {
        let mut cats: Vec<(u32, f64, usize)> = (0..n_bins)
            .filter(|&c| hist.counts[c] > 0)
            .map(|c| (c as u32, hist.sums[c], hist.counts[c] as usize))
            .collect();
        cats.sort_by(|a, b| {
            let ma = a.1 / a.2 as f64;
            let mb = b.1 / b.2 as f64;
            ma.total_cmp(&mb).then(a.0.cmp(&b.0))
        });
        let mut sum = 0.0;
        let mut count = 0;
        for k in 1..cats.len() {
            sum += cats[k - 1].1;
            count += cats[k - 1].2;
            let prefix = &cats[..k];
            scan.offer_both(sum, count, missing, || {
                let mut left: Vec<u32> = prefix.iter().map(|c| c.0).collect();
                left.sort_unstable();
                let mut mask = vec![false; n_bins];
                for &c in &left {
                    mask[c as usize] = true;
                }
                (Predicate::Categories { left }, BinRule::Set(mask))
            });
        }
    } else {
        let mut sum = 0.0;
        let mut count = 0;
        for b in 0..n_bins.saturating_sub(1) {
            if hist.counts[b] == 0 {
                continue;
            }
            sum += hist.sums[b];
            count += hist.counts[b] as usize;
            if count == present_count {
                break;
            }
            let threshold = layout.thresholds[b];
            scan.offer_both(sum, count, missing, || {
                (Predicate::Threshold { threshold }, BinRule::Boundary(b))
            });
        }
    }
    scan.best
}

pub(crate) fn best_split(hist: &Histogram, binned: &BinnedData, min_leaf: usize) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    for (f, h) in hist.iter().enumerate() {
        if let Some(c) = best_split_for_feature(h, binned.layout(f), f, min_leaf) {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
    }
    best
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    hist: Histogram,
    split: Option<SplitCandidate>,
}

/// A grown tree plus the training rows that landed in each leaf.
pub(crate) struct GrownTree {
    pub tree: Tree,
    pub leaves: Vec<(Vec<u32>, f64)>,
}

/// Grows one tree best-first on `grads` (residuals). Leaf values are mean
/// residuals multiplied by `scale`.
pub(crate) fn grow_tree(
    binned: &BinnedData,
    rows: Vec<u32>,
    grads: &[f64],
    num_leaves: usize,
    min_leaf: usize,
    scale: f64,
) -> GrownTree {
    let mut nodes = vec![Node::Leaf { value: 0.0, samples: rows.len() as u32 }];
    let hist = build_histogram(binned, &rows, grads);
    let can_split = |n: usize, leaves: usize| leaves < num_leaves && n >= 2 * min_leaf.max(1);
    let split = if can_split(rows.len(), 1) {
        best_split(&hist, binned, min_leaf)
    } else {
        None
    };
    let mut open = vec![OpenLeaf { node: 0, rows, hist, split }];

    while open.len() < num_leaves {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.split.as_ref().map(|s| (i, s.gain, l.node)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
        let Some((i, _, _)) = pick else { break };
        let leaf = open.swap_remove(i);
        let split = leaf.split.expect("picked leaves have a split");
        let missing_bin = binned.layout(split.feature).missing_bin();
        let bins = &binned.bins[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf
            .rows
            .iter()
            .partition(|&&r| split.goes_left(bins[r as usize] as usize, missing_bin));
        debug_assert_eq!(left_rows.len(), split.left_count);

        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(Node::Leaf { value: 0.0, samples: left_rows.len() as u32 });
        nodes.push(Node::Leaf { value: 0.0, samples: right_rows.len() as u32 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            predicate: split.predicate.clone(),
            default_direction: split.default_direction,
            left: left_id,
            right: right_id,
            samples: leaf.rows.len() as u32,
            gain: split.gain,
        };

        let left_small = left_rows.len() <= right_rows.len();
        let small_rows = if left_small { &left_rows } else { &right_rows };
        let small_hist = build_histogram(binned, small_rows, grads);
        let large_hist = subtract(leaf.hist, &small_hist);
        let (left_hist, right_hist) = if left_small {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };
        let leaves_after = open.len() + 2;
        for (node, rows, hist) in [(left_id, left_rows, left_hist), (right_id, right_rows, right_hist)] {
            let split = if can_split(rows.len(), leaves_after) {
                best_split(&hist, binned, min_leaf)
            } else {
                None
            };
            open.push(OpenLeaf { node, rows, hist, split });
        }
    }

    let mut leaves = Vec::with_capacity(open.len());
    open.sort_by_key(|l| l.node);
    for leaf in open {
        let n = leaf.rows.len();
        let mean = if n == 0 {
            0.0
        } else {
            leaf.rows.iter().map(|&r| grads[r as usize]).sum::<f64>() / n as f64
        };
        let value = mean * scale;
        nodes[leaf.node] = Node::Leaf { value, samples: n as u32 };
        leaves.push((leaf.rows, value));
    }
    GrownTree {
        tree: Tree { nodes },
        leaves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{Column, FeatureInfo, FeatureMatrix};

    fn categorical_node() -> (BinnedData, Vec<f64>) {
        // 20 rows of A with residual -1, 20 rows of B with +1.
        let codes: Vec<Option<u32>> = (0..40).map(|i| Some(if i < 20 { 0 } else { 1 })).collect();
        let m = FeatureMatrix::new(
            vec![FeatureInfo::categorical("c", vec!["A".into(), "B".into()])],
            vec![Column::Categorical(codes)],
        )
        .unwrap();
        let grads = (0..40).map(|i| if i < 20 { -1.0 } else { 1.0 }).collect();
        (BinnedData::new(&m, 255), grads)
    }

    #[test]
    fn categorical_partition_gain() {
        let (binned, grads) = categorical_node();
        let rows: Vec<u32> = (0..40).collect();
        let hist = build_histogram(&binned, &rows, &grads);
        let s = best_split(&hist, &binned, 1).unwrap();
        assert_eq!(s.predicate, Predicate::Categories { left: vec![0] });
        assert!((s.gain - 40.0).abs() < 1e-12);
    }

    #[test]
    fn missing_rows_go_to_the_better_side() {
        // 10 missing rows at +1, 10 present rows at x = 0 with -1.
        let values: Vec<Option<f64>> = (0..20).map(|i| if i < 10 { None } else { Some(0.0) }).collect();
        let m = FeatureMatrix::new(vec![FeatureInfo::numeric("x")], vec![Column::Numeric(values)]).unwrap();
        let binned = BinnedData::new(&m, 255);
        let grads: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { -1.0 }).collect();
        let rows: Vec<u32> = (0..20).collect();
        let hist = build_histogram(&binned, &rows, &grads);
        let s = best_split(&hist, &binned, 1).unwrap();
        assert_eq!(s.predicate, Predicate::IsMissing);
        let grown = grow_tree(&binned, rows, &grads, 2, 1, 1.0);
        let missing_leaf = grown.tree.next(0, crate::matrix::Value::Missing);
        match grown.tree.nodes[missing_leaf] {
            Node::Leaf { value, .. } => assert_eq!(value, 1.0),
            _ => panic!("expected a leaf"),
        }
    }

    #[test]
    fn constant_feature_has_no_split() {
        let m = FeatureMatrix::new(
            vec![FeatureInfo::numeric("x")],
            vec![Column::Numeric(vec![Some(1.0); 10])],
        )
        .unwrap();
        let binned = BinnedData::new(&m, 255);
        let grads: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let rows: Vec<u32> = (0..10).collect();
        let hist = build_histogram(&binned, &rows, &grads);
        assert!(best_split(&hist, &binned, 1).is_none());
    }

    #[test]
    fn histogram_subtraction_matches_direct_build() {
        let (binned, grads) = categorical_node();
        let all: Vec<u32> = (0..40).collect();
        let part: Vec<u32> = (0..40).step_by(3).collect();
        let rest: Vec<u32> = all.iter().copied().filter(|r| r % 3 != 0).collect();
        let parent = build_histogram(&binned, &all, &grads);
        let child = build_histogram(&binned, &part, &grads);
        assert_eq!(subtract(parent, &child), build_histogram(&binned, &rest, &grads));
    }
}
