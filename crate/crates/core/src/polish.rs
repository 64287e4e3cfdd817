//! Data polishing: cluster training rows of each sector in SHAP space and
//! drop the members of small clusters before refitting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CorporateAction, Panel, Scope, BICS_LEVELS};
use crate::error::{Error, Result};
use crate::eval::{run_plan, run_seed, summarize, MetricsReport, ProtocolConfig, ProtocolRun};
use crate::features::bics_feature_index;
use crate::gbdt::Ensemble;
use crate::matrix::{FeatureMatrix, Value};
use crate::par;
use crate::pipeline::{ModelArtifact, ScopeData};
use crate::shap::{subsample_background, tree_shap_matrix, DEFAULT_BACKGROUND_SIZE};

/// Which attributions define the clustering space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapSpace {
    /// Total attribution of the sector classification, summed over every BICS
    /// level feature. Levels often carry the same information, so the learner
    /// may split on any of them.
    #[default]
    SectorFeatureScalar,
    /// Every feature's attribution.
    FullVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolishConfig {
    /// Complete-linkage merging stops above this distance (SHAP units).
    pub cluster_distance_threshold: f64,
    /// Clusters with fewer rows are removed.
    pub min_cluster_size: usize,
    /// BICS level whose sectors are clustered separately.
    pub grouping_level: usize,
    pub shap_space: ShapSpace,
    /// Background rows for the interventional attributions.
    pub background_size: usize,
    pub seed: u64,
}

impl Default for PolishConfig {
    fn default() -> Self {
        PolishConfig {
            cluster_distance_threshold: 0.04,
            min_cluster_size: 10,
            grouping_level: 4,
            shap_space: ShapSpace::SectorFeatureScalar,
            background_size: DEFAULT_BACKGROUND_SIZE,
            seed: 0,
        }
    }
}

impl PolishConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cluster_distance_threshold > 0.0 && self.cluster_distance_threshold.is_finite()) {
            return Err(Error::InvalidConfig("cluster distance threshold must be positive".into()));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::InvalidConfig("min cluster size must be at least 1".into()));
        }
        if !(1..=BICS_LEVELS).contains(&self.grouping_level) {
            return Err(Error::InvalidConfig(format!(
                "grouping level must be within 1..={BICS_LEVELS}"
            )));
        }
        if self.background_size == 0 {
            return Err(Error::InvalidConfig("background size must be positive".into()));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Condensed upper triangle of a symmetric matrix.
struct Triangle {
    n: usize,
    values: Vec<f64>,
}

impl Triangle {
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.values[k] = v;
    }
}

/// Agglomerative complete-linkage clustering of `points`, merging while the
/// closest pair of clusters is at most `threshold` apart (Euclidean).
///
/// Points are processed in lexicographic order and distance ties merge the
/// pair with the smallest positions in that order, so the partition does not
/// depend on input order. Cluster ids are numbered by their smallest member
/// in that order. Returns one id per input point.
pub fn cluster_group(points: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(&points[a], &points[b]));

    let mut dist = Triangle {
        n,
        values: vec![0.0; n * (n - 1) / 2],
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.set(i, j, distance(&points[order[i]], &points[order[j]]));
        }
    }

    // Every active cluster is named by its smallest position. nearest[i]
    // holds the closest active j > i (smallest j on ties).
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let nearest_of = |i: usize, active: &[bool], dist: &Triangle| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in i + 1..n {
            if active[j] {
                let d = dist.get(i, j);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best
    };
    let mut nearest: Vec<Option<(usize, f64)>> = (0..n).map(|i| nearest_of(i, &active, &dist)).collect();

    loop {
        let mut pick: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if let (true, Some((j, d))) = (active[i], nearest[i]) {
                if pick.is_none_or(|(_, _, pd)| d < pd) {
                    pick = Some((i, j, d));
                }
            }
        }
        let Some((i, j, d)) = pick else { break };
        if d > threshold {
            break;
        }
        active[j] = false;
        parent[j] = i;
        for k in 0..n {
            if active[k] && k != i {
                let merged = dist.get(i, k).max(dist.get(j, k));
                dist.set(i, k, merged);
            }
        }
        nearest[j] = None;
        nearest[i] = nearest_of(i, &active, &dist);
        for k in 0..i {
            if !active[k] {
                continue;
            }
            match nearest[k] {
                Some((m, _)) if m == i || m == j => nearest[k] = nearest_of(k, &active, &dist),
                Some((m, md)) => {
                    // Linkage distances only grow, but i may now tie the
                    // current nearest with a smaller position.
                    if dist.get(k, i) == md && i < m {
                        nearest[k] = Some((i, md));
                    }
                }
                None => {}
            }
        }
        for k in i + 1..j {
            if active[k] && nearest[k].is_some_and(|(m, _)| m == j) {
                nearest[k] = nearest_of(k, &active, &dist);
            }
        }
    }

    // Resolve roots; a root is its own smallest member.
    let mut root = vec![0; n];
    for p in 0..n {
        let mut r = p;
        while parent[r] != r {
            r = parent[r];
        }
        root[p] = r;
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = vec![0; n];
    for (p, &original) in order.iter().enumerate() {
        let next = ids.len();
        out[original] = *ids.entry(root[p]).or_insert(next);
    }
    out
}

/// A training row dropped by polishing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedRow {
    /// Position in the polished input.
    pub row: usize,
    pub company_id: String,
    pub year: i32,
    pub group: String,
    pub cluster: usize,
    pub cluster_size: usize,
}

fn group_label(matrix: &FeatureMatrix, row: usize, feature: usize) -> Option<String> {
    match matrix.get(row, feature) {
        Value::Cat(code) => matrix.features()[feature].label(code).map(str::to_string),
        _ => None,
    }
}

/// Rows of `matrix` to remove, given their attributions under `ensemble`.
/// Rows without a sector label and sectors with fewer than
/// `min_cluster_size` rows are never removed.
pub fn find_removals(
    matrix: &FeatureMatrix,
    keys: &[(String, i32)],
    ensemble: &Ensemble,
    cfg: &PolishConfig,
) -> Result<Vec<RemovedRow>> {
    cfg.validate()?;
    if keys.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: keys.len(),
        });
    }
    let feature = bics_feature_index(cfg.grouping_level);
    if feature >= matrix.n_features() || !matrix.features()[feature].is_categorical() {
        return Err(Error::InvalidConfig("the matrix has no sector feature at the grouping level".into()));
    }

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in 0..matrix.n_rows() {
        if let Some(label) = group_label(matrix, r, feature) {
            groups.entry(label).or_default().push(r);
        }
    }
    let groups: Vec<(String, Vec<usize>)> = groups
        .into_iter()
        .filter(|(_, rows)| rows.len() >= cfg.min_cluster_size)
        .collect();
    let candidates: Vec<usize> = groups.iter().flat_map(|(_, rows)| rows.iter().copied()).collect();
    if candidates.is_empty() || cfg.min_cluster_size == 1 {
        return Ok(Vec::new());
    }

    let background = subsample_background(matrix, cfg.background_size, cfg.seed);
    let shap = tree_shap_matrix(ensemble, &matrix.select_rows(&candidates), &background)?;
    let mut attributions: Vec<Option<Vec<f64>>> = vec![None; matrix.n_rows()];
    for (&r, s) in candidates.iter().zip(shap) {
        attributions[r] = Some(match cfg.shap_space {
            ShapSpace::SectorFeatureScalar => vec![(1..=BICS_LEVELS).map(|l| s.values[bics_feature_index(l)]).sum()],
            ShapSpace::FullVector => s.values,
        });
    }

    let per_group = par::map(&groups, |(label, rows)| {
        let points: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| attributions[r].clone().expect("every candidate has attributions"))
            .collect();
        let ids = cluster_group(&points, cfg.cluster_distance_threshold);
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &ids {
            *sizes.entry(c).or_default() += 1;
        }
        rows.iter()
            .zip(&ids)
            .filter(|&(_, c)| sizes[c] < cfg.min_cluster_size)
            .map(|(&r, &c)| RemovedRow {
                row: r,
                company_id: keys[r].0.clone(),
                year: keys[r].1,
                group: label.clone(),
                cluster: c,
                cluster_size: sizes[&c],
            })
            .collect::<Vec<_>>()
    });
    let mut removed: Vec<RemovedRow> = per_group.into_iter().flatten().collect();
    removed.sort_by_key(|r| r.row);
    Ok(removed)
}

#[derive(Debug, Clone)]
pub struct PolishedDataset {
    pub matrix: FeatureMatrix,
    pub targets: Vec<f64>,
    pub keys: Vec<(String, i32)>,
    /// Input positions that were kept, ascending.
    pub kept: Vec<usize>,
    pub audit: Vec<RemovedRow>,
}

/// Removes small SHAP clusters from a training set `ensemble` was fit on.
pub fn polish_dataset(
    matrix: &FeatureMatrix,
    targets: &[f64],
    keys: &[(String, i32)],
    ensemble: &Ensemble,
    cfg: &PolishConfig,
) -> Result<PolishedDataset> {
    if targets.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: targets.len(),
        });
    }
    let audit = find_removals(matrix, keys, ensemble, cfg)?;
    let removed: BTreeSet<usize> = audit.iter().map(|r| r.row).collect();
    let kept: Vec<usize> = (0..matrix.n_rows()).filter(|r| !removed.contains(r)).collect();
    Ok(PolishedDataset {
        matrix: matrix.select_rows(&kept),
        targets: kept.iter().map(|&r| targets[r]).collect(),
        keys: kept.iter().map(|&r| keys[r].clone()).collect(),
        kept,
        audit,
    })
}

/// Polishes every target of `data` with `model` and blanks the removed
/// reported values in `panel`. Audit rows index `data`.
pub fn polish_panel(
    panel: &Panel,
    data: &ScopeData,
    model: &ModelArtifact,
    cfg: &PolishConfig,
) -> Result<(Panel, Vec<RemovedRow>)> {
    let matrix = model.encode(&data.rows);
    let audit = find_removals(&matrix, &data.keys, &model.ensemble, cfg)?;
    let removed: BTreeSet<(&str, i32)> = audit
        .iter()
        .map(|r| (data.keys[r.row].0.as_str(), data.origin_years[r.row]))
        .collect();
    let polished = panel.map_records(|r| {
        if removed.contains(&(r.company_id.as_str(), r.year)) {
            r.clear_reported(data.scope);
        }
    })?;
    Ok((polished, audit))
}

/// Polishing audit of one test set; `row` fields index the scope data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetAudit {
    pub test_set: usize,
    pub seed: u64,
    pub training_rows: usize,
    pub removed: Vec<RemovedRow>,
}

#[derive(Debug, Clone)]
pub struct PolishRun {
    pub before: ProtocolRun,
    pub after: ProtocolRun,
    pub audits: Vec<SetAudit>,
}

impl PolishRun {
    pub fn reports(&self) -> (&MetricsReport, &MetricsReport) {
        (&self.before.report, &self.after.report)
    }
}

/// Evaluates the protocol, then polishes each development set with the model
/// selected for it, reselects hyperparameters on what remains and evaluates
/// again on the untouched test sets.
pub fn polish_and_refit(
    panel: &Panel,
    scope: Scope,
    actions: &[CorporateAction],
    protocol: &ProtocolConfig,
    cfg: &PolishConfig,
) -> Result<PolishRun> {
    let data = ScopeData::prepare(panel, scope, actions, &protocol.cleaning, &protocol.features)?;
    polish_scope_data(&data, protocol, cfg)
}

pub fn polish_scope_data(data: &ScopeData, protocol: &ProtocolConfig, cfg: &PolishConfig) -> Result<PolishRun> {
    cfg.validate()?;
    let outcomes = par::map(&protocol.seeds, |&seed| -> Result<_> {
        let before = run_seed(data, seed, protocol)?;
        let dev = before.plan.development_rows(&data.keys);
        let matrix = before.model.encode(&data.raw_rows(&dev));
        let dev_keys: Vec<(String, i32)> = dev.iter().map(|&i| data.keys[i].clone()).collect();
        let mut removed = find_removals(&matrix, &dev_keys, &before.model.ensemble, cfg)?;
        for r in &mut removed {
            r.row = dev[r.row];
        }
        let excluded: BTreeSet<usize> = removed.iter().map(|r| r.row).collect();
        let test: BTreeSet<usize> = before.test_rows.iter().copied().collect();
        assert!(excluded.is_disjoint(&test), "polishing touched a test row");
        let after = run_plan(data, before.plan.clone(), &excluded, protocol)?;
        let audit = SetAudit {
            test_set: 0,
            seed,
            training_rows: dev.len(),
            removed,
        };
        Ok((before, after, audit))
    });
    let mut befores = Vec::new();
    let mut afters = Vec::new();
    let mut audits = Vec::new();
    for (s, outcome) in outcomes.into_iter().enumerate() {
        let (before, after, mut audit) = outcome?;
        audit.test_set = s;
        befores.push(before);
        afters.push(after);
        audits.push(audit);
    }
    Ok(PolishRun {
        before: summarize(data, befores)?,
        after: summarize(data, afters)?,
        audits,
    })
}

/// One JSON object per removed row.
pub fn write_audit_jsonl(audits: &[SetAudit], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        test_set: usize,
        seed: u64,
        #[serde(flatten)]
        row: &'a RemovedRow,
    }
    let mut out = String::new();
    for a in audits {
        for row in &a.removed {
            let line = Line {
                test_set: a.test_set,
                seed: a.seed,
                row,
            };
            out.push_str(&serde_json::to_string(&line).expect("audit rows serialize"));
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
