use crate::matrix::{Column, FeatureKind, FeatureMatrix};

/// Per-feature bin layout learned on the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBins {
    /// Number of present-value bins; bin `n_bins` holds missing values.
    pub n_bins: usize,
    /// Numeric features: split threshold between bin `b` and `b + 1`.
    pub thresholds: Vec<f64>,
    pub categorical: bool,
}

impl FeatureBins {
    pub fn missing_bin(&self) -> usize {
        self.n_bins
    }
}

/// Training matrix quantised into histogram bins, column-major.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub(crate) bins: Vec<Vec<u16>>,
    pub(crate) layout: Vec<FeatureBins>,
    n_rows: usize,
}

impl BinnedData {
    pub fn new(matrix: &FeatureMatrix, max_bins: usize) -> Self {
        assert!(max_bins >= 2, "max_bins must be at least 2");
        let max_bins = max_bins.min(u16::MAX as usize - 1);
        let (bins, layout): (Vec<_>, Vec<_>) = crate::par::map_range(matrix.n_features(), |f| {
            let n_categories = match &matrix.features()[f].kind {
                FeatureKind::Categorical { labels } => labels.len(),
                FeatureKind::Numeric => 0,
            };
            bin_column(matrix.column(f), n_categories, max_bins)
        })
        .into_iter()
        .unzip();
        BinnedData {
            bins,
            layout,
            n_rows: matrix.n_rows(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self, feature: usize) -> &FeatureBins {
        &self.layout[feature]
    }

    pub fn bin(&self, feature: usize, row: usize) -> usize {
        self.bins[feature][row] as usize
    }
}

fn bin_column(col: &Column, n_categories: usize, max_bins: usize) -> (Vec<u16>, FeatureBins) {
    match col {
        Column::Categorical(codes) => {
            let n_bins = n_categories;
            let layout = FeatureBins {
                n_bins,
                thresholds: Vec::new(),
                categorical: true,
            };
            let bins = codes
                .iter()
                .map(|c| c.map_or(n_bins, |c| c as usize) as u16)
                .collect();
            (bins, layout)
        }
        Column::Numeric(values) => {
            let thresholds = numeric_thresholds(values, max_bins);
            let n_bins = thresholds.len() + 1;
            let bins = values
                .iter()
                .map(|v| match v {
                    None => n_bins as u16,
                    Some(x) => thresholds.partition_point(|t| t < x) as u16,
                })
                .collect();
            let layout = FeatureBins {
                n_bins: if values.iter().all(Option::is_none) { 0 } else { n_bins },
                thresholds,
                categorical: false,
            };
            if layout.n_bins == 0 {
                // Everything missing: a single (missing) slot.
                return (vec![0; values.len()], layout);
            }
            (bins, layout)
        }
    }
}

/// Equal-frequency bin boundaries. Each threshold lies strictly between the
/// largest value of one bin and the smallest value of the next.
fn numeric_thresholds(values: &[Option<f64>], max_bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for x in sorted.iter().copied() {
        match distinct.last_mut() {
            Some((v, c)) if *v == x => *c += 1,
            _ => distinct.push((x, 1)),
        }
    }
    let mut boundaries = Vec::new();
    if distinct.len() <= max_bins {
        for w in distinct.windows(2) {
            boundaries.push((w[0].0, w[1].0));
        }
    } else {
        let n = sorted.len() as f64;
        let mut cumulative = 0usize;
        let mut closed = 0usize;
        for (i, &(v, c)) in distinct.iter().enumerate() {
            cumulative += c;
            let target = (closed + 1) as f64 * n / max_bins as f64;
            if cumulative as f64 >= target && i + 1 < distinct.len() && closed + 1 < max_bins {
                boundaries.push((v, distinct[i + 1].0));
                closed += 1;
            }
        }
    }
    boundaries
        .into_iter()
        .map(|(hi, lo)| {
            let mid = hi + (lo - hi) / 2.0;
            if mid >= lo || !mid.is_finite() {
                hi
            } else {
                mid
            }
        })
        .collect()
}
