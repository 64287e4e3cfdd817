//! Model-ready feature storage with explicit missingness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// Category codes index into `labels`.
    Categorical { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureInfo {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureInfo {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, labels: Vec<String>) -> Self {
        FeatureInfo {
            name: name.into(),
            kind: FeatureKind::Categorical { labels },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    pub fn n_categories(&self) -> usize {
        match &self.kind {
            FeatureKind::Numeric => 0,
            FeatureKind::Categorical { labels } => labels.len(),
        }
    }

    pub fn label(&self, code: u32) -> Option<&str> {
        match &self.kind {
            FeatureKind::Numeric => None,
            FeatureKind::Categorical { labels } => labels.get(code as usize).map(String::as_str),
        }
    }
}

/// A single cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Missing,
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn is_missing(self) -> bool {
        matches!(self, Value::Missing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<u32>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            Column::Numeric(v) => v[row].map_or(Value::Missing, Value::Num),
            Column::Categorical(v) => v[row].map_or(Value::Missing, Value::Cat),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Column-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    features: Vec<FeatureInfo>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(features: Vec<FeatureInfo>, columns: Vec<Column>) -> Result<Self> {
        if features.len() != columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} features but {} columns",
                features.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        for (info, col) in features.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    info.name,
                    col.len()
                )));
            }
            match (&info.kind, col) {
                (FeatureKind::Numeric, Column::Numeric(v)) => {
                    if v.iter().flatten().any(|x| !x.is_finite()) {
                        return Err(Error::SchemaMismatch(format!(
                            "non-finite value in numeric column `{}`",
                            info.name
                        )));
                    }
                }
                (FeatureKind::Categorical { labels }, Column::Categorical(v)) => {
                    if v.iter().flatten().any(|&c| c as usize >= labels.len()) {
                        return Err(Error::SchemaMismatch(format!(
                            "category code out of range in `{}`",
                            info.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "column `{}` does not match its declared kind",
                        info.name
                    )))
                }
            }
        }
        Ok(FeatureMatrix {
            features,
            columns,
            n_rows,
        })
    }

    pub fn from_rows(features: Vec<FeatureInfo>, rows: &[Vec<Value>]) -> Result<Self> {
        let mut columns: Vec<Column> = features
            .iter()
            .map(|f| {
                if f.is_categorical() {
                    Column::Categorical(Vec::with_capacity(rows.len()))
                } else {
                    Column::Numeric(Vec::with_capacity(rows.len()))
                }
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != features.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    features.len()
                )));
            }
            for (col, &cell) in columns.iter_mut().zip(row) {
                match (col, cell) {
                    (Column::Numeric(v), Value::Num(x)) => v.push(Some(x)),
                    (Column::Numeric(v), Value::Missing) => v.push(None),
                    (Column::Categorical(v), Value::Cat(c)) => v.push(Some(c)),
                    (Column::Categorical(v), Value::Missing) => v.push(None),
                    _ => {
                        return Err(Error::SchemaMismatch(format!(
                            "row {i} has a cell of the wrong kind"
                        )))
                    }
                }
            }
        }
        Self::new(features, columns)
    }

    pub fn features(&self) -> &[FeatureInfo] {
        &self.features
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, feature: usize) -> &Column {
        &self.columns[feature]
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn get(&self, row: usize, feature: usize) -> Value {
        self.columns[feature].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.get(row)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.n_rows).map(|r| self.row(r))
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            features: self.features.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }
}
