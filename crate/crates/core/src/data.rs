//! Typed tables, preprocessing and split generation. Everything here works
//! on in-memory strings; reading files is the caller's business.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use core::hash::Hasher;

use chrono::NaiveDate;
use fnv::FnvHasher;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::encoder::{Batch, Feature, FeatureSchema};
use crate::error::{structural, Result};
use crate::model::TargetScaling;
use crate::rng::{streams, Rng};

/// Value substituted for a missing numeric cell before any statistics.
pub const MISSING_NUMERIC: f64 = -1.0;
/// Category substituted for a missing categorical cell.
pub const MISSING_CATEGORY: &str = "empty";
/// Columns with a population std below this are rejected.
pub const MIN_STD: f64 = 1e-12;

/// Cells treated as missing (compared after trimming, case-insensitive).
pub fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty()
        || ["na", "n/a", "nan", "null", "?"]
            .iter()
            .any(|m| c.eq_ignore_ascii_case(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ColumnRole {
    Numeric,
    Categorical,
    /// `YYYY-MM-DD`; usable for chronological splits and otherwise passed
    /// through to the model as a categorical feature.
    Date,
    Target,
    Ignore,
}

impl FromStr for ColumnRole {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "numeric" => Self::Numeric,
            "categorical" => Self::Categorical,
            "date" => Self::Date,
            "target" => Self::Target,
            "ignore" => Self::Ignore,
            other => return Err(structural!("unknown column role {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnDecl {
    pub name: String,
    pub role: ColumnRole,
}

/// The declared role of every column that matters; columns of the file
/// that are not declared are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SchemaDecl {
    columns: Vec<ColumnDecl>,
}

impl SchemaDecl {
    pub fn new(columns: Vec<ColumnDecl>) -> Result<Self> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.name == c.name) {
                return Err(structural!("column {:?} declared twice", c.name));
            }
        }
        let targets = columns.iter().filter(|c| c.role == ColumnRole::Target).count();
        if targets != 1 {
            return Err(structural!("exactly one target column required, found {targets}"));
        }
        if !columns.iter().any(|c| c.role.is_feature()) {
            return Err(structural!("no feature columns declared"));
        }
        Ok(Self { columns })
    }

    /// Parses the line format `column_name: role`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, role) = line
                .rsplit_once(':')
                .ok_or_else(|| structural!("schema line {}: expected `name: role`, got {line:?}", n + 1))?;
            let role = role.parse().map_err(|e| structural!("schema line {}: {e}", n + 1))?;
            columns.push(ColumnDecl {
                name: name.trim().to_string(),
                role,
            });
        }
        Self::new(columns)
    }

    pub fn columns(&self) -> &[ColumnDecl] {
        &self.columns
    }

    pub fn target(&self) -> &str {
        &self
            .columns
            .iter()
            .find(|c| c.role == ColumnRole::Target)
            .expect("validated")
            .name
    }

    pub fn role_of(&self, name: &str) -> Option<ColumnRole> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.role)
    }
}

impl ColumnRole {
    fn is_feature(self) -> bool {
        matches!(self, Self::Numeric | Self::Categorical | Self::Date)
    }
}

/// Untyped rectangular table of string cells.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(structural!("duplicate column name {c:?}"));
            }
        }
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(structural!(
                "row {r} has {} cells, header has {}",
                row.len(),
                columns.len()
            ));
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| structural!("missing column {name:?}"))
    }

    pub fn cell(&self, row: usize, column: usize) -> &str {
        &self.rows[row][column]
    }

    pub fn select_rows(&self, index: &[usize]) -> RawTable {
        RawTable {
            columns: self.columns.clone(),
            rows: index.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Fails unless every declared column is present.
    pub fn check_against(&self, decl: &SchemaDecl) -> Result<()> {
        for c in decl.columns() {
            self.column_index(&c.name)?;
        }
        Ok(())
    }

    /// 64-bit FNV-1a over the header and every cell, with separators, so
    /// any change of content or row order changes the value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for c in &self.columns {
            h.write(c.as_bytes());
            h.write(&[0x1f]);
        }
        h.write(&[0x1e]);
        for row in &self.rows {
            for c in row {
                h.write(c.as_bytes());
                h.write(&[0x1f]);
            }
            h.write(&[0x1e]);
        }
        h.finish()
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    if is_missing(cell) {
        return Ok(MISSING_NUMERIC);
    }
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| structural!("row {row}, column {column:?}: cannot parse {cell:?} as a number"))?;
    if !v.is_finite() {
        return Err(structural!("row {row}, column {column:?}: non-finite value {cell:?}"));
    }
    Ok(v)
}

fn category_of(cell: &str) -> String {
    if is_missing(cell) {
        MISSING_CATEGORY.to_string()
    } else {
        cell.trim().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    /// Mean and population standard deviation.
    pub fn fit(values: &[f64], column: &str) -> Result<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std >= MIN_STD) {
            return Err(structural!("column {column:?} is constant on the fitting rows"));
        }
        Ok(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FeatureTransform {
    Numeric {
        column: String,
        stats: ColumnStats,
    },
    /// Sorted known categories; anything else maps to `categories.len()`.
    Categorical {
        column: String,
        categories: Vec<String>,
    },
}

/// Where a dataset came from and which fitted statistics produced it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Provenance {
    pub source: String,
    pub split: String,
    /// Fingerprint of the rows the preprocessor was fitted on.
    pub preprocessor: u64,
    /// Categorical cells that fell into the reserved unknown slot.
    pub unknown_categories: usize,
    /// Rows discarded by a chronological split.
    pub dropped_rows: usize,
}

/// Model-ready rows: standardized numeric features, category indices and
/// standardized targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub features: Batch,
    pub targets: Vec<f64>,
    pub schema: FeatureSchema,
    pub provenance: Provenance,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, index: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(index),
            targets: index.iter().map(|&i| self.targets[i]).collect(),
            schema: self.schema.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Statistics fitted on training rows only.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Preprocessor {
    pub decl: SchemaDecl,
    pub features: Vec<FeatureTransform>,
    pub target: TargetScaling,
    pub fingerprint: u64,
}

impl Preprocessor {
    pub fn fit(table: &RawTable, decl: &SchemaDecl) -> Result<Self> {
        table.check_against(decl)?;
        if table.len() < 2 {
            return Err(structural!("need at least 2 fitting rows, got {}", table.len()));
        }
        let mut features = Vec::new();
        for c in decl.columns() {
            let j = table.column_index(&c.name)?;
            match c.role {
                ColumnRole::Numeric => {
                    let values = (0..table.len())
                        .map(|r| parse_number(table.cell(r, j), r, &c.name))
                        .collect::<Result<Vec<_>>>()?;
                    features.push(FeatureTransform::Numeric {
                        column: c.name.clone(),
                        stats: ColumnStats::fit(&values, &c.name)?,
                    });
                }
                ColumnRole::Categorical | ColumnRole::Date => {
                    let set: BTreeSet<String> = (0..table.len()).map(|r| category_of(table.cell(r, j))).collect();
                    features.push(FeatureTransform::Categorical {
                        column: c.name.clone(),
                        categories: set.into_iter().collect(),
                    });
                }
                ColumnRole::Target | ColumnRole::Ignore => {}
            }
        }
        let targets = target_values(table, decl)?;
        let stats = ColumnStats::fit(&targets, decl.target())?;
        Ok(Self {
            decl: decl.clone(),
            features,
            target: TargetScaling::new(stats.mean, stats.std)?,
            fingerprint: table.fingerprint(),
        })
    }

    /// Feature schema in declaration order.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(
            self.features
                .iter()
                .map(|f| match f {
                    FeatureTransform::Numeric { column, .. } => Feature::numeric(column.clone()),
                    FeatureTransform::Categorical { column, categories } => {
                        Feature::categorical(column.clone(), categories.clone())
                    }
                })
                .collect(),
        )
        .expect("declaration was validated")
    }

    /// Applies the fitted statistics; nothing is re-estimated.
    pub fn transform(&self, table: &RawTable) -> Result<TabularDataset> {
        table.check_against(&self.decl)?;
        let (features, unknown) = self.transform_features(table)?;
        let targets = target_values(table, &self.decl)?
            .into_iter()
            .map(|y| self.target.standardize(y))
            .collect();
        Ok(TabularDataset {
            features,
            targets,
            schema: self.schema(),
            provenance: Provenance {
                preprocessor: self.fingerprint,
                unknown_categories: unknown,
                ..Provenance::default()
            },
        })
    }

    /// Encodes the feature columns only, so `table` may lack the target.
    /// Also returns the number of cells mapped to the unknown category.
    pub fn transform_features(&self, table: &RawTable) -> Result<(Batch, usize)> {
        let rows = table.len();
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        let mut unknown = 0;
        for f in &self.features {
            match f {
                FeatureTransform::Numeric { column, stats } => {
                    let j = table.column_index(column)?;
                    numeric.push(
                        (0..rows)
                            .map(|r| Ok((parse_number(table.cell(r, j), r, column)? - stats.mean) / stats.std))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                FeatureTransform::Categorical { column, categories } => {
                    let j = table.column_index(column)?;
                    let idx: Vec<usize> = (0..rows)
                        .map(|r| {
                            let c = category_of(table.cell(r, j));
                            categories.binary_search(&c).unwrap_or_else(|_| {
                                unknown += 1;
                                categories.len()
                            })
                        })
                        .collect();
                    categorical.push(idx);
                }
            }
        }
        Ok((
            Batch {
                rows,
                numeric,
                categorical,
            },
            unknown,
        ))
    }

    /// Fails unless `dataset` was produced by this preprocessor.
    pub fn ensure_produced(&self, dataset: &TabularDataset) -> Result<()> {
        if dataset.provenance.preprocessor != self.fingerprint {
            return Err(structural!(
                "dataset was prepared with preprocessor {:016x}, expected {:016x}",
                dataset.provenance.preprocessor,
                self.fingerprint
            ));
        }
        Ok(())
    }

    /// Original-unit targets of `table`.
    pub fn raw_targets(&self, table: &RawTable) -> Result<Vec<f64>> {
        target_values(table, &self.decl)
    }
}

fn target_values(table: &RawTable, decl: &SchemaDecl) -> Result<Vec<f64>> {
    let name = decl.target();
    let j = table.column_index(name)?;
    (0..table.len())
        .map(|r| {
            let cell = table.cell(r, j);
            if is_missing(cell) {
                return Err(structural!("row {r}: target {name:?} is missing"));
            }
            parse_number(cell, r, name)
        })
        .collect()
}

/// Row indices of one train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn ceil_fraction(fraction: f64, n: usize) -> usize {
    // guard against 0.1 * 100 = 10.000000000000002 style rounding
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Repeated random holdout. Split `i` shuffles the rows with its own
/// stream, takes the last `ceil(test_fraction * n)` rows as test and the
/// last `ceil(val_fraction * remaining)` of the rest as validation.
pub fn cv_splits(
    n_rows: usize,
    n_splits: usize,
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<Split>> {
    if n_rows < 10 {
        return Err(structural!("need at least 10 rows to split, got {n_rows}"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0 && val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(structural!(
            "split fractions must lie in (0, 1), got test {test_fraction}, validation {val_fraction}"
        ));
    }
    let base = Rng::with_stream(seed, streams::SPLITS);
    (0..n_splits)
        .map(|i| {
            let mut order: Vec<usize> = (0..n_rows).collect();
            base.split(i as u64).shuffle(&mut order);
            let n_test = ceil_fraction(test_fraction, n_rows);
            let remaining = n_rows.saturating_sub(n_test);
            let n_val = ceil_fraction(val_fraction, remaining);
            if n_test == 0 || n_val == 0 || remaining <= n_val {
                return Err(structural!("split {i} of {n_rows} rows would leave a part empty"));
            }
            let test = order.split_off(remaining);
            let validation = order.split_off(remaining - n_val);
            Ok(Split {
                train: order,
                validation,
                test,
            })
        })
        .collect()
}

/// Splits rows by a `YYYY-MM-DD` column: `date <= train_end` is train,
/// `(train_end, val_end]` validation, `(val_end, test_end]` test; later
/// rows are dropped and counted.
pub fn chrono_split(
    table: &RawTable,
    date_column: &str,
    train_end: NaiveDate,
    val_end: NaiveDate,
    test_end: NaiveDate,
) -> Result<ChronoSplit> {
    if !(train_end < val_end && val_end <= test_end) {
        return Err(structural!(
            "cut dates must satisfy train_end < val_end <= test_end, got {train_end}, {val_end}, {test_end}"
        ));
    }
    let j = table.column_index(date_column)?;
    let mut parts = [vec![], vec![], vec![]];
    let mut dropped = 0;
    for r in 0..table.len() {
        let d = parse_date(table.cell(r, j)).map_err(|e| structural!("row {r}, column {date_column:?}: {e}"))?;
        if d <= train_end {
            parts[0].push(r);
        } else if d <= val_end {
            parts[1].push(r);
        } else if d <= test_end {
            parts[2].push(r);
        } else {
            dropped += 1;
        }
    }
    let [train, validation, test] = parts;
    Ok(ChronoSplit {
        train: table.select_rows(&train),
        validation: table.select_rows(&validation),
        test: table.select_rows(&test),
        dropped,
    })
}

/// Parses a `YYYY-MM-DD` date.
pub fn parse_date(cell: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(cell.trim(), "%Y-%m-%d")
        .map_err(|e| structural!("{cell:?} is not a YYYY-MM-DD date ({e})"))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChronoSplit {
    pub train: RawTable,
    pub validation: RawTable,
    pub test: RawTable,
    pub dropped: usize,
}
