//! Dataset ingestion, binary discretization and train/validation/test splits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// N samples by V real-valued features, with optional names and labels.
///
/// `labels` holds single-task class ids in `[0, C)`. `task_labels` holds the
/// multi-task binary targets (N × T) with `NaN` marking a missing label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Array2<f64>,
    feature_names: Option<Vec<String>>,
    labels: Option<Vec<usize>>,
    task_labels: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(
        values: Array2<f64>,
        feature_names: Option<Vec<String>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (n, v) = values.dim();
        if n < 1 {
            return Err(Error::EmptyInput("dataset has no samples".into()));
        }
        if v < 2 {
            return Err(Error::Argument(format!(
                "dataset needs at least 2 features, got {v}"
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("dataset contains a non-finite value".into()));
        }
        if let Some(names) = &feature_names {
            if names.len() != v {
                return Err(Error::Shape(format!(
                    "{} feature names for {v} features",
                    names.len()
                )));
            }
            let mut seen = HashSet::with_capacity(v);
            for name in names {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Argument(format!("duplicate feature name {name:?}")));
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
            }
        }
        Ok(Dataset {
            values,
            feature_names,
            labels,
            task_labels: None,
        })
    }

    /// Attach multi-task binary targets (entries 0, 1 or NaN for missing).
    pub fn with_task_labels(mut self, tasks: Array2<f64>) -> Result<Self> {
        if tasks.nrows() != self.n_samples() || tasks.ncols() == 0 {
            return Err(Error::Shape(format!(
                "task label matrix {:?} for {} samples",
                tasks.dim(),
                self.n_samples()
            )));
        }
        if tasks.iter().any(|&y| !(y.is_nan() || y == 0.0 || y == 1.0)) {
            return Err(Error::Argument("task labels must be 0, 1 or missing".into()));
        }
        self.task_labels = Some(tasks);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn task_labels(&self) -> Option<&Array2<f64>> {
        self.task_labels.as_ref()
    }

    /// Number of classes implied by the labels (max label + 1), at least 2.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(2, |m| (m + 1).max(2)))
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    pub fn in_unit_interval(&self) -> bool {
        self.values.iter().all(|&x| (0.0..=1.0).contains(&x))
    }

    /// Nonnegative integer entries (bag-of-words counts).
    pub fn is_count_like(&self) -> bool {
        self.values.iter().all(|&x| x >= 0.0 && x.fract() == 0.0)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let values = self.values.select(Axis(0), rows);
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        let mut out = Dataset::new(values, self.feature_names.clone(), labels)?;
        if let Some(t) = &self.task_labels {
            out = out.with_task_labels(t.select(Axis(0), rows))?;
        }
        Ok(out)
    }

    /// Same samples and labels with a different feature matrix.
    pub fn with_values(&self, values: Array2<f64>, feature_names: Option<Vec<String>>) -> Result<Dataset> {
        if values.nrows() != self.n_samples() {
            return Err(Error::Shape(format!(
                "replacement matrix has {} rows, dataset has {}",
                values.nrows(),
                self.n_samples()
            )));
        }
        let mut out = Dataset::new(values, feature_names, self.labels.clone())?;
        out.task_labels = self.task_labels.clone();
        Ok(out)
    }

    /// Write as dense CSV in the format read by [`load_dense_csv`].
    pub fn write_dense_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let names: Vec<String> = match &self.feature_names {
            Some(n) => n.clone(),
            None => (0..self.n_features()).map(|i| format!("f{i}")).collect(),
        };
        out.push_str(&names.join(","));
        if self.labels.is_some() {
            out.push_str(",label");
        }
        out.push('\n');
        for (i, row) in self.values.outer_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&cells.join(","));
            if let Some(l) = &self.labels {
                let _ = write!(out, ",{}", l[i]);
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Write as a sparse bag-of-words pair (doc file, vocab file).
    ///
    /// Requires nonnegative integer values; unlabeled rows get label 0.
    pub fn write_sparse_bow(&self, doc_path: &Path, vocab_path: &Path) -> Result<()> {
        if !self.is_count_like() {
            return Err(Error::Argument(
                "bag-of-words output needs nonnegative integer counts".into(),
            ));
        }
        let mut vocab = String::new();
        for v in 0..self.n_features() {
            match &self.feature_names {
                Some(n) => vocab.push_str(&n[v]),
                None => {
                    let _ = write!(vocab, "w{v}");
                }
            }
            vocab.push('\n');
        }
        let mut docs = String::new();
        for (i, row) in self.values.outer_iter().enumerate() {
            let label = self.labels.as_ref().map_or(0, |l| l[i]);
            let _ = write!(docs, "{label}");
            for (v, &c) in row.iter().enumerate() {
                if c > 0.0 {
                    let _ = write!(docs, " {v}:{}", c as u64);
                }
            }
            docs.push('\n');
        }
        fs::write(vocab_path, vocab).map_err(|e| Error::io(vocab_path, e))?;
        fs::write(doc_path, docs).map_err(|e| Error::io(doc_path, e))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a dense CSV with a header row. With `has_labels`, the last column is
/// an integer class label.
pub fn load_dense_csv(path: &Path, has_labels: bool) -> Result<Dataset> {
    let (names, rows, label_cols) = read_csv_cells(path, usize::from(has_labels))?;
    let labels = if has_labels {
        let mut out = Vec::with_capacity(rows.len());
        for (line, cells) in &label_cols {
            let cell = cells[0].trim();
            let y: usize = cell
                .parse()
                .map_err(|_| parse_err(path, *line, format!("label {cell:?} is not a class index")))?;
            out.push(y);
        }
        Some(out)
    } else {
        None
    };
    Dataset::new(rows_to_array(&rows, names.len()), Some(names), labels)
}

/// Read a dense CSV whose last `n_tasks` columns are binary task labels
/// (`0`, `1`, or an empty cell for a missing label).
pub fn load_dense_csv_tasks(path: &Path, n_tasks: usize) -> Result<Dataset> {
    if n_tasks == 0 {
        return Err(Error::Argument("n_tasks must be at least 1".into()));
    }
    let (names, rows, label_cols) = read_csv_cells(path, n_tasks)?;
    let mut tasks = Array2::<f64>::zeros((rows.len(), n_tasks));
    for (i, (line, cells)) in label_cols.iter().enumerate() {
        for (t, cell) in cells.iter().enumerate() {
            tasks[[i, t]] = match cell.trim() {
                "" => f64::NAN,
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(parse_err(path, *line, format!("task label {other:?} is not 0/1/empty")))
                }
            };
        }
    }
    Dataset::new(rows_to_array(&rows, names.len()), Some(names), None)?.with_task_labels(tasks)
}

type CsvCells = (Vec<String>, Vec<Vec<f64>>, Vec<(usize, Vec<String>)>);

fn read_csv_cells(path: &Path, trailing: usize) -> Result<CsvCells> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    };
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if header.len() <= trailing {
        return Err(parse_err(path, 1, "header has no feature columns"));
    }
    let n_features = header.len() - trailing;
    let names: Vec<String> = header[..n_features].iter().map(|s| s.to_string()).collect();

    let mut rows = Vec::new();
    let mut tails = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} cells, found {}", header.len(), cells.len()),
            ));
        }
        let mut row = Vec::with_capacity(n_features);
        for cell in &cells[..n_features] {
            let cell = cell.trim();
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("cell {cell:?} is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(path, lineno, format!("cell {cell:?} is not finite")));
            }
            row.push(x);
        }
        rows.push(row);
        tails.push((lineno, cells[n_features..].iter().map(|s| s.to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} has a header but no rows", path.display())));
    }
    Ok((names, rows, tails))
}

fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).expect("rows have uniform width")
}

/// Read a sparse bag-of-words corpus: a vocabulary file (one token per line)
/// and a document file with lines `label idx:count idx:count ...`.
pub fn load_sparse_bow(doc_path: &Path, vocab_path: &Path) -> Result<Dataset> {
    let vocab_text = read_text(vocab_path)?;
    let vocab: Vec<String> = vocab_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", vocab_path.display())));
    }
    let v = vocab.len();

    let doc_text = read_text(doc_path)?;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in doc_text.lines().enumerate() {
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(doc_path, lineno, format!("label {label:?} is not a class index")))?;
        let mut row = vec![0.0; v];
        let mut seen = HashSet::new();
        for tok in tokens {
            let (i, c) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(doc_path, lineno, format!("entry {tok:?} is not idx:count")))?;
            let i: usize = i
                .parse()
                .map_err(|_| parse_err(doc_path, lineno, format!("index {i:?} is not an integer")))?;
            let c: u64 = c
                .parse()
                .map_err(|_| parse_err(doc_path, lineno, format!("count {c:?} is not an integer")))?;
            if c < 1 {
                return Err(parse_err(doc_path, lineno, "counts must be at least 1"));
            }
            if i >= v {
                return Err(Error::Index {
                    path: doc_path.to_path_buf(),
                    line: lineno,
                    index: i,
                    vocab: v,
                });
            }
            if !seen.insert(i) {
                return Err(Error::DuplicateIndex {
                    path: doc_path.to_path_buf(),
                    line: lineno,
                    index: i,
                });
            }
            row[i] = c as f64;
        }
        flat.extend(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no documents", doc_path.display())));
    }
    let values = Array2::from_shape_vec((labels.len(), v), flat).expect("uniform rows");
    Dataset::new(values, Some(vocab), Some(labels))
}

/// How real values become binary for tree learning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscretizationPolicy {
    /// 1 iff value > the per-feature median.
    MedianThreshold,
    /// 1 iff value > t.
    FixedThreshold(f64),
    /// Entries must already be 0 or 1.
    AlreadyBinary,
}

impl DiscretizationPolicy {
    /// `AlreadyBinary` for {0,1} data, presence/absence for counts, median
    /// split otherwise.
    pub fn default_for(d: &Dataset) -> Self {
        if d.is_binary() {
            DiscretizationPolicy::AlreadyBinary
        } else if d.is_count_like() {
            DiscretizationPolicy::FixedThreshold(0.0)
        } else {
            DiscretizationPolicy::MedianThreshold
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DiscretizationPolicy::FixedThreshold(t) if !t.is_finite() => {
                Err(Error::Argument(format!("fixed threshold {t} is not finite")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for DiscretizationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiscretizationPolicy::MedianThreshold => write!(f, "median"),
            DiscretizationPolicy::FixedThreshold(t) => write!(f, "fixed:{t}"),
            DiscretizationPolicy::AlreadyBinary => write!(f, "binary"),
        }
    }
}

impl std::str::FromStr for DiscretizationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = match s {
            "median" => DiscretizationPolicy::MedianThreshold,
            "binary" => DiscretizationPolicy::AlreadyBinary,
            _ => match s.strip_prefix("fixed:") {
                Some(t) => DiscretizationPolicy::FixedThreshold(
                    t.parse()
                        .map_err(|_| Error::Argument(format!("bad threshold in policy {s:?}")))?,
                ),
                None => {
                    return Err(Error::Argument(format!(
                        "unknown policy {s:?} (expected median, binary or fixed:<t>)"
                    )))
                }
            },
        };
        p.validate()?;
        Ok(p)
    }
}

/// N × V binary matrix stored as one packed bit column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    n: usize,
    v: usize,
    words: usize,
    bits: Vec<u64>,
    ones: Vec<u32>,
    policy: DiscretizationPolicy,
    thresholds: Vec<f64>,
}

impl BinaryDataset {
    fn empty(n: usize, v: usize, policy: DiscretizationPolicy, thresholds: Vec<f64>) -> Self {
        let words = n.div_ceil(64);
        BinaryDataset {
            n,
            v,
            words,
            bits: vec![0; words * v],
            ones: vec![0; v],
            policy,
            thresholds,
        }
    }

    fn set(&mut self, row: usize, col: usize) {
        self.bits[col * self.words + row / 64] |= 1 << (row % 64);
        self.ones[col] += 1;
    }

    /// Build from 0/1 rows (anything nonzero counts as 1).
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let v = rows.first().map_or(0, |r| r.as_ref().len());
        if n < 1 || v < 2 {
            return Err(Error::Argument(format!("binary dataset must be at least 1x2, got {n}x{v}")));
        }
        let mut out = Self::empty(n, v, DiscretizationPolicy::AlreadyBinary, vec![0.5; v]);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != v {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {v}", r.len())));
            }
            for (j, &b) in r.iter().enumerate() {
                if b != 0 {
                    out.set(i, j);
                }
            }
        }
        Ok(out)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.v
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[col * self.words + row / 64] >> (row % 64) & 1 == 1
    }

    /// Packed bits of one feature; bit `i % 64` of word `i / 64` is sample i.
    pub fn column(&self, col: usize) -> &[u64] {
        &self.bits[col * self.words..(col + 1) * self.words]
    }

    /// Number of samples where the feature is 1.
    pub fn ones(&self, col: usize) -> usize {
        self.ones[col] as usize
    }

    pub fn policy(&self) -> DiscretizationPolicy {
        self.policy
    }

    /// Per-feature threshold applied (value > threshold → 1).
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn to_array(&self) -> Array2<u8> {
        Array2::from_shape_fn((self.n, self.v), |(i, j)| u8::from(self.get(i, j)))
    }

    /// The binary matrix as a real-valued dataset (no names or labels).
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.to_array().mapv(f64::from), None, None)
    }
}

fn median(column: impl Iterator<Item = f64>) -> f64 {
    let mut xs: Vec<f64> = column.collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Binarize a dataset for tree learning. The source dataset is not modified.
pub fn discretize(d: &Dataset, policy: DiscretizationPolicy) -> Result<BinaryDataset> {
    policy.validate()?;
    let (n, v) = d.values.dim();
    let thresholds: Vec<f64> = match policy {
        DiscretizationPolicy::MedianThreshold => d
            .values
            .axis_iter(Axis(1))
            .map(|c| median(c.iter().copied()))
            .collect(),
        DiscretizationPolicy::FixedThreshold(t) => vec![t; v],
        DiscretizationPolicy::AlreadyBinary => {
            if let Some(((i, j), x)) = d
                .values
                .indexed_iter()
                .find(|(_, &x)| x != 0.0 && x != 1.0)
            {
                return Err(Error::Policy(format!(
                    "entry ({i}, {j}) = {x} is not binary"
                )));
            }
            vec![0.5; v]
        }
    };
    let mut out = BinaryDataset::empty(n, v, policy, thresholds);
    for ((i, j), &x) in d.values.indexed_iter() {
        if x > out.thresholds[j] {
            out.set(i, j);
        }
    }
    Ok(out)
}

/// Row indices of a seeded shuffle split into (train, valid, test).
///
/// Sizes are `floor(N * frac)` for train and valid; the rest is test.
pub fn split_indices(
    n: usize,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && valid_frac >= 0.0 && train_frac + valid_frac < 1.0) {
        return Err(Error::Argument(format!(
            "split fractions train={train_frac} valid={valid_frac} must satisfy 0 < train, 0 <= valid, train + valid < 1"
        )));
    }
    // The epsilon keeps exact products such as 0.29 * 100 from flooring down.
    let n_train = (n as f64 * train_frac + 1e-9).floor() as usize;
    let n_valid = (n as f64 * valid_frac + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let test = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    Ok((idx, valid, test))
}

/// Seeded disjoint split of a dataset. Every partition must be nonempty.
pub fn split(
    d: &Dataset,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = split_indices(d.n_samples(), train_frac, valid_frac, seed)?;
    for (name, part) in [("train", &tr), ("valid", &va), ("test", &te)] {
        if part.is_empty() {
            return Err(Error::Argument(format!(
                "{name} partition of {} samples is empty at train={train_frac} valid={valid_frac}",
                d.n_samples()
            )));
        }
    }
    Ok((d.select_rows(&tr)?, d.select_rows(&va)?, d.select_rows(&te)?))
}
