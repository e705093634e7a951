//! Dataset ingestion, preprocessing and stream orders.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::Task;
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// `None` until the dataset has been preprocessed for a task.
    pub task: Option<Task>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(invalid("feature rows and labels differ in length"));
        }
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != dim) {
            return Err(invalid("feature rows have different lengths"));
        }
        Ok(Self {
            name: name.into(),
            task: None,
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Examples in the given order.
    pub fn stream<'a>(&'a self, order: &'a [usize]) -> impl Iterator<Item = (&'a [f64], f64)> + 'a {
        order
            .iter()
            .map(move |&i| (self.features[i].as_slice(), self.labels[i]))
    }

    /// Dense LIBSVM text, every coordinate written.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, label) in self.features.iter().zip(&self.labels) {
            write!(out, "{label}").expect("writing to a String");
            for (j, v) in row.iter().enumerate() {
                write!(out, " {}:{v}", j + 1).expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// First `n` rows (or all of them).
    pub fn truncated(mut self, n: usize) -> Self {
        self.features.truncate(n);
        self.labels.truncate(n);
        self
    }

    /// Rows reordered by `order`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            task: self.task,
            features: order.iter().map(|&i| self.features[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses `label idx:val ...` lines with 1-based indices into a dense matrix.
/// Absent coordinates are zero and the dimension is the largest index seen.
pub fn parse_libsvm(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_error(0, format!("not UTF-8: {e}")))?;
    let mut rows: Vec<BTreeMap<usize, f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_token = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_token
            .parse()
            .map_err(|_| parse_error(lineno, format!("bad label '{label_token}'")))?;
        let mut row = BTreeMap::new();
        for token in tokens {
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| parse_error(lineno, format!("expected idx:val, got '{token}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(lineno, format!("bad index in '{token}'")))?;
            if idx == 0 {
                return Err(parse_error(lineno, "indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(lineno, format!("bad value in '{token}'")))?;
            if !val.is_finite() || !label.is_finite() {
                return Err(parse_error(lineno, "non-finite value"));
            }
            if row.insert(idx, val).is_some() {
                log::warn!("line {lineno}: duplicate index {idx}, keeping the last value");
            }
            dim = dim.max(idx);
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(parse_error(0, "no examples"));
    }
    if dim == 0 {
        return Err(parse_error(0, "no features"));
    }
    let features = rows
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0; dim];
            for (idx, v) in row {
                dense[idx - 1] = v;
            }
            dense
        })
        .collect();
    Dataset::new("libsvm", features, labels)
}

/// Parses a numeric CSV. A first row with any non-numeric cell is taken as a
/// header. `label_column` defaults to the last column.
pub fn parse_csv(bytes: &[u8], label_column: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut label_col = 0;
    for (i, record) in reader.records().enumerate() {
        let lineno = i + 1;
        let record = record.map_err(|e| parse_error(lineno, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if width.is_none() {
            let w = parsed.len();
            if w < 2 {
                return Err(invalid(
                    "CSV needs a label column and at least one feature column",
                ));
            }
            label_col = label_column.unwrap_or(w - 1);
            if label_col >= w {
                return Err(invalid(format!(
                    "label column {label_col} out of range for {w} columns"
                )));
            }
            width = Some(w);
            if parsed.iter().any(Option::is_none) {
                continue;
            }
        }
        let w = width.expect("set on first row");
        if parsed.len() != w {
            return Err(parse_error(
                lineno,
                format!("expected {w} columns, found {}", parsed.len()),
            ));
        }
        let mut row = Vec::with_capacity(w - 1);
        for (col, v) in parsed.iter().enumerate() {
            let v = v.filter(|v| v.is_finite()).ok_or_else(|| {
                parse_error(
                    lineno,
                    format!("column {}: non-numeric cell '{}'", col + 1, &record[col]),
                )
            })?;
            if col == label_col {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(parse_error(0, "no examples"));
    }
    Dataset::new("csv", features, labels)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Affine map of `[lo, hi]` onto `[a, b]`; a column already spanning
/// exactly `[a, b]` is left bit-identical.
fn rescale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if lo == a && hi == b {
        v
    } else if hi == lo {
        0.5 * (a + b)
    } else {
        a + (v - lo) / (hi - lo) * (b - a)
    }
}

/// Min-max features onto `[-1, 1]` (constant columns to 0); regression
/// labels onto `[0, 1]`; the two classification labels onto `{-1, +1}`.
pub fn preprocess(raw: &Dataset, task: Task) -> Result<Dataset> {
    if raw.len() < 2 {
        return Err(invalid("preprocessing needs at least two rows"));
    }
    let mut out = raw.clone();
    for j in 0..raw.dim {
        let (lo, hi) = min_max(raw.features.iter().map(|r| r[j]));
        for row in &mut out.features {
            row[j] = rescale(row[j], lo, hi, -1.0, 1.0);
        }
    }
    match task {
        Task::Regression => {
            let (lo, hi) = min_max(raw.labels.iter().copied());
            if hi == lo {
                out.labels.iter_mut().for_each(|y| *y = 0.0);
            } else {
                for y in &mut out.labels {
                    *y = rescale(*y, lo, hi, 0.0, 1.0);
                }
            }
        }
        Task::Classification => {
            let mut classes: Vec<f64> = raw.labels.clone();
            classes.sort_by(f64::total_cmp);
            classes.dedup();
            match classes.as_slice() {
                [only] => {
                    let s = if *only > 0.0 { 1.0 } else { -1.0 };
                    out.labels.iter_mut().for_each(|y| *y = s);
                }
                [low, _] => {
                    for y in &mut out.labels {
                        *y = if *y == *low { -1.0 } else { 1.0 };
                    }
                }
                _ => {
                    return Err(Error::InvalidTask(format!(
                        "classification needs two classes, found {}",
                        classes.len()
                    )))
                }
            }
        }
    }
    out.task = Some(task);
    Ok(out)
}

/// A seeded stream order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamOrder {
    pub permutation: Vec<usize>,
    pub seed: u64,
}

/// Fisher-Yates shuffle of `0..len` from `seed`.
pub fn permute(len: usize, seed: u64) -> StreamOrder {
    let mut permutation: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation.shuffle(&mut rng);
    StreamOrder { permutation, seed }
}

/// A target function inside one Gaussian RKHS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub kernel: KernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
}

impl KernelExpansion {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coefficients)
            .map(|(c, a)| a * self.kernel.eval_unchecked(c, x))
            .sum()
    }

    pub fn sq_norm(&self) -> f64 {
        let mut total = 0.0;
        for (ci, ai) in self.centers.iter().zip(&self.coefficients) {
            for (cj, aj) in self.centers.iter().zip(&self.coefficients) {
                total += ai * aj * self.kernel.eval_unchecked(ci, cj);
            }
        }
        total
    }
}

/// Regression stream `y = f0(x) + noise` with `f0` a kernel expansion of
/// RKHS norm `norm`; inputs uniform on `[-1, 1]^dim`, labels clamped to
/// `[-1, 1]`.
pub fn realizable_regression(
    len: usize,
    dim: usize,
    width: f64,
    centers: usize,
    norm: f64,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, KernelExpansion)> {
    if len == 0 || dim == 0 || centers == 0 {
        return Err(invalid("generator sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = KernelSpec::gaussian(width, 0)?;
    let centers: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let coefficients: Vec<f64> = centers
        .iter()
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut target = KernelExpansion {
        kernel,
        centers,
        coefficients,
    };
    let scale = norm / target.sq_norm().sqrt();
    target.coefficients.iter_mut().for_each(|a| *a *= scale);

    let features: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = features
        .iter()
        .map(|x| {
            let eps: f64 = rng.sample(StandardNormal);
            (target.eval(x) + noise * eps).clamp(-1.0, 1.0)
        })
        .collect();
    let mut ds = Dataset::new("realizable", features, labels)?;
    ds.task = Some(Task::Regression);
    Ok((ds, target))
}

/// Stream whose single coordinate is the label itself, uniform on `[0, 1]`.
/// Paired with scripted arms of offset 0 and 1 it yields per-arm losses of
/// exactly 0 and 1 under the square or absolute loss.
pub fn separation_stream(len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
    let features = labels.iter().map(|&y| vec![y]).collect();
    Dataset {
        name: "separation".into(),
        task: Some(Task::Regression),
        features,
        labels,
        dim: 1,
    }
}
