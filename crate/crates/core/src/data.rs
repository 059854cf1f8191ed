//! Dataset ingestion, label encoding, synthetic mixtures and error metrics.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Maps original label strings to contiguous class indices in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelEncoder {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LabelEncoder {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut enc = Self::default();
        for name in names {
            let name = name.into();
            if enc.lookup.contains_key(&name) {
                return Err(Error::Domain(format!("duplicate class name {name:?}")));
            }
            enc.insert(name);
        }
        Ok(enc)
    }

    fn insert(&mut self, name: String) -> usize {
        let next = self.names.len();
        *self.lookup.entry(name.clone()).or_insert_with(|| {
            self.names.push(name);
            next
        })
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn decode(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// Zero-based class indices.
    pub labels: Vec<usize>,
    pub encoder: LabelEncoder,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, encoder: LabelEncoder) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::Empty("dataset has no rows"));
        }
        if d == 0 {
            return Err(Error::Empty("dataset has no feature columns"));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature value {bad}")));
        }
        let m = encoder.n_classes();
        if let Some(bad) = labels.iter().find(|&&y| y >= m) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {m} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            encoder,
            weights: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.encoder.n_classes()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Number of samples per class.
    /// The same samples with labels mapped into another alphabet by name.
    pub fn reencode(&self, encoder: &LabelEncoder) -> Result<Dataset> {
        let labels = self
            .labels
            .iter()
            .map(|&y| {
                let name = self.encoder.decode(y).expect("label within alphabet");
                encoder
                    .encode(name)
                    .ok_or_else(|| Error::Schema(format!("label {name:?} is not a known class")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Dataset::new(self.features.clone(), labels, encoder.clone())?;
        out.weights = self.weights.clone();
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Fails unless the data has at least two classes, every class occurs,
    /// and there are at least as many samples as classes.
    pub fn check_trainable(&self) -> Result<()> {
        let m = self.n_classes();
        if m < 2 {
            return Err(Error::Degenerate(format!(
                "training needs at least 2 classes, found {m}"
            )));
        }
        if self.n_samples() < m {
            return Err(Error::Degenerate(format!(
                "{} samples for {m} classes",
                self.n_samples()
            )));
        }
        if let Some(j) = self.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::Degenerate(format!(
                "class {:?} has no training samples",
                self.encoder.decode(j).unwrap_or("?")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Comma,
    Whitespace,
}

impl Delimiter {
    /// Comma if the first non-blank line contains one, whitespace otherwise.
    pub fn detect(path: &Path) -> Result<Delimiter> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        Ok(if first.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    pub delimiter: Delimiter,
    pub label_column: LabelColumn,
    pub skip_header: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            label_column: LabelColumn::Last,
            skip_header: false,
        }
    }
}

/// Numeric features with their raw label strings, before encoding.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub features: Array2<f64>,
    pub labels: Vec<String>,
}

pub fn read_delimited(path: &Path, opts: &ReadOptions) -> Result<RawTable> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };

    let mut width: Option<usize> = None;
    let mut label_at = 0;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut header_pending = opts.skip_header;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let cells: Vec<&str> = match opts.delimiter {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        };
        match width {
            None => {
                if cells.len() < 2 {
                    return Err(parse_err(
                        line_no,
                        1,
                        "need at least one feature column and a label column".into(),
                    ));
                }
                label_at = match opts.label_column {
                    LabelColumn::Last => cells.len() - 1,
                    LabelColumn::Index(i) if i < cells.len() => i,
                    LabelColumn::Index(i) => {
                        return Err(parse_err(
                            line_no,
                            i + 1,
                            format!("label column {i} beyond {} columns", cells.len()),
                        ))
                    }
                };
                width = Some(cells.len());
            }
            Some(w) if w != cells.len() => {
                return Err(parse_err(
                    line_no,
                    cells.len().min(w) + 1,
                    format!("expected {w} columns, found {}", cells.len()),
                ));
            }
            Some(_) => {}
        }
        for (c, cell) in cells.iter().enumerate() {
            if c == label_at {
                labels.push((*cell).to_string());
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line_no, c + 1, format!("non-numeric feature {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(
                    line_no,
                    c + 1,
                    format!("non-finite feature {cell:?}"),
                ));
            }
            values.push(v);
        }
    }
    let Some(width) = width else {
        return Err(Error::Empty("no data rows in file"));
    };
    let features =
        Array2::from_shape_vec((labels.len(), width - 1), values).expect("row widths were checked");
    Ok(RawTable { features, labels })
}

impl RawTable {
    /// Encodes with a fresh first-appearance encoder.
    pub fn encode(self) -> Result<Dataset> {
        let mut encoder = LabelEncoder::default();
        let labels = self.labels.into_iter().map(|l| encoder.insert(l)).collect();
        Dataset::new(self.features, labels, encoder)
    }

    /// Encodes through an existing label alphabet, e.g. a trained model's.
    pub fn encode_with(self, encoder: &LabelEncoder) -> Result<Dataset> {
        let labels = self
            .labels
            .iter()
            .map(|l| {
                encoder
                    .encode(l)
                    .ok_or_else(|| Error::Schema(format!("label {l:?} is not a known class")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.features, labels, encoder.clone())
    }
}

pub fn load_delimited(path: &Path, opts: &ReadOptions) -> Result<Dataset> {
    read_delimited(path, opts)?.encode()
}

/// Parameters of an equal-prior spherical Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples: usize,
    pub dims: usize,
    pub separation: f64,
    pub seed: u64,
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "synth_blobs m={} n={} d={} separation={} seed={}",
            self.classes, self.samples, self.dims, self.separation, self.seed
        )
    }
}

/// Monte-Carlo draws used for the Bayes-error estimate.
pub const BAYES_DRAWS: usize = 100_000;

/// Unit-covariance Gaussian classes centered on the vertices of a regular
/// simplex of circumradius `separation`.
#[derive(Debug, Clone)]
pub struct BlobMixture {
    centers: Vec<Vec<f64>>,
}

impl BlobMixture {
    pub fn new(classes: usize, dims: usize, separation: f64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if dims + 1 < classes {
            return Err(Error::Config(format!(
                "{classes} simplex vertices need at least {} dimensions, got {dims}",
                classes - 1
            )));
        }
        if !separation.is_finite() || separation < 0.0 {
            return Err(Error::Config(format!("invalid separation {separation}")));
        }
        let m = classes;
        // Centered basis vectors e_j - 1/m span an (m-1)-dimensional subspace;
        // express each in an orthonormal basis of it.
        let vertex = |j: usize| -> Vec<f64> {
            (0..m)
                .map(|k| if k == j { 1.0 } else { 0.0 } - 1.0 / m as f64)
                .collect()
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m - 1);
        for j in 0..m - 1 {
            let mut v = vertex(j);
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        let radius = ((m - 1) as f64 / m as f64).sqrt();
        let centers = (0..m)
            .map(|j| {
                let v = vertex(j);
                let mut c = vec![0.0; dims];
                for (k, b) in basis.iter().enumerate() {
                    c[k] = separation * dot(&v, b) / radius;
                }
                c
            })
            .collect();
        Ok(Self { centers })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn n_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dims(&self) -> usize {
        self.centers[0].len()
    }

    fn draw(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (x, c) in out.iter_mut().zip(&self.centers[class]) {
            let z: f64 = StandardNormal.sample(rng);
            *x = c + z;
        }
    }

    /// `n` samples with classes cycling `0, 1, .., m-1`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let (m, d) = (self.n_classes(), self.dims());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::zeros((n, d));
        let labels: Vec<usize> = (0..n).map(|i| i % m).collect();
        for (i, &y) in labels.iter().enumerate() {
            let mut row = features.row_mut(i);
            self.draw(y, &mut rng, row.as_slice_mut().expect("standard layout"));
        }
        let encoder = LabelEncoder::from_names((1..=m).map(|j| j.to_string()))?;
        Dataset::new(features, labels, encoder)
    }

    /// Most probable class under the true mixture: the nearest center.
    pub fn bayes_class(&self, x: &[f64]) -> usize {
        let dist = |c: &[f64]| -> f64 { c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut best = 0;
        let mut best_dist = dist(&self.centers[0]);
        for (j, c) in self.centers.iter().enumerate().skip(1) {
            let dj = dist(c);
            if dj < best_dist {
                best = j;
                best_dist = dj;
            }
        }
        best
    }

    /// Error rate of the Bayes rule on `draws` fresh equal-prior samples.
    pub fn bayes_error(&self, draws: usize, seed: u64) -> f64 {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.dims()];
        let mut wrong = 0usize;
        for _ in 0..draws {
            let y = rng.random_range(0..self.n_classes());
            self.draw(y, &mut rng, &mut x);
            if self.bayes_class(&x) != y {
                wrong += 1;
            }
        }
        wrong as f64 / draws as f64
    }
}

/// Samples a blob dataset and estimates its Bayes error from fresh draws.
pub fn synth_blobs(spec: &SynthSpec) -> Result<(Dataset, f64)> {
    if spec.samples < spec.classes {
        return Err(Error::Config(format!(
            "need at least as many samples as classes ({} < {})",
            spec.samples, spec.classes
        )));
    }
    let mixture = BlobMixture::new(spec.classes, spec.dims, spec.separation)?;
    let data = mixture.sample(spec.samples, spec.seed)?;
    let bayes = mixture.bayes_error(BAYES_DRAWS, spec.seed ^ 0x5DEE_CE66_D1CE_5EED);
    Ok((data, bayes))
}

pub fn misclassification_error(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::Empty("error rate over zero samples"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    let wrong = predicted.iter().zip(actual).filter(|(p, a)| p != a).count();
    Ok(wrong as f64 / actual.len() as f64)
}

/// Binomial standard error of an error rate measured on `n_test` samples.
pub fn error_standard_error(err: f64, n_test: usize) -> f64 {
    (err * (1.0 - err) / n_test as f64).sqrt()
}

/// `counts[actual][predicted]`.
pub fn confusion_matrix(
    predicted: &[usize],
    actual: &[usize],
    n_classes: usize,
) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; n_classes]; n_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        counts[a][p] += 1;
    }
    counts
}
