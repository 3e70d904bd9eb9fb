//! Datasets, the two-Gaussian synthetic benchmark, and CSV ingestion.
//!
//! The synthetic benchmark draws a source and a target Gaussian in the plane,
//! translates the target mean toward the source mean by an overlap factor,
//! and labels every point with a wiggly threshold on `x1`:
//!
//! ```text
//! y*(x) = 0  if x1 ≤ cos(a·sin(b·x2) + c·e^{d·x2} + (x2² + 2·x2 − 5)/2) + ε
//!         1  otherwise
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{self, BoxMuller};
use crate::{Error, Result};

/// Label value marking an unlabeled row.
pub const UNLABELED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<i64>,
    domain: Domain,
}

impl Dataset {
    /// `labels` may contain [`UNLABELED`]; every other entry must be a
    /// nonnegative class index.
    pub fn new(features: Array2<f64>, labels: Vec<i64>, domain: Domain) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if labels.len() != features.nrows() {
            return Err(Error::Shape {
                what: "labels",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features must be finite"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y < UNLABELED) {
            return Err(Error::input(format!("invalid label {bad}")));
        }
        Ok(Self {
            features,
            labels,
            domain,
        })
    }

    pub fn unlabeled(features: Array2<f64>, domain: Domain) -> Result<Self> {
        let n = features.nrows();
        Self::new(features, vec![UNLABELED; n], domain)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|&y| y >= 0)
    }

    pub fn has_any_label(&self) -> bool {
        self.labels.iter().any(|&y| y >= 0)
    }

    /// Labels as class indices; fails if any row is unlabeled.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        if !self.is_fully_labeled() {
            return Err(Error::MissingLabels(match self.domain {
                Domain::Source => "source rows",
                Domain::Target => "target rows",
            }));
        }
        Ok(self.labels.iter().map(|&y| y as usize).collect())
    }

    pub fn max_label(&self) -> Option<i64> {
        self.labels.iter().copied().filter(|&y| y >= 0).max()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            crate::nn::take_rows(self.x(), rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
            self.domain,
        )
    }

    pub fn with_labels(&self, labels: Vec<i64>) -> Result<Self> {
        Self::new(self.features.clone(), labels, self.domain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub source: Dataset,
    pub target: Dataset,
}

impl DatasetPair {
    pub fn new(source: Dataset, target: Dataset) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::Shape {
                what: "target feature dimension",
                expected: source.dim(),
                found: target.dim(),
            });
        }
        Ok(Self { source, target })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }
}

/// Train and validation splits of a synthetic pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: DatasetPair,
    pub val: DatasetPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl LabelParams {
    pub const ZERO: LabelParams = LabelParams {
        a: 0.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
    };

    pub fn threshold(&self, x2: f64) -> f64 {
        let inner =
            self.a * (self.b * x2).sin() + self.c * (self.d * x2).exp() + (x2 * x2 + 2.0 * x2 - 5.0) / 2.0;
        inner.cos()
    }
}

/// Class of `(x1, x2)` under the wiggly threshold, with an additive noise
/// draw on the threshold (0 for the noiseless labeling function).
pub fn label_point(x1: f64, x2: f64, params: &LabelParams, noise: f64) -> usize {
    if x1 <= params.threshold(x2) + noise {
        0
    } else {
        1
    }
}

pub type Cov2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub mean_source: [f64; 2],
    pub mean_target: [f64; 2],
    pub cov_source: Cov2,
    pub cov_target: Cov2,
    pub overlap_factor: f64,
    pub label_params: LabelParams,
    pub label_noise_sd: f64,
    /// Rows per domain in the training split.
    pub n_train: usize,
    /// Rows per domain in the validation split.
    pub n_val: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mean_source: [-3.0, 0.0],
            mean_target: [3.0, 0.0],
            cov_source: [[1.0, 0.0], [0.0, 1.0]],
            cov_target: [[1.0, 0.0], [0.0, 1.0]],
            overlap_factor: 0.0,
            label_params: LabelParams::ZERO,
            label_noise_sd: 0.05,
            n_train: 2000,
            n_val: 1250,
            seed: 0,
        }
    }
}

/// Lower Cholesky factor of a 2×2 symmetric positive-definite matrix.
fn cholesky2(cov: &Cov2) -> Result<[[f64; 2]; 2]> {
    let [[s11, s12], [s21, s22]] = *cov;
    if !cov.iter().flatten().all(|v| v.is_finite()) || (s12 - s21).abs() > 1e-12 * (1.0 + s12.abs()) {
        return Err(Error::config("covariance must be finite and symmetric"));
    }
    if s11 <= 0.0 {
        return Err(Error::config("covariance is not positive-definite"));
    }
    let l11 = s11.sqrt();
    let l21 = s12 / l11;
    let rem = s22 - l21 * l21;
    if rem <= 0.0 {
        return Err(Error::config("covariance is not positive-definite"));
    }
    Ok([[l11, 0.0], [l21, rem.sqrt()]])
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap_factor) {
            return Err(Error::config(format!(
                "overlap_factor {} outside [0, 1]",
                self.overlap_factor
            )));
        }
        if !self.label_noise_sd.is_finite() || self.label_noise_sd < 0.0 {
            return Err(Error::config("label_noise_sd must be finite and nonnegative"));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::config("n_train and n_val must be positive"));
        }
        cholesky2(&self.cov_source)?;
        cholesky2(&self.cov_target)?;
        Ok(())
    }

    /// Randomized benchmark instance: source mean in `[−2, 2]²`, target mean
    /// 4 to 8 units away in a random direction, each covariance a diagonal
    /// with per-axis variance in `[0.5, 2.5]` rotated by a random angle, and
    /// label parameters `a, b, c, d` in `[−2, 2]`.
    pub fn random(seed: u64, overlap_factor: f64, n_train: usize, n_val: usize) -> Self {
        let mut rng = seed::rng(seed::derive(seed, 0x5EED));
        let mean_source = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let dist = rng.gen_range(4.0..8.0);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let mean_target = [
            mean_source[0] + dist * angle.cos(),
            mean_source[1] + dist * angle.sin(),
        ];
        let random_cov = |rng: &mut rand_chacha::ChaCha8Rng| -> Cov2 {
            let v1: f64 = rng.gen_range(0.5..2.5);
            let v2: f64 = rng.gen_range(0.5..2.5);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (c, s) = (t.cos(), t.sin());
            let off = (v1 - v2) * c * s;
            [[v1 * c * c + v2 * s * s, off], [off, v1 * s * s + v2 * c * c]]
        };
        let cov_source = random_cov(&mut rng);
        let cov_target = random_cov(&mut rng);
        let label_params = LabelParams {
            a: rng.gen_range(-2.0..2.0),
            b: rng.gen_range(-2.0..2.0),
            c: rng.gen_range(-2.0..2.0),
            d: rng.gen_range(-2.0..2.0),
        };
        Self {
            mean_source,
            mean_target,
            cov_source,
            cov_target,
            overlap_factor,
            label_params,
            label_noise_sd: 0.05,
            n_train,
            n_val,
            seed,
        }
    }
}

/// Moves the target mean toward the source mean:
/// `μ_T ← μ_T + (μ_S − μ_T) · overlap_factor`.
pub fn apply_overlap(config: &SyntheticConfig) -> Result<SyntheticConfig> {
    if !(0.0..=1.0).contains(&config.overlap_factor) {
        return Err(Error::config(format!(
            "overlap_factor {} outside [0, 1]",
            config.overlap_factor
        )));
    }
    let mut out = *config;
    let f = config.overlap_factor;
    for k in 0..2 {
        out.mean_target[k] = config.mean_target[k] + (config.mean_source[k] - config.mean_target[k]) * f;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sample_domain(
    mean: [f64; 2],
    chol: [[f64; 2]; 2],
    n: usize,
    params: &LabelParams,
    noise_sd: f64,
    domain: Domain,
    rng: &mut rand_chacha::ChaCha8Rng,
    normal: &mut BoxMuller,
) -> Result<Dataset> {
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z1 = normal.sample(rng);
        let z2 = normal.sample(rng);
        let x1 = mean[0] + chol[0][0] * z1;
        let x2 = mean[1] + chol[1][0] * z1 + chol[1][1] * z2;
        let noise = noise_sd * normal.sample(rng);
        features[[i, 0]] = x1;
        features[[i, 1]] = x2;
        labels.push(label_point(x1, x2, params, noise) as i64);
    }
    Dataset::new(features, labels, domain)
}

/// Draws train and validation splits for both domains after applying the
/// overlap translation. Every point gets a fresh label-noise draw.
pub fn generate_pair(config: &SyntheticConfig) -> Result<SyntheticSplits> {
    config.validate()?;
    let cfg = apply_overlap(config)?;
    let chol_s = cholesky2(&cfg.cov_source)?;
    let chol_t = cholesky2(&cfg.cov_target)?;
    let mut rng = seed::rng(cfg.seed);
    let mut normal = BoxMuller::new();
    let p = &cfg.label_params;
    let sd = cfg.label_noise_sd;
    let mut draw = |mean, chol, n, domain| sample_domain(mean, chol, n, p, sd, domain, &mut rng, &mut normal);
    let source_train = draw(cfg.mean_source, chol_s, cfg.n_train, Domain::Source)?;
    let target_train = draw(cfg.mean_target, chol_t, cfg.n_train, Domain::Target)?;
    let source_val = draw(cfg.mean_source, chol_s, cfg.n_val, Domain::Source)?;
    let target_val = draw(cfg.mean_target, chol_t, cfg.n_val, Domain::Target)?;
    Ok(SyntheticSplits {
        train: DatasetPair::new(source_train, target_train)?,
        val: DatasetPair::new(source_val, target_val)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvMode {
    /// Columns are learned representations; ĥ is fit on them.
    Features,
    /// Columns are ĥ's logits, one per class.
    Logits,
}

fn csv_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses the `domain,label,f0,...` layout. `origin` only labels errors.
pub fn read_csv<R: Read>(reader: R, mode: CsvMode, origin: &Path) -> Result<DatasetPair> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(csv_err(origin, 1, "missing header")),
    };
    let header = header.trim_start_matches('\u{feff}');
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "domain" || cols[1] != "label" {
        return Err(csv_err(origin, 1, "header must start with `domain,label,f0`"));
    }
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(csv_err(origin, 1, format!("expected column `f{i}`, found `{c}`")));
        }
    }
    let dim = cols.len() - 2;

    let mut rows: [(Vec<f64>, Vec<i64>); 2] = Default::default();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(csv_err(
                origin,
                line_no,
                format!("expected {} cells, found {}", cols.len(), cells.len()),
            ));
        }
        let domain = match cells[0] {
            "0" => 0,
            "1" => 1,
            other => return Err(csv_err(origin, line_no, format!("unknown domain `{other}`"))),
        };
        let label: i64 = cells[1]
            .parse()
            .map_err(|_| csv_err(origin, line_no, format!("non-integer label `{}`", cells[1])))?;
        if label < UNLABELED {
            return Err(csv_err(origin, line_no, format!("invalid label {label}")));
        }
        if mode == CsvMode::Logits && label >= dim as i64 {
            return Err(csv_err(
                origin,
                line_no,
                format!("label {label} out of range for {dim} logit columns"),
            ));
        }
        let (feats, labels) = &mut rows[domain];
        for c in &cells[2..] {
            let v: f64 = c
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| csv_err(origin, line_no, format!("non-numeric cell `{c}`")))?;
            feats.push(v);
        }
        labels.push(label);
    }
    if mode == CsvMode::Logits && dim < 2 {
        return Err(csv_err(origin, 1, "logits mode needs at least 2 columns"));
    }
    let [(sf, sl), (tf, tl)] = rows;
    if sl.is_empty() {
        return Err(Error::Empty("source rows"));
    }
    if tl.is_empty() {
        return Err(Error::Empty("target rows"));
    }
    let source = Dataset::new(Array2::from_shape_vec((sl.len(), dim), sf).unwrap(), sl, Domain::Source)?;
    let target = Dataset::new(Array2::from_shape_vec((tl.len(), dim), tf).unwrap(), tl, Domain::Target)?;
    DatasetPair::new(source, target)
}

pub fn load_csv(path: impl AsRef<Path>, mode: CsvMode) -> Result<DatasetPair> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(Error::io_at(path))?;
    read_csv(file, mode, path)
}

/// Writes source rows then target rows; floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(pair: &DatasetPair, mut out: W) -> Result<()> {
    let mut header = String::from("domain,label");
    for i in 0..pair.dim() {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(out, "{header}")?;
    for ds in [&pair.source, &pair.target] {
        for (row, label) in ds.features.rows().into_iter().zip(&ds.labels) {
            write!(out, "{},{}", ds.domain.code(), label)?;
            for v in row {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn save_csv(pair: &DatasetPair, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_csv(pair, &mut out)?;
    out.flush()?;
    Ok(())
}
