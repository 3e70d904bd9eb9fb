//! Dense feed-forward networks with exact manual backpropagation and Adam.
//!
//! The same [`Mlp`] type serves as the studied classifier `ĥ`, the critic
//! `h̄`, and the domain classifier `d`. Hidden layers use ReLU; the output
//! layer returns raw logits.
//!
//! Weights are stored as `(fan_in, fan_out)` matrices so a batch forward pass
//! is `X · W + b`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::losses::LossKind;
use crate::seed;
use crate::{Error, Result};

const FORMAT_MAGIC: &str = "oddbound-mlp v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Gradients with the same layout as the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableScope {
    #[default]
    All,
    LastLayer,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::config("an MLP needs at least input and output dims"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config("layer dims must be positive"));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = seed::rng(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.gen_range(-limit..limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Array2::zeros((p[0], p[1])))
                .collect(),
            biases: layer_dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    /// A single linear layer computing the identity map on `dim` inputs.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(&[dim, dim])?;
        m.weights[0] = Array2::eye(dim);
        Ok(m)
    }

    pub fn from_parameters(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::config("need one bias vector per weight matrix"));
        }
        let mut layer_dims = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.nrows() != *layer_dims.last().unwrap() {
                return Err(Error::Shape {
                    what: "weight rows",
                    expected: *layer_dims.last().unwrap(),
                    found: w.nrows(),
                });
            }
            if b.len() != w.ncols() {
                return Err(Error::Shape {
                    what: "bias length",
                    expected: w.ncols(),
                    found: b.len(),
                });
            }
            layer_dims.push(w.ncols());
        }
        check_dims(&layer_dims)?;
        let all_finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::input("non-finite parameter"));
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All parameters flattened layer by layer: weights row-major, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                what: "flat parameter vector",
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                what: "input columns",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Logits for every row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok(predict_logits(logits.view()))
    }

    /// Mean weighted loss `(1/n) Σ wᵢ ℓ(h(xᵢ), yᵢ)` and its exact gradient
    /// with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[usize],
        loss: LossKind,
        weights: Option<&[f64]>,
    ) -> Result<(f64, Gradients)> {
        let mut grads = self.zero_grads();
        let value = self.accumulate(x, targets, loss, weights, 1.0 / x.nrows().max(1) as f64, &mut grads)?;
        Ok((value, grads))
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Adds `scale · Σ wᵢ ∇ℓᵢ` into `grads` and returns `scale · Σ wᵢ ℓᵢ`.
    pub(crate) fn accumulate(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[usize],
        loss: LossKind,
        weights: Option<&[f64]>,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check_input(x)?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if targets.len() != n {
            return Err(Error::Shape {
                what: "targets",
                expected: n,
                found: targets.len(),
            });
        }
        let k = self.output_dim();
        if k < 2 {
            return Err(Error::config("loss needs at least 2 output classes"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::input(format!("target class {bad} out of range for {k} classes")));
        }
        if let Some(w) = weights {
            if w.len() != n {
                return Err(Error::Shape {
                    what: "per-sample weights",
                    expected: n,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::input("per-sample weights must be finite and nonnegative"));
            }
        }

        let last = self.num_layers() - 1;
        // pre-activations of every layer; activations are recomputed from them
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = x.to_owned();
        let mut inputs = Vec::with_capacity(self.num_layers());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            let next = if l < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }

        let logits = &pre[last];
        let mut delta = Array2::<f64>::zeros((n, k));
        let mut total = 0.0;
        for (i, (row, mut drow)) in logits
            .axis_iter(Axis(0))
            .zip(delta.axis_iter_mut(Axis(0)))
            .enumerate()
        {
            let w = weights.map_or(1.0, |w| w[i]);
            let row = row.as_slice().expect("contiguous logits");
            let drow = drow.as_slice_mut().expect("contiguous delta");
            let value = loss.value_and_grad(row, targets[i], w * scale, drow);
            total += w * value;
        }

        for l in (0..=last).rev() {
            let input = &inputs[l];
            grads.weights[l] += &input.t().dot(&delta);
            grads.biases[l] += &delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                Zip::from(&mut upstream)
                    .and(&pre[l - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        Ok(scale * total)
    }

    /// Writes the self-describing text format: a header with the layer dims
    /// and activation, then every parameter in row-major order with 17
    /// significant digits.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{FORMAT_MAGIC}")?;
        writeln!(out, "layer_dims {}", dims.join(" "))?;
        writeln!(out, "hidden_activation relu")?;
        writeln!(out, "output logits")?;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            writeln!(out, "weights {l} {} {}", w.nrows(), w.ncols())?;
            for row in w.axis_iter(Axis(0)) {
                writeln!(out, "{}", format_row(row.iter()))?;
            }
            writeln!(out, "bias {l} {}", b.len())?;
            writeln!(out, "{}", format_row(b.iter()))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != FORMAT_MAGIC {
            return Err(Error::ModelFormat("missing header".into()));
        }
        let dims_line = next()?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("layer_dims ")
            .ok_or_else(|| Error::ModelFormat("expected layer_dims".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::ModelFormat(format!("bad dim {t:?}"))))
            .collect::<Result<_>>()?;
        check_dims(&dims).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if next()?.trim() != "hidden_activation relu" {
            return Err(Error::ModelFormat("unsupported hidden activation".into()));
        }
        if next()?.trim() != "output logits" {
            return Err(Error::ModelFormat("unsupported output".into()));
        }
        let mut model = Self::zeros(&dims)?;
        for l in 0..model.num_layers() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let expect = format!("weights {l} {fan_in} {fan_out}");
            if next()?.trim() != expect {
                return Err(Error::ModelFormat(format!("expected `{expect}`")));
            }
            for r in 0..fan_in {
                let row = parse_row(&next()?, fan_out)?;
                model.weights[l].row_mut(r).assign(&Array1::from(row));
            }
            let expect = format!("bias {l} {fan_out}");
            if next()?.trim() != expect {
                return Err(Error::ModelFormat(format!("expected `{expect}`")));
            }
            model.biases[l] = Array1::from(parse_row(&next()?, fan_out)?);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(Error::io_at(path))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn format_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:.16e}").unwrap();
    }
    s
}

fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::ModelFormat(format!("bad parameter {t:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::ModelFormat(format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Row-wise argmax of a logit matrix.
pub fn predict_logits(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| match row.as_slice() {
            Some(s) => argmax(s),
            None => argmax(&row.to_vec()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: model.zero_grads(),
            v: model.zero_grads(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. Layers outside `scope` keep their parameters and
    /// moments untouched.
    pub fn update(&mut self, model: &mut Mlp, grads: &Gradients, scope: TrainableScope) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let first = match scope {
            TrainableScope::All => 0,
            TrainableScope::LastLayer => model.num_layers() - 1,
        };
        let (weights, biases) = model.params_mut();
        let adam = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        };
        for l in first..weights.len() {
            Zip::from(&mut weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(adam);
            Zip::from(&mut biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(adam);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Rows per minibatch; 0 trains on the full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub convergence_tol: f64,
    pub convergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 1000,
            batch_size: 0,
            seed: 0,
            convergence_tol: 1e-4,
            convergence_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.convergence_patience == 0 {
            return Err(Error::config("convergence_patience must be at least 1"));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::config("convergence_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// One additive piece of a training objective: the mean weighted loss over
/// its rows.
#[derive(Debug, Clone, Copy)]
pub struct TrainTerm<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: &'a [usize],
    pub loss: LossKind,
    pub weights: Option<&'a [f64]>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Objective value per epoch (mean over the epoch's minibatches).
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
}

/// Minimizes the sum of the per-term mean losses with Adam.
///
/// With minibatching every term is shuffled independently and cut into the
/// same number of batches, so each step sees a slice of every term. The
/// `on_epoch` hook runs after each epoch with the updated model.
pub fn train_terms(
    mut model: Mlp,
    terms: &[TrainTerm<'_>],
    config: &TrainConfig,
    scope: TrainableScope,
    mut on_epoch: impl FnMut(usize, &Mlp),
) -> Result<TrainOutcome> {
    config.validate()?;
    if terms.is_empty() || terms.iter().any(|t| t.inputs.nrows() == 0) {
        return Err(Error::Empty("training set"));
    }
    let mut adam = AdamState::new(&model, AdamConfig::with_learning_rate(config.learning_rate));
    let mut rng = seed::rng(config.seed);
    let largest = terms.iter().map(|t| t.inputs.nrows()).max().unwrap();
    let batches = if config.batch_size == 0 {
        1
    } else {
        largest.div_ceil(config.batch_size)
    };
    let mut orders: Vec<Vec<usize>> = terms.iter().map(|t| (0..t.inputs.nrows()).collect()).collect();

    let mut trace = Vec::with_capacity(config.max_epochs);
    let mut calm_epochs = 0;
    let mut converged = false;
    for epoch in 0..config.max_epochs {
        let mut epoch_loss = 0.0;
        if batches == 1 {
            let mut grads = model.zero_grads();
            for t in terms {
                let scale = 1.0 / t.inputs.nrows() as f64;
                epoch_loss += model.accumulate(t.inputs, t.targets, t.loss, t.weights, scale, &mut grads)?;
            }
            check_finite(epoch, epoch_loss)?;
            adam.update(&mut model, &grads, scope);
        } else {
            for order in &mut orders {
                order.shuffle(&mut rng);
            }
            for b in 0..batches {
                let mut grads = model.zero_grads();
                let mut batch_loss = 0.0;
                for (t, order) in terms.iter().zip(&orders) {
                    let n = order.len();
                    let lo = b * n / batches;
                    let hi = (b + 1) * n / batches;
                    if lo == hi {
                        continue;
                    }
                    let idx = &order[lo..hi];
                    let x = t.inputs.select(Axis(0), idx);
                    let y: Vec<usize> = idx.iter().map(|&i| t.targets[i]).collect();
                    let w: Option<Vec<f64>> = t.weights.map(|w| idx.iter().map(|&i| w[i]).collect());
                    let scale = 1.0 / idx.len() as f64;
                    batch_loss += model.accumulate(x.view(), &y, t.loss, w.as_deref(), scale, &mut grads)?;
                }
                check_finite(epoch, batch_loss)?;
                adam.update(&mut model, &grads, scope);
                epoch_loss += batch_loss / batches as f64;
            }
        }
        if let Some(&prev) = trace.last() {
            let delta: f64 = epoch_loss - prev;
            if delta.abs() < config.convergence_tol {
                calm_epochs += 1;
            } else {
                calm_epochs = 0;
            }
        }
        trace.push(epoch_loss);
        on_epoch(epoch, &model);
        if calm_epochs >= config.convergence_patience {
            converged = true;
            break;
        }
    }
    let epochs_run = trace.len();
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
        epochs_run,
        converged,
    })
}

fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

/// Trains on a labeled dataset with a single loss.
pub fn train(
    model: Mlp,
    dataset: &Dataset,
    loss: LossKind,
    weights: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.n() == 0 {
        return Err(Error::Empty("dataset"));
    }
    let targets = dataset.class_labels()?;
    let term = TrainTerm {
        inputs: dataset.features().view(),
        targets: &targets,
        loss,
        weights,
    };
    train_terms(model, &[term], config, TrainableScope::All, |_, _| {})
}

/// Fraction of rows whose prediction matches `labels`.
pub fn accuracy(model: &Mlp, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let preds = model.predict(x)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / x.nrows() as f64)
}

/// Copies `rows` of `x` (utility for splits and subsamples).
pub(crate) fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}
