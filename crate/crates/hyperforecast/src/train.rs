//! Training: per-instance loss averaged over the historical windows, AdamW
//! with decoupled weight decay, gradient clipping, seeded shuffling, early
//! stopping on the validation metric, and evaluation dispatch.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Var};
use crate::cells::{gru_step, CellKind, GruParams};
use crate::data::{HistoricalSet, Instance, NormStats};
use crate::error::{Error, Result};
use crate::metrics::{classification_scores, regression_metrics, Metrics};
use crate::model::{BoundModel, HyperModel, ModelConfig, PredictMode, PredictionHead, Task};
use crate::tensor::{Shape, Tensor};

/// Training criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Mean squared error over the d_y * t_y outputs.
    L2,
    /// Negative log-likelihood of the true class under the softmax head.
    CrossEntropy,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::L2 => "l2",
            Objective::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Objective::L2),
            "cross_entropy" => Ok(Objective::CrossEntropy),
            other => Err(Error::config(format!("unknown objective '{}'", other))),
        }
    }

    pub fn check_task(&self, task: Task) -> Result<()> {
        let ok = matches!(
            (self, task),
            (Objective::L2, Task::Regression) | (Objective::CrossEntropy, Task::Classification)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "objective {} does not fit task {}",
                self.as_str(),
                task.as_str()
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
    pub patience: usize,
    pub clip_norm: f64,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            objective: Objective::L2,
            patience: 10,
            clip_norm: 5.0,
            verbose: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// One training example: the instance plus its prepared historical set.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub inst: Instance,
    pub hist: HistoricalSet,
}

/// Build one criterion term on the tape.
fn criterion_on_tape(
    tape: &mut Tape,
    objective: Objective,
    output: Var,
    inst: &Instance,
) -> Result<Var> {
    match objective {
        Objective::L2 => {
            let target = tape.constant(inst.y.flatten());
            let diff = tape.sub(output, target)?;
            let sq = tape.mul(diff, diff)?;
            Ok(tape.mean(sq))
        }
        Objective::CrossEntropy => {
            let n_classes = tape.value(output).len();
            let label = inst.y.data()[0];
            let class = label as usize;
            if label.fract() != 0.0 || class >= n_classes {
                return Err(Error::data(format!(
                    "class label {} invalid for {} classes",
                    label, n_classes
                )));
            }
            let ls = tape.log_softmax(output)?;
            let picked = tape.slice(ls, class, 1)?;
            Ok(tape.scale_const(picked, -1.0))
        }
    }
}

/// The per-instance training loss: mean over the historical windows of
/// criterion(prediction from window n, target). With one window this is the
/// raw criterion.
pub fn loss_instance(
    tape: &mut Tape,
    bound: &BoundModel,
    inst: &Instance,
    hist: &HistoricalSet,
    objective: Objective,
) -> Result<Var> {
    objective.check_task(bound.config.task)?;
    if hist.is_empty() {
        return Err(Error::contract("loss_instance: historical set is empty"));
    }
    let mut terms = Vec::with_capacity(hist.len());
    for window in &hist.windows {
        let output = bound.forward_logits(tape, &inst.x, window)?;
        terms.push(criterion_on_tape(tape, objective, output, inst)?);
    }
    let stacked = tape.concat(&terms)?;
    Ok(tape.mean(stacked))
}

/// Anything the training loop can optimize: expose parameters, build the
/// per-instance loss on a tape, and predict.
pub trait Forecaster {
    fn task(&self) -> Task;
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
    /// Build this model's loss for one instance; returns the loss node and
    /// the parameter vars in `named_params` order.
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        inst: &Instance,
        hist: &HistoricalSet,
        objective: Objective,
    ) -> Result<(Var, Vec<Var>)>;
    fn predict(&self, inst: &Instance, hist: &HistoricalSet, mode: PredictMode) -> Result<Tensor>;

    fn snapshot(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn restore(&mut self, saved: &[Tensor]) {
        for ((_, slot), value) in self.named_params_mut().into_iter().zip(saved) {
            *slot = value.clone();
        }
    }
}

impl Forecaster for HyperModel {
    fn task(&self) -> Task {
        self.config.task
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        HyperModel::named_params(self)
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        HyperModel::named_params_mut(self)
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        inst: &Instance,
        hist: &HistoricalSet,
        objective: Objective,
    ) -> Result<(Var, Vec<Var>)> {
        let bound = self.bind(tape);
        let loss = loss_instance(tape, &bound, inst, hist, objective)?;
        Ok((loss, bound.param_vars))
    }

    fn predict(&self, inst: &Instance, hist: &HistoricalSet, mode: PredictMode) -> Result<Tensor> {
        HyperModel::predict(self, &inst.x, &hist.windows, mode)
    }
}

/// Statically weighted GRU forecaster: the same cell and head machinery
/// without hyper layers. Ignores historical sets entirely; serves as the
/// comparison baseline.
#[derive(Debug, Clone)]
pub struct GruForecaster {
    pub d_x: usize,
    pub d_y: usize,
    pub d_s: usize,
    pub t_y: usize,
    pub task: Task,
    pub cell: GruParams<Tensor>,
    pub head: PredictionHead<Tensor>,
    pub seed: u64,
}

impl GruForecaster {
    pub fn init(d_x: usize, d_y: usize, d_s: usize, t_y: usize, task: Task, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Tensor::new(
                Shape::matrix(rows, cols),
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
            .expect("sized data")
        };
        let cell = GruParams {
            w_xr: mat(d_s, d_x),
            w_xz: mat(d_s, d_x),
            w_xn: mat(d_s, d_x),
            w_hr: mat(d_s, d_s),
            w_hz: mat(d_s, d_s),
            w_hn: mat(d_s, d_s),
            b_r: Tensor::zeros(Shape::vector(d_s)),
            b_z: Tensor::zeros(Shape::vector(d_s)),
            b_n: Tensor::zeros(Shape::vector(d_s)),
        };
        let head = PredictionHead {
            w_out: mat(d_y * t_y, d_s),
            b_out: Tensor::zeros(Shape::vector(d_y * t_y)),
        };
        GruForecaster {
            d_x,
            d_y,
            d_s,
            t_y,
            task,
            cell,
            head,
            seed,
        }
    }

    fn forward_logits(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let cell = self.cell.map(&mut |t| tape.param(t.clone()));
        let head = self.head.map(&mut |t| tape.param(t.clone()));
        // Rebinding for prediction only duplicates leaf handles, never values.
        let mut s = tape.constant(Tensor::zeros(Shape::vector(self.d_s)));
        for t in 0..x.cols()? {
            let x_t = tape.constant(x.col(t)?);
            s = gru_step(tape, &cell, x_t, s)?;
        }
        let proj = tape.matvec(head.w_out, s)?;
        tape.add(proj, head.b_out)
    }
}

impl Forecaster for GruForecaster {
    fn task(&self) -> Task {
        self.task
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.cell.fields() {
            out.push((format!("cell.{}", name), t));
        }
        for (name, t) in self.head.fields() {
            out.push((format!("head.{}", name), t));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.cell.fields_mut() {
            out.push((format!("cell.{}", name), t));
        }
        for (name, t) in self.head.fields_mut() {
            out.push((format!("head.{}", name), t));
        }
        out
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        inst: &Instance,
        _hist: &HistoricalSet,
        objective: Objective,
    ) -> Result<(Var, Vec<Var>)> {
        objective.check_task(self.task)?;
        let mut vars = Vec::new();
        let cell = self.cell.map(&mut |t| {
            let v = tape.param(t.clone());
            vars.push(v);
            v
        });
        let head = self.head.map(&mut |t| {
            let v = tape.param(t.clone());
            vars.push(v);
            v
        });
        let mut s = tape.constant(Tensor::zeros(Shape::vector(self.d_s)));
        for t in 0..inst.x.cols()? {
            let x_t = tape.constant(inst.x.col(t)?);
            s = gru_step(tape, &cell, x_t, s)?;
        }
        let proj = tape.matvec(head.w_out, s)?;
        let logits = tape.add(proj, head.b_out)?;
        let loss = criterion_on_tape(tape, objective, logits, inst)?;
        Ok((loss, vars))
    }

    fn predict(&self, inst: &Instance, _hist: &HistoricalSet, _mode: PredictMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let logits = self.forward_logits(&mut tape, &inst.x)?;
        let out = match self.task {
            Task::Regression => logits,
            Task::Classification => tape.softmax(logits)?,
        };
        tape.value(out).reshape(Shape::matrix(self.d_y, self.t_y))
    }
}

// --- AdamW -------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter, in `named_params` order.
pub struct AdamWState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamWState {
    pub fn new<'a>(params: impl Iterator<Item = &'a Tensor>) -> Self {
        let shapes: Vec<Tensor> = params.map(|t| Tensor::zeros(t.shape().clone())).collect();
        AdamWState {
            m: shapes.clone(),
            v: shapes,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Global L2 norm over a gradient set.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients down so their global norm is at most `max_norm`;
/// untouched when already within bounds. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}

fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().map_or(false, |leaf| leaf.starts_with("b_"))
}

/// One AdamW update. Weight decay is decoupled (applied directly to the
/// parameter, inside the learning-rate factor) and skipped for bias vectors.
pub fn adamw_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamWState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adamw_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads.iter()) {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "adamw_step: parameter '{}' {} vs gradient {}",
                name,
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::numeric(format!(
                "adamw_step: non-finite gradient for '{}'",
                name
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);

    for (i, ((name, p), g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let decay = if is_bias(name) { 0.0 } else { weight_decay };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((theta, &gi), (mi, vi)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= learning_rate * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay * *theta);
        }
    }
    Ok(())
}

// --- training loop -------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_metric\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, e.valid_metric);
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Validation metric used for early stopping: RMSE of `predict` for
/// regression, error rate for classification. Lower is better.
fn validation_metric<M: Forecaster>(
    model: &M,
    items: &[TrainItem],
    mode: PredictMode,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }
    match model.task() {
        Task::Regression => {
            let mut sq = 0.0;
            let mut n = 0usize;
            for item in items {
                let pred = model.predict(&item.inst, &item.hist, mode)?;
                for (a, b) in pred.data().iter().zip(item.inst.y.data()) {
                    sq += (a - b) * (a - b);
                    n += 1;
                }
            }
            Ok((sq / n as f64).sqrt())
        }
        Task::Classification => {
            let mut wrong = 0usize;
            for item in items {
                let pred = model.predict(&item.inst, &item.hist, mode)?;
                let class = argmax(pred.data());
                if class != item.inst.y.data()[0] as usize {
                    wrong += 1;
                }
            }
            Ok(wrong as f64 / items.len() as f64)
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch training with a fixed seed: shuffled batches, per-batch mean of
/// the per-instance losses, clipped gradients, AdamW updates, per-epoch
/// validation, early stopping, and best-validation weights restored at the
/// end. Every float in the trace is determined by (seed, config, data).
pub fn fit<M: Forecaster>(
    model: &mut M,
    train: &[TrainItem],
    valid: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    let param_count = model.named_params().len();
    let mut state = AdamWState::new(model.named_params().iter().map(|(_, t)| *t));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid: f64::INFINITY,
    };
    let mut best_params = model.snapshot();
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let mut grad_acc: Vec<Tensor> = model
                .named_params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().clone()))
                .collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let item = &train[idx];
                let mut tape = Tape::new();
                let (loss, vars) = model.loss_on_tape(&mut tape, &item.inst, &item.hist, cfg.objective)?;
                let loss_value = tape.value(loss).item()?;
                if !loss_value.is_finite() {
                    return Err(Error::numeric(format!(
                        "loss is not finite at epoch {}, batch {}",
                        epoch, batch_idx
                    )));
                }
                batch_loss += weight * loss_value;
                debug_assert_eq!(vars.len(), param_count);
                let grads = tape.backward(loss)?;
                for (acc, &var) in grad_acc.iter_mut().zip(&vars) {
                    if let Some(g) = grads.get(var) {
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += weight * b;
                        }
                    }
                }
            }
            clip_global_norm(&mut grad_acc, cfg.clip_norm);
            let mut params = model.named_params_mut();
            adamw_step(
                &mut params,
                &grad_acc,
                &mut state,
                cfg.learning_rate,
                cfg.weight_decay,
            )?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let valid_metric = validation_metric(model, valid, PredictMode::Last)?;
        if cfg.verbose {
            println!("epoch={} train={} valid={}", epoch, train_loss, valid_metric);
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_metric,
        });

        if valid_metric < report.best_valid {
            report.best_valid = valid_metric;
            report.best_epoch = epoch;
            best_params = model.snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best > cfg.patience {
                break;
            }
        }
    }

    model.restore(&best_params);
    Ok(report)
}

/// Evaluate a model over a split. Regression metrics are computed on the
/// scale given: when normalization statistics are supplied, predictions and
/// targets are mapped back to the original scale first.
pub fn evaluate<M: Forecaster>(
    model: &M,
    items: &[TrainItem],
    mode: PredictMode,
    denorm: Option<(&NormStats, &[usize])>,
) -> Result<Metrics> {
    if items.is_empty() {
        return Err(Error::contract("evaluate: empty split"));
    }
    match model.task() {
        Task::Regression => {
            let mut preds = Vec::with_capacity(items.len());
            let mut targets = Vec::with_capacity(items.len());
            for item in items {
                let mut pred = model.predict(&item.inst, &item.hist, mode)?;
                let mut target = item.inst.y.clone();
                if let Some((stats, rows)) = denorm {
                    pred = stats.invert_targets(&pred, rows)?;
                    target = stats.invert_targets(&target, rows)?;
                }
                preds.push(pred);
                targets.push(target);
            }
            regression_metrics(&preds, &targets)
        }
        Task::Classification => {
            let mut pred_classes = Vec::with_capacity(items.len());
            let mut target_classes = Vec::with_capacity(items.len());
            let mut n_classes = 0;
            for item in items {
                let pred = model.predict(&item.inst, &item.hist, mode)?;
                n_classes = pred.len();
                pred_classes.push(argmax(pred.data()));
                target_classes.push(item.inst.y.data()[0] as usize);
            }
            classification_scores(&pred_classes, &target_classes, n_classes)
        }
    }
}

// --- gradient-check runner -------------------------------------------------

/// Fixed tiny configuration for end-to-end gradient verification of the full
/// per-instance loss.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d_x: 3,
        d_y: 2,
        d_s: 4,
        d_h: 6,
        d_v: 4,
        d_a: 4,
        t: 10,
        k: 2,
        t_y: 1,
        task: Task::Regression,
    }
}

pub const GRADCHECK_T_X: usize = 4;
pub const GRADCHECK_WINDOWS: usize = 3;
pub const GRADCHECK_H: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-5;

// The checked function is LOSS_SCALE * loss. Central differences at h=1e-6
// lose eps*|f|/(2h) ~ 5e-11*|f| to rounding; near-zero-gradient coordinates
// are compared against the 1e-8 relative-error floor, so |f| must stay small
// for those comparisons to carry meaning. Scaling the loss by a constant
// rescales gradients and differences alike and leaves the relative error of
// every well-sized coordinate unchanged.
const GRADCHECK_LOSS_SCALE: f64 = 1e-4;

/// Run central finite differences against the analytic gradients of the full
/// loss on a tiny model. `corrupt` deliberately desynchronizes the analytic
/// pass from the evaluations so the checker's failure path can be exercised.
pub fn run_gradcheck(cell: CellKind, seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    let config = gradcheck_config();
    let model = HyperModel::init(config.clone(), cell, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut series = |d: usize, t: usize| -> Tensor {
        Tensor::new(
            Shape::matrix(d, t),
            (0..d * t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .expect("sized data")
    };
    let x = series(config.d_x, GRADCHECK_T_X);
    let y = series(config.d_y, config.t_y);
    let windows: Vec<Tensor> = (0..GRADCHECK_WINDOWS)
        .map(|_| series(config.d_x, config.t))
        .collect();
    let inst = Instance {
        x,
        y,
        x_start: config.t,
        t_x: GRADCHECK_T_X,
        t_y: config.t_y,
    };
    let hist = HistoricalSet {
        starts: (0..windows.len()).collect(),
        windows,
    };

    let params: Vec<(String, Tensor)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let calls = std::cell::Cell::new(0usize);
    grad_check(
        |tape, vars| {
            let bound = model.bind_vars(vars)?;
            let raw = loss_instance(tape, &bound, &inst, &hist, Objective::L2)?;
            let loss = tape.scale_const(raw, GRADCHECK_LOSS_SCALE);
            let call_index = calls.get();
            calls.set(call_index + 1);
            if corrupt && call_index == 0 {
                // The first call builds the analytic tape; adding a term only
                // there makes its gradients inconsistent with the function
                // the finite differences sample.
                let extra = tape.sum(vars[0]);
                let scaled = tape.scale_const(extra, 0.01);
                return tape.add(loss, scaled);
            }
            Ok(loss)
        },
        &params,
        GRADCHECK_H,
        GRADCHECK_TOL,
    )
}
