//! Scaling sweeps on multitask sparse parity.
//!
//! A sweep trains one fresh network per scale point (width for the
//! parameter axis, training-set size for the data axis) and evaluates it on a
//! stratified test set at a fixed checkpoint cadence. Losses are stored in
//! nats; reporting converts to bits.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::{init_model, AdamConfig, AdamState, MlpModel, Workspace};
use crate::parity::{build_task_spec, fixed_eval_set, ParitySampler, SampleBatch, TaskSpec};
use crate::seed::{stream_rng, SeedSet};
use crate::stats::{fit_power_law, median, spearman, PowerLawFit};
use crate::theory::{bits_to_nats, nats_to_bits};

pub const LN_2: f64 = std::f64::consts::LN_2;

/// Default "learned" threshold for a subtask, in bits.
pub const DEFAULT_THRESHOLD_BITS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Params,
    Data,
    Steps,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Params => "params",
            SweepAxis::Data => "data",
            SweepAxis::Steps => "steps",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossUnit {
    Bits,
    Nats,
}

impl LossUnit {
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            LossUnit::Bits => nats_to_bits(nats),
            LossUnit::Nats => nats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_tasks: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub axis: SweepAxis,
    /// Hidden widths for the parameter axis.
    pub widths: Vec<usize>,
    /// Training-set sizes for the data axis.
    pub dataset_sizes: Vec<usize>,
    /// Width used on the data axis (large enough not to bottleneck capacity).
    pub data_width: usize,
    /// Width used for the single-run steps axis.
    pub step_width: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_per_task: usize,
    /// Master seed. The task subsets use it directly; data, init, shuffle,
    /// eval and k-means use derived sub-seeds.
    pub seed: u64,
    pub loss_unit: LossUnit,
    pub threshold_bits: f64,
    pub adam: AdamConfig,
    /// Zero the output layer at initialization so training starts from the
    /// uniform predictor.
    pub zero_output_init: bool,
}

impl SweepConfig {
    /// CPU-budget configuration.
    pub fn desk(axis: SweepAxis) -> Self {
        Self {
            n_tasks: 100,
            n: 50,
            k: 3,
            alpha: 0.4,
            axis,
            widths: vec![10, 20, 50, 100, 200],
            dataset_sizes: vec![10_000, 31_623, 100_000, 316_228, 1_000_000],
            data_width: 200,
            step_width: 200,
            batch_size: 4096,
            total_steps: 30_000,
            eval_every: 500,
            eval_per_task: 200,
            seed: 0,
            loss_unit: LossUnit::Bits,
            threshold_bits: DEFAULT_THRESHOLD_BITS,
            adam: AdamConfig::default(),
            zero_output_init: true,
        }
    }

    /// Full-size configuration (many CPU-days).
    pub fn paper(axis: SweepAxis) -> Self {
        Self {
            n_tasks: 500,
            n: 100,
            widths: vec![10, 20, 30, 50, 75, 100, 150, 200, 300, 500],
            dataset_sizes: vec![10_000, 30_000, 100_000, 300_000, 1_000_000, 2_000_000, 5_000_000],
            data_width: 500,
            step_width: 500,
            batch_size: 20_000,
            total_steps: 200_000,
            eval_every: 1_000,
            eval_per_task: 200,
            ..Self::desk(axis)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if self.k == 0 || self.k > self.n {
            return bad("k", "must satisfy 1 <= k <= n");
        }
        if self.n_tasks == 0 {
            return bad("n_tasks", "must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.total_steps == 0 {
            return bad("total_steps", "must be >= 1");
        }
        if self.eval_every == 0 || !self.total_steps.is_multiple_of(self.eval_every) {
            return bad("eval_every", "must be >= 1 and divide total_steps");
        }
        if self.eval_per_task == 0 {
            return bad("eval_per_task", "must be >= 1");
        }
        if !(self.threshold_bits > 0.0) {
            return bad("threshold_bits", "must be positive");
        }
        match self.axis {
            SweepAxis::Params if self.widths.is_empty() || self.widths.contains(&0) => {
                bad("widths", "needs at least one positive width")
            }
            SweepAxis::Data if self.dataset_sizes.is_empty() || self.dataset_sizes.contains(&0) || self.data_width == 0 => {
                bad("dataset_sizes", "needs at least one positive size and data_width >= 1")
            }
            SweepAxis::Steps if self.step_width == 0 => bad("step_width", "must be >= 1"),
            _ => Ok(()),
        }
    }

    pub fn seeds(&self) -> SeedSet {
        SeedSet::new(self.seed)
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        build_task_spec(self.n_tasks, self.n, self.k, self.alpha, self.seed)
    }

    pub fn threshold_nats(&self) -> f64 {
        bits_to_nats(self.threshold_bits)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Evaluation at one training step. Losses in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    /// Frequency-weighted mean test loss, `sum_i p_i L_i`.
    pub mean_loss: f64,
    pub subtask_losses: Vec<f64>,
}

/// One trained network of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    /// Parameter count (params/steps axes) or training-set size (data axis).
    pub scale: f64,
    pub width: usize,
    pub dataset_size: Option<usize>,
    pub diverged: bool,
    pub final_eval: Checkpoint,
    /// Checkpoint with the lowest mean test loss (early stopping).
    pub best_eval: Checkpoint,
    pub trajectory: Vec<Checkpoint>,
}

impl ScalePoint {
    pub fn early_stop_step(&self) -> u64 {
        self.best_eval.step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_hash: String,
    pub config: SweepConfig,
    pub seeds: SeedSet,
    pub frequencies: Vec<f64>,
    pub points: Vec<ScalePoint>,
    /// Choices the run depends on that are not part of the config.
    pub decisions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskCurve {
    pub subtask_id: usize,
    pub frequency: f64,
    /// `(coordinate, loss in nats)` in increasing coordinate order.
    pub losses: Vec<(f64, f64)>,
}

impl SubtaskCurve {
    pub fn loss_values(&self) -> Vec<f64> {
        self.losses.iter().map(|p| p.1).collect()
    }
}

/// Where training batches come from.
enum BatchSource<'a> {
    /// Fresh samples every step, stream keyed by the step index.
    Online { sampler: ParitySampler<'a>, seed: u64 },
    /// Fixed training set visited in shuffled epochs.
    Epochs { train: SampleBatch, order: Vec<usize>, cursor: usize, epoch: u64, seed: u64 },
}

impl BatchSource<'_> {
    fn fill(&mut self, step: u64, batch_size: usize, out: &mut SampleBatch) {
        out.clear();
        match self {
            BatchSource::Online { sampler, seed } => {
                let mut rng = stream_rng(*seed, step);
                sampler.sample_into(&mut rng, batch_size, out);
            }
            BatchSource::Epochs { train, order, cursor, epoch, seed } => {
                let size = batch_size.min(train.len());
                if *cursor + size > order.len() || order.is_empty() {
                    *order = (0..train.len()).collect();
                    order.shuffle(&mut stream_rng(*seed, *epoch));
                    *epoch += 1;
                    *cursor = 0;
                }
                for &r in &order[*cursor..*cursor + size] {
                    out.push_row_from(train, r);
                }
                *cursor += size;
            }
        }
    }
}

/// Per-subtask mean losses on a stratified evaluation set.
pub fn evaluate(model: &MlpModel, eval: &SampleBatch, frequencies: &[f64]) -> Result<(f64, Vec<f64>)> {
    let losses = model.per_sample_losses(eval)?;
    let mut sums = vec![0.0; frequencies.len()];
    let mut counts = vec![0usize; frequencies.len()];
    for (loss, &id) in losses.iter().zip(eval.subtask_ids()) {
        sums[id as usize] += loss;
        counts[id as usize] += 1;
    }
    let subtask: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    let mean = subtask
        .iter()
        .zip(frequencies)
        .filter(|(l, _)| !l.is_nan())
        .map(|(l, p)| l * p)
        .sum();
    Ok((mean, subtask))
}

struct RunPlan {
    width: usize,
    dataset_size: Option<usize>,
    scale: f64,
}

fn train_one(config: &SweepConfig, spec: &TaskSpec, eval: &SampleBatch, frequencies: &[f64], plan: &RunPlan) -> Result<(ScalePoint, MlpModel)> {
    let seeds = config.seeds();
    let mut model = init_model(spec.input_dim(), plan.width, seeds.init())?;
    if config.zero_output_init {
        model.zero_output_layer();
    }
    let sampler = ParitySampler::new(spec)?;
    let (mut source, batch_size) = match plan.dataset_size {
        None => (BatchSource::Online { sampler, seed: seeds.data() }, config.batch_size),
        Some(size) => {
            let train = sampler.draw(size, seeds.data(), u64::MAX);
            let batch_size = config.batch_size.min(size);
            (BatchSource::Epochs { train, order: Vec::new(), cursor: 0, epoch: 0, seed: seeds.shuffle() }, batch_size)
        }
    };

    let mut adam = AdamState::new(model.param_count(), config.adam);
    let mut grad = vec![0.0; model.param_count()];
    let mut ws = Workspace::default();
    let mut batch = SampleBatch::with_capacity(spec.n_tasks, spec.n, batch_size);
    let mut trajectory = Vec::with_capacity((config.total_steps / config.eval_every) as usize);
    let mut diverged = false;

    for step in 1..=config.total_steps {
        source.fill(step, batch_size, &mut batch);
        let loss = model.loss_and_grad(&batch, &mut grad, &mut ws)?;
        if !loss.is_finite() || adam.step(model.params_mut(), &grad).is_err() {
            diverged = true;
            break;
        }
        if step % config.eval_every == 0 {
            let (mean_loss, subtask_losses) = evaluate(&model, eval, frequencies)?;
            if !mean_loss.is_finite() {
                diverged = true;
                break;
            }
            trajectory.push(Checkpoint { step, mean_loss, subtask_losses });
        }
    }

    if trajectory.is_empty() {
        // Diverged before the first checkpoint: report the initial state.
        let (mean_loss, subtask_losses) = evaluate(&model, eval, frequencies)?;
        trajectory.push(Checkpoint { step: 0, mean_loss, subtask_losses });
        diverged = true;
    }
    let final_eval = trajectory.last().cloned().expect("trajectory is non-empty");
    let best_eval = trajectory
        .iter()
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
        .cloned()
        .expect("trajectory is non-empty");
    let point = ScalePoint {
        scale: plan.scale,
        width: plan.width,
        dataset_size: plan.dataset_size,
        diverged,
        final_eval,
        best_eval,
        trajectory,
    };
    Ok((point, model))
}

fn decisions(config: &SweepConfig) -> BTreeMap<String, String> {
    let mut d = BTreeMap::new();
    d.insert("init".into(), "W uniform on ±sqrt(6/fan_in), zero biases".into());
    d.insert("zero_output_init".into(), config.zero_output_init.to_string());
    d.insert("adam".into(), format!("{:?}", config.adam));
    d.insert("precision".into(), "f64".into());
    d.insert("mean_loss".into(), "sum_i p_i * stratified subtask loss".into());
    d
}

/// Run every scale point of a sweep. Returns the record and the trained models
/// in scale-point order.
pub fn run_sweep(config: &SweepConfig) -> Result<(SweepRecord, Vec<MlpModel>)> {
    config.validate()?;
    let spec = config.task_spec()?;
    let seeds = config.seeds();
    let frequencies = spec.frequencies();
    let eval = fixed_eval_set(&spec, config.eval_per_task, seeds.eval())?;
    let input_dim = spec.input_dim();
    let plans: Vec<RunPlan> = match config.axis {
        SweepAxis::Params => config
            .widths
            .iter()
            .map(|&w| RunPlan { width: w, dataset_size: None, scale: crate::mlp::param_count(input_dim, w) as f64 })
            .collect(),
        SweepAxis::Data => config
            .dataset_sizes
            .iter()
            .map(|&d| RunPlan { width: config.data_width, dataset_size: Some(d), scale: d as f64 })
            .collect(),
        SweepAxis::Steps => vec![RunPlan {
            width: config.step_width,
            dataset_size: None,
            scale: crate::mlp::param_count(input_dim, config.step_width) as f64,
        }],
    };
    let results: Vec<(ScalePoint, MlpModel)> = plans
        .par_iter()
        .map(|plan| train_one(config, &spec, &eval, &frequencies, plan))
        .collect::<Result<_>>()?;
    let (points, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let record = SweepRecord {
        config_hash: config.hash(),
        config: config.clone(),
        seeds,
        frequencies,
        points,
        decisions: decisions(config),
    };
    Ok((record, models))
}

pub fn run_param_sweep(config: &SweepConfig) -> Result<(SweepRecord, Vec<MlpModel>)> {
    if config.axis != SweepAxis::Params {
        return Err(Error::Config { field: "axis".into(), message: "expected params".into() });
    }
    run_sweep(config)
}

pub fn run_data_sweep(config: &SweepConfig) -> Result<(SweepRecord, Vec<MlpModel>)> {
    if config.axis != SweepAxis::Data {
        return Err(Error::Config { field: "axis".into(), message: "expected data".into() });
    }
    run_sweep(config)
}

impl SweepRecord {
    /// Loss used as "the" result of a point: early-stopped for the data axis,
    /// end of training otherwise.
    pub fn reported_eval<'a>(&self, point: &'a ScalePoint) -> &'a Checkpoint {
        match self.config.axis {
            SweepAxis::Data => &point.best_eval,
            _ => &point.final_eval,
        }
    }

    /// `(scale, mean loss)` for every non-diverged point.
    pub fn mean_curve(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| !p.diverged)
            .map(|p| (p.scale, self.reported_eval(p).mean_loss))
            .collect()
    }

    /// Per-subtask loss against scale.
    pub fn subtask_curves(&self) -> Vec<SubtaskCurve> {
        let mut points: Vec<&ScalePoint> = self.points.iter().filter(|p| !p.diverged).collect();
        points.sort_by(|a, b| a.scale.total_cmp(&b.scale));
        (0..self.frequencies.len())
            .map(|i| SubtaskCurve {
                subtask_id: i,
                frequency: self.frequencies[i],
                losses: points.iter().map(|p| (p.scale, self.reported_eval(p).subtask_losses[i])).collect(),
            })
            .collect()
    }

    /// Power-law fit of mean loss against scale, excluding diverged runs and
    /// the smallest point when it is within 2% of the untrained baseline.
    pub fn fit(&self) -> Result<PowerLawFit> {
        let mut curve = self.mean_curve();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(&(_, first)) = curve.first() {
            if first >= 0.98 * LN_2 {
                curve.remove(0);
            }
        }
        let unit = self.config.loss_unit;
        let points: Vec<(f64, f64)> = curve.into_iter().map(|(x, y)| (x, unit.from_nats(y))).collect();
        fit_power_law(&points)
    }
}

/// Loss-vs-steps series of one single-epoch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    pub mean: Vec<(f64, f64)>,
    pub subtasks: Vec<SubtaskCurve>,
}

pub fn track_step_scaling(point: &ScalePoint, frequencies: &[f64]) -> Result<StepSeries> {
    if point.trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mean = point.trajectory.iter().map(|c| (c.step as f64, c.mean_loss)).collect();
    let subtasks = frequencies
        .iter()
        .enumerate()
        .map(|(i, &p)| SubtaskCurve {
            subtask_id: i,
            frequency: p,
            losses: point.trajectory.iter().map(|c| (c.step as f64, c.subtask_losses[i])).collect(),
        })
        .collect();
    Ok(StepSeries { mean, subtasks })
}

/// First coordinate at which the curve drops below `threshold`.
pub fn subtask_convergence_step(curve: &SubtaskCurve, threshold: f64) -> Option<f64> {
    curve.losses.iter().find(|(_, loss)| *loss < threshold).map(|p| p.0)
}

/// Subtasks with loss below `threshold` (nats) at every scale point.
///
/// For data sweeps `include_post_early_stop` counts a subtask as learned if it
/// dropped below threshold at any checkpoint, including after the early-stop
/// point; otherwise the reported (early-stopped or final) losses are used.
pub fn count_learned_subtasks(record: &SweepRecord, threshold: f64, include_post_early_stop: bool) -> Vec<usize> {
    record
        .points
        .iter()
        .map(|p| {
            if include_post_early_stop {
                (0..record.frequencies.len())
                    .filter(|&i| p.trajectory.iter().any(|c| c.subtask_losses[i] < threshold))
                    .count()
            } else {
                record.reported_eval(p).subtask_losses.iter().filter(|&&l| l < threshold).count()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    pub edges: Vec<f64>,
    /// `p(L)`, integrating to one over the bins.
    pub density: Vec<f64>,
    /// `L p(L)` using bin midpoints.
    pub weighted_density: Vec<f64>,
}

impl LossHistogram {
    /// Probability mass of bins whose upper edge is at most `cut`.
    pub fn mass_below(&self, cut: f64) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.density)
            .filter(|(e, _)| e[1] <= cut)
            .map(|(e, d)| d * (e[1] - e[0]))
            .sum()
    }

    /// Probability mass of bins whose lower edge is at least `cut`.
    pub fn mass_above(&self, cut: f64) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.density)
            .filter(|(e, _)| e[0] >= cut)
            .map(|(e, d)| d * (e[1] - e[0]))
            .sum()
    }
}

/// Normalized histogram of per-sample losses. Values outside the edges are
/// counted in the nearest end bin so that the density integrates to one.
pub fn loss_histogram(losses: &[f64], edges: &[f64]) -> Result<LossHistogram> {
    if losses.is_empty() {
        return Err(Error::Empty("losses"));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("bin edges must be strictly increasing".into()));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &l in losses {
        let idx = edges.partition_point(|&e| e <= l).saturating_sub(1).min(bins - 1);
        counts[idx] += 1;
    }
    let total = losses.len() as f64;
    let density: Vec<f64> = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, e)| c as f64 / total / (e[1] - e[0]))
        .collect();
    let weighted_density = density
        .iter()
        .zip(edges.windows(2))
        .map(|(d, e)| d * 0.5 * (e[0] + e[1]))
        .collect();
    Ok(LossHistogram { edges: edges.to_vec(), density, weighted_density })
}

/// Number of adjacent scale intervals whose loss decrease exceeds
/// `drop_fraction` of the curve's overall drop. One means a single emergence
/// step, two or more gradual multi-stage progress, zero a flat curve.
pub fn polygenicity_score(losses: &[f64], drop_fraction: f64) -> usize {
    if losses.len() < 2 {
        return 0;
    }
    let total = losses[0] - losses[losses.len() - 1];
    if !(total > 0.0) {
        return 0;
    }
    losses.windows(2).filter(|w| w[0] - w[1] > drop_fraction * total).count()
}

/// Relationship between subtask frequency and convergence time in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLaw {
    /// `(p_i, S_i)` for subtasks that converged.
    pub points: Vec<(f64, f64)>,
    pub spearman: f64,
    /// `S ∝ p^-beta`.
    pub beta: f64,
    pub r_squared: f64,
}

pub fn convergence_law(series: &StepSeries, threshold: f64) -> Result<ConvergenceLaw> {
    let points: Vec<(f64, f64)> = series
        .subtasks
        .iter()
        .filter_map(|c| subtask_convergence_step(c, threshold).map(|s| (c.frequency, s)))
        .collect();
    if points.len() < 3 {
        return Err(Error::Fit(format!("only {} subtasks converged", points.len())));
    }
    let log_p: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let log_s: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let rho = spearman(&log_p, &log_s)?;
    let fit = fit_power_law(&points)?;
    Ok(ConvergenceLaw { points, spearman: rho, beta: -fit.exponent, r_squared: fit.r_squared })
}

/// Fraction of subtasks learned at scale `j` that are still learned at `j+1`.
pub fn emergence_retention(curves: &[SubtaskCurve], threshold: f64) -> Vec<f64> {
    let scales = curves.first().map_or(0, |c| c.losses.len());
    (0..scales.saturating_sub(1))
        .map(|j| {
            let learned: Vec<&SubtaskCurve> = curves.iter().filter(|c| c.losses[j].1 < threshold).collect();
            if learned.is_empty() {
                return 1.0;
            }
            learned.iter().filter(|c| c.losses[j + 1].1 < threshold).count() as f64 / learned.len() as f64
        })
        .collect()
}

/// Median Zipf rank (1-based) of learned and unlearned subtasks at each scale.
pub fn median_ranks(curves: &[SubtaskCurve], threshold: f64) -> Vec<(Option<f64>, Option<f64>)> {
    let scales = curves.first().map_or(0, |c| c.losses.len());
    (0..scales)
        .map(|j| {
            let (learned, unlearned): (Vec<&SubtaskCurve>, Vec<&SubtaskCurve>) =
                curves.iter().partition(|c| c.losses[j].1 < threshold);
            let rank = |v: &[&SubtaskCurve]| median(&v.iter().map(|c| (c.subtask_id + 1) as f64).collect::<Vec<_>>());
            (rank(&learned), rank(&unlearned))
        })
        .collect()
}

/// For a curve that drops from its initial plateau, compare the time to cover
/// the first 90% of the drop with the time from 90% to 10% remaining.
/// Returns `None` if the curve never covers 90% of its initial loss.
pub fn plateau_then_drop(curve: &SubtaskCurve, start_loss: f64) -> Option<(f64, f64)> {
    let end = curve.losses.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let drop = start_loss - end;
    if !(drop > 0.0) {
        return None;
    }
    let at = |fraction: f64| curve.losses.iter().find(|p| p.1 <= start_loss - fraction * drop).map(|p| p.0);
    let t10 = at(0.1)?;
    let t90 = at(0.9)?;
    Some((t10, t90 - t10))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> SubtaskCurve {
        SubtaskCurve {
            subtask_id: 0,
            frequency: 1.0,
            losses: values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
        }
    }

    fn tiny_config(axis: SweepAxis) -> SweepConfig {
        SweepConfig {
            n_tasks: 4,
            n: 12,
            k: 2,
            widths: vec![4, 8, 16, 24, 32],
            dataset_sizes: vec![64, 256, 1024],
            data_width: 16,
            step_width: 16,
            batch_size: 128,
            total_steps: 40,
            eval_every: 10,
            eval_per_task: 20,
            ..SweepConfig::desk(axis)
        }
    }

    #[test]
    fn convergence_step_examples() {
        let mut values = vec![1.0; 60];
        for v in values.iter_mut().skip(37) {
            *v = 0.01;
        }
        assert_eq!(subtask_convergence_step(&curve(&values), 0.1), Some(37.0));
        assert_eq!(subtask_convergence_step(&curve(&[1.0, 0.9, 0.5]), 0.1), None);
        assert_eq!(subtask_convergence_step(&curve(&[0.0, 0.0]), 0.1), Some(0.0));
    }

    #[test]
    fn polygenicity_examples() {
        assert_eq!(polygenicity_score(&[1.0, 1.0, 0.0, 0.0], 0.2), 1);
        assert_eq!(polygenicity_score(&[1.0, 0.5, 0.5, 0.0, 0.0], 0.2), 2);
        assert_eq!(polygenicity_score(&[0.7, 0.7, 0.7], 0.2), 0);
        assert_eq!(polygenicity_score(&[0.7], 0.2), 0);
    }

    #[test]
    fn histogram_examples() {
        let h = loss_histogram(&[0.3; 10], &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(h.density.iter().filter(|&&d| d > 0.0).count(), 1);
        let losses: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let edges: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let h = loss_histogram(&losses, &edges).unwrap();
        let integral: f64 = h.density.iter().zip(edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let weighted: f64 = h.weighted_density.iter().zip(edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((weighted - mean).abs() < 0.01);
        assert!(loss_histogram(&[], &edges).is_err());
        assert!(loss_histogram(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn config_validation_names_field() {
        let mut c = tiny_config(SweepAxis::Params);
        c.eval_every = 7;
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eval_every"),
            other => panic!("unexpected {other:?}"),
        }
        let mut c = tiny_config(SweepAxis::Params);
        c.widths.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = SweepConfig::desk(SweepAxis::Data);
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: SweepConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn param_sweep_structure_and_determinism() {
        let config = tiny_config(SweepAxis::Params);
        let (a, models) = run_param_sweep(&config).unwrap();
        assert_eq!(a.points.len(), 5);
        assert_eq!(models.len(), 5);
        for p in &a.points {
            assert_eq!(p.trajectory.len(), 4);
            assert!(p.trajectory.iter().all(|c| c.subtask_losses.iter().all(|&l| l >= 0.0)));
        }
        let (b, _) = run_param_sweep(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_checkpoint_starts_near_uniform() {
        let mut config = tiny_config(SweepAxis::Steps);
        config.eval_every = 1;
        config.total_steps = 5;
        let (record, _) = run_sweep(&config).unwrap();
        let series = track_step_scaling(&record.points[0], &record.frequencies).unwrap();
        assert_eq!(series.mean.len(), 5);
        assert!((series.mean[0].1 - LN_2).abs() < 0.05);
    }

    #[test]
    fn data_sweep_clamps_batch_and_early_stops() {
        let mut config = tiny_config(SweepAxis::Data);
        config.dataset_sizes = vec![50, 300];
        let (record, _) = run_data_sweep(&config).unwrap();
        for p in &record.points {
            assert!(p.early_stop_step() <= config.total_steps);
            assert!(p.best_eval.mean_loss <= p.final_eval.mean_loss);
        }
    }

    #[test]
    fn axis_mismatch_is_rejected() {
        assert!(run_data_sweep(&tiny_config(SweepAxis::Params)).is_err());
        assert!(run_param_sweep(&tiny_config(SweepAxis::Data)).is_err());
    }

    #[test]
    fn learned_counts_respect_threshold_extremes() {
        let config = tiny_config(SweepAxis::Params);
        let (record, _) = run_param_sweep(&config).unwrap();
        assert!(count_learned_subtasks(&record, 0.0, false).iter().all(|&n| n == 0));
        assert!(count_learned_subtasks(&record, f64::INFINITY, false).iter().all(|&n| n == 4));
        assert!(count_learned_subtasks(&record, f64::INFINITY, true).iter().all(|&n| n == 4));
    }

    #[test]
    fn plateau_then_drop_shape() {
        let c = curve(&[0.69, 0.69, 0.69, 0.68, 0.3, 0.01]);
        let (plateau, drop) = plateau_then_drop(&c, 0.69).unwrap();
        assert_eq!(plateau, 4.0);
        assert_eq!(drop, 1.0);
    }
}
