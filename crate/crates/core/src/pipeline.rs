//! Command implementations behind the CLI. Each command is fully resolved
//! (profiles and overrides applied) before it runs, writes its artifacts into
//! one output directory, and finishes by writing the manifest. A manifest can
//! be replayed to regenerate the same outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{
    alpha_recovery_sweep, envelope_slope, rank_frequency, rank_frequency_from_labels, recovery_summary, toy_cluster_sweep,
    RankFrequencyCurve, ToyModelConfig,
};
use crate::error::{Error, Result};
use crate::harness::{
    count_learned_subtasks, run_sweep, subtask_convergence_step, track_step_scaling, LossUnit, SweepAxis, SweepConfig,
};
use crate::io::{
    dataset_table, format_f64, read_dataset, read_json, write_affinity, write_dataset, ExperimentManifest, RunContext, Table,
    MANIFEST_FILE,
};
use crate::mlp::MlpModel;
use crate::parity::{build_task_spec, draw_batch, fixed_eval_set, SampleBatch};
use crate::plot::{emit_heatmap_svg, emit_svg, AxisScale, PlotSpec, SeriesStyle};
use crate::qdg::{
    angular_affinity, block_order, build_grad_matrix, cluster_purity, cosine_affinity, spectral_cluster, within_between_means,
};
use crate::seed::SeedSet;
use crate::theory::{expected_loss_closed, expected_loss_curve, LossProfile, QuantaDistribution, Support};
use crate::stats::log_spaced;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Bin,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryArgs {
    pub alpha: f64,
    pub loss: LossProfile,
    pub n_lo: u64,
    pub n_hi: u64,
    /// Log-spaced sample count; `None` evaluates every integer in the range.
    pub points: Option<usize>,
    /// Finite number of quanta; `None` for an infinite support.
    pub support: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenArgs {
    pub n_tasks: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub m: usize,
    /// Stratified draw of `per_task` samples per subtask instead of i.i.d.
    pub per_task: Option<usize>,
    pub seed: u64,
    pub format: DatasetFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArgs {
    pub config: SweepConfig,
    pub save_models: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdgArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub n_clusters: usize,
    pub loss_filter_nats: f64,
    /// Keep only samples of the most frequent subtasks.
    pub top_subtasks: Option<usize>,
    /// Cap on samples per subtask (first occurrences kept).
    pub max_per_subtask: Option<usize>,
    pub seed: u64,
    pub write_affinity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyArgs {
    pub config: ToyModelConfig,
    /// Run the alpha-recovery sweep over these exponents instead of one model.
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeArgs {
    pub curves: Vec<PathBuf>,
    pub window: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotArgs {
    pub csv: PathBuf,
    pub x: String,
    pub y: String,
    pub group: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Theory(TheoryArgs),
    Gen(GenArgs),
    Sweep(SweepArgs),
    Qdg(QdgArgs),
    Toy(ToyArgs),
    Envelope(EnvelopeArgs),
    Plot(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Theory(_) => "theory",
            Command::Gen(_) => "gen",
            Command::Sweep(_) => "sweep",
            Command::Qdg(_) => "qdg",
            Command::Toy(_) => "toy",
            Command::Envelope(_) => "envelope",
            Command::Plot(_) => "plot",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::Gen(a) => a.seed,
            Command::Sweep(a) => a.config.seed,
            Command::Qdg(a) => a.seed,
            Command::Toy(a) => a.config.seed,
            Command::Theory(_) | Command::Envelope(_) | Command::Plot(_) => 0,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Qdg(a) => vec![a.model.clone(), a.data.clone()],
            Command::Envelope(a) => a.curves.clone(),
            Command::Plot(a) => vec![a.csv.clone()],
            _ => Vec::new(),
        }
    }
}

/// Run a resolved command, writing outputs and the manifest into `out_dir`.
pub fn run_command(command: &Command, out_dir: &Path, argv: &[String]) -> Result<ExperimentManifest> {
    let config = serde_json::to_value(command)?;
    let mut ctx = RunContext::new(out_dir, command.name(), argv, config, SeedSet::new(command.seed()), &command.inputs())?;
    match command {
        Command::Theory(a) => theory(&mut ctx, a)?,
        Command::Gen(a) => gen(&mut ctx, a)?,
        Command::Sweep(a) => sweep(&mut ctx, a)?,
        Command::Qdg(a) => qdg(&mut ctx, a)?,
        Command::Toy(a) => toy(&mut ctx, a)?,
        Command::Envelope(a) => envelope(&mut ctx, a)?,
        Command::Plot(a) => plot(&mut ctx, a)?,
    }
    ctx.finish()
}

/// Re-run the command recorded in a manifest.
pub fn replay_manifest(manifest: &Path, out_dir: &Path) -> Result<ExperimentManifest> {
    let recorded: ExperimentManifest = read_json(manifest)?;
    let command: Command =
        serde_json::from_value(recorded.config.clone()).map_err(|e| Error::format(manifest, e.to_string()))?;
    run_command(&command, out_dir, &recorded.args)
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join(MANIFEST_FILE)
}

fn plot_to(ctx: &mut RunContext, name: &str, mut spec: PlotSpec) -> Result<()> {
    spec.run_id = Some(ctx.run_id().to_string());
    let svg = emit_svg(&spec)?;
    ctx.write_text(name, &svg)
}

fn theory(ctx: &mut RunContext, a: &TheoryArgs) -> Result<()> {
    if a.n_hi < a.n_lo {
        return Err(Error::Config { field: "n".into(), message: format!("empty range {}:{}", a.n_lo, a.n_hi) });
    }
    let support = a.support.map_or(Support::Infinite, Support::Finite);
    let dist = QuantaDistribution::new(a.alpha, support)?;
    a.loss.validate()?;
    let ns: Vec<u64> = match a.points {
        Some(points) => {
            let mut ns = log_spaced(a.n_lo.max(1), a.n_hi, points);
            if a.n_lo == 0 {
                ns.insert(0, 0);
            }
            ns
        }
        None => {
            if a.n_hi - a.n_lo > 1_000_000 {
                return Err(Error::Config { field: "points".into(), message: "range too large; pass a point count".into() });
            }
            (a.n_lo..=a.n_hi).collect()
        }
    };
    let exact = expected_loss_curve(&ns, &dist, &a.loss)?;
    let mut table = Table::new(&["n", "loss_exact_nats", "loss_closed_nats"]);
    let mut points = Vec::new();
    for (&n, &l) in ns.iter().zip(&exact) {
        let closed = match support {
            Support::Infinite if n > 0 => format_f64(expected_loss_closed(n, &dist, &a.loss)?),
            _ => String::new(),
        };
        table.push(vec![n.to_string(), format_f64(l), closed]);
        if n > 0 && l > 0.0 {
            points.push((n as f64, l));
        }
    }
    ctx.write_table("theory.csv", &table)?;
    let spec = PlotSpec::new(&format!("Expected loss, alpha = {}", a.alpha), "quanta learned n", "loss (nats)", AxisScale::Log, AxisScale::Log)
        .with_series(&a.loss.to_string(), points, SeriesStyle::Line);
    plot_to(ctx, "theory.svg", spec)
}

fn gen(ctx: &mut RunContext, a: &GenArgs) -> Result<()> {
    let spec = build_task_spec(a.n_tasks, a.n, a.k, a.alpha, a.seed)?;
    let seeds = SeedSet::new(a.seed);
    let batch = match a.per_task {
        Some(per_task) => fixed_eval_set(&spec, per_task, seeds.eval())?,
        None => draw_batch(&spec, a.m, seeds.data())?,
    };
    match a.format {
        DatasetFormat::Bin => {
            write_dataset(&ctx.path("dataset.bin"), &spec, &batch)?;
            ctx.record("dataset.bin")?;
        }
        DatasetFormat::Csv => ctx.write_table("dataset.csv", &dataset_table(&batch))?,
    }
    ctx.write_json("task_spec.json", &spec)
}

fn unit_suffix(unit: LossUnit) -> &'static str {
    match unit {
        LossUnit::Bits => "bits",
        LossUnit::Nats => "nats",
    }
}

fn sweep(ctx: &mut RunContext, a: &SweepArgs) -> Result<()> {
    let config = &a.config;
    let (record, models) = run_sweep(config)?;
    let unit = config.loss_unit;
    let suffix = unit_suffix(unit);
    let threshold = config.threshold_nats();

    let learned = count_learned_subtasks(&record, threshold, false);
    let learned_post = count_learned_subtasks(&record, threshold, true);
    let mut mean = Table::new(&[
        "scale",
        "width",
        "dataset_size",
        "diverged",
        "early_stop_step",
        &format!("mean_loss_{suffix}"),
        &format!("final_mean_loss_{suffix}"),
        "learned_subtasks",
        "learned_subtasks_any_checkpoint",
    ]);
    for (i, p) in record.points.iter().enumerate() {
        mean.push(vec![
            format_f64(p.scale),
            p.width.to_string(),
            p.dataset_size.map_or(String::new(), |d| d.to_string()),
            p.diverged.to_string(),
            p.early_stop_step().to_string(),
            format_f64(unit.from_nats(record.reported_eval(p).mean_loss)),
            format_f64(unit.from_nats(p.final_eval.mean_loss)),
            learned[i].to_string(),
            learned_post[i].to_string(),
        ]);
    }
    ctx.write_table("mean_loss.csv", &mean)?;

    let mut sub = Table::new(&["scale", "subtask", "frequency", &format!("loss_{suffix}")]);
    for p in &record.points {
        for (i, &l) in record.reported_eval(p).subtask_losses.iter().enumerate() {
            sub.push(vec![format_f64(p.scale), i.to_string(), format_f64(record.frequencies[i]), format_f64(unit.from_nats(l))]);
        }
    }
    ctx.write_table("subtask_loss.csv", &sub)?;

    let mut traj = Table::new(&["scale", "step", "subtask", &format!("loss_{suffix}")]);
    for p in &record.points {
        for c in &p.trajectory {
            traj.push(vec![format_f64(p.scale), c.step.to_string(), "mean".into(), format_f64(unit.from_nats(c.mean_loss))]);
            for (i, &l) in c.subtask_losses.iter().enumerate() {
                traj.push(vec![format_f64(p.scale), c.step.to_string(), i.to_string(), format_f64(unit.from_nats(l))]);
            }
        }
    }
    ctx.write_table("trajectory.csv", &traj)?;

    let fit = record.fit().ok();
    let mut summary = serde_json::json!({ "record": record, "fit": fit, "learned_subtasks": learned });

    let x_label = match config.axis {
        SweepAxis::Data => "training samples D",
        _ => "parameters N",
    };
    let mut spec = PlotSpec::new(&format!("{} sweep", config.axis), x_label, &format!("mean test loss ({suffix})"), AxisScale::Log, AxisScale::Log);
    let mean_points: Vec<(f64, f64)> = record
        .mean_curve()
        .into_iter()
        .map(|(x, y)| (x, unit.from_nats(y)))
        .filter(|p| p.1 > 0.0)
        .collect();
    spec = spec.with_series("mean", mean_points, SeriesStyle::LineMarkers);

    if config.axis == SweepAxis::Steps {
        let series = track_step_scaling(&record.points[0], &record.frequencies)?;
        let mut conv = Table::new(&["subtask", "frequency", "convergence_step"]);
        for c in &series.subtasks {
            let step = subtask_convergence_step(c, threshold);
            conv.push(vec![c.subtask_id.to_string(), format_f64(c.frequency), step.map_or(String::new(), |s| format!("{s}"))]);
        }
        ctx.write_table("convergence.csv", &conv)?;
        let steps_points: Vec<(f64, f64)> = series.mean.iter().map(|&(s, l)| (s, unit.from_nats(l))).filter(|p| p.1 > 0.0).collect();
        spec = PlotSpec::new("steps", "training step S", &format!("mean test loss ({suffix})"), AxisScale::Log, AxisScale::Log)
            .with_series("mean", steps_points, SeriesStyle::Line);
        summary["convergence_law"] = serde_json::to_value(crate::harness::convergence_law(&series, threshold).ok())?;
    }
    plot_to(ctx, "loss.svg", spec)?;

    let mut subtask_plot = PlotSpec::new("per-subtask loss", x_label, &format!("test loss ({suffix})"), AxisScale::Log, AxisScale::Linear);
    for curve in record.subtask_curves().iter().step_by((record.frequencies.len() / 10).max(1)) {
        subtask_plot = subtask_plot.with_series(
            &format!("subtask {}", curve.subtask_id),
            curve.losses.iter().map(|&(x, l)| (x, unit.from_nats(l))).collect(),
            SeriesStyle::LineMarkers,
        );
    }
    plot_to(ctx, "subtasks.svg", subtask_plot)?;

    if a.save_models {
        for (i, model) in models.iter().enumerate() {
            let name = format!("model_{i}.ckpt");
            model.save(&ctx.path(&name))?;
            ctx.record(&name)?;
        }
    }
    ctx.write_json("sweep.json", &summary)
}

/// Samples of the `top` most frequent subtasks, at most `cap` each.
pub fn restrict_samples(batch: &SampleBatch, top: Option<usize>, cap: Option<usize>) -> SampleBatch {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    let rows: Vec<usize> = (0..batch.len())
        .filter(|&i| {
            let id = batch.subtask_ids()[i];
            if top.is_some_and(|t| id as usize >= t) {
                return false;
            }
            let count = seen.entry(id).or_default();
            *count += 1;
            cap.is_none_or(|c| *count <= c)
        })
        .collect();
    batch.select(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QdgSummary {
    pub samples_in: usize,
    pub samples_clustered: usize,
    pub dropped_zero_gradient: usize,
    pub n_clusters: usize,
    pub purity: f64,
    pub within_mean: Option<f64>,
    pub between_mean: Option<f64>,
    pub laplacian_eigenvalues: Vec<f64>,
    pub inertia: f64,
    pub max_residual: f64,
}

fn qdg(ctx: &mut RunContext, a: &QdgArgs) -> Result<()> {
    let model = MlpModel::load(&a.model)?;
    let (_, data) = read_dataset(&a.data)?;
    let samples = restrict_samples(&data, a.top_subtasks, a.max_per_subtask);
    let grads = build_grad_matrix(&model, &samples, a.loss_filter_nats)?;
    let cosine = cosine_affinity(&grads);
    let angular = angular_affinity(&cosine)?;
    let n_clusters = a.n_clusters.min(angular.m);
    let assignment = spectral_cluster(&angular, n_clusters, crate::seed::derive_seed(a.seed, "kmeans"))?;
    let truth = grads.ground_truth.clone().unwrap_or_default();

    let mut labels = Table::new(&["sample_id", "cluster", "ground_truth"]);
    for (row, &label) in assignment.labels.iter().enumerate() {
        labels.push(vec![grads.sample_ids[row].to_string(), label.to_string(), truth[row].to_string()]);
    }
    ctx.write_table("labels.csv", &labels)?;

    let curve = rank_frequency(&assignment);
    ctx.write_table("rankfreq.csv", &rank_frequency_table(&[(0.0, &curve)], false))?;
    if a.write_affinity {
        write_affinity(&ctx.path("affinity.bin"), &angular)?;
        ctx.record("affinity.bin")?;
    }
    let order = block_order(&truth.iter().map(|&t| t as usize).collect::<Vec<_>>());
    let svg = emit_heatmap_svg(&angular.values, angular.m, &order, 200, "angular similarity (ordered by subtask)", Some(ctx.run_id()))?;
    ctx.write_text("similarity.svg", &svg)?;

    let (within, between) = match within_between_means(&angular, &truth) {
        Ok((w, b)) => (Some(w), Some(b)),
        Err(_) => (None, None),
    };
    let summary = QdgSummary {
        samples_in: samples.len(),
        samples_clustered: grads.rows(),
        dropped_zero_gradient: grads.dropped_zero_gradient,
        n_clusters,
        purity: cluster_purity(&assignment.labels, &truth)?,
        within_mean: within,
        between_mean: between,
        laplacian_eigenvalues: assignment.laplacian_eigenvalues.clone(),
        inertia: assignment.inertia,
        max_residual: assignment.max_residual,
    };
    ctx.write_json("qdg.json", &summary)
}

/// `rankfreq.csv` rows; the `alpha` column is included when `with_alpha`.
fn rank_frequency_table(curves: &[(f64, &RankFrequencyCurve)], with_alpha: bool) -> Table {
    let mut t = if with_alpha { Table::new(&["alpha", "k", "rank", "size"]) } else { Table::new(&["k", "rank", "size"]) };
    for (alpha, c) in curves {
        for (r, s) in c.sizes.iter().enumerate() {
            let mut row = vec![c.n_clusters.to_string(), (r + 1).to_string(), s.to_string()];
            if with_alpha {
                row.insert(0, format_f64(*alpha));
            }
            t.push(row);
        }
    }
    t
}

fn envelope_outputs(ctx: &mut RunContext, curves: &[RankFrequencyCurve], window: (usize, usize), title: &str) -> Result<()> {
    let fit = envelope_slope(curves, window)?;
    let mut t = Table::new(&["rank", "size"]);
    for &(r, s) in &fit.envelope {
        t.push(vec![r.to_string(), s.to_string()]);
    }
    ctx.write_table("envelope.csv", &t)?;
    let mut spec = PlotSpec::new(title, "cluster rank", "cluster size", AxisScale::Log, AxisScale::Log);
    for c in curves {
        let pts = c.sizes.iter().enumerate().map(|(r, &s)| ((r + 1) as f64, s as f64)).collect();
        spec = spec.with_series(&format!("k = {}", c.n_clusters), pts, SeriesStyle::Line);
    }
    let (lo, hi) = fit.effective_window;
    let fitted = vec![(lo as f64, fit.intercept.exp() * (lo as f64).powf(fit.slope)), (hi as f64, fit.intercept.exp() * (hi as f64).powf(fit.slope))];
    spec = spec.with_series(&format!("envelope fit, slope {:.3}", fit.slope), fitted, SeriesStyle::Line);
    plot_to(ctx, "envelope.svg", spec)?;
    ctx.write_json("envelope.json", &fit)
}

fn toy(ctx: &mut RunContext, a: &ToyArgs) -> Result<()> {
    match &a.alphas {
        None => {
            let sweep = toy_cluster_sweep(&a.config)?;
            let rows: Vec<(f64, &RankFrequencyCurve)> = sweep.curves.iter().map(|c| (a.config.alpha, c)).collect();
            ctx.write_table("rankfreq.csv", &rank_frequency_table(&rows, false))?;
            envelope_outputs(ctx, &sweep.curves, a.config.window, &format!("toy model, alpha = {}", a.config.alpha))?;
            ctx.write_json("toy.json", &sweep)
        }
        Some(alphas) => {
            let rows = alpha_recovery_sweep(alphas, &a.config)?;
            let mut table = Table::new(&["alpha", "slope", "error", "r_squared"]);
            for r in &rows {
                table.push(vec![format_f64(r.alpha), format_f64(r.slope), format_f64(r.error), format_f64(r.r_squared)]);
            }
            ctx.write_table("recovery.csv", &table)?;
            let curves: Vec<(f64, &RankFrequencyCurve)> = rows.iter().flat_map(|r| r.curves.iter().map(move |c| (r.alpha, c))).collect();
            ctx.write_table("rankfreq.csv", &rank_frequency_table(&curves, true))?;
            let (mae, rho) = recovery_summary(&rows)?;
            let spec = PlotSpec::new("envelope slope vs alpha", "alpha", "estimated |slope|", AxisScale::Linear, AxisScale::Linear)
                .with_series("estimate", rows.iter().map(|r| (r.alpha, r.slope.abs())).collect(), SeriesStyle::LineMarkers)
                .with_series("truth", rows.iter().map(|r| (r.alpha, r.alpha)).collect(), SeriesStyle::Line);
            plot_to(ctx, "recovery.svg", spec)?;
            ctx.write_json("toy.json", &serde_json::json!({ "rows": rows, "mean_abs_error": mae, "spearman": rho }))
        }
    }
}

/// Reads rank-frequency curves from CSVs with columns `k`, `rank`, `size`
/// (and optionally `alpha`). Each distinct `(alpha, k)` in a file is a curve.
pub fn read_rank_frequency(path: &Path) -> Result<Vec<RankFrequencyCurve>> {
    let table = Table::read(path)?;
    let ks = table.floats("k", path)?;
    let ranks = table.floats("rank", path)?;
    let sizes = table.floats("size", path)?;
    let alphas = match table.column("alpha") {
        Some(_) => table.floats("alpha", path)?,
        None => vec![0.0; ks.len()],
    };
    // ((alpha bits, k), (rank, size) pairs)
    type Group = ((u64, usize), Vec<(usize, usize)>);
    let mut grouped: Vec<Group> = Vec::new();
    for i in 0..ks.len() {
        let key = (alphas[i].to_bits(), ks[i] as usize);
        let entry = match grouped.iter_mut().find(|g| g.0 == key) {
            Some(e) => e,
            None => {
                grouped.push((key, Vec::new()));
                grouped.last_mut().expect("just pushed")
            }
        };
        if ranks[i] < 1.0 || sizes[i] < 0.0 {
            return Err(Error::format(path, format!("row {}: rank must be >= 1 and size >= 0", i + 1)));
        }
        entry.1.push((ranks[i] as usize, sizes[i] as usize));
    }
    Ok(grouped
        .into_iter()
        .map(|((_, k), mut rows)| {
            rows.sort();
            let labels: Vec<usize> = rows.iter().enumerate().flat_map(|(c, &(_, s))| std::iter::repeat_n(c, s)).collect();
            let mut curve = rank_frequency_from_labels(&labels, k);
            curve.n_clusters = k;
            curve
        })
        .collect())
}

fn envelope(ctx: &mut RunContext, a: &EnvelopeArgs) -> Result<()> {
    let mut curves = Vec::new();
    for path in &a.curves {
        curves.extend(read_rank_frequency(path)?);
    }
    envelope_outputs(ctx, &curves, a.window, "rank-frequency envelope")
}

fn plot(ctx: &mut RunContext, a: &PlotArgs) -> Result<()> {
    let table = Table::read(&a.csv)?;
    let xs = table.floats(&a.x, &a.csv)?;
    let ys = table.floats(&a.y, &a.csv)?;
    let scale = |log: bool| if log { AxisScale::Log } else { AxisScale::Linear };
    let mut spec = PlotSpec::new(&a.title, &a.x, &a.y, scale(a.log_x), scale(a.log_y));
    match &a.group {
        None => spec = spec.with_series(&a.y, xs.into_iter().zip(ys).collect(), SeriesStyle::LineMarkers),
        Some(g) => {
            let col = table.column(g).ok_or_else(|| Error::format(&a.csv, format!("missing column `{g}`")))?;
            let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
            for (i, row) in table.rows.iter().enumerate() {
                match groups.iter_mut().find(|x| x.0 == row[col]) {
                    Some(e) => e.1.push((xs[i], ys[i])),
                    None => groups.push((row[col].clone(), vec![(xs[i], ys[i])])),
                }
            }
            for (label, pts) in groups {
                spec = spec.with_series(&format!("{g} = {label}"), pts, SeriesStyle::LineMarkers);
            }
        }
    }
    plot_to(ctx, "plot.svg", spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::sha256_file;

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            n_tasks: 4,
            n: 10,
            k: 2,
            widths: vec![4, 8, 16],
            batch_size: 64,
            total_steps: 20,
            eval_every: 10,
            eval_per_task: 10,
            ..SweepConfig::desk(SweepAxis::Params)
        }
    }

    #[test]
    fn theory_csv_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = Command::Theory(TheoryArgs {
            alpha: 0.4,
            loss: LossProfile::Constant { a: 0.0, b: 1.0 },
            n_lo: 1,
            n_hi: 10_000,
            points: None,
            support: None,
        });
        let manifest = run_command(&cmd, dir.path(), &[]).unwrap();
        let table = Table::read(&dir.path().join("theory.csv")).unwrap();
        assert_eq!(table.rows.len(), 10_000);
        let losses = table.floats("loss_exact_nats", &dir.path().join("theory.csv")).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(manifest.outputs.len(), 2);
    }

    #[test]
    fn gen_then_qdg_links_by_hash() {
        let dir = tempfile::tempdir().unwrap();
        let sweep_dir = dir.path().join("sweep");
        let mut config = tiny_sweep();
        config.widths = vec![16];
        config.total_steps = 200;
        let sweep_manifest = run_command(&Command::Sweep(SweepArgs { config, save_models: true }), &sweep_dir, &[]).unwrap();
        let gen_dir = dir.path().join("gen");
        let gen_cmd = Command::Gen(GenArgs { n_tasks: 4, n: 10, k: 2, alpha: 0.4, m: 0, per_task: Some(20), seed: 0, format: DatasetFormat::Bin });
        run_command(&gen_cmd, &gen_dir, &[]).unwrap();
        let qdg_dir = dir.path().join("qdg");
        let qdg_cmd = Command::Qdg(QdgArgs {
            model: sweep_dir.join("model_0.ckpt"),
            data: gen_dir.join("dataset.bin"),
            n_clusters: 4,
            loss_filter_nats: f64::INFINITY,
            top_subtasks: None,
            max_per_subtask: None,
            seed: 0,
            write_affinity: true,
        });
        let manifest = run_command(&qdg_cmd, &qdg_dir, &[]).unwrap();
        let model_hash = sweep_manifest.outputs.iter().find(|o| o.path == "model_0.ckpt").unwrap().sha256.clone();
        assert_eq!(manifest.inputs[0].sha256, model_hash);
        for o in &manifest.outputs {
            assert_eq!(sha256_file(&qdg_dir.join(&o.path)).unwrap(), o.sha256);
        }
        let summary: serde_json::Value = read_json(&qdg_dir.join("qdg.json")).unwrap();
        assert_eq!(summary["run_id"], manifest.run_id);
    }

    #[test]
    fn replay_reproduces_csv_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let first = run_command(&Command::Sweep(SweepArgs { config: tiny_sweep(), save_models: false }), &dir.path().join("a"), &[]).unwrap();
        let second = replay_manifest(&dir.path().join("a").join(MANIFEST_FILE), &dir.path().join("b")).unwrap();
        assert_eq!(first.run_id, second.run_id);
        for (x, y) in first.outputs.iter().zip(&second.outputs) {
            if x.path.ends_with(".csv") {
                assert_eq!(x.sha256, y.sha256, "{}", x.path);
            }
        }
    }

    #[test]
    fn envelope_reads_toy_output() {
        let dir = tempfile::tempdir().unwrap();
        let config = ToyModelConfig { n_subtasks: 30, amplitude: 30.0, dim: 50, k_list: vec![5, 10], window: (1, 10), ..ToyModelConfig::desk() };
        run_command(&Command::Toy(ToyArgs { config, alphas: None }), &dir.path().join("toy"), &[]).unwrap();
        let curves = read_rank_frequency(&dir.path().join("toy").join("rankfreq.csv")).unwrap();
        assert_eq!(curves.len(), 2);
        let env_dir = dir.path().join("env");
        run_command(&Command::Envelope(EnvelopeArgs { curves: vec![dir.path().join("toy").join("rankfreq.csv")], window: (1, 10) }), &env_dir, &[]).unwrap();
        let a = Table::read(&env_dir.join("envelope.csv")).unwrap();
        let b = Table::read(&dir.path().join("toy").join("envelope.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restrict_keeps_top_subtasks_with_cap() {
        let spec = build_task_spec(5, 8, 2, 0.4, 0).unwrap();
        let batch = fixed_eval_set(&spec, 6, 0).unwrap();
        let r = restrict_samples(&batch, Some(2), Some(3));
        assert_eq!(r.len(), 6);
        assert!(r.subtask_ids().iter().all(|&s| s < 2));
    }
}
