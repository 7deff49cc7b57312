//! `quanta`: command-line front end for the scaling-law toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quanta_core::cluster::ToyModelConfig;
use quanta_core::harness::{SweepAxis, SweepConfig};
use quanta_core::io::read_json;
use quanta_core::pipeline::{
    replay_manifest, run_command, Command, DatasetFormat, EnvelopeArgs, GenArgs, PlotArgs, Profile, QdgArgs, SweepArgs,
    TheoryArgs, ToyArgs,
};
use quanta_core::qdg::DEFAULT_LOSS_FILTER_NATS;
use quanta_core::theory::LossProfile;
use quanta_core::Error;

#[derive(Parser, Debug)]
#[command(name = "quanta", version, about = "Quanta scaling laws: theory curves, parity sweeps, gradient clustering")]
struct Cli {
    /// Worker threads (1 gives reproducible single-threaded runs).
    #[arg(long, global = true, env = "QUANTA_THREADS")]
    threads: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Default size profile for sweeps and the toy model.
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Expected loss of the quanta model as a function of quanta learned.
    Theory(TheoryCli),
    /// Write a multitask sparse parity dataset.
    Gen(GenCli),
    /// Train a scaling sweep.
    Sweep(SweepCli),
    /// Cluster samples by their gradients.
    Qdg(QdgCli),
    /// Toy Gaussian cluster model and envelope fit.
    Toy(ToyCli),
    /// Fit the envelope of rank-frequency curves.
    Envelope(EnvelopeCli),
    /// Plot two columns of a CSV file.
    Plot(PlotCli),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayCli),
}

#[derive(Args, Debug)]
struct TheoryCli {
    #[arg(long)]
    alpha: f64,
    /// Loss profile: `constant:a,b`, `logfreq` or `logoffset:C`.
    #[arg(long, default_value = "constant:0,1")]
    profile: String,
    /// Range of quanta learned, `lo:hi`.
    #[arg(long, default_value = "1:10000")]
    n: String,
    /// Log-spaced point count instead of every integer.
    #[arg(long)]
    points: Option<usize>,
    /// Finite number of quanta.
    #[arg(long)]
    support: Option<u64>,
}

#[derive(Args, Debug)]
struct GenCli {
    #[arg(long, default_value_t = 100)]
    n_tasks: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    /// Number of i.i.d. samples.
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    /// Draw this many samples per subtask instead of i.i.d. samples.
    #[arg(long)]
    per_task: Option<usize>,
    #[arg(long, value_enum, default_value = "bin")]
    format: FormatArg,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FormatArg {
    Bin,
    Csv,
}

#[derive(Args, Debug)]
struct SweepCli {
    #[arg(value_enum)]
    axis: AxisArg,
    /// JSON sweep config; defaults come from the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the top-level profile.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Skip writing model checkpoints.
    #[arg(long)]
    no_models: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum AxisArg {
    Params,
    Data,
    Steps,
}

#[derive(Args, Debug)]
struct QdgCli {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    n_clusters: usize,
    /// Keep samples with loss below this many nats.
    #[arg(long, default_value_t = DEFAULT_LOSS_FILTER_NATS)]
    loss_filter: f64,
    #[arg(long)]
    top_subtasks: Option<usize>,
    #[arg(long)]
    max_per_subtask: Option<usize>,
    /// Also write the angular affinity matrix.
    #[arg(long)]
    write_affinity: bool,
}

#[derive(Args, Debug)]
struct ToyCli {
    /// JSON toy config; defaults come from the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated exponents for the recovery sweep.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Envelope fit window `lo:hi`.
    #[arg(long)]
    window: Option<String>,
}

#[derive(Args, Debug)]
struct EnvelopeCli {
    #[arg(long, num_args = 1.., required = true)]
    curves: Vec<PathBuf>,
    #[arg(long, default_value = "10:300")]
    window: String,
}

#[derive(Args, Debug)]
struct PlotCli {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    log_x: bool,
    #[arg(long)]
    log_y: bool,
    #[arg(long, default_value = "")]
    title: String,
}

#[derive(Args, Debug)]
struct ReplayCli {
    manifest: PathBuf,
}

fn parse_range<T: std::str::FromStr>(field: &str, text: &str) -> Result<(T, T), Error> {
    let bad = || Error::Config { field: field.into(), message: format!("expected `lo:hi`, got `{text}`") };
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn load_config<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    read_json(path)
}

fn resolve(cli: &Cli) -> Result<Option<Command>, Error> {
    let profile = cli.profile.into();
    Ok(Some(match &cli.command {
        Cmd::Theory(t) => {
            let (n_lo, n_hi) = parse_range("n", &t.n)?;
            Command::Theory(TheoryArgs {
                alpha: t.alpha,
                loss: t.profile.parse::<LossProfile>()?,
                n_lo,
                n_hi,
                points: t.points,
                support: t.support,
            })
        }
        Cmd::Gen(g) => Command::Gen(GenArgs {
            n_tasks: g.n_tasks,
            n: g.n,
            k: g.k,
            alpha: g.alpha,
            m: g.m,
            per_task: g.per_task,
            seed: cli.seed.unwrap_or(0),
            format: match g.format {
                FormatArg::Bin => DatasetFormat::Bin,
                FormatArg::Csv => DatasetFormat::Csv,
            },
        }),
        Cmd::Sweep(s) => {
            let axis = match s.axis {
                AxisArg::Params => SweepAxis::Params,
                AxisArg::Data => SweepAxis::Data,
                AxisArg::Steps => SweepAxis::Steps,
            };
            let mut config: SweepConfig = match &s.config {
                Some(path) => load_config(path)?,
                None => match s.profile.map(Profile::from).unwrap_or(profile) {
                    Profile::Desk => SweepConfig::desk(axis),
                    Profile::Paper => SweepConfig::paper(axis),
                },
            };
            if config.axis != axis {
                return Err(Error::Config { field: "axis".into(), message: format!("config has {}, command asks for {axis}", config.axis) });
            }
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            config.validate()?;
            Command::Sweep(SweepArgs { config, save_models: !s.no_models })
        }
        Cmd::Qdg(q) => Command::Qdg(QdgArgs {
            model: q.model.clone(),
            data: q.data.clone(),
            n_clusters: q.n_clusters,
            loss_filter_nats: q.loss_filter,
            top_subtasks: q.top_subtasks,
            max_per_subtask: q.max_per_subtask,
            seed: cli.seed.unwrap_or(0),
            write_affinity: q.write_affinity,
        }),
        Cmd::Toy(t) => {
            let mut config: ToyModelConfig = match &t.config {
                Some(path) => load_config(path)?,
                None => match t.profile.map(Profile::from).unwrap_or(profile) {
                    Profile::Desk => ToyModelConfig::desk(),
                    Profile::Paper => ToyModelConfig::paper(),
                },
            };
            if let Some(alpha) = t.alpha {
                config.alpha = alpha;
            }
            if let Some(window) = &t.window {
                config.window = parse_range("window", window)?;
            }
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            config.validate()?;
            Command::Toy(ToyArgs { config, alphas: t.alphas.clone() })
        }
        Cmd::Envelope(e) => Command::Envelope(EnvelopeArgs { curves: e.curves.clone(), window: parse_range("window", &e.window)? }),
        Cmd::Plot(p) => Command::Plot(PlotArgs {
            csv: p.csv.clone(),
            x: p.x.clone(),
            y: p.y.clone(),
            group: p.group.clone(),
            log_x: p.log_x,
            log_y: p.log_y,
            title: p.title.clone(),
        }),
        Cmd::Replay(_) => return Ok(None),
    }))
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config { field: "threads".into(), message: e.to_string() })?;
    }
    let argv: Vec<String> = std::env::args().collect();
    let manifest = match (&cli.command, resolve(cli)?) {
        (Cmd::Replay(r), _) => replay_manifest(&r.manifest, &cli.out_dir)?,
        (_, Some(command)) => run_command(&command, &cli.out_dir, &argv)?,
        (_, None) => unreachable!("only replay resolves to no command"),
    };
    println!("{}", cli.out_dir.join(quanta_core::io::MANIFEST_FILE).display());
    eprintln!("run {} wrote {} files", manifest.run_id, manifest.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
