//! The `mgrl` command line.

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mgrl::episodes::{load_dataset, synth_dataset, Split, SynthConfig};
use mgrl::granularity::{DistanceWeights, DEFAULT_TAU};
use mgrl::index::{build_index, GalleryIndex};
use mgrl::metrics::{
    curve_csv, evaluate, stage_embeddings, sweep_csv, sweep_grid, weight_sweep, ReportConfig,
};
use mgrl::model::AttentionKind;
use mgrl::training::{train, Checkpoint, LossMode, TrainConfig};
use mgrl::Embedder32;

use crate::api::{router, AppState};
use crate::engine::{Engine, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mgrl",
    version,
    about = "Sketch-to-photo face retrieval: data, training, indexing, evaluation, serving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic face dataset with drawing episodes.
    Synth(SynthArgs),
    /// Train an embedding network and write a checkpoint.
    Train(TrainArgs),
    /// Embed a gallery split and write an index.
    Index(IndexArgs),
    /// Rank every stage of the test episodes and report retrieval metrics.
    Eval(EvalArgs),
    /// Serve interactive retrieval sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

impl WeightArgs {
    fn weights(&self) -> DistanceWeights {
        DistanceWeights::new(self.alpha, self.beta, self.gamma)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of gallery photos.
    #[arg(long, default_value_t = 64)]
    pub gallery: usize,
    #[arg(long, default_value_t = 64)]
    pub episodes: usize,
    #[arg(long, default_value_t = 8)]
    pub q_min: usize,
    #[arg(long, default_value_t = 20)]
    pub q_max: usize,
    /// Share of photos (and their episodes) held out for testing.
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttentionArg {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    PerStage,
    EpisodeSum,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-epoch results to this CSV file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr_backbone: f64,
    #[arg(long, default_value_t = 5e-3)]
    pub lr_new: f64,
    /// Leading epochs with the backbone frozen.
    #[arg(long, default_value_t = 5)]
    pub frozen_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length images are resampled to before embedding.
    #[arg(long, default_value_t = 256)]
    pub canvas: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long, value_enum, default_value = "sigmoid")]
    pub attention: AttentionArg,
    #[arg(long, value_enum, default_value = "per-stage")]
    pub loss: LossArg,
    #[command(flatten)]
    pub weights: WeightArgs,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_backbone: self.lr_backbone,
            lr_new: self.lr_new,
            dim: self.dim,
            weights: self.weights.weights(),
            tau: self.tau,
            frozen_epochs: self.frozen_epochs,
            seed: self.seed,
            canvas: self.canvas,
            attention: match self.attention {
                AttentionArg::Sigmoid => AttentionKind::Sigmoid,
                AttentionArg::Softmax => AttentionKind::Softmax,
            },
            loss: match self.loss {
                LossArg::PerStage => LossMode::PerStage,
                LossArg::EpisodeSum => LossMode::EpisodeSum,
            },
            steps_per_epoch: self.steps_per_epoch,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the report and CSV files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Weights to sweep: `beta`, `gamma` or `beta,gamma`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Values each swept weight takes.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub grid: Vec<f64>,
    /// Number of stage-progress bins in the curve.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Dataset root, for photo thumbnails.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub topk: u64,
    /// Minutes before an untouched session is dropped.
    #[arg(long, default_value_t = 30)]
    pub idle_minutes: u64,
    /// Directory of static UI assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<(), BoxError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), BoxError> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_gallery: a.gallery,
        n_episodes: a.episodes,
        q_min: a.q_min,
        q_max: a.q_max,
        test_fraction: a.test_fraction,
        ..SynthConfig::default()
    };
    let m = synth_dataset(&a.out, &cfg)?;
    let test = m.photos_in(Split::Test).len();
    println!(
        "wrote {} photos ({} train / {} test) and {} episodes to {}",
        m.photos.len(),
        m.photos.len() - test,
        test,
        m.episodes.len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), BoxError> {
    let cfg = a.config();
    let manifest = load_dataset(&a.data)?;
    let outcome = train::<f32>(&manifest, &cfg, &mut |log| println!("{log}"))?;
    outcome.checkpoint.save(&a.out)?;
    if let Some(path) = &a.log {
        let mut csv = String::from("epoch,loss,val_mb,backbone_frozen\n");
        for l in &outcome.log {
            let val = l.val_mb.map(|v| format!("{v:.4}")).unwrap_or_default();
            csv += &format!("{},{:.6},{},{}\n", l.epoch, l.loss, val, l.backbone_frozen);
        }
        fs::write(path, csv)?;
    }
    println!(
        "checkpoint {} digest {:016x}",
        a.out.display(),
        outcome.checkpoint.digest()
    );
    Ok(())
}

fn embedder(path: &Path) -> Result<Embedder32, BoxError> {
    Ok(Embedder32::from_checkpoint(&Checkpoint::<f32>::load(path)?))
}

fn index_cmd(a: IndexArgs) -> Result<(), BoxError> {
    let emb = embedder(&a.ckpt)?;
    let manifest = load_dataset(&a.data)?;
    let index = build_index(&emb, &manifest, a.split.into())?;
    index.save(&a.out)?;
    println!("indexed {} photos into {}", index.len(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), BoxError> {
    let weights = a.weights.weights();
    weights.validate()?;
    let grid = a
        .sweep
        .as_deref()
        .map(|axes| sweep_grid(axes, &a.grid))
        .transpose()?;
    let ck = Checkpoint::<f32>::load(&a.ckpt)?;
    let emb = Embedder32::from_checkpoint(&ck);
    let index = GalleryIndex::load(&a.index)?;
    if emb.digest != index.checkpoint_digest() {
        return Err(format!(
            "index was built from checkpoint {:016x}, not {:016x}",
            index.checkpoint_digest(),
            emb.digest
        )
        .into());
    }
    let manifest = load_dataset(&a.data)?;
    let episodes = manifest.load_episodes(a.split.into())?;
    let embedded = stage_embeddings(&emb, &episodes)?;
    let config = ReportConfig {
        weights,
        topk: 5,
        tau: ck.train.tau,
        dim: emb.dim(),
    };
    let report = evaluate(&index, &embedded, config, a.bins)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.txt"), report.to_text())?;
    fs::write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(a.out.join("summary.csv"), report.summary_csv())?;
    fs::write(a.out.join("curve.csv"), curve_csv(&report.curve))?;
    print!("{}", report.to_text());
    if let Some(grid) = grid {
        let rows = weight_sweep(&index, &embedded, &grid)?;
        fs::write(a.out.join("sweep.csv"), sweep_csv(&rows))?;
        print!("{}", sweep_csv(&rows));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), BoxError> {
    let cfg = ServiceConfig {
        data: a.data.clone(),
        topk: a.topk as usize,
        weights: a.weights.weights(),
        ..ServiceConfig::new(&a.ckpt, &a.index)
    };
    let idle = Duration::from_secs(a.idle_minutes * 60);
    let state = match Engine::load(&cfg) {
        Ok(engine) => AppState::ready(engine),
        Err(e) => {
            eprintln!("warning: not ready: {e}");
            AppState::not_ready(e.to_string())
        }
    }
    .with_idle(idle);
    let state = Arc::new(state);
    let app = router(Arc::clone(&state), a.static_dir.clone());
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        let sweeper = Arc::clone(&state);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                sweeper.purge_idle();
            }
        });
        axum::serve(listener, app).await?;
        Ok::<(), BoxError>(())
    })
}
