use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use teletact::dataset::{gen_dataset, read_dataset, split_dataset, write_dataset, DatasetRecord, DEFAULT_REPS_PER_CELL};
use teletact::manifest::RunManifest;
use teletact::netlink::bench::run_bench;
use teletact::netlink::episode::{run_trials, AgentKind};
use teletact::netlink::node::{connect_with_retry, serve_local, serve_remote, LocalNodeOptions, RemoteNodeOptions};
use teletact::netlink::remote::RemoteConfig;
use teletact::render::render_feedback;
use teletact::sim::ContactParams;
use teletact::tactile::FeedbackMode;
use teletact::tiltnet::{evaluate, fit_dataset, init_seed, load_checkpoint, save_checkpoint, Model, ModelSpec, TrainConfig};
use teletact::{Error, Result};

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "teletact", version, about = "Tactile tilt sensing, classification and electro-tactile rendering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset (TXDS file)
    GenDataset(GenArgs),
    /// Train the tilt classifier on a dataset (writes a TXMD checkpoint)
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy and confusion matrix
    Eval(EvalArgs),
    /// Render electrode frames for every record of a dataset to CSV
    Render(RenderArgs),
    /// Run the simulated remote gripper node
    ServeRemote(RemoteArgs),
    /// Run the local rendering node, optionally with the console mirror
    ServeLocal(LocalArgs),
    /// Measure local tick latency
    Bench(BenchArgs),
    /// Run closed-loop trials with a scripted operator
    Episode(EpisodeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset path
    #[arg(long)]
    out: PathBuf,
    /// Seed for jitter and sensor noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per (class, gripper position) cell
    #[arg(long, default_value_t = DEFAULT_REPS_PER_CELL)]
    reps: usize,
    /// Sensor noise standard deviation in newtons
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Seed for the split, initialization and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Write per-epoch learning curves as CSV
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset file
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint; without one a freshly initialized model is evaluated
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Which part of the split to score
    #[arg(long, value_enum, default_value_t = SplitPart::Test)]
    split: SplitPart,
    /// Split seed (use the training seed)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the confusion matrix as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Checkpoint, needed for pattern mode
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset file
    #[arg(long = "in")]
    input: PathBuf,
    /// none | downsize | pattern
    #[arg(long)]
    mode: FeedbackMode,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RemoteArgs {
    /// Address to listen on
    #[arg(long, default_value = "127.0.0.1:7401")]
    listen: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pipette tilt in the holder, degrees
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    holder_tilt: f64,
    /// Draw a new holder tilt after every grasp
    #[arg(long)]
    shuffle_tilts: bool,
    /// Stop after this many ticks
    #[arg(long)]
    max_ticks: Option<u64>,
}

#[derive(Args)]
struct LocalArgs {
    /// Remote node address
    #[arg(long, default_value = "127.0.0.1:7401")]
    connect: String,
    /// Checkpoint, needed for pattern mode
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// none | downsize | pattern
    #[arg(long, default_value = "pattern")]
    mode: FeedbackMode,
    /// Serve the JSON mirror (WebSocket) on this address
    #[arg(long)]
    mirror: Option<String>,
    /// Stop after this many ticks
    #[arg(long)]
    max_ticks: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    ticks: usize,
    /// none | downsize | pattern
    #[arg(long, default_value = "pattern")]
    mode: FeedbackMode,
    /// Checkpoint; pattern mode without one times an untrained model
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Pace frames at the loop rate instead of back to back
    #[arg(long)]
    paced: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EpisodeArgs {
    /// oracle | blind | noisy
    #[arg(long, default_value = "noisy")]
    agent: AgentKind,
    /// Trials per mode
    #[arg(long, default_value_t = 64)]
    trials: usize,
    /// none | downsize | pattern; all three when omitted
    #[arg(long)]
    mode: Option<FeedbackMode>,
    /// Checkpoint, needed for pattern mode
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the summaries as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let r = read_dataset(path)?;
    log::info!("{}: {} records", path.display(), r.len());
    Ok(r)
}

fn load_model(ckpt: Option<&Path>, needed: bool) -> Result<Option<Model>> {
    match ckpt {
        Some(p) => Ok(Some(load_checkpoint(p)?)),
        None if needed => Err(Error::MissingModel),
        None => Ok(None),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn gen(a: GenArgs) -> Result<()> {
    let mut params = ContactParams {
        rng_seed: a.seed,
        ..ContactParams::default()
    };
    if let Some(n) = a.noise {
        params.noise_sigma = n;
    }
    let records = gen_dataset(&params, a.reps)?;
    write_dataset(&a.out, &records)?;
    say!("wrote {} records to {}", records.len(), a.out.display());
    RunManifest::new("gen-dataset", json!({ "seed": a.seed, "reps": a.reps, "contact": params }))
        .output(&a.out)?
        .write_beside(&a.out)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let records = load_records(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let spec = ModelSpec::default();
    let (model, report, split) = fit_dataset(&records, spec.clone(), &cfg)?;
    save_checkpoint(&a.out, &model)?;
    say!(
        "split {}/{}/{}; best epoch {} (val acc {:.4})",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        report.best_epoch,
        report.best_val_acc
    );
    if let Some(t) = &report.test {
        say!("test accuracy {:.4} (loss {:.4}, n={})", t.accuracy, t.loss, t.count);
        let _ = write!(std::io::stdout(), "{}", t.confusion_table());
    }
    let mut manifest = RunManifest::new("train", json!({ "train": cfg, "spec": format!("{spec:?}") })).input(&a.data)?;
    if let Some(c) = &a.curves {
        write_text(c, &report.curves_csv())?;
        manifest = manifest.output(c)?;
    }
    manifest.output(&a.out)?.write_beside(&a.out)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let records = load_records(&a.data)?;
    let model = match &a.ckpt {
        Some(p) => load_checkpoint(p)?,
        None => {
            log::warn!("no checkpoint given; evaluating an untrained model");
            Model::init(ModelSpec::default(), init_seed(a.seed))?
        }
    };
    let part = match a.split {
        SplitPart::All => records,
        p => {
            let s = split_dataset(&records, a.seed);
            match p {
                SplitPart::Train => s.train,
                SplitPart::Val => s.val,
                _ => s.test,
            }
        }
    };
    let r = evaluate(&model, &part)?;
    say!("accuracy {:.4} (loss {:.4}, n={})", r.accuracy, r.loss, r.count);
    let _ = write!(std::io::stdout(), "{}", r.confusion_table());
    if let Some(c) = &a.csv {
        write_text(c, &r.confusion_csv())?;
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let records = load_records(&a.input)?;
    let model = load_model(a.ckpt.as_deref(), a.mode == FeedbackMode::CnnPattern)?;
    let mut csv = String::from("sample_id,finger");
    for i in 0..20 {
        let _ = write!(csv, ",e{i}");
    }
    csv.push_str(",predicted\n");
    for r in &records {
        let fb = render_feedback(a.mode, &r.biframe, model.as_ref())?;
        let pred = fb.predicted.map(|c| c.degrees().to_string()).unwrap_or_default();
        for (finger, frame) in [("thumb", fb.left), ("index", fb.right)] {
            let _ = write!(csv, "{},{finger}", r.sample_id);
            for v in frame.to_bytes() {
                let _ = write!(csv, ",{v}");
            }
            let _ = writeln!(csv, ",{pred}");
        }
    }
    write_text(&a.out, &csv)?;
    say!("wrote {} rows to {}", 2 * records.len(), a.out.display());
    let mut m = RunManifest::new("render", json!({ "mode": a.mode.name() })).input(&a.input)?;
    if let Some(c) = &a.ckpt {
        m = m.input(c)?;
    }
    m.output(&a.out)?.write_beside(&a.out)?;
    Ok(())
}

fn remote_cmd(a: RemoteArgs) -> Result<()> {
    let listener = TcpListener::bind(&a.listen)?;
    let opts = RemoteNodeOptions {
        remote: RemoteConfig {
            holder_tilt_deg: a.holder_tilt,
            seed: a.seed,
            contact: ContactParams {
                rng_seed: a.seed,
                ..ContactParams::default()
            },
            ..RemoteConfig::default()
        },
        shuffle_tilts: a.shuffle_tilts,
        max_ticks: a.max_ticks,
    };
    let stats = serve_remote(listener, opts, Arc::new(AtomicBool::new(false)))?;
    say!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn local_cmd(a: LocalArgs) -> Result<()> {
    let model = load_model(a.ckpt.as_deref(), false)?;
    if model.is_none() && a.mode == FeedbackMode::CnnPattern {
        log::warn!("pattern mode without a checkpoint: electrodes stay off");
    }
    let mirror = a.mirror.as_deref().map(TcpListener::bind).transpose()?;
    if let Some(m) = &mirror {
        log::info!("mirror on ws://{}", m.local_addr()?);
    }
    let stream = connect_with_retry(&a.connect, Duration::from_secs(10))?;
    let opts = LocalNodeOptions {
        mode: a.mode,
        max_ticks: a.max_ticks,
    };
    let stats = serve_local(stream, mirror, opts, model, Arc::new(AtomicBool::new(false)))?;
    say!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let model = match (a.mode, load_model(a.ckpt.as_deref(), false)?) {
        (FeedbackMode::CnnPattern, None) => {
            log::info!("no checkpoint; timing an untrained model of the same shape");
            Some(Model::init(ModelSpec::default(), init_seed(a.seed))?)
        }
        (_, m) => m,
    };
    let r = run_bench(a.mode, model.as_ref(), a.ticks, a.paced, a.seed)?;
    say!("mode {} ticks {} paced {} overruns {}", r.mode.name(), r.ticks, r.paced, r.overruns);
    say!("{:<12} {:>10} {:>10} {:>10} {:>10}", "stage", "p50_us", "p90_us", "p99_us", "max_us");
    let s = &r.stages;
    for (name, p) in [
        ("decode", s.decode),
        ("downsize", s.downsize),
        ("inference", s.inference),
        ("mask_encode", s.mask_encode),
        ("encode", s.encode),
        ("total", s.total),
    ] {
        say!("{name:<12} {:>10.1} {:>10.1} {:>10.1} {:>10.1}", p.p50_us, p.p90_us, p.p99_us, p.max_us);
    }
    say!(
        "p99 total {:.1} us vs budget {:.1} us: {}",
        s.total.p99_us,
        r.budget_us,
        if r.within_budget() { "ok" } else { "over" }
    );
    if let Some(j) = &a.json {
        write_text(j, &serde_json::to_string_pretty(&r)?)?;
    }
    Ok(())
}

fn episode_cmd(a: EpisodeArgs) -> Result<()> {
    let modes: Vec<FeedbackMode> = a.mode.map_or(FeedbackMode::ALL.to_vec(), |m| vec![m]);
    let model = load_model(a.ckpt.as_deref(), false)?;
    if model.is_none() && modes.contains(&FeedbackMode::CnnPattern) {
        return Err(Error::MissingModel);
    }
    let contact = ContactParams {
        rng_seed: a.seed,
        ..ContactParams::default()
    };
    let mut all = Vec::new();
    say!("{:<10} {:<8} {:>7} {:>9} {:>8} {:>11}", "mode", "agent", "trials", "successes", "rate", "mean_ticks");
    for m in modes {
        let s = run_trials(a.agent, m, model.as_ref(), &contact, a.trials, a.seed)?;
        say!(
            "{:<10} {:<8} {:>7} {:>9} {:>8.4} {:>11.1}",
            m.name(),
            format!("{:?}", a.agent).to_lowercase(),
            s.trials,
            s.successes,
            s.success_rate,
            s.mean_ticks
        );
        all.push(s);
    }
    if let Some(j) = &a.json {
        write_text(j, &serde_json::to_string_pretty(&all)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenDataset(a) => gen(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Render(a) => render_cmd(a),
        Cmd::ServeRemote(a) => remote_cmd(a),
        Cmd::ServeLocal(a) => local_cmd(a),
        Cmd::Bench(a) => bench_cmd(a),
        Cmd::Episode(a) => episode_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TILTXTER_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
