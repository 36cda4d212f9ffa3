//! The `tempseg` command: dataset synthesis, training, inference, scoring,
//! fusion, timeline rendering and the gradient-check suite.
//!
//! Every subcommand that writes artifacts also writes a [`RunManifest`]
//! next to them.

pub mod manifest;
pub mod render;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tempseg::checks::full_suite;
use tempseg::config::ExperimentConfig;
use tempseg::featio::{
    load_features, parse_manifest, read_annotations, store_features, synth_dataset, write_annotations, Annotation,
    DatasetManifest, FeatureSequence, SynthConfig, FEATURE_MAGIC,
};
use tempseg::infer::{fuse_sets, predict, read_predictions, write_predictions};
use tempseg::metrics::evaluate;
use tempseg::model::Model;
use tempseg::trainer::{load_dataset, train_to_dir};

pub use manifest::RunManifest;

/// Setting this to `1` forces `deterministic = true` for training.
pub const DETERMINISTIC_ENV: &str = "TEMPSEG_DETERMINISTIC";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tempseg", version, about = "Temporal forgery localization on feature sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic forged/genuine dataset.
    Synth(SynthArgs),
    /// Train a model and write per-epoch checkpoints and a loss CSV.
    Train(TrainArgs),
    /// Predict segments for feature files.
    Infer(InferArgs),
    /// Score predictions against annotations.
    Eval(EvalArgs),
    /// Merge audio and video predictions sample by sample.
    Fuse(FuseArgs),
    /// Draw ground truth and predictions for one sample as SVG.
    Render(RenderArgs),
    /// Run the gradient-check suite against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sequences.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Feature frames per second.
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Sequence length in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Mean shift of forged frames.
    #[arg(long, default_value_t = 1.5)]
    pub shift: f64,
    /// Fraction of sequences without any forged segment.
    #[arg(long, default_value_t = 0.5)]
    pub genuine_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (JSON list of feature files and annotation ids).
    #[arg(long)]
    pub data: PathBuf,
    /// Annotations JSONL; defaults to `annotations.jsonl` beside the manifest.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Output directory for checkpoints, `model.tpk`, `loss.csv` and
    /// `config.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained weights (`model.tpk` or an epoch checkpoint).
    #[arg(long)]
    pub model: PathBuf,
    /// Config the model was trained with; defaults to `config.txt` beside
    /// the model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A TFF1 feature file or a dataset manifest.
    #[arg(long)]
    pub features: PathBuf,
    /// Prediction JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Annotations JSONL.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub audio_pred: PathBuf,
    #[arg(long)]
    pub video_pred: PathBuf,
    /// Fused prediction JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Sample to draw.
    #[arg(long)]
    pub id: String,
    /// SVG file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckSize {
    Tiny,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = CheckSize::Tiny)]
    pub size: CheckSize,
    /// Negate the backward rule of this primitive before checking.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

impl From<tempseg::Error> for CliError {
    fn from(e: tempseg::Error) -> Self {
        match e {
            tempseg::Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Render(a) => cmd_render(a),
        Command::Gradcheck(a) => cmd_gradcheck(a).map(|_| ()),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if !(a.fps > 0.0) || !(a.duration > 0.0) {
        return Err(CliError::Usage("--fps and --duration must be positive".into()));
    }
    if !(0.0..=1.0).contains(&a.genuine_fraction) {
        return Err(CliError::Usage("--genuine-fraction must lie in [0, 1]".into()));
    }
    let frames = (a.duration * a.fps).round() as usize;
    let cfg = SynthConfig {
        duration_sec: a.duration,
        dim: a.dim,
        feature_fps: a.fps,
        shift_magnitude: a.shift,
        m_max: frames,
        ..SynthConfig::default()
    };
    let samples = synth_dataset(a.n, a.seed, &cfg, a.genuine_fraction)?;
    let feat_dir = a.out.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| io_err(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut annotations = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len() + 2);
    for s in &samples {
        let rel = format!("features/{}.tff", s.sequence.id);
        let path = a.out.join(&rel);
        store_features(&path, &s.sequence)?;
        outputs.push(path);
        entries.push(serde_json::json!({ "features": rel, "annotations_id": s.sequence.id }));
        annotations.push(Annotation {
            id: s.sequence.id.clone(),
            duration: s.sequence.duration(),
            segments: s.segments.clone(),
        });
    }
    let manifest_path = a.out.join("manifest.json");
    write(&manifest_path, json_pretty(&entries))?;
    let ann_path = a.out.join("annotations.jsonl");
    write_annotations(&ann_path, &annotations)?;
    outputs.extend([manifest_path, ann_path]);
    let config = format!(
        "n = {}\nseed = {}\ndim = {}\nfps = {:?}\nduration = {:?}\nshift = {:?}\ngenuine_fraction = {:?}\n",
        a.n, a.seed, a.dim, a.fps, a.duration, a.shift, a.genuine_fraction
    );
    RunManifest::new("synth", Some(config), Some(a.seed), &[], &outputs)?.write(&a.out.join("run_manifest.json"))?;
    println!("wrote {} sequences to {}", samples.len(), a.out.display());
    Ok(())
}

fn json_pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
    s.push('\n');
    s
}

/// Config from a file (or defaults) with the environment override applied.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_kv(&read_text(p)?)?,
        None => ExperimentConfig::default(),
    };
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let ann = a.annotations.clone().unwrap_or_else(|| sibling(&a.data, "annotations.jsonl"));
    let manifest = DatasetManifest::load(&a.data, &ann)?;
    let data = load_dataset(&manifest, cfg.train.modality)?;
    if let Some(s) = data.first() {
        cfg.model.input_dim = s.sequence.dim;
    }
    let mut inputs = vec![a.data.clone(), ann];
    inputs.extend(manifest.entries.iter().map(|e| e.feature_path.clone()));
    if let Some(c) = &a.config {
        inputs.push(c.clone());
    }
    let (out, artifacts) = train_to_dir(&data, &cfg, &a.out, |e| {
        println!(
            "epoch {:>3} step {:>6} lr {:.3e} loss {:.5} (cls {:.5} reg {:.5})",
            e.epoch, e.step, e.lr, e.total, e.cls, e.reg
        );
    })?;
    let config_path = a.out.join("config.txt");
    write(&config_path, cfg.to_kv())?;
    let mut outputs = artifacts.checkpoints.clone();
    outputs.extend([artifacts.final_model.clone(), artifacts.loss_csv.clone(), config_path]);
    RunManifest::new("train", Some(cfg.to_kv()), Some(cfg.train.seed), &inputs, &outputs)?
        .write(&a.out.join("run_manifest.json"))?;
    println!(
        "trained {} epochs on {} sequences; {} steps skipped; model at {}",
        out.log.len(),
        data.len(),
        out.skipped_steps,
        artifacts.final_model.display()
    );
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// A single TFF1 file, or every file listed in a manifest.
fn feature_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        return Ok(vec![path.to_path_buf()]);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{}: neither a feature file nor a manifest", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest(&text)?.iter().map(|e| base.join(&e.features)).collect())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let config_path = a.config.clone().unwrap_or_else(|| sibling(&a.model, "config.txt"));
    let cfg = load_config(Some(&config_path))?;
    let paths = feature_inputs(&a.features)?;
    let sequences: Vec<FeatureSequence> = paths.iter().map(load_features).collect::<tempseg::Result<_>>()?;
    let dim = match (cfg.model.input_dim, sequences.first()) {
        (0, Some(s)) => s.dim,
        (0, None) => return Err(CliError::Usage("config has no input_dim and there are no features".into())),
        (d, _) => d,
    };
    let weights = fs::read(&a.model).map_err(|e| io_err(&a.model, e))?;
    let model = Model::<f32>::from_checkpoint(&cfg.model, dim, &weights)?;
    let preds = sequences.iter().map(|s| predict(&model, s, &cfg.infer)).collect::<tempseg::Result<Vec<_>>>()?;
    write_predictions(&a.out, &preds)?;
    let mut inputs = vec![a.model.clone(), config_path];
    inputs.extend(paths);
    RunManifest::new("infer", Some(cfg.to_kv()), None, &inputs, std::slice::from_ref(&a.out))?
        .write(&run_manifest_for(&a.out))?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

/// `<file>.run.json` beside a single-file output.
pub fn run_manifest_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}

/// Prints the metrics JSON and returns it.
pub fn cmd_eval(a: &EvalArgs) -> Result<serde_json::Value> {
    let preds = read_predictions(&a.pred)?;
    let gts = read_annotations(&a.gt)?;
    let report = evaluate(&preds, &gts)?;
    let json = report.to_json();
    let text = json_pretty(&json);
    print!("{text}");
    if let Some(out) = &a.out {
        write(out, &text)?;
        RunManifest::new("eval", None, None, &[a.pred.clone(), a.gt.clone()], std::slice::from_ref(out))?
            .write(&run_manifest_for(out))?;
    }
    Ok(json)
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let audio = read_predictions(&a.audio_pred)?;
    let video = read_predictions(&a.video_pred)?;
    let fused = fuse_sets(&audio, &video)?;
    write_predictions(&a.out, &fused)?;
    RunManifest::new(
        "fuse",
        None,
        None,
        &[a.audio_pred.clone(), a.video_pred.clone()],
        std::slice::from_ref(&a.out),
    )?
    .write(&run_manifest_for(&a.out))?;
    println!("fused {} samples into {}", fused.len(), a.out.display());
    Ok(())
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let preds = read_predictions(&a.pred)?;
    let gts = read_annotations(&a.gt)?;
    let gt = gts
        .iter()
        .find(|g| g.id == a.id)
        .ok_or_else(|| CliError::Data(format!("unknown id {:?} in {}", a.id, a.gt.display())))?;
    let pred = preds
        .iter()
        .find(|p| p.id == a.id)
        .ok_or_else(|| CliError::Data(format!("unknown id {:?} in {}", a.id, a.pred.display())))?;
    write(&a.out, render::timeline_svg(gt, pred))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Prints one line per check; fails with exit code 3 if any check fails.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let CheckSize::Tiny = a.size;
    if let Some(name) = &a.inject_fault {
        tempseg::tensor::fault::inject_sign_flip(name);
    }
    let outcomes = full_suite();
    tempseg::tensor::fault::clear();
    let outcomes = outcomes.map_err(|e| CliError::Check(format!("gradcheck aborted: {e}")))?;
    let mut report = String::new();
    for o in &outcomes {
        report.push_str(&format!(
            "{:<4} {:<28} seeds {:>3} checked {:>6} skipped {:>4} max_rel_err {:.3e}\n",
            if o.passes() { "ok" } else { "FAIL" },
            o.name,
            o.seeds,
            o.checked,
            o.skipped,
            o.max_rel_error
        ));
    }
    let failed = outcomes.iter().filter(|o| !o.passes()).count();
    report.push_str(&format!("{} checks, {failed} failed\n", outcomes.len()));
    print!("{report}");
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} gradient checks failed")));
    }
    Ok(report)
}
