//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{load_dataset, pgm, Dataset, Difficulty, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, randomize_biases, GradCheckOptions, NetworkObjective};
use crate::loss::SupervisionWeights;
use crate::metrics::{binarize, compare_report, evaluate, DEFAULT_THRESHOLD};
use crate::model::{Model, ModelKind};
use crate::train::run_training;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dscnn", version, about = "Deeply-supervised CNN for binary image segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Report Dice statistics of one or more checkpoints.
    Eval(EvalArgs),
    /// Write predicted masks (and optionally every head's probability map).
    Predict(PredictArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value = "medium")]
    pub difficulty: Difficulty,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hold out this many source ids and write `split.txt`.
    #[arg(long)]
    pub test_sources: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory for the config echo, log and checkpoint.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// `key = value` config file, applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate the test part of this split only.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Expected model kind; a checkpoint of another kind is an error.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Row labels, one per checkpoint (defaults to the file stem).
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write the table here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PGM file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Write each supervision head's probability map.
    #[arg(long)]
    pub dump_heads: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "dscnn")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add this offset to one analytic gradient per parameter (negative control).
    #[arg(long)]
    pub corrupt: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub show: usize,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Spec(_) => EXIT_USAGE,
        Error::Numeric { .. } => EXIT_NUMERIC,
        Error::Dimension(_) | Error::Contract(_) | Error::Format(_) | Error::Load(_) | Error::Io(_) => EXIT_DATA,
    }
}

/// Runs a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let data = SynthSpec::new(a.n, a.size, a.difficulty, a.seed).generate()?;
    data.save(&a.out)?;
    if let Some(k) = a.test_sources {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let split = Split::random(&data.sources(), k, &mut rng)?;
        fs::write(a.out.join("split.txt"), split.render())?;
    }
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(EXIT_OK)
}

pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let echoed = a.run_dir.join(crate::train::CONFIG_FILE);
    // A resumed run starts from its own echoed config unless one is given.
    let mut c = if a.resume && a.config.is_none() && echoed.is_file() {
        RunConfig::read(&echoed)?
    } else {
        RunConfig::preset(&a.preset)?
    };
    if let Some(p) = &a.config {
        c.apply_text(&fs::read_to_string(p)?)?;
    }
    if let Some(d) = &a.data {
        c.data = Some(d.clone());
    }
    if let Some(s) = &a.split {
        c.split = Some(s.clone());
    }
    if let Some(m) = a.model {
        c.model = m;
    }
    if let Some(b) = a.base_channels {
        c.base_channels = b;
    }
    if let Some(s) = a.steps {
        c.steps = s;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v)?;
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let config = train_config(a)?;
    let out = run_training(&config, &a.run_dir, a.resume)?;
    match &out.last {
        Some(r) => println!("step {} total loss {:.6}", out.steps, r.losses.total),
        None => println!("nothing to do: already at step {}", out.steps),
    }
    println!("checkpoint: {}", out.checkpoint.display());
    Ok(EXIT_OK)
}

fn load_model(path: &Path, expect: Option<ModelKind>) -> Result<Model> {
    let model = checkpoint::load(path)?.model;
    if let Some(k) = expect {
        if model.kind() != k {
            return Err(Error::Format(format!(
                "{} holds a {} model, expected {k}",
                path.display(),
                model.kind()
            )));
        }
    }
    Ok(model)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    if !a.labels.is_empty() && a.labels.len() != a.checkpoints.len() {
        return Err(Error::Config("give one --label per --checkpoint".into()));
    }
    let all = load_dataset(&a.data)?;
    let test: Dataset = match &a.split {
        Some(p) => all.apply_split(&Split::read(p)?).1,
        None => all,
    };
    let mut summaries = Vec::new();
    for (i, path) in a.checkpoints.iter().enumerate() {
        let model = load_model(path, a.model)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        summaries.push(evaluate(&model, &test, a.threshold, label)?);
    }
    let table = compare_report(&summaries);
    print!("{table}");
    if let Some(p) = &a.report {
        fs::write(p, &table)?;
    }
    Ok(EXIT_OK)
}

fn pgm_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<i32> {
    let model = load_model(&a.checkpoint, None)?;
    let dump = a.dump_heads && model.net.head_count() > 0;
    if a.dump_heads && !dump {
        eprintln!("warning: {} model has no supervision heads; writing main masks only", model.kind());
    }
    fs::create_dir_all(&a.out)?;
    let inputs = pgm_inputs(&a.input)?;
    for path in &inputs {
        let image = pgm::read(path)?.to_unit_tensor()?;
        let outputs = model.predict(&image)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mask = binarize(&outputs[0], a.threshold)?;
        pgm::write(&a.out.join(format!("{stem}_mask.pgm")), &pgm::GrayImage::from_unit_plane(&mask, 0))?;
        if dump {
            for (i, head) in outputs[1..].iter().enumerate() {
                let img = pgm::GrayImage::from_unit_plane(head, 0);
                pgm::write(&a.out.join(format!("{stem}_head{}.pgm", i + 1)), &img)?;
            }
        }
    }
    println!("predicted {} image(s) into {}", inputs.len(), a.out.display());
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if a.size > 32 {
        return Err(Error::Config("gradcheck input size is limited to 32".into()));
    }
    let mut model = Model::new(a.model, 1, a.base_channels, a.seed)?;
    randomize_biases(&mut model.params, 0.1, a.seed);
    let sample = SynthSpec::new(1, a.size, Difficulty::Easy, a.seed).generate()?.samples.remove(0);
    let weights = SupervisionWeights::uniform(model.net.head_count());
    let objective = NetworkObjective {
        net: &model.net,
        image: &sample.image,
        mask: &sample.mask,
        weights: &weights,
    };
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tol,
        samples_per_param: a.samples,
        seed: a.seed,
        corrupt: a.corrupt,
    };
    let report = finite_diff_check(&objective, &model.params, &opts)?;
    println!(
        "{} parameters, {} elements checked, {} skipped (kink or below roundoff), max relative error {:.3e} (tolerance {:.1e})",
        report.params.len(),
        report.checked(),
        report.skipped(),
        report.max_rel_error(),
        report.tolerance
    );
    for p in report.worst(a.show) {
        println!(
            "  {:<24} rel {:.3e}  index {}  analytic {:.6e}  numeric {:.6e}",
            p.name, p.max_rel_error, p.worst_index, p.analytic, p.numeric
        );
    }
    if report.passed {
        println!("PASS");
        Ok(EXIT_OK)
    } else {
        println!("FAIL");
        Ok(EXIT_NUMERIC)
    }
}
