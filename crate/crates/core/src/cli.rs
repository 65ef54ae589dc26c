//! The `phrase-critic` command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 missing input file,
//! 4 bad checkpoint, 5 bad dataset, 6 training diverged. Failures also write
//! one JSON error record to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::critic::{
    accuracy, load_checkpoint, mean_score_accuracy, save_checkpoint, train_ranker, CriticModel, Hyper, Objective,
};
use crate::explain::{
    counterfactual_class, counterfactual_evidence, explain_scene, Annotation, SelectionConfig, DEFAULT_THRESHOLD,
};
use crate::foil::{evaluate_foil, foil_examples, train_foil_classifier};
use crate::generation::{ExplanationLm, DEFAULT_ALPHA, DEFAULT_CANDIDATES, DEFAULT_ERROR_RATE};
use crate::metrics::compare_methods;
use crate::negatives::DEFAULT_NEGATIVES;
use crate::svg::render_annotation;
use crate::worldsim::{generate_dataset, Dataset, DatasetConfig, Split};
use crate::{Error, Result};

pub const OUT_DIR_ENV: &str = "PHRASE_CRITIC_OUT";

#[derive(Debug, Parser)]
#[command(name = "phrase-critic", version, about = "Grounded explanation ranking on a synthetic world")]
pub struct Cli {
    /// Directory for outputs given without an explicit path.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a critic checkpoint.
    Train(TrainArgs),
    /// Select one explanation per scene.
    Rank(RankArgs),
    /// Explain why scenes are not of their most similar other class.
    Counterfactual(RankArgs),
    /// Run foil classification, detection and correction.
    Foil(FoilArgs),
    /// Compare selectors by CNP/CS and keypoint metrics.
    Eval(RankArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 150)]
    pub scenes_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub sentences_per_scene: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Margin ranking over flipped negatives.
    Rank,
    /// Binary relevance on foil sentences.
    Foil,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Rank)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = Hyper::default().epochs)]
    pub epochs: usize,
    /// Negatives per ground-truth sentence.
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    pub k: usize,
    /// Ground-truth sentences per scene used for rank pairs.
    #[arg(long, default_value_t = 1)]
    pub per_scene: usize,
    /// Hinge margin; only 1 is supported.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = Hyper::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = Hyper::default().batch)]
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Fluency threshold.
    #[arg(long = "T", allow_negative_numbers = true, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Candidates sampled per scene.
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_ERROR_RATE)]
    pub error_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Restrict to these scene ids.
    #[arg(long = "scene")]
    pub scenes: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one SVG per scene into `<out-dir>/svg`.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct FoilArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint trained with `--objective foil`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn classify_error(e: &Error) -> (&'static str, i32) {
    match e {
        Error::NotFound(_) => ("not-found", 3),
        Error::Corrupt { what: "checkpoint", .. } | Error::Version { what: "checkpoint", .. } => ("bad-checkpoint", 4),
        Error::Corrupt { what: "dataset", .. } | Error::Version { what: "dataset", .. } => ("bad-dataset", 5),
        Error::Diverged { .. } => ("diverged", 6),
        _ => ("failure", 1),
    }
}

fn report_error(kind: &str, message: String, exit_code: i32) -> i32 {
    let rec = ErrorRecord {
        error: kind,
        message,
        exit_code,
    };
    eprintln!("{}", serde_json::to_string(&rec).unwrap_or_default());
    exit_code
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            return report_error("usage", e.kind().to_string(), 2);
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = classify_error(&e);
            report_error(kind, e.to_string(), code)
        }
    }
}

fn output_path(out_dir: &Path, explicit: &Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    let path = explicit.clone().unwrap_or_else(|| out_dir.join(default_name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_model(path: &Path, expected: Objective) -> Result<CriticModel> {
    let (model, objective) = load_checkpoint(path)?;
    if objective != expected {
        return Err(Error::Config(format!(
            "{} was trained with the {objective:?} objective; this command needs {expected:?}",
            path.display()
        )));
    }
    Ok(model)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(&cli.out_dir, a),
        Command::Train(a) => train_cmd(&cli.out_dir, a),
        Command::Rank(a) => rank(&cli.out_dir, a, false),
        Command::Counterfactual(a) => rank(&cli.out_dir, a, true),
        Command::Foil(a) => foil(&cli.out_dir, a),
        Command::Eval(a) => eval(&cli.out_dir, a),
    }
}

fn synth(out_dir: &Path, a: &SynthArgs) -> Result<()> {
    let mut config = DatasetConfig {
        scenes_per_class: a.scenes_per_class,
        sentences_per_scene: a.sentences_per_scene,
        ..DatasetConfig::default()
    };
    config.profiles.num_classes = a.classes;
    config.foils_per_scene = config.foils_per_scene.min(a.sentences_per_scene);
    let out = output_path(out_dir, &a.out, "data.json")?;
    let data = generate_dataset(&config, a.seed)?;
    data.save(&out)?;
    println!(
        "wrote {} ({} scenes, {} sentences)",
        out.display(),
        data.scenes.len(),
        data.sentences.len()
    );
    Ok(())
}

fn train_cmd(out_dir: &Path, a: &TrainArgs) -> Result<()> {
    require(&a.data)?;
    let hyper = Hyper {
        epochs: a.epochs,
        margin: a.margin,
        lr: a.lr,
        batch: a.batch,
        ..Hyper::default()
    };
    hyper.validate()?;
    let out = output_path(out_dir, &a.out, "model.json")?;
    let report_path = output_path(out_dir, &a.report, "train_report.json")?;
    let data = Dataset::load(&a.data)?;
    let log = |l: &crate::critic::EpochLog| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val {}",
            l.epoch + 1,
            l.train_loss,
            l.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        )
    };
    let (model, report, objective) = match a.objective {
        ObjectiveArg::Rank => {
            let (model, report, examples) = train_ranker(&data, hyper, a.per_scene, a.k, a.seed, log)?;
            if !examples.test.is_empty() {
                println!(
                    "test pairwise accuracy {:.4} (mean grounding score {:.4})",
                    accuracy(&model, &examples.test)?,
                    mean_score_accuracy(&examples.test)?
                );
            }
            (model, report, Objective::Rank)
        }
        ObjectiveArg::Foil => {
            let examples = foil_examples(&data);
            let (model, report) = train_foil_classifier(&data, &examples, hyper, a.seed, log)?;
            (model, report, Objective::Binary)
        }
    };
    save_checkpoint(&model, objective, &out)?;
    write_json(&report_path, &report)?;
    println!(
        "wrote {} and {} in {:.1}s",
        out.display(),
        report_path.display(),
        report.wall_clock_secs
    );
    Ok(())
}

fn selection(a: &RankArgs) -> Result<SelectionConfig> {
    if !a.threshold.is_finite() {
        return Err(Error::Config("T must be finite".into()));
    }
    Ok(SelectionConfig {
        threshold: a.threshold,
        candidates: a.n,
        error_rate: a.error_rate,
        seed: a.seed,
    })
}

fn rank(out_dir: &Path, a: &RankArgs, with_counterfactual: bool) -> Result<()> {
    require(&a.data)?;
    require(&a.model)?;
    let config = selection(a)?;
    let default_name = if with_counterfactual { "counterfactuals.json" } else { "explanations.json" };
    let out = output_path(out_dir, &a.out, default_name)?;
    let data = Dataset::load(&a.data)?;
    let model = load_model(&a.model, Objective::Rank)?;
    let lm = ExplanationLm::fit(&data, DEFAULT_ALPHA)?;

    let scenes: Vec<_> = if a.scenes.is_empty() {
        data.scenes_in(a.split.into()).collect()
    } else {
        a.scenes
            .iter()
            .map(|&id| data.scene(id).ok_or_else(|| Error::Config(format!("no scene {id}"))))
            .collect::<Result<_>>()?
    };
    let annotations = scenes
        .par_iter()
        .map(|scene| {
            let (_, explanation) = explain_scene(scene, &data, &model, &lm, &config)?;
            let cf = if with_counterfactual {
                let class = counterfactual_class(scene, &data.profiles, &data.taxonomy)?;
                Some(counterfactual_evidence(scene, class, &data, &model, &lm, &config)?)
            } else {
                None
            };
            Annotation::new(&explanation, &model, cf.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&out, &annotations)?;

    if a.svg {
        let dir = out_dir.join("svg");
        std::fs::create_dir_all(&dir)?;
        for (scene, ann) in scenes.iter().zip(&annotations) {
            std::fs::write(dir.join(format!("scene_{:05}.svg", scene.id)), render_annotation(scene, ann))?;
        }
    }
    let fallbacks = annotations.iter().filter(|x| x.fallback).count();
    println!(
        "wrote {} ({} scenes, {} all-gated fallbacks)",
        out.display(),
        annotations.len(),
        fallbacks
    );
    Ok(())
}

fn foil(out_dir: &Path, a: &FoilArgs) -> Result<()> {
    require(&a.data)?;
    require(&a.model)?;
    let out = output_path(out_dir, &a.out, "foil_report.json")?;
    let data = Dataset::load(&a.data)?;
    let model = load_model(&a.model, Objective::Binary)?;
    let report = evaluate_foil(&data, &foil_examples(&data), &model, a.split.into())?;
    write_json(&out, &report)?;
    print!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(out_dir: &Path, a: &RankArgs) -> Result<()> {
    require(&a.data)?;
    require(&a.model)?;
    let config = selection(a)?;
    let out = output_path(out_dir, &a.out, "metrics.json")?;
    let data = Dataset::load(&a.data)?;
    let model = load_model(&a.model, Objective::Rank)?;
    let lm = ExplanationLm::fit(&data, DEFAULT_ALPHA)?;
    let report = compare_methods(&data, &model, &lm, &config, a.split.into())?;
    write_json(&out, &report)?;
    print!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}
