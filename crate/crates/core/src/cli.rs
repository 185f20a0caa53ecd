//! Command-line front end: argument parsing, file plumbing and report writing.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::catalog::{read_manifest, write_descriptions, write_manifest, TextBank};
use crate::cmm::{cmm_reports, CmmSummary, DEFAULT_K_FRACTION};
use crate::container::{read_container, write_container, EmbeddingMatrix};
use crate::dataset::{read_indices, write_indices};
use crate::ensemble::{run_cpe, CpeOptions, RunReport};
use crate::error::{Error, Result};
use crate::matcher::bare_similarity_tensor;
use crate::metrics::{EvaluationReport, REPORT_KS};
use crate::synthetic::{generate, ClusterSpec};

#[derive(Debug, Parser)]
#[command(
    name = "cpe",
    version,
    about = "Class-wise matching margins and margin-weighted prompt ensembles"
)]
pub struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a predictions file against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Rank templates by their worst-k pseudo-label margin.
    RankTemplates(PipelineArgs),
    /// Run the full pipeline and write predictions plus a run report.
    RunCpe(PipelineArgs),
    /// Print the per-template margin report.
    Diagnose(PipelineArgs),
    /// Write a seeded synthetic embedding set (containers, manifest, labels).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Image embedding container.
    #[arg(long)]
    pub images: PathBuf,
    /// Text embedding container.
    #[arg(long)]
    pub texts: PathBuf,
    /// Prompt manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worst-k size as a fraction of the class count.
    #[arg(long, default_value_t = DEFAULT_K_FRACTION)]
    pub k_frac: f64,
    /// Explicit worst-k size; overrides --k-frac.
    #[arg(long)]
    pub k: Option<usize>,
    /// Softmax temperature for template weights.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Average the bare prompt together with description prompts.
    #[arg(long)]
    pub include_bare_variant: bool,
    #[arg(long)]
    pub disable_augmentation: bool,
    #[arg(long)]
    pub disable_selection: bool,
    #[arg(long)]
    pub uniform_weights: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Manifest supplying the class count.
    #[arg(long, required_unless_present = "num_classes")]
    pub manifest: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub num_classes: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthPreset {
    /// 20 classes, 25 templates of graded prompt noise.
    Graded,
    /// 10 classes, 4 informative templates and 1 domain-biased template.
    PlantedBias,
    /// 6 classes, 4 templates, 36 images.
    Golden,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "planted-bias")]
    pub preset: SynthPreset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Fully resolved configuration, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub images: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub num_classes: Option<usize>,
    pub k_frac: f64,
    pub k: Option<usize>,
    pub temperature: f64,
    pub include_bare_variant: bool,
    pub disable_augmentation: bool,
    pub disable_selection: bool,
    pub uniform_weights: bool,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_pipeline(args: &PipelineArgs) -> Result<Self> {
        let config = Self {
            images: Some(args.images.clone()),
            texts: Some(args.texts.clone()),
            manifest: Some(args.manifest.clone()),
            labels: None,
            predictions: None,
            num_classes: None,
            k_frac: args.k_frac,
            k: args.k,
            temperature: args.temperature,
            include_bare_variant: args.include_bare_variant,
            disable_augmentation: args.disable_augmentation,
            disable_selection: args.disable_selection,
            uniform_weights: args.uniform_weights,
            out_dir: args.out_dir.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_evaluate(args: &EvaluateArgs) -> Result<Self> {
        let config = Self {
            images: None,
            texts: None,
            manifest: args.manifest.clone(),
            labels: Some(args.labels.clone()),
            predictions: Some(args.predictions.clone()),
            num_classes: args.num_classes,
            k_frac: DEFAULT_K_FRACTION,
            k: None,
            temperature: 1.0,
            include_bare_variant: false,
            disable_augmentation: false,
            disable_selection: false,
            uniform_weights: false,
            out_dir: args.out_dir.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "--k-frac {} must lie in (0, 1]",
                self.k_frac
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "--temperature {} must be positive",
                self.temperature
            )));
        }
        let inputs = [
            &self.images,
            &self.texts,
            &self.manifest,
            &self.labels,
            &self.predictions,
        ];
        for path in inputs.into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn cpe_options(&self) -> CpeOptions {
        CpeOptions {
            k: self.k,
            k_fraction: self.k_frac,
            temperature: self.temperature,
            include_bare_variant: self.include_bare_variant,
            disable_augmentation: self.disable_augmentation,
            disable_selection: self.disable_selection,
            uniform_weights: self.uniform_weights,
        }
    }
}

fn load_inputs(config: &RunConfig) -> Result<(EmbeddingMatrix, TextBank)> {
    let missing = || Error::InvalidConfig("pipeline inputs missing".into());
    let images = read_container(config.images.as_ref().ok_or_else(missing)?)?;
    let texts = read_container(config.texts.as_ref().ok_or_else(missing)?)?;
    let catalog = read_manifest(config.manifest.as_ref().ok_or_else(missing)?)?;
    for (what, m) in [("image", &images), ("text", &texts)] {
        if !m.is_normalized() {
            log::info!("{what} container is not flagged normalized; normalizing rows");
        }
    }
    let images = if images.is_normalized() {
        images
    } else {
        images.normalize_rows()?
    };
    let texts = if texts.is_normalized() {
        texts
    } else {
        texts.normalize_rows()?
    };
    Ok((images, TextBank::new(texts, catalog)?))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(&text, path)
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    config: &'a RunConfig,
    report: &'a EvaluationReport,
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluationReport> {
    let missing = || Error::InvalidConfig("evaluate needs --predictions and --labels".into());
    let predictions = read_indices(config.predictions.as_ref().ok_or_else(missing)?)?;
    let labels = read_indices(config.labels.as_ref().ok_or_else(missing)?)?;
    let num_classes = match (&config.manifest, config.num_classes) {
        (Some(path), _) => read_manifest(path)?.num_classes(),
        (None, Some(n)) => n,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "evaluate needs --manifest or --num-classes".into(),
            ))
        }
    };
    let report = EvaluationReport::new(&predictions, &labels, num_classes, &REPORT_KS)?;
    ensure_dir(&config.out_dir)?;
    write_json(
        &EvaluationFile {
            config,
            report: &report,
        },
        &config.out_dir.join("evaluation.json"),
    )?;
    write_text(&report.to_table(), &config.out_dir.join("evaluation.txt"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTemplate {
    pub rank: usize,
    pub template: usize,
    pub text: String,
    pub worst_k_value: Option<f64>,
    pub degenerate: bool,
    pub worst_k_fallback: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFile {
    pub config: RunConfig,
    pub k: usize,
    pub templates: Vec<RankedTemplate>,
}

/// Bare-prompt worst-k margins of every template, best first.
pub fn cmd_rank_templates(config: &RunConfig) -> Result<RankingFile> {
    let (images, bank) = load_inputs(config)?;
    let k = config
        .cpe_options()
        .resolve_k(bank.catalog().num_classes())?;
    let tensor = bare_similarity_tensor(&images, &bank)?;
    let mut reports = cmm_reports(&tensor, k)?;
    reports.sort_by(|a, b| {
        b.worst_k
            .fallback
            .total_cmp(&a.worst_k.fallback)
            .then(a.template.cmp(&b.template))
    });
    let texts = bank.catalog().templates();
    let templates = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r.summary();
            RankedTemplate {
                rank: i + 1,
                template: r.template,
                text: texts[r.template].clone(),
                worst_k_value: s.worst_k_value,
                degenerate: s.degenerate,
                worst_k_fallback: s.worst_k_fallback,
            }
        })
        .collect();
    let file = RankingFile {
        config: config.clone(),
        k,
        templates,
    };
    ensure_dir(&config.out_dir)?;
    write_json(&file, &config.out_dir.join("template_ranking.json"))?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseFile {
    pub config: RunConfig,
    pub k: usize,
    pub reports: Vec<CmmSummary>,
}

pub fn cmd_diagnose(config: &RunConfig) -> Result<DiagnoseFile> {
    let (images, bank) = load_inputs(config)?;
    let k = config
        .cpe_options()
        .resolve_k(bank.catalog().num_classes())?;
    let tensor = bare_similarity_tensor(&images, &bank)?;
    let reports = cmm_reports(&tensor, k)?
        .iter()
        .map(|r| r.summary())
        .collect();
    Ok(DiagnoseFile {
        config: config.clone(),
        k,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config: RunConfig,
    pub run: RunReport,
}

/// Writes `predictions.txt` and `run_report.json` into the output directory.
pub fn cmd_run_cpe(config: &RunConfig) -> Result<(Vec<usize>, RunFile)> {
    let (images, bank) = load_inputs(config)?;
    let options = config.cpe_options();
    let run = run_cpe(&images, &bank, &options)?;
    let file = RunFile {
        config: config.clone(),
        run: RunReport::new(&run, &bank, &options),
    };
    ensure_dir(&config.out_dir)?;
    let predictions = run.model.predictions().to_vec();
    write_indices(&predictions, config.out_dir.join("predictions.txt"))?;
    write_json(&file, &config.out_dir.join("run_report.json"))?;
    Ok((predictions, file))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = match args.preset {
        SynthPreset::Graded => ClusterSpec::graded_templates(args.seed),
        SynthPreset::PlantedBias => ClusterSpec::planted_bias(args.seed),
        SynthPreset::Golden => ClusterSpec::golden(),
    };
    let set = generate(&spec)?;
    let dir = &args.out_dir;
    ensure_dir(dir)?;
    write_container(&set.images, dir.join("images.cmme"))?;
    write_container(set.bank.embeddings(), dir.join("texts.cmme"))?;
    write_manifest(set.bank.catalog(), dir.join("manifest.json"))?;
    write_descriptions(set.bank.catalog(), dir.join("descriptions.json"))?;
    write_indices(&set.labels, dir.join("labels.txt"))?;
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&RunConfig::from_evaluate(args)?)?;
            print!("{}", report.to_table());
        }
        Command::RankTemplates(args) => {
            let file = cmd_rank_templates(&RunConfig::from_pipeline(args)?)?;
            for t in &file.templates {
                println!("{:>4}  {:>10.6}  {}", t.rank, t.worst_k_fallback, t.text);
            }
        }
        Command::RunCpe(args) => {
            let config = RunConfig::from_pipeline(args)?;
            let (predictions, _) = cmd_run_cpe(&config)?;
            log::info!(
                "wrote {} predictions to {}",
                predictions.len(),
                config.out_dir.display()
            );
        }
        Command::Diagnose(args) => {
            let file = cmd_diagnose(&RunConfig::from_pipeline(args)?)?;
            println!("{}", serde_json::to_string_pretty(&file)?);
        }
        Command::Synth(args) => cmd_synth(args)?,
    }
    Ok(())
}

/// Runs a parsed command line, on a dedicated pool when `--threads` is given.
pub fn execute(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    }
}
