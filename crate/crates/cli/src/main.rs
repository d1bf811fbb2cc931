use std::collections::HashMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnpool::data::{
    load_dataset_dir, normalize_time_axis, save_dataset_dir, synth_speakers, Dataset, SynthConfig,
};
use attnpool::eval::{
    compute_eer, compute_min_dcf, det_curve, format_det_csv, format_embeddings, format_scores,
    parse_embeddings, parse_trials, score_trials, DcfConfig,
};
use attnpool::harness::{
    embed, evaluate, evaluate_trials, gradient_suite, load_data, render_suite, train_and_evaluate,
    ExperimentConfig, MetricsTable, TrialConfig,
};
use attnpool::network::{load_checkpoint, save_checkpoint};
use attnpool::numerics::GradCheckConfig;
use attnpool::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Attention pooling speaker-embedding trainer and verification scorer.
#[derive(Parser)]
#[command(name = "attnpool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as feature files.
    Synth(SynthArgs),
    /// Train from a config file; writes checkpoints, report and DET curve.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset over test durations.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write utterance embeddings for a dataset.
    Embed(EmbedArgs),
    /// Score a trial list from an embeddings file.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    /// Index of the first generated speaker; later indices give held-out speakers.
    #[arg(long, default_value_t = 0)]
    first_speaker: usize,
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    #[arg(long, default_value_t = 40)]
    feature_dim: usize,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 0.3)]
    distractor_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DcfArgs {
    #[arg(long, default_value_t = 0.01)]
    p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    /// Report the raw detection cost instead of the normalized one.
    #[arg(long)]
    raw_dcf: bool,
}

impl DcfArgs {
    fn config(&self) -> DcfConfig {
        DcfConfig {
            p_target: self.p_target,
            c_miss: self.c_miss,
            c_fa: self.c_fa,
            normalize: !self.raw_dcf,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of feature files.
    #[arg(long)]
    data: PathBuf,
    /// Trial list; drawn from the dataset when absent.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pairs_per_speaker: usize,
    /// Test crop lengths in seconds; a full-length row is always added.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    durations: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cmvn: bool,
    #[command(flatten)]
    dcf: DcfArgs,
    /// Write the full-length DET curve here as CSV.
    #[arg(long)]
    det: Option<PathBuf>,
    /// Write the metrics report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cmvn: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Write per-trial scores here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    det: Option<PathBuf>,
    #[command(flatten)]
    dcf: DcfArgs,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_eval_data(dir: &Path, cmvn: bool) -> Result<Dataset> {
    let ds = load_dataset_dir(dir)?;
    Ok(if cmvn {
        ds.map_utterances(normalize_time_axis)
    } else {
        ds
    })
}

fn metrics_report(table: &MetricsTable) -> String {
    let mut out = String::from("[metrics]\n");
    out.push_str(&table.render());
    out
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_speakers: args.first_speaker + args.speakers,
        utterances_per_speaker: args.utterances,
        feature_dim: args.feature_dim,
        frames_per_utterance: args.frames,
        distractor_fraction: args.distractor_fraction,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let ds = synth_speakers(&cfg, args.first_speaker, args.speakers)?;
    fs::create_dir_all(&args.out)?;
    save_dataset_dir(&ds, &args.out)?;
    println!(
        "wrote {} utterances of {} speakers to {}",
        ds.utterances().len(),
        ds.num_speakers(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let source = args.config.display().to_string();
    let cfg = ExperimentConfig::parse(&read(&args.config)?, &source)?;
    let (train, held_out) = load_data(&cfg)?;
    let ckpt_dir = args.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let outcome = train_and_evaluate(&cfg, train, held_out.as_ref(), |label, ckpt| {
        save_checkpoint(ckpt, ckpt_dir.join(format!("{label}.ckpt")))
    })?;
    let report = &outcome.report;
    write(&args.out.join("report.txt"), &report.render())?;
    if let Some(full) = report.metrics.full() {
        write(
            &args.out.join("det.csv"),
            &format_det_csv(&det_curve(&full.scores)?),
        )?;
        println!("held-out EER {:.4}  minDCF {:.4}", full.eer, full.min_dcf);
    }
    println!(
        "trained {} steps, train accuracy {:.4}, wall time {:.1} s; outputs in {}",
        report.steps.len(),
        report.train_accuracy,
        report.wall_time_seconds,
        args.out.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_eval_data(&args.data, args.cmvn)?;
    let cfg = TrialConfig {
        pairs_per_speaker: args.pairs_per_speaker,
        seed: args.seed,
        dcf: args.dcf.config(),
    };
    let table = match &args.trials {
        Some(path) => {
            let trials = parse_trials(&read(path)?, &path.display().to_string())?;
            evaluate_trials(&ckpt, &ds, &trials, &args.durations, &cfg)?
        }
        None => evaluate(&ckpt, &ds, &args.durations, &cfg)?,
    };
    if let (Some(path), Some(full)) = (&args.det, table.full()) {
        write(path, &format_det_csv(&det_curve(&full.scores)?))?;
    }
    let text = metrics_report(&table);
    match &args.report {
        Some(path) => write(path, &text),
        None => emit(&text),
    }
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let results = gradient_suite(
        args.seeds,
        GradCheckConfig {
            eps: args.eps,
            tol: args.tol,
        },
    )?;
    emit(&render_suite(&results))?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::CheckFailed(format!(
            "{failed} of {} gradient checks failed",
            results.len()
        )));
    }
    eprintln!("all {} gradient checks passed", results.len());
    Ok(())
}

fn run_embed(args: EmbedArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_eval_data(&args.data, args.cmvn)?;
    let rows = ds
        .utterances()
        .iter()
        .map(|u| {
            Ok((
                u.utterance_id.clone(),
                embed(&ckpt.model, ckpt.pooling, u.features())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    write(
        &args.out,
        &format_embeddings(rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()))),
    )
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let emb = parse_embeddings(
        &read(&args.embeddings)?,
        &args.embeddings.display().to_string(),
    )?;
    let table: HashMap<String, Vec<f64>> = emb.into_iter().collect();
    let trials = parse_trials(&read(&args.trials)?, &args.trials.display().to_string())?;
    let scores = score_trials(&table, &trials)?;
    if let Some(path) = &args.out {
        write(path, &format_scores(&scores))?;
    }
    if let Some(path) = &args.det {
        write(path, &format_det_csv(&det_curve(&scores)?))?;
    }
    let (eer, eer_thr) = compute_eer(&scores)?;
    let (dcf, dcf_thr) = compute_min_dcf(&scores, &args.dcf.config())?;
    emit(&format!(
        "trials = {}\neer = {eer:?}\neer_threshold = {eer_thr:?}\nmin_dcf = {dcf:?}\nmin_dcf_threshold = {dcf_thr:?}\n",
        scores.len()
    ))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Embed(a) => run_embed(a),
        Command::Score(a) => run_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
