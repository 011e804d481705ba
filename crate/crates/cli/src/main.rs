use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{debug, info};

use nait_core::analysis::{self, AccuracyTable};
use nait_core::natr::{self, ReadFormat, TraceFormat};
use nait_core::synth::{generate_planted, recovery_report, PlantedConfig, PlantedTruth};
use nait_core::{
    aggregate_profiles, direction_similarity, extract_profile, overlap_report, score_multi_with, select, transferability,
    ActivationMode, AggregateInputs, AggregateMode, Budget, ExtractionConfig, NaitError, Parallelism, Profile, Scores,
    SelectMode, SelectionSpec,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "nait", version, about = "Neuron-activation based instruction data selection")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). `NAIT_LOG` overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-direction benchmark: in_domain.natr, candidates.natr, truth.txt.
    GenSynth(GenSynthArgs),
    /// Extract a capability profile from in-domain traces.
    Extract(ExtractArgs),
    /// Combine several capabilities into one profile.
    Aggregate(AggregateArgs),
    /// Score candidate traces against one or more profiles.
    Score(ScoreArgs),
    /// Select a subset from a score table.
    Select(SelectArgs),
    /// Turn an accuracy grid into a transferability grid.
    Transfer(TransferArgs),
    /// Report how several selections overlap.
    Overlap(OverlapArgs),
    /// Cosine similarity and 2-D coordinates of profile directions.
    Similarity(SimilarityArgs),
    /// Rewrite a trace file in another encoding.
    Convert(ConvertArgs),
    /// Check a trace file and list every problem found.
    Validate(ValidateArgs),
    /// Compare a profile and score table against planted ground truth.
    Recovery(RecoveryArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "L")]
    layers: Option<usize>,
    #[arg(long = "J")]
    width: Option<usize>,
    #[arg(long)]
    n_in: Option<usize>,
    #[arg(long)]
    n_cand: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strength_lo: Option<f64>,
    #[arg(long)]
    strength_hi: Option<f64>,
    #[arg(long, default_value = "binary")]
    format: TraceFormat,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    capability: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("inputs").required(true).multiple(false).args(["traces", "profiles"]))]
struct AggregateArgs {
    #[arg(long, default_value = "pooled")]
    mode: AggregateMode,
    #[arg(long)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    profiles: Vec<PathBuf>,
    /// Tag of the combined profile; defaults to the input tags joined by `+`.
    #[arg(long)]
    capability: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long = "profile", required = true)]
    profiles: Vec<PathBuf>,
    #[arg(long, default_value = "mean")]
    activation: ActivationMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("budget").required(true).args(["k", "proportion"]))]
struct SelectArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    mode: SelectMode,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_proportion)]
    proportion: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Capability tag written to the selection header; defaults to the score file stem.
    #[arg(long)]
    capability: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    acc: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write each capability's mean over the other tasks.
    #[arg(long)]
    row_mean: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OverlapArgs {
    #[arg(long = "selection", required = true, value_parser = parse_named_path)]
    selections: Vec<(String, PathBuf)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimilarityArgs {
    #[arg(long = "profile", required = true)]
    profiles: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    coords: PathBuf,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: TraceFormat,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    traces: PathBuf,
}

#[derive(Args, Debug)]
struct RecoveryArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_proportion(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=FILE, got {s:?}")),
    }
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!(msg.into()),
        }
    }
}

fn exit_code(e: &NaitError) -> u8 {
    match e {
        NaitError::DegenerateData { .. } | NaitError::NumericalFailure(_) => EXIT_NUMERICAL,
        NaitError::Budget(_) | NaitError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

impl From<NaitError> for Failure {
    fn from(e: NaitError) -> Self {
        Failure {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.downcast_ref::<NaitError>().map_or(EXIT_DATA, exit_code);
        Failure { code, error }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NAIT_LOG", default))
        .format_timestamp(None)
        .init();
}

/// Inputs must exist, outputs must land in an existing directory and must
/// not overwrite an input.
fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Outcome {
    for p in inputs {
        if !p.is_file() {
            return Err(Failure::usage(format!("input file {} does not exist", p.display())));
        }
    }
    for out in outputs {
        let parent = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(Failure::usage(format!("output directory {} does not exist", parent.display())));
        }
        if inputs.iter().any(|i| same_file(i, out)) {
            return Err(Failure::usage(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Extract(a) => {
            check_paths(&[&a.traces], &[&a.out])?;
            let traces = natr::read_traces(&a.traces, ReadFormat::Auto)?;
            info!("extracting {:?} from {} samples", a.capability, traces.len());
            let profile: Profile = extract_profile(&traces, &a.capability)?;
            profile.write(&a.out)?;
            Ok(())
        }
        Command::Aggregate(a) => aggregate(a),
        Command::Score(a) => {
            let mut inputs: Vec<&Path> = vec![&a.traces];
            inputs.extend(a.profiles.iter().map(PathBuf::as_path));
            check_paths(&inputs, &[&a.out])?;
            let traces = natr::read_traces(&a.traces, ReadFormat::Auto)?;
            let profiles = a.profiles.iter().map(Profile::read).collect::<Result<Vec<_>, _>>()?;
            let table = score_multi_with(&traces, &profiles, a.activation, Parallelism(a.jobs as usize))?;
            info!("scored {} candidates", table.len());
            table.write_csv(&a.out)?;
            Ok(())
        }
        Command::Select(a) => select_cmd(a),
        Command::Transfer(a) => {
            let mut outs: Vec<&Path> = vec![&a.out];
            if let Some(r) = &a.row_mean {
                outs.push(r);
            }
            check_paths(&[&a.acc], &outs)?;
            let table = AccuracyTable::<f64>::read(&a.acc)?;
            let t = transferability(&table)?;
            analysis::write_text(&a.out, &t.to_grid())?;
            if let Some(path) = &a.row_mean {
                let means = t.row_mean_off_diagonal();
                let mut text = String::from("capability,mean_off_diagonal\n");
                for (cap, m) in t.capabilities.iter().zip(means) {
                    text.push_str(&format!("{cap},{m:.4}\n"));
                }
                analysis::write_text(path, &text)?;
            }
            Ok(())
        }
        Command::Overlap(a) => {
            let inputs: Vec<&Path> = a.selections.iter().map(|(_, p)| p.as_path()).collect();
            check_paths(&inputs, &[&a.out])?;
            let mut sets = BTreeMap::new();
            for (name, path) in &a.selections {
                let ids: BTreeSet<String> = nait_core::select::read_selection_ids(path)?.into_iter().collect();
                if sets.insert(name.clone(), ids).is_some() {
                    return Err(Failure::usage(format!("selection name {name:?} given twice")));
                }
            }
            overlap_report(&sets)?.write(&a.out)?;
            Ok(())
        }
        Command::Similarity(a) => {
            let inputs: Vec<&Path> = a.profiles.iter().map(PathBuf::as_path).collect();
            check_paths(&inputs, &[&a.out, &a.coords])?;
            let profiles = a.profiles.iter().map(Profile::read).collect::<Result<Vec<_>, _>>()?;
            let sim = direction_similarity(&profiles)?;
            analysis::write_text(&a.out, &sim.to_grid())?;
            analysis::write_text(&a.coords, &sim.coords_csv())?;
            Ok(())
        }
        Command::Convert(a) => {
            check_paths(&[&a.input], &[&a.out])?;
            let summary = natr::convert(&a.input, &a.out, a.format)?;
            info!("wrote {} records, {} bytes", summary.record_count, summary.bytes_written);
            Ok(())
        }
        Command::Validate(a) => {
            check_paths(&[&a.traces], &[])?;
            let set = natr::read_traces_unchecked(&a.traces, ReadFormat::Auto)?;
            let report = set.validate();
            if report.ok {
                eprintln!(
                    "ok: {} samples, {} layers, layer_dims {:?}",
                    set.len(),
                    set.num_layers(),
                    set.layer_dims
                );
                Ok(())
            } else {
                eprint!("{report}");
                Err(Failure {
                    code: EXIT_DATA,
                    error: anyhow::anyhow!("{} invalid: {} issue(s)", a.traces.display(), report.issues.len()),
                })
            }
        }
        Command::Recovery(a) => {
            check_paths(&[&a.profile, &a.truth, &a.scores], &[&a.out])?;
            let profile = Profile::read(&a.profile)?;
            let truth = PlantedTruth::read(&a.truth)?;
            let scores = Scores::read_csv(&a.scores, &profile.capability)?;
            let r = recovery_report(&profile, &truth, &scores)?;
            let mut text = String::from("# nait-recovery v1\n");
            for (l, c) in r.layer_cosines.iter().enumerate() {
                text.push_str(&format!("layer {l} cosine {c:e}\n"));
            }
            text.push_str(&format!("spearman {:e}\n", r.spearman));
            text.push_str(&format!("top_precision k={} {:e}\n", r.k, r.top_precision));
            analysis::write_text(&a.out, &text)?;
            Ok(())
        }
    }
}

fn gen_synth(a: GenSynthArgs) -> Outcome {
    if let Some(c) = &a.config {
        check_paths(&[c], &[])?;
    }
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .map_err(|error| Failure { code: EXIT_DATA, error })?;
    let mut cfg = match &a.config {
        Some(path) => {
            let text = nait_core::fsio::read_text(path)?;
            PlantedConfig::from_kv_text(&text)?
        }
        None => PlantedConfig::default(),
    };
    if let Some(v) = a.layers {
        cfg.layers = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.n_in {
        cfg.n_in_domain = v;
    }
    if let Some(v) = a.n_cand {
        cfg.n_candidates = v;
    }
    if let Some(v) = a.sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.strength_lo {
        cfg.strength_range.0 = v;
    }
    if let Some(v) = a.strength_hi {
        cfg.strength_range.1 = v;
    }
    debug!("planted config {cfg:?}");
    let data = generate_planted(&cfg)?;
    let ext = match a.format {
        TraceFormat::Binary => "natr",
        TraceFormat::Jsonl => "jsonl",
    };
    natr::write_traces(&data.in_domain, a.out_dir.join(format!("in_domain.{ext}")), a.format)?;
    natr::write_traces(&data.candidates, a.out_dir.join(format!("candidates.{ext}")), a.format)?;
    data.truth.write(a.out_dir.join("truth.txt"))?;
    nait_core::fsio::write_atomic(&a.out_dir.join("config.txt"), cfg.to_kv_text().as_bytes())?;
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Outcome {
    let inputs: Vec<&Path> = a.traces.iter().chain(&a.profiles).map(PathBuf::as_path).collect();
    check_paths(&inputs, &[&a.out])?;
    let cfg = ExtractionConfig::default();
    let profile: Profile = if !a.traces.is_empty() {
        let sets = a
            .traces
            .iter()
            .map(|p| natr::read_traces(p, ReadFormat::Auto))
            .collect::<Result<Vec<_>, _>>()?;
        let tag = a.capability.clone().unwrap_or_else(|| {
            sets.iter().map(|s| s.source_label.as_str()).collect::<Vec<_>>().join("+")
        });
        aggregate_profiles(AggregateInputs::Traces(&sets), a.mode, &tag, &cfg)?
    } else {
        if a.mode == AggregateMode::Pooled {
            return Err(Failure::usage("--mode pooled needs --traces inputs; use --mode mean-direction for --profiles"));
        }
        let profiles = a.profiles.iter().map(Profile::read).collect::<Result<Vec<_>, _>>()?;
        let tag = a.capability.clone().unwrap_or_else(|| {
            profiles.iter().map(|p| p.capability.as_str()).collect::<Vec<_>>().join("+")
        });
        aggregate_profiles(AggregateInputs::Profiles(&profiles), a.mode, &tag, &cfg)?
    };
    profile.write(&a.out)?;
    Ok(())
}

fn select_cmd(a: SelectArgs) -> Outcome {
    check_paths(&[&a.scores], &[&a.out])?;
    let budget = match (a.k, a.proportion) {
        (Some(k), None) => Budget::Count(k),
        (None, Some(p)) => Budget::Proportion(p),
        _ => return Err(Failure::usage("give exactly one of --k and --proportion")),
    };
    let spec = match (a.mode, a.seed) {
        (SelectMode::Random, Some(seed)) => SelectionSpec::random(budget, seed),
        (SelectMode::Random, None) => return Err(Failure::usage("--mode random requires --seed")),
        (SelectMode::Top, _) => SelectionSpec::top(budget),
        (SelectMode::Bottom, _) => SelectionSpec::bottom(budget),
    };
    let capability = a.capability.clone().unwrap_or_else(|| {
        a.scores
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let table = Scores::read_csv(&a.scores, &capability)?;
    let result = select(&table, spec)?;
    info!("selected {} of {}", result.selected_ids.len(), table.len());
    result.write(&a.out)?;
    Ok(())
}
