use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use mergeforge_core::checkpoint::{self, read_header};
use mergeforge_core::datamix::{build_mixture, RecordDataset};
use mergeforge_core::diagnostics::{
    correlation_profile, profile_csv, recommend_strategy, Recommendation, Weighting,
    DEFAULT_THRESHOLD,
};
use mergeforge_core::layers::{LayerGrouping, LayerRule};
use mergeforge_core::merge::{merge, MergeRecipe};
use mergeforge_core::sweep::{
    format_report, run_sweep, DeltaCosineScorer, ReportFormat, SweepPlan,
};
use mergeforge_core::taskvector::compute_delta_labeled;
use mergeforge_core::textmetrics::{score_corpus, Metric, ScoredCorpus};
use mergeforge_core::TensorMap;

#[derive(Parser)]
#[command(
    name = "mergeforge",
    version,
    about = "Merge fine-tuned checkpoints and diagnose their weight shifts"
)]
struct Cli {
    /// Seed for every random choice (overrides recipe and plan seeds).
    #[arg(long, global = true, env = "MERGEFORGE_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Only log errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a checkpoint and summarize its header.
    Inspect(InspectArgs),
    /// Write the task vector `sft - base`.
    Diff(DiffArgs),
    /// Merge task models into a base according to a recipe.
    Merge(MergeArgs),
    /// Per-layer correlation of two task vectors and a mix-vs-merge verdict.
    Diagnose(DiagnoseArgs),
    /// Subsample and shuffle JSON-lines datasets into one corpus.
    Mix(MixArgs),
    /// Score hypotheses against references.
    Score(ScoreArgs),
    /// Run a merge ablation grid.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    sft: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    recipe: PathBuf,
    #[arg(long)]
    base: PathBuf,
    /// Task model, in recipe order. Repeat once per task.
    #[arg(long = "task", required = true)]
    tasks: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Uniform,
    ParamWeighted,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    sft_a: PathBuf,
    #[arg(long)]
    sft_b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = WeightingArg::Uniform)]
    weighting: WeightingArg,
    /// Regex whose first capture group is the layer index.
    #[arg(long)]
    layer_pattern: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-layer CSV table here.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    /// Keep ratio per input, matched by position (default 1.0 each).
    #[arg(long = "ratio")]
    ratios: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "bleu4,chrfpp,rougel")]
    metrics: Vec<Metric>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepFormat {
    Csv,
    Json,
    Markdown,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long = "task", required = true)]
    tasks: Vec<PathBuf>,
    /// Output file; the format follows its extension unless --format is given.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<SweepFormat>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<mergeforge_core::Error>())
                .map(|c| c.kind());
            match kind {
                Some(k) => eprintln!("error[{k}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Inspect(a) => inspect(a),
        Command::Diff(a) => diff(a),
        Command::Merge(a) => merge_cmd(a, seed),
        Command::Diagnose(a) => diagnose(a),
        Command::Mix(a) => mix(a, seed.unwrap_or(0)),
        Command::Score(a) => score(a),
        Command::Sweep(a) => sweep(a, seed),
    }
}

fn load(path: &Path) -> Result<TensorMap> {
    let m = checkpoint::read_checkpoint(path)?;
    info!(
        "read {} ({} tensors, {} params)",
        path.display(),
        m.len(),
        m.num_params()
    );
    Ok(m)
}

fn emit(out: Option<&Path>, doc: &str) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, doc).with_context(|| format!("writing {}", p.display()))?;
            info!("wrote {}", p.display());
        }
        None => std::io::stdout().lock().write_all(doc.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct TensorRow {
    name: String,
    dtype: checkpoint::Dtype,
    shape: Vec<usize>,
}

#[derive(Serialize)]
struct InspectReport {
    #[serde(flatten)]
    summary: checkpoint::HeaderSummary,
    tensors: Vec<TensorRow>,
}

fn inspect(a: InspectArgs) -> Result<()> {
    let summary = checkpoint::validate_header(&a.path)?;
    let header = read_header(&a.path)?;
    let tensors: Vec<TensorRow> = header
        .tensors
        .into_iter()
        .map(|t| TensorRow {
            name: t.name,
            dtype: t.dtype,
            shape: t.shape,
        })
        .collect();
    let doc = match a.format {
        Format::Json => to_json(&InspectReport { summary, tensors }),
        Format::Text => {
            let dtypes: Vec<String> = summary.dtypes.iter().map(|d| format!("{d:?}")).collect();
            let mut s = format!(
                "tensors: {}\nbytes: {}\ndtypes: {}\n",
                summary.tensor_count,
                summary.total_bytes,
                dtypes.join(",")
            );
            for (k, v) in &summary.metadata {
                s.push_str(&format!("meta {k}={v}\n"));
            }
            for t in &tensors {
                s.push_str(&format!("{}\t{:?}\t{:?}\n", t.name, t.dtype, t.shape));
            }
            s
        }
    };
    emit(None, &doc)
}

fn label(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn diff(a: DiffArgs) -> Result<()> {
    let base = load(&a.base)?;
    let sft = load(&a.sft)?;
    let tv = compute_delta_labeled(&base, &sft, &label(&a.base), &label(&a.sft))?;
    checkpoint::write_checkpoint_with_metadata(tv.deltas(), &tv.metadata(), &a.out)?;
    info!("wrote task vector {}", a.out.display());
    Ok(())
}

fn merge_cmd(a: MergeArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&a.recipe)
        .with_context(|| format!("reading {}", a.recipe.display()))?;
    let mut recipe = MergeRecipe::from_json(&text)?;
    if let Some(s) = seed {
        recipe.seed = s;
    }
    if recipe.tasks.len() != a.tasks.len() {
        bail!(
            "recipe lists {} tasks but {} --task inputs were given",
            recipe.tasks.len(),
            a.tasks.len()
        );
    }
    let base = load(&a.base)?;
    let tasks = a
        .tasks
        .iter()
        .map(|p| load(p))
        .collect::<Result<Vec<_>>>()?;
    info!(
        "merging method={} tasks={} density={} seed={}",
        recipe.method,
        tasks.len(),
        recipe.density,
        recipe.seed
    );
    let merged = merge(&recipe, &base, &tasks)?;
    let mut meta = checkpoint::Metadata::new();
    meta.insert("merge_method".into(), recipe.method.to_string());
    checkpoint::write_checkpoint_with_metadata(&merged, &meta, &a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let base = load(&a.base)?;
    let ga = load(&a.sft_a)?;
    let gb = load(&a.sft_b)?;
    let (la, mut lb) = (label(&a.sft_a), label(&a.sft_b));
    if la == lb {
        lb.push_str("_b");
    }
    let va = compute_delta_labeled(&base, &ga, &label(&a.base), &la)?;
    let vb = compute_delta_labeled(&base, &gb, &label(&a.base), &lb)?;
    let rule = match &a.layer_pattern {
        Some(p) => LayerRule::pattern(p)?,
        None => LayerRule::default(),
    };
    let grouping = LayerGrouping::new(va.deltas().names(), &rule);
    let profile = correlation_profile(&va, &vb, &grouping)?;
    let weighting = match a.weighting {
        WeightingArg::Uniform => Weighting::Uniform,
        WeightingArg::ParamWeighted => Weighting::ParamWeighted,
    };
    let rec = recommend_strategy(&profile, a.threshold, weighting)?;
    info!(
        "mean r = {:.4} over {} layers",
        rec.mean_r, rec.defined_layers
    );

    if let Some(t) = &a.table {
        emit(Some(t), &profile_csv(&profile))?;
    }
    match &a.report {
        Some(p) => emit(Some(p), &to_json(&rec)),
        None => emit(
            None,
            &match a.format {
                Format::Json => to_json(&rec),
                Format::Text => recommendation_text(&rec),
            },
        ),
    }
}

fn recommendation_text(rec: &Recommendation) -> String {
    let mut s = String::from("layer\tpearson_r\tn_params\n");
    for r in &rec.per_layer_evidence {
        let v = r
            .pearson_r
            .map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        s.push_str(&format!("{}\t{}\t{}\n", r.layer, v, r.n_params));
    }
    s.push_str(&format!(
        "mean_r\t{:.6}\nthreshold\t{}\nverdict\t{}\n",
        rec.mean_r,
        rec.threshold,
        serde_json::to_value(rec.verdict)
            .expect("verdict")
            .as_str()
            .unwrap_or_default()
    ));
    for n in &rec.notes {
        s.push_str(&format!("note\t{n}\n"));
    }
    s
}

fn mix(a: MixArgs, seed: u64) -> Result<()> {
    let ratios = if a.ratios.is_empty() {
        vec![1.0; a.inputs.len()]
    } else if a.ratios.len() == a.inputs.len() {
        a.ratios.clone()
    } else {
        bail!(
            "{} --ratio values for {} --in files",
            a.ratios.len(),
            a.inputs.len()
        );
    };
    let parts = a
        .inputs
        .iter()
        .zip(ratios)
        .map(|(p, r)| Ok((RecordDataset::read_jsonl(p)?, r)))
        .collect::<Result<Vec<_>>>()?;
    for (ds, r) in &parts {
        info!("input {} records={} ratio={}", ds.source_id, ds.len(), r);
    }
    let mixed = build_mixture(&parts, seed)?;
    info!("mixture records={} seed={}", mixed.len(), seed);
    match &a.out {
        Some(p) => {
            mixed.write_jsonl(p)?;
            info!("wrote {}", p.display());
            Ok(())
        }
        None => emit(None, &mixed.to_jsonl()),
    }
}

fn read_lines(p: &Path) -> Result<Vec<String>> {
    Ok(RecordDataset::read_jsonl(p)?.records)
}

fn score(a: ScoreArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(mergeforge_core::Error::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        })
        .context("hypothesis and reference line counts differ");
    }
    let pairs: Vec<(String, String)> = hyps.into_iter().zip(refs).collect();
    let scored = score_corpus(&pairs, &a.metrics)?;
    info!("scored {} pairs", scored.count);
    let doc = match a.format {
        Format::Json => to_json(&scored),
        Format::Text => score_text(&scored),
    };
    emit(a.out.as_deref(), &doc)
}

fn score_text(s: &ScoredCorpus) -> String {
    let mut out = format!("pairs\t{}\n", s.count);
    for (m, v) in &s.aggregate {
        out.push_str(&format!("{m}\t{v:.6}\n"));
    }
    out
}

fn sweep(a: SweepArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&a.plan)
        .with_context(|| format!("reading {}", a.plan.display()))?;
    let mut plan = SweepPlan::from_json(&text)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    let base = load(&a.base)?;
    let tasks = a
        .tasks
        .iter()
        .map(|p| load(p))
        .collect::<Result<Vec<_>>>()?;
    let labeled: Vec<(String, TensorMap)> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (plan.task_id(i), t.clone()))
        .collect();
    let scorer = DeltaCosineScorer::new(&base, &labeled)?;
    if plan.baseline.is_empty() {
        plan.baseline = scorer
            .metric_names()
            .into_iter()
            .map(|m| (m, 1.0))
            .collect();
    }
    let format = match (a.format, &a.out) {
        (Some(SweepFormat::Csv), _) => ReportFormat::Csv,
        (Some(SweepFormat::Json), _) => ReportFormat::Json,
        (Some(SweepFormat::Markdown), _) => ReportFormat::Markdown,
        (None, Some(p)) => p
            .extension()
            .and_then(|e| ReportFormat::from_extension(&e.to_string_lossy()))
            .unwrap_or(ReportFormat::Json),
        (None, None) => ReportFormat::Json,
    };
    info!("sweep points={}", plan.points().len());
    let report = run_sweep(&plan, &base, &tasks, |m| scorer.score(m))?;
    emit(a.out.as_deref(), &format_report(&report, format))
}
