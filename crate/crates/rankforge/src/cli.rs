//! Command line front end. Every analysis product the service exposes can
//! also be written to a file from here.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rankforge_core::history::{load_history, save_history};
use rankforge_core::model::{RankingSystemSpec, Subject};
use rankforge_core::predictor::FitConfig;
use rankforge_core::rival::RivalMethod;
use rankforge_core::scenario::{
    export_csv, export_json, AttributeRange, Direction, ScenarioFilter, ScenarioSet,
    DEFAULT_BINS, DEFAULT_CAPACITY,
};
use rankforge_core::session::{Analysis, BaselineRef, Session, SessionRequest};
use rankforge_core::synth::{demo_config, demo_spec, generate_synthetic, SyntheticConfig};
use serde::Serialize;

use crate::api::{parse_ids, serve, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "rankforge", version, about = "What-if analysis for multi-criteria rankings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a history CSV and optionally rewrite it in canonical form.
    Ingest(IngestArgs),
    /// Generate a synthetic history table.
    Synth(SynthArgs),
    /// Work with ranking system specs.
    #[command(subcommand)]
    Spec(SpecCommand),
    /// Fit, generate scenarios, filter and export in one go.
    Analyze(AnalyzeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Export an analysis product from a saved session.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// History CSV to validate.
    pub input: PathBuf,
    /// Ranking system spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Write the canonical CSV here.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub rankees: usize,
    #[arg(long, default_value_t = 5)]
    pub years: usize,
    #[arg(long)]
    pub start_year: Option<i32>,
    /// Noise standard deviation of every indicator.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Ranking system to generate for; the built-in demo system otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Also write the spec used.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SpecCommand {
    /// Check a spec file against every structural constraint.
    Validate { file: PathBuf },
    /// Print the built-in demo spec.
    Demo {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioFormat {
    /// One row per scenario: attributes, score mean/min/max, modal rank.
    Csv,
    /// Full scenario objects including every ensemble member.
    Json,
    /// Paged scenario summaries, as served by the scenario list endpoint.
    Summary,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
    /// Baseline rankee id.
    #[arg(long)]
    pub rankee: String,
    /// Baseline year; the rankee's latest year otherwise.
    #[arg(long)]
    pub year: Option<i32>,
    /// Attribute range, `id=v1,v2,...` or `id=min:max:step`. Repeatable.
    #[arg(long = "range")]
    pub ranges: Vec<AttributeRange>,
    /// Rival rankee id. Repeatable.
    #[arg(long = "rival")]
    pub rivals: Vec<String>,
    /// Filter such as `ind:AR mean>0; final delta>=-1`. Repeatable; applied in order.
    #[arg(long = "filter")]
    pub filters: Vec<ScenarioFilter>,
    /// Sort key: `attr:<id>`, `ind:<id>` or `final`.
    #[arg(long)]
    pub sort: Option<Subject>,
    #[arg(long, default_value = "asc")]
    pub dir: Direction,
    #[arg(long, default_value_t = 100)]
    pub members: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    pub capacity: usize,
    /// Rival method used for rank distributions.
    #[arg(long, default_value = "carry_forward")]
    pub rank_method: RivalMethod,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ScenarioFormat,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Persist the session here for later `export` calls.
    #[arg(long)]
    pub save_session: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = "RANKFORGE_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Saved session file.
    #[arg(long)]
    pub session: PathBuf,
    #[command(subcommand)]
    pub product: Product,
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Product {
    /// Current scenarios, optionally narrowed and sorted.
    Scenarios {
        #[arg(long)]
        filter: Option<ScenarioFilter>,
        #[arg(long)]
        sort: Option<Subject>,
        #[arg(long, default_value = "asc")]
        dir: Direction,
        #[arg(long, value_enum, default_value = "csv")]
        format: ScenarioFormat,
        /// Page (0-based) for the summary format; all scenarios otherwise.
        #[arg(long)]
        page: Option<usize>,
        #[arg(long, default_value_t = 100)]
        page_size: usize,
    },
    /// Delta histogram of one subject.
    Summary {
        #[arg(long, default_value = "final")]
        subject: Subject,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Influence matrix for a selection, e.g. `--scenarios 3,17,42`.
    Influence {
        #[arg(long)]
        scenarios: String,
    },
    /// Win-probability grid for one scenario.
    Heatmap {
        #[arg(long)]
        scenario: u64,
    },
    /// Radar payload for one scenario.
    Radar {
        #[arg(long)]
        scenario: u64,
        #[arg(long, default_value = "carry_forward")]
        method: RivalMethod,
        #[arg(long)]
        highlight: Option<String>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Synth(args) => synth(args),
        Command::Spec(SpecCommand::Validate { file }) => {
            let spec = read_spec(&file)?;
            println!(
                "{}: valid ({} attributes, {} indicators)",
                file.display(),
                spec.attributes.len(),
                spec.indicators.len()
            );
            Ok(())
        }
        Command::Spec(SpecCommand::Demo { output }) => {
            emit(output.as_deref(), demo_spec().to_json().as_bytes())
        }
        Command::Analyze(args) => analyze(args),
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(ServeConfig {
                addr: SocketAddr::new(args.host, args.port),
                data_dir: args.data_dir,
            }))
        }
        Command::Export(args) => export(args),
    }
}

fn read_spec(path: &Path) -> anyhow::Result<RankingSystemSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read spec {}", path.display()))?;
    RankingSystemSpec::from_json(&text).with_context(|| format!("spec {}", path.display()))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    let spec = read_spec(&args.spec)?;
    let table = load_history(&args.input, &spec)?;
    eprintln!(
        "{}: {} rows, {} rankees, {} years, {} gaps",
        args.input.display(),
        table.len(),
        table.rankee_ids().len(),
        table.years().len(),
        table.gaps.len()
    );
    for gap in &table.gaps {
        eprintln!(
            "  gap: {} has no rows between {} and {}",
            gap.rankee_id, gap.after, gap.before
        );
    }
    if let Some(out) = &args.output {
        save_history(&table, &spec, out)?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut config = match &args.spec {
        Some(path) => SyntheticConfig::new(read_spec(path)?, args.rankees, args.years, args.seed),
        None => demo_config(args.rankees, args.years, args.seed),
    };
    if let Some(noise) = args.noise {
        config = config.with_noise(noise);
    }
    if let Some(year) = args.start_year {
        config.start_year = year;
    }
    let table = generate_synthetic(&config)?;
    save_history(&table, &config.spec, &args.output)
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    if let Some(path) = &args.spec_out {
        emit(Some(path), config.spec.to_json().as_bytes())?;
    }
    eprintln!("wrote {} rows to {}", table.len(), args.output.display());
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let spec = read_spec(&args.spec)?;
    let table = load_history(&args.history, &spec)?;
    let mut request = SessionRequest::new(
        spec,
        BaselineRef {
            rankee_id: args.rankee.clone(),
            year: args.year,
        },
    );
    request.ranges = args.ranges;
    request.rivals = args.rivals;
    request.fit = FitConfig {
        members: args.members,
        ridge: args.ridge,
        seed: args.seed,
    };
    request.capacity = args.capacity;
    request.rank_method = args.rank_method;

    let mut analysis = Analysis::create(request, &table, format!("cli-{}", args.rankee))?;
    eprintln!("generated {} scenarios", analysis.all().len());
    for filter in args.filters {
        let text = filter.to_string();
        let n = analysis.apply_filter(filter)?;
        eprintln!("filter `{text}`: {n} scenarios remain");
    }
    if let Some(path) = &args.save_session {
        analysis.session().save(path)?;
    }
    let set = analysis.view(None, args.sort.as_ref().map(|s| (s, args.dir)))?;
    let bytes = scenario_bytes(&analysis, &set, args.format, None, 0)?;
    emit(args.output.as_deref(), &bytes)
}

fn scenario_bytes(
    analysis: &Analysis,
    set: &ScenarioSet,
    format: ScenarioFormat,
    page: Option<usize>,
    page_size: usize,
) -> anyhow::Result<Vec<u8>> {
    Ok(match format {
        ScenarioFormat::Csv => {
            let mut buf = Vec::new();
            export_csv(set, analysis.spec(), &mut buf)?;
            buf
        }
        ScenarioFormat::Json => {
            let mut s = export_json(set).into_bytes();
            s.push(b'\n');
            s
        }
        ScenarioFormat::Summary => {
            let page = match page {
                Some(p) => analysis.page(set, p, page_size)?,
                None => analysis.page(set, 0, set.len().max(1))?,
            };
            to_json(&page)?
        }
    })
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let session = Session::load(&args.session)
        .with_context(|| format!("session {}", args.session.display()))?;
    let analysis = Analysis::open(session)?;
    let bytes = match args.product {
        Product::Scenarios {
            filter,
            sort,
            dir,
            format,
            page,
            page_size,
        } => {
            if page_size == 0 {
                bail!("page size must be at least 1");
            }
            let set = analysis.view(filter.as_ref(), sort.as_ref().map(|s| (s, dir)))?;
            scenario_bytes(&analysis, &set, format, page, page_size)?
        }
        Product::Summary { subject, bins } => to_json(&analysis.summary(&subject, bins)?)?,
        Product::Influence { scenarios } => to_json(&analysis.influence(&parse_ids(&scenarios)?)?)?,
        Product::Heatmap { scenario } => to_json(&analysis.heatmap(scenario)?)?,
        Product::Radar {
            scenario,
            method,
            highlight,
        } => to_json(&analysis.radar(scenario, method, highlight.as_deref())?)?,
    };
    emit(args.output.as_deref(), &bytes)
}
