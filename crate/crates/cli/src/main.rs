use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Content-based fashion recommendation toolkit.
#[derive(Debug, Parser)]
#[command(name = "grec", version, about)]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize catalog embeddings into an IDX1 index file.
    BuildIndex(BuildIndexArgs),
    /// Top-k most similar items for an indexed item or a raw embedding.
    Query(QueryArgs),
    /// Top-k items for a rated cart, optionally split into sub-carts.
    CartRecommend(CartArgs),
    /// Cut out foregrounds and paste them onto per-epoch backgrounds.
    Augment(AugmentArgs),
    /// Train the small reference network on seeded synthetic data.
    TrainToy(TrainArgs),
    /// Hidden-layer embeddings of feature rows under a trained toy model.
    Embed(EmbedArgs),
    /// Build an evaluation sheet from queries and system results.
    EvalSheet(EvalSheetArgs),
    /// Aggregate score files for a sheet into a comparison report.
    EvalAggregate(EvalAggregateArgs),
    /// Render a percentage table with best/worst marks.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    #[arg(long, env = "GREC_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "GREC_EMBEDDINGS")]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip embedding records whose id is not in the manifest.
    #[arg(long)]
    skip_unknown: bool,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long, env = "GREC_INDEX")]
    index: Option<PathBuf>,
    /// Indexed item to query with; it is left out of its own results.
    #[arg(long, conflicts_with = "embedding")]
    item: Option<String>,
    /// Comma-separated query vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    embedding: Option<Vec<f32>>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Keep the query item in the results.
    #[arg(long)]
    include_self: bool,
    /// Ask a running service instead of reading the index.
    #[arg(long, env = "GREC_SERVER")]
    server: Option<String>,
}

#[derive(Debug, Args)]
struct CartArgs {
    #[arg(long, env = "GREC_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, env = "GREC_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    cart: PathBuf,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Split the cart into this many groups and recommend for each.
    #[arg(long)]
    split: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "GREC_SERVER")]
    server: Option<String>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long, env = "GREC_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "GREC_BACKGROUNDS")]
    backgrounds: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Max per-channel distance from the border color still counted as background.
    #[arg(long, default_value_t = grec_core::augment::DEFAULT_TOLERANCE)]
    tolerance: u8,
    /// Only apply flip/rotation/shift/shear.
    #[arg(long)]
    no_backgrounds: bool,
    #[arg(long, default_value_t = 15.0)]
    rotation: f64,
    #[arg(long, default_value_t = 0.1)]
    shift: f64,
    #[arg(long, default_value_t = 0.1)]
    shear: f64,
    #[arg(long)]
    no_flip: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 11)]
    data_seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Train on the weighted cross-entropy alone.
    #[arg(long)]
    no_scaling: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with a header row; first column is the id, the rest are inputs.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the CSV format instead of EMB1.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct EvalSheetArgs {
    #[arg(long)]
    id: String,
    /// JSON list of {query_id, image, domain}.
    #[arg(long)]
    queries: PathBuf,
    /// NAME=PATH where PATH is an IDX1 index or a JSON map query_id -> [ids].
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    /// Embeddings for queries that are not in an index.
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    /// JSON list of criteria; the seven defaults otherwise.
    #[arg(long)]
    criteria: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalAggregateArgs {
    #[arg(long)]
    sheet: PathBuf,
    /// Directory of score files (*.json, one submission; *.jsonl, one per line).
    #[arg(long)]
    scores: PathBuf,
    /// JSON object criterion -> weight; the sheet's weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write the CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// CSV `criterion,SYS1,...` of percentages.
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    table: Option<PathBuf>,
    /// Render the bundled five-network comparison.
    #[arg(long)]
    fixture: bool,
    #[arg(long, value_parser = ["text", "csv"], default_value = "text")]
    format: String,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "GREC_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "GREC_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "GREC_EMBEDDINGS")]
    embeddings: Option<PathBuf>,
    #[arg(long, env = "GREC_INDEX")]
    index: Option<PathBuf>,
    #[arg(long, env = "GREC_SHEETS")]
    sheets: Option<PathBuf>,
    #[arg(long, env = "GREC_SCORES", default_value = "scores.jsonl")]
    scores: PathBuf,
    #[arg(long = "static", env = "GREC_STATIC")]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(commands::EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
