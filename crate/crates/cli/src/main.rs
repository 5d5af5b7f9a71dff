use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use idic_core::data::{
    build_example_pool, load_multiwoz, load_multiwoz_splits, read_canonical_jsonl, sample_fewshot, to_canonical_jsonl,
    DialogueDataset, MultiwozVersion, Split,
};
use idic_core::eval::{ablation_table, run_ablation, write_trace_jsonl, Backends, EmbeddingKind, LlmKind, Tracker};
use idic_core::intent::NluClient;
use idic_core::llm::{CompletionBackend, OracleBackend, RecordingBackend, RemoteBackend, ReplayBackend};
use idic_core::model::{Schema, SlotKey, SlotValue, StateChange};
use idic_core::retrieval::{mine_training_pairs, write_pairs_jsonl, EmbeddingProvider, LexicalProvider, MiningConfig, QueryView, RemoteProvider};
use idic_core::sql::{encode_delta_as_sql, parse_sql};

mod config;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "idic-dst", version, about = "Few-shot dialogue state tracking with intent-driven example retrieval")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of in-context examples.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Share of pool dialogues to keep, in (0, 1].
    #[arg(long, global = true)]
    fraction: Option<f64>,
    #[arg(long, global = true, value_enum)]
    llm: Option<LlmArg>,
    #[arg(long, global = true, value_enum)]
    embed: Option<EmbedArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmArg {
    Remote,
    Replay,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedArg {
    Lexical,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MultiWOZ data.json into canonical JSONL.
    Ingest {
        data: PathBuf,
        /// MultiWOZ release: 2.1 or 2.4.
        #[arg(long = "version", value_name = "VERSION")]
        mwz_version: MultiwozVersion,
        /// With --test-list, keep only one split.
        #[arg(long, requires = "test_list")]
        val_list: Option<PathBuf>,
        #[arg(long, requires = "val_list")]
        test_list: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Draw a seeded few-shot subset of whole dialogues.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus in canonical JSONL.
    Toy {
        #[arg(long, default_value_t = 20)]
        dialogues: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Track one dialogue and print its per-turn trace.
    Track {
        #[arg(long)]
        dialogue: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate and write report.json and trace.jsonl into a directory.
    Eval {
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the three-row ablation and print the comparison table.
    Ablate {
        /// Write the rows as JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Mine contrastive training pairs from the example pool.
    MinePairs {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        positives: usize,
        #[arg(long, default_value_t = 4)]
        negatives: usize,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
    },
    /// Encode or parse one SQL statement.
    Sql {
        #[command(subcommand)]
        action: SqlAction,
    },
}

#[derive(Subcommand)]
enum SqlAction {
    /// JSON object of `domain-slot` to value (or "[DELETE]") to SQL.
    Encode { delta: String },
    /// SQL to `domain-slot=value` lines.
    Parse { sql: String },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            k: self.k,
            fraction: self.fraction,
            llm: self.llm.map(|l| match l {
                LlmArg::Remote => LlmKind::Remote,
                LlmArg::Replay => LlmKind::Replay,
                LlmArg::Oracle => LlmKind::Oracle,
            }),
            embed: self.embed.map(|e| match e {
                EmbedArg::Lexical => EmbeddingKind::Lexical,
                EmbedArg::Remote => EmbeddingKind::Remote,
            }),
        }
    }
}

/// Writes through a temp file in the destination folder, renamed into
/// place only after `fill` succeeds.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_schema(config: &RunConfig) -> Result<Schema> {
    match &config.data.schema {
        Some(p) => Ok(Schema::from_path(p)?),
        None => Ok(Schema::multiwoz()),
    }
}

fn load_dataset(path: Option<&PathBuf>, key: &str, schema: &Schema, split: Split) -> Result<DialogueDataset> {
    let path = path.ok_or_else(|| anyhow!("data.{key} is not configured"))?;
    Ok(read_canonical_jsonl(path, schema, split)?)
}

fn load_pool(config: &RunConfig, schema: &Schema) -> Result<DialogueDataset> {
    let pool = load_dataset(config.data.pool.as_ref(), "pool", schema, Split::Train)?;
    Ok(sample_fewshot(&pool, config.data.fraction, config.seed)?)
}

struct Services {
    llm: Box<dyn CompletionBackend>,
    embedder: Box<dyn EmbeddingProvider>,
    nlu: Option<NluClient>,
}

impl Services {
    fn new(config: &RunConfig, eval: &DialogueDataset) -> Result<Self> {
        let policy = config.retry_policy();
        let embedder: Box<dyn EmbeddingProvider> = match config.retrieval.provider {
            EmbeddingKind::Lexical => Box::new(LexicalProvider::default()),
            EmbeddingKind::Remote => {
                let url = config.retrieval.endpoint.as_deref().unwrap_or_default();
                Box::new(RemoteProvider::new(url, policy.clone()).with_batch_size(config.retrieval.batch_size))
            }
        };
        let llm: Box<dyn CompletionBackend> = match config.llm.backend {
            LlmKind::Oracle => Box::new(OracleBackend::from_dataset(eval)?),
            LlmKind::Replay => Box::new(ReplayBackend::open(config.llm.fixture.as_deref().unwrap_or(Path::new("")))?),
            LlmKind::Remote => {
                let url = config.llm.endpoint.as_deref().unwrap_or_default();
                let mut remote = RemoteBackend::new(url, config.llm.dialect.clone(), policy.clone())
                    .with_concurrency(config.llm.concurrency);
                if let Some(m) = &config.llm.model {
                    remote = remote.with_model(m);
                }
                match (&config.llm.fixture, config.llm.record) {
                    (Some(f), true) => Box::new(RecordingBackend::create(remote, f)?),
                    _ => Box::new(remote),
                }
            }
        };
        let nlu = config.intent.endpoint.as_deref().map(|url| NluClient::at_base(url, policy));
        Ok(Self { llm, embedder, nlu })
    }

    fn backends(&self) -> Backends<'_> {
        Backends {
            llm: self.llm.as_ref(),
            embedder: self.embedder.as_ref(),
            nlu: self.nlu.as_ref(),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), |k| std::env::var(k).ok(), &cli.overrides())?;
    eprintln!("# effective configuration\n{}", config.to_toml());
    let schema = load_schema(&config)?;

    match cli.command {
        Command::Ingest {
            data,
            mwz_version,
            val_list,
            test_list,
            split,
            out,
        } => {
            let dataset = match (val_list, test_list) {
                (Some(v), Some(t)) => {
                    let splits = load_multiwoz_splits(&data, &v, &t, &schema, mwz_version)?;
                    match split {
                        SplitArg::Train => splits.train,
                        SplitArg::Dev => splits.dev,
                        SplitArg::Test => splits.test,
                    }
                }
                _ => load_multiwoz(&data, &schema, mwz_version)?,
            };
            write_atomic(&out, |w| Ok(to_canonical_jsonl(&dataset, w)?))?;
            println!("{} dialogues, {} turns -> {}", dataset.dialogues.len(), dataset.turn_count(), out.display());
        }
        Command::Sample { input, out } => {
            let full = read_canonical_jsonl(&input, &schema, Split::Train)?;
            let sampled = sample_fewshot(&full, config.data.fraction, config.seed)?;
            write_atomic(&out, |w| Ok(to_canonical_jsonl(&sampled, w)?))?;
            println!("kept {} of {} dialogues -> {}", sampled.dialogues.len(), full.dialogues.len(), out.display());
        }
        Command::Toy { dialogues, out } => {
            let ds = idic_core::toy::generate(&schema, dialogues, config.seed);
            write_atomic(&out, |w| Ok(to_canonical_jsonl(&ds, w)?))?;
            println!("{} dialogues, {} turns -> {}", ds.dialogues.len(), ds.turn_count(), out.display());
        }
        Command::Track { dialogue, out } => {
            let pool = load_pool(&config, &schema)?;
            let mut eval = load_dataset(config.data.eval.as_ref(), "eval", &schema, Split::Test)?;
            eval.dialogues.retain(|d| d.dialogue_id == dialogue);
            if eval.dialogues.is_empty() {
                bail!("dialogue {dialogue} not found in data.eval");
            }
            let services = Services::new(&config, &eval)?;
            let tracker = Tracker::new(config.pipeline(), services.backends(), &pool)?;
            let runs = vec![tracker.track_dialogue(&eval.dialogues[0])];
            match out {
                Some(path) => write_atomic(&path, |w| Ok(write_trace_jsonl(&runs, w)?))?,
                None => write_trace_jsonl(&runs, std::io::stdout().lock())?,
            }
            if let Some(e) = &runs[0].aborted {
                bail!("dialogue {dialogue} aborted: {e}");
            }
        }
        Command::Eval { out } => {
            let pool = load_pool(&config, &schema)?;
            let eval = load_dataset(config.data.eval.as_ref(), "eval", &schema, Split::Test)?;
            let services = Services::new(&config, &eval)?;
            let evaluation = Tracker::new(config.pipeline(), services.backends(), &pool)?.evaluate(&eval)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write_atomic(&dir.join("trace.jsonl"), |w| Ok(write_trace_jsonl(&evaluation.runs, w)?))?;
                write_atomic(&dir.join("report.json"), |w| Ok(w.write_all(evaluation.report.to_json().as_bytes())?))?;
            }
            print!("{}", evaluation.report.to_table());
        }
        Command::Ablate { out } => {
            let pool = load_pool(&config, &schema)?;
            let eval = load_dataset(config.data.eval.as_ref(), "eval", &schema, Split::Test)?;
            let services = Services::new(&config, &eval)?;
            let rows = run_ablation(&config.pipeline(), services.backends(), &pool, &eval)?;
            if let Some(path) = out {
                write_atomic(&path, |w| Ok(serde_json::to_writer_pretty(w, &rows)?))?;
            }
            print!("{}", ablation_table(&rows));
        }
        Command::MinePairs {
            out,
            positives,
            negatives,
            threshold,
        } => {
            let pool = build_example_pool(&load_pool(&config, &schema)?, QueryView::IntentMasked)?;
            let mining = MiningConfig {
                positives_per_anchor: positives,
                negatives_per_anchor: negatives,
                negative_threshold: threshold,
                seed: config.seed,
            };
            let pairs = mine_training_pairs(&pool, &mining);
            write_atomic(&out, |w| Ok(write_pairs_jsonl(&pairs, w)?))?;
            println!("{} pairs from {} examples -> {}", pairs.len(), pool.len(), out.display());
        }
        Command::Sql { action } => match action {
            SqlAction::Encode { delta } => {
                let flat: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&delta).context("delta must be a JSON object")?;
                let mut change = StateChange::new();
                for (k, v) in flat {
                    let key = SlotKey::parse_flat(&k)?;
                    let raw = v.as_str().ok_or_else(|| anyhow!("value of {k} must be a string"))?;
                    let value = match SlotValue::from_token(raw) {
                        SlotValue::Delete => SlotValue::Delete,
                        SlotValue::Value(v) => SlotValue::Value(schema.canonicalize(&key, &v)?),
                    };
                    change.insert(key, value);
                }
                println!("{}", encode_delta_as_sql(&change, &schema)?);
            }
            SqlAction::Parse { sql } => {
                let parsed = parse_sql(&sql, &schema)?;
                for (k, v) in parsed.where_pairs.iter() {
                    println!("{k}={}", v.as_str());
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
