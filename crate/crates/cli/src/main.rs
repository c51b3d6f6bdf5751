//! `clinassert` command-line front end.
//!
//! Exit codes: 0 success, 1 data or configuration error, 2 usage error.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use clinassert::contextual::{self, compile_rules, ContextualEngine, RuleSet};
use clinassert::eval::{self, evaluate, format_latency, format_report, map_labels, LabelMap, UnmappedPolicy};
use clinassert::io::{read_annotations, read_chunks, read_documents, write_annotations, write_string, ChunkRecord};
use clinassert::manifest::{RunManifest, SCHEMA_VERSION};
use clinassert::merger::{run_pipeline, PipelineConfig, Streams};
use clinassert::negex::{self, Negex, NegexConfig};
use clinassert::runner::{annotate_corpus, Engine};
use clinassert::{i2b2, synth, AssertionLabel, Document};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (schema 1)");
const DATA_DIR_ENV: &str = "CLINASSERT_DATA_DIR";

#[derive(Parser)]
#[command(name = "clinassert", version = VERSION, about = "Clinical assertion status detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineKind {
    Negex,
    Contextual,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unmapped {
    Drop,
    Error,
}

#[derive(clap::Args)]
struct EngineArgs {
    #[arg(long, value_enum)]
    engine: EngineKind,
    /// Rule file or directory (contextual) or cue file (negex). Defaults
    /// to $CLINASSERT_DATA_DIR, then to the bundled resources.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// NegEx scope window in tokens.
    #[arg(long, default_value_t = negex::DEFAULT_MAX_SCOPE)]
    max_scope: usize,
    /// Label for chunks no contextual rule fired on; abstain when unset.
    #[arg(long, value_parser = parse_label)]
    fallback_label: Option<AssertionLabel>,
    /// Worker threads for per-document parallelism; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate chunks with the NegEx or contextual engine.
    Annotate {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only `absent` rows.
        #[arg(long)]
        emit_absent_only: bool,
    },
    /// Run a merger pipeline over named annotation streams.
    Merge {
        #[arg(long)]
        pipeline: PathBuf,
        /// NAME=PATH, repeatable.
        #[arg(long = "stream", value_parser = parse_stream, required = true)]
        streams: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold chunks.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// JSON object mapping raw labels to canonical ones.
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Comma-separated classes, or `all`. Defaults to the predicted labels.
        #[arg(long)]
        classes: Option<String>,
        /// Count gold rows without any matching prediction as misses.
        #[arg(long)]
        strict_miss: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "drop")]
        unmapped: Unmapped,
    },
    /// Measure annotation latency in seconds per 100 rows.
    Bench {
        #[command(flatten)]
        engine: EngineArgs,
        /// Defaults to the bundled 500-chunk synthetic corpus.
        #[arg(long, requires = "chunks")]
        corpus: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        chunks: Option<PathBuf>,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(eval::MIN_REPETITIONS as u64..))]
        reps: u64,
    },
    /// Write a seeded synthetic corpus (docs, chunks, gold).
    Synth {
        #[arg(long, default_value_t = synth::BUNDLED_SEED)]
        seed: u64,
        #[arg(long, default_value_t = synth::BUNDLED_CHUNKS)]
        chunks: usize,
        #[arg(long, default_value_t = synth::MAX_PER_DOC)]
        max_per_doc: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert i2b2 2010 `.txt`/`.ast` files to docs and gold chunks.
    ConvertI2b2 {
        #[arg(long)]
        txt_dir: PathBuf,
        #[arg(long)]
        ast_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_label(s: &str) -> Result<AssertionLabel, String> {
    AssertionLabel::canonical(s).ok_or_else(|| format!("`{s}` is not an assertion label"))
}

fn parse_stream(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

fn main() -> ExitCode {
    debug_assert!(VERSION.ends_with(&format!("(schema {SCHEMA_VERSION})")));
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Annotate {
            engine,
            corpus,
            chunks,
            out,
            emit_absent_only,
        } => cmd_annotate(&engine, &corpus, &chunks, &out, emit_absent_only),
        Command::Merge { pipeline, streams, out } => cmd_merge(&pipeline, &streams, &out),
        Command::Evaluate {
            gold,
            pred,
            label_map,
            classes,
            strict_miss,
            report,
            unmapped,
        } => cmd_evaluate(
            &gold,
            &pred,
            label_map.as_deref(),
            classes.as_deref(),
            strict_miss,
            report.as_deref(),
            unmapped,
        ),
        Command::Bench {
            engine,
            corpus,
            chunks,
            reps,
        } => cmd_bench(&engine, corpus.as_deref().zip(chunks.as_deref()), reps as usize),
        Command::Synth {
            seed,
            chunks,
            max_per_doc,
            out_dir,
        } => {
            let corpus = synth::generate(seed, chunks, max_per_doc);
            let mut manifest = RunManifest::new(format!(
                "synth --seed {seed} --chunks {chunks} --max-per-doc {max_per_doc}"
            ));
            for p in corpus.write(&out_dir)? {
                manifest = manifest.output(&p)?;
            }
            manifest.write_for(&out_dir.join("corpus"))?;
            Ok(())
        }
        Command::ConvertI2b2 {
            txt_dir,
            ast_dir,
            out_dir,
        } => {
            let (docs, chunks) = i2b2::convert_dirs(&txt_dir, &ast_dir)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let docs_path = out_dir.join("docs.jsonl");
            let gold_path = out_dir.join("gold.jsonl");
            clinassert::io::write_jsonl(&docs_path, &docs)?;
            clinassert::io::write_jsonl(&gold_path, &chunks)?;
            RunManifest::new("convert-i2b2")
                .output(&docs_path)?
                .output(&gold_path)?
                .write_for(&out_dir.join("corpus"))?;
            eprintln!("converted {} notes, {} problem chunks", docs.len(), chunks.len());
            Ok(())
        }
    }
}

/// Where an engine's configuration came from, for the manifest.
enum ConfigSource {
    Files(Vec<PathBuf>),
    Bundled(&'static str, String),
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn rule_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn build_engine(args: &EngineArgs) -> anyhow::Result<(Engine, ConfigSource)> {
    match args.engine {
        EngineKind::Negex => {
            let path = args
                .rules
                .clone()
                .or_else(|| data_dir().map(|d| d.join("negex_cues.jsonl")));
            let (base, source) = match path {
                Some(p) => (NegexConfig::load(&p)?, ConfigSource::Files(vec![p])),
                None => (
                    NegexConfig::bundled(),
                    ConfigSource::Bundled("bundled:negex_cues.jsonl", negex::BUNDLED_CUES.to_string()),
                ),
            };
            let config = NegexConfig::new(base.cues, args.max_scope, base.sentence_bounded)?;
            Ok((Engine::Negex(Negex::new(&config)?), source))
        }
        EngineKind::Contextual => {
            let path = args.rules.clone().or_else(|| data_dir().map(|d| d.join("rules")));
            let (rules, source) = match path {
                Some(p) => (compile_rules(&p)?, ConfigSource::Files(rule_files(&p)?)),
                None => (
                    RuleSet::bundled(),
                    ConfigSource::Bundled(
                        "bundled:rules",
                        contextual::BUNDLED_RULES.iter().map(|(_, c)| *c).collect(),
                    ),
                ),
            };
            Ok((
                Engine::Contextual {
                    engine: ContextualEngine::new(rules),
                    fallback: args.fallback_label.clone(),
                },
                source,
            ))
        }
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

fn load_corpus(corpus: &Path, chunks: &Path) -> anyhow::Result<(Vec<Document>, Vec<ChunkRecord>)> {
    Ok((read_documents(corpus)?, read_chunks(chunks)?))
}

fn cmd_annotate(args: &EngineArgs, corpus: &Path, chunks: &Path, out: &Path, absent_only: bool) -> anyhow::Result<()> {
    let (engine, source) = build_engine(args)?;
    let (docs, records) = load_corpus(corpus, chunks)?;
    let origin = chunks.display().to_string();
    let parallel = args.workers != 1;
    let mut anns = with_pool(args.workers, || {
        annotate_corpus(&engine, &docs, &records, &origin, parallel)
    })??;
    if absent_only {
        anns.retain(|a| a.label == AssertionLabel::Absent);
    }
    write_annotations(out, &anns)?;

    let mut manifest = RunManifest::new("annotate").input(corpus)?.input(chunks)?;
    manifest = match source {
        ConfigSource::Files(files) => files.iter().try_fold(manifest, |m, f| m.config(f))?,
        ConfigSource::Bundled(label, content) => manifest.bundled_config(label, &content),
    };
    manifest.output(out)?.write_for(out)?;
    Ok(())
}

fn cmd_merge(pipeline_path: &Path, streams: &[(String, PathBuf)], out: &Path) -> anyhow::Result<()> {
    let pipeline = PipelineConfig::load(pipeline_path)?;
    let needed: HashSet<String> = pipeline.external_inputs().into_iter().collect();
    let mut loaded: Streams = HashMap::new();
    for (name, path) in streams {
        if !needed.contains(name) {
            eprintln!("warning: stream `{name}` is not referenced by the pipeline");
            continue;
        }
        if loaded.contains_key(name) {
            bail!("stream `{name}` given twice");
        }
        loaded.insert(name.clone(), read_annotations(path, name)?);
    }
    let merged = run_pipeline(&loaded, &pipeline)?;
    write_annotations(out, &merged)?;

    let mut manifest = RunManifest::new("merge");
    for (name, path) in streams {
        if needed.contains(name) {
            manifest = manifest.input(path)?;
        }
    }
    manifest.config(pipeline_path)?.output(out)?.write_for(out)?;
    Ok(())
}

fn parse_classes(spec: Option<&str>, pred: &[clinassert::Annotation]) -> anyhow::Result<BTreeSet<AssertionLabel>> {
    match spec {
        None => Ok(pred.iter().map(|a| a.label.clone()).collect()),
        Some("all") => Ok(AssertionLabel::CANONICAL.iter().cloned().collect()),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_label(s).map_err(anyhow::Error::msg))
            .collect(),
    }
}

fn cmd_evaluate(
    gold_path: &Path,
    pred_path: &Path,
    label_map: Option<&Path>,
    classes: Option<&str>,
    strict: bool,
    report_path: Option<&Path>,
    unmapped: Unmapped,
) -> anyhow::Result<()> {
    let policy = match unmapped {
        Unmapped::Drop => UnmappedPolicy::Drop,
        Unmapped::Error => UnmappedPolicy::Error,
    };
    let map = match label_map {
        Some(p) => LabelMap::load(p, policy)?,
        None => LabelMap::identity(policy),
    };
    let gold = map_labels(&read_annotations(gold_path, "gold")?, &map)?;
    let pred = map_labels(&read_annotations(pred_path, "pred")?, &map)?;
    let classes = parse_classes(classes, &pred)?;
    let report = evaluate(&gold, &pred, &classes, strict)?;
    print!("{}", format_report(&report));

    if let Some(path) = report_path {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_string(path, &json)?;
        let mut manifest = RunManifest::new("evaluate").input(gold_path)?.input(pred_path)?;
        if let Some(m) = label_map {
            manifest = manifest.config(m)?;
        }
        manifest.output(path)?.write_for(path)?;
    }
    Ok(())
}

fn cmd_bench(args: &EngineArgs, files: Option<(&Path, &Path)>, reps: usize) -> anyhow::Result<()> {
    let (engine, _) = build_engine(args)?;
    let (docs, records, origin) = match files {
        Some((corpus, chunks)) => {
            let (d, r) = load_corpus(corpus, chunks)?;
            (d, r, chunks.display().to_string())
        }
        None => {
            let c = synth::bundled();
            let records = c.chunks();
            (c.documents, records, "bundled:synth500".to_string())
        }
    };
    let parallel = args.workers != 1;
    let stats = with_pool(args.workers, || {
        eval::bench(reps, parallel, || {
            annotate_corpus(&engine, &docs, &records, &origin, parallel).map(|_| records.len())
        })
    })??;
    println!("{}", format_latency(&stats));
    Ok(())
}
