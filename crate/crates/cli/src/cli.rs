use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lakeorg::benchgen::{self, BenchSpec, VocabSpec};
use lakeorg::embedding::load_embeddings;
use lakeorg::enrich::{self, TrainConfig};
use lakeorg::lake::{self, DataLake, IngestOptions};
use lakeorg::navmodel;
use lakeorg::optimizer::{self, SearchConfig, SearchTrace};
use lakeorg::organization::{load_organization, Organization};

use crate::server;

#[derive(Debug, Parser)]
#[command(name = "lakeorg", version, about = "Build, evaluate and serve navigation structures over data lakes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark lake with known tags.
    GenBench(GenBenchArgs),
    /// Read CSV tables and their metadata into a lake file.
    Ingest(IngestArgs),
    /// Organize a lake (one organization per dimension).
    Build(BuildArgs),
    /// Evaluate organizations: per-table discovery and success.
    Eval(EvalArgs),
    /// Transfer tags from a tagged lake to another lake.
    Enrich(EnrichArgs),
    /// Serve an organization over HTTP for interactive navigation.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenBenchArgs {
    /// Output directory (tables/, metadata.jsonl, embeddings.txt, lake.json, ground_truth.csv).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 365)]
    pub n_tags: usize,
    #[arg(long, default_value_t = 369)]
    pub n_tables: usize,
    #[arg(long, default_value_t = 10)]
    pub min_values: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_values: usize,
    #[arg(long, default_value_t = 1)]
    pub min_attributes: usize,
    #[arg(long, default_value_t = 50)]
    pub max_attributes: usize,
    #[arg(long, default_value_t = 1.3)]
    pub zipf_exponent: f64,
    /// Largest cosine allowed between two tag words.
    #[arg(long, default_value_t = 0.5)]
    pub tag_separation: f64,
    /// Also tag each attribute with its closest other tag.
    #[arg(long)]
    pub enriched: bool,
    /// Seed of the synthetic word vectors.
    #[arg(long, default_value_t = 0)]
    pub vocab_seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub tables: PathBuf,
    #[arg(long)]
    pub metadata: PathBuf,
    /// Word vectors, one `token v1 .. vd` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub text_threshold: f64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub lake: PathBuf,
    /// Output directory for org-<i>.json and trace.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Search configuration (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dimensions: Option<usize>,
    #[arg(long)]
    pub reps_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    /// Navigate with every attribute instead of representatives.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub lake: PathBuf,
    /// Organization files, or a directory holding org-<i>.json files.
    #[arg(long = "org", required = true, num_args = 1..)]
    pub orgs: Vec<PathBuf>,
    /// Output directory for report.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = navmodel::DEFAULT_THETA)]
    pub theta: f64,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    /// Tagged lake to learn from.
    #[arg(long)]
    pub source: PathBuf,
    /// Lake to receive tags.
    #[arg(long)]
    pub target: PathBuf,
    /// Augmented target lake.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to store the trained classifiers (JSON).
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Per-tag transfer counts (CSV).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub min_positives: usize,
    #[arg(long, default_value_t = 9)]
    pub neg_ratio: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub lake: PathBuf,
    #[arg(long)]
    pub org: PathBuf,
    /// summary.json written by `eval`, shown in the organization summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Static files served under `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "LAKEORG_PORT", default_value_t = 8080)]
    pub port: u16,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenBench(a) => gen_bench(&a),
        Command::Ingest(a) => ingest(&a),
        Command::Build(a) => build(&a),
        Command::Eval(a) => eval(&a),
        Command::Enrich(a) => enrich_cmd(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn load_lake(path: &Path) -> Result<DataLake> {
    DataLake::load(path).with_context(|| format!("cannot read lake {}", path.display()))
}

pub fn gen_bench(a: &GenBenchArgs) -> Result<()> {
    let spec = BenchSpec {
        n_tags: a.n_tags,
        n_tables: a.n_tables,
        min_values: a.min_values,
        max_values: a.max_values,
        min_attributes: a.min_attributes,
        max_attributes: a.max_attributes,
        zipf_exponent: a.zipf_exponent,
        tag_min_separation: a.tag_separation,
        extra_tag_per_attribute: a.enriched,
        seed: a.seed,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let vectors = a.out.join("embeddings.txt");
    benchgen::synthetic_vocabulary(&VocabSpec {
        seed: a.vocab_seed,
        ..VocabSpec::default()
    })
    .write(&vectors)?;
    // generate from the vectors as written, so ingesting the tables later
    // reproduces the same topic vectors
    let store = load_embeddings(&vectors)?;
    let bench = benchgen::generate(&store, &spec)?;
    benchgen::write_benchmark(&bench, &a.out)?;
    bench.lake.save(&a.out.join("lake.json"))?;
    println!(
        "generated {} tables, {} attributes, {} tags in {}",
        bench.lake.tables().len(),
        bench.lake.attributes().len(),
        bench.lake.n_tags(),
        a.out.display()
    );
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let store = load_embeddings(&a.embeddings)?;
    let (lake, report) = lake::ingest(
        &a.tables,
        &a.metadata,
        &store,
        IngestOptions {
            text_threshold: a.text_threshold,
        },
    )?;
    lake.save(&a.out)?;
    println!(
        "ingested {} tables, {} attributes, {} tags ({} tables skipped, {} attributes dropped)",
        lake.tables().len(),
        lake.attributes().len(),
        lake.n_tags(),
        report.skipped_tables,
        report.dropped_attributes
    );
    Ok(())
}

pub fn search_config(a: &BuildArgs) -> Result<SearchConfig> {
    let mut cfg = match &a.config {
        Some(p) => SearchConfig::load(p)?,
        None => SearchConfig::default(),
    };
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(d) = a.dimensions {
        cfg.dimensions = d;
    }
    if let Some(f) = a.reps_fraction {
        cfg.representative_fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if let Some(m) = a.max_iters {
        cfg.max_iterations = m;
    }
    if let Some(w) = a.plateau_window {
        cfg.plateau_window = w;
    }
    if a.exact {
        cfg.use_representatives = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn build(a: &BuildArgs) -> Result<()> {
    let cfg = search_config(a)?;
    let lake = load_lake(&a.lake)?;
    if lake.n_tags() == 0 {
        bail!(lakeorg::Error::Tagless);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let start = Instant::now();
    let dims = optimizer::build_multidim(&lake, &cfg)?;
    for (i, d) in dims.iter().enumerate() {
        d.org.save(&a.out.join(format!("org-{i}.json")))?;
        println!(
            "dimension {i}: {} tags, {} states, {} iterations ({} accepted), effectiveness {:.4} -> {:.4}",
            d.tags.len(),
            d.org.n_states(),
            d.trace.iterations.len(),
            d.trace.accepted(),
            d.trace.initial_effectiveness,
            d.trace.best_effectiveness
        );
    }
    let traces: Vec<&SearchTrace> = dims.iter().map(|d| &d.trace).collect();
    write_traces(&traces, &a.out.join("trace.jsonl"))?;
    log::info!("build took {:.2?}", start.elapsed());
    Ok(())
}

/// Every dimension's trace in one file; each line carries its dimension.
fn write_traces(traces: &[&SearchTrace], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?);
    for (i, t) in traces.iter().enumerate() {
        let mut buf = Vec::new();
        t.write_ndjson(&mut buf)?;
        for line in String::from_utf8(buf)?.lines() {
            let mut v: serde_json::Value = serde_json::from_str(line)?;
            if let Some(o) = v.as_object_mut() {
                o.insert("dimension".into(), i.into());
            }
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Expands directories into their `org-<i>.json` files, in dimension order.
pub fn organization_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in args {
        if !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        let mut found: Vec<(usize, PathBuf)> = fs::read_dir(p)
            .with_context(|| format!("cannot list {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|path| {
                let name = path.file_name()?.to_str()?;
                let i = name.strip_prefix("org-")?.strip_suffix(".json")?.parse().ok()?;
                Some((i, path))
            })
            .collect();
        if found.is_empty() {
            bail!("no org-<i>.json files in {}", p.display());
        }
        found.sort();
        out.extend(found.into_iter().map(|(_, p)| p));
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.theta.is_nan() {
        bail!("theta must be a number");
    }
    let lake = load_lake(&a.lake)?;
    let mut orgs: Vec<Organization> = Vec::new();
    for p in organization_paths(&a.orgs)? {
        let (org, _) = load_organization(&p, &lake).with_context(|| format!("cannot load {}", p.display()))?;
        let problems = org.validate();
        if !problems.is_empty() {
            bail!("{} is not a valid organization: {}", p.display(), problems[0]);
        }
        orgs.push(org);
    }
    let refs: Vec<&Organization> = orgs.iter().collect();
    let report = optimizer::evaluate_dimensions(&refs, a.theta)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    report.write_csv(&a.out.join("report.csv"))?;
    report.write_summary(&a.out.join("summary.json"))?;
    let s = report.summary();
    println!(
        "{} tables: effectiveness {:.4}, mean success {:.4}",
        s.n_tables, s.effectiveness, s.mean_success
    );
    Ok(())
}

pub fn enrich_cmd(a: &EnrichArgs) -> Result<()> {
    let source = load_lake(&a.source)?;
    let target = load_lake(&a.target)?;
    let cfg = TrainConfig {
        min_positives: a.min_positives,
        neg_ratio: a.neg_ratio,
        folds: a.folds,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let classifiers = enrich::train_classifiers(&source, &cfg)?;
    if let Some(p) = &a.models {
        enrich::save_classifiers(&classifiers, p)?;
    }
    let (augmented, report) = enrich::transfer_tags(&classifiers, &target)?;
    augmented.save(&a.out)?;
    if let Some(p) = &a.report {
        report.write_csv(p)?;
    }
    println!(
        "{} classifiers; {} attributes labeled using {} tags",
        classifiers.len(),
        report.attributes_labeled,
        report.tags_used()
    );
    Ok(())
}

fn cached_effectiveness(path: &Path) -> Result<Option<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let summary: navmodel::EvalSummary = serde_json::from_str(&text)?;
    Ok(Some(summary.effectiveness))
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let lake = load_lake(&a.lake)?;
    let (org, sub) = load_organization(&a.org, &lake).with_context(|| format!("cannot load {}", a.org.display()))?;
    let problems = org.validate();
    if !problems.is_empty() {
        bail!("{} is not a valid organization: {}", a.org.display(), problems[0]);
    }
    let effectiveness = match &a.summary {
        Some(p) => cached_effectiveness(p)?,
        None => None,
    };
    let state = server::AppState::new(org, lake, sub, effectiveness)?;
    let app = server::router(state, a.assets.as_deref());
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        println!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

