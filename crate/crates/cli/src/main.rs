//! `rapidmap`: build a gazetteer, ingest and geolocate posts, serve them,
//! and run synthetic experiments.
//!
//! Exit status is 0 on success, 1 for bad input (missing or malformed
//! files, invalid configuration) and 2 for internal failures.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use axum::http::HeaderValue;
use clap::{Parser, Subcommand};
use rapidmap_api::{router, serve, AppState, Clock};
use rapidmap_core::eval::evaluate;
use rapidmap_core::gazetteer::Gazetteer;
use rapidmap_core::geocode::{read_geolocations, write_geolocations, GeocodeConfig, Geocoder, ToponymExtractor};
use rapidmap_core::ingest::{parse_posts, parse_timestamp, resolve_corpus, write_posts, FixtureClient, Post};
use rapidmap_core::ranking::RankingParams;
use rapidmap_core::scenario::{read_truth, simulate, ScenarioConfig};
use rapidmap_core::store::{Store, StoredItem};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "rapidmap", version, about = "Geolocate emergency-related social media posts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gazetteer tools.
    Gazetteer {
        #[command(subcommand)]
        action: GazetteerCmd,
    },
    /// Parse raw posts and attach media behind platform links.
    Ingest {
        #[arg(long)]
        posts: PathBuf,
        /// Directory of canned platform responses, one file per link.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Geolocate posts and optionally load the results into a store.
    Geolocate {
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        gazetteer: PathBuf,
        /// key = value scoring configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Store directory to upsert into (created if missing).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Replacement stopword list, one word per line.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Insertion time recorded in the store (epoch or RFC 3339); defaults to now.
        #[arg(long, value_parser = timestamp)]
        now: Option<i64>,
    },
    /// Serve a store over HTTP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Origin allowed to call the API from a browser.
        #[arg(long)]
        cors_origin: Option<String>,
        /// Fixed clock for recency scoring (epoch or RFC 3339).
        #[arg(long, value_parser = timestamp)]
        now: Option<i64>,
        /// Initial ranking parameters as a JSON object.
        #[arg(long)]
        ranking: Option<PathBuf>,
    },
    /// Generate a synthetic scenario with ground truth.
    Simulate {
        /// key = value scenario file; the flood preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gazetteer: PathBuf,
        #[arg(long)]
        out_posts: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Score geolocations against ground truth.
    Evaluate {
        #[arg(long)]
        geolocations: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        posts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,50")]
        k: Vec<usize>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum GazetteerCmd {
    /// Validate a TSV extract and write the index file.
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn timestamp(s: &str) -> Result<i64, String> {
    parse_timestamp(s)
}

enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome = Result<(), Failure>;

trait InputExt<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T> InputExt<T> for anyhow::Result<T> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(Failure::Input)
    }
}

trait InternalExt<T> {
    fn internal(self, what: impl Fn() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InternalExt<T> for Result<T, E> {
    fn internal(self, what: impl Fn() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into().context(what())))
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Input(anyhow!("{}: no such file", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .internal(|| format!("cannot create {}", path.display()))
}

fn load_posts(path: &Path) -> Result<Vec<Post>, Failure> {
    require_file(path)?;
    if fs::metadata(path).map(|m| m.len() == 0).unwrap_or(false) {
        return Ok(Vec::new());
    }
    let outcome = parse_posts(path)
        .with_context(|| format!("reading posts from {}", path.display()))
        .input()?;
    for e in &outcome.errors {
        warn!("{}: skipped record at {e}", path.display());
    }
    Ok(outcome.posts)
}

fn load_gazetteer(path: &Path) -> Result<Gazetteer, Failure> {
    require_file(path)?;
    Gazetteer::open(path)
        .with_context(|| format!("loading gazetteer {}", path.display()))
        .input()
}

fn gazetteer_build(input: &Path, out: &Path) -> Outcome {
    require_file(input)?;
    let g = Gazetteer::load_tsv(input)
        .with_context(|| format!("{}", input.display()))
        .input()?;
    let mut w = create(out)?;
    g.write_index(&mut w)
        .and_then(|_| w.flush())
        .internal(|| format!("writing {}", out.display()))?;
    info!("indexed {} places into {}", g.len(), out.display());
    Ok(())
}

fn ingest(posts: &Path, fixtures: Option<&Path>, out: &Path) -> Outcome {
    let mut posts = load_posts(posts)?;
    if let Some(dir) = fixtures {
        if !dir.is_dir() {
            return Err(Failure::Input(anyhow!("{}: no such directory", dir.display())));
        }
        let (resolved, report) = resolve_corpus(posts, &FixtureClient::new(dir));
        posts = resolved;
        for f in &report.failures {
            warn!("post {}: {} ({})", f.post_id, f.url, f.message);
        }
        info!(
            "{} platform links, {} media items added, {} unresolvable",
            report.platform_links, report.media_added, report.unresolvable
        );
    }
    let mut w = create(out)?;
    write_posts(&mut w, &posts)
        .and_then(|_| w.flush())
        .internal(|| format!("writing {}", out.display()))
}

fn read_stopwords(path: &Path) -> Result<Vec<String>, Failure> {
    require_file(path)?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .input()?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn now_epoch() -> i64 {
    Clock::System.now()
}

#[allow(clippy::too_many_arguments)]
fn geolocate(
    posts: &Path,
    gazetteer: &Path,
    config: Option<&Path>,
    out: &Path,
    store: Option<&Path>,
    stopwords: Option<&Path>,
    now: Option<i64>,
) -> Outcome {
    let posts = load_posts(posts)?;
    let g = load_gazetteer(gazetteer)?;
    let cfg = match config {
        Some(p) => {
            require_file(p)?;
            GeocodeConfig::load(p)
                .with_context(|| format!("{}", p.display()))
                .input()?
        }
        None => GeocodeConfig::default(),
    };
    let extractor = match stopwords {
        Some(p) => {
            let words = read_stopwords(p)?;
            ToponymExtractor::with_stopwords(&g, words.iter().map(String::as_str))
        }
        None => ToponymExtractor::new(&g),
    };
    let run = Geocoder::with_extractor(extractor, cfg).run(&posts);
    let mut w = create(out)?;
    write_geolocations(&mut w, &run.geolocations)
        .and_then(|_| w.flush())
        .internal(|| format!("writing {}", out.display()))?;
    info!(
        "{} posts geolocated in {} propagation rounds",
        run.geolocations.len(),
        run.iterations
    );
    if let Some(dir) = store {
        let (store, report) = Store::create(dir)
            .with_context(|| format!("opening store {}", dir.display()))
            .input()?;
        for w in &report.warnings {
            warn!("{w}");
        }
        let at = now.unwrap_or_else(now_epoch);
        let items = posts
            .into_iter()
            .zip(run.geolocations)
            .map(|(p, geo)| StoredItem::new(p, geo, at))
            .collect();
        store
            .insert_batch(items)
            .internal(|| format!("writing store {}", dir.display()))?;
        info!("store {} holds {} posts", dir.display(), store.len());
    }
    Ok(())
}

fn serve_store(
    store: &Path,
    host: &str,
    port: u16,
    cors_origin: Option<&str>,
    now: Option<i64>,
    ranking: Option<&Path>,
) -> Outcome {
    let (store, report) = Store::open(store)
        .with_context(|| format!("opening store {}", store.display()))
        .input()?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let params = match ranking {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("{}", p.display())).input()?;
            let params: RankingParams = serde_json::from_str(&text)
                .with_context(|| format!("{}", p.display()))
                .input()?;
            params.validate().with_context(|| format!("{}", p.display())).input()?;
            params
        }
        None => RankingParams::default(),
    };
    let cors = cors_origin
        .map(|o| HeaderValue::from_str(o).with_context(|| format!("bad --cors-origin `{o}`")))
        .transpose()
        .input()?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad listen address {host}:{port}"))
        .input()?;
    let clock = now.map_or(Clock::System, Clock::Fixed);
    let state = Arc::new(AppState::new(Arc::new(store), params, clock));
    let rt = tokio::runtime::Runtime::new().internal(|| "starting runtime".into())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))
            .input()?;
        let local = listener.local_addr().internal(|| "reading bound address".into())?;
        println!("listening on http://{local}");
        serve(listener, router(state, cors), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .internal(|| "server failed".into())
    })
}

fn simulate_cmd(config: Option<&Path>, gazetteer: &Path, out_posts: &Path, out_truth: &Path) -> Outcome {
    let cfg = match config {
        Some(p) => {
            require_file(p)?;
            ScenarioConfig::load(p).with_context(|| format!("{}", p.display())).input()?
        }
        None => ScenarioConfig::default(),
    };
    let g = load_gazetteer(gazetteer)?;
    let scenario = simulate(&cfg, &g).context("generating scenario").input()?;
    let mut w = create(out_posts)?;
    scenario
        .write_posts(&mut w)
        .and_then(|_| w.flush())
        .internal(|| format!("writing {}", out_posts.display()))?;
    let mut w = create(out_truth)?;
    scenario
        .write_truth(&mut w)
        .map_err(anyhow::Error::from)
        .and_then(|_| w.flush().map_err(Into::into))
        .internal(|| format!("writing {}", out_truth.display()))?;
    let tagged = scenario.posts.iter().filter(|p| p.native_geotag.is_some()).count();
    info!(
        "{} posts, {} geotagged, {} naming ambiguous places",
        scenario.posts.len(),
        tagged,
        scenario.ambiguous.len()
    );
    Ok(())
}

fn evaluate_cmd(geolocations: &Path, truth: &Path, posts: &Path, ks: &[usize], out: Option<&Path>) -> Outcome {
    require_file(geolocations)?;
    require_file(truth)?;
    let geos = File::open(geolocations)
        .map_err(anyhow::Error::from)
        .and_then(|f| read_geolocations(BufReader::new(f)).map_err(|e| anyhow!(e)))
        .with_context(|| format!("{}", geolocations.display()))
        .input()?;
    let truth_records = File::open(truth)
        .map_err(anyhow::Error::from)
        .and_then(|f| read_truth(f).map_err(Into::into))
        .with_context(|| format!("{}", truth.display()))
        .input()?;
    let posts = load_posts(posts)?;
    let report = evaluate(&geos, &truth_records, &posts, ks).map_err(|e| Failure::Input(e.into()))?;
    let text = serde_json::to_string_pretty(&report).internal(|| "serializing report".into())?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).internal(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Gazetteer {
            action: GazetteerCmd::Build { input, out },
        } => gazetteer_build(&input, &out),
        Command::Ingest { posts, fixtures, out } => ingest(&posts, fixtures.as_deref(), &out),
        Command::Geolocate {
            posts,
            gazetteer,
            config,
            out,
            store,
            stopwords,
            now,
        } => geolocate(
            &posts,
            &gazetteer,
            config.as_deref(),
            &out,
            store.as_deref(),
            stopwords.as_deref(),
            now,
        ),
        Command::Serve {
            store,
            host,
            port,
            cors_origin,
            now,
            ranking,
        } => serve_store(&store, &host, port, cors_origin.as_deref(), now, ranking.as_deref()),
        Command::Simulate {
            config,
            gazetteer,
            out_posts,
            out_truth,
        } => simulate_cmd(config.as_deref(), &gazetteer, &out_posts, &out_truth),
        Command::Evaluate {
            geolocations,
            truth,
            posts,
            k,
            out,
        } => evaluate_cmd(&geolocations, &truth, &posts, &k, out.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal())
        .with_target(false)
        .without_time()
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}
