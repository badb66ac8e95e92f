use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use convis_cli::config::Settings;
use convis_cli::pipeline::{load_hierarchy, Pipeline};
use convis_cli::server::{self, load_quiz, AppState, ImageStore, Quiz};
use convis_core::evalkit::{default_tau_grid, load_wsol_manifest, run_ood_experiment, run_wsol, OodMethod, OodSpec};
use convis_core::saliency::{render_mask, render_overlay, Palette};
use convis_core::Image;

// stdout writes that fail (e.g. a closed pipe) surface as errors instead of panics
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout(), $($t)*)
    }};
}

#[derive(Parser)]
#[command(name = "convis", version, about = "Concept saliency maps for joint image-text embeddings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Settings file (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lexicon JSONL, overrides the config
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    /// Seed list restricting the hierarchy, overrides the config
    #[arg(long, global = true)]
    seeds: Option<PathBuf>,
    /// mock-hash[:DIM], fixture:PATH or remote:URL
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a saliency map; writes OUT.png and OUT.cvis
    Saliency {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        concept: String,
        #[arg(long)]
        out: PathBuf,
        /// gray, mask or overlay
        #[arg(long, default_value = "gray")]
        style: String,
        #[arg(long, default_value = "jet")]
        palette: String,
        #[arg(long)]
        delta_s: Option<u32>,
        #[arg(long)]
        delta_l: Option<u32>,
        #[arg(long)]
        omega: Option<u32>,
        #[arg(long)]
        window_mode: Option<String>,
        #[arg(long)]
        boundary_policy: Option<String>,
    },
    /// Embed all concept definitions into the cache
    PrecomputeDefs,
    /// Box accuracy of saliency maps over a localisation manifest
    WsolEval {
        #[arg(long)]
        manifest: PathBuf,
        /// Concept for every sample; defaults to each sample's own
        #[arg(long)]
        concept: Option<String>,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta_hat: f64,
    },
    /// Out-of-distribution AUROC for a known/unknown class split
    OodEval {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        /// Comma-separated subset of max_rank,rank,img_img
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Run the HTTP API
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Browse the concept hierarchy
    #[command(subcommand)]
    Hierarchy(HierarchyCommand),
}

#[derive(Subcommand)]
enum HierarchyCommand {
    /// Concepts matching a word, exact matches first
    Search {
        query: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Definition, parents, children and ancestors of a concept
    Show { id: String },
}

fn settings(c: &Common) -> Result<Settings> {
    let mut s = match &c.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(p) = &c.lexicon {
        s.lexicon_path = Some(p.clone());
    }
    if let Some(p) = &c.seeds {
        s.seed_path = Some(p.clone());
    }
    if let Some(b) = &c.backend {
        s.apply_backend_flag(b)?;
    }
    if let Some(d) = &c.cache_dir {
        s.cache_dir = Some(d.clone());
    }
    Ok(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn with_ext(out: &Path, ext: &str) -> PathBuf {
    match out.extension().and_then(|e| e.to_str()) {
        Some("png") | Some("cvis") => out.with_extension(ext),
        _ => {
            let mut s = out.as_os_str().to_owned();
            s.push(".");
            s.push(ext);
            PathBuf::from(s)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut s = settings(&cli.common)?;
    match cli.command {
        Command::Saliency {
            image,
            concept,
            out,
            style,
            palette,
            delta_s,
            delta_l,
            omega,
            window_mode,
            boundary_policy,
        } => {
            let base = Path::new("");
            for (k, v) in [
                ("delta_s", delta_s.map(|v| v.to_string())),
                ("delta_l", delta_l.map(|v| v.to_string())),
                ("omega", omega.map(|v| v.to_string())),
                ("window_mode", window_mode),
                ("boundary_policy", boundary_policy),
            ] {
                if let Some(v) = v {
                    s.set(k, &v, base)?;
                }
            }
            let img = Image::open(&image).with_context(|| format!("reading {}", image.display()))?;
            let p = Pipeline::load(&s)?;
            let (map, _) = p.saliency(&img, &concept, &s.saliency)?;
            let png = match style.as_str() {
                "gray" => map.to_gray(),
                "mask" => render_mask(&img, &map)?,
                "overlay" => render_overlay(&img, &map, palette.parse::<Palette>().map_err(|e| anyhow!(e))?)?,
                other => bail!("unknown style {other:?} (gray, mask or overlay)"),
            };
            let (png_path, cvis_path) = (with_ext(&out, "png"), with_ext(&out, "cvis"));
            png.save_png(&png_path)?;
            map.save_cvis(&cvis_path)?;
            outln!(
                "{} {} min={:.4} max={:.4}",
                png_path.display(),
                cvis_path.display(),
                map.min(),
                map.max()
            )?;
        }
        Command::PrecomputeDefs => {
            if s.cache().is_none() {
                bail!("no cache directory: set cache_dir, pass --cache-dir or set CONVIS_CACHE_DIR");
            }
            let p = Pipeline::load(&s)?;
            let path = s
                .cache()
                .expect("checked above")
                .definition_path(p.defmat.model_id(), p.defmat.hierarchy_hash());
            outln!("{} definitions ({}) -> {}", p.defmat.len(), p.defmat.model_id(), path.display())?;
        }
        Command::WsolEval {
            manifest,
            concept,
            out_report,
            delta_hat,
        } => {
            let samples = load_wsol_manifest(&manifest)?;
            let p = Pipeline::load(&s)?;
            let report = run_wsol(
                &samples,
                concept.as_deref(),
                &s.saliency,
                delta_hat,
                &default_tau_grid(),
                p.encoder.as_ref(),
                &p.defmat,
                &p.hier,
                &p.cache,
            )?;
            write_json(&out_report, &report)?;
            outln!("MaxBoxAcc {:.4} at tau {:.2}", report.max_box_acc, report.best_tau)?;
        }
        Command::OodEval {
            spec,
            out_report,
            methods,
        } => {
            let methods: Vec<OodMethod> = match methods {
                Some(m) => m
                    .iter()
                    .map(|x| x.parse().map_err(|e: String| anyhow!(e)))
                    .collect::<Result<_>>()?,
                None => OodMethod::ALL.to_vec(),
            };
            let (spec, base) = OodSpec::load(&spec)?;
            let p = Pipeline::load(&s)?;
            let report = run_ood_experiment(&spec, &base, p.encoder.as_ref(), &p.hier, &p.defmat, &methods)?;
            write_json(&out_report, &report)?;
            for (m, v) in &report.auroc {
                outln!("AUROC {m} {v:.4}")?;
            }
        }
        Command::Serve { port, bind } => {
            if let Some(port) = port {
                s.port = port;
            }
            if let Some(b) = bind {
                s.bind = b;
            }
            serve(s)?;
        }
        Command::Hierarchy(cmd) => {
            let h = load_hierarchy(&s)?;
            match cmd {
                HierarchyCommand::Search { query, limit } => {
                    for id in h.search(&query, limit) {
                        let syn = h.get(id).expect("search returns known ids");
                        outln!("{id}\t{}", syn.definition)?;
                    }
                }
                HierarchyCommand::Show { id } => {
                    let syn = h.get(&id).ok_or_else(|| anyhow!("unknown synset {id}"))?;
                    let view = serde_json::json!({
                        "id": syn.id,
                        "lemmas": syn.lemmas,
                        "definition": syn.definition,
                        "parents": h.parents_of(&id)?,
                        "children": h.children_of(&id)?,
                        "ancestors": h.ancestors(&id)?,
                    });
                    outln!("{}", serde_json::to_string_pretty(&view)?)?;
                }
            }
        }
    }
    Ok(())
}

fn serve(s: Settings) -> Result<()> {
    let pipeline = Arc::new(Pipeline::load(&s)?);
    let images = ImageStore::open(s.image_store_dir()).context("opening image store")?;
    let items = match &s.quiz_path {
        Some(p) => load_quiz(p)?,
        None => Vec::new(),
    };
    let mut state = AppState::new(pipeline, images, Quiz::new(items, None));
    state.timeout = std::time::Duration::from_secs(s.request_timeout_secs);
    state.max_upload_bytes = s.max_upload_bytes;
    let app = server::router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", s.bind, s.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            })
            .await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
