use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use portrait_core::applications::{scan_styles, StyleSpec, TalkingHeadOptions};
use portrait_core::generation::GenerationRequest;
use portrait_core::inpaint::InpaintOptions;
use portrait_core::picture::{load_mask, Picture};
use portrait_core::Error;
use portrait_service::app::{PORT_ENV, WORKSPACE_ENV};
use portrait_service::engine::{AudioJob, FaceJob, InpaintJob, JobResult, TalkJob, TrainJob, TryOnJob};
use portrait_service::jobs::JobState;
use portrait_service::queue::{run_inline, DEFAULT_WORKERS};
use portrait_service::workspace::{read_json, read_picture_dir, Workspace};
use portrait_service::{api, build_registry, App, Engine, JobRequest, ServiceError, ServiceResult};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "portrait", version, about = "Train identities and generate portraits from them")]
struct Cli {
    /// Workspace root (identities, styles, jobs, assets).
    #[arg(long, global = true, env = WORKSPACE_ENV, default_value = "workspace")]
    workspace: PathBuf,
    /// JSON list of backend descriptors to register next to the stubs.
    #[arg(long, global = true, env = portrait_service::app::MANIFEST_ENV)]
    backend_manifest: Option<PathBuf>,
    /// Seed for generation, inpainting and try-on.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Seed of the toy base model the adapters are merged into.
    #[arg(long, global = true, default_value_t = 0)]
    base_seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an identity from photos (files or directories, with sidecars).
    Train {
        #[arg(long)]
        id: String,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generate ranked portraits of a trained identity in a style.
    Generate(GenerateArgs),
    /// Replace faces of a template photo with trained identities.
    Inpaint {
        #[arg(long)]
        template: PathBuf,
        /// `INDEX=IDENTITY`, repeatable.
        #[arg(long = "face", required = true, value_parser = parse_face)]
        faces: Vec<FaceJob>,
        #[arg(long)]
        style: Option<String>,
        #[arg(long)]
        strength: Option<f64>,
        /// Skip adding back the autoencoder reconstruction error.
        #[arg(long)]
        no_compensate: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep a garment and regenerate the rest of the picture.
    Tryon {
        #[arg(long)]
        template: PathBuf,
        /// Mask image marking the garment.
        #[arg(long)]
        garment: PathBuf,
        #[arg(long)]
        identity: String,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Animate a portrait from text or a WAV file.
    Talk {
        #[arg(long)]
        portrait: PathBuf,
        #[arg(long, conflicts_with = "audio", required_unless_present = "audio")]
        text: Option<String>,
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long, default_value = "narrator")]
        voice: String,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
        #[arg(long, default_value_t = 0)]
        pose: u8,
        #[arg(long)]
        upscale: bool,
        /// Directory for the audio track and the clip manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List or register styles.
    Styles {
        #[command(subcommand)]
        action: StylesAction,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = PORT_ENV, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_WORKERS)]
        workers: usize,
    },
    /// Write the synthetic sample corpus into a directory.
    Fixtures { dir: PathBuf },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    identity: String,
    #[arg(long)]
    style: String,
    #[arg(long, default_value_t = 1)]
    count: u32,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value = "")]
    prompt_extra: String,
    #[arg(long)]
    face_weight: Option<f64>,
    #[arg(long)]
    style_weight: Option<f64>,
    /// Directory to copy the ranked images into.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StylesAction {
    /// Styles in the workspace registry, or only those in `--dir`.
    List {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Register a style descriptor file.
    Add { file: PathBuf },
}

fn parse_face(s: &str) -> Result<FaceJob, String> {
    let (i, id) = s.split_once('=').ok_or("expected INDEX=IDENTITY")?;
    Ok(FaceJob { face_index: i.trim().parse().map_err(|_| format!("bad face index `{i}`"))?, identity: id.trim().to_string() })
}

fn engine(cli: &Cli) -> ServiceResult<Engine> {
    let registry = build_registry(cli.backend_manifest.as_deref())?;
    Engine::new(Workspace::open(&cli.workspace)?, registry, cli.base_seed)
}

/// Validate and run a job on this thread; a failed job becomes an error.
fn run(engine: &Engine, request: JobRequest) -> ServiceResult<JobResult> {
    engine.validate(&request)?;
    let store = engine.workspace.jobs();
    let record = run_inline(&store, engine, request.kind(), request.to_value())?;
    if record.state != JobState::Succeeded {
        let cause = record.error.clone();
        return Err(ServiceError::NotReady { id: record.id, state: record.state.as_str().into(), cause });
    }
    read_json(&store.result_path(&record.id))
}

fn load_pictures(inputs: &[PathBuf]) -> ServiceResult<Vec<Picture>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(read_picture_dir(p)?);
        } else {
            out.push(Picture::load(p)?);
        }
    }
    Ok(out)
}

fn export(engine: &Engine, asset: &str, to: &Path) -> ServiceResult<()> {
    let meta = engine.workspace.asset(asset)?;
    if let Some(dir) = to.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::copy(engine.workspace.asset_path(&meta), to)?;
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> ServiceResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> ServiceResult<()> {
    match &cli.command {
        Command::Fixtures { dir } => {
            portrait_core::fixtures::write_corpus(dir)?;
            println!("wrote sample corpus to {}", dir.display());
        }
        Command::Train { id, inputs } => {
            let engine = engine(&cli)?;
            let pictures = load_pictures(inputs)?;
            if pictures.is_empty() {
                return Err(Error::EmptyTrainingSet { skipped: 0 }.into());
            }
            let uploads = pictures.iter().map(|p| engine.workspace.put_image(p).map(|m| m.id)).collect::<ServiceResult<_>>()?;
            let result = run(&engine, JobRequest::Train(TrainJob { identity: id.clone(), uploads }))?;
            let m = &result.manifest;
            println!(
                "identity {id}: {} face(s), {} skipped, trigger `{}`, loss {:.6} -> {:.6}",
                m["faces"].as_array().map_or(0, Vec::len),
                m["skipped"].as_array().map_or(0, Vec::len),
                m["profile"]["trigger"].as_str().unwrap_or_default(),
                m["initial_loss"].as_f64().unwrap_or(f64::NAN),
                m["final_loss"].as_f64().unwrap_or(f64::NAN),
            );
        }
        Command::Generate(g) => {
            let engine = engine(&cli)?;
            let mut request = GenerationRequest::new(&g.identity, &g.style);
            request.count = g.count;
            request.seed = cli.seed;
            request.top_k = g.top_k;
            request.prompt_extra = g.prompt_extra.clone();
            request.face_weight = g.face_weight.unwrap_or(request.face_weight);
            request.style_weight = g.style_weight.unwrap_or(request.style_weight);
            let result = run(&engine, JobRequest::Generate(request))?;
            let results = result.manifest["results"].as_array().cloned().unwrap_or_default();
            println!("rank\tseed\tsimilarity\timage\tasset");
            for (r, asset) in results.iter().zip(&result.assets) {
                println!(
                    "{}\t{}\t{:.6}\t{}\t{}",
                    r["rank"],
                    r["seed"],
                    r["similarity"].as_f64().unwrap_or(f64::NAN),
                    r["image_id"].as_str().unwrap_or_default(),
                    asset
                );
            }
            println!("weights {}", result.manifest["weights_digest"].as_str().unwrap_or_default());
            if let Some(dir) = &g.out {
                for (rank, asset) in result.assets.iter().enumerate() {
                    export(&engine, asset, &dir.join(format!("{rank:02}-{asset}.png")))?;
                }
            }
        }
        Command::Inpaint { template, faces, style, strength, no_compensate, out } => {
            let engine = engine(&cli)?;
            let template = engine.workspace.put_image(&Picture::load(template)?)?.id;
            let mut options = InpaintOptions { compensate: !no_compensate, ..Default::default() };
            options.strength = strength.unwrap_or(options.strength);
            let job = InpaintJob {
                template,
                faces: faces.clone(),
                style: style.clone(),
                prompt_extra: String::new(),
                seed: cli.seed,
                face_weight: portrait_core::lora::FACE_LORA_WEIGHT,
                style_weight: portrait_core::lora::STYLE_LORA_WEIGHT,
                options,
            };
            let result = run(&engine, JobRequest::Inpaint(job))?;
            println!("{}", result.assets[0]);
            if let Some(out) = out {
                export(&engine, &result.assets[0], out)?;
            }
        }
        Command::Tryon { template, garment, identity, prompt, refine, out } => {
            let engine = engine(&cli)?;
            let ws = &engine.workspace;
            let template = ws.put_image(&Picture::load(template)?)?.id;
            let garment_name = garment.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let garment = ws.put_mask(&garment_name, &load_mask(garment)?)?.id;
            let job = TryOnJob {
                template,
                garment,
                identity: identity.clone(),
                style: None,
                prompt: prompt.clone(),
                seed: cli.seed,
                refine: *refine,
                face_weight: portrait_core::lora::FACE_LORA_WEIGHT,
                style_weight: portrait_core::lora::STYLE_LORA_WEIGHT,
            };
            let result = run(&engine, JobRequest::Tryon(job))?;
            println!("{}", result.assets[0]);
            if let Some(out) = out {
                export(&engine, &result.assets[0], out)?;
            }
        }
        Command::Talk { portrait, text, audio, voice, resolution, pose, upscale, out } => {
            let engine = engine(&cli)?;
            let ws = &engine.workspace;
            let portrait = ws.put_image(&Picture::load(portrait)?)?.id;
            let audio = match (text, audio) {
                (Some(text), _) => AudioJob::Tts { text: text.clone(), voice: voice.clone() },
                (None, Some(path)) => {
                    let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                    AudioJob::Asset(ws.put_audio(&name, &std::fs::read(path)?)?.id)
                }
                (None, None) => unreachable!("clap requires one of --text or --audio"),
            };
            let options = TalkingHeadOptions { resolution: *resolution, pose_index: *pose, upscale: *upscale, ..Default::default() };
            let result = run(&engine, JobRequest::Talkinghead(TalkJob { portrait, audio, options }))?;
            print_json(&result.manifest)?;
            if let Some(dir) = out {
                export(&engine, &result.assets[0], &dir.join("audio.wav"))?;
                portrait_service::workspace::write_json(&dir.join("manifest.json"), &result.manifest)?;
            }
        }
        Command::Styles { action: StylesAction::List { dir } } => {
            let styles: Vec<StyleSpec> = match dir {
                // skipped files are reported by the scan's warnings
                Some(dir) => scan_styles(dir)?.styles,
                None => engine(&cli)?.styles().list().cloned().collect(),
            };
            for s in styles {
                println!("{}\t{}\t{:?}\t{}", s.id, s.name, s.source, s.adapter_ref);
            }
        }
        Command::Styles { action: StylesAction::Add { file } } => {
            let spec: StyleSpec = read_json(file)?;
            let id = spec.id.clone();
            engine(&cli)?.add_style(spec)?;
            println!("added style {id}");
        }
        Command::Serve { port, workers } => {
            let engine = engine(&cli)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let (app, _workers) = App::start(engine, *workers)?;
                let addr = SocketAddr::from(([0, 0, 0, 0], *port));
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, workers, "listening");
                axum::serve(listener, api::router(app))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok::<_, ServiceError>(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cause = match &e {
                ServiceError::NotReady { cause: Some(c), .. } => c.clone(),
                e => e.cause(),
            };
            eprintln!("error[{}]: {}", cause.code, cause.message);
            ExitCode::FAILURE
        }
    }
}
