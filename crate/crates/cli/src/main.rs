use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nlvis_core::config::AppConfig;
use nlvis_core::frame::save_image;
use nlvis_core::raster::{render, RenderOptions};
use nlvis_core::scene_io::{
    generate_synthetic_scene, index_bundle, load_scene_bundle, save_scene_bundle, SceneBundle, SynthSpec,
};
use nlvis_core::session::SessionEvent;
use nlvis_core::{CommandStatus, Session};

#[derive(Parser)]
#[command(name = "nlvis", version, about = "Natural-language editing of Gaussian-splat scenes")]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create, check and index scene bundles.
    Bundle {
        #[command(subcommand)]
        command: BundleCmd,
    },
    /// Render a bundle to PNG, optionally after applying commands.
    Render {
        bundle: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Newline-delimited JSON commands applied before rendering.
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Run one chat message against a bundle and print the streamed reply.
    Chat {
        bundle: PathBuf,
        message: String,
        /// Save the final frame here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP/WebSocket session server.
    Serve {
        /// Overrides server.bind from the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum BundleCmd {
    /// Load a bundle with full validation and print a summary.
    Validate { path: PathBuf },
    /// Build a bundle from a synthetic scene spec (JSON).
    Synth {
        spec: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Select top-k views per component and store embeddings.
    Index {
        path: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    Ok(match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    })
}

fn summary(b: &SceneBundle) -> String {
    let mut s = format!("scene {}\n", b.scene_id);
    for c in &b.scene.components {
        s.push_str(&format!("  {:<20} {:<24} {:>7} primitives\n", c.id.as_str(), c.label, c.primitives.len()));
    }
    let missing = b.missing_embeddings();
    s.push_str(&format!(
        "  embeddings: {}/{}\n  knowledge entries: {}\n  golden image: {}",
        b.scene.components.len() - missing.len(),
        b.scene.components.len(),
        b.knowledge.len(),
        if b.golden.is_some() { "yes" } else { "no" },
    ));
    s
}

fn validate(path: &Path) -> Result<()> {
    let b = load_scene_bundle(path).with_context(|| format!("bundle {}", path.display()))?;
    println!("{}", summary(&b));
    if let Some(golden) = &b.golden {
        let d = &b.defaults;
        let opts = RenderOptions {
            background: Some(d.background),
            light: Some(d.light),
            mode: d.render_mode,
            ..RenderOptions::default()
        };
        let frame = render(&b.scene, &d.edits, &d.camera, &opts)?.image;
        if frame.to_rgba8() != golden.to_rgba8() {
            bail!("golden image does not match a fresh render of the bundle defaults");
        }
        println!("  golden image matches a fresh render");
    }
    Ok(())
}

fn synth(spec: &Path, out: &Path, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let bundle = generate_synthetic_scene(&spec, seed)?;
    save_scene_bundle(&bundle, out)?;
    println!("{}", summary(&bundle));
    println!("wrote {}", out.display());
    Ok(())
}

fn index(config: &AppConfig, path: &Path, k: Option<usize>) -> Result<()> {
    let mut bundle = load_scene_bundle(path)?;
    let mut cfg = config.session_config().index;
    if let Some(k) = k {
        if k == 0 || k > cfg.view_count {
            bail!("--k must be between 1 and {}", cfg.view_count);
        }
        cfg.k = k;
    }
    let embedder = config.build_embedder(&bundle.scene);
    let failures = index_bundle(&mut bundle, &cfg, embedder.as_ref(), &config.embedding_name())?;
    save_scene_bundle(&bundle, path)?;
    for (id, e) in &failures {
        eprintln!("warning: component {id} not indexed: {e}");
    }
    println!(
        "indexed {} of {} components with k = {}",
        bundle.scene.components.len() - failures.len(),
        bundle.scene.components.len(),
        cfg.k
    );
    Ok(())
}

fn open_session(config: &AppConfig, bundle: &Path, resolution: Option<u32>) -> Result<Session> {
    let b = load_scene_bundle(bundle).with_context(|| format!("bundle {}", bundle.display()))?;
    let services = config.build_services(&b.scene)?;
    let mut sc = config.session_config();
    if resolution.is_some() {
        sc.resolution = resolution;
    }
    Ok(Session::new("cli", Arc::new(b), services, sc))
}

fn render_cmd(config: &AppConfig, bundle: &Path, out: &Path, commands: Option<&Path>, res: Option<u32>) -> Result<()> {
    let mut s = open_session(config, bundle, res)?;
    if let Some(path) = commands {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = s.execute_payload(&line, None);
            if r.status != CommandStatus::Ok {
                bail!("{}:{}: {:?}: {}", path.display(), i + 1, r.status, r.detail);
            }
        }
    }
    let frame = s.current_frame()?.opaque();
    save_image(&frame, out)?;
    println!("wrote {} ({}x{})", out.display(), frame.width, frame.height);
    Ok(())
}

fn chat(config: &AppConfig, bundle: &Path, message: &str, out: Option<&Path>) -> Result<()> {
    let mut s = open_session(config, bundle, None)?;
    let provider = config.build_chat_provider()?;
    let stdout = std::io::stdout();
    let result = s.handle_chat(message, provider.as_ref(), &mut |e| {
        let mut o = stdout.lock();
        let _ = match e {
            SessionEvent::Token(t) => write!(o, "{t}"),
            SessionEvent::Status(m) => writeln!(o, "[{m}]"),
            SessionEvent::Log(entry) => writeln!(o, "\n  #{} {:?} {}", entry.seq, entry.kind, entry.payload),
            SessionEvent::Error(m) => writeln!(o, "\n  error: {m}"),
            SessionEvent::Frame(f) => writeln!(o, "\n  frame {} ({}x{})", f.seq, f.width, f.height),
        };
        let _ = o.flush();
    });
    println!(
        "iterations: {}, goal met: {}, ttft {:.2} ms, total {:.2} ms",
        result.outcome.iterations, result.outcome.goal_met, result.latency.ttft_ms, result.latency.total_ms
    );
    if let Some(out) = out {
        save_image(&s.current_frame()?.opaque(), out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

async fn serve(config: AppConfig, bind: Option<String>) -> Result<()> {
    let bind = bind.unwrap_or_else(|| config.server.bind.clone());
    let state = nlvis_gateway::AppState::from_config(config)?;
    let scenes = state.scene_ids();
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    eprintln!("serving {} scene(s) [{}] on http://{}", scenes.len(), scenes.join(", "), listener.local_addr()?);
    nlvis_gateway::serve(Arc::new(state), listener).await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Cmd::Bundle { command } => match command {
            BundleCmd::Validate { path } => validate(&path),
            BundleCmd::Synth { spec, out, seed } => synth(&spec, &out, seed),
            BundleCmd::Index { path, k } => index(&config, &path, k),
        },
        Cmd::Render {
            bundle,
            out,
            commands,
            resolution,
        } => render_cmd(&config, &bundle, &out, commands.as_deref(), resolution),
        Cmd::Chat { bundle, message, out } => chat(&config, &bundle, &message, out.as_deref()),
        Cmd::Serve { bind } => tokio::runtime::Runtime::new()?.block_on(serve(config, bind)),
    }
}

/// Error chain joined with ": ", skipping causes whose text the previous
/// message already includes.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn repeated_causes_are_printed_once() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(io).context("reading x: gone").context("bundle b");
        assert_eq!(render_error(&e), "bundle b: reading x: gone");
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
