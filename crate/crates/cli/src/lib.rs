//! Shared plumbing for the `aios-*` binaries.

use std::io::IsTerminal;
use std::path::Path;

use tracing_subscriber::EnvFilter;

/// Logs to stderr; `RUST_LOG` overrides `default`.
pub fn init_tracing(default: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .try_init();
}

/// Writes `text` to `path`, or does nothing without one.
pub fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
    }
    Ok(())
}

/// Resolves when either ctrl-c arrives or `other` completes.
pub async fn until_signal<F: std::future::Future>(other: F) {
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = other => {}
    }
}
