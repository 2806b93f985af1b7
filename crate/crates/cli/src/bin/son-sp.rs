// SPDX-License-Identifier: Apache-2.0

//! `son-sp`: run a service platform from a YAML config and serve its API
//! over HTTP until killed.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use son_core::{Platform, PlatformConfig};

#[derive(Parser)]
#[command(name = "son-sp", version, about = "Run a service platform")]
struct Args {
    /// Platform config (YAML).
    #[arg(long)]
    config: PathBuf,
    /// Address to serve on; overrides `http_bind` in the config.
    #[arg(long)]
    bind: Option<String>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(3);
        }
    };
    let mut cfg = match PlatformConfig::from_yaml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(3);
        }
    };
    if let Some(b) = args.bind {
        cfg.http_bind = Some(b);
    }
    if cfg.http_bind.is_none() {
        cfg.http_bind = Some("127.0.0.1:5000".into());
    }
    let platform = match Platform::start(cfg) {
        Ok(p) => Arc::new(p),
        Err(e) => {
            eprintln!("error: platform did not start: {e}");
            return ExitCode::from(1);
        }
    };
    platform.start_autoscaler();
    println!("{} serving on {}", platform.id(), platform.endpoint());
    loop {
        std::thread::park();
    }
}
