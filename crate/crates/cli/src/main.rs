// SPDX-License-Identifier: Apache-2.0

//! `son`: develop, package, deploy and observe network services.
//!
//! Exit codes are listed in `son_core::sdk::exit` and
//! `son_core::sdk::API_EXIT_CODES`; clap usage errors exit with 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use son_core::lifecycle::InstantiateOptions;
use son_core::package::{PackageMode, WorkspaceConfig, WORKSPACE_CONFIG};
use son_core::sdk::{self, exit, PlatformClient, ProfileOptions, SdkError};
use son_core::Resources;

#[derive(Parser)]
#[command(name = "son", version, about = "Service development kit for virtualized network services")]
struct Cli {
    /// Platform API endpoint; overrides the workspace config.
    #[arg(long, global = true, env = "SON_ENDPOINT")]
    endpoint: Option<String>,
    /// API token; overrides the workspace config.
    #[arg(long, global = true, env = "SON_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Workspace whose config supplies endpoint and token.
    #[arg(long, short = 'w', global = true, default_value = ".")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Slim,
    Fat,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace skeleton in an empty or absent directory.
    Init { path: PathBuf },
    /// Check descriptors and manager programs. Exits 1 on ERROR findings.
    Validate { path: Option<PathBuf> },
    /// Validate and build a package; prints its id.
    Package {
        path: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Fat)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upload a package file.
    Push { package: PathBuf },
    /// Instantiate an uploaded package and wait for the outcome.
    Deploy {
        package_id: String,
        #[arg(long)]
        slice: Option<String>,
        /// Restrict placement to these PoPs.
        #[arg(long = "pop")]
        pops: Vec<String>,
        #[arg(long)]
        no_wait: bool,
        /// Seconds to wait for RUNNING or ERROR.
        #[arg(long, default_value_t = 120)]
        timeout: u64,
    },
    Status { instance_id: String },
    Terminate { instance_id: String },
    /// Print stored samples of a metric, or stream new ones with --follow.
    Monitor {
        instance_id: String,
        metric: String,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        follow: bool,
    },
    /// Deploy the workspace on an embedded platform under a synthetic load.
    Profile {
        path: Option<PathBuf>,
        /// YAML workload: metric, base, amplitude, period_ticks, noise_seed.
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        duration: u64,
    },
    /// Operator tool for slices.
    #[command(subcommand)]
    Slice(SliceCommand),
}

#[derive(Subcommand)]
enum SliceCommand {
    List,
    Create(SliceArgs),
    Delete { slice_id: String },
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    tenant: String,
    #[arg(long, default_value = "FLAT")]
    mode: String,
    #[arg(long)]
    cores: u64,
    #[arg(long)]
    memory_mb: u64,
    #[arg(long, default_value_t = 0)]
    storage_gb: u64,
}

fn workspace_config(root: &Path) -> WorkspaceConfig {
    std::fs::read_to_string(root.join(WORKSPACE_CONFIG))
        .ok()
        .and_then(|t| serde_yaml::from_str(&t).ok())
        .unwrap_or_default()
}

fn client(cli: &Cli) -> Result<PlatformClient, SdkError> {
    let cfg = workspace_config(&cli.workspace);
    let endpoint = cli.endpoint.clone().or(cfg.endpoint).ok_or_else(|| {
        SdkError::Input(format!("no endpoint: pass --endpoint, set SON_ENDPOINT or add `endpoint` to {WORKSPACE_CONFIG}"))
    })?;
    let token = cli.token.clone().or(cfg.token).ok_or_else(|| {
        SdkError::Input(format!("no token: pass --token, set SON_TOKEN or add `token` to {WORKSPACE_CONFIG}"))
    })?;
    Ok(PlatformClient::new(endpoint, token))
}

fn emit(format: Format, value: &Value, table: impl FnOnce() -> String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("json")),
        Format::Table => print!("{}", table()),
    }
}

fn key_values(v: &Value) -> String {
    match v.as_object() {
        Some(o) => o.iter().map(|(k, v)| format!("{k:<14} {}\n", plain(v))).collect(),
        None => format!("{}\n", plain(v)),
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn run(cli: &Cli) -> Result<i32, SdkError> {
    let here = PathBuf::from(".");
    match &cli.command {
        Command::Init { path } => {
            sdk::init(path)?;
            emit(cli.format, &json!({ "workspace": path }), || format!("created workspace {}\n", path.display()));
        }
        Command::Validate { path } => {
            let ws = sdk::load_workspace(path.as_ref().unwrap_or(&here))?;
            let report = sdk::validate(&ws);
            emit(cli.format, &json!(report), || {
                if report.findings.is_empty() {
                    "no findings\n".into()
                } else {
                    report.findings.iter().map(|f| format!("{f}\n")).collect()
                }
            });
            return Ok(report.exit_code());
        }
        Command::Package { path, mode, out } => {
            let mode = match mode {
                Mode::Slim => PackageMode::Slim,
                Mode::Fat => PackageMode::Fat,
            };
            let (id, file) = sdk::package(path.as_ref().unwrap_or(&here), mode, out.as_deref())?;
            emit(cli.format, &json!({ "package_id": id, "file": file }), || format!("{id}\n{}\n", file.display()));
        }
        Command::Push { package } => {
            let r = client(cli)?.push(package)?;
            emit(cli.format, &json!(r), || {
                let mut s = format!("{}  {}{}\n", r.package_id, r.status, if r.created { "" } else { " (already present)" });
                s.extend(r.rejections.iter().map(|x| format!("rejected: {x}\n")));
                s
            });
        }
        Command::Deploy { package_id, slice, pops, no_wait, timeout } => {
            let options = InstantiateOptions {
                slice_id: slice.clone(),
                pops: (!pops.is_empty()).then(|| pops.clone()),
                ..InstantiateOptions::default()
            };
            let wait = (!no_wait).then(|| Duration::from_secs(*timeout));
            let body = client(cli)?.deploy(package_id, &options, wait)?;
            emit(cli.format, &body, || key_values(&body));
        }
        Command::Status { instance_id } => {
            let body = client(cli)?.status(instance_id)?;
            emit(cli.format, &body, || key_values(&body));
        }
        Command::Terminate { instance_id } => {
            let body = client(cli)?.terminate(instance_id)?;
            emit(cli.format, &body, || key_values(&body));
        }
        Command::Monitor { instance_id, metric, from, to, follow } => {
            let c = client(cli)?;
            let line = |s: &sdk::MetricSample| match cli.format {
                Format::Json => serde_json::to_string(s).expect("json"),
                Format::Table => format!("{:>12.3} {:<20} {:<28} {:.6}", s.timestamp, s.vnf, s.function_instance, s.value),
            };
            if *follow {
                c.follow(instance_id, metric, *from, |s| {
                    println!("{}", line(s));
                    true
                })?;
            } else {
                let samples = c.metrics(instance_id, metric, *from, *to)?;
                emit(cli.format, &json!(samples), || samples.iter().map(|s| format!("{}\n", line(s))).collect());
            }
        }
        Command::Profile { path, profile, duration } => {
            let ws = sdk::load_workspace(path.as_ref().unwrap_or(&here))?;
            let text = std::fs::read_to_string(profile)?;
            let opts = ProfileOptions::new(sdk::parse_profile(&text)?, *duration);
            let report = sdk::profile(&ws, &opts)?;
            emit(cli.format, &json!(report), || report.render_table());
            if report.timeline.is_empty() {
                eprintln!("error: the profile ran no ticks");
                return Ok(exit::PROFILE);
            }
        }
        Command::Slice(cmd) => {
            let c = client(cli)?;
            let body = match cmd {
                SliceCommand::List => c.slices()?,
                SliceCommand::Create(a) => {
                    c.create_slice(&a.tenant, &a.mode.to_uppercase(), Resources::new(a.cores, a.memory_mb, a.storage_gb))?
                }
                SliceCommand::Delete { slice_id } => c.delete_slice(slice_id)?,
            };
            emit(cli.format, &body, || match &body {
                Value::Array(items) => items.iter().map(|i| format!("{}\n", i)).collect(),
                other => key_values(other),
            });
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            if let SdkError::Validation(report) = &e {
                for f in &report.findings {
                    eprintln!("{f}");
                }
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
