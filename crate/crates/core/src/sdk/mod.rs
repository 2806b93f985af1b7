// SPDX-License-Identifier: Apache-2.0

//! Developer toolchain: workspace scaffolding, validation, packaging,
//! thin clients over the platform API, and local profiling.
//!
//! Every operation is non-interactive. Failures carry a stable process
//! exit code, see [`exit`].

mod client;
mod profile;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptors::{parse_descriptor, validate_service, Descriptor, ManagerRef, Severity};
use crate::executive::onboard_source;
use crate::gatekeeper::TransportError;
use crate::package::{build_package, package_id, PackageError, PackageMode, WorkspaceSnapshot, PACKAGE_EXTENSION, WORKSPACE_CONFIG};
use crate::ssm::Pos;

pub use client::{MetricSample, PlatformClient, PushOutcome};
pub use profile::{parse_profile, profile, MetricSummary, ProfileOptions, ProfilingReport, RuleFiring, TimelinePoint};

/// Process exit codes. Gatekeeper error codes map one to one onto the
/// 10..=59 range via [`api_exit_code`].
pub mod exit {
    pub const OK: i32 = 0;
    /// Validation produced ERROR findings.
    pub const FINDINGS: i32 = 1;
    /// Malformed command line.
    pub const USAGE: i32 = 2;
    /// Workspace, config, file or profile input problem.
    pub const INPUT: i32 = 3;
    /// The platform endpoint could not be reached.
    pub const UNREACHABLE: i32 = 4;
    /// The instance ended in ERROR.
    pub const INSTANCE_ERROR: i32 = 5;
    /// Profiling ran no ticks or the embedded platform failed.
    pub const PROFILE: i32 = 6;
    /// A gatekeeper error code this build does not know.
    pub const UNKNOWN_API_ERROR: i32 = 59;
}

/// Gatekeeper error codes and their exit codes.
pub const API_EXIT_CODES: [(&str, i32); 24] = [
    ("BAD_REQUEST", 10),
    ("AUTH_FAILED", 11),
    ("FORBIDDEN", 12),
    ("UNKNOWN_PACKAGE", 13),
    ("UNKNOWN_INSTANCE", 14),
    ("UNKNOWN_SERVICE", 15),
    ("UNKNOWN_SLICE", 16),
    ("UNKNOWN_CHILD", 17),
    ("UNKNOWN_ROUTE", 18),
    ("CONFLICT", 20),
    ("CYCLE", 21),
    ("QUOTA_EXCEEDS_CAPACITY", 22),
    ("SLICE_NOT_EMPTY", 23),
    ("QUOTA_EXCEEDED", 24),
    ("SCALE_FAILED", 25),
    ("NOT_RUNNING", 26),
    ("VALIDATION_FAILED", 30),
    ("INVALID_PACKAGE", 31),
    ("CHILD_UNREACHABLE", 40),
    ("REMOTE_ERROR", 41),
    ("TIMEOUT", 42),
    ("INTERNAL", 50),
    ("SPAWN_FAILED", 51),
    ("LIFECYCLE_ERROR", 52),
];

pub fn api_exit_code(code: &str) -> i32 {
    API_EXIT_CODES.iter().find(|(c, _)| *c == code).map_or(exit::UNKNOWN_API_ERROR, |(_, n)| *n)
}

#[derive(Debug, thiserror::Error)]
pub enum SdkError {
    #[error("`{}` exists and is not empty", .0.display())]
    NotEmpty(PathBuf),
    #[error("validation failed with {} error(s)", .0.errors().count())]
    Validation(WorkspaceReport),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Package(#[from] PackageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{code} ({status}): {message}")]
    Api { status: u16, code: String, message: String },
    #[error("instance `{instance}` is in ERROR: {cause}")]
    InstanceFailed { instance: String, cause: String },
    #[error("profiling failed: {0}")]
    Profile(String),
}

impl SdkError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SdkError::Validation(_) => exit::FINDINGS,
            SdkError::NotEmpty(_) | SdkError::Input(_) | SdkError::Io(_) => exit::INPUT,
            SdkError::Package(PackageError::ValidationFailed(_)) => exit::FINDINGS,
            SdkError::Package(_) => exit::INPUT,
            SdkError::Transport(_) => exit::UNREACHABLE,
            SdkError::Api { code, .. } => api_exit_code(code),
            SdkError::InstanceFailed { .. } => exit::INSTANCE_ERROR,
            SdkError::Profile(_) => exit::PROFILE,
        }
    }
}

/// A validation finding tied to a workspace file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceFinding {
    pub severity: Severity,
    /// Workspace-relative path of the file the finding is about.
    pub file: String,
    /// Position inside a manager program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Pos>,
    pub subject: String,
    pub message: String,
}

impl std::fmt::Display for WorkspaceFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        match self.position {
            Some(p) => write!(f, "{}:{p}: {sev} {}: {}", self.file, self.subject, self.message),
            None => write!(f, "{}: {sev} {}: {}", self.file, self.subject, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub findings: Vec<WorkspaceFinding>,
}

impl WorkspaceReport {
    pub fn errors(&self) -> impl Iterator<Item = &WorkspaceFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn exit_code(&self) -> i32 {
        if self.has_errors() {
            exit::FINDINGS
        } else {
            exit::OK
        }
    }

    fn error(&mut self, file: &str, position: Option<Pos>, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(WorkspaceFinding {
            severity: Severity::Error,
            file: file.to_string(),
            position,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

const SKELETON_CONFIG: &str = "\
# Platform the push, deploy and monitor commands talk to.
# endpoint: http://127.0.0.1:5000
# token: <developer token>
artifact_base_uri: artifact://local
";

const SKELETON_SERVICE: &str = "\
descriptor_kind: service
vendor: org.example
name: example-service
version: 0.1.0
functions:
  - { id: firewall, vendor: org.example, name: firewall, version: 0.1.0 }
connection_points: [ingress, egress]
forwarding_graph: [\"firewall:in\", \"firewall:out\"]
monitoring:
  - { metric: cpu_load, unit: ratio, interval_s: 5 }
managers:
  - { kind: ssm, executive: scaling, program: ssm/scaling.ssm }
";

const SKELETON_FUNCTION: &str = "\
descriptor_kind: function
vendor: org.example
name: firewall
version: 0.1.0
deployment_units:
  - image_ref: images/firewall.img
    resources: { cpu_cores: 1, memory_mb: 512 }
connection_points: [in, out]
monitoring:
  - { metric: cpu_load, unit: ratio, interval_s: 5 }
";

const SKELETON_SSM: &str = "\
# Scale out early under sustained load, scale in when idle.
when avg(cpu_load, 60) > 0.7 then replicas + 1
when avg(cpu_load, 60) < 0.2 then replicas - 1
";

const SKELETON_IMAGE: &str = "placeholder image for firewall\n";

/// Files written by [`init`], relative to the workspace root.
pub const SKELETON_FILES: [(&str, &str); 5] = [
    (WORKSPACE_CONFIG, SKELETON_CONFIG),
    ("descriptors/service.yml", SKELETON_SERVICE),
    ("descriptors/firewall.yml", SKELETON_FUNCTION),
    ("ssm/scaling.ssm", SKELETON_SSM),
    ("images/firewall.img", SKELETON_IMAGE),
];

/// Create a workspace skeleton at `path`, which must be absent or empty.
/// Nothing is written when it is not.
pub fn init(path: &Path) -> Result<(), SdkError> {
    if path.exists() {
        if !path.is_dir() || fs::read_dir(path)?.next().is_some() {
            return Err(SdkError::NotEmpty(path.to_path_buf()));
        }
    }
    for (rel, text) in SKELETON_FILES {
        let target = path.join(rel);
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(target, text)?;
    }
    Ok(())
}

pub fn load_workspace(root: &Path) -> Result<WorkspaceSnapshot, SdkError> {
    if !root.is_dir() {
        return Err(SdkError::Input(format!("workspace `{}` does not exist", root.display())));
    }
    Ok(WorkspaceSnapshot::from_dir(root)?)
}

/// Check every descriptor, every service against the workspace functions,
/// every referenced image and every manager program. A clean report is
/// what [`package`] requires.
pub fn validate(ws: &WorkspaceSnapshot) -> WorkspaceReport {
    let mut report = WorkspaceReport::default();
    let mut services = Vec::new();
    let mut functions = Vec::new();
    for (path, bytes) in ws.files.iter().filter(|(p, _)| p.starts_with("descriptors/")) {
        if !(path.ends_with(".yml") || path.ends_with(".yaml")) {
            continue;
        }
        let Ok(text) = std::str::from_utf8(bytes) else {
            report.error(path, None, "descriptor", "file is not UTF-8");
            continue;
        };
        match parse_descriptor(text) {
            Ok(Descriptor::Service(s)) => services.push((path.clone(), s)),
            Ok(Descriptor::Function(f)) => functions.push((path.clone(), f)),
            Err(e) => report.error(path, None, "descriptor", e.to_string()),
        }
    }
    if services.is_empty() {
        report.error("descriptors/", None, "service", "no service descriptor found");
    }
    let vnfds: Vec<_> = functions.iter().map(|(_, f)| f.clone()).collect();
    for (path, s) in &services {
        for f in validate_service(s, &vnfds).findings {
            report.findings.push(WorkspaceFinding {
                severity: f.severity,
                file: path.clone(),
                position: None,
                subject: f.subject,
                message: f.message,
            });
        }
        for m in &s.ssm_refs {
            check_manager(ws, path, m, &mut report);
        }
    }
    for (path, f) in &functions {
        for du in &f.deployment_units {
            if !du.image_ref.contains("://") && !ws.files.contains_key(&du.image_ref) {
                report.error(path, None, du.image_ref.as_str(), "image is not in the workspace");
            }
        }
        for m in &f.fsm_refs {
            check_manager(ws, path, m, &mut report);
        }
    }
    report
}

fn check_manager(ws: &WorkspaceSnapshot, referrer: &str, m: &ManagerRef, report: &mut WorkspaceReport) {
    let subject = format!("{:?} {} manager", m.kind, m.executive).to_lowercase();
    let Some(bytes) = ws.files.get(&m.program_artifact) else {
        report.error(referrer, None, subject, format!("program `{}` is not in the workspace", m.program_artifact));
        return;
    };
    let Ok(source) = std::str::from_utf8(bytes) else {
        report.error(&m.program_artifact, None, subject, "program is not UTF-8");
        return;
    };
    if let Err(e) = onboard_source(source, m.executive) {
        let at = e.error().position();
        report.error(&m.program_artifact, Some(at), subject, e.to_string());
    }
}

/// Where [`package`] writes by default: a hidden directory inside the
/// workspace, which later snapshots skip.
pub fn default_package_path(root: &Path, ws: &WorkspaceSnapshot) -> PathBuf {
    let name = crate::package::workspace_descriptors(ws)
        .ok()
        .and_then(|d| d.services.first().map(|(_, s)| format!("{}-{}", s.identity.name, s.identity.version)))
        .unwrap_or_else(|| "service".into());
    root.join(".son").join(format!("{name}.{PACKAGE_EXTENSION}"))
}

/// Validate, build and write a package. Returns its id and location.
pub fn package(root: &Path, mode: PackageMode, out: Option<&Path>) -> Result<(String, PathBuf), SdkError> {
    let ws = load_workspace(root)?;
    let report = validate(&ws);
    if report.has_errors() {
        return Err(SdkError::Validation(report));
    }
    let bytes = build_package(&ws, mode)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| default_package_path(root, &ws));
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&target, &bytes)?;
    Ok((package_id(&bytes), target))
}
