// SPDX-License-Identifier: Apache-2.0

//! Deterministic `.sonpkg` archives.
//!
//! An archive is USTAR with `manifest.yml` as its first entry and all other
//! embedded files after it in lexicographic path order. Headers carry mode
//! 0644, uid/gid 0 and mtime 0, so the bytes are a pure function of the
//! manifest and the embedded contents. Verification rebuilds the archive
//! from what it read and requires byte equality with the input.

mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptors::{
    parse_descriptor, validate_service, Descriptor, FunctionDescriptor, ServiceDescriptor,
    ValidationReport,
};

pub use workspace::{WorkspaceConfig, WorkspaceSnapshot, DEFAULT_ARTIFACT_BASE, WORKSPACE_CONFIG};

pub const MANIFEST_PATH: &str = "manifest.yml";
pub const FORMAT_VERSION: u32 = 1;
pub const PACKAGE_EXTENSION: &str = "sonpkg";

#[derive(Debug, thiserror::Error)]
pub enum PackageError {
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error("validation failed with {} error(s)", .0.errors().count())]
    ValidationFailed(ValidationReport),
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("digest mismatch for `{0}`")]
    DigestMismatch(String),
    #[error("entry `{0}` escapes the destination")]
    PathEscape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PackageMode {
    Slim,
    Fat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryKind {
    Descriptor,
    SsmProgram,
    Image,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: EntryKind,
    /// SHA-256 of the file, hex encoded.
    pub digest: String,
    pub size: u64,
    /// Set exactly when the bytes are not embedded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_ref: Option<String>,
}

impl ManifestEntry {
    pub fn is_embedded(&self) -> bool {
        self.external_ref.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageManifest {
    pub format_version: u32,
    pub mode: PackageMode,
    pub entries: Vec<ManifestEntry>,
}

impl PackageManifest {
    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    fn check(&self) -> Result<(), PackageError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PackageError::CorruptArchive(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            check_relative(&e.path)?;
            if e.path == MANIFEST_PATH || !seen.insert(e.path.as_str()) {
                return Err(PackageError::CorruptArchive(format!("duplicate entry `{}`", e.path)));
            }
            let must_embed = self.mode == PackageMode::Fat || !externalized(e.kind);
            if must_embed != e.is_embedded() {
                return Err(PackageError::CorruptArchive(format!(
                    "entry `{}` has the wrong embedding for a {:?} package",
                    e.path, self.mode
                )));
            }
        }
        Ok(())
    }
}

/// A verified package: manifest plus the bytes of every embedded entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Package {
    pub manifest: PackageManifest,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Package {
    pub fn descriptors(&self) -> Result<Vec<(String, Descriptor)>, PackageError> {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Descriptor)
            .map(|e| {
                let text = std::str::from_utf8(&self.files[&e.path])
                    .map_err(|_| PackageError::CorruptArchive(format!("`{}` is not UTF-8", e.path)))?;
                let d = parse_descriptor(text)
                    .map_err(|err| PackageError::InvalidWorkspace(format!("{}: {err}", e.path)))?;
                Ok((e.path.clone(), d))
            })
            .collect()
    }
}

fn externalized(kind: EntryKind) -> bool {
    matches!(kind, EntryKind::Image | EntryKind::Other)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The identifier of a package is the digest of its archive bytes.
pub fn package_id(archive: &[u8]) -> String {
    sha256_hex(archive)
}

fn check_relative(path: &str) -> Result<(), PackageError> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && !path.contains('\\')
        && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(PackageError::PathEscape(path.to_string()))
    }
}

fn is_descriptor_path(path: &str) -> bool {
    path.starts_with("descriptors/") && (path.ends_with(".yml") || path.ends_with(".yaml"))
}

/// Parsed descriptors of a workspace, split by kind, keyed by path.
#[derive(Clone, Debug, Default)]
pub struct WorkspaceDescriptors {
    pub services: Vec<(String, ServiceDescriptor)>,
    pub functions: Vec<(String, FunctionDescriptor)>,
}

impl WorkspaceDescriptors {
    pub fn function_descriptors(&self) -> Vec<FunctionDescriptor> {
        self.functions.iter().map(|(_, f)| f.clone()).collect()
    }
}

pub fn workspace_descriptors(ws: &WorkspaceSnapshot) -> Result<WorkspaceDescriptors, PackageError> {
    let mut out = WorkspaceDescriptors::default();
    for (path, bytes) in ws.files.iter().filter(|(p, _)| is_descriptor_path(p)) {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| PackageError::InvalidWorkspace(format!("{path}: not UTF-8")))?;
        match parse_descriptor(text).map_err(|e| PackageError::InvalidWorkspace(format!("{path}: {e}")))? {
            Descriptor::Service(s) => out.services.push((path.clone(), s)),
            Descriptor::Function(f) => out.functions.push((path.clone(), f)),
        }
    }
    Ok(out)
}

fn is_external_uri(s: &str) -> bool {
    s.contains("://")
}

/// Pack a workspace into a deterministic archive.
pub fn build_package(ws: &WorkspaceSnapshot, mode: PackageMode) -> Result<Vec<u8>, PackageError> {
    let descs = workspace_descriptors(ws)?;
    if descs.services.is_empty() {
        return Err(PackageError::InvalidWorkspace("no service descriptor in descriptors/".into()));
    }
    let vnfds = descs.function_descriptors();
    let mut report = ValidationReport::default();
    for (_, s) in &descs.services {
        report.findings.extend(validate_service(s, &vnfds).findings);
        for m in &s.ssm_refs {
            if !ws.files.contains_key(&m.program_artifact) {
                return Err(PackageError::InvalidWorkspace(format!(
                    "SSM program `{}` is not in the workspace",
                    m.program_artifact
                )));
            }
        }
    }
    if report.has_errors() {
        return Err(PackageError::ValidationFailed(report));
    }

    let mut images = BTreeSet::new();
    for (path, f) in &descs.functions {
        for du in &f.deployment_units {
            if is_external_uri(&du.image_ref) {
                continue;
            }
            if !ws.files.contains_key(&du.image_ref) {
                return Err(PackageError::InvalidWorkspace(format!(
                    "{path}: image `{}` is not in the workspace",
                    du.image_ref
                )));
            }
            images.insert(du.image_ref.as_str());
        }
        for m in &f.fsm_refs {
            if !ws.files.contains_key(&m.program_artifact) {
                return Err(PackageError::InvalidWorkspace(format!(
                    "{path}: FSM program `{}` is not in the workspace",
                    m.program_artifact
                )));
            }
        }
    }

    let base = ws.config.artifact_base();
    let mut entries = Vec::new();
    let mut embedded = BTreeMap::new();
    for (path, bytes) in &ws.files {
        check_relative(path)?;
        if path == MANIFEST_PATH {
            return Err(PackageError::InvalidWorkspace(format!("`{MANIFEST_PATH}` is reserved")));
        }
        let kind = if is_descriptor_path(path) {
            EntryKind::Descriptor
        } else if path.starts_with("ssm/") {
            EntryKind::SsmProgram
        } else if images.contains(path.as_str()) {
            EntryKind::Image
        } else {
            EntryKind::Other
        };
        let embed = mode == PackageMode::Fat || !externalized(kind);
        entries.push(ManifestEntry {
            path: path.clone(),
            kind,
            digest: sha256_hex(bytes),
            size: bytes.len() as u64,
            external_ref: (!embed).then(|| format!("{base}/{path}")),
        });
        if embed {
            embedded.insert(path.clone(), bytes.as_slice());
        }
    }
    let manifest = PackageManifest { format_version: FORMAT_VERSION, mode, entries };
    Ok(write_archive(&manifest, &embedded))
}

fn header(size: u64) -> tar::Header {
    let mut h = tar::Header::new_ustar();
    h.set_mode(0o644);
    h.set_uid(0);
    h.set_gid(0);
    h.set_mtime(0);
    h.set_entry_type(tar::EntryType::Regular);
    h.set_size(size);
    h
}

fn write_archive(manifest: &PackageManifest, embedded: &BTreeMap<String, &[u8]>) -> Vec<u8> {
    let manifest_text = serde_yaml::to_string(manifest).expect("manifest serializes");
    let mut b = tar::Builder::new(Vec::new());
    b.mode(tar::HeaderMode::Deterministic);
    let mut append = |path: &str, data: &[u8]| {
        let mut h = header(data.len() as u64);
        b.append_data(&mut h, path, data).expect("in-memory tar write");
    };
    append(MANIFEST_PATH, manifest_text.as_bytes());
    for (path, data) in embedded {
        append(path, data);
    }
    b.into_inner().expect("in-memory tar write")
}

fn corrupt(e: impl std::fmt::Display) -> PackageError {
    PackageError::CorruptArchive(e.to_string())
}

/// Read, verify, and return a package with its embedded bytes.
pub fn open_package(bytes: &[u8]) -> Result<Package, PackageError> {
    let mut archive = tar::Archive::new(Cursor::new(bytes));
    let mut raw: Vec<(String, Vec<u8>)> = Vec::new();
    for entry in archive.entries().map_err(corrupt)? {
        let mut entry = entry.map_err(corrupt)?;
        if entry.header().entry_type() != tar::EntryType::Regular {
            return Err(corrupt("non-regular entry"));
        }
        let path = entry.path().map_err(corrupt)?;
        let path = path.to_str().ok_or_else(|| corrupt("non UTF-8 entry path"))?.to_string();
        check_relative(&path)?;
        let mut data = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut data).map_err(corrupt)?;
        raw.push((path, data));
    }
    let mut it = raw.into_iter();
    let (first, manifest_bytes) = it.next().ok_or_else(|| corrupt("empty archive"))?;
    if first != MANIFEST_PATH {
        return Err(corrupt(format!("first entry is `{first}`, expected `{MANIFEST_PATH}`")));
    }
    let manifest_text = std::str::from_utf8(&manifest_bytes).map_err(|_| corrupt("manifest is not UTF-8"))?;
    let manifest: PackageManifest = serde_yaml::from_str(manifest_text).map_err(corrupt)?;
    manifest.check()?;

    let mut files = BTreeMap::new();
    for (path, data) in it {
        let Some(entry) = manifest.entry(&path) else {
            return Err(corrupt(format!("entry `{path}` is not in the manifest")));
        };
        if !entry.is_embedded() {
            return Err(corrupt(format!("external entry `{path}` has embedded bytes")));
        }
        if entry.size != data.len() as u64 || entry.digest != sha256_hex(&data) {
            return Err(PackageError::DigestMismatch(path));
        }
        if files.insert(path.clone(), data).is_some() {
            return Err(corrupt(format!("entry `{path}` appears twice")));
        }
    }
    if let Some(missing) = manifest.entries.iter().find(|e| e.is_embedded() && !files.contains_key(&e.path)) {
        return Err(corrupt(format!("entry `{}` is missing", missing.path)));
    }

    let canonical = write_archive(&manifest, &files.iter().map(|(k, v)| (k.clone(), v.as_slice())).collect());
    if canonical != bytes {
        return Err(corrupt("archive is not in canonical form"));
    }
    Ok(Package { manifest, files })
}

pub fn verify_package(bytes: &[u8]) -> Result<PackageManifest, PackageError> {
    open_package(bytes).map(|p| p.manifest)
}

/// Verify and write every embedded entry below `dest`.
pub fn extract(bytes: &[u8], dest: &Path) -> Result<PackageManifest, PackageError> {
    let pkg = open_package(bytes)?;
    for (path, data) in &pkg.files {
        let target = dest.join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&target, data)?;
    }
    Ok(pkg.manifest)
}
