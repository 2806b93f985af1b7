// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PackageError;

/// Name of the workspace configuration file. It is never packaged.
pub const WORKSPACE_CONFIG: &str = "workspace.yml";

pub const DEFAULT_ARTIFACT_BASE: &str = "artifact://local";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    /// Prefix for external references in slim packages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_base_uri: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_yaml::Value>,
}

impl WorkspaceConfig {
    pub fn artifact_base(&self) -> &str {
        self.artifact_base_uri.as_deref().unwrap_or(DEFAULT_ARTIFACT_BASE).trim_end_matches('/')
    }
}

/// In-memory copy of a workspace: every packageable file keyed by its
/// `/`-separated relative path, plus the parsed configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkspaceSnapshot {
    pub config: WorkspaceConfig,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl WorkspaceSnapshot {
    /// Read a workspace directory. Hidden files and directories are skipped.
    pub fn from_dir(root: &Path) -> Result<Self, PackageError> {
        let cfg_path = root.join(WORKSPACE_CONFIG);
        let cfg_text = fs::read_to_string(&cfg_path).map_err(|e| {
            PackageError::InvalidWorkspace(format!("cannot read {}: {e}", cfg_path.display()))
        })?;
        let config = if cfg_text.trim().is_empty() {
            WorkspaceConfig::default()
        } else {
            serde_yaml::from_str(&cfg_text)
                .map_err(|e| PackageError::InvalidWorkspace(format!("{WORKSPACE_CONFIG}: {e}")))?
        };
        let mut files = BTreeMap::new();
        collect(root, "", &mut files)?;
        files.remove(WORKSPACE_CONFIG);
        Ok(WorkspaceSnapshot { config, files })
    }

    pub fn insert(&mut self, path: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), bytes.into());
    }
}

fn collect(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) -> Result<(), PackageError> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else {
            return Err(PackageError::InvalidWorkspace(format!("non UTF-8 file name in {}", dir.display())));
        };
        if name.starts_with('.') {
            continue;
        }
        let rel = if prefix.is_empty() { name.to_string() } else { format!("{prefix}/{name}") };
        let meta = fs::metadata(entry.path())?;
        if meta.is_dir() {
            collect(&entry.path(), &rel, out)?;
        } else if meta.is_file() {
            out.insert(rel, fs::read(entry.path())?);
        }
    }
    Ok(())
}
