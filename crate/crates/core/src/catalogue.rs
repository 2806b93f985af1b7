// SPDX-License-Identifier: Apache-2.0

//! Uploaded packages and the descriptors they carry.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::descriptors::{Descriptor, FunctionDescriptor, Identity, ServiceDescriptor};
use crate::package::Package;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PackageStatus {
    Ok,
    /// Stored, but some manager programs were rejected and the platform
    /// defaults stand in for them.
    Degraded,
}

#[derive(Clone, Debug)]
pub struct StoredPackage {
    pub id: String,
    pub package: Arc<Package>,
    /// The archive as uploaded, for forwarding to child platforms.
    pub archive: Arc<Vec<u8>>,
    pub status: PackageStatus,
    /// One line per rejected manager program.
    pub rejections: Vec<String>,
    pub uploader: String,
    pub services: Vec<Identity>,
    pub functions: Vec<Identity>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CatalogueError {
    #[error("`{0}` is already in the catalogue with different content")]
    Conflict(Identity),
    #[error("unknown service `{0}`")]
    UnknownService(Identity),
    #[error("service references unknown function `{0}`")]
    UnknownFunction(Identity),
}

/// A service with every function it references.
#[derive(Clone, Debug)]
pub struct ResolvedService {
    pub nsd: Arc<ServiceDescriptor>,
    /// Keyed by the function's id within the service.
    pub functions: BTreeMap<String, Arc<FunctionDescriptor>>,
    pub package_id: Option<String>,
}

#[derive(Default)]
struct Tables {
    packages: BTreeMap<String, StoredPackage>,
    services: BTreeMap<Identity, (Arc<ServiceDescriptor>, String)>,
    functions: BTreeMap<Identity, Arc<FunctionDescriptor>>,
}

/// Identities are unique: adding a descriptor equal to a stored one is a
/// no-op, adding a different one under the same identity is refused.
#[derive(Default)]
pub struct Catalogue {
    tables: RwLock<Tables>,
}

impl Catalogue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store a package and its descriptors atomically.
    pub fn add_package(
        &self,
        id: &str,
        package: Package,
        archive: Vec<u8>,
        descriptors: Vec<Descriptor>,
        uploader: &str,
        status: PackageStatus,
        rejections: Vec<String>,
    ) -> Result<StoredPackage, CatalogueError> {
        let mut t = self.tables.write();
        if let Some(existing) = t.packages.get(id) {
            return Ok(existing.clone());
        }
        for d in &descriptors {
            let clash = match d {
                Descriptor::Service(s) => t.services.get(&s.identity).is_some_and(|(old, _)| **old != *s),
                Descriptor::Function(f) => t.functions.get(&f.identity).is_some_and(|old| **old != *f),
            };
            if clash {
                return Err(CatalogueError::Conflict(d.identity().clone()));
            }
        }
        let mut services = Vec::new();
        let mut functions = Vec::new();
        for d in descriptors {
            match d {
                Descriptor::Service(s) => {
                    services.push(s.identity.clone());
                    t.services.entry(s.identity.clone()).or_insert_with(|| (Arc::new(s), id.to_string()));
                }
                Descriptor::Function(f) => {
                    functions.push(f.identity.clone());
                    t.functions.entry(f.identity.clone()).or_insert_with(|| Arc::new(f));
                }
            }
        }
        let stored = StoredPackage {
            id: id.to_string(),
            package: Arc::new(package),
            archive: Arc::new(archive),
            status,
            rejections,
            uploader: uploader.to_string(),
            services,
            functions,
        };
        t.packages.insert(id.to_string(), stored.clone());
        Ok(stored)
    }

    pub fn package(&self, id: &str) -> Option<StoredPackage> {
        self.tables.read().packages.get(id).cloned()
    }

    pub fn service(&self, identity: &Identity) -> Option<Arc<ServiceDescriptor>> {
        self.tables.read().services.get(identity).map(|(s, _)| s.clone())
    }

    pub fn function(&self, identity: &Identity) -> Option<Arc<FunctionDescriptor>> {
        self.tables.read().functions.get(identity).cloned()
    }

    pub fn resolve(&self, identity: &Identity) -> Result<ResolvedService, CatalogueError> {
        let t = self.tables.read();
        let (nsd, pkg) = t.services.get(identity).ok_or_else(|| CatalogueError::UnknownService(identity.clone()))?;
        let mut functions = BTreeMap::new();
        for r in &nsd.function_refs {
            let f = t.functions.get(&r.identity).ok_or_else(|| CatalogueError::UnknownFunction(r.identity.clone()))?;
            functions.insert(r.id.clone(), f.clone());
        }
        Ok(ResolvedService { nsd: nsd.clone(), functions, package_id: Some(pkg.clone()) })
    }

    pub fn packages(&self) -> Vec<StoredPackage> {
        self.tables.read().packages.values().cloned().collect()
    }
}
