// SPDX-License-Identifier: Apache-2.0

//! Network service and function descriptors.
//!
//! Descriptors are YAML documents with a `descriptor_kind` of `service` or
//! `function`. Fields this crate does not know are kept in `extra` and
//! written back on serialization, but otherwise ignored.

mod chain;
mod parse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::resources::Resources;

pub use chain::{resolve_chain, ChainHop, EndpointRole};
pub use parse::{parse_descriptor, serialize_descriptor};
pub use validate::{validate_service, Finding, Severity, ValidationReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DescriptorError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("unresolved endpoint `{0}`")]
    UnresolvedEndpoint(String),
}

impl DescriptorError {
    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        DescriptorError::Schema { path: path.into(), reason: reason.into() }
    }
}

/// `MAJOR.MINOR.PATCH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version { major, minor, patch }
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('.').collect();
        let num = |p: &str| -> Result<u64, String> {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("`{s}` is not a MAJOR.MINOR.PATCH version"));
            }
            p.parse().map_err(|_| format!("`{s}` is not a MAJOR.MINOR.PATCH version"))
        };
        match parts.as_slice() {
            [a, b, c] => Ok(Version { major: num(a)?, minor: num(b)?, patch: num(c)? }),
            _ => Err(format!("`{s}` is not a MAJOR.MINOR.PATCH version")),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Catalogue identity: exact `(vendor, name, version)` match, no ranges.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Identity {
    pub vendor: String,
    pub name: String,
    pub version: Version,
}

impl Identity {
    pub fn new(vendor: impl Into<String>, name: impl Into<String>, version: Version) -> Self {
        Identity { vendor: vendor.into(), name: name.into(), version }
    }

    /// A topic-segment-safe rendering, used to name per-service namespaces.
    pub fn slug(&self) -> String {
        crate::broker::sanitize_segment(&format!("{}_{}_{}", self.vendor, self.name, self.version))
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.vendor, self.name, self.version)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentUnit {
    /// Package-relative path or external URI of the image.
    pub image_ref: String,
    pub resources: Resources,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub op: ThresholdOp,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitoringMetricSpec {
    #[serde(rename = "metric")]
    pub metric_name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(rename = "interval_s", default = "default_interval")]
    pub collection_interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
}

fn default_interval() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManagerKind {
    Fsm,
    Ssm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutiveKind {
    Placement,
    Scaling,
}

impl fmt::Display for ExecutiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecutiveKind::Placement => "placement",
            ExecutiveKind::Scaling => "scaling",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerRef {
    pub kind: ManagerKind,
    pub executive: ExecutiveKind,
    /// Package-relative path of the program.
    #[serde(rename = "program")]
    pub program_artifact: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    #[serde(flatten)]
    pub identity: Identity,
    pub deployment_units: Vec<DeploymentUnit>,
    pub connection_points: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monitoring: Vec<MonitoringMetricSpec>,
    #[serde(default, rename = "managers", skip_serializing_if = "Vec::is_empty")]
    pub fsm_refs: Vec<ManagerRef>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_yaml::Value>,
}

impl FunctionDescriptor {
    /// Total resources of one replica: the sum over its deployment units.
    pub fn resources(&self) -> Resources {
        self.deployment_units.iter().map(|du| du.resources).sum()
    }

    pub fn has_connection_point(&self, cp: &str) -> bool {
        self.connection_points.iter().any(|c| c == cp)
    }
}

/// One function used by a service, under a service-local id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRef {
    pub id: String,
    #[serde(flatten)]
    pub identity: Identity,
}

/// A service-level connection point or `vnf:cp`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Service(String),
    Function { vnf: String, cp: String },
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Service(cp) => f.write_str(cp),
            Endpoint::Function { vnf, cp } => write!(f, "{vnf}:{cp}"),
        }
    }
}

pub(crate) fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((vnf, cp)) if valid_name(vnf) && valid_name(cp) => {
                Ok(Endpoint::Function { vnf: vnf.to_string(), cp: cp.to_string() })
            }
            None if valid_name(s) => Ok(Endpoint::Service(s.to_string())),
            _ => Err(format!("`{s}` is not an endpoint (expected `cp` or `vnf:cp`)")),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRequirements {
    /// PoPs the service may be placed on.
    pub pops: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    #[serde(flatten)]
    pub identity: Identity,
    #[serde(rename = "functions")]
    pub function_refs: Vec<FunctionRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connection_points: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub virtual_links: Vec<(Endpoint, Endpoint)>,
    #[serde(default)]
    pub forwarding_graph: Vec<Endpoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monitoring: Vec<MonitoringMetricSpec>,
    #[serde(default, rename = "managers", skip_serializing_if = "Vec::is_empty")]
    pub ssm_refs: Vec<ManagerRef>,
    #[serde(default, rename = "placement", skip_serializing_if = "Option::is_none")]
    pub placement_requirements: Option<PlacementRequirements>,
    /// Delegation path: child platform ids, outermost first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delegate_to: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_yaml::Value>,
}

impl ServiceDescriptor {
    pub fn function_ref(&self, id: &str) -> Option<&FunctionRef> {
        self.function_refs.iter().find(|f| f.id == id)
    }

    /// Every endpoint mentioned by links and the forwarding graph, in order.
    pub fn endpoints(&self) -> impl Iterator<Item = &Endpoint> {
        self.virtual_links.iter().flat_map(|(a, b)| [a, b]).chain(self.forwarding_graph.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Descriptor {
    Function(FunctionDescriptor),
    Service(ServiceDescriptor),
}

impl Descriptor {
    pub fn identity(&self) -> &Identity {
        match self {
            Descriptor::Function(f) => &f.identity,
            Descriptor::Service(s) => &s.identity,
        }
    }
}
