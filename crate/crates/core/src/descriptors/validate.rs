// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Endpoint, FunctionDescriptor, ServiceDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Error,
    Warning,
}

/// One problem found while cross-checking a service against its functions.
///
/// `subject` names the part of the service the finding is about. Every
/// subject gets at most one finding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} {}: {}", self.subject, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    fn error(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

/// Cross-check a service descriptor against a set of function descriptors.
///
/// Findings are grouped per function: a function either is unresolved or
/// lists all of its undeclared connection points in one finding. Adding a
/// function descriptor can therefore only remove or rewrite findings, never
/// add new ones.
pub fn validate_service(nsd: &ServiceDescriptor, vnfds: &[FunctionDescriptor]) -> ValidationReport {
    let mut report = ValidationReport::default();
    if nsd.function_refs.is_empty() {
        report.error("functions", "service has no functions");
    }

    let mut bad_cps: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut bad_service_cps: Vec<String> = Vec::new();
    let mut unknown_ids: Vec<String> = Vec::new();
    for e in nsd.endpoints() {
        match e {
            Endpoint::Service(cp) => {
                if !nsd.connection_points.contains(cp) && !bad_service_cps.contains(cp) {
                    bad_service_cps.push(cp.clone());
                }
            }
            Endpoint::Function { vnf, cp } => match nsd.function_ref(vnf) {
                None => {
                    if !unknown_ids.contains(vnf) {
                        unknown_ids.push(vnf.clone());
                    }
                }
                Some(fref) => {
                    if let Some(vnfd) = vnfds.iter().find(|v| v.identity == fref.identity) {
                        if !vnfd.has_connection_point(cp) {
                            let list = bad_cps.entry(fref.id.as_str()).or_default();
                            let shown = e.to_string();
                            if !list.contains(&shown) {
                                list.push(shown);
                            }
                        }
                    }
                }
            },
        }
    }

    for fref in &nsd.function_refs {
        let subject = format!("functions[{}]", fref.id);
        if !vnfds.iter().any(|v| v.identity == fref.identity) {
            report.error(subject, format!("unresolved function reference {}", fref.identity));
        } else if let Some(cps) = bad_cps.get(fref.id.as_str()) {
            report.error(subject, format!("undeclared connection points: {}", cps.join(", ")));
        }
    }
    for id in unknown_ids {
        report.error(format!("functions[{id}]"), "endpoint refers to an undeclared function id");
    }
    for cp in bad_service_cps {
        report.error(format!("connection_points[{cp}]"), "undeclared service connection point");
    }
    for (i, m) in nsd.ssm_refs.iter().enumerate() {
        if m.program_artifact.trim().is_empty() {
            report.error(format!("managers[{i}]"), "empty SSM program path");
        }
    }
    report
}
