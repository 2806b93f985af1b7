// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde_yaml::{Mapping, Value};

use super::{
    valid_name, Descriptor, DescriptorError, Endpoint, ExecutiveKind, FunctionDescriptor, Identity, ManagerKind,
    ManagerRef, MonitoringMetricSpec, ServiceDescriptor,
};

const KIND_KEY: &str = "descriptor_kind";

/// Parse a descriptor document and check all of its invariants.
pub fn parse_descriptor(text: &str) -> Result<Descriptor, DescriptorError> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        DescriptorError::Syntax { line, column, message: e.to_string() }
    })?;
    let mut map = match value {
        Value::Mapping(m) => m,
        _ => return Err(DescriptorError::schema("", "document must be a mapping")),
    };
    let kind = match map.remove(KIND_KEY) {
        Some(Value::String(s)) => s,
        Some(_) => return Err(DescriptorError::schema(KIND_KEY, "must be `service` or `function`")),
        None => return Err(DescriptorError::schema(KIND_KEY, "missing required key")),
    };
    let doc = Value::Mapping(map);
    match kind.as_str() {
        "function" => {
            let f: FunctionDescriptor = typed(doc)?;
            check_function(&f)?;
            Ok(Descriptor::Function(f))
        }
        "service" => {
            let s: ServiceDescriptor = typed(doc)?;
            check_service(&s)?;
            Ok(Descriptor::Service(s))
        }
        other => Err(DescriptorError::schema(KIND_KEY, format!("unknown kind `{other}`"))),
    }
}

/// Render a descriptor back to YAML, `descriptor_kind` first.
pub fn serialize_descriptor(d: &Descriptor) -> String {
    let (kind, body) = match d {
        Descriptor::Function(f) => ("function", serde_yaml::to_value(f)),
        Descriptor::Service(s) => ("service", serde_yaml::to_value(s)),
    };
    let body = body.expect("descriptors always serialize");
    let mut out = Mapping::new();
    out.insert(Value::from(KIND_KEY), Value::from(kind));
    if let Value::Mapping(m) = body {
        out.extend(m);
    }
    serde_yaml::to_string(&Value::Mapping(out)).expect("descriptors always serialize")
}

fn typed<T: DeserializeOwned>(doc: Value) -> Result<T, DescriptorError> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        DescriptorError::schema(path, e.into_inner().to_string())
    })
}

fn check_identity(id: &Identity) -> Result<(), DescriptorError> {
    if id.vendor.trim().is_empty() {
        return Err(DescriptorError::schema("vendor", "must not be empty"));
    }
    if id.name.trim().is_empty() {
        return Err(DescriptorError::schema("name", "must not be empty"));
    }
    Ok(())
}

fn check_unique_names(field: &str, names: &[String]) -> Result<(), DescriptorError> {
    let mut seen = BTreeSet::new();
    for (i, n) in names.iter().enumerate() {
        if !valid_name(n) {
            return Err(DescriptorError::schema(format!("{field}[{i}]"), format!("invalid name `{n}`")));
        }
        if !seen.insert(n) {
            return Err(DescriptorError::schema(format!("{field}[{i}]"), format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn check_monitoring(specs: &[MonitoringMetricSpec]) -> Result<(), DescriptorError> {
    for (i, m) in specs.iter().enumerate() {
        if m.metric_name.is_empty() {
            return Err(DescriptorError::schema(format!("monitoring[{i}].metric"), "must not be empty"));
        }
        if !(m.collection_interval_s > 0.0) || !m.collection_interval_s.is_finite() {
            return Err(DescriptorError::schema(
                format!("monitoring[{i}].interval_s"),
                "must be a positive number",
            ));
        }
    }
    Ok(())
}

fn check_managers(refs: &[ManagerRef], expected: ManagerKind) -> Result<(), DescriptorError> {
    for (i, m) in refs.iter().enumerate() {
        if m.kind != expected {
            let reason = match expected {
                ManagerKind::Fsm => "function descriptors may only declare FSMs",
                ManagerKind::Ssm => "service descriptors may only declare SSMs",
            };
            return Err(DescriptorError::schema(format!("managers[{i}].kind"), reason));
        }
        // FSMs manage one function's replica count; placement is per service.
        if m.kind == ManagerKind::Fsm && m.executive != ExecutiveKind::Scaling {
            return Err(DescriptorError::schema(format!("managers[{i}].executive"), "an FSM must be a scaling program"));
        }
        if m.program_artifact.trim().is_empty() {
            return Err(DescriptorError::schema(format!("managers[{i}].program"), "must not be empty"));
        }
    }
    Ok(())
}

fn check_function(f: &FunctionDescriptor) -> Result<(), DescriptorError> {
    check_identity(&f.identity)?;
    if f.deployment_units.is_empty() {
        return Err(DescriptorError::schema("deployment_units", "at least one deployment unit is required"));
    }
    for (i, du) in f.deployment_units.iter().enumerate() {
        if du.image_ref.trim().is_empty() {
            return Err(DescriptorError::schema(format!("deployment_units[{i}].image_ref"), "must not be empty"));
        }
        if du.resources.cpu_cores < 1 {
            return Err(DescriptorError::schema(
                format!("deployment_units[{i}].resources.cpu_cores"),
                "must be at least 1",
            ));
        }
        if du.resources.memory_mb < 1 {
            return Err(DescriptorError::schema(
                format!("deployment_units[{i}].resources.memory_mb"),
                "must be at least 1",
            ));
        }
    }
    check_unique_names("connection_points", &f.connection_points)?;
    check_monitoring(&f.monitoring)?;
    check_managers(&f.fsm_refs, ManagerKind::Fsm)
}

fn check_endpoint(s: &ServiceDescriptor, path: &str, e: &Endpoint) -> Result<(), DescriptorError> {
    match e {
        Endpoint::Service(cp) if !s.connection_points.contains(cp) => Err(DescriptorError::schema(
            path,
            format!("`{cp}` is not a declared service connection point"),
        )),
        Endpoint::Function { vnf, .. } if s.function_ref(vnf).is_none() => {
            Err(DescriptorError::schema(path, format!("`{vnf}` is not a declared function id")))
        }
        _ => Ok(()),
    }
}

fn check_service(s: &ServiceDescriptor) -> Result<(), DescriptorError> {
    check_identity(&s.identity)?;
    if s.function_refs.is_empty() {
        return Err(DescriptorError::schema("functions", "a service needs at least one function"));
    }
    let ids: Vec<String> = s.function_refs.iter().map(|f| f.id.clone()).collect();
    check_unique_names("functions", &ids)?;
    check_unique_names("connection_points", &s.connection_points)?;
    for (i, (a, b)) in s.virtual_links.iter().enumerate() {
        check_endpoint(s, &format!("virtual_links[{i}][0]"), a)?;
        check_endpoint(s, &format!("virtual_links[{i}][1]"), b)?;
        if a == b {
            return Err(DescriptorError::schema(format!("virtual_links[{i}]"), "self-loop link"));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, e) in s.forwarding_graph.iter().enumerate() {
        let path = format!("forwarding_graph[{i}]");
        check_endpoint(s, &path, e)?;
        if !seen.insert(e) {
            return Err(DescriptorError::schema(path, format!("`{e}` appears twice")));
        }
    }
    check_monitoring(&s.monitoring)?;
    check_managers(&s.ssm_refs, ManagerKind::Ssm)?;
    if let Some(p) = &s.placement_requirements {
        if p.pops.is_empty() {
            return Err(DescriptorError::schema("placement.pops", "must list at least one PoP"));
        }
    }
    Ok(())
}
