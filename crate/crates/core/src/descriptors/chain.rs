// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{DescriptorError, Endpoint, FunctionDescriptor, Identity, ServiceDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointRole {
    Ingress,
    Egress,
}

/// One hop of a resolved forwarding graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ChainHop {
    Function { vnf: String, identity: Identity, cp: String },
    /// Service-level connection point; traffic enters or leaves here.
    Boundary { cp: String, role: EndpointRole },
}

/// Bind every forwarding-graph endpoint to its owning function, keeping
/// graph order. Service-level points before the first function hop are
/// ingress, later ones egress.
pub fn resolve_chain(
    nsd: &ServiceDescriptor,
    vnfds: &[FunctionDescriptor],
) -> Result<Vec<ChainHop>, DescriptorError> {
    let mut seen_function = false;
    nsd.forwarding_graph
        .iter()
        .map(|e| match e {
            Endpoint::Service(cp) => {
                if !nsd.connection_points.contains(cp) {
                    return Err(DescriptorError::UnresolvedEndpoint(e.to_string()));
                }
                let role = if seen_function { EndpointRole::Egress } else { EndpointRole::Ingress };
                Ok(ChainHop::Boundary { cp: cp.clone(), role })
            }
            Endpoint::Function { vnf, cp } => {
                let fref =
                    nsd.function_ref(vnf).ok_or_else(|| DescriptorError::UnresolvedEndpoint(e.to_string()))?;
                let vnfd = vnfds
                    .iter()
                    .find(|v| v.identity == fref.identity)
                    .ok_or_else(|| DescriptorError::UnresolvedEndpoint(e.to_string()))?;
                if !vnfd.has_connection_point(cp) {
                    return Err(DescriptorError::UnresolvedEndpoint(e.to_string()));
                }
                seen_function = true;
                Ok(ChainHop::Function { vnf: vnf.clone(), identity: fref.identity.clone(), cp: cp.clone() })
            }
        })
        .collect()
}
