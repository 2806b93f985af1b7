// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{reply_err, reply_ok, TOPIC_CHAIN_INSTALL, TOPIC_CHAIN_UNINSTALL, TOPIC_DEPLOY, TOPIC_RELEASE};
use crate::broker::Message;
use crate::executive::{FaultInjector, FaultPoint};
use crate::infra::{ChainHopSpec, ChainId, Infrastructure};
use crate::plugin::{Plugin, PluginContext, PluginManifest};
use crate::Resources;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct DeployRequest {
    pub instance_id: String,
    pub function_instance: String,
    pub pop: String,
    pub resources: Resources,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ReleaseRequest {
    pub instance_id: String,
    pub function_instance: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ChainInstallRequest {
    pub instance_id: String,
    pub hops: Vec<ChainHopSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ChainUninstallRequest {
    pub chain: ChainId,
}

fn parse<T: serde::de::DeserializeOwned>(msg: &Message) -> Result<T, String> {
    serde_json::from_value(msg.payload.clone()).map_err(|e| format!("malformed request on {}: {e}", msg.topic))
}

/// Deploys and releases function instances as infrastructure allocations.
/// An allocation's owner is the service instance and its label the
/// function instance.
pub struct FunctionLifecycleManager {
    pub infra: Arc<Infrastructure>,
    pub faults: Arc<FaultInjector>,
}

impl FunctionLifecycleManager {
    fn deploy(&self, r: DeployRequest) -> Value {
        if self.faults.should_fail(FaultPoint::Deploy) {
            return reply_err(format!("injected deploy fault for {}", r.function_instance));
        }
        match self.infra.allocate(&r.pop, r.resources, &r.instance_id, &r.function_instance) {
            Ok(a) => reply_ok(a.id),
            Err(e) => reply_err(e),
        }
    }

    fn release(&self, r: ReleaseRequest) -> Value {
        let ids: Vec<_> = self
            .infra
            .snapshot()
            .allocations
            .into_values()
            .filter(|a| a.owner == r.instance_id && a.label == r.function_instance)
            .map(|a| a.id)
            .collect();
        let n = ids.into_iter().filter(|id| self.infra.release(*id)).count();
        reply_ok(n)
    }
}

impl Plugin for FunctionLifecycleManager {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("flm")
            .subscribes(&[TOPIC_DEPLOY, TOPIC_RELEASE])
            .publishes(&["function.lifecycle.*.response"])
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        let topic = msg.topic.to_string();
        let out = if topic == TOPIC_DEPLOY {
            parse(msg).map(|r| self.deploy(r))
        } else if topic == TOPIC_RELEASE {
            parse(msg).map(|r| self.release(r))
        } else {
            return;
        };
        let _ = ctx.reply(msg, out.unwrap_or_else(reply_err));
    }
}

/// Installs forwarding chains on the infrastructure.
pub struct InfrastructureAdaptor {
    pub infra: Arc<Infrastructure>,
}

impl Plugin for InfrastructureAdaptor {
    fn manifest(&self) -> PluginManifest {
        PluginManifest::new("infrastructure-adaptor")
            .subscribes(&[TOPIC_CHAIN_INSTALL, TOPIC_CHAIN_UNINSTALL])
            .publishes(&["infrastructure.chain.*.response"])
    }

    fn handle(&mut self, ctx: &PluginContext, msg: &Message) {
        let topic = msg.topic.to_string();
        let out = if topic == TOPIC_CHAIN_INSTALL {
            parse::<ChainInstallRequest>(msg).map(|r| match self.infra.install_chain(&r.instance_id, r.hops) {
                Ok(c) => reply_ok(c.id),
                Err(e) => reply_err(e),
            })
        } else if topic == TOPIC_CHAIN_UNINSTALL {
            parse::<ChainUninstallRequest>(msg).map(|r| reply_ok(self.infra.uninstall_chain(r.chain)))
        } else {
            return;
        };
        let _ = ctx.reply(msg, out.unwrap_or_else(reply_err));
    }
}
