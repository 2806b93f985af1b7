// SPDX-License-Identifier: Apache-2.0

use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::onboard::SsmHandle;
use super::placement::{pick_pop, PlacementStrategy, TopologyView};
use crate::broker::{Broker, BrokerError, ClientId, Pattern, PermissionSet, Topic};
use crate::ssm::{ScalingDecision, ScalingEnvironment};
use crate::Resources;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum SandboxCall {
    Pick { view: TopologyView, request: Resources },
    Decide { env: ScalingEnvironment },
}

/// What a program answered. `Abstain` means no rule fired.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum SandboxAnswer {
    Pop { pop: Option<String> },
    Scale { decision: ScalingDecision, fired: usize },
    Abstain,
    Error { message: String },
}

/// A running program: one broker client whose permissions are exactly its
/// namespace, and one thread answering requests on it.
#[derive(Debug)]
pub struct Sandbox {
    pub client: ClientId,
    pub namespace: String,
    thread: Option<JoinHandle<()>>,
}

pub fn sandbox_client(handle: &SsmHandle) -> ClientId {
    ClientId(format!("ssm-{}", handle.id))
}

fn evaluate(handle: &SsmHandle, call: SandboxCall) -> SandboxAnswer {
    let err = |e: &dyn std::fmt::Display| SandboxAnswer::Error { message: e.to_string() };
    match call {
        SandboxCall::Pick { view, request } => match pick_pop(PlacementStrategy::Ssm(&handle.program), &request, &view) {
            Ok(pop) => SandboxAnswer::Pop { pop },
            Err(e) => err(&e),
        },
        SandboxCall::Decide { env } => match handle.program.decide(&env) {
            Ok(o) => match o.fired {
                Some(fired) => SandboxAnswer::Scale { decision: o.decision, fired },
                None => SandboxAnswer::Abstain,
            },
            Err(e) => err(&e),
        },
    }
}

impl Sandbox {
    pub fn start(broker: &Broker, handle: SsmHandle) -> Result<Sandbox, BrokerError> {
        let namespace = handle.namespace();
        let scope: Pattern = format!("{namespace}.#").parse()?;
        let client = sandbox_client(&handle);
        let mailbox = broker.register_client(
            client.clone(),
            PermissionSet { publish_allow: vec![scope.clone()], subscribe_allow: vec![scope] },
        )?;
        let request: Topic = format!("{namespace}.request").parse()?;
        broker.subscribe(&client, Pattern::exact(&request))?;
        let b = broker.clone();
        let me = client.clone();
        let thread = std::thread::Builder::new()
            .name(client.0.clone())
            .spawn(move || {
                for d in mailbox.iter() {
                    let answer = match serde_json::from_value::<SandboxCall>(d.message.payload.clone()) {
                        Ok(call) => evaluate(&handle, call),
                        Err(e) => SandboxAnswer::Error { message: format!("malformed call: {e}") },
                    };
                    let payload = serde_json::to_value(answer).unwrap_or(Value::Null);
                    if let Err(e) = b.reply(&me, &d.message, payload) {
                        tracing::warn!(error = %e, "sandbox reply failed");
                    }
                }
            })
            .expect("spawn sandbox thread");
        Ok(Sandbox { client, namespace, thread: Some(thread) })
    }

    /// Remove the client; the thread ends when its mailbox closes.
    pub fn stop(mut self, broker: &Broker) {
        broker.remove_client(&self.client);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Ask a sandboxed program through the broker.
pub fn call_sandbox(
    broker: &Broker,
    caller: &ClientId,
    handle: &SsmHandle,
    call: &SandboxCall,
    timeout: Duration,
) -> SandboxAnswer {
    let topic = match format!("{}.request", handle.namespace()).parse::<Topic>() {
        Ok(t) => t,
        Err(e) => return SandboxAnswer::Error { message: e.to_string() },
    };
    match broker.request(caller, topic, json!(call), timeout) {
        Ok(v) => serde_json::from_value(v).unwrap_or_else(|e| SandboxAnswer::Error { message: e.to_string() }),
        Err(e) => SandboxAnswer::Error { message: e.to_string() },
    }
}

/// Onboarded programs together with their running sandboxes.
pub struct SsmRuntime {
    broker: Broker,
    pub registry: super::onboard::SsmRegistry,
    sandboxes: parking_lot::Mutex<Vec<Sandbox>>,
}

impl SsmRuntime {
    pub fn new(broker: Broker) -> Self {
        SsmRuntime { broker, registry: Default::default(), sandboxes: Default::default() }
    }

    /// Onboard a program and start its sandbox.
    pub fn install(
        &self,
        program: crate::ssm::SsmProgram,
        service: &crate::descriptors::Identity,
        function: Option<&crate::descriptors::Identity>,
    ) -> Result<SsmHandle, super::OnboardError> {
        let handle = self.registry.onboard(program, service, function)?;
        match Sandbox::start(&self.broker, handle.clone()) {
            Ok(s) => self.sandboxes.lock().push(s),
            Err(e) => tracing::error!(handle = handle.id, error = %e, "sandbox did not start"),
        }
        Ok(handle)
    }

    pub fn shutdown(&self) {
        for s in self.sandboxes.lock().drain(..) {
            s.stop(&self.broker);
        }
    }
}
