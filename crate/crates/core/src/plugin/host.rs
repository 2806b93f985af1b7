// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use crossbeam_channel::{select, Receiver};
use serde_json::{json, Value};

use super::{PluginId, PluginManifest, HEARTBEAT_TOPIC};
use crate::broker::{Broker, BrokerError, ClientId, Mailbox, Message, Receipt, Topic};

/// A MANO plugin. Each runs on its own thread and sees every message that
/// matches one of its granted subscriptions, in mailbox order.
pub trait Plugin: Send + 'static {
    fn manifest(&self) -> PluginManifest;

    fn on_start(&mut self, _ctx: &PluginContext) {}

    fn handle(&mut self, ctx: &PluginContext, msg: &Message);

    fn on_stop(&mut self, _ctx: &PluginContext) {}
}

/// A plugin's handle on the broker. Clones share the identity.
#[derive(Clone, Debug)]
pub struct PluginContext {
    broker: Broker,
    client: ClientId,
    id: PluginId,
    timeout: Duration,
}

fn topic(s: &str) -> Result<Topic, BrokerError> {
    s.parse::<Topic>().map_err(|_| BrokerError::InvalidTopic(s.to_string()))
}

impl PluginContext {
    pub(crate) fn new(broker: Broker, client: ClientId, id: PluginId, timeout: Duration) -> Self {
        PluginContext { broker, client, id, timeout }
    }

    pub fn id(&self) -> &PluginId {
        &self.id
    }

    pub fn client(&self) -> &ClientId {
        &self.client
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn publish(&self, t: &str, payload: Value) -> Result<Receipt, BrokerError> {
        self.broker.publish(&self.client, topic(t)?, payload)
    }

    /// Request with the platform's step timeout.
    pub fn request(&self, t: &str, payload: Value) -> Result<Value, BrokerError> {
        self.broker.request(&self.client, topic(t)?, payload, self.timeout)
    }

    pub fn request_with(&self, t: &str, payload: Value, timeout: Duration) -> Result<Value, BrokerError> {
        self.broker.request(&self.client, topic(t)?, payload, timeout)
    }

    pub fn reply(&self, request: &Message, payload: Value) -> Result<Receipt, BrokerError> {
        self.broker.reply(&self.client, request, payload)
    }
}

pub(crate) fn run_host<P: Plugin>(
    plugin: &mut P,
    ctx: &PluginContext,
    mailbox: Mailbox,
    stop: Receiver<()>,
    interval: Duration,
) {
    let beat = || {
        let _ = ctx.publish(HEARTBEAT_TOPIC, json!({ "plugin": ctx.id.0 }));
    };
    beat();
    plugin.on_start(ctx);
    let ticker = crossbeam_channel::tick(interval);
    loop {
        select! {
            recv(mailbox) -> d => match d {
                Ok(d) => {
                    // A plugin never handles its own publications.
                    if d.message.sender == ctx.client {
                        continue;
                    }
                    plugin.handle(ctx, &d.message)
                }
                Err(_) => break,
            },
            recv(ticker) -> _ => beat(),
            recv(stop) -> _ => break,
        }
    }
    plugin.on_stop(ctx);
    tracing::debug!(plugin = %ctx.id, "host stopped");
}
