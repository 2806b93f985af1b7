// SPDX-License-Identifier: Apache-2.0

//! In-process asynchronous message broker.
//!
//! Every registered client owns a mailbox. Publishing fans a message out to
//! every subscription whose pattern matches the (possibly rerouted) topic.
//! Sequence numbers are assigned per `(sender, topic)` and enqueueing happens
//! under the same lock, so every subscriber sees each sender's messages on a
//! topic in sequence order even with concurrent publishers.

mod topic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use topic::{sanitize_segment, topic_matches, Pattern, Segment, Topic};

/// The four top-level topic trees.
pub const TOP_LEVELS: [&str; 4] = ["platform", "infrastructure", "service", "function"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BrokerError {
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("invalid pattern `{0}`")]
    InvalidPattern(String),
    #[error("unknown client `{0}`")]
    UnknownClient(String),
    #[error("client `{0}` is already registered")]
    DuplicateClient(String),
    #[error("permission denied: {client} may not {action} `{target}`")]
    PermissionDenied { client: String, action: &'static str, target: String },
    #[error("request on `{0}` timed out")]
    Timeout(String),
    #[error("message has no reply topic")]
    NoReplyTopic,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub String);

impl ClientId {
    pub fn new(s: impl Into<String>) -> Self {
        ClientId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubscriptionId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorrelationId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u64);

/// Publish and subscribe allow-lists. Empty lists deny everything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionSet {
    #[serde(default)]
    pub publish_allow: Vec<Pattern>,
    #[serde(default)]
    pub subscribe_allow: Vec<Pattern>,
}

impl PermissionSet {
    pub fn deny_all() -> Self {
        Self::default()
    }

    pub fn allow_all() -> Self {
        PermissionSet { publish_allow: vec![Pattern::any()], subscribe_allow: vec![Pattern::any()] }
    }

    pub fn can_publish(&self, topic: &Topic) -> bool {
        self.publish_allow.iter().any(|p| p.matches(topic))
    }

    /// A subscription is allowed when one granted pattern covers it entirely.
    pub fn can_subscribe(&self, pattern: &Pattern) -> bool {
        self.subscribe_allow.iter().any(|p| p.covers(pattern))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: Topic,
    pub correlation_id: Option<CorrelationId>,
    pub reply_to: Option<Topic>,
    pub sender: ClientId,
    pub payload: Value,
    pub sequence_no: u64,
}

#[derive(Clone, Debug)]
pub struct Delivery {
    pub subscription: SubscriptionId,
    pub message: Arc<Message>,
}

pub type Mailbox = Receiver<Delivery>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    /// Topic the message was delivered under, after rerouting.
    pub topic: Topic,
    pub sequence_no: u64,
    pub fan_out: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub published: u64,
    pub delivered: u64,
}

struct ClientEntry {
    permissions: PermissionSet,
    operator: bool,
    tx: Sender<Delivery>,
}

struct Subscription {
    client: ClientId,
    pattern: Pattern,
}

struct RerouteRule {
    id: RuleId,
    pattern: Pattern,
    prefix: Topic,
}

impl RerouteRule {
    fn apply(&self, topic: &Topic) -> Option<Topic> {
        if !self.pattern.matches(topic) {
            return None;
        }
        let keep = self.pattern.literal_prefix_len().min(topic.len());
        let segments = self.prefix.segments().iter().chain(&topic.segments()[keep..]).cloned();
        Topic::from_segments(segments).ok()
    }
}

#[derive(Default)]
struct State {
    clients: HashMap<ClientId, ClientEntry>,
    subscriptions: BTreeMap<SubscriptionId, Subscription>,
    sequences: HashMap<(ClientId, Topic), u64>,
    rules: Vec<RerouteRule>,
    waiters: HashMap<CorrelationId, Sender<Arc<Message>>>,
    next_subscription: u64,
    next_rule: u64,
}

struct Inner {
    state: Mutex<State>,
    next_correlation: AtomicU64,
    published: AtomicU64,
    delivered: AtomicU64,
}

/// Cheap to clone; all clones share one broker.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Broker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Broker").field("stats", &self.stats()).finish()
    }
}

struct Outgoing {
    topic: Topic,
    payload: Value,
    correlation_id: Option<CorrelationId>,
    reply_to: Option<Topic>,
    is_reply: bool,
}

impl Broker {
    pub fn new() -> Self {
        Broker {
            inner: Arc::new(Inner {
                state: Mutex::new(State::default()),
                next_correlation: AtomicU64::new(1),
                published: AtomicU64::new(0),
                delivered: AtomicU64::new(0),
            }),
        }
    }

    /// Register a client and hand back its mailbox.
    pub fn register_client(
        &self,
        id: ClientId,
        permissions: PermissionSet,
    ) -> Result<Mailbox, BrokerError> {
        let mut state = self.inner.state.lock();
        if state.clients.contains_key(&id) {
            return Err(BrokerError::DuplicateClient(id.0));
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        state.clients.insert(id, ClientEntry { permissions, operator: false, tx });
        Ok(rx)
    }

    /// Grant the platform-operator principal role (allowed to reroute).
    pub fn grant_operator(&self, id: &ClientId) -> Result<(), BrokerError> {
        let mut state = self.inner.state.lock();
        let entry =
            state.clients.get_mut(id).ok_or_else(|| BrokerError::UnknownClient(id.0.clone()))?;
        entry.operator = true;
        Ok(())
    }

    pub fn set_permissions(&self, id: &ClientId, permissions: PermissionSet) -> Result<(), BrokerError> {
        let mut state = self.inner.state.lock();
        let entry =
            state.clients.get_mut(id).ok_or_else(|| BrokerError::UnknownClient(id.0.clone()))?;
        entry.permissions = permissions.clone();
        // Subscriptions no longer covered by the new grant are dropped.
        state.subscriptions.retain(|_, sub| sub.client != *id || permissions.can_subscribe(&sub.pattern));
        Ok(())
    }

    /// Drop a client, its subscriptions and everything queued for it.
    /// Idempotent.
    pub fn remove_client(&self, id: &ClientId) {
        let mut state = self.inner.state.lock();
        state.clients.remove(id);
        state.subscriptions.retain(|_, sub| sub.client != *id);
    }

    pub fn is_registered(&self, id: &ClientId) -> bool {
        self.inner.state.lock().clients.contains_key(id)
    }

    pub fn subscribe(&self, client: &ClientId, pattern: Pattern) -> Result<SubscriptionId, BrokerError> {
        let mut state = self.inner.state.lock();
        let entry =
            state.clients.get(client).ok_or_else(|| BrokerError::UnknownClient(client.0.clone()))?;
        if !entry.permissions.can_subscribe(&pattern) {
            return Err(BrokerError::PermissionDenied {
                client: client.0.clone(),
                action: "subscribe to",
                target: pattern.to_string(),
            });
        }
        state.next_subscription += 1;
        let id = SubscriptionId(state.next_subscription);
        state.subscriptions.insert(id, Subscription { client: client.clone(), pattern });
        Ok(id)
    }

    pub fn unsubscribe(&self, subscription: SubscriptionId) {
        self.inner.state.lock().subscriptions.remove(&subscription);
    }

    pub fn publish(&self, client: &ClientId, topic: Topic, payload: Value) -> Result<Receipt, BrokerError> {
        self.send(
            client,
            Outgoing { topic, payload, correlation_id: None, reply_to: None, is_reply: false },
        )
    }

    /// Publish on `topic` and wait for the first reply carrying the same
    /// correlation id. Replies arriving after the timeout are discarded.
    pub fn request(
        &self,
        client: &ClientId,
        topic: Topic,
        payload: Value,
        timeout: Duration,
    ) -> Result<Value, BrokerError> {
        let reply_to = topic.reply_topic();
        let correlation = CorrelationId(self.inner.next_correlation.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = crossbeam_channel::bounded(1);
        {
            let mut state = self.inner.state.lock();
            let entry = state
                .clients
                .get(client)
                .ok_or_else(|| BrokerError::UnknownClient(client.0.clone()))?;
            if !entry.permissions.can_subscribe(&Pattern::exact(&reply_to)) {
                return Err(BrokerError::PermissionDenied {
                    client: client.0.clone(),
                    action: "receive replies on",
                    target: reply_to.to_string(),
                });
            }
            state.waiters.insert(correlation, tx);
        }
        let shown = topic.to_string();
        let sent = self.send(
            client,
            Outgoing {
                topic,
                payload,
                correlation_id: Some(correlation),
                reply_to: Some(reply_to),
                is_reply: false,
            },
        );
        if let Err(e) = sent {
            self.inner.state.lock().waiters.remove(&correlation);
            return Err(e);
        }
        let result = rx.recv_timeout(timeout);
        self.inner.state.lock().waiters.remove(&correlation);
        match result {
            Ok(msg) => Ok(msg.payload.clone()),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                Err(BrokerError::Timeout(shown))
            }
        }
    }

    /// Answer a request message on its reply topic.
    pub fn reply(&self, client: &ClientId, request: &Message, payload: Value) -> Result<Receipt, BrokerError> {
        let topic = request.reply_to.clone().ok_or(BrokerError::NoReplyTopic)?;
        self.send(
            client,
            Outgoing {
                topic,
                payload,
                correlation_id: request.correlation_id,
                reply_to: None,
                is_reply: true,
            },
        )
    }

    /// Install a topic rewrite rule. Only operator clients may do this.
    /// Rules are tried in registration order and at most one applies.
    pub fn reroute(&self, principal: &ClientId, pattern: Pattern, prefix: Topic) -> Result<RuleId, BrokerError> {
        let mut state = self.inner.state.lock();
        let is_operator = state.clients.get(principal).map(|c| c.operator).unwrap_or(false);
        if !is_operator {
            return Err(BrokerError::PermissionDenied {
                client: principal.0.clone(),
                action: "reroute",
                target: pattern.to_string(),
            });
        }
        state.next_rule += 1;
        let id = RuleId(state.next_rule);
        state.rules.push(RerouteRule { id, pattern, prefix });
        Ok(id)
    }

    pub fn remove_rule(&self, id: RuleId) {
        self.inner.state.lock().rules.retain(|r| r.id != id);
    }

    pub fn stats(&self) -> BrokerStats {
        BrokerStats {
            published: self.inner.published.load(Ordering::SeqCst),
            delivered: self.inner.delivered.load(Ordering::SeqCst),
        }
    }

    fn send(&self, client: &ClientId, out: Outgoing) -> Result<Receipt, BrokerError> {
        if !TOP_LEVELS.contains(&out.topic.segments()[0].as_str()) {
            return Err(BrokerError::InvalidTopic(out.topic.to_string()));
        }
        let mut state = self.inner.state.lock();
        let entry =
            state.clients.get(client).ok_or_else(|| BrokerError::UnknownClient(client.0.clone()))?;
        if !entry.permissions.can_publish(&out.topic) {
            return Err(BrokerError::PermissionDenied {
                client: client.0.clone(),
                action: "publish to",
                target: out.topic.to_string(),
            });
        }
        let topic = state
            .rules
            .iter()
            .find_map(|r| r.apply(&out.topic))
            .unwrap_or_else(|| out.topic.clone());

        let seq = state.sequences.entry((client.clone(), topic.clone())).or_insert(0);
        *seq += 1;
        let sequence_no = *seq;

        let message = Arc::new(Message {
            topic: topic.clone(),
            correlation_id: out.correlation_id,
            reply_to: out.reply_to,
            sender: client.clone(),
            payload: out.payload,
            sequence_no,
        });

        let mut fan_out = 0;
        for (sub_id, sub) in &state.subscriptions {
            if !sub.pattern.matches(&topic) {
                continue;
            }
            if let Some(target) = state.clients.get(&sub.client) {
                let delivery = Delivery { subscription: *sub_id, message: Arc::clone(&message) };
                if target.tx.send(delivery).is_ok() {
                    fan_out += 1;
                }
            }
        }
        if out.is_reply {
            if let Some(waiter) = message.correlation_id.and_then(|c| state.waiters.remove(&c)) {
                let _ = waiter.send(Arc::clone(&message));
            }
        }
        drop(state);

        self.inner.published.fetch_add(1, Ordering::SeqCst);
        self.inner.delivered.fetch_add(fan_out as u64, Ordering::SeqCst);
        Ok(Receipt { topic, sequence_no, fan_out })
    }
}
