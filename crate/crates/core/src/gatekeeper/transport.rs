// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::sync::{Arc, OnceLock, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::RwLock;
use serde_json::Value;

use super::{ApiRequest, ApiResponse, Gatekeeper};

/// Scheme of in-process endpoints: `local://<name>`.
pub const LOCAL_SCHEME: &str = "local://";

fn directory() -> &'static RwLock<HashMap<String, Weak<Gatekeeper>>> {
    static D: OnceLock<RwLock<HashMap<String, Weak<Gatekeeper>>>> = OnceLock::new();
    D.get_or_init(Default::default)
}

/// Make a gatekeeper reachable as `local://<name>`.
pub fn register_local(name: &str, gk: &Arc<Gatekeeper>) -> Result<(), String> {
    let mut d = directory().write();
    if d.get(name).is_some_and(|w| w.strong_count() > 0) {
        return Err(format!("local endpoint `{name}` is taken"));
    }
    d.insert(name.to_string(), Arc::downgrade(gk));
    Ok(())
}

pub fn unregister_local(name: &str) {
    directory().write().remove(name);
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("endpoint `{0}` is not reachable: {1}")]
    Unreachable(String, String),
    #[error("unsupported endpoint `{0}`; expected local://name or http(s)://host:port")]
    BadEndpoint(String),
}

/// Client for the platform API at one endpoint.
#[derive(Clone, Debug)]
pub struct ApiClient {
    pub endpoint: String,
    pub token: String,
    pub timeout: Duration,
}

impl ApiClient {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>) -> Self {
        ApiClient { endpoint: endpoint.into(), token: token.into(), timeout: Duration::from_secs(30) }
    }

    pub fn send(
        &self,
        method: &str,
        path: &str,
        query: &[(&str, String)],
        body: Vec<u8>,
    ) -> Result<ApiResponse, TransportError> {
        if let Some(name) = self.endpoint.strip_prefix(LOCAL_SCHEME) {
            let gk = directory()
                .read()
                .get(name)
                .and_then(Weak::upgrade)
                .ok_or_else(|| TransportError::Unreachable(self.endpoint.clone(), "no such local platform".into()))?;
            let req = ApiRequest {
                method: method.to_string(),
                path: path.to_string(),
                query: query.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
                token: Some(self.token.clone()),
                body,
            };
            return Ok(gk.handle(&req));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(TransportError::BadEndpoint(self.endpoint.clone()));
        }
        let url = format!("{}{}", self.endpoint.trim_end_matches('/'), path);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut r = agent.request(method, &url).set("Authorization", &format!("Bearer {}", self.token));
        for (k, v) in query {
            r = r.query(k, v);
        }
        let result = if body.is_empty() && (method == "GET" || method == "DELETE") { r.call() } else { r.send_bytes(&body) };
        let resp = match result {
            Ok(resp) => resp,
            Err(ureq::Error::Status(_, resp)) => resp,
            Err(e) => return Err(TransportError::Unreachable(self.endpoint.clone(), e.to_string())),
        };
        let status = resp.status();
        let mut text = String::new();
        resp.into_reader()
            .take(64 * 1024 * 1024)
            .read_to_string(&mut text)
            .map_err(|e| TransportError::Unreachable(self.endpoint.clone(), e.to_string()))?;
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        Ok(ApiResponse { status, body })
    }

    pub fn get(&self, path: &str, query: &[(&str, String)]) -> Result<ApiResponse, TransportError> {
        self.send("GET", path, query, Vec::new())
    }

    pub fn delete(&self, path: &str) -> Result<ApiResponse, TransportError> {
        self.send("DELETE", path, &[], Vec::new())
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<ApiResponse, TransportError> {
        self.send("POST", path, &[], serde_json::to_vec(body).expect("json"))
    }

    pub fn post_bytes(&self, path: &str, body: Vec<u8>) -> Result<ApiResponse, TransportError> {
        self.send("POST", path, &[], body)
    }
}

/// The platform API over HTTP.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    threads: Vec<JoinHandle<()>>,
    pub addr: String,
}

fn to_api(req: &mut tiny_http::Request) -> ApiRequest {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let query: BTreeMap<String, String> = query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (percent_decode(k), percent_decode(v))
        })
        .collect();
    let token = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .and_then(|h| h.value.as_str().strip_prefix("Bearer ").map(str::to_owned));
    let mut body = Vec::new();
    let _ = req.as_reader().read_to_end(&mut body);
    ApiRequest { method: req.method().as_str().to_uppercase(), path: path.to_string(), query, token, body }
}

fn percent_decode(s: &str) -> String {
    percent_encoding::percent_decode_str(&s.replace('+', " ")).decode_utf8_lossy().into_owned()
}

impl HttpServer {
    pub fn start(bind: &str, gk: Arc<Gatekeeper>, workers: usize) -> Result<HttpServer, String> {
        let server = Arc::new(tiny_http::Server::http(bind).map_err(|e| e.to_string())?);
        let addr = server.server_addr().to_ip().map(|a| a.to_string()).unwrap_or_else(|| bind.to_string());
        let threads = (0..workers.max(1))
            .map(|i| {
                let server = server.clone();
                let gk = gk.clone();
                std::thread::Builder::new()
                    .name(format!("http-{i}"))
                    .spawn(move || {
                        while let Ok(mut req) = server.recv() {
                            let api = to_api(&mut req);
                            let resp = gk.handle(&api);
                            let body = serde_json::to_vec(&resp.body).unwrap_or_default();
                            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("valid header");
                            let out = tiny_http::Response::from_data(body).with_status_code(resp.status).with_header(header);
                            let _ = req.respond(out);
                        }
                    })
                    .expect("spawn http worker")
            })
            .collect();
        Ok(HttpServer { server, threads, addr })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        for _ in &self.threads {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
