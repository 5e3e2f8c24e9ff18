//! Loopback HTTP server that materializes scenario manifests: adversarial
//! document networks described as data, with a request log and mutable
//! server state for assertions.
//!
//! A manifest maps origin-qualified paths to behaviors. Multiple loopback
//! ports stand in for distinct origins (the host is always 127.0.0.1, so
//! origin distinctness comes from the port). Document bodies may reference
//! other origins with `{origin:NAME}` placeholders, resolved once the
//! listeners are bound.
//!
//! Control endpoints `GET /__log` and `GET /__state` expose the request
//! log and state as JSON on every origin; fixture documents never link to
//! `__`-prefixed paths.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Vulnerability;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no loopback port available: {0}")]
    PortUnavailable(String),
    #[error("invalid manifest at {path}: {message}")]
    ManifestInvalid { path: String, message: String },
}

fn manifest_invalid(path: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::ManifestInvalid { path: path.into(), message: message.into() }
}

/// Inline content or a file sibling to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BodySource {
    Inline(String),
    File(String),
}

impl BodySource {
    pub fn inline(text: impl Into<String>) -> Self {
        BodySource::Inline(text.into())
    }

    fn load(&self, key: &str, base_dir: &Path) -> Result<String, HarnessError> {
        match self {
            BodySource::Inline(text) => Ok(text.clone()),
            BodySource::File(name) => std::fs::read_to_string(base_dir.join(name))
                .map_err(|e| manifest_invalid(key, format!("cannot read body file {name}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Corruption {
    /// Serve only the first N bytes of the body.
    Truncate(usize),
    /// Serve the body up to the offset, then deterministic garbage bytes.
    GarbageAt(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointAnswer {
    /// Canonical pattern text this answer applies to, or "*" for any.
    pub pattern: String,
    /// Binding rows returned verbatim, one per line.
    pub rows: Vec<String>,
}

/// How one path answers requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Behavior {
    Static {
        body: BodySource,
        media_type: String,
    },
    Redirect {
        status: u16,
        location: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        loop_with: Option<String>,
    },
    Delay {
        millis: u64,
        then: Box<Behavior>,
    },
    /// Endless stream of statements; `{n}` in the template is replaced by a
    /// counter. The server never terminates this response — the client has
    /// to bound it.
    InfiniteStream {
        triple_template: String,
        quads_per_chunk: u32,
    },
    /// Fills the `{name}` slot of the template with the `name` query
    /// parameter; with escaping off the parameter is pasted raw.
    InjectionTemplate {
        template: BodySource,
        escaping: bool,
    },
    /// Flips a named state flag on GET and answers 200 with an empty body.
    MutatingGet {
        state_key: String,
    },
    /// Implements the delegation wire protocol: logs pattern and bindings,
    /// answers from a fixed binding table.
    EndpointStub {
        answers: Vec<EndpointAnswer>,
    },
    Corrupt {
        body: BodySource,
        corruption: Corruption,
    },
    NotFound,
}

impl Behavior {
    fn name(&self) -> &'static str {
        match self {
            Behavior::Static { .. } => "Static",
            Behavior::Redirect { .. } => "Redirect",
            Behavior::Delay { .. } => "Delay",
            Behavior::InfiniteStream { .. } => "InfiniteStream",
            Behavior::InjectionTemplate { .. } => "InjectionTemplate",
            Behavior::MutatingGet { .. } => "MutatingGet",
            Behavior::EndpointStub { .. } => "EndpointStub",
            Behavior::Corrupt { .. } => "Corrupt",
            Behavior::NotFound => "NotFound",
        }
    }

    fn validate(&self, key: &str) -> Result<(), HarnessError> {
        match self {
            Behavior::Redirect { status, .. } if !(301..=308).contains(status) => Err(
                manifest_invalid(key, format!("redirect status {status} outside 301..=308")),
            ),
            Behavior::InfiniteStream { quads_per_chunk: 0, .. } => {
                Err(manifest_invalid(key, "quadsPerChunk must be positive"))
            }
            Behavior::Delay { then, .. } => then.validate(key),
            _ => Ok(()),
        }
    }
}

/// Table 2-style exploit attributes carried by every scenario.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ExploitMetadata {
    pub attacker: String,
    pub victim: String,
    pub impact: String,
    pub difficulty: String,
}

/// Declarative description of an adversarial document network. Resource
/// keys are `origin:path` (for example `carol:/profile`); a bare `/path`
/// belongs to the default origin `main`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioManifest {
    pub name: String,
    pub vulnerability: Vulnerability,
    #[serde(deserialize_with = "deserialize_unique_map")]
    pub resources: BTreeMap<String, Behavior>,
    #[serde(default)]
    pub auth: BTreeMap<String, String>,
    #[serde(default)]
    pub metadata: ExploitMetadata,
}

/// Rejects duplicate resource paths instead of silently keeping the last.
fn deserialize_unique_map<'de, D>(d: D) -> Result<BTreeMap<String, Behavior>, D::Error>
where
    D: Deserializer<'de>,
{
    struct UniqueVisitor;
    impl<'de> Visitor<'de> for UniqueVisitor {
        type Value = BTreeMap<String, Behavior>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a map of resource paths to behaviors")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((key, value)) = access.next_entry::<String, Behavior>()? {
                if out.insert(key.clone(), value).is_some() {
                    return Err(serde::de::Error::custom(format!(
                        "duplicate resource path: {key}"
                    )));
                }
            }
            Ok(out)
        }
    }
    d.deserialize_map(UniqueVisitor)
}

impl ScenarioManifest {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| manifest_invalid("<manifest>", e.to_string()))
    }

    fn split_key(key: &str) -> (String, String) {
        match key.find(":/") {
            Some(idx) => (key[..idx].to_string(), key[idx + 1..].to_string()),
            None => ("main".to_string(), key.to_string()),
        }
    }

    pub fn origin_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .resources
            .keys()
            .map(|k| Self::split_key(k).0)
            .collect();
        names.sort();
        names.dedup();
        names
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.resources.is_empty() {
            return Err(manifest_invalid(&self.name, "manifest has no resources"));
        }
        for (key, behavior) in &self.resources {
            let (_, path) = Self::split_key(key);
            if !path.starts_with('/') {
                return Err(manifest_invalid(key, "resource path must start with '/'"));
            }
            if path.starts_with("/__") {
                return Err(manifest_invalid(key, "the /__ prefix is reserved for control endpoints"));
            }
            behavior.validate(key)?;
        }
        for key in self.auth.keys() {
            if !self.resources.contains_key(key) {
                return Err(manifest_invalid(key, "auth entry has no matching resource"));
            }
        }
        Ok(())
    }
}

/// One received HTTP request. Authorization values are recorded as
/// presence plus a SHA-256 hash, never verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestLogEntry {
    pub timestamp_millis: u64,
    pub origin: String,
    pub method: String,
    pub path_query: String,
    pub has_authorization: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub authorization_sha256: Option<String>,
    pub served_from_behavior: String,
    pub status: u16,
    pub body_bytes_sent: u64,
}

impl RequestLogEntry {
    pub fn path(&self) -> &str {
        match self.path_query.find('?') {
            Some(idx) => &self.path_query[..idx],
            None => &self.path_query,
        }
    }
}

#[derive(Debug)]
struct Resolved {
    behavior: Behavior,
    auth: Option<String>,
    flip: AtomicU64,
}

#[derive(Debug)]
struct ServerShared {
    log: Mutex<Vec<RequestLogEntry>>,
    state: Mutex<BTreeMap<String, String>>,
    // origin name -> path -> resource
    resources: BTreeMap<String, BTreeMap<String, Resolved>>,
    origins: BTreeMap<String, String>,
    started: Instant,
    stopping: AtomicBool,
}

/// A running scenario server. Dropping the handle stops all listeners.
#[derive(Debug)]
pub struct ScenarioHandle {
    shared: Arc<ServerShared>,
    threads: Vec<JoinHandle<()>>,
}

impl ScenarioHandle {
    /// Base URL (`http://127.0.0.1:port`) of a named origin.
    pub fn origin(&self, name: &str) -> String {
        self.shared
            .origins
            .get(name)
            .unwrap_or_else(|| panic!("unknown origin {name}"))
            .clone()
    }

    /// Base URL of the first origin in name order.
    pub fn base_url(&self) -> String {
        self.shared.origins.values().next().expect("at least one origin").clone()
    }

    pub fn origins(&self) -> &BTreeMap<String, String> {
        &self.shared.origins
    }

    /// Absolute URL for a path on a named origin.
    pub fn url(&self, origin: &str, path: &str) -> String {
        format!("{}{}", self.origin(origin), path)
    }

    /// Consistent snapshot of the request log.
    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.shared.log.lock().expect("log lock").clone()
    }

    pub fn state(&self) -> BTreeMap<String, String> {
        self.shared.state.lock().expect("state lock").clone()
    }

    pub fn stop(&self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
    }
}

impl Drop for ScenarioHandle {
    fn drop(&mut self) {
        self.stop();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds one loopback listener per origin and serves the manifest until
/// the handle is stopped or dropped.
///
/// `base_dir` resolves `file` body sources; `port` pins the port of the
/// first origin in name order (0 = OS-assigned, as for all other origins).
pub fn serve(manifest: &ScenarioManifest, base_dir: &Path, port: u16) -> Result<ScenarioHandle, HarnessError> {
    manifest.validate()?;

    let origin_names = manifest.origin_names();
    let mut listeners: BTreeMap<String, TcpListener> = BTreeMap::new();
    let mut origins: BTreeMap<String, String> = BTreeMap::new();
    for (idx, name) in origin_names.iter().enumerate() {
        let requested = if idx == 0 { port } else { 0 };
        let listener = TcpListener::bind(("127.0.0.1", requested))
            .map_err(|e| HarnessError::PortUnavailable(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| HarnessError::PortUnavailable(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| HarnessError::PortUnavailable(e.to_string()))?;
        origins.insert(name.clone(), format!("http://127.0.0.1:{}", addr.port()));
        listeners.insert(name.clone(), listener);
    }

    // Resolve bodies and cross-origin placeholders now that ports are known.
    let substitute = |text: &str| -> Result<String, HarnessError> {
        let mut out = text.to_string();
        while let Some(start) = out.find("{origin:") {
            let end = out[start..]
                .find('}')
                .map(|i| start + i)
                .ok_or_else(|| manifest_invalid("<manifest>", "unterminated {origin:...}"))?;
            let name = &out[start + 8..end];
            let base = origins
                .get(name)
                .ok_or_else(|| manifest_invalid("<manifest>", format!("unknown origin {name}")))?;
            out.replace_range(start..=end, base);
        }
        Ok(out)
    };

    let mut resources: BTreeMap<String, BTreeMap<String, Resolved>> = BTreeMap::new();
    let mut state: BTreeMap<String, String> = BTreeMap::new();
    for (key, behavior) in &manifest.resources {
        let (origin, path) = ScenarioManifest::split_key(key);
        let resolved = resolve_behavior(behavior, key, base_dir, &substitute, &mut state)?;
        resources.entry(origin).or_default().insert(
            path,
            Resolved {
                behavior: resolved,
                auth: manifest.auth.get(key).cloned(),
                flip: AtomicU64::new(0),
            },
        );
    }

    let shared = Arc::new(ServerShared {
        log: Mutex::new(Vec::new()),
        state: Mutex::new(state),
        resources,
        origins,
        started: Instant::now(),
        stopping: AtomicBool::new(false),
    });

    let mut threads = Vec::new();
    for (name, listener) in listeners {
        let shared = shared.clone();
        threads.push(std::thread::spawn(move || accept_loop(name, listener, shared)));
    }

    Ok(ScenarioHandle { shared, threads })
}

fn resolve_behavior(
    behavior: &Behavior,
    key: &str,
    base_dir: &Path,
    substitute: &dyn Fn(&str) -> Result<String, HarnessError>,
    state: &mut BTreeMap<String, String>,
) -> Result<Behavior, HarnessError> {
    Ok(match behavior {
        Behavior::Static { body, media_type } => Behavior::Static {
            body: BodySource::Inline(substitute(&body.load(key, base_dir)?)?),
            media_type: media_type.clone(),
        },
        Behavior::Redirect { status, location, loop_with } => Behavior::Redirect {
            status: *status,
            location: substitute(location)?,
            loop_with: loop_with.as_ref().map(|l| substitute(l)).transpose()?,
        },
        Behavior::Delay { millis, then } => Behavior::Delay {
            millis: *millis,
            then: Box::new(resolve_behavior(then, key, base_dir, substitute, state)?),
        },
        Behavior::InfiniteStream { triple_template, quads_per_chunk } => Behavior::InfiniteStream {
            triple_template: substitute(triple_template)?,
            quads_per_chunk: *quads_per_chunk,
        },
        Behavior::InjectionTemplate { template, escaping } => Behavior::InjectionTemplate {
            template: BodySource::Inline(substitute(&template.load(key, base_dir)?)?),
            escaping: *escaping,
        },
        Behavior::MutatingGet { state_key } => {
            state.insert(state_key.clone(), "intact".to_string());
            Behavior::MutatingGet { state_key: state_key.clone() }
        }
        Behavior::EndpointStub { answers } => Behavior::EndpointStub {
            answers: answers
                .iter()
                .map(|a| {
                    Ok(EndpointAnswer {
                        pattern: substitute(&a.pattern)?,
                        rows: a.rows.iter().map(|r| substitute(r)).collect::<Result<_, _>>()?,
                    })
                })
                .collect::<Result<_, HarnessError>>()?,
        },
        Behavior::Corrupt { body, corruption } => Behavior::Corrupt {
            body: BodySource::Inline(substitute(&body.load(key, base_dir)?)?),
            corruption: corruption.clone(),
        },
        Behavior::NotFound => Behavior::NotFound,
    })
}

fn accept_loop(origin: String, listener: TcpListener, shared: Arc<ServerShared>) {
    while !shared.stopping.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                let origin = origin.clone();
                std::thread::spawn(move || handle_connection(origin, stream, shared));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(_) => break,
        }
    }
}

const MAX_HEAD_BYTES: usize = 65_536;

fn handle_connection(origin: String, mut stream: TcpStream, shared: Arc<ServerShared>) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });

    // Request line + headers.
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
        return;
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("/").to_string();

    let mut authorization: Option<String> = None;
    let mut head_bytes = request_line.len();
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(n) => {
                head_bytes += n;
                if head_bytes > MAX_HEAD_BYTES {
                    return;
                }
                let trimmed = line.trim_end();
                if trimmed.is_empty() {
                    break;
                }
                if let Some((name, value)) = trimmed.split_once(':') {
                    if name.eq_ignore_ascii_case("authorization") {
                        authorization = Some(value.trim().to_string());
                    }
                }
            }
            Err(_) => return,
        }
    }

    let (path, _query) = match target.find('?') {
        Some(idx) => (&target[..idx], &target[idx + 1..]),
        None => (target.as_str(), ""),
    };

    // Log the receipt before serving; status and bytes are filled in after.
    let log_index = {
        let mut log = shared.log.lock().expect("log lock");
        let entry = RequestLogEntry {
            timestamp_millis: shared.started.elapsed().as_millis() as u64,
            origin: origin.clone(),
            method: method.clone(),
            path_query: target.clone(),
            has_authorization: authorization.is_some(),
            authorization_sha256: authorization
                .as_ref()
                .map(|v| format!("{:x}", Sha256::digest(v.as_bytes()))),
            served_from_behavior: String::new(),
            status: 0,
            body_bytes_sent: 0,
        };
        log.push(entry);
        log.len() - 1
    };

    let (behavior_name, status, bytes) =
        respond(&origin, &method, &target, path, authorization.as_deref(), &mut stream, &shared);

    let mut log = shared.log.lock().expect("log lock");
    log[log_index].served_from_behavior = behavior_name;
    log[log_index].status = status;
    log[log_index].body_bytes_sent = bytes;
}

fn respond(
    origin: &str,
    method: &str,
    target: &str,
    path: &str,
    authorization: Option<&str>,
    stream: &mut TcpStream,
    shared: &ServerShared,
) -> (String, u16, u64) {
    // Control endpoints are served on every origin.
    if path == "/__log" {
        let body = serde_json::to_string_pretty(&*shared.log.lock().expect("log lock"))
            .unwrap_or_default();
        let n = write_response(stream, 200, "application/json", body.as_bytes());
        return ("__log".into(), 200, n);
    }
    if path == "/__state" {
        let body = serde_json::to_string_pretty(&*shared.state.lock().expect("state lock"))
            .unwrap_or_default();
        let n = write_response(stream, 200, "application/json", body.as_bytes());
        return ("__state".into(), 200, n);
    }

    let Some(resource) = shared.resources.get(origin).and_then(|m| m.get(path)) else {
        let n = write_response(stream, 404, "text/plain", b"not found\n");
        return ("<unmapped>".into(), 404, n);
    };
    let behavior_name = resource.behavior.name().to_string();

    if method != "GET" {
        let n = write_response(stream, 405, "text/plain", b"method not allowed\n");
        return (behavior_name, 405, n);
    }

    // Authentication gate: exact bearer token or 401, before any behavior
    // side effect runs.
    if let Some(required) = &resource.auth {
        let ok = authorization == Some(format!("Bearer {required}").as_str());
        if !ok {
            let n = write_response_with(
                stream,
                401,
                "text/plain",
                b"unauthorized\n",
                &[("WWW-Authenticate", "Bearer")],
            );
            return (behavior_name, 401, n);
        }
    }

    let query = target.find('?').map(|i| &target[i + 1..]).unwrap_or("");
    let (status, bytes) = run_behavior(&resource.behavior, resource, query, stream, shared);
    (behavior_name, status, bytes)
}

fn run_behavior(
    behavior: &Behavior,
    resource: &Resolved,
    query: &str,
    stream: &mut TcpStream,
    shared: &ServerShared,
) -> (u16, u64) {
    match behavior {
        Behavior::Static { body, media_type } => {
            let text = match body {
                BodySource::Inline(t) => t.as_str(),
                BodySource::File(_) => unreachable!("bodies are inlined at serve time"),
            };
            (200, write_response(stream, 200, media_type, text.as_bytes()))
        }
        Behavior::Redirect { status, location, loop_with } => {
            let target = match loop_with {
                Some(other) => {
                    // Alternate between the two locations on successive hits.
                    let n = resource.flip.fetch_add(1, Ordering::SeqCst);
                    if n % 2 == 0 {
                        location.clone()
                    } else {
                        other.clone()
                    }
                }
                None => location.clone(),
            };
            let n = write_response_with(stream, *status, "text/plain", b"", &[("Location", &target)]);
            (*status, n)
        }
        Behavior::Delay { millis, then } => {
            std::thread::sleep(Duration::from_millis(*millis));
            run_behavior(then, resource, query, stream, shared)
        }
        Behavior::InfiniteStream { triple_template, quads_per_chunk } => {
            let head = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/turtle\r\nConnection: close\r\n\r\n"
            );
            if stream.write_all(head.as_bytes()).is_err() {
                return (200, 0);
            }
            let mut n: u64 = 0;
            let mut sent: u64 = 0;
            loop {
                let mut chunk = String::new();
                for _ in 0..*quads_per_chunk {
                    chunk.push_str(&triple_template.replace("{n}", &n.to_string()));
                    chunk.push('\n');
                    n += 1;
                }
                if stream.write_all(chunk.as_bytes()).is_err() {
                    break; // client hung up: the only way this ends
                }
                sent += chunk.len() as u64;
                if stream.flush().is_err() {
                    break;
                }
            }
            (200, sent)
        }
        Behavior::InjectionTemplate { template, escaping } => {
            let raw_name = query_param(query, "name").unwrap_or_default();
            let value = if *escaping { escape_turtle_literal(&raw_name) } else { raw_name };
            let text = match template {
                BodySource::Inline(t) => t.replace("{name}", &value),
                BodySource::File(_) => unreachable!("bodies are inlined at serve time"),
            };
            (200, write_response(stream, 200, "text/turtle", text.as_bytes()))
        }
        Behavior::MutatingGet { state_key } => {
            shared
                .state
                .lock()
                .expect("state lock")
                .insert(state_key.clone(), "mutated".to_string());
            (200, write_response(stream, 200, "text/plain", b""))
        }
        Behavior::EndpointStub { answers } => {
            let pattern = query_param(query, "pattern").unwrap_or_default();
            let rows: Vec<&str> = answers
                .iter()
                .find(|a| a.pattern == pattern || a.pattern == "*")
                .map(|a| a.rows.iter().map(String::as_str).collect())
                .unwrap_or_default();
            let body = rows.join("\n");
            (200, write_response(stream, 200, "text/plain; charset=utf-8", body.as_bytes()))
        }
        Behavior::Corrupt { body, corruption } => {
            let text = match body {
                BodySource::Inline(t) => t.as_str(),
                BodySource::File(_) => unreachable!("bodies are inlined at serve time"),
            };
            let bytes = text.as_bytes();
            let out: Vec<u8> = match corruption {
                Corruption::Truncate(n) => bytes[..(*n).min(bytes.len())].to_vec(),
                Corruption::GarbageAt(offset) => {
                    let mut v = bytes[..(*offset).min(bytes.len())].to_vec();
                    v.extend_from_slice(b"\x00\x01\xfe\xff %% corrupted bytes %% \x00");
                    v
                }
            };
            (200, write_response(stream, 200, "text/turtle", &out))
        }
        Behavior::NotFound => (404, write_response(stream, 404, "text/plain", b"gone\n")),
    }
}

fn status_text(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        302 => "Found",
        303 => "See Other",
        304 => "Not Modified",
        307 => "Temporary Redirect",
        308 => "Permanent Redirect",
        401 => "Unauthorized",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Response",
    }
}

fn write_response(stream: &mut TcpStream, status: u16, media_type: &str, body: &[u8]) -> u64 {
    write_response_with(stream, status, media_type, body, &[])
}

fn write_response_with(
    stream: &mut TcpStream,
    status: u16,
    media_type: &str,
    body: &[u8],
    extra: &[(&str, &str)],
) -> u64 {
    let mut head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n",
        status,
        status_text(status),
        media_type,
        body.len()
    );
    for (name, value) in extra {
        head.push_str(name);
        head.push_str(": ");
        head.push_str(value);
        head.push_str("\r\n");
    }
    head.push_str("\r\n");
    if stream.write_all(head.as_bytes()).is_err() {
        return 0;
    }
    if stream.write_all(body).is_err() {
        return 0;
    }
    let _ = stream.flush();
    body.len() as u64
}

/// Decodes one query parameter (percent-encoding and '+' for space).
pub fn query_param(query: &str, name: &str) -> Option<String> {
    for pair in query.split('&') {
        let (k, v) = match pair.split_once('=') {
            Some((k, v)) => (k, v),
            None => (pair, ""),
        };
        if k == name {
            let plus_decoded = v.replace('+', " ");
            return Some(
                percent_encoding::percent_decode_str(&plus_decoded)
                    .decode_utf8_lossy()
                    .into_owned(),
            );
        }
    }
    None
}

/// Escapes a value for safe inclusion inside a double-quoted literal.
fn escape_turtle_literal(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}
