//! HTTP dereferencer: GET-only traversal transport with scheme blocking,
//! redirect budgets and cycle detection, origin-scoped authentication
//! sessions, and a cache keyed by (url, auth scope, sandbox).
//!
//! The client is deliberately minimal HTTP/1.1 (`Connection: close`, no
//! cookies, `Accept: text/turtle`): the transport is part of the attack
//! surface under test, so every request it can emit is a GET by
//! construction and every limit is enforced here, not in a wrapper.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use url::Url;

use crate::audit::EventLog;
use crate::model::{origin_of, Iri, Origin, SecurityEvent, Vulnerability};
use crate::policy::session_allowed;

/// A bearer credential scoped to the origin it was created for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub origin: Origin,
    pub token: String,
}

/// Sessions keyed by origin; immutable during a query execution and safe
/// to share between fetch workers.
#[derive(Debug, Clone, Default)]
pub struct SessionStore {
    sessions: BTreeMap<Origin, Session>,
}

impl SessionStore {
    pub fn new() -> Self {
        SessionStore::default()
    }

    pub fn insert(&mut self, session: Session) {
        self.sessions.insert(session.origin.clone(), session);
    }

    /// The at-most-one candidate session for a target: the one created for
    /// the target's origin. Whether it actually attaches is decided by
    /// [`session_allowed`].
    pub fn for_origin(&self, origin: &Origin) -> Option<&Session> {
        self.sessions.get(origin)
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

fn default_true() -> bool {
    true
}

/// Rejects `getOnly: false`: traversal over non-GET methods is not a
/// configuration, it is a different (vulnerable) engine.
fn deserialize_get_only<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let value = bool::deserialize(d)?;
    if !value {
        return Err(serde::de::Error::custom(
            "fetchPolicy.getOnly cannot be disabled through configuration",
        ));
    }
    Ok(true)
}

fn default_schemes() -> std::collections::BTreeSet<String> {
    ["http".to_string(), "https".to_string()].into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct FetchPolicy {
    pub max_redirects: u32,
    pub allowed_schemes: std::collections::BTreeSet<String>,
    pub allow_file_scheme: bool,
    /// Always true; the field exists so audits can assert it.
    #[serde(deserialize_with = "deserialize_get_only", default = "default_true")]
    pub get_only: bool,
    pub request_timeout_millis: u64,
    pub header_cap_bytes: usize,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            max_redirects: 21,
            allowed_schemes: default_schemes(),
            allow_file_scheme: false,
            get_only: true,
            request_timeout_millis: 30_000,
            header_cap_bytes: 65_536,
        }
    }
}

impl FetchPolicy {
    /// Whether requests for this scheme may reach the transport at all.
    pub fn scheme_allowed(&self, scheme: &str) -> bool {
        if scheme == "file" {
            return self.allow_file_scheme;
        }
        self.allowed_schemes.contains(scheme)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CacheMode {
    PerQuery,
    Shared,
    Off,
}

/// Sandbox identifier for cache keys under `cacheMode: shared`.
pub const SHARED_SANDBOX: &str = "shared";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuthScope {
    Origin(Origin),
    Anonymous,
}

/// Two fetches share a cache entry iff all three key fields are equal:
/// the pre-redirect URL, the auth scope of the attached session, and the
/// sandbox (query execution) the fetch belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub url: Iri,
    pub auth_scope: AuthScope,
    pub sandbox_id: String,
}

/// Who referred the engine to a URL: the seed set itself (or a link found
/// in a seed document), or a document from some origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Referrer {
    Seed,
    Document(Origin),
}

#[derive(Debug, Error)]
pub enum FetchFault {
    #[error("scheme '{scheme}' blocked for {url}")]
    SchemeBlocked { url: Iri, scheme: String },
    #[error("redirect limit of {limit} exceeded starting from {url}")]
    RedirectLimitExceeded { url: Iri, limit: u32 },
    #[error("redirect cycle back to {repeat} detected starting from {url}")]
    RedirectCycle { url: Iri, repeat: Iri },
    #[error("transport error for {url}: {message}")]
    TransportError { url: Iri, message: String },
    #[error("http status {status} for {url}")]
    HttpError { url: Iri, status: u16 },
}

/// A dereferenced document. The body is a stream: live bodies are read
/// incrementally (and only enter the cache if fully consumed), cached
/// bodies replay the stored bytes.
pub struct FetchedDocument {
    pub final_url: Iri,
    pub status: u16,
    pub media_type: String,
    /// Redirect targets followed, in order; empty when no redirect happened.
    pub redirect_chain: Vec<Iri>,
    pub from_cache: bool,
    pub body: Body,
}

impl std::fmt::Debug for FetchedDocument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FetchedDocument")
            .field("final_url", &self.final_url)
            .field("status", &self.status)
            .field("media_type", &self.media_type)
            .field("redirect_chain", &self.redirect_chain)
            .field("from_cache", &self.from_cache)
            .finish_non_exhaustive()
    }
}

pub enum Body {
    Cached { bytes: Arc<Vec<u8>>, pos: usize },
    Live(LiveBody),
}

impl Read for Body {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match self {
            Body::Cached { bytes, pos } => {
                let n = (bytes.len() - *pos).min(buf.len());
                buf[..n].copy_from_slice(&bytes[*pos..*pos + n]);
                *pos += n;
                Ok(n)
            }
            Body::Live(live) => live.read(buf),
        }
    }
}

enum Framing {
    ContentLength(u64),
    Chunked { remaining_in_chunk: u64, done: bool },
    Eof,
}

/// Streamed response body. Bytes read are teed into a buffer so that a
/// fully consumed body can be inserted into the cache; abandoning the body
/// early (parse truncation) leaves the cache untouched.
pub struct LiveBody {
    reader: BufReader<TcpStream>,
    framing: Framing,
    tee: Option<CacheFill>,
    finished: bool,
}

struct CacheFill {
    key: CacheKey,
    cache: DocumentCache,
    buf: Vec<u8>,
    cap: usize,
    overflowed: bool,
    entry_meta: CachedMeta,
}

#[derive(Clone)]
struct CachedMeta {
    final_url: Iri,
    status: u16,
    media_type: String,
    redirect_chain: Vec<Iri>,
}

impl LiveBody {
    fn read_framed(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match &mut self.framing {
            Framing::ContentLength(remaining) => {
                if *remaining == 0 {
                    return Ok(0);
                }
                let want = (*remaining).min(buf.len() as u64) as usize;
                let n = self.reader.read(&mut buf[..want])?;
                if n == 0 && *remaining > 0 {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "connection closed before advertised content length",
                    ));
                }
                *remaining -= n as u64;
                Ok(n)
            }
            Framing::Chunked { remaining_in_chunk, done } => {
                if *done {
                    return Ok(0);
                }
                if *remaining_in_chunk == 0 {
                    let size = read_chunk_size(&mut self.reader)?;
                    if size == 0 {
                        // Trailing CRLF after the last chunk.
                        let mut line = String::new();
                        let _ = self.reader.read_line(&mut line);
                        *done = true;
                        return Ok(0);
                    }
                    *remaining_in_chunk = size;
                }
                let want = (*remaining_in_chunk).min(buf.len() as u64) as usize;
                let n = self.reader.read(&mut buf[..want])?;
                if n == 0 {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "connection closed inside a chunk",
                    ));
                }
                *remaining_in_chunk -= n as u64;
                if *remaining_in_chunk == 0 {
                    // Consume the CRLF chunk terminator.
                    let mut crlf = [0u8; 2];
                    self.reader.read_exact(&mut crlf)?;
                }
                Ok(n)
            }
            Framing::Eof => self.reader.read(buf),
        }
    }
}

impl Read for LiveBody {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.finished {
            return Ok(0);
        }
        let n = self.read_framed(buf)?;
        if n > 0 {
            if let Some(tee) = &mut self.tee {
                if tee.buf.len() + n <= tee.cap {
                    tee.buf.extend_from_slice(&buf[..n]);
                } else {
                    tee.overflowed = true;
                }
            }
        } else {
            self.finished = true;
            // Clean end of body: publish to the cache.
            if let Some(tee) = self.tee.take() {
                if !tee.overflowed {
                    tee.cache.insert(
                        tee.key,
                        CachedEntry {
                            body: Arc::new(tee.buf),
                            meta: tee.entry_meta,
                        },
                    );
                }
            }
        }
        Ok(n)
    }
}

fn read_chunk_size(reader: &mut BufReader<TcpStream>) -> std::io::Result<u64> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let size_part = line.trim().split(';').next().unwrap_or("").trim();
    u64::from_str_radix(size_part, 16)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad chunk size"))
}

struct CachedEntry {
    body: Arc<Vec<u8>>,
    meta: CachedMeta,
}

/// Cache of fully fetched documents, safe under concurrent access.
#[derive(Clone)]
pub struct DocumentCache {
    entries: Arc<Mutex<HashMap<CacheKey, CachedEntry>>>,
    /// Bodies larger than this are never cached.
    body_cap: usize,
}

impl DocumentCache {
    pub fn new() -> Self {
        DocumentCache { entries: Arc::new(Mutex::new(HashMap::new())), body_cap: 16_777_216 }
    }

    fn insert(&self, key: CacheKey, entry: CachedEntry) {
        self.entries.lock().expect("cache lock").insert(key, entry);
    }

    fn get(&self, key: &CacheKey) -> Option<(Arc<Vec<u8>>, CachedMeta)> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(key)
            .map(|e| (e.body.clone(), e.meta.clone()))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for DocumentCache {
    fn default() -> Self {
        DocumentCache::new()
    }
}

/// One dereference request. `session_scoping` mirrors the engine
/// configuration; `sandbox_id` identifies the query execution for cache
/// isolation.
pub struct FetchRequest<'a> {
    pub url: &'a Iri,
    pub referrer: Referrer,
    pub sessions: &'a SessionStore,
    pub policy: &'a FetchPolicy,
    pub session_scoping: bool,
    pub cache_mode: CacheMode,
    pub sandbox_id: &'a str,
}

/// The dereferencer. Holds the document cache; everything else is
/// per-request state, so concurrent fetches need no further coordination.
#[derive(Clone, Default)]
pub struct Dereferencer {
    cache: DocumentCache,
}

impl Dereferencer {
    pub fn new() -> Self {
        Dereferencer { cache: DocumentCache::new() }
    }

    pub fn cache(&self) -> &DocumentCache {
        &self.cache
    }

    /// Looks up a cache entry; hits replay the stored body byte-identically
    /// with `from_cache` set.
    pub fn cache_lookup(&self, key: &CacheKey) -> Option<FetchedDocument> {
        let (bytes, meta) = self.cache.get(key)?;
        Some(FetchedDocument {
            final_url: meta.final_url,
            status: meta.status,
            media_type: meta.media_type,
            redirect_chain: meta.redirect_chain,
            from_cache: true,
            body: Body::Cached { bytes, pos: 0 },
        })
    }

    /// Issues a GET (never anything else), following redirects up to the
    /// policy budget with cycle detection, attaching at most one session,
    /// and consulting the cache under the full (url, auth scope, sandbox)
    /// key. Blocks are reported on the event log.
    pub fn dereference(
        &self,
        req: &FetchRequest,
        events: &EventLog,
    ) -> Result<FetchedDocument, FetchFault> {
        let url = req.url.without_fragment();
        self.check_scheme(&url, req, events)?;

        // Session decision for the request URL determines the cache scope.
        let session = self.select_session(&url, req, events);
        let auth_scope = match &session {
            Some(s) => AuthScope::Origin(s.origin.clone()),
            None => AuthScope::Anonymous,
        };

        let cache_key = match req.cache_mode {
            CacheMode::Off => None,
            CacheMode::PerQuery => Some(CacheKey {
                url: url.clone(),
                auth_scope: auth_scope.clone(),
                sandbox_id: req.sandbox_id.to_string(),
            }),
            CacheMode::Shared => Some(CacheKey {
                url: url.clone(),
                auth_scope: auth_scope.clone(),
                sandbox_id: SHARED_SANDBOX.to_string(),
            }),
        };
        if let Some(key) = &cache_key {
            if let Some(hit) = self.cache_lookup(key) {
                return Ok(hit);
            }
        }

        if origin_of(&url).scheme == "file" {
            return self.fetch_file(&url);
        }

        let deadline = Instant::now() + Duration::from_millis(req.policy.request_timeout_millis);
        let mut current = url.clone();
        let mut chain: Vec<Iri> = Vec::new();
        let mut visited: HashSet<Iri> = HashSet::new();
        visited.insert(current.clone());

        loop {
            // Re-evaluate scheme and session per hop: a redirect may cross
            // origins or try to smuggle in a blocked scheme.
            self.check_scheme(&current, req, events)?;
            let hop_session = if chain.is_empty() {
                session.clone()
            } else {
                self.select_session(&current, req, events)
            };

            let response = http_get(&current, hop_session.as_ref(), req.policy, deadline)?;

            if (300..400).contains(&response.status) {
                let Some(location) = response.location.clone() else {
                    return Err(FetchFault::HttpError { url: current, status: response.status });
                };
                let next = crate::model::resolve_relative(&current, &location)
                    .map_err(|e| FetchFault::TransportError {
                        url: current.clone(),
                        message: format!("unresolvable redirect location: {e}"),
                    })?
                    .without_fragment();

                if visited.contains(&next) {
                    events.push(
                        SecurityEvent::blocked(
                            Vulnerability::LinkTraversalTrap,
                            format!("redirect cycle back to {next} detected; chain abandoned"),
                        )
                        .with_subject(url.clone()),
                    );
                    return Err(FetchFault::RedirectCycle { url, repeat: next });
                }
                if chain.len() as u32 >= req.policy.max_redirects {
                    events.push(
                        SecurityEvent::blocked(
                            Vulnerability::LinkTraversalTrap,
                            format!(
                                "redirect limit of {} exceeded; chain abandoned",
                                req.policy.max_redirects
                            ),
                        )
                        .with_subject(url.clone()),
                    );
                    return Err(FetchFault::RedirectLimitExceeded {
                        url,
                        limit: req.policy.max_redirects,
                    });
                }
                visited.insert(next.clone());
                chain.push(next.clone());
                current = next;
                continue;
            }

            if !(200..300).contains(&response.status) {
                return Err(FetchFault::HttpError { url: current, status: response.status });
            }

            let meta = CachedMeta {
                final_url: current.clone(),
                status: response.status,
                media_type: response.media_type.clone(),
                redirect_chain: chain.clone(),
            };
            let tee = cache_key.map(|key| CacheFill {
                key,
                cache: self.cache.clone(),
                buf: Vec::new(),
                cap: self.cache.body_cap,
                overflowed: false,
                entry_meta: meta.clone(),
            });
            return Ok(FetchedDocument {
                final_url: current,
                status: response.status,
                media_type: response.media_type,
                redirect_chain: chain,
                from_cache: false,
                body: Body::Live(LiveBody {
                    reader: response.reader,
                    framing: response.framing,
                    tee,
                    finished: false,
                }),
            });
        }
    }

    fn check_scheme(
        &self,
        url: &Iri,
        req: &FetchRequest,
        events: &EventLog,
    ) -> Result<(), FetchFault> {
        let scheme = origin_of(url).scheme;
        if req.policy.scheme_allowed(&scheme) {
            return Ok(());
        }
        events.push(
            SecurityEvent::blocked(
                Vulnerability::IntermediateResultAndQueryLeakage,
                format!("request to '{scheme}' scheme URL blocked"),
            )
            .with_subject(url.clone()),
        );
        Err(FetchFault::SchemeBlocked { url: url.clone(), scheme })
    }

    /// At most one candidate session (the one for the target origin); it
    /// attaches only when allowed by the scoping rule. Refusal is silent by
    /// default: the fetch proceeds unauthenticated with an observed event.
    fn select_session(
        &self,
        url: &Iri,
        req: &FetchRequest,
        events: &EventLog,
    ) -> Option<Session> {
        let candidate = req.sessions.for_origin(&origin_of(url))?;
        if session_allowed(url, &req.referrer, candidate, req.session_scoping) {
            return Some(candidate.clone());
        }
        events.push(
            SecurityEvent::observed(
                Vulnerability::SessionHijacking,
                format!(
                    "session for {} not attached: referrer outside the session origin scope",
                    candidate.origin
                ),
            )
            .with_subject(url.clone()),
        );
        None
    }

    fn fetch_file(&self, url: &Iri) -> Result<FetchedDocument, FetchFault> {
        let parsed = Url::parse(url.as_str()).expect("Iri invariant");
        let path = parsed.to_file_path().map_err(|_| FetchFault::TransportError {
            url: url.clone(),
            message: "file URL has no usable path".into(),
        })?;
        let bytes = std::fs::read(&path).map_err(|e| FetchFault::TransportError {
            url: url.clone(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Ok(FetchedDocument {
            final_url: url.clone(),
            status: 200,
            media_type: "text/turtle".into(),
            redirect_chain: Vec::new(),
            from_cache: false,
            body: Body::Cached { bytes: Arc::new(bytes), pos: 0 },
        })
    }
}

struct RawResponse {
    status: u16,
    media_type: String,
    location: Option<String>,
    framing: Framing,
    reader: BufReader<TcpStream>,
}

/// One GET request/response exchange on a fresh connection.
fn http_get(
    url: &Iri,
    session: Option<&Session>,
    policy: &FetchPolicy,
    deadline: Instant,
) -> Result<RawResponse, FetchFault> {
    let fault = |message: String| FetchFault::TransportError { url: url.clone(), message };

    let parsed = Url::parse(url.as_str()).expect("Iri invariant");
    let host = parsed.host_str().ok_or_else(|| fault("URL has no host".into()))?;
    let port = parsed.port_or_known_default().ok_or_else(|| fault("URL has no port".into()))?;
    if parsed.scheme() != "http" {
        // TLS is out of scope for this engine; https URLs pass the scheme
        // policy but cannot be transported.
        return Err(fault(format!("scheme '{}' has no transport", parsed.scheme())));
    }

    let remaining = || -> Result<Duration, FetchFault> {
        deadline
            .checked_duration_since(Instant::now())
            .filter(|d| !d.is_zero())
            .ok_or_else(|| FetchFault::TransportError {
                url: url.clone(),
                message: "request timeout".into(),
            })
    };

    let addr = (host, port)
        .to_socket_addrs()
        .map_err(|e| fault(format!("resolve: {e}")))?
        .next()
        .ok_or_else(|| fault("no address".into()))?;
    let stream = TcpStream::connect_timeout(&addr, remaining()?)
        .map_err(|e| fault(format!("connect: {e}")))?;
    stream.set_read_timeout(Some(remaining()?)).map_err(|e| fault(e.to_string()))?;
    stream.set_write_timeout(Some(remaining()?)).map_err(|e| fault(e.to_string()))?;

    let mut target = parsed.path().to_string();
    if let Some(query) = parsed.query() {
        target.push('?');
        target.push_str(query);
    }
    let mut request = format!(
        "GET {target} HTTP/1.1\r\nHost: {host}:{port}\r\nAccept: text/turtle\r\nUser-Agent: ltqp/0.1\r\nConnection: close\r\n"
    );
    if let Some(session) = session {
        request.push_str(&format!("Authorization: Bearer {}\r\n", session.token));
    }
    request.push_str("\r\n");

    let mut stream = stream;
    stream.write_all(request.as_bytes()).map_err(|e| fault(format!("send: {e}")))?;

    let mut reader = BufReader::new(stream);
    let mut status_line = String::new();
    reader.read_line(&mut status_line).map_err(|e| fault(format!("status: {e}")))?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fault(format!("malformed status line: {status_line:?}")))?;

    let mut media_type = "application/octet-stream".to_string();
    let mut location = None;
    let mut content_length: Option<u64> = None;
    let mut chunked = false;
    let mut head_bytes = status_line.len();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| fault(format!("headers: {e}")))?;
        if n == 0 {
            return Err(fault("connection closed inside response headers".into()));
        }
        head_bytes += n;
        if head_bytes > policy.header_cap_bytes {
            return Err(fault(format!(
                "response header section exceeds {} bytes",
                policy.header_cap_bytes
            )));
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        let Some((name, value)) = trimmed.split_once(':') else { continue };
        let value = value.trim();
        if name.eq_ignore_ascii_case("content-type") {
            media_type = value.to_string();
        } else if name.eq_ignore_ascii_case("location") {
            location = Some(value.to_string());
        } else if name.eq_ignore_ascii_case("content-length") {
            content_length = value.parse().ok();
        } else if name.eq_ignore_ascii_case("transfer-encoding")
            && value.to_ascii_lowercase().contains("chunked")
        {
            chunked = true;
        }
    }

    let framing = if chunked {
        Framing::Chunked { remaining_in_chunk: 0, done: false }
    } else if let Some(n) = content_length {
        Framing::ContentLength(n)
    } else {
        Framing::Eof
    };

    Ok(RawResponse { status, media_type, location, framing, reader })
}

/// Small helper for the delegation wire protocol: GET a URL and return the
/// whole body as text (capped). No sessions, no cache, no redirects.
pub(crate) fn http_get_text(url: &Iri, policy: &FetchPolicy, cap: usize) -> Result<String, FetchFault> {
    let deadline = Instant::now() + Duration::from_millis(policy.request_timeout_millis);
    let response = http_get(url, None, policy, deadline)?;
    if !(200..300).contains(&response.status) {
        return Err(FetchFault::HttpError { url: url.clone(), status: response.status });
    }
    let mut body = LiveBody { reader: response.reader, framing: response.framing, tee: None, finished: false };
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        let n = body
            .read(&mut chunk)
            .map_err(|e| FetchFault::TransportError { url: url.clone(), message: e.to_string() })?;
        if n == 0 {
            break;
        }
        if buf.len() + n > cap {
            return Err(FetchFault::TransportError {
                url: url.clone(),
                message: format!("response body exceeds {cap} bytes"),
            });
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    String::from_utf8(buf)
        .map_err(|_| FetchFault::TransportError { url: url.clone(), message: "body is not UTF-8".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{serve, Behavior, BodySource, ScenarioManifest};
    use crate::model::Vulnerability;
    use std::collections::BTreeMap;
    use std::path::Path;

    fn manifest(resources: Vec<(&str, Behavior)>) -> ScenarioManifest {
        ScenarioManifest {
            name: "fetch-test".into(),
            vulnerability: Vulnerability::None,
            resources: resources.into_iter().map(|(k, b)| (k.to_string(), b)).collect(),
            auth: BTreeMap::new(),
            metadata: Default::default(),
        }
    }

    fn static_doc(text: &str) -> Behavior {
        Behavior::Static { body: BodySource::inline(text), media_type: "text/turtle".into() }
    }

    fn fetch_request<'a>(
        url: &'a Iri,
        sessions: &'a SessionStore,
        policy: &'a FetchPolicy,
    ) -> FetchRequest<'a> {
        FetchRequest {
            url,
            referrer: Referrer::Seed,
            sessions,
            policy,
            session_scoping: true,
            cache_mode: CacheMode::Off,
            sandbox_id: "q0",
        }
    }

    fn read_all(doc: &mut FetchedDocument) -> Vec<u8> {
        let mut out = Vec::new();
        doc.body.read_to_end(&mut out).unwrap();
        out
    }

    #[test]
    fn plain_get_returns_document() {
        let m = manifest(vec![("/doc", static_doc("<a> <b> <c> ."))]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/doc")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();

        let mut doc = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap();
        assert_eq!(doc.status, 200);
        assert!(!doc.from_cache);
        assert!(doc.redirect_chain.is_empty());
        assert_eq!(doc.final_url, url);
        assert!(doc.media_type.starts_with("text/turtle"));
        assert_eq!(read_all(&mut doc), b"<a> <b> <c> .");
        assert!(events.is_empty());

        let log = handle.log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].method, "GET");
    }

    #[test]
    fn redirects_follow_up_to_the_budget_and_then_fault() {
        // r0 -> r1 -> ... -> r25; with maxRedirects=21 the request for r21
        // is the last one issued (21 redirects followed).
        let mut resources = Vec::new();
        let chain_len = 26;
        for n in 0..chain_len {
            resources.push((
                format!("/r{n}"),
                Behavior::Redirect { status: 302, location: format!("/r{}", n + 1), loop_with: None },
            ));
        }
        resources.push((format!("/r{chain_len}"), static_doc("<a> <b> <c> .")));
        let m = manifest(resources.iter().map(|(k, b)| (k.as_str(), b.clone())).collect());
        let handle = serve(&m, Path::new("."), 0).unwrap();

        let url = Iri::parse(&handle.url("main", "/r0")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();
        let err = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap_err();
        assert!(matches!(err, FetchFault::RedirectLimitExceeded { limit: 21, .. }), "{err}");

        let log = handle.log();
        assert_eq!(log.len(), 22, "initial request plus 21 followed redirects");
        assert_eq!(log.last().unwrap().path_query, "/r21");
        let snapshot = events.snapshot();
        assert_eq!(snapshot.len(), 1);
        assert_eq!(snapshot[0].vulnerability, Vulnerability::LinkTraversalTrap);
    }

    #[test]
    fn short_redirect_chain_lands_and_records_the_chain() {
        let m = manifest(vec![
            ("/a", Behavior::Redirect { status: 301, location: "/b".into(), loop_with: None }),
            ("/b", Behavior::Redirect { status: 302, location: "/c".into(), loop_with: None }),
            ("/c", static_doc("<a> <b> <c> .")),
        ]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/a")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();

        let doc = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap();
        assert_eq!(doc.redirect_chain.len(), 2);
        assert_eq!(doc.final_url.as_str(), handle.url("main", "/c"));
        assert_eq!(doc.final_url, *doc.redirect_chain.last().unwrap());
    }

    #[test]
    fn redirect_cycle_is_detected_by_revisit() {
        let m = manifest(vec![
            ("/ping", Behavior::Redirect { status: 302, location: "/pong".into(), loop_with: None }),
            ("/pong", Behavior::Redirect { status: 302, location: "/ping".into(), loop_with: None }),
        ]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/ping")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();

        let err = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap_err();
        assert!(matches!(err, FetchFault::RedirectCycle { .. }), "{err}");
        // /ping and /pong requested once each; the cycle is caught before
        // re-requesting /ping.
        assert_eq!(handle.log().len(), 2);
    }

    #[test]
    fn file_scheme_is_blocked_by_default() {
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();
        let url = Iri::parse("file:///etc/hosts").unwrap();

        let err = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap_err();
        assert!(matches!(err, FetchFault::SchemeBlocked { .. }));
        let snapshot = events.snapshot();
        assert_eq!(snapshot.len(), 1);
        assert_eq!(snapshot[0].vulnerability, Vulnerability::IntermediateResultAndQueryLeakage);
        assert_eq!(snapshot[0].action, crate::model::EventAction::Blocked);
    }

    #[test]
    fn file_scheme_canary_is_readable_only_when_enabled() {
        // Canary file on the local filesystem: with allowFileScheme=false it
        // must never be read; flipping the policy makes it readable.
        let dir = tempfile::tempdir().unwrap();
        let canary = dir.path().join("canary.ttl");
        std::fs::write(&canary, "<https://a.org/s> <https://a.org/p> \"leaked\" .").unwrap();
        let url = Iri::parse(&format!("file://{}", canary.display())).unwrap();
        let sessions = SessionStore::new();
        let events = EventLog::new();

        let policy = FetchPolicy::default();
        assert!(Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .is_err());

        let policy = FetchPolicy { allow_file_scheme: true, ..FetchPolicy::default() };
        let mut doc = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap();
        assert!(String::from_utf8(read_all(&mut doc)).unwrap().contains("leaked"));
    }

    #[test]
    fn session_scoping_blocks_cross_origin_referrers() {
        let mut m = manifest(vec![("/sparql", static_doc("<a> <b> <c> ."))]);
        m.auth.insert("/sparql".into(), "alices-token".into());
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/sparql")).unwrap();

        let mut sessions = SessionStore::new();
        sessions.insert(Session { origin: origin_of(&url), token: "alices-token".into() });
        let policy = FetchPolicy::default();
        let carol = Origin { scheme: "https".into(), host: "carol.pods.org".into(), port: 443 };

        // Link discovered in Carol's document, scoping on: no token is sent
        // and the endpoint answers 401.
        let events = EventLog::new();
        let req = FetchRequest {
            referrer: Referrer::Document(carol.clone()),
            ..fetch_request(&url, &sessions, &policy)
        };
        let err = Dereferencer::new().dereference(&req, &events).unwrap_err();
        assert!(matches!(err, FetchFault::HttpError { status: 401, .. }), "{err}");
        let log = handle.log();
        assert!(!log[0].has_authorization, "token must not be attached");
        let snapshot = events.snapshot();
        assert_eq!(snapshot.len(), 1);
        assert_eq!(snapshot[0].vulnerability, Vulnerability::SessionHijacking);
        assert_eq!(snapshot[0].action, crate::model::EventAction::Observed);

        // Same fetch with scoping off (exploit mode): the token is attached.
        let events = EventLog::new();
        let req = FetchRequest {
            referrer: Referrer::Document(carol),
            session_scoping: false,
            ..fetch_request(&url, &sessions, &policy)
        };
        let doc = Dereferencer::new().dereference(&req, &events).unwrap();
        assert_eq!(doc.status, 200);
        assert!(handle.log()[1].has_authorization, "exploit mode attaches the token");
        assert!(events.is_empty());
    }

    #[test]
    fn seed_fetch_uses_the_matching_session() {
        let mut m = manifest(vec![("/private", static_doc("<a> <b> <c> ."))]);
        m.auth.insert("/private".into(), "tok".into());
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/private")).unwrap();

        let mut sessions = SessionStore::new();
        sessions.insert(Session { origin: origin_of(&url), token: "tok".into() });
        let policy = FetchPolicy::default();
        let events = EventLog::new();

        let doc = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap();
        assert_eq!(doc.status, 200);
        assert!(handle.log()[0].has_authorization);
    }

    #[test]
    fn cache_hits_require_exact_key_equality() {
        let m = manifest(vec![("/doc", static_doc("<a> <b> <c> ."))]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/doc")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();
        let fetcher = Dereferencer::new();

        let mut request = fetch_request(&url, &sessions, &policy);
        request.cache_mode = CacheMode::PerQuery;
        request.sandbox_id = "qA";

        // First fetch: live; body must be fully consumed to enter the cache.
        let mut doc = fetcher.dereference(&request, &events).unwrap();
        let first_body = read_all(&mut doc);
        assert!(!doc.from_cache);

        // Same url + scope + sandbox: hit, byte-identical replay.
        let mut doc = fetcher.dereference(&request, &events).unwrap();
        assert!(doc.from_cache);
        assert_eq!(read_all(&mut doc), first_body);
        assert_eq!(handle.log().len(), 1, "second fetch served from cache");

        // Different sandbox under perQuery: miss.
        request.sandbox_id = "qB";
        let doc = fetcher.dereference(&request, &events).unwrap();
        assert!(!doc.from_cache);
        assert_eq!(handle.log().len(), 2);
    }

    #[test]
    fn shared_cache_spans_sandboxes_but_not_auth_scopes() {
        let mut m = manifest(vec![("/private", static_doc("<secret> <p> \"s\" ."))]);
        m.auth.insert("/private".into(), "tok".into());
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/private")).unwrap();
        let policy = FetchPolicy::default();
        let events = EventLog::new();
        let fetcher = Dereferencer::new();

        let mut with_session = SessionStore::new();
        with_session.insert(Session { origin: origin_of(&url), token: "tok".into() });

        let mut request = fetch_request(&url, &with_session, &policy);
        request.cache_mode = CacheMode::Shared;
        request.sandbox_id = "q1";
        let mut doc = fetcher.dereference(&request, &events).unwrap();
        read_all(&mut doc);

        // Same auth scope, different query: shared cache hit.
        request.sandbox_id = "q2";
        assert!(fetcher.dereference(&request, &events).unwrap().from_cache);

        // Anonymous re-request of the auth-fetched document: the auth scope
        // differs, so this is a miss and goes to the network (and 401s).
        let anonymous = SessionStore::new();
        let mut request = fetch_request(&url, &anonymous, &policy);
        request.cache_mode = CacheMode::Shared;
        request.sandbox_id = "q3";
        let err = fetcher.dereference(&request, &events).unwrap_err();
        assert!(matches!(err, FetchFault::HttpError { status: 401, .. }));
        assert_eq!(handle.log().len(), 2, "anonymous request must reach the server");
    }

    #[test]
    fn abandoned_bodies_do_not_enter_the_cache() {
        let m = manifest(vec![(
            "/infinite",
            Behavior::InfiniteStream {
                triple_template: "<{origin:main}/s> <{origin:main}/p> \"{n}\" .".into(),
                quads_per_chunk: 32,
            },
        )]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/infinite")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();
        let fetcher = Dereferencer::new();

        let mut request = fetch_request(&url, &sessions, &policy);
        request.cache_mode = CacheMode::Shared;
        let mut doc = fetcher.dereference(&request, &events).unwrap();
        let mut chunk = [0u8; 4096];
        let _ = doc.body.read(&mut chunk).unwrap();
        drop(doc); // abandon mid-body
        assert!(fetcher.cache().is_empty(), "partial bodies must not be cached");
    }

    #[test]
    fn http_error_statuses_are_faults() {
        let m = manifest(vec![("/gone", Behavior::NotFound)]);
        let handle = serve(&m, Path::new("."), 0).unwrap();
        let url = Iri::parse(&handle.url("main", "/gone")).unwrap();
        let sessions = SessionStore::new();
        let policy = FetchPolicy::default();
        let events = EventLog::new();

        let err = Dereferencer::new()
            .dereference(&fetch_request(&url, &sessions, &policy), &events)
            .unwrap_err();
        assert!(matches!(err, FetchFault::HttpError { status: 404, .. }));
    }

    #[test]
    fn get_only_cannot_be_configured_off() {
        let err = serde_json::from_str::<FetchPolicy>(r#"{"getOnly": false}"#).unwrap_err();
        assert!(err.to_string().contains("cannot be disabled"), "{err}");
        let ok: FetchPolicy = serde_json::from_str(r#"{"getOnly": true}"#).unwrap();
        assert!(ok.get_only);
        assert!(FetchPolicy::default().get_only);
    }

    #[test]
    fn chunked_transfer_encoding_is_decoded() {
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 2048];
            let _ = stream.read(&mut buf);
            let response = "HTTP/1.1 200 OK\r\nContent-Type: text/turtle\r\nTransfer-Encoding: chunked\r\n\r\n\
                            a\r\n<a> <b> <c\r\n4\r\n> .\n\r\n0\r\n\r\n";
            stream.write_all(response.as_bytes()).unwrap();
        });
        let url = Iri::parse(&format!("http://127.0.0.1:{}/chunky", addr.port())).unwrap();
        let text = http_get_text(&url, &FetchPolicy::default(), 1 << 20).unwrap();
        assert_eq!(text, "<a> <b> <c> .\n");
    }
}
