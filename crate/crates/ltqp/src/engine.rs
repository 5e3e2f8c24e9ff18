//! Incremental basic-graph-pattern evaluation over the discovered quad
//! stream, provenance-carrying results, and policy-gated hybrid endpoint
//! delegation.
//!
//! Traversal and evaluation run as one pipeline: every admitted quad is
//! probed against the patterns immediately, so results stream out while
//! documents are still being discovered. The final emitted binding set
//! equals the one-shot evaluation of the patterns over the final admitted
//! quad set (set semantics, duplicates suppressed).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditReport, Clock, DocumentRecord, EventLog};
use crate::fetch::{http_get_text, Dereferencer, FetchFault, FetchRequest, Referrer, SessionStore};
use crate::model::{
    origin_of, parse_term_prefix, term_token, Iri, ModelError, SecurityEvent, SourcedQuad, Term,
    Vulnerability,
};
use crate::policy::{link_legitimate, quad_admissible, AdmissionDecision, EngineConfig};
use crate::traverse::{Frontier, LinkQueueEntry, ReachabilityCriterion};
use crate::turtle::{DocumentParser, ParseError, ParseMode, QuadContext};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("query has no seeds")]
    NoSeeds,
    #[error("query has no patterns")]
    NoPatterns,
}

#[derive(Debug, Error)]
pub enum EngineFault {
    #[error("fetch failed: {0}")]
    Fetch(#[from] FetchFault),
    #[error("parse failed: {0}")]
    Parse(#[from] ParseError),
}

/// One position of a triple pattern: a concrete term or a variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternTerm {
    Term(Term),
    Variable(String),
}

impl PatternTerm {
    fn token(&self) -> String {
        match self {
            PatternTerm::Term(t) => term_token(t),
            PatternTerm::Variable(v) => format!("?{v}"),
        }
    }
}

fn valid_variable_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(
        subject: PatternTerm,
        predicate: PatternTerm,
        object: PatternTerm,
    ) -> Result<Self, String> {
        for (position, term) in [("subject", &subject), ("predicate", &predicate), ("object", &object)] {
            match term {
                PatternTerm::Variable(name) if !valid_variable_name(name) => {
                    return Err(format!("invalid variable name in {position}: ?{name}"));
                }
                PatternTerm::Term(Term::Blank(_)) => {
                    return Err(format!(
                        "blank node in {position}: blank nodes are document-scoped and cannot \
                         be referenced from queries"
                    ));
                }
                _ => {}
            }
        }
        if matches!(subject, PatternTerm::Term(Term::Literal(_))) {
            return Err("literal in subject position".into());
        }
        if matches!(&predicate, PatternTerm::Term(t) if !matches!(t, Term::Iri(_))) {
            return Err("pattern predicate must be an IRI or a variable".into());
        }
        Ok(TriplePattern { subject, predicate, object })
    }

    /// Canonical single-line form, also used on the delegation wire.
    pub fn canonical(&self) -> String {
        format!("{} {} {}", self.subject.token(), self.predicate.token(), self.object.token())
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        [&self.subject, &self.predicate, &self.object].into_iter().filter_map(|t| match t {
            PatternTerm::Variable(v) => Some(v.as_str()),
            PatternTerm::Term(_) => None,
        })
    }
}

/// Variable bindings of one result row, keyed by variable name (without
/// the `?`). BTreeMap gives a deterministic column order.
pub type BindingMap = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultRow {
    pub bindings: BindingMap,
    /// Sources of every quad used in the join (extended by the endpoint URL
    /// for rows completed by delegation).
    pub provenance: BTreeSet<Iri>,
    pub emitted_at_millis: u64,
}

impl ResultRow {
    /// Tab-separated `?var token` pairs in variable-name order.
    pub fn render(&self) -> String {
        self.bindings
            .iter()
            .map(|(var, term)| format!("?{var} {}", term_token(term)))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

/// A query endpoint advertised inside a document, recorded regardless of
/// whether policy later admits delegation to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointDescriptor {
    pub endpoint_url: Iri,
    pub discovered_in: Iri,
}

/// A quad whose predicate equals the discovery predicate and whose object
/// is an IRI advertises an endpoint.
pub fn discover_endpoint(quad: &SourcedQuad, discovery_predicate: &Iri) -> Option<EndpointDescriptor> {
    if quad.triple.predicate_iri() != discovery_predicate {
        return None;
    }
    match &quad.triple.object {
        Term::Iri(endpoint) => Some(EndpointDescriptor {
            endpoint_url: endpoint.clone(),
            discovered_in: quad.source.clone(),
        }),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Query text format
// ---------------------------------------------------------------------------

/// A query: seed documents plus a basic graph pattern.
///
/// Text format: one `SEED <iri>` line per seed, then one pattern per line
/// in token syntax with `?var` allowed in any position; `#` starts a
/// comment. A trailing `.` on pattern lines is optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub seeds: Vec<Iri>,
    pub patterns: Vec<TriplePattern>,
    pub criterion: ReachabilityCriterion,
    pub result_limit: Option<usize>,
}

impl Query {
    pub fn new(seeds: Vec<Iri>, patterns: Vec<TriplePattern>) -> Result<Self, QueryError> {
        if seeds.is_empty() {
            return Err(QueryError::NoSeeds);
        }
        if patterns.is_empty() {
            return Err(QueryError::NoPatterns);
        }
        Ok(Query { seeds, patterns, criterion: ReachabilityCriterion::All, result_limit: None })
    }

    pub fn parse(text: &str) -> Result<Self, QueryError> {
        let mut seeds = Vec::new();
        let mut patterns = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            // Whole-line comments only: IRIs routinely contain '#' fragments,
            // so there is no unambiguous inline comment position.
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("SEED") {
                let token = rest.trim();
                let iri = token
                    .strip_prefix('<')
                    .and_then(|t| t.strip_suffix('>'))
                    .ok_or_else(|| QueryError::Malformed {
                        line: line_no,
                        message: format!("SEED expects <iri>, got {token:?}"),
                    })?;
                seeds.push(Iri::parse(iri).map_err(|e| QueryError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?);
                continue;
            }
            patterns.push(parse_pattern_line(line).map_err(|message| QueryError::Malformed {
                line: line_no,
                message,
            })?);
        }
        Query::new(seeds, patterns)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.patterns
            .iter()
            .flat_map(|p| p.variables().map(str::to_string))
            .collect()
    }
}

fn parse_pattern_term(text: &str) -> Result<(PatternTerm, usize), String> {
    if let Some(rest) = text.strip_prefix('?') {
        let len = rest
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        if len == 0 {
            return Err("empty variable name".into());
        }
        return Ok((PatternTerm::Variable(rest[..len].to_string()), 1 + len));
    }
    let (term, consumed) = parse_term_prefix(text).map_err(|e| e.to_string())?;
    Ok((PatternTerm::Term(term), consumed))
}

/// Parses `term term term [.]` with `?var` allowed anywhere.
pub fn parse_pattern_line(line: &str) -> Result<TriplePattern, String> {
    let mut rest = line.trim();
    let mut terms = Vec::with_capacity(3);
    for _ in 0..3 {
        if rest.is_empty() {
            return Err("pattern needs three terms".into());
        }
        let (term, consumed) = parse_pattern_term(rest)?;
        terms.push(term);
        rest = rest[consumed..].trim_start();
    }
    let rest = rest.trim();
    if !(rest.is_empty() || rest == ".") {
        return Err(format!("trailing input after pattern: {rest:?}"));
    }
    let mut terms = terms.into_iter();
    TriplePattern::new(terms.next().unwrap(), terms.next().unwrap(), terms.next().unwrap())
}

// ---------------------------------------------------------------------------
// Binding line wire syntax
// ---------------------------------------------------------------------------

/// `?var token` pairs separated by tabs — one row per line on the
/// delegation wire, same token syntax as everywhere else.
pub fn render_binding_line(bindings: &BindingMap) -> String {
    bindings
        .iter()
        .map(|(var, term)| format!("?{var} {}", term_token(term)))
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn parse_binding_line(line: &str) -> Result<BindingMap, ModelError> {
    let mut out = BindingMap::new();
    for cell in line.split('\t') {
        let cell = cell.trim();
        if cell.is_empty() {
            continue;
        }
        let rest = cell.strip_prefix('?').ok_or(ModelError::MalformedTerm {
            offset: 0,
            message: format!("binding cell must start with ?var: {cell:?}"),
        })?;
        let name_len = rest
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        if name_len == 0 {
            return Err(ModelError::MalformedTerm { offset: 1, message: "empty variable name".into() });
        }
        let name = &rest[..name_len];
        let token = rest[name_len..].trim_start();
        let (term, consumed) = parse_term_prefix(token)?;
        if !token[consumed..].trim().is_empty() {
            return Err(ModelError::MalformedTerm {
                offset: consumed,
                message: format!("trailing input in binding cell: {cell:?}"),
            });
        }
        out.insert(name.to_string(), term);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Incremental join
// ---------------------------------------------------------------------------

fn unify(pattern: &PatternTerm, term: &Term, bindings: &mut BindingMap) -> bool {
    match pattern {
        PatternTerm::Term(expected) => expected == term,
        PatternTerm::Variable(name) => match bindings.get(name) {
            Some(bound) => bound == term,
            None => {
                bindings.insert(name.clone(), term.clone());
                true
            }
        },
    }
}

fn match_pattern(pattern: &TriplePattern, quad: &SourcedQuad, base: &BindingMap) -> Option<BindingMap> {
    let mut bindings = base.clone();
    if unify(&pattern.subject, &quad.triple.subject, &mut bindings)
        && unify(&pattern.predicate, &quad.triple.predicate, &mut bindings)
        && unify(&pattern.object, &quad.triple.object, &mut bindings)
    {
        Some(bindings)
    } else {
        None
    }
}

/// Materialized quad index with incremental nested-loop probing. Each
/// admitted quad is joined against the full index for every pattern it
/// matches; new binding maps are emitted exactly once.
struct JoinState {
    patterns: Vec<TriplePattern>,
    index: Vec<SourcedQuad>,
    /// binding map -> row position in `rows`
    emitted: HashMap<BindingMap, usize>,
    rows: Vec<ResultRow>,
    /// local match count per pattern (drives delegation of unmatched ones)
    match_counts: Vec<usize>,
}

impl JoinState {
    fn new(patterns: Vec<TriplePattern>) -> Self {
        let n = patterns.len();
        JoinState {
            patterns,
            index: Vec::new(),
            emitted: HashMap::new(),
            rows: Vec::new(),
            match_counts: vec![0; n],
        }
    }

    /// Admits a quad into the index and returns indexes of newly emitted
    /// rows (set semantics: re-derivations only extend provenance).
    fn admit(&mut self, quad: SourcedQuad, now_millis: u64) -> Vec<usize> {
        self.index.push(quad);
        let quad_pos = self.index.len() - 1;
        let mut fresh = Vec::new();
        for pattern_idx in 0..self.patterns.len() {
            let quad = self.index[quad_pos].clone();
            let Some(bindings) = match_pattern(&self.patterns[pattern_idx], &quad, &BindingMap::new())
            else {
                continue;
            };
            self.match_counts[pattern_idx] += 1;
            let mut provenance: BTreeSet<Iri> = BTreeSet::new();
            provenance.insert(quad.source.clone());
            self.extend_across(0, pattern_idx, bindings, provenance, now_millis, &mut fresh);
        }
        fresh
    }

    /// Recursively joins the remaining patterns (all but `fixed`) against
    /// the index, starting from the delta binding.
    fn extend_across(
        &mut self,
        next: usize,
        fixed: usize,
        bindings: BindingMap,
        provenance: BTreeSet<Iri>,
        now_millis: u64,
        fresh: &mut Vec<usize>,
    ) {
        if next == self.patterns.len() {
            self.emit(bindings, provenance, now_millis, fresh);
            return;
        }
        if next == fixed {
            return self.extend_across(next + 1, fixed, bindings, provenance, now_millis, fresh);
        }
        for quad_pos in 0..self.index.len() {
            let quad = self.index[quad_pos].clone();
            if let Some(extended) = match_pattern(&self.patterns[next], &quad, &bindings) {
                let mut prov = provenance.clone();
                prov.insert(quad.source.clone());
                self.extend_across(next + 1, fixed, extended, prov, now_millis, fresh);
            }
        }
    }

    fn emit(
        &mut self,
        bindings: BindingMap,
        provenance: BTreeSet<Iri>,
        now_millis: u64,
        fresh: &mut Vec<usize>,
    ) {
        match self.emitted.get(&bindings) {
            Some(&row_idx) => {
                // Duplicate derivation: first derivation's provenance wins
                // for the emitted row; later ones extend the audit trail.
                self.rows[row_idx].provenance.extend(provenance);
            }
            None => {
                let row_idx = self.rows.len();
                self.emitted.insert(bindings.clone(), row_idx);
                self.rows.push(ResultRow { bindings, provenance, emitted_at_millis: now_millis });
                fresh.push(row_idx);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Everything a finished evaluation produced. `admitted_quads` is the
/// final quad index, exposed so tests can replay joins independently.
#[derive(Debug)]
pub struct EvaluationOutcome {
    pub rows: Vec<ResultRow>,
    pub audit: AuditReport,
    pub admitted_quads: Vec<SourcedQuad>,
    pub endpoints: Vec<EndpointDescriptor>,
}

/// The engine: configuration plus the services that outlive one query
/// (document cache, session store). Queries run in their own sandbox;
/// whether cache entries cross sandboxes is the cache mode's call.
pub struct Engine {
    config: EngineConfig,
    dereferencer: Dereferencer,
    sessions: SessionStore,
    query_counter: AtomicU64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Engine {
            config,
            dereferencer: Dereferencer::new(),
            sessions: SessionStore::new(),
            query_counter: AtomicU64::new(0),
        }
    }

    pub fn with_sessions(mut self, sessions: SessionStore) -> Self {
        self.sessions = sessions;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dereferencer(&self) -> &Dereferencer {
        &self.dereferencer
    }

    pub fn evaluate(&self, query: &Query) -> Result<EvaluationOutcome, EngineFault> {
        self.evaluate_streaming(query, &mut |_: &ResultRow| {})
    }

    /// Runs the pipeline, invoking `sink` for every row as it is emitted.
    /// In lenient mode faults become events and the evaluation completes;
    /// in strict mode the first fetch/parse fault aborts.
    pub fn evaluate_streaming(
        &self,
        query: &Query,
        sink: &mut (dyn FnMut(&ResultRow) + Send),
    ) -> Result<EvaluationOutcome, EngineFault> {
        let clock = Clock::new();
        let events = EventLog::new();
        let query_id = format!("q{}", self.query_counter.fetch_add(1, Ordering::SeqCst));

        let seed_urls: HashSet<Iri> = query.seeds.iter().map(|s| s.without_fragment()).collect();
        let mut frontier = Frontier::new(self.config.priority_mode, self.config.budgets.history_enabled);
        for seed in &query.seeds {
            frontier.enqueue(
                LinkQueueEntry::seed(seed),
                true,
                &self.config.budgets,
                &events,
            );
        }

        let state = PipelineState {
            frontier,
            join: JoinState::new(query.patterns.clone()),
            documents: Vec::new(),
            endpoints: Vec::new(),
            endpoint_urls: HashSet::new(),
            attempts: 0,
            in_flight: 0,
            stopped: false,
            fault: None,
        };
        let shared = SharedPipeline {
            state: Mutex::new(state),
            wake: Condvar::new(),
            sink: Mutex::new(sink),
            clock: &clock,
            events: &events,
            seed_urls: &seed_urls,
            query: query,
            engine: self,
            query_id: &query_id,
        };

        let workers = self.config.parallelism.max(1);
        if workers == 1 {
            pipeline_worker(&shared);
        } else {
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| pipeline_worker(&shared));
                }
            });
        }

        let mut state = shared.state.into_inner().expect("pipeline lock");
        if let Some(fault) = state.fault.take() {
            return Err(fault);
        }

        // Delegation phase: patterns with no local matches are offered to
        // discovered endpoints, carrying current intermediate rows.
        if self.config.hybrid_enabled && !state.endpoints.is_empty() {
            self.delegate_unmatched(query, &mut state, &clock, &events, &mut *shared.sink.lock().unwrap());
        }

        let wall_millis = clock.now_millis();
        let rows = state.join.rows;
        let audit = AuditReport {
            query_id,
            config: serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null),
            documents_fetched: state.documents,
            events: events.snapshot(),
            results: rows.len(),
            wall_millis,
            exploit_markers: Vec::new(),
        };
        Ok(EvaluationOutcome {
            rows,
            audit,
            admitted_quads: state.join.index,
            endpoints: state.endpoints,
        })
    }

    /// Bind-join delegation of locally unmatched patterns. The same-origin
    /// gate requires every provenance origin of every carried row to equal
    /// the endpoint origin (or the endpoint to be on the allow-list).
    fn delegate_unmatched(
        &self,
        query: &Query,
        state: &mut PipelineState,
        clock: &Clock,
        events: &EventLog,
        sink: &mut (dyn FnMut(&ResultRow) + Send),
    ) {
        let all_vars = query.variables();
        for pattern_idx in 0..query.patterns.len() {
            if state.join.match_counts[pattern_idx] > 0 {
                continue;
            }
            let pattern = &query.patterns[pattern_idx];

            // Seed bindings: the join of every other pattern over the
            // admitted index — the engine's intermediate results.
            let rest: Vec<TriplePattern> = query
                .patterns
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pattern_idx)
                .map(|(_, p)| p.clone())
                .collect();
            let seed_rows: Vec<(BindingMap, BTreeSet<Iri>)> = if rest.is_empty() {
                vec![(BindingMap::new(), BTreeSet::new())]
            } else {
                join_all(&rest, &state.join.index)
            };
            if seed_rows.is_empty() {
                continue;
            }

            for endpoint in state.endpoints.clone() {
                let endpoint_origin = origin_of(&endpoint.endpoint_url);
                let allow_listed = self.config.endpoint_allow_list.contains(&endpoint_origin);
                let cross_origin_sources: Vec<&Iri> = seed_rows
                    .iter()
                    .flat_map(|(_, prov)| prov.iter())
                    .filter(|src| origin_of(src) != endpoint_origin)
                    .collect();
                if self.config.same_origin_intermediate && !allow_listed && !cross_origin_sources.is_empty()
                {
                    events.push(
                        SecurityEvent::blocked(
                            Vulnerability::IntermediateResultAndQueryLeakage,
                            format!(
                                "delegation of pattern `{}` to {} blocked: intermediate results \
                                 carry sources from other origins",
                                pattern.canonical(),
                                endpoint.endpoint_url
                            ),
                        )
                        .with_subject(endpoint.endpoint_url.clone()),
                    );
                    continue;
                }

                let response = match call_endpoint(
                    &endpoint.endpoint_url,
                    pattern,
                    &seed_rows,
                    &self.config,
                ) {
                    Ok(rows) => rows,
                    Err(fault) => {
                        events.push(
                            SecurityEvent::observed(
                                Vulnerability::None,
                                format!(
                                    "endpoint {} unavailable, continuing traversal-only: {fault}",
                                    endpoint.endpoint_url
                                ),
                            )
                            .with_subject(endpoint.endpoint_url.clone()),
                        );
                        continue;
                    }
                };

                let now = clock.now_millis();
                for endpoint_bindings in &response {
                    for (seed_bindings, seed_prov) in &seed_rows {
                        let Some(merged) = merge_bindings(seed_bindings, endpoint_bindings) else {
                            continue;
                        };
                        if !all_vars.iter().all(|v| merged.contains_key(v)) {
                            continue;
                        }
                        let mut provenance = seed_prov.clone();
                        provenance.insert(endpoint.endpoint_url.clone());
                        let mut fresh = Vec::new();
                        state.join.emit(merged, provenance, now, &mut fresh);
                        for row_idx in fresh {
                            sink(&state.join.rows[row_idx]);
                        }
                    }
                }
            }
        }
    }
}

fn merge_bindings(a: &BindingMap, b: &BindingMap) -> Option<BindingMap> {
    let mut merged = a.clone();
    for (var, term) in b {
        match merged.get(var) {
            Some(existing) if existing != term => return None,
            _ => {
                merged.insert(var.clone(), term.clone());
            }
        }
    }
    Some(merged)
}

/// One-shot nested-loop join of `patterns` over `index`, with provenance.
fn join_all(patterns: &[TriplePattern], index: &[SourcedQuad]) -> Vec<(BindingMap, BTreeSet<Iri>)> {
    let mut rows = vec![(BindingMap::new(), BTreeSet::new())];
    for pattern in patterns {
        let mut next = Vec::new();
        for (bindings, prov) in &rows {
            for quad in index {
                if let Some(extended) = match_pattern(pattern, quad, bindings) {
                    let mut prov = prov.clone();
                    prov.insert(quad.source.clone());
                    next.push((extended, prov));
                }
            }
        }
        rows = next;
        if rows.is_empty() {
            break;
        }
    }
    // Set semantics over binding maps.
    let mut seen: HashMap<BindingMap, BTreeSet<Iri>> = HashMap::new();
    let mut order: Vec<BindingMap> = Vec::new();
    for (bindings, prov) in rows {
        match seen.get_mut(&bindings) {
            Some(existing) => existing.extend(prov),
            None => {
                order.push(bindings.clone());
                seen.insert(bindings, prov);
            }
        }
    }
    order
        .into_iter()
        .map(|b| {
            let prov = seen.remove(&b).unwrap_or_default();
            (b, prov)
        })
        .collect()
}

/// GET `<endpoint>?pattern=...&bindings=...`; response body is binding
/// lines in token syntax.
fn call_endpoint(
    endpoint: &Iri,
    pattern: &TriplePattern,
    seed_rows: &[(BindingMap, BTreeSet<Iri>)],
    config: &EngineConfig,
) -> Result<Vec<BindingMap>, FetchFault> {
    let binding_lines = seed_rows
        .iter()
        .map(|(b, _)| render_binding_line(b))
        .collect::<Vec<_>>()
        .join("\n");
    let url = format!(
        "{}?pattern={}&bindings={}",
        endpoint.as_str(),
        utf8_percent_encode(&pattern.canonical(), NON_ALPHANUMERIC),
        utf8_percent_encode(&binding_lines, NON_ALPHANUMERIC),
    );
    let url = Iri::parse(&url).map_err(|e| FetchFault::TransportError {
        url: endpoint.clone(),
        message: e.to_string(),
    })?;
    let body = http_get_text(&url, &config.fetch_policy, 4 * 1024 * 1024)?;
    let mut rows = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_binding_line(line) {
            Ok(bindings) => rows.push(bindings),
            Err(_) => {
                // Malformed endpoint rows are dropped, not fatal.
                continue;
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineState {
    frontier: Frontier,
    join: JoinState,
    documents: Vec<DocumentRecord>,
    endpoints: Vec<EndpointDescriptor>,
    endpoint_urls: HashSet<Iri>,
    attempts: usize,
    in_flight: usize,
    stopped: bool,
    fault: Option<EngineFault>,
}

struct SharedPipeline<'a> {
    state: Mutex<PipelineState>,
    wake: Condvar,
    sink: Mutex<&'a mut (dyn FnMut(&ResultRow) + Send)>,
    clock: &'a Clock,
    events: &'a EventLog,
    seed_urls: &'a HashSet<Iri>,
    query: &'a Query,
    engine: &'a Engine,
    query_id: &'a str,
}

impl PipelineState {
    fn result_limit_reached(&self, query: &Query) -> bool {
        query.result_limit.is_some_and(|limit| self.join.rows.len() >= limit)
    }
}

/// One fetch worker: pops entries, dereferences and parses them, feeding
/// quads through admission, discovery, join probing and link extraction.
/// Quad admission and join probing are serialized by the state lock.
fn pipeline_worker(shared: &SharedPipeline) {
    let engine = shared.engine;
    let config = &engine.config;
    loop {
        // Claim the next entry, or finish when the frontier is drained and
        // nothing is in flight.
        let entry = {
            let mut state = shared.state.lock().expect("pipeline lock");
            loop {
                if state.stopped || state.fault.is_some() || state.result_limit_reached(shared.query) {
                    state.stopped = true;
                    shared.wake.notify_all();
                    return;
                }
                if state.attempts >= config.budgets.max_documents {
                    if state.frontier.pending_len() > 0 {
                        shared.events.push(SecurityEvent::observed(
                            Vulnerability::LinkTraversalTrap,
                            format!(
                                "document budget of {} exhausted with {} links still pending",
                                config.budgets.max_documents,
                                state.frontier.pending_len()
                            ),
                        ));
                    }
                    state.stopped = true;
                    shared.wake.notify_all();
                    return;
                }
                if let Some(entry) = state.frontier.pop() {
                    state.attempts += 1;
                    state.in_flight += 1;
                    break entry;
                }
                if state.in_flight == 0 {
                    state.stopped = true;
                    shared.wake.notify_all();
                    return;
                }
                state = shared.wake.wait(state).expect("pipeline lock");
            }
        };

        let worker_result = process_entry(shared, &entry);

        let mut state = shared.state.lock().expect("pipeline lock");
        state.in_flight -= 1;
        if let Err(fault) = worker_result {
            if matches!(config.mode, ParseMode::Strict) && state.fault.is_none() {
                state.fault = Some(fault);
                state.stopped = true;
            }
        }
        shared.wake.notify_all();
    }
}

/// Fetches and parses one document. Returns `Err` only for faults that
/// strict mode must propagate; lenient-mode handling happens inline.
fn process_entry(shared: &SharedPipeline, entry: &LinkQueueEntry) -> Result<(), EngineFault> {
    let engine = shared.engine;
    let config = &engine.config;
    let events = shared.events;

    let referrer = match &entry.via {
        None => Referrer::Seed,
        Some(via) if shared.seed_urls.contains(via) => Referrer::Seed,
        Some(via) => Referrer::Document(origin_of(via)),
    };

    let request = FetchRequest {
        url: &entry.target,
        referrer,
        sessions: &engine.sessions,
        policy: &config.fetch_policy,
        session_scoping: config.session_scoping,
        cache_mode: config.cache_mode,
        sandbox_id: shared.query_id,
    };

    let document = match engine.dereferencer.dereference(&request, events) {
        Ok(doc) => doc,
        Err(fault) => {
            let status = match &fault {
                FetchFault::HttpError { status, .. } => *status,
                _ => 0,
            };
            // Scheme and redirect blocks have already been reported by the
            // dereferencer; protocol-level document failures are the
            // document-corruption class.
            if matches!(fault, FetchFault::HttpError { .. } | FetchFault::TransportError { .. }) {
                events.push(
                    SecurityEvent::warned(
                        Vulnerability::DocumentCorruption,
                        format!("document unavailable, continuing without it: {fault}"),
                    )
                    .with_subject(entry.target.clone()),
                );
            }
            record_document(shared, entry, &entry.target, status, 0, false);
            return Err(EngineFault::Fetch(fault));
        }
    };

    let final_url = document.final_url.clone();
    let from_cache = document.from_cache;
    let status = document.status;

    if !document.media_type.starts_with("text/turtle") {
        events.push(
            SecurityEvent::observed(
                Vulnerability::ArbitraryCodeExecution,
                format!(
                    "unsupported content type '{}' ignored; body not parsed and never executed",
                    document.media_type
                ),
            )
            .with_subject(final_url.clone()),
        );
        record_document(shared, entry, &final_url, status, 0, from_cache);
        return Ok(());
    }

    let ctx = QuadContext {
        source: final_url.clone(),
        depth: entry.depth,
        fetched_at_millis: shared.clock.now_millis(),
    };
    let mut parser = DocumentParser::new(
        document.body,
        final_url.clone(),
        &config.parse_limits,
        config.mode,
        ctx,
    );

    let mut extractor = IncrementalExtractor::new(shared.query.criterion.clone());
    let strict_failure = loop {
        match parser.next_quad() {
            Ok(Some(quad)) => {
                let admission = quad_admissible(&quad, &config.content_policy);
                if let AdmissionDecision::Rejected { rule } = &admission {
                    events.push(
                        SecurityEvent::blocked(
                            Vulnerability::UnauthorizedStatements,
                            format!("statement rejected by {rule}: {}", quad.canonical_line()),
                        )
                        .with_subject(final_url.clone()),
                    );
                }
                let admitted = admission.is_admitted();

                // Endpoint adverts are recorded regardless of admission.
                if quad.triple.predicate_iri() == &config.endpoint_discovery_predicate {
                    match discover_endpoint(&quad, &config.endpoint_discovery_predicate) {
                        Some(descriptor) => {
                            let mut state = shared.state.lock().expect("pipeline lock");
                            if state.endpoint_urls.insert(descriptor.endpoint_url.clone()) {
                                state.endpoints.push(descriptor);
                            }
                        }
                        None => {
                            events.push(
                                SecurityEvent::observed(
                                    Vulnerability::None,
                                    format!(
                                        "malformed endpoint advertisement ignored: {}",
                                        quad.canonical_line()
                                    ),
                                )
                                .with_subject(final_url.clone()),
                            );
                        }
                    }
                }

                let links = extractor.offer(&quad, admitted);

                let mut state = shared.state.lock().expect("pipeline lock");
                if admitted {
                    let fresh = state.join.admit(quad, shared.clock.now_millis());
                    if !fresh.is_empty() {
                        let mut sink = shared.sink.lock().expect("sink lock");
                        for row_idx in fresh {
                            sink(&state.join.rows[row_idx]);
                        }
                    }
                }
                for link in links {
                    offer_link(engine, &mut state, link, events);
                }
                if state.result_limit_reached(shared.query) {
                    break None;
                }
            }
            Ok(None) => break None,
            Err(err) => break Some(err),
        }
    };

    let summary = parser.summary();
    for event in summary.events {
        events.push(event);
    }
    record_document(shared, entry, &final_url, status, summary.bytes_consumed, from_cache);

    match strict_failure {
        Some(err) => Err(EngineFault::Parse(err)),
        None => Ok(()),
    }
}

fn offer_link(
    engine: &Engine,
    state: &mut PipelineState,
    link: LinkQueueEntry,
    events: &EventLog,
) {
    let config = &engine.config;
    let scheme = origin_of(&link.target).scheme;
    if !config.fetch_policy.scheme_allowed(&scheme) {
        events.push(
            SecurityEvent::blocked(
                Vulnerability::IntermediateResultAndQueryLeakage,
                format!("link to '{scheme}' scheme URL dropped before enqueue"),
            )
            .with_subject(link.target.clone()),
        );
        return;
    }
    let legitimate = link_legitimate(&link, config.legitimacy_heuristic);
    state.frontier.enqueue(link, legitimate, &config.budgets, events);
}

fn record_document(
    shared: &SharedPipeline,
    entry: &LinkQueueEntry,
    url: &Iri,
    status: u16,
    bytes: u64,
    from_cache: bool,
) {
    let mut state = shared.state.lock().expect("pipeline lock");
    state.documents.push(DocumentRecord {
        url: url.clone(),
        status,
        bytes,
        from_cache,
        depth: entry.depth,
    });
}

/// Per-document link extraction, one quad at a time, with the same
/// semantics as [`crate::traverse::extract_links`]: fragment-stripped
/// dedup per target; a target is re-offered if a later quad makes its
/// production admissible (the frontier dedups the entry but records the
/// now-legitimate backlink).
struct IncrementalExtractor {
    criterion: ReachabilityCriterion,
    seen: HashMap<String, bool>,
}

impl IncrementalExtractor {
    fn new(criterion: ReachabilityCriterion) -> Self {
        IncrementalExtractor { criterion, seen: HashMap::new() }
    }

    fn offer(&mut self, quad: &SourcedQuad, admissible: bool) -> Vec<LinkQueueEntry> {
        let mut out = Vec::new();
        let mut add = |iri: &Iri, seen: &mut HashMap<String, bool>| {
            let target = iri.without_fragment();
            match seen.get(target.as_str()) {
                Some(true) => return,
                Some(false) if !admissible => return,
                _ => {}
            }
            seen.insert(target.as_str().to_string(), admissible);
            out.push(LinkQueueEntry {
                target,
                depth: quad.depth + 1,
                via: Some(quad.source.clone()),
                predicate: Some(quad.triple.predicate_iri().clone()),
                priority: 0,
                produced_by_admissible: admissible,
            });
        };
        match &self.criterion {
            ReachabilityCriterion::All => {
                if let Term::Iri(iri) = &quad.triple.subject {
                    add(iri, &mut self.seen);
                }
                if let Term::Iri(iri) = &quad.triple.object {
                    add(iri, &mut self.seen);
                }
            }
            ReachabilityCriterion::Match(predicates) => {
                if predicates.contains(quad.triple.predicate_iri()) {
                    if let Term::Iri(iri) = &quad.triple.object {
                        add(iri, &mut self.seen);
                    }
                }
            }
        }
        out
    }
}
