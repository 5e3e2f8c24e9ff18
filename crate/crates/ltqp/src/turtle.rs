//! Streaming parser for the document syntax, with hard resource guards and
//! non-crashing error isolation.
//!
//! The accepted grammar is deliberately small: N-Triples statements, plus
//! `@base <iri> .` and `@prefix p: <iri> .` directives, prefixed names in
//! any term position, `#` comments, and relative IRIs resolved against the
//! effective base. Nothing else — no `;`/`,` abbreviations, no `a` keyword,
//! no blank-node property lists, no collections, no multi-line strings.
//!
//! Input may be unbounded. Consumption stops at whichever comes first:
//! end of input, the document byte limit, the per-document quad cap, the
//! parse time budget, or a syntax error. In lenient mode every early stop
//! is reported as a security event ("System hogging" for limit stops,
//! "Document Corruption" for syntax errors) and the quads emitted so far
//! remain valid; strict mode raises instead.

use std::collections::HashMap;
use std::io::Read;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    resolve_relative, unescape_quoted, Iri, Literal, ModelError, SecurityEvent, SourcedQuad, Term,
    Triple, Vulnerability,
};

/// Hard limits for one document parse. All limits are strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ParseLimits {
    pub max_iri_bytes: usize,
    pub max_literal_bytes: usize,
    pub max_document_bytes: u64,
    pub max_quads_per_document: usize,
    pub parse_budget_millis: u64,
}

impl Default for ParseLimits {
    fn default() -> Self {
        ParseLimits {
            max_iri_bytes: 1_048_576,
            max_literal_bytes: 1_048_576,
            max_document_bytes: 16_777_216,
            max_quads_per_document: 100_000,
            parse_budget_millis: 10_000,
        }
    }
}

impl ParseLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iri_bytes == 0
            || self.max_literal_bytes == 0
            || self.max_document_bytes == 0
            || self.max_quads_per_document == 0
            || self.parse_budget_millis == 0
        {
            return Err("parse limits must be strictly positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    Lenient,
}

/// Provenance stamped onto every quad this parse emits.
#[derive(Debug, Clone)]
pub struct QuadContext {
    pub source: Iri,
    pub depth: u32,
    pub fetched_at_millis: u64,
}

impl QuadContext {
    pub fn direct(source: Iri) -> Self {
        QuadContext { source, depth: 0, fetched_at_millis: 0 }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: u64, message: String },
    #[error("{limit} limit exceeded at byte {offset}")]
    LimitExceeded { limit: &'static str, offset: u64 },
    #[error("read error at byte {offset}: {message}")]
    Io { offset: u64, message: String },
}

/// The result of parsing one document to completion (or to an early stop).
#[derive(Debug)]
pub struct ParseOutcome {
    pub quads: Vec<SourcedQuad>,
    pub events: Vec<SecurityEvent>,
    pub truncated: bool,
    pub bytes_consumed: u64,
}

/// Summary available from a streaming parser once it has finished.
#[derive(Debug, Clone)]
pub struct ParseSummary {
    pub events: Vec<SecurityEvent>,
    pub truncated: bool,
    pub bytes_consumed: u64,
    pub quads_emitted: usize,
}

/// Parses a whole document, collecting emitted quads. Streaming callers
/// (the engine) drive [`DocumentParser`] directly instead.
pub fn parse_document_stream<R: Read>(
    input: R,
    base: Iri,
    limits: &ParseLimits,
    mode: ParseMode,
    ctx: QuadContext,
) -> Result<ParseOutcome, ParseError> {
    let mut parser = DocumentParser::new(input, base, limits, mode, ctx);
    let mut quads = Vec::new();
    while let Some(quad) = parser.next_quad()? {
        quads.push(quad);
    }
    let summary = parser.summary();
    Ok(ParseOutcome {
        quads,
        events: summary.events,
        truncated: summary.truncated,
        bytes_consumed: summary.bytes_consumed,
    })
}

/// Human-readable description of the accepted syntax.
pub fn grammar() -> &'static str {
    "document        := (directive | statement | comment)*\n\
     directive       := '@base' IRIREF '.' | '@prefix' PNAME ':' IRIREF '.'\n\
     statement       := term term term '.'\n\
     term            := IRIREF | PREFIXEDNAME | BLANK | LITERAL\n\
     IRIREF          := '<' iri-characters '>'    (relative IRIs resolve against the effective base)\n\
     PREFIXEDNAME    := prefix ':' local          (prefix, local: letters, digits, '_', '-'; local also '%')\n\
     BLANK           := '_:' label                (scoped to the containing document)\n\
     LITERAL         := '\"' chars '\"' ('^^' (IRIREF | PREFIXEDNAME) | '@' langtag)?\n\
     comment         := '#' to end of line\n\
     Not accepted: ';' and ',' abbreviations, the 'a' keyword, numeric/boolean shorthands,\n\
     blank-node property lists, collections, multi-line strings."
}

// ---------------------------------------------------------------------------
// Byte source: counts consumption, enforces the document byte limit
// ---------------------------------------------------------------------------

const READ_CHUNK: usize = 8192;
/// Distinct resolved IRIs interned per document before falling back to
/// fresh allocations; bounds interner memory against IRI-churn inputs.
const INTERN_CAP: usize = 4096;

enum Stop {
    DocBytes,
    Budget,
    TokenLimit { limit: &'static str },
    QuadCap,
    Syntax { offset: u64, message: String },
    Io { offset: u64, message: String },
}

struct ByteSource<R: Read> {
    inner: R,
    buf: Vec<u8>,
    pos: usize,
    len: usize,
    consumed: u64,
    max_bytes: u64,
    deadline: Instant,
    checked_at: u64,
}

impl<R: Read> ByteSource<R> {
    fn new(inner: R, max_bytes: u64, budget: Duration) -> Self {
        ByteSource {
            inner,
            buf: vec![0; READ_CHUNK],
            pos: 0,
            len: 0,
            consumed: 0,
            max_bytes,
            deadline: Instant::now() + budget,
            checked_at: 0,
        }
    }

    /// Returns the next byte without consuming it, or `None` at end of
    /// input. Stops when another byte would exceed the document limit or
    /// the time budget has run out.
    fn peek(&mut self) -> Result<Option<u8>, Stop> {
        // Check the clock at most every 4 KiB so unbounded tokens cannot
        // outrun the budget between statement boundaries.
        if self.consumed.saturating_sub(self.checked_at) >= 4096 {
            self.checked_at = self.consumed;
            if Instant::now() >= self.deadline {
                return Err(Stop::Budget);
            }
        }
        if self.pos == self.len {
            let n = self
                .inner
                .read(&mut self.buf)
                .map_err(|e| Stop::Io { offset: self.consumed, message: e.to_string() })?;
            if n == 0 {
                return Ok(None);
            }
            self.pos = 0;
            self.len = n;
        }
        if self.consumed >= self.max_bytes {
            return Err(Stop::DocBytes);
        }
        Ok(Some(self.buf[self.pos]))
    }

    fn bump(&mut self) {
        debug_assert!(self.pos < self.len);
        self.pos += 1;
        self.consumed += 1;
    }

    fn next(&mut self) -> Result<Option<u8>, Stop> {
        let b = self.peek()?;
        if b.is_some() {
            self.bump();
        }
        Ok(b)
    }

    fn check_budget(&mut self) -> Result<(), Stop> {
        if Instant::now() >= self.deadline {
            return Err(Stop::Budget);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum DtRef {
    Iri(String),
    PName { prefix: String, local: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    IriRef(String),
    PName { prefix: String, local: String },
    Blank(String),
    Literal { lexical: String, datatype: Option<DtRef>, lang: Option<String> },
    Dot,
    AtBase,
    AtPrefix,
    Eof,
}

struct Lexer<R: Read> {
    src: ByteSource<R>,
    max_iri_bytes: usize,
    max_literal_bytes: usize,
    pending: Option<Token>,
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n')
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'%'
}

impl<R: Read> Lexer<R> {
    fn syntax(&self, message: impl Into<String>) -> Stop {
        Stop::Syntax { offset: self.src.consumed, message: message.into() }
    }

    fn skip_ws_and_comments(&mut self) -> Result<(), Stop> {
        loop {
            match self.src.peek()? {
                Some(b) if is_ws(b) => self.src.bump(),
                Some(b'#') => {
                    self.src.bump();
                    loop {
                        match self.src.next()? {
                            Some(b'\n') | None => break,
                            Some(_) => {}
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn next_token(&mut self) -> Result<(Token, u64), Stop> {
        if let Some(tok) = self.pending.take() {
            return Ok((tok, self.src.consumed));
        }
        self.skip_ws_and_comments()?;
        self.src.check_budget()?;
        let start = self.src.consumed;
        let token = match self.src.peek()? {
            None => Token::Eof,
            Some(b'<') => {
                self.src.bump();
                Token::IriRef(self.scan_iri_body()?)
            }
            Some(b'"') => {
                self.src.bump();
                self.scan_literal()?
            }
            Some(b'.') => {
                self.src.bump();
                Token::Dot
            }
            Some(b'_') => {
                self.src.bump();
                if self.src.peek()? != Some(b':') {
                    return Err(self.syntax("expected ':' after '_' in blank node label"));
                }
                self.src.bump();
                let label = self.scan_name_bytes()?;
                if label.is_empty() {
                    return Err(self.syntax("empty blank node label"));
                }
                Token::Blank(label)
            }
            Some(b'@') => {
                self.src.bump();
                let word = self.scan_name_bytes()?;
                match word.as_str() {
                    "base" => Token::AtBase,
                    "prefix" => Token::AtPrefix,
                    other => {
                        return Err(self.syntax(format!("unknown directive '@{other}'")));
                    }
                }
            }
            Some(_) => self.scan_pname()?,
        };
        Ok((token, start))
    }

    /// Scans the body of an IRI reference after the opening '<'. Enforces
    /// the IRI byte limit while scanning so memory stays bounded no matter
    /// how long the input token is.
    fn scan_iri_body(&mut self) -> Result<String, Stop> {
        let mut bytes = Vec::new();
        loop {
            match self.src.next()? {
                None => return Err(self.syntax("unterminated IRI (missing '>')")),
                Some(b'>') => break,
                Some(b) if b == b' ' || b < 0x20 => {
                    return Err(self.syntax(format!("illegal byte 0x{b:02X} in IRI")));
                }
                Some(b) => {
                    if bytes.len() >= self.max_iri_bytes {
                        return Err(Stop::TokenLimit { limit: "IRI length" });
                    }
                    bytes.push(b);
                }
            }
        }
        let raw = String::from_utf8(bytes)
            .map_err(|_| self.syntax("IRI contains invalid UTF-8"))?;
        if raw.contains('\\') {
            // \uXXXX / \UXXXXXXXX escapes; delegate to the shared token code.
            crate::model::parse_term(&format!("<{raw}>"))
                .ok()
                .and_then(|t| t.as_iri().map(|i| i.as_str().to_string()))
                .ok_or_else(|| self.syntax("invalid escape in IRI"))
        } else {
            Ok(raw)
        }
    }

    /// Scans a literal after the opening '"', including any `^^` datatype
    /// or `@lang` suffix.
    fn scan_literal(&mut self) -> Result<Token, Stop> {
        let mut bytes = vec![b'"'];
        loop {
            match self.src.next()? {
                None => return Err(self.syntax("unterminated literal (missing '\"')")),
                Some(b) => {
                    if bytes.len() > self.max_literal_bytes {
                        return Err(Stop::TokenLimit { limit: "literal length" });
                    }
                    bytes.push(b);
                    match b {
                        b'"' => break,
                        b'\\' => {
                            // Consume the escaped byte so an escaped quote
                            // does not terminate the scan.
                            match self.src.next()? {
                                None => {
                                    return Err(self.syntax("unterminated escape in literal"))
                                }
                                Some(e) => bytes.push(e),
                            }
                        }
                        b'\n' | b'\r' => {
                            return Err(self.syntax("literal must not contain a raw newline"))
                        }
                        _ => {}
                    }
                }
            }
        }
        let raw = String::from_utf8(bytes)
            .map_err(|_| self.syntax("literal contains invalid UTF-8"))?;
        let (lexical, end) = unescape_quoted(&raw).map_err(|e| match e {
            ModelError::MalformedTerm { message, .. } => self.syntax(message),
            other => self.syntax(other.to_string()),
        })?;
        debug_assert_eq!(end, raw.len());

        // Optional datatype / language suffix.
        match self.src.peek()? {
            Some(b'^') => {
                self.src.bump();
                if self.src.next()? != Some(b'^') {
                    return Err(self.syntax("expected '^^' before datatype"));
                }
                match self.src.peek()? {
                    Some(b'<') => {
                        self.src.bump();
                        let dt = self.scan_iri_body()?;
                        Ok(Token::Literal { lexical, datatype: Some(DtRef::Iri(dt)), lang: None })
                    }
                    _ => {
                        let (prefix, local) = match self.scan_pname()? {
                            Token::PName { prefix, local } => (prefix, local),
                            _ => return Err(self.syntax("expected datatype IRI or prefixed name")),
                        };
                        Ok(Token::Literal {
                            lexical,
                            datatype: Some(DtRef::PName { prefix, local }),
                            lang: None,
                        })
                    }
                }
            }
            Some(b'@') => {
                self.src.bump();
                let lang = self.scan_name_bytes()?;
                if lang.is_empty() || !lang.as_bytes()[0].is_ascii_alphabetic() {
                    return Err(self.syntax("invalid language tag"));
                }
                Ok(Token::Literal { lexical, datatype: None, lang: Some(lang) })
            }
            _ => Ok(Token::Literal { lexical, datatype: None, lang: None }),
        }
    }

    /// Scans a run of name bytes (letters, digits, '_', '-', '%').
    fn scan_name_bytes(&mut self) -> Result<String, Stop> {
        let mut out = Vec::new();
        while let Some(b) = self.src.peek()? {
            if is_name_byte(b) {
                if out.len() >= self.max_iri_bytes {
                    return Err(Stop::TokenLimit { limit: "IRI length" });
                }
                out.push(b);
                self.src.bump();
            } else {
                break;
            }
        }
        Ok(String::from_utf8(out).expect("name bytes are ASCII"))
    }

    /// Scans a prefixed name `prefix:local`. The local part must not
    /// contain '.', which keeps the statement terminator unambiguous.
    fn scan_pname(&mut self) -> Result<Token, Stop> {
        let prefix = self.scan_name_bytes()?;
        if self.src.peek()? != Some(b':') {
            let found = match self.src.peek()? {
                Some(b) if b.is_ascii_graphic() => format!("'{}'", b as char),
                Some(b) => format!("byte 0x{b:02X}"),
                None => "end of input".into(),
            };
            if prefix.is_empty() {
                return Err(self.syntax(format!("unexpected {found}")));
            }
            return Err(self.syntax(format!(
                "bare name '{prefix}' is not valid here (the 'a' keyword and \
                 numeric/boolean shorthands are not supported)"
            )));
        }
        self.src.bump();
        let local = self.scan_name_bytes()?;
        Ok(Token::PName { prefix, local })
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// A single-use streaming parser for one document. Confined to one task;
/// run several instances for concurrent parses.
pub struct DocumentParser<R: Read> {
    lexer: Lexer<R>,
    mode: ParseMode,
    ctx: QuadContext,
    base: Iri,
    prefixes: HashMap<String, String>,
    interned: HashMap<String, Iri>,
    max_iri_bytes: usize,
    max_quads: usize,
    quads_emitted: usize,
    events: Vec<SecurityEvent>,
    truncated: bool,
    done: bool,
    error: Option<ParseError>,
}

impl<R: Read> DocumentParser<R> {
    pub fn new(input: R, base: Iri, limits: &ParseLimits, mode: ParseMode, ctx: QuadContext) -> Self {
        let src = ByteSource::new(
            input,
            limits.max_document_bytes,
            Duration::from_millis(limits.parse_budget_millis),
        );
        DocumentParser {
            lexer: Lexer {
                src,
                max_iri_bytes: limits.max_iri_bytes,
                max_literal_bytes: limits.max_literal_bytes,
                pending: None,
            },
            mode,
            ctx,
            base: base.clone(),
            prefixes: HashMap::new(),
            interned: HashMap::new(),
            max_iri_bytes: limits.max_iri_bytes,
            max_quads: limits.max_quads_per_document,
            quads_emitted: 0,
            events: Vec::new(),
            truncated: false,
            done: false,
            error: None,
        }
    }

    /// Next quad, `Ok(None)` when parsing has finished. In strict mode an
    /// early stop yields `Err`; in lenient mode it records an event and
    /// finishes cleanly.
    pub fn next_quad(&mut self) -> Result<Option<SourcedQuad>, ParseError> {
        if self.done {
            return Ok(None);
        }
        match self.parse_next() {
            Ok(Some(quad)) => {
                self.quads_emitted += 1;
                if self.quads_emitted >= self.max_quads {
                    self.stop(Stop::QuadCap);
                    // The cap quad itself is still valid output.
                    return match (self.mode, self.error.take()) {
                        (ParseMode::Strict, Some(err)) => Err(err),
                        _ => Ok(Some(quad)),
                    };
                }
                Ok(Some(quad))
            }
            Ok(None) => {
                self.done = true;
                Ok(None)
            }
            Err(stop) => {
                self.stop(stop);
                match (self.mode, self.error.take()) {
                    (ParseMode::Strict, Some(err)) => Err(err),
                    _ => Ok(None),
                }
            }
        }
    }

    pub fn summary(&self) -> ParseSummary {
        ParseSummary {
            events: self.events.clone(),
            truncated: self.truncated,
            bytes_consumed: self.lexer.src.consumed,
            quads_emitted: self.quads_emitted,
        }
    }

    fn stop(&mut self, cause: Stop) {
        self.done = true;
        self.truncated = true;
        let offset = self.lexer.src.consumed;
        let (event, error) = match cause {
            Stop::DocBytes => (
                SecurityEvent::blocked(
                    Vulnerability::SystemHogging,
                    format!("document byte limit reached after {offset} bytes; parsing stopped"),
                ),
                ParseError::LimitExceeded { limit: "document byte", offset },
            ),
            Stop::Budget => (
                SecurityEvent::blocked(
                    Vulnerability::SystemHogging,
                    format!("parse time budget exhausted after {offset} bytes; parsing stopped"),
                ),
                ParseError::LimitExceeded { limit: "parse time", offset },
            ),
            Stop::TokenLimit { limit } => (
                SecurityEvent::blocked(
                    Vulnerability::SystemHogging,
                    format!("{limit} limit exceeded at byte {offset}; parsing stopped"),
                ),
                ParseError::LimitExceeded { limit, offset },
            ),
            Stop::QuadCap => (
                SecurityEvent::blocked(
                    Vulnerability::SystemHogging,
                    format!("per-document quad cap reached ({} quads); parsing stopped", self.quads_emitted),
                ),
                ParseError::LimitExceeded { limit: "quad cap", offset },
            ),
            Stop::Syntax { offset, message } => (
                SecurityEvent::warned(
                    Vulnerability::DocumentCorruption,
                    format!("syntax error at byte {offset}: {message}; document truncated"),
                ),
                ParseError::Syntax { offset, message },
            ),
            Stop::Io { offset, message } => (
                SecurityEvent::warned(
                    Vulnerability::DocumentCorruption,
                    format!("read error at byte {offset}: {message}; document truncated"),
                ),
                ParseError::Io { offset, message },
            ),
        };
        self.events.push(event.with_subject(self.ctx.source.clone()));
        self.error = Some(error);
    }

    fn parse_next(&mut self) -> Result<Option<SourcedQuad>, Stop> {
        loop {
            let (token, start) = self.lexer.next_token()?;
            match token {
                Token::Eof => return Ok(None),
                Token::AtBase => {
                    let iri = self.expect_iriref()?;
                    let new_base = self.resolve(&iri, start)?;
                    self.expect_dot()?;
                    self.base = new_base;
                }
                Token::AtPrefix => {
                    let (prefix, local) = match self.lexer.next_token()? {
                        (Token::PName { prefix, local }, _) => (prefix, local),
                        (_, at) => {
                            return Err(Stop::Syntax {
                                offset: at,
                                message: "expected prefix name after @prefix".into(),
                            })
                        }
                    };
                    if !local.is_empty() {
                        return Err(Stop::Syntax {
                            offset: start,
                            message: format!("prefix declaration '{prefix}:{local}' must end at ':'"),
                        });
                    }
                    let iri = self.expect_iriref()?;
                    let expansion = self.resolve(&iri, start)?;
                    self.expect_dot()?;
                    self.prefixes.insert(prefix, expansion.as_str().to_string());
                }
                other => {
                    let subject = self.term_from(other, start)?;
                    let (tok, at) = self.lexer.next_token()?;
                    let predicate = self.term_from(tok, at)?;
                    let (tok, at) = self.lexer.next_token()?;
                    let object = self.term_from(tok, at)?;
                    self.expect_dot()?;
                    let triple = Triple::new(subject, predicate, object).map_err(|e| {
                        Stop::Syntax { offset: start, message: e.to_string() }
                    })?;
                    return Ok(Some(SourcedQuad::new(
                        triple,
                        self.ctx.source.clone(),
                        self.ctx.fetched_at_millis,
                        self.ctx.depth,
                    )));
                }
            }
        }
    }

    fn expect_iriref(&mut self) -> Result<String, Stop> {
        match self.lexer.next_token()? {
            (Token::IriRef(iri), _) => Ok(iri),
            (_, at) => Err(Stop::Syntax { offset: at, message: "expected <iri>".into() }),
        }
    }

    fn expect_dot(&mut self) -> Result<(), Stop> {
        match self.lexer.next_token()? {
            (Token::Dot, _) => Ok(()),
            (_, at) => {
                Err(Stop::Syntax { offset: at, message: "expected '.' at end of statement".into() })
            }
        }
    }

    /// Resolves a raw IRI reference against the effective base, interning
    /// the result. The resolved form is held to the IRI byte limit too, so
    /// relative references cannot grow URLs past the cap.
    fn resolve(&mut self, raw: &str, at: u64) -> Result<Iri, Stop> {
        let resolved = resolve_relative(&self.base, raw)
            .map_err(|e| Stop::Syntax { offset: at, message: e.to_string() })?;
        if resolved.as_str().len() > self.max_iri_bytes {
            return Err(Stop::TokenLimit { limit: "IRI length" });
        }
        Ok(self.intern(resolved))
    }

    fn intern(&mut self, iri: Iri) -> Iri {
        if let Some(hit) = self.interned.get(iri.as_str()) {
            return hit.clone();
        }
        if self.interned.len() < INTERN_CAP {
            self.interned.insert(iri.as_str().to_string(), iri.clone());
        }
        iri
    }

    fn expand_pname(&mut self, prefix: &str, local: &str, at: u64) -> Result<Iri, Stop> {
        let expansion = self.prefixes.get(prefix).ok_or_else(|| Stop::Syntax {
            offset: at,
            message: format!("undeclared prefix '{prefix}:'"),
        })?;
        let full = format!("{expansion}{local}");
        if full.len() > self.max_iri_bytes {
            return Err(Stop::TokenLimit { limit: "IRI length" });
        }
        let iri = Iri::parse(&full).map_err(|e| Stop::Syntax {
            offset: at,
            message: format!("prefixed name expands to an invalid IRI: {e}"),
        })?;
        Ok(self.intern(iri))
    }

    fn term_from(&mut self, token: Token, at: u64) -> Result<Term, Stop> {
        match token {
            Token::IriRef(raw) => Ok(Term::Iri(self.resolve(&raw, at)?)),
            Token::PName { prefix, local } => {
                Ok(Term::Iri(self.expand_pname(&prefix, &local, at)?))
            }
            Token::Blank(label) => Ok(Term::Blank(crate::model::BlankNode {
                label,
                scope: Some(self.ctx.source.clone()),
            })),
            Token::Literal { lexical, datatype, lang } => {
                let literal = match (datatype, lang) {
                    (Some(DtRef::Iri(raw)), None) => {
                        Literal::typed(lexical, self.resolve(&raw, at)?)
                    }
                    (Some(DtRef::PName { prefix, local }), None) => {
                        Literal::typed(lexical, self.expand_pname(&prefix, &local, at)?)
                    }
                    (None, Some(lang)) => Literal::tagged(lexical, lang),
                    (None, None) => Literal::plain(lexical),
                    _ => unreachable!("lexer never produces both datatype and lang"),
                };
                Ok(Term::Literal(literal))
            }
            Token::Dot | Token::AtBase | Token::AtPrefix | Token::Eof => Err(Stop::Syntax {
                offset: at,
                message: "expected a term (<iri>, prefixed name, literal or blank node)".into(),
            }),
        }
    }
}
