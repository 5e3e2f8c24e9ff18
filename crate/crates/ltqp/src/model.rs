//! Core data model shared by every other module: IRIs, RDF terms and
//! triples, provenance-annotated quads, origins, and the security-event
//! vocabulary used by the audit trail.
//!
//! All values here are immutable after construction and safe to share
//! between threads.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use url::Url;

/// Errors raised by term and IRI handling.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed IRI: {0}")]
    MalformedIri(String),
    #[error("malformed term at byte {offset}: {message}")]
    MalformedTerm { offset: usize, message: String },
    #[error("literal is not a valid triple subject")]
    LiteralSubject,
    #[error("triple predicate must be an IRI")]
    NonIriPredicate,
}

/// An absolute IRI. Construction validates that a scheme is present and
/// normalizes through URL parsing (lowercased scheme/host, dot-segment
/// removal, default-port elision).
///
/// Internally reference-counted: clones are cheap and URLs are shared
/// between quads, history entries, cache keys and provenance sets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let url = Url::parse(text).map_err(|e| ModelError::MalformedIri(format!("{text}: {e}")))?;
        Ok(Iri(Arc::from(url.as_str())))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The same IRI with any fragment component removed. Fragments identify
    /// things *within* a document; dereferencing targets the document.
    pub fn without_fragment(&self) -> Iri {
        match self.0.find('#') {
            Some(idx) => Iri(Arc::from(&self.0[..idx])),
            None => self.clone(),
        }
    }

    pub fn has_query(&self) -> bool {
        // Fragment may also contain '?', so cut it off first.
        let s = match self.0.find('#') {
            Some(idx) => &self.0[..idx],
            None => &self.0[..],
        };
        s.contains('?')
    }

    fn as_url(&self) -> Url {
        Url::parse(&self.0).expect("Iri invariant: always a parseable absolute URL")
    }

    pub fn scheme(&self) -> String {
        self.as_url().scheme().to_string()
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Iri {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Iri::parse(s)
    }
}

impl Serialize for Iri {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Iri {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Iri::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// RFC 3986 reference resolution against an absolute base.
/// Absolute references win; resolution of an absolute reference is idempotent.
pub fn resolve_relative(base: &Iri, reference: &str) -> Result<Iri, ModelError> {
    let url = base
        .as_url()
        .join(reference)
        .map_err(|e| ModelError::MalformedIri(format!("{reference}: {e}")))?;
    Ok(Iri(Arc::from(url.as_str())))
}

/// The (scheme, host, port) isolation unit used for sessions, caches and
/// intermediate-result policies. Two IRIs share an origin iff scheme,
/// lowercased host, and effective port are all equal.
///
/// Serialized as `scheme://host:port`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub scheme: String,
    pub host: String,
    pub port: u16,
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Origin::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Port 0 is the fixed sentinel for schemes with no port concept (file, urn, ...).
pub fn origin_of(iri: &Iri) -> Origin {
    let url = iri.as_url();
    Origin {
        scheme: url.scheme().to_ascii_lowercase(),
        host: url.host_str().unwrap_or("").to_ascii_lowercase(),
        port: url.port_or_known_default().unwrap_or(0),
    }
}

impl Origin {
    /// Parses an `scheme://host[:port]` origin, applying the scheme default
    /// port when absent. Used by allow-lists in configuration files.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let iri = Iri::parse(text)?;
        Ok(origin_of(&iri))
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}:{}", self.scheme, self.host, self.port)
    }
}

/// A literal value. Literals compare lexically; a language tag and a
/// datatype are mutually exclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub lexical: String,
    pub datatype: Option<Iri>,
    pub lang: Option<String>,
}

impl Literal {
    pub fn plain(lexical: impl Into<String>) -> Self {
        Literal { lexical: lexical.into(), datatype: None, lang: None }
    }

    pub fn typed(lexical: impl Into<String>, datatype: Iri) -> Self {
        Literal { lexical: lexical.into(), datatype: Some(datatype), lang: None }
    }

    pub fn tagged(lexical: impl Into<String>, lang: impl Into<String>) -> Self {
        Literal { lexical: lexical.into(), datatype: None, lang: Some(lang.into()) }
    }
}

/// A blank node label, scoped to the document that declared it: two
/// documents' `_:b0` are distinct nodes and never join. Terms parsed
/// outside of any document (queries, tests) carry no scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlankNode {
    pub label: String,
    pub scope: Option<Iri>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Iri(Iri),
    Literal(Literal),
    Blank(BlankNode),
}

impl Term {
    pub fn iri(text: &str) -> Result<Self, ModelError> {
        Ok(Term::Iri(Iri::parse(text)?))
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(iri) => Some(iri),
            _ => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal(_))
    }

    /// Rescopes a blank node to the given document; other terms unchanged.
    pub fn scoped_to(self, doc: &Iri) -> Term {
        match self {
            Term::Blank(BlankNode { label, .. }) => {
                Term::Blank(BlankNode { label, scope: Some(doc.clone()) })
            }
            other => other,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&term_token(self))
    }
}

/// An RDF triple. The constructor enforces the positional kind rules:
/// the predicate is an IRI and the subject is never a literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Self, ModelError> {
        if subject.is_literal() {
            return Err(ModelError::LiteralSubject);
        }
        if !matches!(predicate, Term::Iri(_)) {
            return Err(ModelError::NonIriPredicate);
        }
        Ok(Triple { subject, predicate, object })
    }

    pub fn predicate_iri(&self) -> &Iri {
        match &self.predicate {
            Term::Iri(iri) => iri,
            _ => unreachable!("Triple invariant: predicate is an IRI"),
        }
    }
}

/// A triple annotated with the document it came from: the provenance
/// backbone. `source` is the final URL after redirects; `depth` is the
/// traversal depth of that document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourcedQuad {
    pub triple: Triple,
    pub source: Iri,
    pub fetched_at_millis: u64,
    pub depth: u32,
}

impl SourcedQuad {
    pub fn new(triple: Triple, source: Iri, fetched_at_millis: u64, depth: u32) -> Self {
        SourcedQuad { triple, source, fetched_at_millis, depth }
    }

    /// Canonical one-line serialization `<s> <p> <o> <source> .` used by
    /// CLI output and test goldens.
    pub fn canonical_line(&self) -> String {
        format!(
            "{} {} {} {} .",
            term_token(&self.triple.subject),
            term_token(&self.triple.predicate),
            term_token(&self.triple.object),
            term_token(&Term::Iri(self.source.clone())),
        )
    }
}

// ---------------------------------------------------------------------------
// Security-event vocabulary
// ---------------------------------------------------------------------------

/// The closed set of vulnerability identifiers the audit trail is typed by,
/// plus `None` for events unrelated to a specific vulnerability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vulnerability {
    UnauthorizedStatements,
    IntermediateResultAndQueryLeakage,
    SessionHijacking,
    CrossSiteDataInjection,
    ArbitraryCodeExecution,
    LinkTraversalTrap,
    SystemHogging,
    DocumentCorruption,
    CrossQueryExecutionInteraction,
    DocumentPriorityModification,
    None,
}

impl Vulnerability {
    pub const ALL: [Vulnerability; 10] = [
        Vulnerability::UnauthorizedStatements,
        Vulnerability::IntermediateResultAndQueryLeakage,
        Vulnerability::SessionHijacking,
        Vulnerability::CrossSiteDataInjection,
        Vulnerability::ArbitraryCodeExecution,
        Vulnerability::LinkTraversalTrap,
        Vulnerability::SystemHogging,
        Vulnerability::DocumentCorruption,
        Vulnerability::CrossQueryExecutionInteraction,
        Vulnerability::DocumentPriorityModification,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Vulnerability::UnauthorizedStatements => "Unauthorized Statements",
            Vulnerability::IntermediateResultAndQueryLeakage => {
                "Intermediate Result and Query Leakage"
            }
            Vulnerability::SessionHijacking => "Session Hijacking",
            Vulnerability::CrossSiteDataInjection => "Cross-site Data Injection",
            Vulnerability::ArbitraryCodeExecution => "Arbitrary Code Execution",
            Vulnerability::LinkTraversalTrap => "Link Traversal Trap",
            Vulnerability::SystemHogging => "System hogging",
            Vulnerability::DocumentCorruption => "Document Corruption",
            Vulnerability::CrossQueryExecutionInteraction => "Cross-query Execution Interaction",
            Vulnerability::DocumentPriorityModification => "Document Priority Modification",
            Vulnerability::None => "none",
        }
    }

    /// The impact axes a vulnerability applies to:
    /// (query results, data integrity, query process).
    pub fn axes(&self) -> (bool, bool, bool) {
        match self {
            Vulnerability::UnauthorizedStatements => (true, false, false),
            Vulnerability::IntermediateResultAndQueryLeakage => (true, false, false),
            Vulnerability::SessionHijacking => (false, true, false),
            Vulnerability::CrossSiteDataInjection => (true, true, false),
            Vulnerability::ArbitraryCodeExecution => (false, true, true),
            Vulnerability::LinkTraversalTrap => (false, false, true),
            Vulnerability::SystemHogging => (false, false, true),
            Vulnerability::DocumentCorruption => (false, false, true),
            Vulnerability::CrossQueryExecutionInteraction => (false, true, false),
            Vulnerability::DocumentPriorityModification => (true, false, false),
            Vulnerability::None => (false, false, false),
        }
    }
}

impl fmt::Display for Vulnerability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vulnerability {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Vulnerability::ALL
            .iter()
            .copied()
            .chain(std::iter::once(Vulnerability::None))
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown vulnerability identifier: {s}"))
    }
}

impl Serialize for Vulnerability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Vulnerability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventAction {
    Blocked,
    Warned,
    Observed,
}

/// A structured record of a blocked or suspicious action, appended to the
/// audit trail of the query execution it happened in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecurityEvent {
    pub vulnerability: Vulnerability,
    pub action: EventAction,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subject_url: Option<Iri>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attacker: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub victim: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub impact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<String>,
}

impl SecurityEvent {
    pub fn new(vulnerability: Vulnerability, action: EventAction, detail: impl Into<String>) -> Self {
        SecurityEvent {
            vulnerability,
            action,
            detail: detail.into(),
            subject_url: None,
            attacker: None,
            victim: None,
            impact: None,
            difficulty: None,
        }
    }

    pub fn blocked(vulnerability: Vulnerability, detail: impl Into<String>) -> Self {
        SecurityEvent::new(vulnerability, EventAction::Blocked, detail)
    }

    pub fn warned(vulnerability: Vulnerability, detail: impl Into<String>) -> Self {
        SecurityEvent::new(vulnerability, EventAction::Warned, detail)
    }

    pub fn observed(vulnerability: Vulnerability, detail: impl Into<String>) -> Self {
        SecurityEvent::new(vulnerability, EventAction::Observed, detail)
    }

    pub fn with_subject(mut self, url: Iri) -> Self {
        self.subject_url = Some(url);
        self
    }
}

// ---------------------------------------------------------------------------
// Term token syntax
// ---------------------------------------------------------------------------
//
// One token per term, line-oriented and trivially diffable:
//   <https://a.org/x>      IRI
//   "text"                 plain literal (escapes: \" \\ \n \r \t \b \f \uXXXX \UXXXXXXXX)
//   "text"^^<iri>          typed literal
//   "text"@lang            language-tagged literal
//   _:label                blank node

/// Serializes a term to its canonical token form.
pub fn term_token(term: &Term) -> String {
    match term {
        Term::Iri(iri) => format!("<{}>", iri.as_str()),
        Term::Blank(b) => format!("_:{}", b.label),
        Term::Literal(lit) => {
            let mut out = String::with_capacity(lit.lexical.len() + 2);
            out.push('"');
            escape_literal_into(&lit.lexical, &mut out);
            out.push('"');
            if let Some(lang) = &lit.lang {
                out.push('@');
                out.push_str(lang);
            } else if let Some(dt) = &lit.datatype {
                out.push_str("^^<");
                out.push_str(dt.as_str());
                out.push('>');
            }
            out
        }
    }
}

fn escape_literal_into(text: &str, out: &mut String) {
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
}

/// Parses a single term token. Round-trips with [`term_token`]:
/// `term_token(&parse_term(t)?)` is the canonical form of `t`.
pub fn parse_term(text: &str) -> Result<Term, ModelError> {
    let (term, consumed) = parse_term_prefix(text)?;
    let rest = text[consumed..].trim_end();
    if !rest.is_empty() {
        return Err(ModelError::MalformedTerm {
            offset: consumed,
            message: format!("trailing input after term: {rest:?}"),
        });
    }
    Ok(term)
}

/// Parses one term token from the start of `text`, returning the term and
/// the number of bytes consumed. Used by the query-file and binding-line
/// parsers, which hold several tokens per line.
pub fn parse_term_prefix(text: &str) -> Result<(Term, usize), ModelError> {
    let bytes = text.as_bytes();
    match bytes.first() {
        Some(b'<') => {
            let end = find_iri_end(text, 0)?;
            let raw = &text[1..end];
            let value = unescape_uchar(raw, 1)?;
            let iri = Iri::parse(&value)
                .map_err(|e| ModelError::MalformedTerm { offset: 0, message: e.to_string() })?;
            Ok((Term::Iri(iri), end + 1))
        }
        Some(b'"') => {
            let (lexical, after_quote) = unescape_quoted(text)?;
            let rest = &text[after_quote..];
            if let Some(stripped) = rest.strip_prefix("^^<") {
                let end = find_iri_end(stripped, after_quote + 3)?;
                let value = unescape_uchar(&stripped[..end], after_quote + 3)?;
                let dt = Iri::parse(&value).map_err(|e| ModelError::MalformedTerm {
                    offset: after_quote + 3,
                    message: e.to_string(),
                })?;
                Ok((Term::Literal(Literal::typed(lexical, dt)), after_quote + 3 + end + 1))
            } else if let Some(stripped) = rest.strip_prefix('@') {
                let lang_len = stripped
                    .bytes()
                    .take_while(|b| b.is_ascii_alphanumeric() || *b == b'-')
                    .count();
                if lang_len == 0 {
                    return Err(ModelError::MalformedTerm {
                        offset: after_quote + 1,
                        message: "empty language tag".into(),
                    });
                }
                let lang = stripped[..lang_len].to_string();
                Ok((Term::Literal(Literal::tagged(lexical, lang)), after_quote + 1 + lang_len))
            } else {
                Ok((Term::Literal(Literal::plain(lexical)), after_quote))
            }
        }
        Some(b'_') if bytes.get(1) == Some(&b':') => {
            let label_len = text[2..]
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
                .count();
            if label_len == 0 {
                return Err(ModelError::MalformedTerm {
                    offset: 2,
                    message: "empty blank node label".into(),
                });
            }
            let label = text[2..2 + label_len].to_string();
            Ok((Term::Blank(BlankNode { label, scope: None }), 2 + label_len))
        }
        Some(other) => Err(ModelError::MalformedTerm {
            offset: 0,
            message: format!("unexpected start of term: {:?}", *other as char),
        }),
        None => Err(ModelError::MalformedTerm { offset: 0, message: "empty input".into() }),
    }
}

/// Finds the closing `>` of an IRI token starting at byte 0 of `text`
/// (which must begin with `<`) or of a raw IRI body when `text` does not
/// include the opening bracket. `base_offset` is only used for error spans.
fn find_iri_end(text: &str, base_offset: usize) -> Result<usize, ModelError> {
    let start = usize::from(text.starts_with('<'));
    for (idx, ch) in text[start..].char_indices() {
        let pos = start + idx;
        match ch {
            '>' => return Ok(pos),
            c if (c as u32) < 0x20 || c == ' ' => {
                return Err(ModelError::MalformedTerm {
                    offset: base_offset + pos,
                    message: format!("illegal character {c:?} in IRI"),
                })
            }
            _ => {}
        }
    }
    Err(ModelError::MalformedTerm {
        offset: base_offset + text.len(),
        message: "unterminated IRI (missing '>')".into(),
    })
}

/// Resolves `\uXXXX` / `\UXXXXXXXX` escapes inside an IRI body.
fn unescape_uchar(raw: &str, base_offset: usize) -> Result<String, ModelError> {
    if !raw.contains('\\') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.char_indices();
    while let Some((idx, ch)) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        let (digits, width) = match chars.next() {
            Some((_, 'u')) => (4, 4),
            Some((_, 'U')) => (8, 8),
            _ => {
                return Err(ModelError::MalformedTerm {
                    offset: base_offset + idx,
                    message: "only \\u and \\U escapes are allowed in IRIs".into(),
                })
            }
        };
        let mut code = 0u32;
        for _ in 0..digits {
            let (_, d) = chars.next().ok_or(ModelError::MalformedTerm {
                offset: base_offset + idx,
                message: format!("truncated \\u escape (expected {width} hex digits)"),
            })?;
            code = code * 16
                + d.to_digit(16).ok_or(ModelError::MalformedTerm {
                    offset: base_offset + idx,
                    message: format!("invalid hex digit {d:?} in \\u escape"),
                })?;
        }
        out.push(char::from_u32(code).ok_or(ModelError::MalformedTerm {
            offset: base_offset + idx,
            message: format!("\\u escape U+{code:04X} is not a valid scalar"),
        })?);
    }
    Ok(out)
}

/// Unescapes a double-quoted literal starting at byte 0 of `text`.
/// Returns the lexical value and the byte index just past the closing quote.
pub(crate) fn unescape_quoted(text: &str) -> Result<(String, usize), ModelError> {
    debug_assert!(text.starts_with('"'));
    let mut out = String::new();
    let mut chars = text.char_indices().skip(1);
    while let Some((idx, ch)) = chars.next() {
        match ch {
            '"' => return Ok((out, idx + 1)),
            '\n' | '\r' => {
                return Err(ModelError::MalformedTerm {
                    offset: idx,
                    message: "literal must not contain a raw newline".into(),
                })
            }
            '\\' => {
                let (esc_idx, esc) = chars.next().ok_or(ModelError::MalformedTerm {
                    offset: idx,
                    message: "truncated escape sequence".into(),
                })?;
                match esc {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    'r' => out.push('\r'),
                    't' => out.push('\t'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    '\'' => out.push('\''),
                    'u' | 'U' => {
                        let digits = if esc == 'u' { 4 } else { 8 };
                        let mut code = 0u32;
                        for _ in 0..digits {
                            let (_, d) = chars.next().ok_or(ModelError::MalformedTerm {
                                offset: esc_idx,
                                message: "truncated \\u escape".into(),
                            })?;
                            code = code * 16
                                + d.to_digit(16).ok_or(ModelError::MalformedTerm {
                                    offset: esc_idx,
                                    message: format!("invalid hex digit {d:?} in \\u escape"),
                                })?;
                        }
                        out.push(char::from_u32(code).ok_or(ModelError::MalformedTerm {
                            offset: esc_idx,
                            message: format!("\\u escape U+{code:04X} is not a valid scalar"),
                        })?);
                    }
                    other => {
                        return Err(ModelError::MalformedTerm {
                            offset: esc_idx,
                            message: format!("unknown escape \\{other}"),
                        })
                    }
                }
            }
            c => out.push(c),
        }
    }
    Err(ModelError::MalformedTerm {
        offset: text.len(),
        message: "unterminated literal (missing '\"')".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_of_applies_default_ports() {
        let origin = origin_of(&Iri::parse("https://carol.pods.org/profile#me").unwrap());
        assert_eq!(origin, Origin { scheme: "https".into(), host: "carol.pods.org".into(), port: 443 });

        let origin = origin_of(&Iri::parse("http://attacker.com/sparql").unwrap());
        assert_eq!(origin, Origin { scheme: "http".into(), host: "attacker.com".into(), port: 80 });
    }

    #[test]
    fn origin_of_file_scheme_uses_port_sentinel() {
        let origin = origin_of(&Iri::parse("file:///etc/hosts").unwrap());
        assert_eq!(origin, Origin { scheme: "file".into(), host: "".into(), port: 0 });
    }

    #[test]
    fn origin_is_port_sensitive_on_same_host() {
        let a = origin_of(&Iri::parse("http://127.0.0.1:8001/x").unwrap());
        let b = origin_of(&Iri::parse("http://127.0.0.1:8002/x").unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn relative_iri_is_rejected() {
        assert!(matches!(Iri::parse("profile#me"), Err(ModelError::MalformedIri(_))));
        assert!(matches!(Iri::parse("/absolute/path"), Err(ModelError::MalformedIri(_))));
    }

    #[test]
    fn resolve_relative_examples() {
        let base = Iri::parse("https://a.org/dir/doc").unwrap();
        assert_eq!(resolve_relative(&base, "x").unwrap().as_str(), "https://a.org/dir/x");

        let base = Iri::parse("https://a.org/doc").unwrap();
        assert_eq!(resolve_relative(&base, "https://b.org/p").unwrap().as_str(), "https://b.org/p");
    }

    #[test]
    fn resolve_relative_idempotent_for_absolute() {
        let base = Iri::parse("https://a.org/doc").unwrap();
        let once = resolve_relative(&base, "https://b.org/p?q=1#f").unwrap();
        let twice = resolve_relative(&base, once.as_str()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn parse_term_examples() {
        let term = parse_term("<https://bob.pods.org/profile#me>").unwrap();
        assert_eq!(term, Term::Iri(Iri::parse("https://bob.pods.org/profile#me").unwrap()));

        let term = parse_term("\"Dave\"").unwrap();
        assert_eq!(term, Term::Literal(Literal::plain("Dave")));

        let term = parse_term("_:b0").unwrap();
        assert_eq!(term, Term::Blank(BlankNode { label: "b0".into(), scope: None }));
    }

    #[test]
    fn parse_term_reports_byte_offsets() {
        let err = parse_term("<https://a.org/ x>").unwrap_err();
        assert!(matches!(err, ModelError::MalformedTerm { offset: 15, .. }), "{err:?}");

        let err = parse_term("\"abc").unwrap_err();
        assert!(matches!(err, ModelError::MalformedTerm { .. }));
    }

    #[test]
    fn term_tokens_round_trip() {
        let tokens = [
            "<https://a.org/x?q=1#frag>",
            "\"Dave\"",
            "\"line\\nbreak \\\"q\\\" and \\\\ done\"",
            "\"typed\"^^<https://www.w3.org/2001/XMLSchema#string>",
            "\"hallo\"@nl-BE",
            "_:b0",
        ];
        for token in tokens {
            let term = parse_term(token).unwrap();
            assert_eq!(term_token(&term), token, "token {token} did not round-trip");
        }
    }

    #[test]
    fn triple_rejects_illegal_positions() {
        let lit = Term::Literal(Literal::plain("x"));
        let iri = Term::iri("https://a.org/p").unwrap();
        assert_eq!(
            Triple::new(lit.clone(), iri.clone(), iri.clone()).unwrap_err(),
            ModelError::LiteralSubject
        );
        assert_eq!(
            Triple::new(iri.clone(), lit.clone(), iri.clone()).unwrap_err(),
            ModelError::NonIriPredicate
        );
        assert_eq!(
            Triple::new(iri.clone(), Term::Blank(BlankNode { label: "b".into(), scope: None }), iri).unwrap_err(),
            ModelError::NonIriPredicate
        );
    }

    #[test]
    fn blank_nodes_are_scoped_per_document() {
        let doc_a = Iri::parse("https://a.org/doc").unwrap();
        let doc_b = Iri::parse("https://b.org/doc").unwrap();
        let blank = Term::Blank(BlankNode { label: "b0".into(), scope: None });
        let in_a = blank.clone().scoped_to(&doc_a);
        let in_b = blank.scoped_to(&doc_b);
        assert_ne!(in_a, in_b);
        assert_eq!(in_a, in_a.clone());
    }

    #[test]
    fn vulnerability_identifiers_form_a_closed_set_of_ten() {
        assert_eq!(Vulnerability::ALL.len(), 10);
        let names: std::collections::BTreeSet<_> =
            Vulnerability::ALL.iter().map(|v| v.name()).collect();
        assert_eq!(names.len(), 10);
        for v in Vulnerability::ALL {
            assert_eq!(v.name().parse::<Vulnerability>().unwrap(), v);
        }
        assert_eq!("none".parse::<Vulnerability>().unwrap(), Vulnerability::None);
        assert!("Made Up".parse::<Vulnerability>().is_err());
    }

    #[test]
    fn canonical_quad_line() {
        let quad = SourcedQuad::new(
            Triple::new(
                Term::iri("https://bob.pods.org/profile#me").unwrap(),
                Term::iri("https://ex.org/name").unwrap(),
                Term::Literal(Literal::plain("Dave")),
            )
            .unwrap(),
            Iri::parse("https://carol.pods.org/profile").unwrap(),
            0,
            1,
        );
        assert_eq!(
            quad.canonical_line(),
            "<https://bob.pods.org/profile#me> <https://ex.org/name> \"Dave\" <https://carol.pods.org/profile> ."
        );
    }

    #[test]
    fn fragment_stripping() {
        let iri = Iri::parse("https://bob.pods.org/profile#me").unwrap();
        assert_eq!(iri.without_fragment().as_str(), "https://bob.pods.org/profile");
        assert_eq!(iri.without_fragment(), iri.without_fragment().without_fragment());
    }

    #[test]
    fn query_component_detection_ignores_fragments() {
        assert!(Iri::parse("http://trusted.org/?name=Bob").unwrap().has_query());
        assert!(!Iri::parse("http://trusted.org/page").unwrap().has_query());
        assert!(!Iri::parse("http://trusted.org/page#what?ever").unwrap().has_query());
    }
}
