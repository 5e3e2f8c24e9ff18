//! Content policies, origin rules, and the engine configuration whose
//! defaults encode the hardening recommendations: same-origin sessions,
//! GET-only traversal, restricted link path lengths, guarded parsing, and
//! non-crashing error handling.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fetch::{CacheMode, FetchPolicy, Referrer, Session};
use crate::model::{origin_of, Iri, Origin, SourcedQuad, Term};
use crate::traverse::{LinkQueueEntry, PriorityMode, TraversalBudgets};
use crate::turtle::{ParseLimits, ParseMode};

// ---------------------------------------------------------------------------
// Content policy rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Allow,
    Deny,
}

/// Which publishing origins a rule applies to: an exact origin, a wildcard
/// host suffix (`*.pods.org`), or every origin (`*`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OriginPattern {
    Exact(Origin),
    HostSuffix(String),
    Any,
}

impl OriginPattern {
    pub fn matches(&self, origin: &Origin) -> bool {
        match self {
            OriginPattern::Exact(o) => o == origin,
            OriginPattern::HostSuffix(suffix) => {
                origin.host.ends_with(suffix.as_str())
                    && origin.host.len() > suffix.len()
                    && origin.host.as_bytes()[origin.host.len() - suffix.len() - 1] == b'.'
            }
            OriginPattern::Any => true,
        }
    }

    fn specificity(&self) -> u8 {
        match self {
            OriginPattern::Exact(_) => 2,
            OriginPattern::HostSuffix(_) => 1,
            OriginPattern::Any => 0,
        }
    }
}

impl fmt::Display for OriginPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OriginPattern::Exact(o) => write!(f, "{o}"),
            OriginPattern::HostSuffix(s) => write!(f, "*.{s}"),
            OriginPattern::Any => f.write_str("*"),
        }
    }
}

impl Serialize for OriginPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for OriginPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text == "*" {
            return Ok(OriginPattern::Any);
        }
        if let Some(suffix) = text.strip_prefix("*.") {
            if suffix.is_empty() {
                return Err(serde::de::Error::custom("empty host suffix pattern"));
            }
            return Ok(OriginPattern::HostSuffix(suffix.to_string()));
        }
        Origin::parse(&text).map(OriginPattern::Exact).map_err(serde::de::Error::custom)
    }
}

/// Which statement subjects a rule covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubjectScope {
    /// Subject is an IRI with the same origin as the publishing document;
    /// blank subjects count as self.
    SelfOrigin,
    AnyOrigin,
    IriPrefix(String),
}

impl SubjectScope {
    fn matches(&self, author: &Origin, subject: &Term) -> bool {
        match self {
            SubjectScope::SelfOrigin => match subject {
                Term::Iri(iri) => origin_of(iri) == *author,
                Term::Blank(_) => true,
                Term::Literal(_) => false,
            },
            SubjectScope::AnyOrigin => true,
            SubjectScope::IriPrefix(prefix) => match subject {
                Term::Iri(iri) => iri.as_str().starts_with(prefix.as_str()),
                _ => false,
            },
        }
    }
}

impl fmt::Display for SubjectScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectScope::SelfOrigin => f.write_str("selfOrigin"),
            SubjectScope::AnyOrigin => f.write_str("anyOrigin"),
            SubjectScope::IriPrefix(p) => write!(f, "iriPrefix({p})"),
        }
    }
}

impl Serialize for SubjectScope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SubjectScope::SelfOrigin => s.serialize_str("selfOrigin"),
            SubjectScope::AnyOrigin => s.serialize_str("anyOrigin"),
            SubjectScope::IriPrefix(p) => {
                use serde::ser::SerializeMap;
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry("iriPrefix", p)?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for SubjectScope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ScopeVisitor;
        impl<'de> Visitor<'de> for ScopeVisitor {
            type Value = SubjectScope;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"selfOrigin\", \"anyOrigin\", or {\"iriPrefix\": \"...\"}")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Self::Value, E> {
                match v {
                    "selfOrigin" => Ok(SubjectScope::SelfOrigin),
                    "anyOrigin" => Ok(SubjectScope::AnyOrigin),
                    other => Err(E::custom(format!("unknown subject scope: {other}"))),
                }
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut prefix: Option<String> = None;
                while let Some((key, value)) = access.next_entry::<String, String>()? {
                    if key == "iriPrefix" {
                        prefix = Some(value);
                    } else {
                        return Err(serde::de::Error::custom(format!(
                            "unknown subject scope key: {key}"
                        )));
                    }
                }
                prefix
                    .map(SubjectScope::IriPrefix)
                    .ok_or_else(|| serde::de::Error::custom("missing iriPrefix"))
            }
        }
        d.deserialize_any(ScopeVisitor)
    }
}

/// One content policy rule: who (`authorOrigin`) may say what
/// (`predicateScope`) about whom (`subjectScope`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ContentPolicyRule {
    pub effect: Effect,
    pub author_origin: OriginPattern,
    pub subject_scope: SubjectScope,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub predicate_scope: Option<BTreeSet<Iri>>,
}

impl ContentPolicyRule {
    fn matches(&self, author: &Origin, quad: &SourcedQuad) -> bool {
        self.author_origin.matches(author)
            && self
                .predicate_scope
                .as_ref()
                .map_or(true, |set| set.contains(quad.triple.predicate_iri()))
            && self.subject_scope.matches(author, &quad.triple.subject)
    }

    /// Specificity: exact author beats wildcard, an explicit predicate set
    /// beats none, deny beats allow, list order breaks remaining ties.
    fn rank(&self, index: usize) -> (u8, u8, u8, std::cmp::Reverse<usize>) {
        (
            self.author_origin.specificity(),
            u8::from(self.predicate_scope.is_some()),
            u8::from(matches!(self.effect, Effect::Deny)),
            std::cmp::Reverse(index),
        )
    }

    pub fn describe(&self, index: usize) -> String {
        let preds = match &self.predicate_scope {
            Some(set) => format!(
                " predicates[{}]",
                set.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", ")
            ),
            None => String::new(),
        };
        format!(
            "rule #{index}: {} author={} subject={}{}",
            match self.effect {
                Effect::Allow => "allow",
                Effect::Deny => "deny",
            },
            self.author_origin,
            self.subject_scope,
            preds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdmissionDecision {
    Admitted,
    Rejected { rule: String },
}

impl AdmissionDecision {
    pub fn is_admitted(&self) -> bool {
        matches!(self, AdmissionDecision::Admitted)
    }
}

/// Evaluates the content policy against (publishing origin, subject).
///
/// An empty rule list admits everything (the open-world baseline). With
/// rules present, the highest-ranked matching rule decides; when nothing
/// matches, the presence of any allow rule makes the list an allow-list
/// (reject by default), while a pure deny-list admits by default.
pub fn quad_admissible(quad: &SourcedQuad, rules: &[ContentPolicyRule]) -> AdmissionDecision {
    if rules.is_empty() {
        return AdmissionDecision::Admitted;
    }
    let author = origin_of(&quad.source);
    let best = rules
        .iter()
        .enumerate()
        .filter(|(_, rule)| rule.matches(&author, quad))
        .max_by_key(|(index, rule)| rule.rank(*index));
    match best {
        Some((index, rule)) => match rule.effect {
            Effect::Allow => AdmissionDecision::Admitted,
            Effect::Deny => AdmissionDecision::Rejected { rule: rule.describe(index) },
        },
        None => {
            if rules.iter().any(|r| matches!(r.effect, Effect::Allow)) {
                AdmissionDecision::Rejected {
                    rule: "no rule matched (allow rules present, allow-list semantics)".into(),
                }
            } else {
                AdmissionDecision::Admitted
            }
        }
    }
}

/// A link is legitimate iff the quad that produced it was admitted AND the
/// referring document's URL carries no query component when the target
/// shares the referrer's origin — the forged-backlink signature of
/// query-parameterized injection APIs. Illegitimate links still traverse;
/// they just never contribute to in-degree priority.
///
/// The query-component heuristic can be configured off.
pub fn link_legitimate(entry: &LinkQueueEntry, heuristic_enabled: bool) -> bool {
    if !entry.produced_by_admissible {
        return false;
    }
    if !heuristic_enabled {
        return true;
    }
    match &entry.via {
        None => true,
        Some(via) => !(via.has_query() && origin_of(via) == origin_of(&entry.target)),
    }
}

/// Session scoping rule: a session attaches iff scoping is off, or the
/// target origin equals the session origin AND the referrer is that same
/// origin or the seed set.
pub fn session_allowed(
    target: &Iri,
    referrer: &Referrer,
    session: &Session,
    session_scoping: bool,
) -> bool {
    if !session_scoping {
        return true;
    }
    if origin_of(target) != session.origin {
        return false;
    }
    match referrer {
        Referrer::Seed => true,
        Referrer::Document(origin) => *origin == session.origin,
    }
}

// ---------------------------------------------------------------------------
// Engine configuration
// ---------------------------------------------------------------------------

fn default_true() -> bool {
    true
}

fn default_discovery_predicate() -> Iri {
    Iri::parse("https://ltqp.example/vocab#sparqlEndpoint").expect("valid default predicate")
}

fn default_cache_mode() -> CacheMode {
    CacheMode::PerQuery
}

fn default_priority_mode() -> PriorityMode {
    PriorityMode::Fifo
}

fn default_mode() -> ParseMode {
    ParseMode::Lenient
}

fn default_parallelism() -> usize {
    1
}

/// Every mitigation toggle and resource budget. The default instance
/// satisfies all five engine-developer hardening recommendations, which
/// [`defaults_audit`] asserts field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct EngineConfig {
    pub parse_limits: ParseLimits,
    pub fetch_policy: FetchPolicy,
    pub budgets: TraversalBudgets,
    /// Lenient converts per-document fetch/parse failures into audit events
    /// and continues; strict aborts the query.
    pub mode: ParseMode,
    pub session_scoping: bool,
    pub same_origin_intermediate: bool,
    pub endpoint_allow_list: BTreeSet<Origin>,
    pub hybrid_enabled: bool,
    pub cache_mode: CacheMode,
    pub content_policy: Vec<ContentPolicyRule>,
    pub priority_mode: PriorityMode,
    /// Predicate whose object advertises a query endpoint.
    pub endpoint_discovery_predicate: Iri,
    /// The query-component legitimacy heuristic for link scoring.
    pub legitimacy_heuristic: bool,
    /// Concurrent fetch workers; 1 gives deterministic ordering.
    pub parallelism: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            parse_limits: ParseLimits::default(),
            fetch_policy: FetchPolicy::default(),
            budgets: TraversalBudgets::default(),
            mode: default_mode(),
            session_scoping: true,
            same_origin_intermediate: true,
            endpoint_allow_list: BTreeSet::new(),
            hybrid_enabled: false,
            cache_mode: default_cache_mode(),
            content_policy: Vec::new(),
            priority_mode: default_priority_mode(),
            endpoint_discovery_predicate: default_discovery_predicate(),
            legitimacy_heuristic: true,
            parallelism: default_parallelism(),
        }
    }
}

// serde(default) on the struct uses Default::default() per field only when
// the field is absent, so the helper fns above keep JSON omissions aligned
// with the Default impl.
const _: fn() = || {
    let _ = default_true;
};

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.parse_limits.validate()?;
        self.budgets.validate()?;
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if !self.fetch_policy.get_only {
            return Err("fetchPolicy.getOnly cannot be disabled".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let config: EngineConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    /// The hardened self-origin content policy: publishers may only make
    /// statements about their own origin's resources.
    pub fn self_origin_policy() -> Vec<ContentPolicyRule> {
        vec![ContentPolicyRule {
            effect: Effect::Allow,
            author_origin: OriginPattern::Any,
            subject_scope: SubjectScope::SelfOrigin,
            predicate_scope: None,
        }]
    }

    /// Named presets: `hardened` (defaults plus the self-origin content
    /// policy) and `permissive` (defaults, which admit everything).
    /// `exploit:<scenario>` presets are resolved by the scenario suite.
    pub fn apply_preset(&mut self, preset: &str) -> Result<(), String> {
        match preset {
            "hardened" => {
                self.content_policy = Self::self_origin_policy();
                Ok(())
            }
            "permissive" => {
                self.content_policy = Vec::new();
                Ok(())
            }
            other => Err(format!(
                "unknown preset '{other}' (expected 'hardened', 'permissive' or 'exploit:<scenario>')"
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Recommendation audit
// ---------------------------------------------------------------------------

/// One machine-checkable field assertion backing a recommendation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldCheck {
    pub field: String,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecommendationCheck {
    pub recommendation: String,
    pub fields: Vec<FieldCheck>,
    pub satisfied: bool,
}

fn check(field: &str, expected: impl fmt::Display, actual: impl fmt::Display, ok: bool) -> FieldCheck {
    FieldCheck { field: field.into(), expected: expected.to_string(), actual: actual.to_string(), ok }
}

/// Field-by-field assertion that a configuration satisfies the five
/// engine-developer hardening recommendations.
pub fn defaults_audit(config: &EngineConfig) -> Vec<RecommendationCheck> {
    let mut out = Vec::new();
    let mut push = |recommendation: &str, fields: Vec<FieldCheck>| {
        let satisfied = fields.iter().all(|f| f.ok);
        out.push(RecommendationCheck { recommendation: recommendation.into(), fields, satisfied });
    };

    push(
        "same-origin policy for authentication sessions",
        vec![check("sessionScoping", true, config.session_scoping, config.session_scoping)],
    );
    push(
        "traversal only via HTTP GET",
        vec![check("fetchPolicy.getOnly", true, config.fetch_policy.get_only, config.fetch_policy.get_only)],
    );
    push(
        "restricted link path lengths",
        vec![
            check(
                "budgets.maxDepth",
                "<= 100",
                config.budgets.max_depth,
                config.budgets.max_depth <= 100 && config.budgets.max_depth > 0,
            ),
            check(
                "budgets.historyEnabled",
                true,
                config.budgets.history_enabled,
                config.budgets.history_enabled,
            ),
            check(
                "fetchPolicy.maxRedirects",
                "<= 21",
                config.fetch_policy.max_redirects,
                config.fetch_policy.max_redirects <= 21 && config.fetch_policy.max_redirects > 0,
            ),
        ],
    );
    push(
        "guarded (sandboxed) parsing of untrusted data",
        vec![
            check(
                "parseLimits.maxIriBytes",
                "<= 1048576",
                config.parse_limits.max_iri_bytes,
                (1..=1_048_576).contains(&config.parse_limits.max_iri_bytes),
            ),
            check(
                "parseLimits.maxLiteralBytes",
                "<= 1048576",
                config.parse_limits.max_literal_bytes,
                (1..=1_048_576).contains(&config.parse_limits.max_literal_bytes),
            ),
            check(
                "parseLimits.maxDocumentBytes",
                "> 0",
                config.parse_limits.max_document_bytes,
                config.parse_limits.max_document_bytes > 0,
            ),
            check(
                "parseLimits.maxQuadsPerDocument",
                "> 0",
                config.parse_limits.max_quads_per_document,
                config.parse_limits.max_quads_per_document > 0,
            ),
            check(
                "parseLimits.parseBudgetMillis",
                "> 0",
                config.parse_limits.parse_budget_millis,
                config.parse_limits.parse_budget_millis > 0,
            ),
        ],
    );
    push(
        "errors must not crash the query process",
        vec![check(
            "mode",
            "lenient",
            match config.mode {
                ParseMode::Lenient => "lenient",
                ParseMode::Strict => "strict",
            },
            matches!(config.mode, ParseMode::Lenient),
        )],
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Literal, Triple};

    fn iri(s: &str) -> Iri {
        Iri::parse(s).unwrap()
    }

    fn quad(source: &str, subject: &str, predicate: &str, object: Term) -> SourcedQuad {
        SourcedQuad::new(
            Triple::new(Term::iri(subject).unwrap(), Term::iri(predicate).unwrap(), object).unwrap(),
            iri(source),
            0,
            1,
        )
    }

    fn carol_about_bob() -> SourcedQuad {
        quad(
            "https://carol.pods.org/profile",
            "https://bob.pods.org/profile#me",
            "https://ex.org/name",
            Term::Literal(Literal::plain("Dave")),
        )
    }

    fn bob_about_bob() -> SourcedQuad {
        quad(
            "https://bob.pods.org/profile",
            "https://bob.pods.org/profile#me",
            "https://ex.org/name",
            Term::Literal(Literal::plain("Bob")),
        )
    }

    #[test]
    fn empty_rule_list_admits_everything() {
        assert!(quad_admissible(&carol_about_bob(), &[]).is_admitted());
        assert!(quad_admissible(&bob_about_bob(), &[]).is_admitted());
    }

    #[test]
    fn self_origin_policy_rejects_cross_origin_subjects() {
        let rules = EngineConfig::self_origin_policy();
        let rejected = quad_admissible(&carol_about_bob(), &rules);
        assert!(!rejected.is_admitted(), "Carol asserting Bob's name must be rejected");
        assert!(quad_admissible(&bob_about_bob(), &rules).is_admitted());
    }

    #[test]
    fn blank_subjects_count_as_self() {
        let rules = EngineConfig::self_origin_policy();
        let quad = SourcedQuad::new(
            Triple::new(
                Term::Blank(crate::model::BlankNode {
                    label: "b0".into(),
                    scope: Some(iri("https://carol.pods.org/profile")),
                }),
                Term::iri("https://ex.org/p").unwrap(),
                Term::Literal(Literal::plain("x")),
            )
            .unwrap(),
            iri("https://carol.pods.org/profile"),
            0,
            1,
        );
        assert!(quad_admissible(&quad, &rules).is_admitted());
    }

    /// Oracle: direct rule-table evaluation by hand for a three-rule
    /// fixture, checked quad by quad.
    #[test]
    fn explicit_rule_table_evaluates_by_hand() {
        let knows = iri("https://ex.org/knows");
        let rules = vec![
            // 0: everyone may describe their own resources
            ContentPolicyRule {
                effect: Effect::Allow,
                author_origin: OriginPattern::Any,
                subject_scope: SubjectScope::SelfOrigin,
                predicate_scope: None,
            },
            // 1: carol may state `knows` about anyone
            ContentPolicyRule {
                effect: Effect::Allow,
                author_origin: OriginPattern::Exact(Origin {
                    scheme: "https".into(),
                    host: "carol.pods.org".into(),
                    port: 443,
                }),
                subject_scope: SubjectScope::AnyOrigin,
                predicate_scope: Some([knows.clone()].into_iter().collect()),
            },
            // 2: nobody on *.pods.org may describe eve's resources
            ContentPolicyRule {
                effect: Effect::Deny,
                author_origin: OriginPattern::HostSuffix("pods.org".into()),
                subject_scope: SubjectScope::IriPrefix("https://eve.example/".into()),
                predicate_scope: None,
            },
        ];

        // Carol `knows` quad about Bob: rule 1 matches (exact author,
        // predicate scope) and admits.
        let carol_knows_bob = quad(
            "https://carol.pods.org/profile",
            "https://carol.pods.org/profile#me",
            "https://ex.org/knows",
            Term::iri("https://bob.pods.org/profile#me").unwrap(),
        );
        assert!(quad_admissible(&carol_knows_bob, &rules).is_admitted());

        // Carol asserting Bob's *name*: only rule 0 could match but the
        // subject is not self-origin; allow-list semantics reject.
        assert!(!quad_admissible(&carol_about_bob(), &rules).is_admitted());

        // Bob about himself: rule 0 admits.
        assert!(quad_admissible(&bob_about_bob(), &rules).is_admitted());

        // Carol making a `knows` statement about eve's resource: rules 1
        // (allow, exact author + predicates) and 2 (deny, suffix author)
        // both match; exact author outranks the suffix, so it is admitted.
        let carol_knows_eve = quad(
            "https://carol.pods.org/profile",
            "https://eve.example/thing",
            "https://ex.org/knows",
            Term::iri("https://eve.example/other").unwrap(),
        );
        assert!(quad_admissible(&carol_knows_eve, &rules).is_admitted());

        // Bob describing eve's resource: rule 2 matches and denies.
        let bob_about_eve = quad(
            "https://bob.pods.org/profile",
            "https://eve.example/thing",
            "https://ex.org/name",
            Term::Literal(Literal::plain("x")),
        );
        let decision = quad_admissible(&bob_about_eve, &rules);
        match decision {
            AdmissionDecision::Rejected { rule } => assert!(rule.contains("rule #2"), "{rule}"),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn deny_beats_allow_at_equal_specificity_regardless_of_order() {
        let make = |effect| ContentPolicyRule {
            effect,
            author_origin: OriginPattern::Any,
            subject_scope: SubjectScope::AnyOrigin,
            predicate_scope: None,
        };
        for rules in [
            vec![make(Effect::Allow), make(Effect::Deny)],
            vec![make(Effect::Deny), make(Effect::Allow)],
        ] {
            assert!(!quad_admissible(&bob_about_bob(), &rules).is_admitted());
        }
    }

    #[test]
    fn list_order_breaks_ties_between_equal_rules() {
        let make = |prefix: &str, effect| ContentPolicyRule {
            effect,
            author_origin: OriginPattern::Any,
            subject_scope: SubjectScope::IriPrefix(prefix.into()),
            predicate_scope: None,
        };
        // Both deny rules match at equal specificity; the earlier one in
        // list order decides.
        let rules = vec![
            make("https://bob.pods.org/", Effect::Deny),
            make("https://bob.pods.org/profile", Effect::Deny),
        ];
        match quad_admissible(&bob_about_bob(), &rules) {
            AdmissionDecision::Rejected { rule } => assert!(rule.contains("rule #0"), "{rule}"),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn pure_deny_list_admits_unmatched_quads() {
        let rules = vec![ContentPolicyRule {
            effect: Effect::Deny,
            author_origin: OriginPattern::HostSuffix("evil.example".into()),
            subject_scope: SubjectScope::AnyOrigin,
            predicate_scope: None,
        }];
        assert!(quad_admissible(&bob_about_bob(), &rules).is_admitted());
    }

    #[test]
    fn host_suffix_matches_whole_labels_only() {
        let pattern = OriginPattern::HostSuffix("pods.org".into());
        assert!(pattern.matches(&Origin { scheme: "https".into(), host: "bob.pods.org".into(), port: 443 }));
        assert!(!pattern.matches(&Origin { scheme: "https".into(), host: "pods.org".into(), port: 443 }));
        assert!(!pattern.matches(&Origin { scheme: "https".into(), host: "evilpods.org".into(), port: 443 }));
    }

    #[test]
    fn link_legitimacy_examples() {
        let backlink_from_query_page = LinkQueueEntry {
            target: iri("http://trusted.org/store/carol"),
            depth: 2,
            via: Some(iri("http://trusted.org/?name=payload")),
            predicate: None,
            priority: 0,
            produced_by_admissible: true,
        };
        assert!(
            !link_legitimate(&backlink_from_query_page, true),
            "same-origin backlink from a query-parameterized page is illegitimate"
        );
        assert!(link_legitimate(&backlink_from_query_page, false), "heuristic can be configured off");

        let organic = LinkQueueEntry {
            target: iri("https://carol.pods.org/profile"),
            depth: 1,
            via: Some(iri("https://bob.pods.org/profile")),
            predicate: None,
            priority: 0,
            produced_by_admissible: true,
        };
        assert!(link_legitimate(&organic, true));

        let cross_origin_from_query_page = LinkQueueEntry {
            target: iri("http://hacker.com/invalid-data"),
            depth: 2,
            via: Some(iri("http://trusted.org/?name=payload")),
            predicate: None,
            priority: 0,
            produced_by_admissible: true,
        };
        assert!(
            link_legitimate(&cross_origin_from_query_page, true),
            "the heuristic flags only same-origin backlinks"
        );

        let from_rejected_quad = LinkQueueEntry { produced_by_admissible: false, ..organic };
        assert!(!link_legitimate(&from_rejected_quad, true));
    }

    #[test]
    fn session_allowed_examples() {
        let endpoint = iri("http://my-endpoint.com/sparql");
        let session = Session { origin: origin_of(&endpoint), token: "tok".into() };
        let carol = Origin { scheme: "https".into(), host: "carol.pods.org".into(), port: 443 };

        // Seed fetch of Alice's own endpoint with her session.
        assert!(session_allowed(&endpoint, &Referrer::Seed, &session, true));
        // Carol-referred link to Alice's endpoint, scoping on.
        assert!(!session_allowed(&endpoint, &Referrer::Document(carol.clone()), &session, true));
        // Same with scoping off (exploit mode).
        assert!(session_allowed(&endpoint, &Referrer::Document(carol), &session, false));
        // Same-origin referrer.
        assert!(session_allowed(
            &endpoint,
            &Referrer::Document(origin_of(&endpoint)),
            &session,
            true
        ));
        // Cross-origin target never gets the session, even from a seed.
        let other = iri("https://other.example/doc");
        assert!(!session_allowed(&other, &Referrer::Seed, &session, true));
    }

    #[test]
    fn default_config_satisfies_every_recommendation() {
        let checks = defaults_audit(&EngineConfig::default());
        assert_eq!(checks.len(), 5);
        for check in &checks {
            assert!(check.satisfied, "{} not satisfied: {:?}", check.recommendation, check.fields);
        }
    }

    #[test]
    fn weakened_config_fails_the_audit() {
        let mut config = EngineConfig::default();
        config.session_scoping = false;
        config.mode = ParseMode::Strict;
        let checks = defaults_audit(&config);
        assert!(!checks[0].satisfied);
        assert!(!checks[4].satisfied);
        assert!(checks[1].satisfied);
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let config = EngineConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back = EngineConfig::from_json(&json).unwrap();
        assert_eq!(back, config);

        assert!(EngineConfig::from_json(r#"{"noSuchField": 1}"#).is_err());
        assert!(EngineConfig::from_json(r#"{"fetchPolicy": {"getOnly": false}}"#).is_err());
        assert!(EngineConfig::from_json("{}").unwrap() == EngineConfig::default());
    }

    #[test]
    fn content_policy_rules_round_trip_through_json() {
        let json = r#"[
            {"effect": "allow", "authorOrigin": "*", "subjectScope": "selfOrigin"},
            {"effect": "deny", "authorOrigin": "*.pods.org", "subjectScope": {"iriPrefix": "https://eve.example/"}},
            {"effect": "allow", "authorOrigin": "https://carol.pods.org", "subjectScope": "anyOrigin",
             "predicateScope": ["https://ex.org/knows"]}
        ]"#;
        let rules: Vec<ContentPolicyRule> = serde_json::from_str(json).unwrap();
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[0].subject_scope, SubjectScope::SelfOrigin);
        assert!(matches!(rules[1].author_origin, OriginPattern::HostSuffix(_)));
        let round = serde_json::to_string(&rules).unwrap();
        let back: Vec<ContentPolicyRule> = serde_json::from_str(&round).unwrap();
        assert_eq!(back, rules);
    }

    #[test]
    fn presets_toggle_the_content_policy() {
        let mut config = EngineConfig::default();
        config.apply_preset("hardened").unwrap();
        assert_eq!(config.content_policy, EngineConfig::self_origin_policy());
        config.apply_preset("permissive").unwrap();
        assert!(config.content_policy.is_empty());
        assert!(config.apply_preset("bogus").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Origin equality is a congruence over case and default-port
            /// variants of the same URL.
            #[test]
            fn origin_congruence(
                host_case in proptest::collection::vec(any::<bool>(), 1..12),
                explicit_port in any::<bool>(),
                path in "[a-z]{0,8}",
            ) {
                let host: String = "carol.pods.org"
                    .chars()
                    .zip(host_case.iter().cycle())
                    .map(|(c, upper)| if *upper { c.to_ascii_uppercase() } else { c })
                    .collect();
                let port = if explicit_port { ":443" } else { "" };
                let url = format!("https://{host}{port}/{path}");
                let origin = origin_of(&Iri::parse(&url).unwrap());
                let canonical = origin_of(&Iri::parse("https://carol.pods.org/profile").unwrap());
                prop_assert_eq!(origin, canonical);
            }

            /// Rule evaluation is total and order-stable: permuting rules of
            /// different specificity never changes the outcome.
            #[test]
            fn specificity_order_is_permutation_stable(swap in any::<bool>()) {
                let exact_allow = ContentPolicyRule {
                    effect: Effect::Allow,
                    author_origin: OriginPattern::Exact(Origin {
                        scheme: "https".into(),
                        host: "carol.pods.org".into(),
                        port: 443,
                    }),
                    subject_scope: SubjectScope::AnyOrigin,
                    predicate_scope: None,
                };
                let wildcard_deny = ContentPolicyRule {
                    effect: Effect::Deny,
                    author_origin: OriginPattern::Any,
                    subject_scope: SubjectScope::AnyOrigin,
                    predicate_scope: None,
                };
                let rules = if swap {
                    vec![wildcard_deny.clone(), exact_allow.clone()]
                } else {
                    vec![exact_allow.clone(), wildcard_deny.clone()]
                };
                let quad = carol_about_bob();
                // Exact author beats the wildcard deny in both orders.
                prop_assert!(quad_admissible(&quad, &rules).is_admitted());
            }
        }
    }
}
