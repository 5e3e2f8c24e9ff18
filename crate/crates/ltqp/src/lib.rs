//! A hardened link-traversal query engine for document-oriented data on
//! the web, together with an adversarial scenario harness.
//!
//! The engine starts from seed documents, dereferences them over HTTP GET,
//! extracts links and triples from the returned documents, and evaluates
//! basic graph patterns incrementally while traversal is still running.
//! Because traversal crosses trust boundaries by design, every stage is
//! guarded: streaming parse limits, GET-only transport with redirect
//! budgets, origin-scoped authentication sessions, policy-keyed caching,
//! frontier history and depth budgets, content policies, and same-origin
//! rules for delegating intermediate results to discovered endpoints.
//! Everything an attacker could influence is recorded as a structured
//! security event in an audit report.
//!
//! The `harness` and `scenarios` modules provide a loopback HTTP server
//! and ten data-driven attack fixtures; `ltqp attack-suite` runs each
//! fixture twice (exploit and hardened configuration) and renders the
//! resulting coverage matrix.

pub mod audit;
pub mod traverse;
pub mod turtle;
pub mod engine;
pub mod fetch;
pub mod harness;
pub mod model;
pub mod policy;

pub use model::{origin_of, Iri, Origin, SecurityEvent, SourcedQuad, Term, Triple, Vulnerability};
