//! Link extraction and frontier management: traversal history, depth and
//! document budgets, and document prioritization.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::audit::EventLog;
use crate::model::{Iri, SecurityEvent, SourcedQuad, Term, Vulnerability};

/// Budgets that bound traversal on adversarial link structures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TraversalBudgets {
    /// Maximum link path length from a seed (seed = depth 0).
    pub max_depth: u32,
    /// Global cap on dereference attempts per query execution; depth alone
    /// cannot bound breadth.
    pub max_documents: usize,
    /// Keep a history of followed URLs and never dereference one twice.
    pub history_enabled: bool,
}

impl Default for TraversalBudgets {
    fn default() -> Self {
        TraversalBudgets { max_depth: 100, max_documents: 1_000, history_enabled: true }
    }
}

impl TraversalBudgets {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 || self.max_documents == 0 {
            return Err("traversal budgets must be strictly positive".into());
        }
        Ok(())
    }
}

/// Which discovered links are followed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReachabilityCriterion {
    /// Every distinct IRI in subject or object position.
    All,
    /// Only object IRIs of quads whose predicate is in the set.
    Match(BTreeSet<Iri>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorityMode {
    Fifo,
    Indegree,
}

/// One frontier element. `via` is the referring document, or `None` for a
/// seed. `produced_by_admissible` records whether the quad that produced
/// the link passed the content policy; it feeds link legitimacy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkQueueEntry {
    pub target: Iri,
    pub depth: u32,
    pub via: Option<Iri>,
    pub predicate: Option<Iri>,
    pub priority: i64,
    pub produced_by_admissible: bool,
}

impl LinkQueueEntry {
    pub fn seed(url: &Iri) -> Self {
        LinkQueueEntry {
            target: url.without_fragment(),
            depth: 0,
            via: None,
            predicate: None,
            priority: 0,
            produced_by_admissible: true,
        }
    }
}

/// Extracts link-queue entries from the quads of one document.
///
/// Fragment-distinct IRIs collapse to one entry per document URL. Literals
/// and blank nodes never produce links (blank nodes are not
/// dereferenceable). When several quads produce the same target, the entry
/// counts as admissibly produced if any of them was admitted.
pub fn extract_links(
    quads: &[(SourcedQuad, bool)],
    criterion: &ReachabilityCriterion,
) -> Vec<LinkQueueEntry> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<LinkQueueEntry> = Vec::new();

    let mut add = |iri: &Iri, quad: &SourcedQuad, admissible: bool| {
        let target = iri.without_fragment();
        match seen.get(target.as_str()) {
            Some(&idx) => {
                entries[idx].produced_by_admissible |= admissible;
            }
            None => {
                seen.insert(target.as_str().to_string(), entries.len());
                entries.push(LinkQueueEntry {
                    target,
                    depth: quad.depth + 1,
                    via: Some(quad.source.clone()),
                    predicate: Some(quad.triple.predicate_iri().clone()),
                    priority: 0,
                    produced_by_admissible: admissible,
                });
            }
        }
    };

    for (quad, admissible) in quads {
        match criterion {
            ReachabilityCriterion::All => {
                if let Term::Iri(iri) = &quad.triple.subject {
                    add(iri, quad, *admissible);
                }
                if let Term::Iri(iri) = &quad.triple.object {
                    add(iri, quad, *admissible);
                }
            }
            ReachabilityCriterion::Match(predicates) => {
                if predicates.contains(quad.triple.predicate_iri()) {
                    if let Term::Iri(iri) = &quad.triple.object {
                        add(iri, quad, *admissible);
                    }
                }
            }
        }
    }
    entries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Already dereferenced or already pending.
    History,
    /// Entry depth exceeds the link path limit.
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped(DropReason),
}

/// The pending frontier: entries ordered by (priority descending, insertion
/// order ascending), plus the history of dereferenced URLs. Pop order is a
/// deterministic function of the enqueue sequence.
#[derive(Debug)]
pub struct Frontier {
    mode: PriorityMode,
    history_enabled: bool,
    /// (-priority, insertion) so BTreeSet iteration order is pop order.
    order: BTreeSet<(i64, u64)>,
    entries: HashMap<u64, LinkQueueEntry>,
    pending_by_url: HashMap<String, Vec<u64>>,
    history: HashSet<String>,
    /// target URL -> distinct legitimate referring documents seen so far.
    referrers: HashMap<String, BTreeSet<String>>,
    insertion: u64,
}

impl Frontier {
    pub fn new(mode: PriorityMode, history_enabled: bool) -> Self {
        Frontier {
            mode,
            history_enabled,
            order: BTreeSet::new(),
            entries: HashMap::new(),
            pending_by_url: HashMap::new(),
            history: HashSet::new(),
            referrers: HashMap::new(),
            insertion: 0,
        }
    }

    /// Current priority score for a target: constant under fifo, the number
    /// of distinct legitimate referring documents under indegree.
    pub fn score(&self, target: &Iri) -> i64 {
        match self.mode {
            PriorityMode::Fifo => 0,
            PriorityMode::Indegree => self
                .referrers
                .get(target.as_str())
                .map(|refs| refs.len() as i64)
                .unwrap_or(0),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.order.len()
    }

    pub fn visited(&self, url: &Iri) -> bool {
        self.history.contains(url.without_fragment().as_str())
    }

    /// Offers an entry to the frontier. `legitimate` is the policy verdict
    /// for the producing link; illegitimate links still traverse but never
    /// contribute to in-degree priority.
    pub fn enqueue(
        &mut self,
        entry: LinkQueueEntry,
        legitimate: bool,
        budgets: &TraversalBudgets,
        events: &EventLog,
    ) -> EnqueueOutcome {
        let url_key = entry.target.as_str().to_string();

        // Record the backlink before any drop decision so still-pending
        // entries get re-prioritized by new referrers.
        if legitimate {
            if let Some(via) = &entry.via {
                let refs = self.referrers.entry(url_key.clone()).or_default();
                if refs.insert(via.as_str().to_string()) {
                    self.rescore_pending(&url_key);
                }
            }
        }

        if entry.depth > budgets.max_depth {
            events.push(
                SecurityEvent::observed(
                    Vulnerability::LinkTraversalTrap,
                    format!(
                        "link path length {} exceeds the limit of {}; link not followed",
                        entry.depth, budgets.max_depth
                    ),
                )
                .with_subject(entry.target.clone()),
            );
            return EnqueueOutcome::Dropped(DropReason::Depth);
        }

        if self.history_enabled
            && (self.history.contains(&url_key) || self.pending_by_url.contains_key(&url_key))
        {
            return EnqueueOutcome::Dropped(DropReason::History);
        }

        let insertion = self.insertion;
        self.insertion += 1;
        let priority = self.score(&entry.target);
        self.order.insert((-priority, insertion));
        self.pending_by_url.entry(url_key).or_default().push(insertion);
        self.entries.insert(insertion, LinkQueueEntry { priority, ..entry });
        EnqueueOutcome::Accepted
    }

    fn rescore_pending(&mut self, url_key: &str) {
        let Some(insertions) = self.pending_by_url.get(url_key) else {
            return;
        };
        for &insertion in insertions.clone().iter() {
            let entry = self.entries.get_mut(&insertion).expect("pending entry exists");
            let old = (-entry.priority, insertion);
            let new_priority = match self.mode {
                PriorityMode::Fifo => 0,
                PriorityMode::Indegree => self
                    .referrers
                    .get(url_key)
                    .map(|refs| refs.len() as i64)
                    .unwrap_or(0),
            };
            if new_priority != entry.priority {
                self.order.remove(&old);
                self.order.insert((-new_priority, insertion));
                entry.priority = new_priority;
            }
        }
    }

    /// Removes and returns the highest-priority entry, marking its target
    /// as dereferenced.
    pub fn pop(&mut self) -> Option<LinkQueueEntry> {
        let key = *self.order.iter().next()?;
        self.order.remove(&key);
        let entry = self.entries.remove(&key.1).expect("ordered entry exists");
        let url_key = entry.target.as_str().to_string();
        if let Some(list) = self.pending_by_url.get_mut(&url_key) {
            list.retain(|&i| i != key.1);
            if list.is_empty() {
                self.pending_by_url.remove(&url_key);
            }
        }
        self.history.insert(url_key);
        Some(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Literal, Triple};

    fn iri(s: &str) -> Iri {
        Iri::parse(s).unwrap()
    }

    fn quad(source: &str, s: &str, p: &str, o: Term, depth: u32) -> SourcedQuad {
        SourcedQuad::new(
            Triple::new(Term::iri(s).unwrap(), Term::iri(p).unwrap(), o).unwrap(),
            iri(source),
            0,
            depth,
        )
    }

    #[test]
    fn extract_links_follows_object_iris_and_strips_fragments() {
        let q = quad(
            "https://alice.pods.org/addressbook",
            "https://alice.pods.org/addressbook#me",
            "https://ex.org/knows",
            Term::iri("https://bob.pods.org/profile#me").unwrap(),
            0,
        );
        let entries = extract_links(&[(q, true)], &ReachabilityCriterion::All);
        let targets: Vec<&str> = entries.iter().map(|e| e.target.as_str()).collect();
        assert!(targets.contains(&"https://bob.pods.org/profile"));
        // Subject-position IRIs are included as well.
        assert!(targets.contains(&"https://alice.pods.org/addressbook"));
        assert!(entries.iter().all(|e| e.depth == 1));
        assert!(entries
            .iter()
            .all(|e| e.via.as_ref() == Some(&iri("https://alice.pods.org/addressbook"))));
    }

    #[test]
    fn literals_are_not_links() {
        let q = quad(
            "https://carol.pods.org/profile",
            "https://carol.pods.org/profile#me",
            "https://ex.org/name",
            Term::Literal(Literal::plain("Dave")),
            1,
        );
        let entries = extract_links(&[(q, true)], &ReachabilityCriterion::All);
        let targets: Vec<&str> = entries.iter().map(|e| e.target.as_str()).collect();
        assert_eq!(targets, vec!["https://carol.pods.org/profile"]);
    }

    #[test]
    fn injected_see_also_produces_a_link_under_criterion_all() {
        let q = quad(
            "http://trusted.org/?name=payload",
            "http://trusted.org/?name=payload",
            "http://www.w3.org/2000/01/rdf-schema#seeAlso",
            Term::iri("http://hacker.com/invalid-data").unwrap(),
            2,
        );
        let entries = extract_links(&[(q, true)], &ReachabilityCriterion::All);
        assert!(entries.iter().any(|e| e.target.as_str() == "http://hacker.com/invalid-data"));
    }

    #[test]
    fn match_criterion_selects_only_matching_predicates() {
        let knows = quad(
            "https://a.org/doc",
            "https://a.org/doc#me",
            "https://ex.org/knows",
            Term::iri("https://b.org/profile").unwrap(),
            0,
        );
        let other = quad(
            "https://a.org/doc",
            "https://a.org/doc#me",
            "https://ex.org/avoid",
            Term::iri("https://c.org/profile").unwrap(),
            0,
        );
        let criterion =
            ReachabilityCriterion::Match([iri("https://ex.org/knows")].into_iter().collect());
        let entries = extract_links(&[(knows, true), (other, true)], &criterion);
        let targets: Vec<&str> = entries.iter().map(|e| e.target.as_str()).collect();
        assert_eq!(targets, vec!["https://b.org/profile"]);
    }

    #[test]
    fn fragment_variants_collapse_to_one_entry() {
        let a = quad(
            "https://a.org/doc",
            "https://a.org/doc#me",
            "https://ex.org/knows",
            Term::iri("https://b.org/profile#me").unwrap(),
            0,
        );
        let b = quad(
            "https://a.org/doc",
            "https://a.org/doc#me",
            "https://ex.org/knows",
            Term::iri("https://b.org/profile#other").unwrap(),
            0,
        );
        let entries = extract_links(&[(a, true), (b, false)], &ReachabilityCriterion::All);
        let profile_entries: Vec<_> = entries
            .iter()
            .filter(|e| e.target.as_str() == "https://b.org/profile")
            .collect();
        assert_eq!(profile_entries.len(), 1);
        assert!(profile_entries[0].produced_by_admissible);
    }

    fn entry(target: &str, depth: u32, via: Option<&str>) -> LinkQueueEntry {
        LinkQueueEntry {
            target: iri(target),
            depth,
            via: via.map(iri),
            predicate: None,
            priority: 0,
            produced_by_admissible: true,
        }
    }

    #[test]
    fn enqueue_drops_revisits_and_pending_duplicates() {
        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Fifo, true);

        assert_eq!(
            frontier.enqueue(entry("https://a.org/1", 1, None), true, &budgets, &events),
            EnqueueOutcome::Accepted
        );
        assert_eq!(
            frontier.enqueue(entry("https://a.org/1", 1, None), true, &budgets, &events),
            EnqueueOutcome::Dropped(DropReason::History)
        );
        frontier.pop().unwrap();
        assert_eq!(
            frontier.enqueue(entry("https://a.org/1", 2, None), true, &budgets, &events),
            EnqueueOutcome::Dropped(DropReason::History)
        );
    }

    #[test]
    fn enqueue_drops_entries_past_the_depth_limit() {
        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Fifo, true);

        assert_eq!(
            frontier.enqueue(entry("https://a.org/page100", 100, None), true, &budgets, &events),
            EnqueueOutcome::Accepted
        );
        assert_eq!(
            frontier.enqueue(entry("https://a.org/page101", 101, None), true, &budgets, &events),
            EnqueueOutcome::Dropped(DropReason::Depth)
        );
        let snapshot = events.snapshot();
        assert_eq!(snapshot.len(), 1);
        assert_eq!(snapshot[0].vulnerability, Vulnerability::LinkTraversalTrap);
    }

    #[test]
    fn fifo_pop_order_is_insertion_order() {
        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Fifo, true);
        for n in 0..5 {
            frontier.enqueue(entry(&format!("https://a.org/{n}"), 1, None), true, &budgets, &events);
        }
        let order: Vec<String> =
            std::iter::from_fn(|| frontier.pop().map(|e| e.target.as_str().to_string())).collect();
        assert_eq!(order, (0..5).map(|n| format!("https://a.org/{n}")).collect::<Vec<_>>());
    }

    /// Oracle: exhaustive backlink count over the fixture graph, sorted by
    /// (count descending, first-seen order).
    #[test]
    fn indegree_priority_matches_exhaustive_backlink_count() {
        // popular  <- ref1, ref2, ref3   (3 distinct legitimate referrers)
        // niche    <- ref1               (1 referrer)
        let backlinks = [
            ("https://t.org/niche", "https://r.org/ref1"),
            ("https://t.org/popular", "https://r.org/ref1"),
            ("https://t.org/popular", "https://r.org/ref2"),
            ("https://t.org/popular", "https://r.org/ref3"),
        ];

        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Indegree, true);
        for (target, via) in backlinks {
            frontier.enqueue(entry(target, 1, Some(via)), true, &budgets, &events);
        }

        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (target, _) in backlinks {
            *counts.entry(target).or_default() += 1;
        }
        let mut expected: Vec<&str> = counts.keys().copied().collect();
        expected.sort_by_key(|t| std::cmp::Reverse(counts[t]));

        let order: Vec<String> =
            std::iter::from_fn(|| frontier.pop().map(|e| e.target.as_str().to_string())).collect();
        assert_eq!(order, expected);
        assert_eq!(order[0], "https://t.org/popular");
    }

    #[test]
    fn illegitimate_backlinks_do_not_raise_priority() {
        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Indegree, true);

        frontier.enqueue(entry("https://t.org/honest", 1, Some("https://d.org/dir")), true, &budgets, &events);
        frontier.enqueue(entry("https://t.org/forged", 1, Some("https://d.org/dir")), true, &budgets, &events);
        // Three forged backlinks, all judged illegitimate by policy.
        for n in 0..3 {
            frontier.enqueue(
                entry("https://t.org/forged", 1, Some(&format!("https://api.org/?p={n}"))),
                false,
                &budgets,
                &events,
            );
        }
        assert_eq!(frontier.score(&iri("https://t.org/forged")), 1);
        assert_eq!(frontier.pop().unwrap().target.as_str(), "https://t.org/honest");
    }

    #[test]
    fn new_backlinks_reprioritize_pending_entries() {
        let budgets = TraversalBudgets::default();
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Indegree, true);

        frontier.enqueue(entry("https://t.org/first", 1, Some("https://d.org/dir")), true, &budgets, &events);
        frontier.enqueue(entry("https://t.org/boosted", 1, Some("https://d.org/dir")), true, &budgets, &events);
        // A second distinct referrer arrives while the entry is pending;
        // the duplicate enqueue is dropped but the boost applies.
        assert_eq!(
            frontier.enqueue(
                entry("https://t.org/boosted", 1, Some("https://other.org/page")),
                true,
                &budgets,
                &events
            ),
            EnqueueOutcome::Dropped(DropReason::History)
        );
        assert_eq!(frontier.pop().unwrap().target.as_str(), "https://t.org/boosted");
        assert_eq!(frontier.pop().unwrap().target.as_str(), "https://t.org/first");
    }

    #[test]
    fn history_disabled_allows_refetching() {
        let budgets = TraversalBudgets { history_enabled: false, ..TraversalBudgets::default() };
        let events = EventLog::new();
        let mut frontier = Frontier::new(PriorityMode::Fifo, false);

        frontier.enqueue(entry("https://a.org/cycle", 1, None), true, &budgets, &events);
        frontier.pop().unwrap();
        assert_eq!(
            frontier.enqueue(entry("https://a.org/cycle", 2, None), true, &budgets, &events),
            EnqueueOutcome::Accepted
        );
        assert!(frontier.pop().is_some());
    }
}
