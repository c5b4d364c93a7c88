//! Domain types shared by every stage: slot-value pairs, dialogue acts,
//! tokenized utterances, BIO-labeled examples, ontologies and corpora.
//!
//! Constructors validate their inputs; a value that exists satisfies its
//! invariants. The `*_unchecked` constructors exist for diagnostics only and
//! feed [`validate`], which reports every violation instead of stopping at the
//! first one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Characters that may never appear in an intent or slot identifier.
pub const IDENT_FORBIDDEN: [char; 4] = ['(', ')', ';', '='];
/// Characters that may never appear in a slot value.
pub const VALUE_FORBIDDEN: [char; 3] = [';', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{what} {text:?} contains forbidden character {ch:?}")]
    ForbiddenChar {
        what: &'static str,
        text: String,
        ch: char,
    },
    #[error("duplicate slot-value pair {slot} = {value}")]
    DuplicatePair { slot: String, value: String },
    #[error("token {0:?} is empty or contains whitespace")]
    BadToken(String),
    #[error("utterance has no tokens")]
    EmptyUtterance,
    #[error("tag count {tags} does not match token count {tokens}")]
    TagArity { tokens: usize, tags: usize },
    #[error("invalid tag {0:?}")]
    BadTag(String),
    #[error("tag {tag} at position {position} is not preceded by B-/I- of the same slot")]
    DanglingInside { position: usize, tag: String },
}

fn check_ident(what: &'static str, raw: &str) -> Result<String, TypeError> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(TypeError::Empty(what));
    }
    if let Some(ch) = s
        .chars()
        .find(|c| IDENT_FORBIDDEN.contains(c) || *c == '\t' || *c == '\n' || *c == '\r')
    {
        return Err(TypeError::ForbiddenChar {
            what,
            text: s.to_string(),
            ch,
        });
    }
    Ok(s.to_string())
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One `slot = value` pair of a dialogue act.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotValue {
    slot: String,
    value: String,
}

impl SlotValue {
    pub fn new(slot: &str, value: &str) -> Result<Self, TypeError> {
        let slot = check_ident("slot", slot)?;
        let value = normalize_whitespace(value);
        if value.is_empty() {
            return Err(TypeError::Empty("value"));
        }
        if let Some(ch) = value.chars().find(|c| VALUE_FORBIDDEN.contains(c)) {
            return Err(TypeError::ForbiddenChar {
                what: "value",
                text: value,
                ch,
            });
        }
        Ok(SlotValue { slot, value })
    }

    pub fn slot(&self) -> &str {
        &self.slot
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

/// An intent plus an ordered list of slot-value pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogueAct {
    intent: String,
    slots: Vec<SlotValue>,
}

impl DialogueAct {
    pub fn new(intent: &str, slots: Vec<SlotValue>) -> Result<Self, TypeError> {
        let intent = check_ident("intent", intent)?;
        let mut seen = BTreeSet::new();
        for sv in &slots {
            if !seen.insert(sv) {
                return Err(TypeError::DuplicatePair {
                    slot: sv.slot.clone(),
                    value: sv.value.clone(),
                });
            }
        }
        Ok(DialogueAct { intent, slots })
    }

    /// Convenience constructor from `(slot, value)` string pairs.
    pub fn from_pairs(intent: &str, pairs: &[(&str, &str)]) -> Result<Self, TypeError> {
        let slots = pairs
            .iter()
            .map(|(s, v)| SlotValue::new(s, v))
            .collect::<Result<Vec<_>, _>>()?;
        DialogueAct::new(intent, slots)
    }

    /// Builds an act without checking pair uniqueness. Only [`validate`]
    /// should ever see such a value.
    pub fn new_unchecked(intent: String, slots: Vec<SlotValue>) -> Self {
        DialogueAct { intent, slots }
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn slots(&self) -> &[SlotValue] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Sorted slot names, with repetition. Two acts with the same signature
    /// can share a delexicalized template.
    pub fn signature(&self) -> Vec<String> {
        let mut sig: Vec<String> = self.slots.iter().map(|s| s.slot.clone()).collect();
        sig.sort();
        sig
    }

    /// Equality key that ignores pair order and value casing.
    pub fn canonical_key(&self) -> ActKey {
        let mut pairs: Vec<(String, String)> = self
            .slots
            .iter()
            .map(|s| (s.slot.clone(), s.value.to_lowercase()))
            .collect();
        pairs.sort();
        pairs.dedup();
        ActKey {
            intent: self.intent.clone(),
            pairs,
        }
    }
}

/// See [`DialogueAct::canonical_key`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActKey {
    pub intent: String,
    pub pairs: Vec<(String, String)>,
}

/// A whitespace-tokenized utterance. The raw string is kept as given.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Utterance {
    tokens: Vec<String>,
    raw: String,
}

impl Utterance {
    /// Tokenizes `raw` on whitespace.
    pub fn parse(raw: &str) -> Result<Self, TypeError> {
        let tokens: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(TypeError::EmptyUtterance);
        }
        Ok(Utterance {
            tokens,
            raw: raw.to_string(),
        })
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self, TypeError> {
        if tokens.is_empty() {
            return Err(TypeError::EmptyUtterance);
        }
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TypeError::BadToken(t.to_string()));
            }
            out.push(t.to_string());
        }
        let raw = out.join(" ");
        Ok(Utterance { tokens: out, raw })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A BIO tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn slot(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(s) | Tag::Inside(s) => Some(s),
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sequence start).
    pub fn may_follow(&self, prev: Option<&Tag>) -> bool {
        match self {
            Tag::Inside(slot) => matches!(
                prev,
                Some(Tag::Begin(p)) | Some(Tag::Inside(p)) if p == slot
            ),
            _ => true,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(s) => write!(f, "B-{s}"),
            Tag::Inside(s) => write!(f, "I-{s}"),
        }
    }
}

impl FromStr for Tag {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || TypeError::BadTag(s.to_string());
        let (kind, slot) = s.split_once('-').ok_or_else(bad)?;
        let slot = check_ident("slot", slot).map_err(|_| bad())?;
        if slot.len() != s.len() - 2 {
            // surrounding whitespace inside a tag is not tolerated
            return Err(bad());
        }
        match kind {
            "B" => Ok(Tag::Begin(slot)),
            "I" => Ok(Tag::Inside(slot)),
            _ => Err(bad()),
        }
    }
}

/// Checks BIO well-formedness of a tag sequence.
pub fn check_bio(tags: &[Tag]) -> Result<(), TypeError> {
    let mut prev: Option<&Tag> = None;
    for (position, tag) in tags.iter().enumerate() {
        if !tag.may_follow(prev) {
            return Err(TypeError::DanglingInside {
                position,
                tag: tag.to_string(),
            });
        }
        prev = Some(tag);
    }
    Ok(())
}

/// An utterance with one BIO tag per token and an intent label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledExample {
    utterance: Utterance,
    intent: String,
    tags: Vec<Tag>,
}

impl LabeledExample {
    pub fn new(utterance: Utterance, intent: &str, tags: Vec<Tag>) -> Result<Self, TypeError> {
        let intent = check_ident("intent", intent)?;
        if tags.len() != utterance.len() {
            return Err(TypeError::TagArity {
                tokens: utterance.len(),
                tags: tags.len(),
            });
        }
        check_bio(&tags)?;
        Ok(LabeledExample {
            utterance,
            intent,
            tags,
        })
    }

    /// Skips all checks; see the module docs.
    pub fn new_unchecked(utterance: Utterance, intent: String, tags: Vec<Tag>) -> Self {
        LabeledExample {
            utterance,
            intent,
            tags,
        }
    }

    pub fn utterance(&self) -> &Utterance {
        &self.utterance
    }

    pub fn tokens(&self) -> &[String] {
        self.utterance.tokens()
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }
}

/// Intent and slot inventories of a domain, plus optionally the list of
/// valid dialogue acts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ontology {
    pub intents: BTreeSet<String>,
    pub slots: BTreeSet<String>,
    pub known_values: BTreeMap<String, BTreeSet<String>>,
    pub valid_acts: Option<Vec<DialogueAct>>,
}

impl Ontology {
    /// Builds an ontology and checks that every referenced slot and intent is
    /// declared.
    pub fn new(
        intents: BTreeSet<String>,
        slots: BTreeSet<String>,
        known_values: BTreeMap<String, BTreeSet<String>>,
        valid_acts: Option<Vec<DialogueAct>>,
    ) -> Result<Self, String> {
        let onto = Ontology {
            intents,
            slots,
            known_values,
            valid_acts,
        };
        for slot in onto.known_values.keys() {
            if !onto.slots.contains(slot) {
                return Err(format!("known value declared for unknown slot {slot}"));
            }
        }
        for act in onto.valid_acts.iter().flatten() {
            if !onto.intents.contains(act.intent()) {
                return Err(format!("valid act uses unknown intent {}", act.intent()));
            }
            if let Some(sv) = act.slots().iter().find(|sv| !onto.slots.contains(sv.slot())) {
                return Err(format!("valid act uses unknown slot {}", sv.slot()));
            }
        }
        Ok(onto)
    }

    /// The ontology implied by a corpus: every intent and slot it mentions,
    /// with the values observed in paired data. `acts_only` become the valid
    /// act list when present.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut onto = Ontology::default();
        for ex in &corpus.paired {
            onto.intents.insert(ex.intent().to_string());
            for tag in ex.tags() {
                if let Some(s) = tag.slot() {
                    onto.slots.insert(s.to_string());
                }
            }
            for sv in crate::align::da_from_labeled(ex).slots() {
                onto.known_values
                    .entry(sv.slot().to_string())
                    .or_default()
                    .insert(sv.value().to_string());
            }
        }
        for act in &corpus.acts_only {
            onto.intents.insert(act.intent().to_string());
            for sv in act.slots() {
                onto.slots.insert(sv.slot().to_string());
            }
        }
        if !corpus.acts_only.is_empty() {
            onto.valid_acts = Some(corpus.acts_only.clone());
        }
        onto
    }

    pub fn valid_acts(&self) -> &[DialogueAct] {
        self.valid_acts.as_deref().unwrap_or(&[])
    }
}

/// Training data in any of its three shapes: labeled pairs, acts without
/// utterances, utterances without labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub paired: Vec<LabeledExample>,
    pub acts_only: Vec<DialogueAct>,
    pub utterances_only: Vec<Utterance>,
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.paired.is_empty() && self.acts_only.is_empty() && self.utterances_only.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Info,
    Error,
}

/// Where in the corpus a violation was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Location {
    Paired(usize),
    Act(usize),
    Utterance(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub location: Location,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Error => "error",
        };
        let (kind, idx) = match self.location {
            Location::Paired(i) => ("paired", i),
            Location::Act(i) => ("act", i),
            Location::Utterance(i) => ("utterance", i),
        };
        write!(f, "{sev}\t{kind}[{idx}]\t{}", self.message)
    }
}

fn check_act(act: &DialogueAct, onto: &Ontology, loc: Location, out: &mut Vec<Violation>) {
    let mut err = |severity, message| {
        out.push(Violation {
            location: loc,
            severity,
            message,
        })
    };
    if !onto.intents.contains(act.intent()) {
        err(Severity::Error, format!("unknown intent {}", act.intent()));
    }
    let mut seen = BTreeSet::new();
    for sv in act.slots() {
        if !onto.slots.contains(sv.slot()) {
            err(Severity::Error, format!("unknown slot {}", sv.slot()));
        }
        if !seen.insert(sv) {
            err(
                Severity::Error,
                format!("duplicate pair {} = {}", sv.slot(), sv.value()),
            );
        }
    }
    if act.is_empty() {
        err(Severity::Info, "act has no slots".to_string());
    }
}

/// Reports every invariant violation in `corpus` relative to `ontology`.
/// Zero-slot acts are reported with [`Severity::Info`].
pub fn validate(corpus: &Corpus, ontology: &Ontology) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, ex) in corpus.paired.iter().enumerate() {
        let loc = Location::Paired(i);
        let mut err = |message: String| {
            out.push(Violation {
                location: loc,
                severity: Severity::Error,
                message,
            })
        };
        if !ontology.intents.contains(ex.intent()) {
            err(format!("unknown intent {}", ex.intent()));
        }
        if ex.tags().len() != ex.tokens().len() {
            err(format!(
                "{} tags for {} tokens",
                ex.tags().len(),
                ex.tokens().len()
            ));
        }
        let mut prev: Option<&Tag> = None;
        let mut reported = BTreeSet::new();
        for (pos, tag) in ex.tags().iter().enumerate() {
            if !tag.may_follow(prev) {
                err(format!("I- without B- at token {pos} ({tag})"));
            }
            if let Some(s) = tag.slot() {
                if !ontology.slots.contains(s) && reported.insert(s) {
                    err(format!("unknown slot {s}"));
                }
            }
            prev = Some(tag);
        }
    }
    for (i, act) in corpus.acts_only.iter().enumerate() {
        check_act(act, ontology, Location::Act(i), &mut out);
    }
    for (i, u) in corpus.utterances_only.iter().enumerate() {
        if u.is_empty() {
            out.push(Violation {
                location: Location::Utterance(i),
                severity: Severity::Error,
                message: "empty utterance".to_string(),
            });
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tokens: &str, intent: &str, tags: &[&str]) -> LabeledExample {
        let tags = tags.iter().map(|t| t.parse().unwrap()).collect();
        LabeledExample::new(Utterance::parse(tokens).unwrap(), intent, tags).unwrap()
    }

    fn toy_ontology() -> Ontology {
        Ontology::new(
            ["BookRestaurant".to_string()].into(),
            ["city".to_string(), "cuisine".to_string()].into(),
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn slot_value_rejects_forbidden_characters() {
        assert!(SlotValue::new("ci(ty", "x").is_err());
        assert!(SlotValue::new("city", "a;b").is_err());
        assert!(SlotValue::new("", "x").is_err());
        assert!(SlotValue::new("city", "   ").is_err());
        let sv = SlotValue::new(" city ", "  new   york ").unwrap();
        assert_eq!(sv.slot(), "city");
        assert_eq!(sv.value(), "new york");
        // `=` is allowed inside values
        assert!(SlotValue::new("expr", "a = b").is_ok());
    }

    #[test]
    fn act_rejects_exact_duplicates_but_allows_repeated_slot() {
        assert!(DialogueAct::from_pairs("X", &[("city", "a"), ("city", "a")]).is_err());
        let act = DialogueAct::from_pairs("X", &[("city", "a"), ("city", "b")]).unwrap();
        assert_eq!(act.signature(), vec!["city", "city"]);
        assert!(DialogueAct::new("", vec![]).is_err());
        assert!(DialogueAct::new("a=b", vec![]).is_err());
    }

    #[test]
    fn canonical_key_ignores_order_and_case() {
        let a = DialogueAct::from_pairs("X", &[("a", "Foo"), ("b", "bar")]).unwrap();
        let b = DialogueAct::from_pairs("X", &[("b", "BAR"), ("a", "foo")]).unwrap();
        assert_eq!(a.canonical_key(), b.canonical_key());
        let c = DialogueAct::from_pairs("Y", &[("b", "BAR"), ("a", "foo")]).unwrap();
        assert_ne!(a.canonical_key(), c.canonical_key());
    }

    #[test]
    fn utterance_tokens_and_raw() {
        let u = Utterance::parse("  book a\ttable ").unwrap();
        assert_eq!(u.tokens(), ["book", "a", "table"]);
        assert_eq!(u.raw(), "  book a\ttable ");
        assert_eq!(u.text(), "book a table");
        assert!(Utterance::parse("   ").is_err());
        assert!(Utterance::from_tokens(&["a b"]).is_err());
        assert!(Utterance::from_tokens::<&str>(&[]).is_err());
    }

    #[test]
    fn tag_round_trip_and_rejects() {
        for s in ["O", "B-city", "I-party_size_number"] {
            assert_eq!(s.parse::<Tag>().unwrap().to_string(), s);
        }
        for s in ["", "B", "X-city", "B-", "b-city", "I-a(b"] {
            assert!(s.parse::<Tag>().is_err(), "{s}");
        }
    }

    #[test]
    fn labeled_example_checks_bio_and_arity() {
        let u = Utterance::parse("in boston").unwrap();
        let bad = vec![Tag::Outside, Tag::Inside("city".into())];
        assert!(matches!(
            LabeledExample::new(u.clone(), "X", bad),
            Err(TypeError::DanglingInside { position: 1, .. })
        ));
        assert!(LabeledExample::new(u.clone(), "X", vec![Tag::Outside]).is_err());
        let mixed = vec![Tag::Begin("city".into()), Tag::Inside("cuisine".into())];
        assert!(LabeledExample::new(u, "X", mixed).is_err());
    }

    #[test]
    fn validate_consistent_corpus_is_clean() {
        let corpus = Corpus {
            paired: vec![ex("thai food in boston", "BookRestaurant", &["B-cuisine", "O", "O", "B-city"])],
            acts_only: vec![DialogueAct::from_pairs("BookRestaurant", &[("city", "paris")]).unwrap()],
            utterances_only: vec![Utterance::parse("hello").unwrap()],
        };
        assert!(validate(&corpus, &toy_ontology()).is_empty());
    }

    #[test]
    fn validate_flags_dangling_inside_once() {
        let u = Utterance::parse("in boston").unwrap();
        let bad = LabeledExample::new_unchecked(
            u,
            "BookRestaurant".into(),
            vec![Tag::Outside, Tag::Inside("city".into())],
        );
        let corpus = Corpus {
            paired: vec![bad],
            ..Default::default()
        };
        let v = validate(&corpus, &toy_ontology());
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].message.contains("I- without B-"));
    }

    #[test]
    fn validate_unknowns_duplicates_and_zero_slot_info() {
        let dup = DialogueAct::new_unchecked(
            "Nope".into(),
            vec![
                SlotValue::new("zzz", "a").unwrap(),
                SlotValue::new("zzz", "a").unwrap(),
            ],
        );
        let empty = DialogueAct::from_pairs("BookRestaurant", &[]).unwrap();
        let corpus = Corpus {
            acts_only: vec![dup, empty],
            ..Default::default()
        };
        let v = validate(&corpus, &toy_ontology());
        let errors = v.iter().filter(|v| v.severity == Severity::Error).count();
        let infos = v.iter().filter(|v| v.severity == Severity::Info).count();
        // unknown intent, unknown slot twice, duplicate pair
        assert_eq!(errors, 4, "{v:?}");
        assert_eq!(infos, 1);
    }

    #[test]
    fn validate_is_order_independent_and_idempotent() {
        let a = ex("thai food", "BookRestaurant", &["B-cuisine", "O"]);
        let b = LabeledExample::new_unchecked(
            Utterance::parse("x y").unwrap(),
            "Other".into(),
            vec![Tag::Outside, Tag::Inside("city".into())],
        );
        let c1 = Corpus {
            paired: vec![a.clone(), b.clone()],
            ..Default::default()
        };
        let c2 = Corpus {
            paired: vec![b, a],
            ..Default::default()
        };
        let o = toy_ontology();
        let strip = |v: Vec<Violation>| v.into_iter().map(|v| v.message).collect::<BTreeSet<_>>();
        assert_eq!(strip(validate(&c1, &o)), strip(validate(&c2, &o)));
        assert_eq!(validate(&c1, &o), validate(&c1, &o));
    }

    #[test]
    fn ontology_rejects_undeclared_references() {
        let act = DialogueAct::from_pairs("A", &[("s", "v")]).unwrap();
        assert!(Ontology::new(["A".to_string()].into(), BTreeSet::new(), BTreeMap::new(), Some(vec![act.clone()])).is_err());
        assert!(Ontology::new(BTreeSet::new(), ["s".to_string()].into(), BTreeMap::new(), Some(vec![act])).is_err());
        let kv: BTreeMap<String, BTreeSet<String>> = [("s".to_string(), ["v".to_string()].into())].into();
        assert!(Ontology::new(BTreeSet::new(), BTreeSet::new(), kv, None).is_err());
    }
}
