//! A small synthetic domain with a known grammar, for end-to-end checks of
//! the augmentation scenarios.
//!
//! Three intents and six slots. Each slot has ten values; three per slot
//! never occur in the labeled training split, only in the ontology's valid
//! acts, the unlabeled utterances and the test set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{emit_corpus, emit_ontology, CorpusError};
use crate::dialogue::{Corpus, DialogueAct, LabeledExample, Ontology, SlotValue, Tag, Utterance};
use crate::exec::stream_rng;

pub const TOY_SEED: u64 = 20_210_801;

pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const ONTOLOGY_FILE: &str = "ontology.txt";

const INTENTS: [(&str, &[&str], &[&str]); 3] = [
    (
        "BookRestaurant",
        &["city", "cuisine", "party_size", "date"],
        &["book a table", "reserve a restaurant", "find me a place to eat"],
    ),
    (
        "GetWeather",
        &["city", "date"],
        &["what is the weather", "will it rain", "tell me the forecast"],
    ),
    (
        "PlayMusic",
        &["artist", "genre"],
        &["play", "put on", "i want to hear"],
    ),
];

const VALUES: [(&str, [&str; 10]); 6] = [
    ("city", ["Boston", "Paris", "New York", "San Francisco", "Tokyo", "Berlin", "Rome", "Oslo", "Chicago", "Lima"]),
    ("cuisine", ["thai", "italian", "sushi", "mexican", "indian", "french", "korean", "greek", "vegan", "fish and chips"]),
    ("party_size", ["2", "3", "4", "5", "6", "7", "8", "two", "four", "ten"]),
    ("date", ["today", "tomorrow", "monday", "this weekend", "next friday", "tonight", "saturday", "next sunday", "next week", "new year's eve"]),
    ("artist", ["Miles Davis", "Adele", "The Beatles", "Nina Simone", "Daft Punk", "Bob Marley", "Taylor Swift", "Radiohead", "Bjork", "John Coltrane"]),
    ("genre", ["jazz", "rock", "blues", "disco", "reggae", "classical", "punk", "soul", "techno", "country"]),
];

/// Carrier phrases around each slot value; `_` marks the value.
const PHRASES: [(&str, &[&str]); 6] = [
    ("city", &["in _", "near _"]),
    ("cuisine", &["serving _ food", "craving _"]),
    ("party_size", &["for _ people", "seating _"]),
    ("date", &["on _", "sometime _"]),
    ("artist", &["by _", "songs of _"]),
    ("genre", &["some _", "_ music"]),
];

const CLOSERS: [&str; 5] = ["", "", "please", "thanks", "right now"];

pub const SMALL_SIZE: usize = 40;
pub const VALID_ACTS: usize = 500;
pub const UNLABELED: usize = 1000;
pub const TEST_SIZE: usize = 500;
pub const UNSEEN_PER_SLOT: usize = 3;

/// Everything the scenarios need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDomain {
    /// Labeled Small split plus unlabeled utterances.
    pub train: Corpus,
    pub test: Vec<LabeledExample>,
    /// All values and the valid acts.
    pub ontology: Ontology,
    /// Values held out of the labeled split, by slot.
    pub unseen: BTreeMap<String, BTreeSet<String>>,
}

fn phrases(slot: &str) -> &'static [&'static str] {
    PHRASES.iter().find(|(s, _)| *s == slot).expect("every slot has phrases").1
}

fn sample_act(rng: &mut ChaCha8Rng, allowed: &BTreeMap<&str, Vec<&'static str>>) -> DialogueAct {
    let (intent, slots, _) = INTENTS.choose(rng).expect("non-empty");
    let n = rng.random_range(1..=slots.len().min(3));
    let mut chosen: Vec<&str> = slots.to_vec();
    chosen.shuffle(rng);
    chosen.truncate(n);
    let pairs: Vec<SlotValue> = chosen
        .iter()
        .map(|s| SlotValue::new(s, allowed[s].choose(rng).expect("non-empty")).expect("static values are valid"))
        .collect();
    DialogueAct::new(intent, pairs).expect("distinct slots")
}

/// Renders `act` through the grammar: an intent opener, the slot phrases in
/// random order, and an optional closer.
pub fn render(act: &DialogueAct, rng: &mut ChaCha8Rng) -> LabeledExample {
    let (_, _, openers) = INTENTS
        .iter()
        .find(|(i, _, _)| *i == act.intent())
        .expect("toy intents only");
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    let push_words = |text: &str, tokens: &mut Vec<String>, tags: &mut Vec<Tag>| {
        for w in text.split_whitespace() {
            tokens.push(w.to_string());
            tags.push(Tag::Outside);
        }
    };
    push_words(openers.choose(rng).expect("non-empty"), &mut tokens, &mut tags);
    let mut order: Vec<&SlotValue> = act.slots().iter().collect();
    order.shuffle(rng);
    for sv in order {
        let phrase = phrases(sv.slot()).choose(rng).expect("non-empty");
        let (before, after) = phrase.split_once('_').expect("phrases hold a value marker");
        push_words(before, &mut tokens, &mut tags);
        for (k, w) in sv.value().split_whitespace().enumerate() {
            tokens.push(w.to_string());
            tags.push(if k == 0 {
                Tag::Begin(sv.slot().to_string())
            } else {
                Tag::Inside(sv.slot().to_string())
            });
        }
        push_words(after, &mut tokens, &mut tags);
    }
    push_words(CLOSERS.choose(rng).expect("non-empty"), &mut tokens, &mut tags);
    LabeledExample::new(
        Utterance::from_tokens(&tokens).expect("grammar tokens"),
        act.intent(),
        tags,
    )
    .expect("grammar output is BIO-valid")
}

/// Builds the domain deterministically from `seed`.
pub fn toy_domain(seed: u64) -> ToyDomain {
    let mut rng = stream_rng(seed, 0);
    let mut seen: BTreeMap<&str, Vec<&'static str>> = BTreeMap::new();
    let mut all: BTreeMap<&str, Vec<&'static str>> = BTreeMap::new();
    let mut unseen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (slot, vs) in &VALUES {
        let mut shuffled = vs.to_vec();
        shuffled.shuffle(&mut rng);
        let (held, kept) = shuffled.split_at(UNSEEN_PER_SLOT);
        seen.insert(slot, kept.to_vec());
        all.insert(slot, vs.to_vec());
        unseen.insert(slot.to_string(), held.iter().map(|v| v.to_string()).collect());
    }

    let mut rng = stream_rng(seed, 1);
    let paired: Vec<LabeledExample> = (0..SMALL_SIZE)
        .map(|_| {
            let act = sample_act(&mut rng, &seen);
            render(&act, &mut rng)
        })
        .collect();

    let mut rng = stream_rng(seed, 2);
    let mut taken: HashSet<_> = paired
        .iter()
        .map(|e| crate::align::da_from_labeled(e).canonical_key())
        .collect();
    let mut valid_acts = Vec::with_capacity(VALID_ACTS);
    while valid_acts.len() < VALID_ACTS {
        let act = sample_act(&mut rng, &all);
        if taken.insert(act.canonical_key()) {
            valid_acts.push(act);
        }
    }

    let mut rng = stream_rng(seed, 3);
    let utterances: Vec<Utterance> = (0..UNLABELED)
        .map(|_| {
            let act = sample_act(&mut rng, &all);
            render(&act, &mut rng).utterance().clone()
        })
        .collect();

    let mut rng = stream_rng(seed, 4);
    let test: Vec<LabeledExample> = (0..TEST_SIZE)
        .map(|_| {
            let act = sample_act(&mut rng, &all);
            render(&act, &mut rng)
        })
        .collect();

    let ontology = Ontology::new(
        INTENTS.iter().map(|(i, _, _)| i.to_string()).collect(),
        VALUES.iter().map(|(s, _)| s.to_string()).collect(),
        VALUES
            .iter()
            .map(|(s, vs)| (s.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect(),
        Some(valid_acts),
    )
    .expect("toy ontology is consistent");

    ToyDomain {
        train: Corpus {
            paired,
            acts_only: Vec::new(),
            utterances_only: utterances,
        },
        test,
        ontology,
        unseen,
    }
}

impl ToyDomain {
    /// File name and contents of each committed file.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            (TRAIN_FILE, emit_corpus(&self.train)),
            (
                TEST_FILE,
                emit_corpus(&Corpus {
                    paired: self.test.clone(),
                    ..Default::default()
                }),
            ),
            (ONTOLOGY_FILE, emit_ontology(&self.ontology)),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |path: &Path, e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, text) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::da_from_labeled;
    use crate::dialogue::validate;

    #[test]
    fn shape() {
        let d = toy_domain(TOY_SEED);
        assert_eq!(d.train.paired.len(), SMALL_SIZE);
        assert_eq!(d.train.utterances_only.len(), UNLABELED);
        assert_eq!(d.test.len(), TEST_SIZE);
        assert_eq!(d.ontology.valid_acts().len(), VALID_ACTS);
        assert_eq!(d.ontology.intents.len(), 3);
        assert_eq!(d.ontology.slots.len(), 6);
        assert!(validate(&d.train, &d.ontology).is_empty());
        let total: usize = d.ontology.known_values.values().map(BTreeSet::len).sum();
        let held: usize = d.unseen.values().map(BTreeSet::len).sum();
        assert_eq!(held * 10, total * 3);
    }

    #[test]
    fn held_out_values_stay_out_of_the_labeled_split() {
        let d = toy_domain(TOY_SEED);
        for ex in &d.train.paired {
            for sv in da_from_labeled(ex).slots() {
                assert!(!d.unseen[sv.slot()].contains(sv.value()), "{sv:?}");
            }
        }
        let in_acts = d
            .ontology
            .valid_acts()
            .iter()
            .flat_map(|a| a.slots())
            .filter(|sv| d.unseen[sv.slot()].contains(sv.value()))
            .count();
        assert!(in_acts > 100);
    }

    #[test]
    fn deterministic() {
        assert_eq!(toy_domain(5), toy_domain(5));
        assert_ne!(toy_domain(5).test, toy_domain(6).test);
    }
}
