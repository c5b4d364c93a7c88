use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use super::GenError;
use crate::align::{da_from_labeled, occurrences, MatchPolicy, Span};
use crate::corpus::ValueInventory;
use crate::dialogue::{DialogueAct, LabeledExample, Ontology, SlotValue, Utterance};
use crate::slu::IntentScorer;

/// What the string-matching labeler knows: every value surface form with
/// the slots it can fill, and how often each slot goes with each intent.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    forms: BTreeMap<Vec<String>, Vec<Candidate>>,
    intent_slots: BTreeMap<(String, String), usize>,
    policy: MatchPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    slot: String,
    value: String,
    count: usize,
}

impl Lexicon {
    /// Values come from `inventory` and the ontology's known values;
    /// intent-slot counts from `acts` and the ontology's valid acts.
    pub fn new(ontology: &Ontology, inventory: &ValueInventory, acts: &[DialogueAct], policy: MatchPolicy) -> Self {
        let mut forms: BTreeMap<Vec<String>, Vec<Candidate>> = BTreeMap::new();
        for (slot, values) in inventory.value_pool(Some(ontology)) {
            for value in values {
                let form = policy.normalize_value(&value);
                if form.is_empty() || form.iter().any(String::is_empty) {
                    continue;
                }
                let cand = Candidate {
                    count: inventory.count(&slot, &value),
                    slot: slot.clone(),
                    value,
                };
                let entry = forms.entry(form).or_default();
                // one surface per slot: the most frequent, then the first
                match entry.iter_mut().find(|c| c.slot == cand.slot) {
                    Some(c) if cand.count > c.count => *c = cand,
                    Some(_) => {}
                    None => entry.push(cand),
                }
            }
        }
        let mut intent_slots = BTreeMap::new();
        for act in acts.iter().chain(ontology.valid_acts()) {
            for sv in act.slots() {
                *intent_slots
                    .entry((act.intent().to_string(), sv.slot().to_string()))
                    .or_default() += 1;
            }
        }
        Lexicon {
            forms,
            intent_slots,
            policy,
        }
    }

    pub fn from_training(paired: &[LabeledExample], ontology: &Ontology) -> Self {
        let acts: Vec<DialogueAct> = paired.iter().map(da_from_labeled).collect();
        Lexicon::new(
            ontology,
            &ValueInventory::from_examples(paired),
            &acts,
            MatchPolicy::default(),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Maximal non-overlapping value matches: longer first, then leftmost.
    fn matches(&self, tokens: &[String]) -> Vec<(Span, &[Candidate])> {
        let hay = self.policy.normalize_all(tokens);
        let mut found: Vec<(Span, &[Candidate])> = self
            .forms
            .iter()
            .flat_map(|(form, cands)| {
                occurrences(&hay, form)
                    .into_iter()
                    .map(move |span| (span, cands.as_slice()))
            })
            .collect();
        found.sort_by_key(|&((s, e), _)| (Reverse(e - s), s));
        let mut claimed = vec![false; hay.len()];
        let mut kept = Vec::new();
        for ((s, e), cands) in found {
            if claimed[s..e].iter().any(|c| *c) {
                continue;
            }
            claimed[s..e].iter_mut().for_each(|c| *c = true);
            kept.push(((s, e), cands));
        }
        kept.sort_by_key(|(span, _)| *span);
        kept
    }

    /// For a value several slots share: the slot seen most with `intent`,
    /// then the more frequent value, then the slot name.
    fn resolve<'a>(&self, intent: &str, cands: &'a [Candidate]) -> &'a Candidate {
        cands
            .iter()
            .min_by_key(|c| {
                let co = self
                    .intent_slots
                    .get(&(intent.to_string(), c.slot.clone()))
                    .copied()
                    .unwrap_or(0);
                (Reverse(co), Reverse(c.count), c.slot.as_str())
            })
            .expect("forms always carry a candidate")
    }
}

/// Labels `utterance` with the scorer's intent and every known value found
/// in it. Fails with `NoEvidence` when no value matches and the intent
/// margin is not above `min_margin`.
pub fn pseudo_label(
    utterance: &Utterance,
    lexicon: &Lexicon,
    scorer: &dyn IntentScorer,
    min_margin: f64,
) -> Result<DialogueAct, GenError> {
    let (intent, margin) = scorer.best_with_margin(utterance.tokens());
    let found = lexicon.matches(utterance.tokens());
    if found.is_empty() && margin <= min_margin {
        return Err(GenError::NoEvidence);
    }
    let mut slots: Vec<SlotValue> = Vec::new();
    for (_, cands) in found {
        let c = lexicon.resolve(&intent, cands);
        let sv = SlotValue::new(&c.slot, &c.value).expect("inventory values are valid");
        if !slots.contains(&sv) {
            slots.push(sv);
        }
    }
    Ok(DialogueAct::new(&intent, slots).expect("pairs deduplicated and intent comes from training"))
}

/// Lowercases and drops `_`, `-` and spaces.
pub fn fold_name(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '_' | '-' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Renames the intent and slots of `da` to the ontology identifiers they
/// fold to. Pairs whose slot matches nothing are dropped; values equal to a
/// known value up to case take its spelling.
pub fn map_to_ontology(da: &DialogueAct, ontology: &Ontology) -> Result<DialogueAct, GenError> {
    let fold_find = |set: &BTreeSet<String>, name: &str| {
        let want = fold_name(name);
        set.iter().find(|x| fold_name(x) == want).cloned()
    };
    let intent = fold_find(&ontology.intents, da.intent())
        .ok_or_else(|| GenError::UnknownIntent(da.intent().to_string()))?;
    let mut slots: Vec<SlotValue> = Vec::new();
    for sv in da.slots() {
        let Some(slot) = fold_find(&ontology.slots, sv.slot()) else {
            continue;
        };
        let lower = sv.value().to_lowercase();
        let value: &str = ontology
            .known_values
            .get(&slot)
            .and_then(|vs| vs.iter().find(|v| v.to_lowercase() == lower))
            .map_or(sv.value(), |v| v.as_str());
        let mapped = SlotValue::new(&slot, value).expect("parts were valid before");
        if !slots.contains(&mapped) {
            slots.push(mapped);
        }
    }
    Ok(DialogueAct::new(&intent, slots).expect("duplicates removed"))
}
