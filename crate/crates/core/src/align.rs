//! Locating slot values in token sequences, the coverage filter, and the
//! conversions between (utterance, act) pairs and BIO-labeled examples.
//!
//! Matching is token-level. Under the default [`MatchPolicy`] tokens are
//! compared lowercased with trailing `.,!?` stripped, so the value
//! `metal talks Metallica` matches the tokens `Metal Talks Metallica`.
//!
//! When an act has several values, spans are assigned in a fixed preference
//! order: longer values (in tokens) first, then slot name, then value text,
//! each taking its leftmost unclaimed occurrence. If that greedy pass gets
//! stuck, a backtracking search over the same preference order looks for any
//! non-overlapping assignment, so the filter accepts exactly the utterances for
//! which one exists.

use thiserror::Error;

use crate::dialogue::{DialogueAct, LabeledExample, SlotValue, Tag, Utterance};
use crate::metrics::chunks;

/// Token comparison rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPolicy {
    pub case_insensitive: bool,
    /// Strip trailing `.,!?` from tokens before comparing.
    pub punctuation_stripping: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            case_insensitive: true,
            punctuation_stripping: true,
        }
    }
}

impl MatchPolicy {
    pub const EXACT: MatchPolicy = MatchPolicy {
        case_insensitive: false,
        punctuation_stripping: false,
    };

    pub fn normalize_token(&self, token: &str) -> String {
        let t = if self.punctuation_stripping {
            token.trim_end_matches(['.', ',', '!', '?'])
        } else {
            token
        };
        if self.case_insensitive {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    }

    pub fn normalize_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens.iter().map(|t| self.normalize_token(t.as_ref())).collect()
    }

    /// A value's whitespace-separated tokens, normalized.
    pub fn normalize_value(&self, value: &str) -> Vec<String> {
        value.split_whitespace().map(|t| self.normalize_token(t)).collect()
    }
}

/// Half-open token interval `[start, end)`.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("alignment failed; values not found: {missing:?}")]
    AlignmentFailed {
        /// `slot=value` entries that have no occurrence at all. Empty when
        /// every value occurs but no non-overlapping assignment exists.
        missing: Vec<String>,
    },
}

/// Every start position where `needle` occurs in `haystack`, ascending.
pub(crate) fn occurrences(haystack: &[String], needle: &[String]) -> Vec<Span> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| (i, i + needle.len()))
        .collect()
}

/// Leftmost span of `tokens` whose normalized form equals the normalized
/// `value`.
pub fn find_span<S: AsRef<str>>(tokens: &[S], value: &str, policy: &MatchPolicy) -> Option<Span> {
    let hay = policy.normalize_all(tokens);
    occurrences(&hay, &policy.normalize_value(value)).into_iter().next()
}

/// Preference order in which the pairs of `da` claim spans.
fn claim_order(da: &DialogueAct, policy: &MatchPolicy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..da.len()).collect();
    let lens: Vec<usize> = da
        .slots()
        .iter()
        .map(|sv| policy.normalize_value(sv.value()).len())
        .collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&da.slots()[a], &da.slots()[b]);
        lens[b]
            .cmp(&lens[a])
            .then_with(|| sa.slot().cmp(sb.slot()))
            .then_with(|| sa.value().cmp(sb.value()))
            .then_with(|| a.cmp(&b))
    });
    order
}

fn search(
    order: &[usize],
    candidates: &[Vec<Span>],
    claimed: &mut [bool],
    chosen: &mut [Span],
) -> bool {
    let Some((&k, rest)) = order.split_first() else {
        return true;
    };
    for &(s, e) in &candidates[k] {
        if claimed[s..e].iter().any(|c| *c) {
            continue;
        }
        claimed[s..e].iter_mut().for_each(|c| *c = true);
        chosen[k] = (s, e);
        if search(rest, candidates, claimed, chosen) {
            return true;
        }
        claimed[s..e].iter_mut().for_each(|c| *c = false);
    }
    false
}

/// Assigns a non-overlapping span to every pair of `da`, indexed like
/// `da.slots()`.
pub fn assign_spans<S: AsRef<str>>(
    tokens: &[S],
    da: &DialogueAct,
    policy: &MatchPolicy,
) -> Result<Vec<Span>, AlignError> {
    let hay = policy.normalize_all(tokens);
    let candidates: Vec<Vec<Span>> = da
        .slots()
        .iter()
        .map(|sv| occurrences(&hay, &policy.normalize_value(sv.value())))
        .collect();
    let missing: Vec<String> = da
        .slots()
        .iter()
        .zip(&candidates)
        .filter(|(_, c)| c.is_empty())
        .map(|(sv, _)| format!("{}={}", sv.slot(), sv.value()))
        .collect();
    if !missing.is_empty() {
        return Err(AlignError::AlignmentFailed { missing });
    }
    let order = claim_order(da, policy);
    let mut claimed = vec![false; hay.len()];
    let mut chosen = vec![(0, 0); da.len()];
    // depth-first in preference order; the first leaf reached is the greedy
    // assignment whenever greedy succeeds
    if search(&order, &candidates, &mut claimed, &mut chosen) {
        Ok(chosen)
    } else {
        Err(AlignError::AlignmentFailed { missing: Vec::new() })
    }
}

/// The coverage filter: every value of `da` occurs in the utterance and the
/// occurrences can be chosen without overlap.
pub fn contains_all_values(utterance: &Utterance, da: &DialogueAct, policy: &MatchPolicy) -> bool {
    assign_spans(utterance.tokens(), da, policy).is_ok()
}

/// BIO-labels `utterance` from the spans chosen by [`assign_spans`].
pub fn label_with_da(
    utterance: &Utterance,
    da: &DialogueAct,
    policy: &MatchPolicy,
) -> Result<LabeledExample, AlignError> {
    let spans = assign_spans(utterance.tokens(), da, policy)?;
    let mut tags = vec![Tag::Outside; utterance.len()];
    for (sv, &(s, e)) in da.slots().iter().zip(&spans) {
        tags[s] = Tag::Begin(sv.slot().to_string());
        for t in &mut tags[s + 1..e] {
            *t = Tag::Inside(sv.slot().to_string());
        }
    }
    Ok(LabeledExample::new(utterance.clone(), da.intent(), tags)
        .expect("spans are disjoint and in range"))
}

/// Reads the act back off a labeled example: one pair per chunk, in order,
/// with the original token casing. Exact duplicate pairs, and chunks whose
/// text cannot be a slot value, are skipped.
pub fn da_from_labeled(example: &LabeledExample) -> DialogueAct {
    let mut slots: Vec<SlotValue> = Vec::new();
    for chunk in chunks(example.tags()) {
        let text = example.tokens()[chunk.start..chunk.end].join(" ");
        if let Ok(sv) = SlotValue::new(&chunk.label, &text) {
            if !slots.contains(&sv) {
                slots.push(sv);
            }
        }
    }
    DialogueAct::new(example.intent(), slots).expect("pairs deduplicated")
}
