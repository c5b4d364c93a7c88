use std::cmp::Reverse;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{DecodingParams, GenError};
use crate::dialogue::{DialogueAct, LabeledExample, Utterance};
use crate::metrics::chunks;

/// One token of a delexicalized template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Piece {
    Word(String),
    /// A `<slot>` placeholder standing for a whole value.
    Slot(String),
}

impl fmt::Display for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Word(w) => f.write_str(w),
            Piece::Slot(s) => write!(f, "<{s}>"),
        }
    }
}

type Template = Vec<Piece>;

/// Delexicalized training utterances keyed by intent and slot signature,
/// with their multiplicities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateModel {
    templates: BTreeMap<String, BTreeMap<Vec<String>, BTreeMap<Template, usize>>>,
}

impl TemplateModel {
    pub fn intents(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn signatures(&self, intent: &str) -> impl Iterator<Item = &[String]> {
        self.templates
            .get(intent)
            .into_iter()
            .flat_map(|m| m.keys().map(Vec::as_slice))
    }

    /// Templates under `(intent, signature)` with their counts.
    pub fn templates(&self, intent: &str, signature: &[String]) -> impl Iterator<Item = (&[Piece], usize)> {
        self.templates
            .get(intent)
            .and_then(|m| m.get(signature))
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, c)| (t.as_slice(), *c)))
    }

    pub fn len(&self) -> usize {
        self.templates
            .values()
            .flat_map(|m| m.values())
            .map(BTreeMap::len)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// The signature used for `da`: its own when known, else the one with
    /// the smallest multiset symmetric difference, then the most frequent,
    /// then the lexicographically first.
    pub fn choose_signature(&self, da: &DialogueAct) -> Result<&[String], GenError> {
        let by_sig = self
            .templates
            .get(da.intent())
            .ok_or_else(|| GenError::NoTemplateForIntent(da.intent().to_string()))?;
        let want = da.signature();
        if let Some((sig, _)) = by_sig.get_key_value(&want) {
            return Ok(sig);
        }
        let (sig, _) = by_sig
            .iter()
            .min_by_key(|(sig, ts)| (symmetric_difference(sig, &want), Reverse(ts.values().sum::<usize>()), *sig))
            .expect("intents are only recorded with a template");
        Ok(sig)
    }
}

/// Size of the multiset symmetric difference of two sorted lists.
fn symmetric_difference(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut d) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                d += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                d += 1;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    d + (a.len() - i) + (b.len() - j)
}

fn delexicalize(example: &LabeledExample) -> (Vec<String>, Template) {
    let mut out = Vec::new();
    let mut sig = Vec::new();
    let mut next = 0;
    for chunk in chunks(example.tags()) {
        out.extend(example.tokens()[next..chunk.start].iter().cloned().map(Piece::Word));
        sig.push(chunk.label.clone());
        out.push(Piece::Slot(chunk.label));
        next = chunk.end;
    }
    out.extend(example.tokens()[next..].iter().cloned().map(Piece::Word));
    sig.sort();
    (sig, out)
}

/// Replaces each slot chunk of every example by a placeholder and counts
/// the resulting templates.
pub fn train_template_generator(paired: &[LabeledExample]) -> TemplateModel {
    let mut model = TemplateModel::default();
    for ex in paired {
        let (sig, template) = delexicalize(ex);
        *model
            .templates
            .entry(ex.intent().to_string())
            .or_default()
            .entry(sig)
            .or_default()
            .entry(template)
            .or_default() += 1;
    }
    model
}

/// Fills placeholders with `da`'s values in pair order. Placeholders with
/// no value left are dropped; if nothing at all remains the raw template
/// text is returned, which no value-bearing act can pass the filter with.
fn fill(template: &[Piece], da: &DialogueAct) -> Utterance {
    let mut values: BTreeMap<&str, VecDeque<&str>> = BTreeMap::new();
    for sv in da.slots() {
        values.entry(sv.slot()).or_default().push_back(sv.value());
    }
    let mut tokens: Vec<&str> = Vec::new();
    for piece in template {
        match piece {
            Piece::Word(w) => tokens.push(w),
            Piece::Slot(s) => {
                if let Some(v) = values.get_mut(s.as_str()).and_then(VecDeque::pop_front) {
                    tokens.extend(v.split_whitespace());
                }
            }
        }
    }
    if tokens.is_empty() {
        let raw: Vec<String> = template.iter().map(Piece::to_string).collect();
        return Utterance::from_tokens(&raw).expect("templates are never empty");
    }
    Utterance::from_tokens(&tokens).expect("words and values are whitespace-free tokens")
}

/// Draws `params.samples_per_input` templates for `da` (with replacement,
/// weighted by frequency) and fills them. `top_p` and `temperature` do not
/// apply to templates and are ignored.
pub fn generate<R: Rng>(
    model: &TemplateModel,
    da: &DialogueAct,
    params: &DecodingParams,
    rng: &mut R,
) -> Result<Vec<Utterance>, GenError> {
    let sig = model.choose_signature(da)?;
    let pool: Vec<(&[Piece], usize)> = model.templates(da.intent(), sig).collect();
    let dist = WeightedIndex::new(pool.iter().map(|(_, c)| *c)).expect("counts are positive");
    Ok((0..params.samples_per_input)
        .map(|_| fill(pool[dist.sample(rng)].0, da))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{contains_all_values, da_from_labeled, label_with_da, MatchPolicy};
    use crate::dialogue::Tag;
    use crate::exec::stream_rng;

    fn ex(words: &str, tags: &str, intent: &str) -> LabeledExample {
        LabeledExample::new(
            Utterance::parse(words).unwrap(),
            intent,
            tags.split_whitespace().map(|t| t.parse::<Tag>().unwrap()).collect(),
        )
        .unwrap()
    }

    fn text(t: &[Piece]) -> String {
        t.iter().map(Piece::to_string).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn single_substitution() {
        let m = train_template_generator(&[ex("book a table in Boston", "O O O O B-city", "Book")]);
        let ts: Vec<_> = m.templates("Book", &["city".to_string()]).collect();
        assert_eq!(ts.len(), 1);
        assert_eq!(text(ts[0].0), "book a table in <city>");
        assert_eq!(ts[0].1, 1);
    }

    #[test]
    fn duplicates_are_counted() {
        let m = train_template_generator(&[
            ex("fly to Rome", "O O B-city", "Fly"),
            ex("fly to Paris", "O O B-city", "Fly"),
            ex("fly to New York", "O O B-city I-city", "Fly"),
        ]);
        let ts: Vec<_> = m.templates("Fly", &["city".to_string()]).collect();
        assert_eq!(ts, vec![(&[Piece::Word("fly".into()), Piece::Word("to".into()), Piece::Slot("city".into())][..], 3)]);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn unseen_intent() {
        let m = train_template_generator(&[ex("hi", "O", "Greet")]);
        let da = DialogueAct::from_pairs("Fly", &[]).unwrap();
        assert_eq!(
            generate(&m, &da, &DecodingParams::default(), &mut stream_rng(0, 0)),
            Err(GenError::NoTemplateForIntent("Fly".into()))
        );
    }

    #[test]
    fn training_act_gets_its_shape_back_and_arity_holds() {
        let m = train_template_generator(&[ex("Give 3 out of 6 to current textbook", "O B-rating_value O O B-best_rating O B-object_select B-object_type", "RateBook")]);
        let da = DialogueAct::from_pairs(
            "RateBook",
            &[("best_rating", "5"), ("object_select", "this"), ("object_type", "novel"), ("rating_value", "4")],
        )
        .unwrap();
        let params = DecodingParams::default();
        let out = generate(&m, &da, &params, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(out.len(), 3);
        for u in &out {
            assert_eq!(u.text(), "Give 4 out of 5 to this novel");
            assert!(contains_all_values(u, &da, &MatchPolicy::default()));
        }
    }

    #[test]
    fn fallback_signature_rules() {
        let m = train_template_generator(&[
            ex("weather in Rome", "O O B-city", "W"),
            ex("weather on Monday", "O O B-date", "W"),
            ex("weather on Sunday", "O O B-date", "W"),
            ex("weather in Oslo on Friday", "O O B-city O B-date", "W"),
        ]);
        // {city, cuisine} is 1 away from {city} and 2 from {city, date}
        let da = DialogueAct::from_pairs("W", &[("city", "Paris"), ("cuisine", "thai")]).unwrap();
        assert_eq!(m.choose_signature(&da).unwrap(), &["city".to_string()]);
        // {}: {city} and {date} both at distance 1, {date} is more frequent
        let da = DialogueAct::from_pairs("W", &[]).unwrap();
        assert_eq!(m.choose_signature(&da).unwrap(), &["date".to_string()]);
        // unplaceable value → candidate fails the filter
        let da = DialogueAct::from_pairs("W", &[("city", "Paris"), ("cuisine", "thai")]).unwrap();
        let out = generate(&m, &da, &DecodingParams::default(), &mut stream_rng(0, 0)).unwrap();
        assert!(out.iter().all(|u| !contains_all_values(u, &da, &MatchPolicy::default())));
        // extra placeholder without a value is dropped
        let out = generate(&m, &DialogueAct::from_pairs("W", &[]).unwrap(), &DecodingParams::default(), &mut stream_rng(0, 0)).unwrap();
        assert_eq!(out[0].text(), "weather on");
    }

    #[test]
    fn relexicalizing_with_original_values_reproduces_training() {
        let data = vec![
            ex("play Blue Train by John Coltrane now", "O B-track I-track O B-artist I-artist O", "Play"),
            ex("add the track to the Metal Talks Metallica playlist.", "O O B-music_item O O B-playlist I-playlist I-playlist O", "Add"),
            ex("2 of us want meatballs", "B-party O O O B-dish", "Eat"),
        ];
        let m = train_template_generator(&data);
        for e in &data {
            let da = da_from_labeled(e);
            let out = generate(&m, &da, &DecodingParams::default(), &mut stream_rng(9, 0)).unwrap();
            assert_eq!(out[0].tokens(), e.tokens());
            let relabeled = label_with_da(&out[0], &da, &MatchPolicy::default()).unwrap();
            assert_eq!(relabeled.tags(), e.tags());
        }
    }

    #[test]
    fn sampling_follows_frequency() {
        let mut data = vec![ex("a X", "O B-s", "I"); 9];
        data.push(ex("b X", "O B-s", "I"));
        let m = train_template_generator(&data);
        let da = DialogueAct::from_pairs("I", &[("s", "v")]).unwrap();
        let params = DecodingParams { samples_per_input: 2000, ..Default::default() };
        let out = generate(&m, &da, &params, &mut stream_rng(3, 3)).unwrap();
        let b = out.iter().filter(|u| u.tokens()[0] == "b").count();
        assert!((120..280).contains(&b), "{b}");
    }
}
