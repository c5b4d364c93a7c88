use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::tagger::canonical_order;
use super::{Averaged, ModelError, TrainOptions, LABEL_MARKER};
use crate::dialogue::LabeledExample;
use crate::exec::stream_rng;

/// Something that ranks intents for a token sequence.
pub trait IntentScorer {
    /// Best intent and its margin over the runner-up (infinite when there is
    /// only one intent).
    fn best_with_margin(&self, tokens: &[String]) -> (String, f64);
}

fn bag_features<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut f = Vec::with_capacity(2 * lower.len() + 2);
    f.push("bias".to_string());
    for w in &lower {
        f.push(format!("u={w}"));
    }
    let padded: Vec<&str> = std::iter::once("<s>")
        .chain(lower.iter().map(String::as_str))
        .chain(std::iter::once("</s>"))
        .collect();
    for pair in padded.windows(2) {
        f.push(format!("b={}|{}", pair[0], pair[1]));
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    intents: Vec<String>,
    features: HashMap<String, u32>,
    weights: Vec<f64>,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

impl IntentModel {
    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    fn feature_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        bag_features(tokens)
            .iter()
            .filter_map(|f| self.features.get(f).copied())
            .collect()
    }

    fn score_ids(weights: &[f64], nc: usize, ids: &[u32]) -> Vec<f64> {
        let mut s = vec![0.0; nc];
        for &f in ids {
            let row = &weights[f as usize * nc..(f as usize + 1) * nc];
            for (acc, w) in s.iter_mut().zip(row) {
                *acc += w;
            }
        }
        s
    }

    /// Scores in [`IntentModel::intents`] order.
    pub fn scores<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        Self::score_ids(&self.weights, self.intents.len(), &self.feature_ids(tokens))
    }

    /// Highest-scoring intent; ties go to the intent that sorts first.
    pub fn classify<S: AsRef<str>>(&self, tokens: &[S]) -> &str {
        &self.intents[argmax(&self.scores(tokens))]
    }

    pub fn to_text(&self) -> String {
        let nc = self.intents.len();
        let mut lines: Vec<String> = self
            .intents
            .iter()
            .map(|i| format!("{LABEL_MARKER}\t{i}\t0"))
            .collect();
        for (name, &f) in &self.features {
            for (c, intent) in self.intents.iter().enumerate() {
                let w = self.weights[f as usize * nc + c];
                if w != 0.0 {
                    lines.push(format!("{name}\t{intent}\t{w}"));
                }
            }
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut intents: BTreeSet<String> = BTreeSet::new();
        let mut entries: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(ModelError::parse(i + 1, "expected feature<TAB>label<TAB>weight"));
            }
            let w: f64 = cols[2].parse().map_err(|e| ModelError::weight(i + 1, e))?;
            intents.insert(cols[1].to_string());
            if cols[0] != LABEL_MARKER {
                entries.insert((cols[0].to_string(), cols[1].to_string()), w);
            }
        }
        if intents.is_empty() {
            return Err(ModelError::Empty);
        }
        let intents: Vec<String> = intents.into_iter().collect();
        let nc = intents.len();
        let mut features = HashMap::new();
        let mut weights = Vec::new();
        for ((name, intent), w) in entries {
            let next = features.len() as u32;
            let f = *features.entry(name).or_insert(next);
            if f == next {
                weights.extend(std::iter::repeat_n(0.0, nc));
            }
            let c = intents.binary_search(&intent).expect("collected above");
            weights[f as usize * nc + c] = w;
        }
        Ok(IntentModel {
            intents,
            features,
            weights,
        })
    }
}

impl IntentScorer for IntentModel {
    fn best_with_margin(&self, tokens: &[String]) -> (String, f64) {
        let scores = self.scores(tokens);
        let best = argmax(&scores);
        let runner_up = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        (self.intents[best].clone(), scores[best] - runner_up)
    }
}

/// Averaged multiclass perceptron over lowercased unigrams and bigrams.
pub fn train_intent(examples: &[LabeledExample], opts: &TrainOptions<'_>) -> Result<IntentModel, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::Empty);
    }
    let sorted = canonical_order(examples);
    let intents: Vec<String> = sorted
        .iter()
        .map(|e| e.intent().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let nc = intents.len();
    let mut features: HashMap<String, u32> = HashMap::new();
    let obs: Vec<Vec<u32>> = sorted
        .iter()
        .map(|e| {
            bag_features(e.tokens())
                .into_iter()
                .map(|f| {
                    let next = features.len() as u32;
                    *features.entry(f).or_insert(next)
                })
                .collect()
        })
        .collect();
    let gold: Vec<usize> = sorted
        .iter()
        .map(|e| intents.binary_search_by(|i| i.as_str().cmp(e.intent())).expect("collected"))
        .collect();
    let mut weights = Averaged::zeros(features.len() * nc);
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 0..opts.epochs {
        let mut rng = stream_rng(opts.seed ^ 0x1D7E_0000_0000_0000, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for &i in &order {
            weights.begin_step();
            let guess = argmax(&IntentModel::score_ids(weights.raw(), nc, &obs[i]));
            if guess != gold[i] {
                for &f in &obs[i] {
                    weights.update(f as usize * nc + gold[i], 1.0);
                    weights.update(f as usize * nc + guess, -1.0);
                }
            }
        }
        if let Some(dev) = opts.dev {
            let model = IntentModel {
                intents: intents.clone(),
                features: features.clone(),
                weights: weights.averaged(),
            };
            let hits = dev.iter().filter(|e| model.classify(e.tokens()) == e.intent()).count();
            let acc = hits as f64 / dev.len().max(1) as f64;
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.weights));
            }
        }
    }
    let weights = match best {
        Some((_, w)) => w,
        None => weights.averaged(),
    };
    Ok(IntentModel {
        intents,
        features,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Tag, Utterance};

    fn ex(words: &str, intent: &str) -> LabeledExample {
        let u = Utterance::parse(words).unwrap();
        let n = u.len();
        LabeledExample::new(u, intent, vec![Tag::Outside; n]).unwrap()
    }

    #[test]
    fn one_class_always_wins() {
        let m = train_intent(&[ex("hello", "Greet")], &TrainOptions::default()).unwrap();
        assert_eq!(m.classify(&["anything", "at", "all"]), "Greet");
        let (best, margin) = m.best_with_margin(&["x".to_string()]);
        assert_eq!((best.as_str(), margin), ("Greet", f64::INFINITY));
    }

    #[test]
    fn separable_set_is_learned() {
        let data = vec![
            ex("play some jazz", "PlayMusic"),
            ex("play the beatles", "PlayMusic"),
            ex("put on some rock", "PlayMusic"),
            ex("weather in boston", "GetWeather"),
            ex("will it rain tomorrow", "GetWeather"),
            ex("is it sunny in paris", "GetWeather"),
        ];
        let m = train_intent(&data, &TrainOptions::default()).unwrap();
        for e in &data {
            assert_eq!(m.classify(e.tokens()), e.intent(), "{}", e.utterance().text());
        }
    }

    #[test]
    fn ties_go_to_first_intent_name() {
        let data = vec![ex("a", "Zed"), ex("a", "Alpha")];
        let m = train_intent(&data, &TrainOptions { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(m.classify(&["a"]), "Alpha");
        assert_eq!(m.best_with_margin(&["a".to_string()]).1, 0.0);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let data = vec![ex("play jazz", "PlayMusic"), ex("weather today", "GetWeather"), ex("play rock now", "PlayMusic")];
        let opts = TrainOptions { epochs: 3, seed: 4, dev: Some(&data), ..Default::default() };
        let a = train_intent(&data, &opts).unwrap();
        let b = train_intent(&data, &opts).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let back = IntentModel::from_text(&a.to_text()).unwrap();
        assert_eq!(back.to_text(), a.to_text());
        assert_eq!(back.classify(&["play", "jazz"]), "PlayMusic");
        assert!(IntentModel::from_text("").is_err());
    }
}
