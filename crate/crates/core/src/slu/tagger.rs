use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Averaged, ModelError, TrainOptions, LABEL_MARKER};
use crate::dialogue::{LabeledExample, Tag};
use crate::exec::stream_rng;
use crate::metrics::slot_f1;

fn shape(word: &str) -> String {
    let mut out = String::new();
    for c in word.chars() {
        let k = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(k) {
            out.push(k);
        }
    }
    out
}

/// Features of position `i` that do not depend on the predicted tags.
pub fn observation_features<S: AsRef<str>>(tokens: &[S], i: usize) -> Vec<String> {
    let w = tokens[i].as_ref();
    let lw = w.to_lowercase();
    let chars: Vec<char> = lw.chars().collect();
    let mut f = Vec::with_capacity(12);
    f.push("bias".to_string());
    f.push(format!("w={w}"));
    f.push(format!("lw={lw}"));
    for k in 1..=3.min(chars.len()) {
        f.push(format!("p{k}={}", chars[..k].iter().collect::<String>()));
        f.push(format!("s{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
    }
    let prev = if i == 0 {
        "<s>".to_string()
    } else {
        tokens[i - 1].as_ref().to_lowercase()
    };
    let next = tokens
        .get(i + 1)
        .map_or_else(|| "</s>".to_string(), |t| t.as_ref().to_lowercase());
    let prev2 = if i < 2 {
        "<s>".to_string()
    } else {
        tokens[i - 2].as_ref().to_lowercase()
    };
    let next2 = tokens
        .get(i + 2)
        .map_or_else(|| "</s>".to_string(), |t| t.as_ref().to_lowercase());
    f.push(format!("pw={prev}"));
    f.push(format!("nw={next}"));
    f.push(format!("pw2={prev2}"));
    f.push(format!("nw2={next2}"));
    f.push(format!("ppw={prev2}|{prev}"));
    f.push(format!("nnw={next}|{next2}"));
    // the opening word carries most of the intent
    f.push(format!("fw={}", tokens[0].as_ref().to_lowercase()));
    f.push(format!("sh={}", shape(w)));
    f
}

/// Features derived from the token itself rather than its context.
fn is_lexical(feature: &str) -> bool {
    let key = feature.split_once('=').map_or(feature, |(k, _)| k);
    matches!(key, "w" | "lw" | "sh" | "p1" | "p2" | "p3" | "s1" | "s2" | "s3")
}

/// The feature recording the previously predicted tag.
pub fn prev_tag_feature(prev: Option<&Tag>) -> String {
    match prev {
        None => "pt=<s>".to_string(),
        Some(t) => format!("pt={t}"),
    }
}

/// `O` first, then `B-`/`I-` tags of every slot in a fixed order.
fn tag_set<'a>(slots: impl IntoIterator<Item = &'a str>) -> Vec<Tag> {
    let slots: BTreeSet<&str> = slots.into_iter().collect();
    let mut tags: BTreeSet<Tag> = BTreeSet::new();
    for s in slots {
        tags.insert(Tag::Begin(s.to_string()));
        tags.insert(Tag::Inside(s.to_string()));
    }
    std::iter::once(Tag::Outside).chain(tags).collect()
}

/// Greedy masked decoding over a flat weight table
/// `weights[feature * n_tags + tag]`.
fn decode(
    tags: &[Tag],
    weights: &[f64],
    obs: &[Vec<u32>],
    prev_feats: &[Option<u32>],
) -> Vec<usize> {
    decode_with_cost(tags, weights, obs, prev_feats, None)
}

/// [`decode`], optionally adding a unit cost to every tag that differs from
/// `gold` at its position.
fn decode_with_cost(
    tags: &[Tag],
    weights: &[f64],
    obs: &[Vec<u32>],
    prev_feats: &[Option<u32>],
    gold: Option<&[usize]>,
) -> Vec<usize> {
    let nt = tags.len();
    let mut out: Vec<usize> = Vec::with_capacity(obs.len());
    for (pos, feats) in obs.iter().enumerate() {
        let prev = out.last().copied();
        let pf = prev_feats[prev.unwrap_or(nt)];
        let mut best: Option<(usize, f64)> = None;
        for (t, tag) in tags.iter().enumerate() {
            if !tag.may_follow(prev.map(|p| &tags[p])) {
                continue;
            }
            let mut s: f64 = feats.iter().map(|&f| weights[f as usize * nt + t]).sum();
            if let Some(f) = pf {
                s += weights[f as usize * nt + t];
            }
            if gold.is_some_and(|g| g[pos] != t) {
                s += 1.0;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
        out.push(best.expect("O is always allowed").0);
    }
    out
}

/// A trained slot tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    tags: Vec<Tag>,
    features: HashMap<String, u32>,
    weights: Vec<f64>,
}

impl TaggerModel {
    /// A model that knows `slots` but has all-zero weights.
    pub fn empty<'a>(slots: impl IntoIterator<Item = &'a str>) -> Self {
        TaggerModel {
            tags: tag_set(slots),
            features: HashMap::new(),
            weights: Vec::new(),
        }
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    fn tag_index(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn weight(&self, feature: &str, tag: &Tag) -> f64 {
        match (self.features.get(feature), self.tag_index(tag)) {
            (Some(&f), Some(t)) => self.weights[f as usize * self.tags.len() + t],
            _ => 0.0,
        }
    }

    fn prev_feature_ids(&self) -> Vec<Option<u32>> {
        self.tags
            .iter()
            .map(Some)
            .chain(std::iter::once(None))
            .map(|t| self.features.get(&prev_tag_feature(t)).copied())
            .collect()
    }

    /// Greedy left-to-right decoding. The output is always BIO-valid.
    pub fn tag<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Tag> {
        let obs: Vec<Vec<u32>> = (0..tokens.len())
            .map(|i| {
                observation_features(tokens, i)
                    .iter()
                    .filter_map(|f| self.features.get(f).copied())
                    .collect()
            })
            .collect();
        decode(&self.tags, &self.weights, &obs, &self.prev_feature_ids())
            .into_iter()
            .map(|t| self.tags[t].clone())
            .collect()
    }

    /// Sorted `feature<TAB>label<TAB>weight` lines for every non-zero weight,
    /// plus one `__label__<TAB>tag<TAB>0` line per tag.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = self
            .tags
            .iter()
            .map(|t| format!("{LABEL_MARKER}\t{t}\t0"))
            .collect();
        let nt = self.tags.len();
        for (name, &f) in &self.features {
            for (t, tag) in self.tags.iter().enumerate() {
                let w = self.weights[f as usize * nt + t];
                if w != 0.0 {
                    lines.push(format!("{name}\t{tag}\t{w}"));
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
        let mut tags: BTreeSet<Tag> = BTreeSet::new();
        let mut entries: BTreeMap<(String, Tag), f64> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(ModelError::parse(n, "expected feature<TAB>label<TAB>weight"));
            }
            let tag: Tag = cols[1].parse().map_err(|_| ModelError::parse(n, "bad tag"))?;
            let w: f64 = cols[2].parse().map_err(|e| ModelError::weight(n, e))?;
            if cols[0] == LABEL_MARKER {
                tags.insert(tag);
            } else {
                entries.insert((cols[0].to_string(), tag), w);
            }
        }
        let slots: BTreeSet<String> = tags
            .iter()
            .chain(entries.keys().map(|(_, t)| t))
            .filter_map(|t| t.slot().map(str::to_string))
            .collect();
        let mut model = TaggerModel::empty(slots.iter().map(String::as_str));
        let nt = model.tags.len();
        for ((name, tag), w) in entries {
            let next = model.features.len() as u32;
            let f = *model.features.entry(name).or_insert(next);
            if f == next {
                model.weights.extend(std::iter::repeat_n(0.0, nt));
            }
            let t = model.tag_index(&tag).expect("tag set covers all slots");
            model.weights[f as usize * nt + t] = w;
        }
        Ok(model)
    }
}

/// Step-wise trainer; [`train_tagger`] drives it. Exposed so the averaging
/// can be inspected one example at a time.
pub struct TaggerTrainer<'a> {
    examples: &'a [LabeledExample],
    tags: Vec<Tag>,
    features: HashMap<String, u32>,
    obs: Vec<Vec<Vec<u32>>>,
    gold: Vec<Vec<usize>>,
    prev_feats: Vec<Option<u32>>,
    weights: Averaged,
    /// Word-identity features, by feature id.
    lexical: Vec<bool>,
}

impl<'a> TaggerTrainer<'a> {
    pub fn new(examples: &'a [LabeledExample]) -> Self {
        let tags = tag_set(examples.iter().flat_map(|e| e.tags().iter().filter_map(Tag::slot)));
        let mut features: HashMap<String, u32> = HashMap::new();
        let mut intern = |name: String| {
            let next = features.len() as u32;
            *features.entry(name).or_insert(next)
        };
        let prev_feats: Vec<Option<u32>> = tags
            .iter()
            .map(Some)
            .chain(std::iter::once(None))
            .map(|t| Some(intern(prev_tag_feature(t))))
            .collect();
        let obs: Vec<Vec<Vec<u32>>> = examples
            .iter()
            .map(|ex| {
                (0..ex.tokens().len())
                    .map(|i| observation_features(ex.tokens(), i).into_iter().map(&mut intern).collect())
                    .collect()
            })
            .collect();
        let gold = examples
            .iter()
            .map(|ex| {
                ex.tags()
                    .iter()
                    .map(|t| tags.iter().position(|x| x == t).expect("tag in set"))
                    .collect()
            })
            .collect();
        let weights = Averaged::zeros(features.len() * tags.len());
        let mut lexical = vec![false; features.len()];
        for (name, &f) in &features {
            lexical[f as usize] = is_lexical(name);
        }
        TaggerTrainer {
            lexical,
            examples,
            tags,
            features,
            obs,
            gold,
            prev_feats,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One perceptron step on example `i`: decode with the current weights
    /// plus a unit cost on every non-gold tag and, if wrong, add the gold
    /// feature vector and subtract the predicted one.
    pub fn step(&mut self, i: usize) {
        let obs = std::mem::take(&mut self.obs[i]);
        self.update(&obs, i);
        self.obs[i] = obs;
    }

    /// As [`step`](Self::step), but each token independently loses its
    /// word-identity features with probability `p`, so that the context
    /// features have to carry the decision on some visits.
    pub fn step_with_dropout<R: Rng>(&mut self, i: usize, p: f64, rng: &mut R) {
        if p <= 0.0 {
            return self.step(i);
        }
        let obs: Vec<Vec<u32>> = self.obs[i]
            .iter()
            .map(|feats| {
                if rng.random_bool(p.min(1.0)) {
                    feats.iter().copied().filter(|&f| !self.lexical[f as usize]).collect()
                } else {
                    feats.clone()
                }
            })
            .collect();
        self.update(&obs, i);
    }

    fn update(&mut self, obs: &[Vec<u32>], i: usize) {
        self.weights.begin_step();
        let gold = &self.gold[i];
        let pred = decode_with_cost(&self.tags, self.weights.raw(), obs, &self.prev_feats, Some(gold));
        if &pred == gold {
            return;
        }
        let nt = self.tags.len();
        let start = nt;
        let mut delta: BTreeMap<usize, f64> = BTreeMap::new();
        for (pos, feats) in obs.iter().enumerate() {
            for (path, sign) in [(gold, 1.0), (&pred, -1.0)] {
                let t = path[pos];
                let prev = if pos == 0 { start } else { path[pos - 1] };
                let pf = self.prev_feats[prev].expect("interned");
                for &f in feats.iter().chain(std::iter::once(&pf)) {
                    *delta.entry(f as usize * nt + t).or_insert(0.0) += sign;
                }
            }
        }
        for (idx, d) in delta {
            if d != 0.0 {
                self.weights.update(idx, d);
            }
        }
    }

    pub fn raw_weights(&self) -> &[f64] {
        self.weights.raw()
    }

    fn model(&self, weights: Vec<f64>) -> TaggerModel {
        TaggerModel {
            tags: self.tags.clone(),
            features: self.features.clone(),
            weights,
        }
    }

    pub fn current_model(&self) -> TaggerModel {
        self.model(self.weights.raw().to_vec())
    }

    pub fn averaged_model(&self) -> TaggerModel {
        self.model(self.weights.averaged())
    }
}

/// Examples sorted into a canonical order, so that the seeded shuffle alone
/// decides the visiting order.
pub(crate) fn canonical_order(examples: &[LabeledExample]) -> Vec<LabeledExample> {
    let mut sorted = examples.to_vec();
    sorted.sort();
    sorted
}

pub fn train_tagger(examples: &[LabeledExample], opts: &TrainOptions<'_>) -> Result<TaggerModel, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::Empty);
    }
    let sorted = canonical_order(examples);
    let mut trainer = TaggerTrainer::new(&sorted);
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    let mut best: Option<(f64, TaggerModel)> = None;
    for epoch in 0..opts.epochs {
        let mut rng = stream_rng(opts.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for &i in &order {
            trainer.step_with_dropout(i, opts.word_dropout, &mut rng);
        }
        if let Some(dev) = opts.dev {
            let model = trainer.averaged_model();
            let pred: Vec<Vec<Tag>> = dev.iter().map(|ex| model.tag(ex.tokens())).collect();
            let f1 = slot_f1(dev, &pred).map(|s| s.f1()).unwrap_or(0.0);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model));
            }
        }
    }
    Ok(match best {
        Some((_, m)) => m,
        None => trainer.averaged_model(),
    })
}
