//! Corpus and ontology files, few-shot splits, and corpus statistics.
//!
//! A corpus file is UTF-8 text made of blocks separated by blank lines:
//!
//! ```text
//! # intent = BookRestaurant
//! book	O
//! a	O
//! table	O
//! in	O
//! Boston	B-city
//!
//! # act = BookRestaurant ( city = Paris )
//!
//! table
//! for
//! two
//! ```
//!
//! A `# intent = ` header followed by `token<TAB>tag` lines is a labeled pair,
//! a lone `# act = ` line is an act without an utterance, and bare token lines
//! are an unlabeled utterance.
//!
//! An ontology file has one entry per line: `intent<TAB>name`,
//! `slot<TAB>name`, `value<TAB>slot<TAB>surface`, or `act<TAB>MR`. Blank
//! lines and lines starting with `#` are ignored.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::align::da_from_labeled;
use crate::dialogue::{check_bio, Corpus, DialogueAct, LabeledExample, Ontology, Tag, Utterance};
use crate::exec::stream_rng;
use crate::mr::{parse_da, serialize_da, MrGrammarConfig};

pub const INTENT_HEADER: &str = "# intent = ";
pub const ACT_HEADER: &str = "# act = ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    FormatError { line: usize, reason: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid split: {0}")]
    BadSplit(String),
}

fn format_error(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::FormatError {
        line,
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_corpus(&read(path.as_ref())?)
}

pub fn write_corpus_file(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, emit_corpus(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses corpus text. Line numbers in errors are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            if !block.is_empty() {
                parse_block(&block, &mut corpus)?;
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        parse_block(&block, &mut corpus)?;
    }
    Ok(corpus)
}

fn parse_block(block: &[(usize, &str)], corpus: &mut Corpus) -> Result<(), CorpusError> {
    let (first_no, first) = block[0];
    if let Some(mr) = first.strip_prefix(ACT_HEADER) {
        if let Some((n, _)) = block.get(1) {
            return Err(format_error(*n, "act block must be a single line"));
        }
        let act = parse_da(mr, &MrGrammarConfig::default())
            .map_err(|e| format_error(first_no, e.to_string()))?;
        corpus.acts_only.push(act);
    } else if let Some(intent) = first.strip_prefix(INTENT_HEADER) {
        let rows = &block[1..];
        if rows.is_empty() {
            return Err(format_error(first_no, "intent header without token lines"));
        }
        let mut tokens = Vec::with_capacity(rows.len());
        let mut tags = Vec::with_capacity(rows.len());
        for &(n, line) in rows {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(format_error(
                    n,
                    format!("expected token<TAB>tag, found {} column(s)", cols.len()),
                ));
            }
            tokens.push(cols[0]);
            tags.push(Tag::from_str(cols[1]).map_err(|e| format_error(n, e.to_string()))?);
        }
        if let Err(e) = check_bio(&tags) {
            return Err(format_error(first_no, e.to_string()));
        }
        let utterance = Utterance::from_tokens(&tokens).map_err(|e| format_error(first_no, e.to_string()))?;
        let ex = LabeledExample::new(utterance, intent, tags).map_err(|e| format_error(first_no, e.to_string()))?;
        corpus.paired.push(ex);
    } else {
        let mut tokens = Vec::with_capacity(block.len());
        for &(n, line) in block {
            if line.contains('\t') {
                return Err(format_error(n, "tagged tokens without an intent header"));
            }
            tokens.push(line);
        }
        let u = Utterance::from_tokens(&tokens).map_err(|e| format_error(first_no, e.to_string()))?;
        corpus.utterances_only.push(u);
    }
    Ok(())
}

/// Writes the corpus back in file form: paired blocks, then acts, then
/// unlabeled utterances.
pub fn emit_corpus(corpus: &Corpus) -> String {
    let mut blocks: Vec<String> = Vec::new();
    for ex in &corpus.paired {
        let mut b = format!("{INTENT_HEADER}{}\n", ex.intent());
        for (tok, tag) in ex.tokens().iter().zip(ex.tags()) {
            let _ = writeln!(b, "{tok}\t{tag}");
        }
        blocks.push(b);
    }
    let cfg = MrGrammarConfig::default();
    for act in &corpus.acts_only {
        blocks.push(format!("{ACT_HEADER}{}\n", serialize_da(act, &cfg)));
    }
    for u in &corpus.utterances_only {
        let mut b = String::new();
        for tok in u.tokens() {
            b.push_str(tok);
            b.push('\n');
        }
        blocks.push(b);
    }
    blocks.join("\n")
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology, CorpusError> {
    parse_ontology(&read(path.as_ref())?)
}

pub fn parse_ontology(text: &str) -> Result<Ontology, CorpusError> {
    let mut intents = BTreeSet::new();
    let mut slots = BTreeSet::new();
    let mut known: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut acts = Vec::new();
    let cfg = MrGrammarConfig::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        match (cols[0], cols.len()) {
            ("intent", 2) => {
                intents.insert(cols[1].trim().to_string());
            }
            ("slot", 2) => {
                slots.insert(cols[1].trim().to_string());
            }
            ("value", 3) => {
                let value = crate::dialogue::SlotValue::new(cols[1], cols[2])
                    .map_err(|e| format_error(n, e.to_string()))?;
                known
                    .entry(value.slot().to_string())
                    .or_default()
                    .insert(value.value().to_string());
            }
            ("act", 2) => acts.push(parse_da(cols[1], &cfg).map_err(|e| format_error(n, e.to_string()))?),
            _ => return Err(format_error(n, format!("unrecognized ontology entry {line:?}"))),
        }
    }
    let valid_acts = if acts.is_empty() { None } else { Some(acts) };
    Ontology::new(intents, slots, known, valid_acts).map_err(|e| format_error(0, e))
}

pub fn emit_ontology(onto: &Ontology) -> String {
    let mut out = String::new();
    for i in &onto.intents {
        let _ = writeln!(out, "intent\t{i}");
    }
    for s in &onto.slots {
        let _ = writeln!(out, "slot\t{s}");
    }
    for (s, values) in &onto.known_values {
        for v in values {
            let _ = writeln!(out, "value\t{s}\t{v}");
        }
    }
    let cfg = MrGrammarConfig::default();
    for act in onto.valid_acts() {
        let _ = writeln!(out, "act\t{}", serialize_da(act, &cfg));
    }
    out
}

/// A rational fraction `numerator / denominator` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    numerator: u64,
    denominator: u64,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, CorpusError> {
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return Err(CorpusError::BadSplit(format!(
                "fraction {numerator}/{denominator} is not in (0, 1]"
            )));
        }
        Ok(Fraction {
            numerator,
            denominator,
        })
    }

    /// `round(self * n)`, rounding halves up.
    pub fn of(&self, n: usize) -> usize {
        let (p, q) = (self.numerator as u128, self.denominator as u128);
        ((2 * p * n as u128 + q) / (2 * q)) as usize
    }
}

impl FromStr for Fraction {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadSplit(format!("cannot parse fraction {s:?}"));
        match s.split_once('/') {
            Some((p, q)) => Fraction::new(
                p.trim().parse().map_err(|_| bad())?,
                q.trim().parse().map_err(|_| bad())?,
            ),
            None => Fraction::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub fraction: Fraction,
    pub seed: u64,
    pub dev_size: usize,
    /// Sample each intent separately instead of uniformly over examples.
    pub stratified: bool,
}

/// Draws a training split of `round(fraction * n)` paired examples and a dev
/// split of `dev_size` from the remainder, uniformly without replacement.
/// Both splits keep the original example order. `acts_only` and
/// `utterances_only` stay with the training split.
pub fn sample_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    let n = corpus.paired.len();
    if n < spec.dev_size + 1 {
        return Err(CorpusError::InsufficientData(format!(
            "{n} paired examples cannot supply a dev set of {} plus training data",
            spec.dev_size
        )));
    }
    let mut rng = stream_rng(spec.seed, 0);
    let mut train_idx: Vec<usize>;
    let mut rest: Vec<usize>;
    if spec.stratified {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, ex) in corpus.paired.iter().enumerate() {
            groups.entry(ex.intent()).or_default().push(i);
        }
        train_idx = Vec::new();
        rest = Vec::new();
        for idx in groups.values_mut() {
            idx.shuffle(&mut rng);
            let k = spec.fraction.of(idx.len());
            train_idx.extend_from_slice(&idx[..k]);
            rest.extend_from_slice(&idx[k..]);
        }
        rest.sort_unstable();
        rest.shuffle(&mut rng);
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let k = spec.fraction.of(n);
        rest = idx.split_off(k.min(n));
        train_idx = idx;
    }
    if train_idx.is_empty() || rest.len() < spec.dev_size {
        return Err(CorpusError::InsufficientData(format!(
            "{n} paired examples give {} training and {} spare, need dev {}",
            train_idx.len(),
            rest.len(),
            spec.dev_size
        )));
    }
    let mut dev_idx: Vec<usize> = rest[..spec.dev_size].to_vec();
    train_idx.sort_unstable();
    dev_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.paired[i].clone()).collect();
    let train = Corpus {
        paired: pick(&train_idx),
        acts_only: corpus.acts_only.clone(),
        utterances_only: corpus.utterances_only.clone(),
    };
    let dev = Corpus {
        paired: pick(&dev_idx),
        ..Default::default()
    };
    Ok((train, dev))
}

/// Multiset of surface values observed per slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValueInventory(BTreeMap<String, BTreeMap<String, usize>>);

impl ValueInventory {
    pub fn from_examples(examples: &[LabeledExample]) -> Self {
        let mut inv = ValueInventory::default();
        for ex in examples {
            inv.add_act(&da_from_labeled(ex));
        }
        inv
    }

    pub fn add_act(&mut self, act: &DialogueAct) {
        for sv in act.slots() {
            self.add(sv.slot(), sv.value());
        }
    }

    pub fn add(&mut self, slot: &str, value: &str) {
        *self
            .0
            .entry(slot.to_string())
            .or_default()
            .entry(value.to_string())
            .or_insert(0) += 1;
    }

    pub fn count(&self, slot: &str, value: &str) -> usize {
        self.0.get(slot).and_then(|m| m.get(value)).copied().unwrap_or(0)
    }

    /// Distinct values of `slot` with their counts, in sorted order.
    pub fn values(&self, slot: &str) -> impl Iterator<Item = (&str, usize)> {
        self.0
            .get(slot)
            .into_iter()
            .flat_map(|m| m.iter().map(|(v, c)| (v.as_str(), *c)))
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Number of observations of `slot`, counting repeats.
    pub fn total(&self, slot: &str) -> usize {
        self.values(slot).map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct values per slot, merged with the ontology's known values.
    pub fn value_pool(&self, ontology: Option<&Ontology>) -> BTreeMap<String, BTreeSet<String>> {
        let mut pool: BTreeMap<String, BTreeSet<String>> = self
            .0
            .iter()
            .map(|(s, m)| (s.clone(), m.keys().cloned().collect()))
            .collect();
        if let Some(onto) = ontology {
            for (s, values) in &onto.known_values {
                pool.entry(s.clone()).or_default().extend(values.iter().cloned());
            }
        }
        pool
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub num_paired: usize,
    pub num_acts: usize,
    pub num_utterances: usize,
    pub num_intents: usize,
    pub num_slot_labels: usize,
    pub value_inventory: ValueInventory,
}

impl CorpusStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "paired\t{}\nacts\t{}\nutterances\t{}\nintents\t{}\nslot_labels\t{}\n",
            self.num_paired, self.num_acts, self.num_utterances, self.num_intents, self.num_slot_labels
        )
    }
}

/// Counts over the whole corpus. Intents and slot labels are collected from
/// paired examples and acts; the value inventory from paired examples only.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let onto = Ontology::from_corpus(corpus);
    CorpusStats {
        num_paired: corpus.paired.len(),
        num_acts: corpus.acts_only.len(),
        num_utterances: corpus.utterances_only.len(),
        num_intents: onto.intents.len(),
        num_slot_labels: onto.slots.len(),
        value_inventory: ValueInventory::from_examples(&corpus.paired),
    }
}
