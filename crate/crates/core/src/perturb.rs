//! New dialogue-act combinations by replacing, inserting and deleting
//! slot-value pairs of training acts.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use thiserror::Error;

use crate::align::da_from_labeled;
use crate::corpus::ValueInventory;
use crate::dialogue::{ActKey, Corpus, DialogueAct, Ontology, SlotValue};
use crate::exec::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerturbError {
    #[error("no perturbation applies to this act")]
    NoValidPerturbation,
    #[error("invalid perturbation config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbOp {
    Replace,
    Insert,
    Delete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    /// Probabilities of (replace, insert, delete).
    pub op_weights: [f64; 3],
    pub min_slots: usize,
    pub max_slots: usize,
    pub target_count: usize,
    /// Defaults to `50 * target_count` when `None`.
    pub max_attempts: Option<usize>,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            op_weights: [0.5, 0.3, 0.2],
            min_slots: 1,
            max_slots: 8,
            target_count: 300,
            max_attempts: None,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn check(&self) -> Result<(), PerturbError> {
        if self.op_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(PerturbError::BadConfig("operation weights must be non-negative".into()));
        }
        let sum: f64 = self.op_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PerturbError::BadConfig(format!("operation weights sum to {sum}, not 1")));
        }
        if self.min_slots > self.max_slots {
            return Err(PerturbError::BadConfig("min_slots exceeds max_slots".into()));
        }
        Ok(())
    }

    pub fn attempts(&self) -> usize {
        self.max_attempts.unwrap_or(50 * self.target_count)
    }
}

/// Which slots each intent may carry, and the value pool per slot.
#[derive(Debug, Clone, Default)]
pub struct PerturbContext {
    slots_by_intent: BTreeMap<String, BTreeSet<String>>,
    values: BTreeMap<String, Vec<String>>,
}

impl PerturbContext {
    /// Slots are those co-observed with each intent in `training_acts` or in
    /// the ontology's valid acts; values are the inventory plus the
    /// ontology's known values.
    pub fn new(training_acts: &[DialogueAct], ontology: &Ontology, inventory: &ValueInventory) -> Self {
        let mut slots_by_intent: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for act in training_acts.iter().chain(ontology.valid_acts()) {
            let entry = slots_by_intent.entry(act.intent().to_string()).or_default();
            entry.extend(act.slots().iter().map(|sv| sv.slot().to_string()));
        }
        let values = inventory
            .value_pool(Some(ontology))
            .into_iter()
            .map(|(s, v)| (s, v.into_iter().collect()))
            .collect();
        PerturbContext {
            slots_by_intent,
            values,
        }
    }

    pub fn slots_for(&self, intent: &str) -> impl Iterator<Item = &str> {
        self.slots_by_intent
            .get(intent)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn values_for(&self, slot: &str) -> &[String] {
        self.values.get(slot).map_or(&[], Vec::as_slice)
    }

    /// `(pair index, replacement values)` for every pair that has one.
    fn replace_options(&self, da: &DialogueAct) -> Vec<(usize, Vec<&str>)> {
        let present: HashSet<(&str, String)> = da
            .slots()
            .iter()
            .map(|sv| (sv.slot(), sv.value().to_lowercase()))
            .collect();
        da.slots()
            .iter()
            .enumerate()
            .filter_map(|(i, sv)| {
                let alts: Vec<&str> = self
                    .values_for(sv.slot())
                    .iter()
                    .filter(|v| !present.contains(&(sv.slot(), v.to_lowercase())))
                    .map(String::as_str)
                    .collect();
                (!alts.is_empty()).then_some((i, alts))
            })
            .collect()
    }

    fn insert_options(&self, da: &DialogueAct, cfg: &PerturbConfig) -> Vec<&str> {
        if da.len() >= cfg.max_slots {
            return Vec::new();
        }
        let present: BTreeSet<&str> = da.slots().iter().map(SlotValue::slot).collect();
        self.slots_for(da.intent())
            .filter(|s| !present.contains(s) && !self.values_for(s).is_empty())
            .collect()
    }
}

fn applicable(da: &DialogueAct, op: PerturbOp, ctx: &PerturbContext, cfg: &PerturbConfig) -> bool {
    match op {
        PerturbOp::Replace => !ctx.replace_options(da).is_empty(),
        PerturbOp::Insert => !ctx.insert_options(da, cfg).is_empty(),
        PerturbOp::Delete => da.len() > cfg.min_slots,
    }
}

/// Applies `op` once. The intent never changes.
pub fn apply_op<R: Rng>(
    da: &DialogueAct,
    op: PerturbOp,
    ctx: &PerturbContext,
    rng: &mut R,
    cfg: &PerturbConfig,
) -> Result<DialogueAct, PerturbError> {
    let mut slots = da.slots().to_vec();
    match op {
        PerturbOp::Replace => {
            let options = ctx.replace_options(da);
            if options.is_empty() {
                return Err(PerturbError::NoValidPerturbation);
            }
            let (i, alts) = &options[rng.random_range(0..options.len())];
            let v = alts[rng.random_range(0..alts.len())];
            slots[*i] = SlotValue::new(slots[*i].slot(), v).expect("pool values are valid");
        }
        PerturbOp::Insert => {
            let options = ctx.insert_options(da, cfg);
            if options.is_empty() {
                return Err(PerturbError::NoValidPerturbation);
            }
            let slot = options[rng.random_range(0..options.len())];
            let values = ctx.values_for(slot);
            let v = &values[rng.random_range(0..values.len())];
            slots.push(SlotValue::new(slot, v).expect("pool values are valid"));
        }
        PerturbOp::Delete => {
            if da.len() <= cfg.min_slots {
                return Err(PerturbError::NoValidPerturbation);
            }
            slots.remove(rng.random_range(0..slots.len()));
        }
    }
    DialogueAct::new(da.intent(), slots).map_err(|_| PerturbError::NoValidPerturbation)
}

/// Applies one operation drawn by `cfg.op_weights` among those applicable.
pub fn perturb_da<R: Rng>(
    da: &DialogueAct,
    ctx: &PerturbContext,
    rng: &mut R,
    cfg: &PerturbConfig,
) -> Result<DialogueAct, PerturbError> {
    let ops = [PerturbOp::Replace, PerturbOp::Insert, PerturbOp::Delete];
    let weights: Vec<f64> = ops
        .iter()
        .zip(cfg.op_weights)
        .map(|(op, w)| if applicable(da, *op, ctx, cfg) { w } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(PerturbError::NoValidPerturbation);
    }
    let mut r = rng.random::<f64>() * total;
    let mut chosen = ops[0];
    for (op, w) in ops.iter().zip(&weights) {
        if *w <= 0.0 {
            continue;
        }
        chosen = *op;
        if r < *w {
            break;
        }
        r -= w;
    }
    apply_op(da, chosen, ctx, rng, cfg)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub acts: Vec<DialogueAct>,
    pub attempts: usize,
}

/// Perturbs randomly drawn training acts (one or two chained operations)
/// until `target_count` new distinct acts exist or the attempt budget runs
/// out. Acts equal to a training act or to an earlier output, ignoring pair
/// order and value case, are discarded.
pub fn expand_acts(corpus: &Corpus, ontology: &Ontology, cfg: &PerturbConfig) -> Result<Expansion, PerturbError> {
    cfg.check()?;
    let training: Vec<DialogueAct> = corpus.paired.iter().map(da_from_labeled).collect();
    let inventory = ValueInventory::from_examples(&corpus.paired);
    let ctx = PerturbContext::new(&training, ontology, &inventory);
    Ok(expand_from(&training, &ctx, cfg))
}

pub fn expand_from(training: &[DialogueAct], ctx: &PerturbContext, cfg: &PerturbConfig) -> Expansion {
    let mut out = Expansion::default();
    if training.is_empty() || cfg.target_count == 0 {
        return out;
    }
    let mut seen: HashSet<ActKey> = training.iter().map(DialogueAct::canonical_key).collect();
    let mut rng = stream_rng(cfg.seed, 0x7065_7274);
    while out.acts.len() < cfg.target_count && out.attempts < cfg.attempts() {
        out.attempts += 1;
        let source = &training[rng.random_range(0..training.len())];
        let chain = if rng.random_bool(0.5) { 1 } else { 2 };
        let mut act = source.clone();
        let mut ok = true;
        for _ in 0..chain {
            match perturb_da(&act, ctx, &mut rng, cfg) {
                Ok(next) => act = next,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && seen.insert(act.canonical_key()) {
            out.acts.push(act);
        }
    }
    log::debug!(
        "expanded {} acts in {} attempts (target {})",
        out.acts.len(),
        out.attempts,
        cfg.target_count
    );
    out
}
