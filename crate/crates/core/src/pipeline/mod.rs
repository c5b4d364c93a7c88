//! End-to-end scenarios: build synthetic labeled data, append it to the
//! training split, train the SLU models and score them on the test split.

mod config;
mod matrix;

use std::collections::HashSet;

use rand::seq::index::sample;
use thiserror::Error;

pub use config::{RunConfig, Scenario};
pub use matrix::{run_matrix, CellResult, MatrixResult};

use crate::align::{contains_all_values, da_from_labeled, label_with_da, MatchPolicy};
use crate::corpus::{load_corpus, load_ontology, CorpusError};
use crate::dialogue::{Corpus, DialogueAct, LabeledExample, Ontology, Utterance};
use crate::exec::stream_rng;
use crate::genbackend::{
    generate, map_to_ontology, pseudo_label, train_template_generator, BackendSpec, Direction, Endpoint, GenError,
    Lexicon,
};
use crate::metrics::EvalReport;
use crate::mr::{parse_da, serialize_da, MrGrammarConfig};
use crate::perturb::{expand_from, PerturbContext};
use crate::slu::{train_intent, train_tagger, IntentScorer, TrainOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(#[from] GenError),
}

impl PipelineError {
    /// Process exit status for this kind of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Backend(GenError::BadSpec(_) | GenError::BadParams(_)) => 1,
            PipelineError::Backend(_) => 3,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

// rng streams within one seed
const ACT_SAMPLE_STREAM: u64 = 10;
const UTTERANCE_SAMPLE_STREAM: u64 = 11;
const GENERATION_STREAM_BASE: u64 = 1 << 32;

/// Loaded data for a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs {
    pub train: Corpus,
    pub dev: Option<Vec<LabeledExample>>,
    pub test: Vec<LabeledExample>,
    pub ontology: Option<Ontology>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| PipelineError::Config(format!("no {what} file configured")))
        };
        let train = load_corpus(need(&cfg.train, "train")?)?;
        let test = load_corpus(need(&cfg.test, "test")?)?.paired;
        let dev = cfg.dev.as_ref().map(load_corpus).transpose()?.map(|c| c.paired);
        let ontology = cfg.ontology.as_ref().map(load_ontology).transpose()?;
        Ok(Inputs {
            train,
            dev,
            test,
            ontology,
        })
    }

    /// The ontology the data implies when none was given.
    fn labeling_ontology(&self) -> Ontology {
        self.ontology
            .clone()
            .unwrap_or_else(|| Ontology::from_corpus(&self.train))
    }
}

/// How many items each stage saw. `candidates = kept + filtered + deduped`
/// and `kept = added + truncated` always hold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounts {
    /// Acts or utterances handed to the backend.
    pub inputs: usize,
    /// Inputs the backend had nothing for (unseen intent).
    pub skipped: usize,
    pub candidates: usize,
    pub filtered: usize,
    pub deduped: usize,
    pub kept: usize,
    pub truncated: usize,
    pub added: usize,
}

impl StageCounts {
    pub fn rows(&self) -> [(&'static str, usize); 8] {
        [
            ("inputs", self.inputs),
            ("skipped", self.skipped),
            ("candidates", self.candidates),
            ("filtered", self.filtered),
            ("deduped", self.deduped),
            ("kept", self.kept),
            ("truncated", self.truncated),
            ("added", self.added),
        ]
    }

    pub fn reconciles(&self) -> bool {
        self.candidates == self.kept + self.filtered + self.deduped && self.kept == self.added + self.truncated
    }
}

/// One scenario run for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub scenario: Scenario,
    pub seed: u64,
    /// Training pairs followed by the synthetic ones.
    pub augmented: Corpus,
    pub stages: StageCounts,
    pub report: EvalReport,
}

impl CellOutcome {
    pub fn added(&self) -> &[LabeledExample] {
        &self.augmented.paired[self.augmented.paired.len() - self.stages.added..]
    }
}

/// Candidates in generation order; `None` marks output that was unusable
/// before filtering even started.
type Candidates = Vec<Option<LabeledExample>>;

fn options<'a>(inputs: &'a Inputs, cfg: &RunConfig, seed: u64) -> TrainOptions<'a> {
    TrainOptions {
        epochs: cfg.epochs,
        seed,
        dev: inputs.dev.as_deref(),
        ..Default::default()
    }
}

/// Dedups by utterance text against training and earlier candidates, then
/// truncates by generation order.
fn select(candidates: Candidates, train: &[LabeledExample], target: usize, mut stages: StageCounts) -> (Vec<LabeledExample>, StageCounts) {
    stages.candidates = candidates.len();
    let mut seen: HashSet<String> = train.iter().map(|e| e.utterance().text()).collect();
    let mut kept = Vec::new();
    for c in candidates {
        match c {
            None => stages.filtered += 1,
            Some(ex) => {
                if seen.insert(ex.utterance().text()) {
                    kept.push(ex);
                } else {
                    stages.deduped += 1;
                }
            }
        }
    }
    stages.kept = kept.len();
    kept.truncate(target);
    stages.added = kept.len();
    stages.truncated = stages.kept - stages.added;
    assert!(stages.reconciles(), "stage counts do not add up: {stages:?}");
    (kept, stages)
}

fn label_candidate(u: Option<Utterance>, da: &DialogueAct) -> Option<LabeledExample> {
    let u = u?;
    let policy = MatchPolicy::default();
    // an output that is itself a meaning representation is an echo, not a
    // realization
    if parse_da(&u.text(), &MrGrammarConfig::default()).is_ok() || !contains_all_values(&u, da, &policy) {
        return None;
    }
    label_with_da(&u, da, &policy).ok()
}

/// Produces `samples_per_input` labeled-or-rejected candidates per act.
fn generate_for_acts(
    acts: &[DialogueAct],
    inputs: &Inputs,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Candidates, StageCounts), PipelineError> {
    let exec = cfg.exec();
    let mut stages = StageCounts {
        inputs: acts.len(),
        ..Default::default()
    };
    let per_act: Vec<Option<Vec<Option<Utterance>>>> = match &cfg.backend {
        BackendSpec::Builtin => {
            let model = train_template_generator(&inputs.train.paired);
            let generated = exec.map(acts, |i, da| {
                let mut rng = stream_rng(seed, GENERATION_STREAM_BASE + i as u64);
                generate(&model, da, &cfg.decoding, &mut rng)
            });
            generated
                .into_iter()
                .map(|r| match r {
                    Ok(us) => Ok(Some(us.into_iter().map(Some).collect())),
                    Err(GenError::NoTemplateForIntent(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<_, _>>()?
        }
        spec => {
            let mut endpoint = Endpoint::connect(spec, &cfg.decoding, cfg.timeout)?;
            let grammar = MrGrammarConfig::default();
            let mrs: Vec<String> = acts.iter().map(|da| serialize_da(da, &grammar)).collect();
            endpoint
                .call(Direction::Nlg, &mrs, &cfg.decoding)?
                .into_iter()
                .map(|outs| Some(outs.iter().map(|s| Utterance::parse(s).ok()).collect()))
                .collect()
        }
    };
    let mut pending: Vec<(usize, Option<Utterance>)> = Vec::new();
    for (i, outs) in per_act.into_iter().enumerate() {
        match outs {
            None => stages.skipped += 1,
            Some(us) => pending.extend(us.into_iter().map(|u| (i, u))),
        }
    }
    let candidates = exec.map(&pending, |_, (i, u)| label_candidate(u.clone(), &acts[*i]));
    Ok((candidates, stages))
}

fn finish(
    scenario: Scenario,
    seed: u64,
    inputs: &Inputs,
    cfg: &RunConfig,
    added: Vec<LabeledExample>,
    stages: StageCounts,
) -> Result<CellOutcome, PipelineError> {
    let mut paired = inputs.train.paired.clone();
    paired.extend(added);
    let report = train_and_evaluate(&paired, inputs, cfg, seed)?;
    log::info!(
        "{scenario} seed {seed}: +{} examples, slot F1 {:.4}, intent accuracy {:.4}",
        stages.added,
        report.slot_f1(),
        report.intent_accuracy
    );
    Ok(CellOutcome {
        scenario,
        seed,
        augmented: Corpus {
            paired,
            ..Default::default()
        },
        stages,
        report,
    })
}

/// Trains both models on `paired` and scores them on the test split.
pub fn train_and_evaluate(
    paired: &[LabeledExample],
    inputs: &Inputs,
    cfg: &RunConfig,
    seed: u64,
) -> Result<EvalReport, PipelineError> {
    let opts = options(inputs, cfg, seed);
    let model_err = |e: crate::slu::ModelError| PipelineError::Data(e.to_string());
    let tagger = train_tagger(paired, &opts).map_err(model_err)?;
    let intents = train_intent(paired, &opts).map_err(model_err)?;
    let preds = cfg.exec().map(&inputs.test, |_, ex| {
        (tagger.tag(ex.tokens()), intents.classify(ex.tokens()).to_string())
    });
    let (tags, labels): (Vec<_>, Vec<_>) = preds.into_iter().unzip();
    EvalReport::compute(&inputs.test, &tags, &labels).map_err(|e| PipelineError::Data(e.to_string()))
}

fn require_paired(inputs: &Inputs) -> Result<(), PipelineError> {
    if inputs.train.paired.is_empty() {
        return Err(PipelineError::Data("training corpus has no labeled examples".into()));
    }
    Ok(())
}

/// The baseline: the training split as given.
pub fn run_no_da(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<CellOutcome, PipelineError> {
    require_paired(inputs)?;
    finish(Scenario::NoDa, seed, inputs, cfg, Vec::new(), StageCounts::default())
}

/// New acts by perturbing training acts, rendered by the generator.
pub fn run_paired_only(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<CellOutcome, PipelineError> {
    require_paired(inputs)?;
    let paired_only = Corpus {
        paired: inputs.train.paired.clone(),
        ..Default::default()
    };
    let ontology = Ontology::from_corpus(&paired_only);
    let training: Vec<DialogueAct> = paired_only.paired.iter().map(da_from_labeled).collect();
    let inventory = crate::corpus::ValueInventory::from_examples(&paired_only.paired);
    let ctx = PerturbContext::new(&training, &ontology, &inventory);
    let perturb = crate::perturb::PerturbConfig {
        seed,
        ..cfg.perturb.clone()
    };
    let expansion = expand_from(&training, &ctx, &perturb);
    log::debug!("perturbation: {} acts from {} attempts", expansion.acts.len(), expansion.attempts);
    let (candidates, stages) = generate_for_acts(&expansion.acts, inputs, cfg, seed)?;
    let (added, stages) = select(candidates, &inputs.train.paired, cfg.synthetic_target, stages);
    finish(Scenario::PairedOnly, seed, inputs, cfg, added, stages)
}

/// Valid ontology acts not seen in training, rendered by the generator.
pub fn run_rich_in_ontology(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<CellOutcome, PipelineError> {
    require_paired(inputs)?;
    let mut seen: HashSet<_> = inputs
        .train
        .paired
        .iter()
        .map(|e| da_from_labeled(e).canonical_key())
        .collect();
    let pool: Vec<&DialogueAct> = inputs
        .ontology
        .iter()
        .flat_map(Ontology::valid_acts)
        .chain(&inputs.train.acts_only)
        .filter(|a| seen.insert(a.canonical_key()))
        .collect();
    if pool.is_empty() && cfg.acts_to_use > 0 {
        return Err(PipelineError::Data(
            "rich_in_ontology needs valid acts unseen in training (ontology file or act section)".into(),
        ));
    }
    let mut rng = stream_rng(seed, ACT_SAMPLE_STREAM);
    let acts: Vec<DialogueAct> = sample(&mut rng, pool.len(), cfg.acts_to_use.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let (candidates, stages) = generate_for_acts(&acts, inputs, cfg, seed)?;
    let (added, stages) = select(candidates, &inputs.train.paired, cfg.synthetic_target, stages);
    finish(Scenario::RichInOntology, seed, inputs, cfg, added, stages)
}

/// Unlabeled training utterances labeled by the NLU direction, kept when
/// every labeled value is found back in the utterance.
pub fn run_rich_in_utterance(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<CellOutcome, PipelineError> {
    require_paired(inputs)?;
    let pool = &inputs.train.utterances_only;
    if pool.is_empty() {
        return Err(PipelineError::Data("rich_in_utterance needs unlabeled utterances in the training corpus".into()));
    }
    let mut rng = stream_rng(seed, UTTERANCE_SAMPLE_STREAM);
    let chosen: Vec<Utterance> = sample(&mut rng, pool.len(), cfg.utterances_to_use.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let ontology = inputs.labeling_ontology();
    let stages = StageCounts {
        inputs: chosen.len(),
        ..Default::default()
    };
    let policy = MatchPolicy::default();
    let accept = |u: &Utterance, da: DialogueAct| -> Option<LabeledExample> {
        let da = map_to_ontology(&da, &ontology).ok()?;
        if !contains_all_values(u, &da, &policy) {
            return None;
        }
        label_with_da(u, &da, &policy).ok()
    };
    let candidates: Candidates = match &cfg.backend {
        BackendSpec::Builtin => {
            let scorer = train_intent(&inputs.train.paired, &options(inputs, cfg, seed))
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            let lexicon = Lexicon::from_training(&inputs.train.paired, &ontology);
            cfg.exec().map(&chosen, |_, u| {
                let da = pseudo_label(u, &lexicon, &scorer as &dyn IntentScorer, cfg.min_margin).ok()?;
                accept(u, da)
            })
        }
        spec => {
            let mut endpoint = Endpoint::connect(spec, &cfg.decoding, cfg.timeout)?;
            let texts: Vec<String> = chosen.iter().map(Utterance::text).collect();
            let grammar = MrGrammarConfig::default();
            let outputs = endpoint.call(Direction::Nlu, &texts, &cfg.decoding)?;
            chosen
                .iter()
                .zip(outputs)
                .map(|(u, outs)| {
                    outs.iter()
                        .filter_map(|mr| parse_da(mr, &grammar).ok())
                        .find_map(|da| accept(u, da))
                })
                .collect()
        }
    };
    let (added, stages) = select(candidates, &inputs.train.paired, cfg.synthetic_target, stages);
    finish(Scenario::RichInUtterance, seed, inputs, cfg, added, stages)
}

pub fn run_scenario(scenario: Scenario, inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<CellOutcome, PipelineError> {
    match scenario {
        Scenario::NoDa => run_no_da(inputs, cfg, seed),
        Scenario::PairedOnly => run_paired_only(inputs, cfg, seed),
        Scenario::RichInOntology => run_rich_in_ontology(inputs, cfg, seed),
        Scenario::RichInUtterance => run_rich_in_utterance(inputs, cfg, seed),
    }
}
