use std::collections::BTreeSet;
use std::path::PathBuf;

use slu_augment::align::{da_from_labeled, label_with_da, MatchPolicy};
use slu_augment::corpus::{emit_corpus, ValueInventory};
use slu_augment::dialogue::{validate, Corpus, LabeledExample};
use slu_augment::genbackend::{
    generate, pseudo_label, train_template_generator, BackendSpec, DecodingParams, GenError, Lexicon,
};
use slu_augment::metrics::EvalReport;
use slu_augment::pipeline::{
    run_matrix, run_no_da, run_paired_only, run_rich_in_ontology, run_rich_in_utterance, Inputs, PipelineError,
    RunConfig, Scenario,
};
use slu_augment::slu::{train_intent, train_tagger, TrainOptions};
use slu_augment::toy::{toy_domain, ToyDomain, TOY_SEED};

fn domain() -> ToyDomain {
    toy_domain(TOY_SEED)
}

fn inputs(d: &ToyDomain) -> Inputs {
    Inputs {
        train: d.train.clone(),
        dev: None,
        test: d.test.clone(),
        ontology: Some(d.ontology.clone()),
    }
}

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig {
        acts_to_use: 120,
        utterances_to_use: 200,
        synthetic_target: 100,
        epochs: 5,
        ..Default::default()
    };
    cfg.perturb.target_count = 60;
    cfg
}

/// Speaks the protocol and answers every request with the request payload.
const ECHO: &str = r#"while read -r h; do read -r p; id=${h#REQ }; id=${id% *}; echo "RES $id $AUGMENT_SAMPLES"; i=0; while [ $i -lt $AUGMENT_SAMPLES ]; do echo "$p"; i=$((i+1)); done; done"#;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn echo_backend_degenerates_to_baseline() {
    let d = domain();
    let inp = inputs(&d);
    let cfg = RunConfig {
        backend: BackendSpec::Exec(ECHO.into()),
        ..small_cfg()
    };
    let base = run_no_da(&inp, &cfg, 3).unwrap();
    for out in [run_paired_only(&inp, &cfg, 3).unwrap(), run_rich_in_ontology(&inp, &cfg, 3).unwrap()] {
        assert_eq!(out.stages.added, 0);
        assert_eq!(out.stages.filtered, out.stages.candidates);
        assert_eq!(out.stages.candidates, out.stages.inputs * 3);
        assert_eq!(out.augmented, base.augmented);
        assert_eq!(out.report, base.report);
    }
}

#[test]
fn zero_acts_equals_baseline() {
    let d = domain();
    let inp = inputs(&d);
    let cfg = RunConfig {
        acts_to_use: 0,
        ..small_cfg()
    };
    let out = run_rich_in_ontology(&inp, &cfg, 1).unwrap();
    assert_eq!(out.stages.inputs, 0);
    assert_eq!(out.report, run_no_da(&inp, &cfg, 1).unwrap().report);
}

#[test]
fn rich_in_ontology_brings_in_held_out_values() {
    let d = domain();
    let out = run_rich_in_ontology(&inputs(&d), &small_cfg(), 2).unwrap();
    let found: BTreeSet<(String, String)> = out
        .added()
        .iter()
        .flat_map(|e| da_from_labeled(e).slots().to_vec())
        .filter(|sv| d.unseen[sv.slot()].contains(sv.value()))
        .map(|sv| (sv.slot().to_string(), sv.value().to_string()))
        .collect();
    assert!(found.len() >= 10, "{found:?}");
    let base: BTreeSet<_> = d.train.paired.iter().flat_map(|e| da_from_labeled(e).slots().to_vec()).collect();
    assert!(base.iter().all(|sv| !d.unseen[sv.slot()].contains(sv.value())));
}

#[test]
fn stage_counts_reconcile_and_respect_caps() {
    let d = domain();
    let inp = inputs(&d);
    let cfg = small_cfg();
    for out in [
        run_paired_only(&inp, &cfg, 4).unwrap(),
        run_rich_in_ontology(&inp, &cfg, 4).unwrap(),
        run_rich_in_utterance(&inp, &cfg, 4).unwrap(),
    ] {
        let s = out.stages;
        assert!(s.reconciles(), "{s:?}");
        assert!(s.added <= cfg.synthetic_target);
        assert_eq!(out.added().len(), s.added);
        assert_eq!(out.augmented.paired.len(), d.train.paired.len() + s.added);
        let violations = validate(&out.augmented, &d.ontology);
        assert!(violations.is_empty(), "{:?}", &violations[..violations.len().min(3)]);
    }
    let po = run_paired_only(&inp, &cfg, 4).unwrap().stages;
    assert!(po.inputs <= 60 && po.candidates <= 180);
    let riu = run_rich_in_utterance(&inp, &cfg, 4).unwrap().stages;
    assert_eq!(riu.inputs, 200);
    assert_eq!(riu.candidates, 200);
}

#[test]
fn rich_in_utterance_preconditions() {
    let d = domain();
    let mut inp = inputs(&d);
    inp.train.utterances_only.clear();
    let err = run_rich_in_utterance(&inp, &small_cfg(), 1).unwrap_err();
    assert!(matches!(err, PipelineError::Data(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn replaying_training_utterances_recovers_unique_values() {
    let d = domain();
    let paired = &d.train.paired;
    let inventory = ValueInventory::from_examples(paired);
    let mut owners: std::collections::BTreeMap<String, BTreeSet<String>> = Default::default();
    for slot in inventory.slots() {
        for (v, _) in inventory.values(slot) {
            owners.entry(v.to_lowercase()).or_default().insert(slot.to_string());
        }
    }
    let scorer = train_intent(paired, &TrainOptions::default()).unwrap();
    let lexicon = Lexicon::from_training(paired, &d.ontology);
    for ex in paired {
        let got = pseudo_label(ex.utterance(), &lexicon, &scorer, 0.0).unwrap();
        for sv in da_from_labeled(ex).slots() {
            if owners[&sv.value().to_lowercase()].len() == 1 {
                assert!(got.slots().contains(sv), "{} lost {sv:?}", ex.utterance().text());
            }
        }
    }

    // the same check through the scenario: unlabeled = training utterances
    let mut inp = inputs(&d);
    inp.train.utterances_only = paired.iter().map(|e| e.utterance().clone()).collect();
    let out = run_rich_in_utterance(&inp, &small_cfg(), 1).unwrap();
    assert_eq!(out.stages.deduped, paired.len(), "every replayed utterance is already in training");
}

#[test]
fn template_relexicalization_reproduces_the_toy_corpus() {
    let d = domain();
    let model = train_template_generator(&d.train.paired);
    let params = DecodingParams {
        samples_per_input: 64,
        ..Default::default()
    };
    for (i, ex) in d.train.paired.iter().enumerate() {
        let da = da_from_labeled(ex);
        let mut rng = slu_augment::exec::stream_rng(i as u64, 0);
        let outs = generate(&model, &da, &params, &mut rng).unwrap();
        assert!(outs.iter().any(|u| u.tokens() == ex.tokens()), "{}", ex.utterance().text());
        for u in outs {
            if let Ok(l) = label_with_da(&u, &da, &MatchPolicy::default()) {
                assert_eq!(da_from_labeled(&l).canonical_key(), da.canonical_key());
            }
        }
    }
}

#[test]
fn tagger_learns_the_toy_grammar_in_distribution() {
    let d = domain();
    let (train, test) = (&d.test[..50], &d.test[50..250]);
    let opts = TrainOptions::default();
    let tagger = train_tagger(train, &opts).unwrap();
    let intents = train_intent(train, &opts).unwrap();
    let tags: Vec<_> = test.iter().map(|e| tagger.tag(e.tokens())).collect();
    let labels: Vec<String> = test.iter().map(|e| intents.classify(e.tokens()).to_string()).collect();
    let report = EvalReport::compute(test, &tags, &labels).unwrap();
    assert!(report.slot_f1() >= 0.95, "slot F1 {}", report.slot_f1());
}

#[test]
fn runs_are_deterministic_and_order_independent() {
    let d = domain();
    let inp = inputs(&d);
    let cfg = RunConfig {
        scenarios: vec![Scenario::PairedOnly, Scenario::RichInUtterance, Scenario::PairedOnly],
        seeds: vec![1, 2],
        ..small_cfg()
    };
    let a = run_matrix(&inp, &cfg);
    let b = run_matrix(&inp, &RunConfig { parallel: false, ..cfg.clone() });
    assert_eq!(a.report_tsv(), b.report_tsv());
    assert_eq!(a.stages_tsv(), b.stages_tsv());
    for (x, y) in a.cells.iter().zip(&b.cells) {
        let (x, y) = (x.outcome.as_ref().unwrap(), y.outcome.as_ref().unwrap());
        assert_eq!(emit_corpus(&x.augmented), emit_corpus(&y.augmented));
    }
    // a scenario listed twice produces identical rows
    assert_eq!(a.cells[0].outcome.as_ref().unwrap(), a.cells[4].outcome.as_ref().unwrap());
    assert!(a.summary().contains("paired t-test"));
}

#[test]
fn single_seed_has_no_significance() {
    let d = domain();
    let cfg = RunConfig {
        scenarios: vec![Scenario::NoDa, Scenario::PairedOnly],
        seeds: vec![9],
        ..small_cfg()
    };
    let m = run_matrix(&inputs(&d), &cfg);
    let s = m.summary();
    assert!(s.contains("warning: fewer than two seeds"), "{s}");
    assert!(!s.contains("paired t-test"));
    assert_eq!(m.scenarios(), vec![Scenario::NoDa, Scenario::PairedOnly]);
}

#[test]
fn backend_failures_are_categorized_and_recorded() {
    let d = domain();
    let inp = inputs(&d);
    // the recording knows nothing about toy acts
    let cfg = RunConfig {
        backend: BackendSpec::Fixture(data("worked_examples.fixture")),
        scenarios: vec![Scenario::NoDa, Scenario::RichInOntology],
        seeds: vec![1],
        ..small_cfg()
    };
    let m = run_matrix(&inp, &cfg);
    assert!(m.cells[0].outcome.is_ok());
    let err = m.first_error().unwrap();
    assert!(matches!(err, PipelineError::Backend(GenError::PartialResponse { .. })), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(m.report_tsv().contains("rich_in_ontology\t1\terror\t"));

    let missing = RunConfig {
        backend: BackendSpec::Exec("exit 0".into()),
        ..small_cfg()
    };
    let err = run_paired_only(&inp, &missing, 1).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn external_labeler_output_is_mapped_and_checked() {
    let utterance = "2 of us want to eat at a restaurant that serves meatballs in VT";
    let paired: Vec<LabeledExample> = slu_augment::corpus::parse_corpus(
        "# intent = BookRestaurant\ntable\tO\nfor\tO\n4\tB-party_size_number\n",
    )
    .unwrap()
    .paired;
    let ontology = slu_augment::corpus::parse_ontology(
        "intent\tBookRestaurant\nslot\tparty_size_number\nslot\trestaurant_type\nslot\tserved_dish\nslot\tstate\nvalue\tstate\tVT\n",
    )
    .unwrap();
    let inp = Inputs {
        train: Corpus {
            paired: paired.clone(),
            utterances_only: vec![slu_augment::dialogue::Utterance::parse(utterance).unwrap()],
            ..Default::default()
        },
        dev: None,
        test: paired,
        ontology: Some(ontology),
    };
    let cfg = RunConfig {
        backend: BackendSpec::Fixture(data("worked_examples.fixture")),
        ..small_cfg()
    };
    let out = run_rich_in_utterance(&inp, &cfg, 1).unwrap();
    assert_eq!(out.stages.added, 1);
    let got = da_from_labeled(&out.added()[0]);
    assert_eq!(got.intent(), "BookRestaurant");
    assert_eq!(got.len(), 4);
}
