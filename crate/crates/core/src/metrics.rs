//! Chunk-level slot F1, intent accuracy and the paired t-test.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dialogue::{LabeledExample, Tag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// A labeled token interval `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Chunk {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Maximal runs of `B-x I-x ...`. An `I-x` that does not continue a chunk of
/// the same label opens a new one, so ill-formed predictions still score.
pub fn chunks(tags: &[Tag]) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = matches!((tag, open), (Tag::Inside(l), Some((cur, _))) if l == cur);
        if continues {
            continue;
        }
        if let Some((label, start)) = open.take() {
            out.push(Chunk {
                label: label.to_string(),
                start,
                end: i,
            });
        }
        if let Tag::Begin(l) | Tag::Inside(l) = tag {
            open = Some((l, i));
        }
    }
    if let Some((label, start)) = open {
        out.push(Chunk {
            label: label.to_string(),
            start,
            end: tags.len(),
        });
    }
    out
}

/// Gold/predicted/correct chunk counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotScores {
    pub counts: Counts,
    pub per_label: BTreeMap<String, Counts>,
    /// Token-level counts over non-`O` tokens, ignoring the B/I distinction.
    pub token_counts: Counts,
}

impl SlotScores {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }
    pub fn recall(&self) -> f64 {
        self.counts.recall()
    }
    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

fn check_arity<T>(gold: &[LabeledExample], pred: &[Vec<T>]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ArityMismatch(format!(
            "{} gold examples, {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if let Some(i) = (0..gold.len()).find(|&i| gold[i].tags().len() != pred[i].len()) {
        return Err(MetricsError::ArityMismatch(format!(
            "example {i}: {} gold tags, {} predicted",
            gold[i].tags().len(),
            pred[i].len()
        )));
    }
    Ok(())
}

/// Micro-averaged exact-match chunk scores.
pub fn slot_f1(gold: &[LabeledExample], pred: &[Vec<Tag>]) -> Result<SlotScores, MetricsError> {
    check_arity(gold, pred)?;
    let mut scores = SlotScores::default();
    for (g, p) in gold.iter().zip(pred) {
        let gc = chunks(g.tags());
        let pc = chunks(p);
        for c in &gc {
            scores.per_label.entry(c.label.clone()).or_default().gold += 1;
        }
        for c in &pc {
            let entry = scores.per_label.entry(c.label.clone()).or_default();
            entry.predicted += 1;
            // chunks of one sequence are disjoint, so a linear scan is exact
            if gc.contains(c) {
                entry.correct += 1;
            }
        }
        for (gt, pt) in g.tags().iter().zip(p) {
            let tc = &mut scores.token_counts;
            tc.gold += usize::from(gt.slot().is_some());
            tc.predicted += usize::from(pt.slot().is_some());
            tc.correct += usize::from(gt.slot().is_some() && gt.slot() == pt.slot());
        }
    }
    for c in scores.per_label.values() {
        scores.counts.add(*c);
    }
    Ok(scores)
}

pub fn intent_accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ArityMismatch(format!(
            "{} gold intents, {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(MetricsError::ArityMismatch("no intents to score".into()));
    }
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Scores for one test run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub slots: SlotScores,
    pub intent_accuracy: f64,
    pub examples: usize,
}

impl EvalReport {
    pub fn compute(
        gold: &[LabeledExample],
        pred_tags: &[Vec<Tag>],
        pred_intents: &[String],
    ) -> Result<Self, MetricsError> {
        let slots = slot_f1(gold, pred_tags)?;
        let gold_intents: Vec<&str> = gold.iter().map(|g| g.intent()).collect();
        let pred: Vec<&str> = pred_intents.iter().map(String::as_str).collect();
        let intent_accuracy = intent_accuracy(&gold_intents, &pred)?;
        Ok(EvalReport {
            slots,
            intent_accuracy,
            examples: gold.len(),
        })
    }

    pub fn slot_f1(&self) -> f64 {
        self.slots.f1()
    }

    /// `(metric, value)` rows in a fixed order. Token-level F1 is included
    /// only when asked for.
    pub fn rows(&self, token_level: bool) -> Vec<(String, String)> {
        let c = &self.slots.counts;
        let mut rows = vec![
            ("examples".to_string(), self.examples.to_string()),
            ("slot_precision".to_string(), fmt6(self.slots.precision())),
            ("slot_recall".to_string(), fmt6(self.slots.recall())),
            ("slot_f1".to_string(), fmt6(self.slots.f1())),
            ("intent_accuracy".to_string(), fmt6(self.intent_accuracy)),
            ("gold_chunks".to_string(), c.gold.to_string()),
            ("predicted_chunks".to_string(), c.predicted.to_string()),
            ("correct_chunks".to_string(), c.correct.to_string()),
        ];
        if token_level {
            rows.push(("token_f1".to_string(), fmt6(self.slots.token_counts.f1())));
        }
        for (label, lc) in &self.slots.per_label {
            rows.push((format!("slot_f1.{label}"), fmt6(lc.f1())));
        }
        rows
    }

    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self, token_level: bool) -> String {
        let mut out = String::new();
        for (k, v) in self.rows(token_level) {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "examples          {}", self.examples);
        let _ = writeln!(
            out,
            "slot P/R/F1       {:.2} / {:.2} / {:.2}",
            100.0 * self.slots.precision(),
            100.0 * self.slots.recall(),
            100.0 * self.slots.f1()
        );
        let _ = writeln!(out, "intent accuracy   {:.2}", 100.0 * self.intent_accuracy);
        let _ = writeln!(out, "{:<24} {:>6} {:>6} {:>6} {:>7}", "label", "gold", "pred", "ok", "F1");
        for (label, c) in &self.slots.per_label {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>6} {:>6} {:>7.2}",
                label,
                c.gold,
                c.predicted,
                c.correct,
                100.0 * c.f1()
            );
        }
        out
    }
}

pub(crate) fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Paired t-test of `a` against `b`: `t = mean(d) / (sd(d) / sqrt(n))` with
/// `d = a - b` and the sample standard deviation, p-value from Student's t
/// with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ArityMismatch(format!("{} vs {} scores", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::DegenerateInput("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(MetricsError::DegenerateInput(if mean == 0.0 {
            "all differences are zero".into()
        } else {
            "differences have zero variance".into()
        }));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        p_value: student_t_two_sided(t, df as f64),
        df,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, n = 9); relative error below 1e-13 for
/// positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by the continued fraction expansion, evaluated with the
/// modified Lentz method to a relative tolerance of 1e-15.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the fraction converges fast only below the mean; use symmetry above it
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
    }
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + even / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + odd * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + odd / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    ln_front.exp() * h / a
}
