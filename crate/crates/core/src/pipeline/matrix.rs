use std::fmt::Write as _;
use std::path::Path;

use super::{run_scenario, CellOutcome, Inputs, PipelineError, RunConfig, Scenario};
use crate::corpus::{write_corpus_file, CorpusError};
use crate::metrics::{fmt6, paired_t_test};

/// One `(scenario, seed)` cell; failures are kept rather than aborting the
/// matrix.
#[derive(Debug)]
pub struct CellResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub outcome: Result<CellOutcome, PipelineError>,
}

#[derive(Debug)]
pub struct MatrixResult {
    pub cells: Vec<CellResult>,
}

/// Runs every scenario for every seed. Cells run in parallel when the
/// config allows it; results keep `scenarios x seeds` order.
pub fn run_matrix(inputs: &Inputs, cfg: &RunConfig) -> MatrixResult {
    let grid: Vec<(Scenario, u64)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let cells = cfg
        .exec()
        .map(&grid, |_, &(scenario, seed)| CellResult {
            scenario,
            seed,
            outcome: run_scenario(scenario, inputs, cfg, seed),
        });
    for c in &cells {
        if let Err(e) = &c.outcome {
            log::error!("{} seed {}: {e}", c.scenario, c.seed);
        }
    }
    MatrixResult { cells }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MatrixResult {
    /// Distinct scenarios in first-appearance order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out: Vec<Scenario> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.scenario) {
                out.push(c.scenario);
            }
        }
        out
    }

    /// `(seed, outcome)` for the successful cells of `scenario`.
    pub fn outcomes(&self, scenario: Scenario) -> Vec<(u64, &CellOutcome)> {
        let mut out: Vec<(u64, &CellOutcome)> = Vec::new();
        for c in &self.cells {
            if let (true, Ok(o)) = (c.scenario == scenario, &c.outcome) {
                if !out.iter().any(|(s, _)| *s == c.seed) {
                    out.push((c.seed, o));
                }
            }
        }
        out
    }

    pub fn slot_f1s(&self, scenario: Scenario) -> Vec<f64> {
        self.outcomes(scenario).iter().map(|(_, o)| o.report.slot_f1()).collect()
    }

    pub fn median_slot_f1(&self, scenario: Scenario) -> f64 {
        median(&self.slot_f1s(scenario))
    }

    pub fn first_error(&self) -> Option<&PipelineError> {
        self.cells.iter().find_map(|c| c.outcome.as_ref().err())
    }

    /// `scenario<TAB>seed<TAB>metric<TAB>value`, one block per cell.
    pub fn report_tsv(&self) -> String {
        let mut out = String::from("scenario\tseed\tmetric\tvalue\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(o) => {
                    for (k, v) in o.report.rows(false) {
                        let _ = writeln!(out, "{}\t{}\t{k}\t{v}", c.scenario, c.seed);
                    }
                }
                Err(e) => {
                    let msg = e.to_string().replace(['\t', '\n'], " ");
                    let _ = writeln!(out, "{}\t{}\terror\t{msg}", c.scenario, c.seed);
                }
            }
        }
        out
    }

    /// `scenario<TAB>seed<TAB>stage<TAB>count` for every successful cell.
    pub fn stages_tsv(&self) -> String {
        let mut out = String::from("scenario\tseed\tstage\tcount\n");
        for c in &self.cells {
            if let Ok(o) = &c.outcome {
                for (k, v) in o.stages.rows() {
                    let _ = writeln!(out, "{}\t{}\t{k}\t{v}", c.scenario, c.seed);
                }
            }
        }
        out
    }

    /// The scenario table (mean, spread and median over seeds), per-seed
    /// detail, and paired t-tests of the best scenario against the others.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let scenarios = self.scenarios();
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>16} {:>9} {:>16}",
            "scenario", "seeds", "slot F1", "median", "intent acc"
        );
        let mut best: Option<(Scenario, f64)> = None;
        for &s in &scenarios {
            let outs = self.outcomes(s);
            if outs.is_empty() {
                let _ = writeln!(out, "{:<20} {:>5} {:>16}", s.name(), 0, "failed");
                continue;
            }
            let f1: Vec<f64> = outs.iter().map(|(_, o)| 100.0 * o.report.slot_f1()).collect();
            let acc: Vec<f64> = outs.iter().map(|(_, o)| 100.0 * o.report.intent_accuracy).collect();
            let (fm, fs) = mean_sd(&f1);
            let (am, asd) = mean_sd(&acc);
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>9.2} ± {:<4.2} {:>9.2} {:>9.2} ± {:<4.2}",
                s.name(),
                outs.len(),
                fm,
                fs,
                median(&f1),
                am,
                asd
            );
            if best.is_none_or(|(_, b)| fm > b) {
                best = Some((s, fm));
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "per seed (slot F1 / intent accuracy):");
        for c in &self.cells {
            match &c.outcome {
                Ok(o) => {
                    let _ = writeln!(
                        out,
                        "  {:<20} seed {:<6} {} / {}  (+{} synthetic)",
                        c.scenario.name(),
                        c.seed,
                        fmt6(o.report.slot_f1()),
                        fmt6(o.report.intent_accuracy),
                        o.stages.added
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "  {:<20} seed {:<6} failed: {e}", c.scenario.name(), c.seed);
                }
            }
        }
        let _ = writeln!(out);
        let Some((best, _)) = best else {
            return out;
        };
        let seeds: Vec<u64> = self.outcomes(best).iter().map(|(s, _)| *s).collect();
        if seeds.len() < 2 {
            let _ = writeln!(out, "warning: fewer than two seeds; significance not computed");
            return out;
        }
        let _ = writeln!(out, "paired t-test on slot F1, {best} against:");
        for &other in scenarios.iter().filter(|&&s| s != best) {
            let theirs = self.outcomes(other);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (seed, o) in self.outcomes(best) {
                if let Some((_, p)) = theirs.iter().find(|(s, _)| *s == seed) {
                    a.push(o.report.slot_f1());
                    b.push(p.report.slot_f1());
                }
            }
            match paired_t_test(&a, &b) {
                Ok(t) => {
                    let _ = writeln!(out, "  {:<20} t = {:.3}, df = {}, p = {:.4}", other.name(), t.t, t.df, t.p_value);
                }
                Err(e) => {
                    let _ = writeln!(out, "  {:<20} n/a ({e})", other.name());
                }
            }
        }
        out
    }

    /// Writes `report.tsv`, `stages.tsv`, `summary.txt` and one augmented
    /// corpus per successful cell under `augmented/`.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |path: &Path, e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let aug = dir.join("augmented");
        std::fs::create_dir_all(&aug).map_err(|e| io(&aug, e))?;
        for (name, text) in [
            ("report.tsv", self.report_tsv()),
            ("stages.tsv", self.stages_tsv()),
            ("summary.txt", self.summary()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        for c in &self.cells {
            if let Ok(o) = &c.outcome {
                write_corpus_file(aug.join(format!("{}.seed{}.txt", c.scenario, c.seed)), &o.augmented)?;
            }
        }
        Ok(())
    }
}
