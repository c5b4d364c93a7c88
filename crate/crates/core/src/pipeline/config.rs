use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use ini::Ini;

use super::PipelineError;
use crate::genbackend::{BackendSpec, DecodingParams, DEFAULT_TIMEOUT};
use crate::perturb::PerturbConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    NoDa,
    PairedOnly,
    RichInOntology,
    RichInUtterance,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::NoDa,
        Scenario::PairedOnly,
        Scenario::RichInOntology,
        Scenario::RichInUtterance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoDa => "no_da",
            Scenario::PairedOnly => "paired_only",
            Scenario::RichInOntology => "rich_in_ontology",
            Scenario::RichInUtterance => "rich_in_utterance",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, PipelineError> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| PipelineError::Config(format!("unknown scenario {s:?}")))
    }
}

/// Everything a run needs besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub scenarios: Vec<Scenario>,
    pub seeds: Vec<u64>,
    pub backend: BackendSpec,
    pub timeout: Duration,
    pub parallel: bool,
    /// The seed field is replaced per run.
    pub perturb: PerturbConfig,
    pub decoding: DecodingParams,
    pub acts_to_use: usize,
    pub utterances_to_use: usize,
    pub synthetic_target: usize,
    pub epochs: usize,
    /// Intent margin a pseudo-label with no slot values must exceed.
    pub min_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            test: None,
            ontology: None,
            scenarios: Scenario::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            backend: BackendSpec::Builtin,
            timeout: DEFAULT_TIMEOUT,
            parallel: true,
            perturb: PerturbConfig::default(),
            decoding: DecodingParams::default(),
            acts_to_use: 500,
            utterances_to_use: 1000,
            synthetic_target: 500,
            epochs: 10,
            min_margin: 0.0,
        }
    }
}

fn list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Reads a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        RunConfig::parse(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let ini = Ini::load_from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        let mut weights = cfg.perturb.op_weights;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                let bad = |e: String| PipelineError::Config(format!("[{section}] {key}: {e}"));
                let num = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
                let count = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
                let path = |v: &str| (!v.trim().is_empty()).then(|| base.join(v.trim()));
                match (section, key) {
                    ("data", "train") => cfg.train = path(value),
                    ("data", "dev") => cfg.dev = path(value),
                    ("data", "test") => cfg.test = path(value),
                    ("data", "ontology") => cfg.ontology = path(value),
                    ("run", "scenarios") => {
                        cfg.scenarios = list(value).map_err(bad)?;
                    }
                    ("run", "seeds") => cfg.seeds = list(value).map_err(bad)?,
                    ("run", "backend") => cfg.backend = value.parse().map_err(|e: crate::genbackend::GenError| bad(e.to_string()))?,
                    ("run", "timeout_secs") => cfg.timeout = Duration::from_secs_f64(num(value)?.max(0.0)),
                    ("run", "parallel") => {
                        cfg.parallel = value.trim().parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?
                    }
                    ("perturb", "replace") => weights[0] = num(value)?,
                    ("perturb", "insert") => weights[1] = num(value)?,
                    ("perturb", "delete") => weights[2] = num(value)?,
                    ("perturb", "min_slots") => cfg.perturb.min_slots = count(value)?,
                    ("perturb", "max_slots") => cfg.perturb.max_slots = count(value)?,
                    ("perturb", "target_count") => cfg.perturb.target_count = count(value)?,
                    ("perturb", "max_attempts") => cfg.perturb.max_attempts = Some(count(value)?),
                    ("decoding", "top_p") => cfg.decoding.top_p = num(value)?,
                    ("decoding", "temperature") => cfg.decoding.temperature = num(value)?,
                    ("decoding", "samples_per_input") => cfg.decoding.samples_per_input = count(value)?,
                    ("caps", "acts_to_use") => cfg.acts_to_use = count(value)?,
                    ("caps", "utterances_to_use") => cfg.utterances_to_use = count(value)?,
                    ("caps", "synthetic_target") => cfg.synthetic_target = count(value)?,
                    ("model", "epochs") => cfg.epochs = count(value)?,
                    ("model", "min_margin") => cfg.min_margin = num(value)?,
                    _ => return Err(PipelineError::Config(format!("unknown key [{section}] {key}"))),
                }
            }
        }
        cfg.perturb.op_weights = weights;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        self.perturb
            .check()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let d = &self.decoding;
        DecodingParams::new(d.top_p, d.temperature, d.samples_per_input)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.scenarios.is_empty() {
            return Err(PipelineError::Config("no scenarios".into()));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("no seeds".into()));
        }
        Ok(())
    }

    pub fn exec(&self) -> crate::exec::Exec {
        if self.parallel {
            crate::exec::Exec::Parallel
        } else {
            crate::exec::Exec::Sequential
        }
    }

    /// The effective configuration in the file format, defaults included.
    pub fn to_text(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut ini = Ini::new();
        ini.with_section(Some("data"))
            .set("train", p(&self.train))
            .set("dev", p(&self.dev))
            .set("test", p(&self.test))
            .set("ontology", p(&self.ontology));
        ini.with_section(Some("run"))
            .set("scenarios", join(&self.scenarios))
            .set("seeds", join(&self.seeds))
            .set("backend", self.backend.to_string())
            .set("timeout_secs", self.timeout.as_secs_f64().to_string())
            .set("parallel", self.parallel.to_string());
        let w = self.perturb.op_weights;
        let mut perturb = ini.with_section(Some("perturb"));
        perturb
            .set("replace", w[0].to_string())
            .set("insert", w[1].to_string())
            .set("delete", w[2].to_string())
            .set("min_slots", self.perturb.min_slots.to_string())
            .set("max_slots", self.perturb.max_slots.to_string())
            .set("target_count", self.perturb.target_count.to_string());
        if let Some(m) = self.perturb.max_attempts {
            perturb.set("max_attempts", m.to_string());
        }
        ini.with_section(Some("decoding"))
            .set("top_p", self.decoding.top_p.to_string())
            .set("temperature", self.decoding.temperature.to_string())
            .set("samples_per_input", self.decoding.samples_per_input.to_string());
        ini.with_section(Some("caps"))
            .set("acts_to_use", self.acts_to_use.to_string())
            .set("utterances_to_use", self.utterances_to_use.to_string())
            .set("synthetic_target", self.synthetic_target.to_string());
        ini.with_section(Some("model"))
            .set("epochs", self.epochs.to_string())
            .set("min_margin", self.min_margin.to_string());
        let mut out = Vec::new();
        ini.write_to(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("utf-8 in, utf-8 out")
    }
}
