//! Utterance generators (act to utterances) and labelers (utterance to act):
//! a built-in template generator, a string-matching pseudo-labeler, and a
//! line-oriented protocol client for external model processes.

mod nlu;
mod protocol;
mod template;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use nlu::{fold_name, map_to_ontology, pseudo_label, Lexicon};
pub use protocol::{
    encode_request, serve, Endpoint, FixtureTable, Response, DEFAULT_TIMEOUT, ENV_SAMPLES, ENV_TEMPERATURE,
    ENV_TOP_P,
};
pub use template::{generate, train_template_generator, Piece, TemplateModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("no template for intent {0}")]
    NoTemplateForIntent(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("request {id}: backend returned {got} of {expected} samples")]
    PartialResponse { id: u64, expected: usize, got: usize },
    #[error("request {id} rejected by backend: {reason}")]
    BackendRejected { id: u64, reason: String },
    #[error("no slot value found and intent confidence too low")]
    NoEvidence,
    #[error("intent {0} is not in the ontology")]
    UnknownIntent(String),
    #[error("invalid decoding parameters: {0}")]
    BadParams(String),
    #[error("invalid backend spec {0:?}; expected builtin, exec:<cmd>, tcp:<host:port> or fixture:<path>")]
    BadSpec(String),
    #[error("fixture {path}: {reason}")]
    Fixture { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodingParams {
    pub top_p: f64,
    pub temperature: f64,
    pub samples_per_input: usize,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            top_p: 0.9,
            temperature: 1.0,
            samples_per_input: 3,
        }
    }
}

impl DecodingParams {
    pub fn new(top_p: f64, temperature: f64, samples_per_input: usize) -> Result<Self, GenError> {
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(GenError::BadParams(format!("top_p must be in (0, 1], got {top_p}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(GenError::BadParams(format!("temperature must be positive, got {temperature}")));
        }
        if samples_per_input == 0 {
            return Err(GenError::BadParams("samples_per_input must be at least 1".into()));
        }
        Ok(DecodingParams {
            top_p,
            temperature,
            samples_per_input,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// Act in, utterances out.
    Nlg,
    /// Utterance in, acts out.
    Nlu,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Nlg => "nlg",
            Direction::Nlu => "nlu",
        })
    }
}

impl FromStr for Direction {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        match s {
            "nlg" => Ok(Direction::Nlg),
            "nlu" => Ok(Direction::Nlu),
            _ => Err(GenError::ProtocolError(format!("unknown direction {s:?}"))),
        }
    }
}

/// Where generated text comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Builtin,
    /// A shell command speaking the protocol on its standard streams.
    Exec(String),
    Tcp(String),
    /// Recorded responses replayed in-process.
    Fixture(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        let s = s.trim();
        if s == "builtin" {
            return Ok(BackendSpec::Builtin);
        }
        let bad = || GenError::BadSpec(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match kind {
            "exec" => Ok(BackendSpec::Exec(rest.to_string())),
            "tcp" => Ok(BackendSpec::Tcp(rest.to_string())),
            "fixture" => Ok(BackendSpec::Fixture(PathBuf::from(rest))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Builtin => f.write_str("builtin"),
            BackendSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
            BackendSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
            BackendSpec::Fixture(p) => write!(f, "fixture:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert_eq!(DecodingParams::default(), DecodingParams::new(0.9, 1.0, 3).unwrap());
        assert!(DecodingParams::new(0.0, 1.0, 3).is_err());
        assert!(DecodingParams::new(1.0, 1.0, 3).is_ok());
        assert!(DecodingParams::new(1.01, 1.0, 3).is_err());
        assert!(DecodingParams::new(0.5, 0.0, 3).is_err());
        assert!(DecodingParams::new(0.5, f64::NAN, 3).is_err());
        assert!(DecodingParams::new(0.5, 1.0, 0).is_err());
    }

    #[test]
    fn backend_specs() {
        for s in ["builtin", "exec:python3 serve.py --x", "tcp:127.0.0.1:7000", "fixture:a/b.tsv"] {
            assert_eq!(s.parse::<BackendSpec>().unwrap().to_string(), s);
        }
        assert_eq!(
            "exec:a:b".parse::<BackendSpec>().unwrap(),
            BackendSpec::Exec("a:b".into())
        );
        for bad in ["", "exec:", "http://x", "builtin2"] {
            assert!(bad.parse::<BackendSpec>().is_err(), "{bad}");
        }
    }
}
