//! Synthesizing labeled slot-filling and intent-detection data from dialogue
//! acts, and measuring what it buys a downstream tagger.

pub mod align;
pub mod corpus;
pub mod dialogue;
pub mod exec;
pub mod genbackend;
pub mod metrics;
pub mod mr;
pub mod perturb;
pub mod pipeline;
pub mod slu;
pub mod toy;
