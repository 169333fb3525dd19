//! Attribute-inference engine and benchmark harness: a five-phase agentic
//! pipeline (extraction, analysis, summarization, inquiry, decision) that
//! infers a fixed twelve-attribute profile from an individual's image
//! collection, plus a strong-prompt baseline, ablation switches, the scoring
//! metrics, and deterministic scripted backends for offline replay.

pub mod agents;
pub mod dataset;
pub mod pipeline;
pub mod scoring;
pub mod taxonomy;
