//! Spoken English-tutoring dialogue engine.
//!
//! Each user turn is a short audio clip. The engine transcribes it, measures
//! pauses and negative affect to decide whether the learner is distressed,
//! checks the transcript for grammatical errors, and routes the turn to
//! ordinary conversation, empathetic feedback, grammatical feedback, a
//! feedback question, or a transition back to the conversation.
//!
//! All model access goes through [`gateway`], which has deterministic stubs
//! for every service.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affect;
pub mod audio;
pub mod empathy;
pub mod eval;
pub mod gateway;
pub mod grammar;
pub mod orchestrator;
pub mod pause;
pub mod session;
