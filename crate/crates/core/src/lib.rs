//! Household-robot language interface that learns by decomposition.
//!
//! An exemplar-based neural semantic parser maps utterances to programs of
//! primitive actions, refuses (`NOT_SURE`) when nothing in its store is close
//! enough, and is retrained after every task on the decompositions users taught.

pub mod embednet;
pub mod entity;
pub mod nn;
pub mod par;
pub mod parser;
pub mod pipeline;
pub mod program;
pub mod scripted_user;
pub mod service;
pub mod session;
pub mod world;
