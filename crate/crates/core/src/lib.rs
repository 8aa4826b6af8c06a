//! Controlled-evidence laboratory: coined words, template-generated
//! minimal pairs, exact-frequency corpus injection, a from-scratch masked
//! language model and pseudo-likelihood evaluation.

pub mod corpus;
pub mod eval;
pub mod lexicon;
pub mod mlm;
pub mod ops;
pub mod runner;
pub mod template;
pub mod tokenizer;
pub mod wug;
