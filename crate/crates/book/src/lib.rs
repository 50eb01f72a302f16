//! The guide's code blocks, compiled and run as doc tests.
//!
//! mdbook cannot run examples that depend on external crates, so each
//! chapter is included here as the docs of its own module and
//! `cargo test --doc` checks it. A failing test's name points at the
//! chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/specifications.md")]
pub mod specifications {}
#[doc = include_str!("../../../book/src/sentences.md")]
pub mod sentences {}
#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}
#[doc = include_str!("../../../book/src/stereotype-score.md")]
pub mod stereotype_score {}
#[doc = include_str!("../../../book/src/quality.md")]
pub mod quality {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
