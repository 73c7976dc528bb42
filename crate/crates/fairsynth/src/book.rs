//! The book's chapters, attached as doc comments so every code block in
//! `book/src/*.md` compiles and runs under `cargo test --doc`. A module
//! per chapter keeps failures attributable to their chapter.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/privacy.md")]
pub mod privacy {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}
#[doc = include_str!("../../../book/src/fairness.md")]
pub mod fairness {}
#[doc = include_str!("../../../book/src/lp.md")]
pub mod lp {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
