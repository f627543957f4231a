//! The book's chapters, compiled so their samples run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/episodes.md")]
pub mod episodes {}
#[doc = include_str!("../../../book/src/families.md")]
pub mod families {}
#[doc = include_str!("../../../book/src/interventions.md")]
pub mod interventions {}
#[doc = include_str!("../../../book/src/curricula.md")]
pub mod curricula {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/replay.md")]
pub mod replay {}
#[doc = include_str!("../../../book/src/wire.md")]
pub mod wire {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
