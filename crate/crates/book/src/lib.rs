//! The guide's chapters as doc-tests, so every listing compiles and runs.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/singular.md")]
pub mod singular {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/flux.md")]
pub mod flux {}
#[doc = include_str!("../../../book/src/identifiability.md")]
pub mod identifiability {}
#[doc = include_str!("../../../book/src/reconstruction.md")]
pub mod reconstruction {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
