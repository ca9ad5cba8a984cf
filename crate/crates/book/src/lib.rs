//! Compiles every chapter of the guide in `book/` as doc-tests, so the
//! snippets there are checked by `cargo test`. `mdbook test` cannot link
//! against workspace crates, hence this shim. One module per chapter keeps
//! failures traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/residual.md")]
pub mod residual {}
#[doc = include_str!("../../../book/src/breakpoint.md")]
pub mod breakpoint {}
#[doc = include_str!("../../../book/src/salient.md")]
pub mod salient {}
#[doc = include_str!("../../../book/src/compensation.md")]
pub mod compensation {}
#[doc = include_str!("../../../book/src/format.md")]
pub mod format {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
