//! Runs the guide's code snippets as doc-tests.
//!
//! mdbook cannot compile listings against a local crate, so every chapter of `book/src` is
//! included here as the documentation of an empty module and `cargo test --doc` runs its
//! code blocks. One module per chapter keeps failures traceable to their chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/histograms.md")]
pub mod histograms {}
#[doc = include_str!("../../../book/src/sawtooth.md")]
pub mod sawtooth {}
#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/quantization.md")]
pub mod quantization {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
