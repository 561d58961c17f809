//! Multi-degradation image deraining toolkit.
//!
//! * [`reweight`]: per-type loss scheduler.
//! * [`moe`]: toy mixture-of-experts restorer and its training loop.
//! * [`imaging`]: image buffers, synthetic rain and quality metrics.
//! * [`distill`]: retrieval cascade and voting into a quality pyramid.
//! * [`vlm`]: assessment endpoints, HTTP and mock.
//! * [`seed`]: labelled seed derivation.
//!
//! The guide under `book/` walks through each part with runnable examples.

pub mod distill;
pub mod imaging;
pub mod moe;
pub mod numeric;
pub mod reweight;
pub mod seed;
pub mod vlm;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/reweighting.md")]
    mod reweighting {}
    #[doc = include_str!("../../../book/src/imaging.md")]
    mod imaging {}
    #[doc = include_str!("../../../book/src/moe.md")]
    mod moe {}
    #[doc = include_str!("../../../book/src/distillation.md")]
    mod distillation {}
    #[doc = include_str!("../../../book/src/endpoints.md")]
    mod endpoints {}
}
