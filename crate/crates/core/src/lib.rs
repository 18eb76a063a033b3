//! Achievable rates and coded BER for massive MIMO-OFDM uplinks in which only
//! some antennas have high-resolution converters and the rest quantize with
//! one bit (or a few bits).
//!
//! The guide in `book/` walks through each module; its snippets run as
//! doctests of this crate.
#![doc = include_str!("../../../book/src/introduction.md")]

pub mod equalizer;
pub mod ergodic;
pub mod error;
pub mod experiment;
pub mod linklevel;
pub mod numerics;
pub mod oracle;
pub mod quantizer;
pub mod rng;
pub mod secondstats;
pub mod switching;
pub mod spectral;

pub use num_complex::Complex64 as C64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/quantizers.md")]
    mod quantizers {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/equalizer.md")]
    mod equalizer {}
    #[doc = include_str!("../../../book/src/ergodic.md")]
    mod ergodic {}
    #[doc = include_str!("../../../book/src/switching.md")]
    mod switching {}
    #[doc = include_str!("../../../book/src/linklevel.md")]
    mod linklevel {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
