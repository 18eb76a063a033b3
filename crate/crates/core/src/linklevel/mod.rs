//! Coded link-level simulation: convolutional coding, Gray 16-QAM, OFDM
//! with a cyclic prefix through the mixed-ADC front end, and hard-decision
//! Viterbi decoding.

pub mod code;
pub mod qam;
pub mod sim;

pub use code::{conv_encode, conv_encode_raw, viterbi_decode};
pub use qam::{qam16, qam16_demap};
pub use sim::{simulate_ber, BerOptions, BerPoint, BerReport};
