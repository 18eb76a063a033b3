//! Gray-labelled 16-QAM.

use num_complex::Complex64;

/// Per-dimension Gray labels in level order `-3, -1, +1, +3`.
const GRAY: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 1], [1, 0]];

fn level(b: [u8; 2]) -> f64 {
    let i = GRAY.iter().position(|g| *g == [b[0] & 1, b[1] & 1]).expect("two bits");
    2.0 * i as f64 - 3.0
}

fn slice(v: f64) -> [u8; 2] {
    let i = ((v + 3.0) / 2.0).round().clamp(0.0, 3.0) as usize;
    GRAY[i]
}

/// Amplitude unit `sqrt(E_s / 10)`: the mean energy of the 16 points is `E_s`.
pub fn qam16_scale(es: f64) -> f64 {
    (es / 10.0).sqrt()
}

/// Bits `[i0, i1, q0, q1]` to a constellation point of mean energy `es`.
pub fn qam16(bits: [u8; 4], es: f64) -> Complex64 {
    Complex64::new(level([bits[0], bits[1]]), level([bits[2], bits[3]])) * qam16_scale(es)
}

/// Nearest-point demapping of an equalized, rescaled sample.
pub fn qam16_demap(symbol: Complex64, es: f64) -> [u8; 4] {
    let s = symbol / qam16_scale(es);
    let (i, q) = (slice(s.re), slice(s.im));
    [i[0], i[1], q[0], q[1]]
}

/// Map a bit stream (length a multiple of four) to symbols.
pub fn map_bits(bits: &[u8], es: f64) -> Vec<Complex64> {
    bits.chunks_exact(4).map(|c| qam16([c[0], c[1], c[2], c[3]], es)).collect()
}
