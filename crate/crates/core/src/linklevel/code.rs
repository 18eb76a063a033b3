//! Rate-1/2, constraint-length-3 convolutional code with generators
//! `1 + D` and `1 + D + D^2`, and its hard-decision Viterbi decoder.

use crate::error::{Error, Result};

/// Tail bits appended by [`conv_encode`] to return the encoder to state zero.
pub const TAIL_BITS: usize = 2;

const STATES: usize = 4;

/// Output pair for input `b` in state `s = (b_{k-1}, b_{k-2})` packed as
/// `b_{k-1} | b_{k-2} << 1`.
#[inline]
fn branch(s: usize, b: u8) -> (u8, u8) {
    let (p1, p2) = ((s & 1) as u8, (s >> 1) as u8);
    (b ^ p1, b ^ p1 ^ p2)
}

#[inline]
fn next_state(s: usize, b: u8) -> usize {
    (b as usize) | ((s & 1) << 1)
}

/// Shift-register output without termination: two coded bits per input bit.
pub fn conv_encode_raw(bits: &[u8]) -> Vec<u8> {
    let mut s = 0;
    let mut out = Vec::with_capacity(2 * bits.len());
    for &b in bits {
        let (o1, o2) = branch(s, b & 1);
        out.push(o1);
        out.push(o2);
        s = next_state(s, b & 1);
    }
    out
}

/// Zero-tail terminated encoding: `2 * (len + 2)` coded bits.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let mut padded = bits.to_vec();
    padded.extend([0; TAIL_BITS]);
    conv_encode_raw(&padded)
}

/// Maximum-likelihood decoding of a terminated codeword under the Hamming
/// metric. Returns the information bits with the tail stripped.
pub fn viterbi_decode(received: &[u8]) -> Result<Vec<u8>> {
    if !received.len().is_multiple_of(2) || received.len() < 2 * TAIL_BITS {
        return Err(Error::config(format!("codeword length {} is not a terminated rate-1/2 block", received.len())));
    }
    let steps = received.len() / 2;
    const INF: u32 = u32::MAX / 2;
    let mut metric = [INF; STATES];
    metric[0] = 0;
    // survivor[k][s] = (previous state, input bit)
    let mut survivor = vec![[(0u8, 0u8); STATES]; steps];
    for k in 0..steps {
        let (r1, r2) = (received[2 * k] & 1, received[2 * k + 1] & 1);
        let mut next = [INF; STATES];
        for s in 0..STATES {
            if metric[s] >= INF {
                continue;
            }
            for b in 0..2u8 {
                let (o1, o2) = branch(s, b);
                let m = metric[s] + u32::from(o1 ^ r1) + u32::from(o2 ^ r2);
                let t = next_state(s, b);
                // ties keep the lower predecessor state
                if m < next[t] {
                    next[t] = m;
                    survivor[k][t] = (s as u8, b);
                }
            }
        }
        metric = next;
    }
    let mut bits = vec![0u8; steps];
    let mut s = 0usize;
    for k in (0..steps).rev() {
        let (p, b) = survivor[k][s];
        bits[k] = b;
        s = p as usize;
    }
    bits.truncate(steps - TAIL_BITS);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn encoder_examples() {
        assert_eq!(conv_encode_raw(&[1, 0, 0]), vec![1, 1, 1, 1, 0, 1]);
        assert_eq!(conv_encode(&[1]), vec![1, 1, 1, 1, 0, 1]);
        assert_eq!(conv_encode(&[0; 5]), vec![0; 14]);
        assert_eq!(conv_encode(&[1, 0, 1, 1]).len(), 12);
    }

    #[test]
    fn encoder_is_linear() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            let a = random_bits(&mut rng, 20);
            let b = random_bits(&mut rng, 20);
            let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
            let lhs = conv_encode(&x);
            let rhs: Vec<u8> = conv_encode(&a).iter().zip(conv_encode(&b)).map(|(p, q)| p ^ q).collect();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn free_distance_is_four() {
        // minimum weight over all nonzero terminated inputs of length <= 8
        let mut best = usize::MAX;
        for m in 1u32..256 {
            let bits: Vec<u8> = (0..8).map(|i| (m >> i & 1) as u8).collect();
            best = best.min(conv_encode(&bits).iter().filter(|&&b| b == 1).count());
        }
        // input 1,1 yields 11 00 10 01
        assert_eq!(best, 4);
        assert_eq!(conv_encode(&[1, 1]), vec![1, 1, 0, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn round_trip_and_zero_word() {
        let mut rng = seeded(2);
        for _ in 0..1000 {
            let len = rng.random_range(1..64);
            let b = random_bits(&mut rng, len);
            assert_eq!(viterbi_decode(&conv_encode(&b)).unwrap(), b);
        }
        assert_eq!(viterbi_decode(&[0; 20]).unwrap(), vec![0; 8]);
        assert!(viterbi_decode(&[0; 7]).is_err());
    }

    #[test]
    fn corrects_every_single_flip() {
        let mut rng = seeded(3);
        let b = random_bits(&mut rng, 40);
        let c = conv_encode(&b);
        for i in 0..c.len() {
            let mut r = c.clone();
            r[i] ^= 1;
            assert_eq!(viterbi_decode(&r).unwrap(), b, "flip at {i}");
        }
    }
}
