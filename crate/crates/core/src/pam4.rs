//! PAM4 symbol alphabet: Gray mapping, normalized target levels, slicing.

use rand::Rng;

/// Target amplitudes `{-3, -1, 1, 3} / sqrt(5)` (unit average power).
pub const LEVELS: [f64; 4] = [
    -3.0 / 2.236_067_977_499_79,
    -1.0 / 2.236_067_977_499_79,
    1.0 / 2.236_067_977_499_79,
    3.0 / 2.236_067_977_499_79,
];

/// Gray bit pairs `(msb, lsb)` for symbol indices 0..4: 00, 01, 11, 10.
pub const GRAY_BITS: [[u8; 2]; 4] = [[0, 0], [0, 1], [1, 1], [1, 0]];

pub fn generate_symbols<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..4u8)).collect()
}

pub fn gray_bits(symbols: &[u8]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|&s| GRAY_BITS[s as usize])
        .collect()
}

pub fn level(symbol: u8) -> f64 {
    LEVELS[symbol as usize]
}

/// Hard decision with thresholds at the midpoints between [`LEVELS`].
pub fn slice(x: f64) -> u8 {
    let t = LEVELS[2] - LEVELS[1];
    if x < -t {
        0
    } else if x < 0.0 {
        1
    } else if x < t {
        2
    } else {
        3
    }
}

pub fn bit_errors(decided: u8, truth: u8) -> u32 {
    let d = GRAY_BITS[decided as usize];
    let t = GRAY_BITS[truth as usize];
    (d[0] != t[0]) as u32 + (d[1] != t[1]) as u32
}

/// Bit errors and bits compared for soft estimates against true symbols.
pub fn count_bit_errors(estimates: &[f64], symbols: &[u8]) -> (u64, u64) {
    assert_eq!(estimates.len(), symbols.len());
    let errors = estimates
        .iter()
        .zip(symbols)
        .map(|(&e, &s)| bit_errors(slice(e), s) as u64)
        .sum();
    (errors, 2 * symbols.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn adjacent_levels_differ_in_one_bit() {
        for s in 0..3u8 {
            assert_eq!(bit_errors(s, s + 1), 1);
        }
        assert_eq!(bit_errors(0, 2), 2);
    }

    #[test]
    fn levels_have_unit_power() {
        let p: f64 = LEVELS.iter().map(|l| l * l).sum::<f64>() / 4.0;
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slicing_exact_levels_is_lossless() {
        for s in 0..4u8 {
            assert_eq!(slice(level(s)), s);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_symbols(4, &mut seed::rng(11));
        let b = generate_symbols(4, &mut seed::rng(11));
        assert_eq!(a, b);
    }

    #[test]
    fn symbol_frequencies_are_uniform() {
        let n = 1_000_000;
        let syms = generate_symbols(n, &mut seed::rng(3));
        let mut counts = [0usize; 4];
        for s in syms {
            counts[s as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.01 * 0.25, "frequency {f}");
        }
    }
}
