//! Empirical Shannon entropy of byte streams.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot estimate the entropy of an empty byte stream")]
pub struct EmptyInput;

/// `-Σ p_i log2 p_i` over byte frequencies, in bits per byte (0 to 8).
pub fn shannon_entropy(data: &[u8]) -> Result<f64, EmptyInput> {
    if data.is_empty() {
        return Err(EmptyInput);
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bytes_are_eight_bits() {
        let data: Vec<u8> = (0..=255u8).cycle().take(256 * 4).collect();
        assert!((shannon_entropy(&data).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn constant_bytes_are_zero() {
        assert_eq!(shannon_entropy(&[7u8; 1000]).unwrap(), 0.0);
    }

    #[test]
    fn two_equiprobable_symbols_are_one_bit() {
        assert!((shannon_entropy(b"aabb").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(shannon_entropy(&[]), Err(EmptyInput));
    }
}
