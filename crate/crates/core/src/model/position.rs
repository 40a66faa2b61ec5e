//! Absolute sinusoidal encodings and clipped relative-position labels.

/// Interleaved sin/cos encoding of `position`: slot `2i` holds
/// `sin(pos / 10000^(2i/d))` and slot `2i+1` the matching cosine.
pub fn sinusoidal_encoding(position: usize, d: usize) -> Vec<f64> {
    assert!(d % 2 == 0, "sinusoidal encoding needs an even dimension");
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = position as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// Label index of key `j` as seen from query `i`: `clamp(j − i, −r, r) + r`.
pub fn relative_label(query_pos: usize, key_pos: usize, radius: usize) -> usize {
    let r = radius as i64;
    let off = (key_pos as i64 - query_pos as i64).clamp(-r, r);
    (off + r) as usize
}

/// Row-major `[q_len, k_len]` table of [`relative_label`].
pub fn label_matrix(q_len: usize, k_len: usize, radius: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(q_len * k_len);
    for i in 0..q_len {
        for j in 0..k_len {
            out.push(relative_label(i, j, radius));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn position_zero() {
        let v = sinusoidal_encoding(0, 8);
        for i in 0..4 {
            assert_eq!(v[2 * i], 0.0);
            assert_eq!(v[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn position_one_first_slot() {
        let v = sinusoidal_encoding(1, 4);
        assert!((v[0] - 1f64.sin()).abs() < 1e-15);
        assert!((v[0] - 0.8415).abs() < 1e-4);
    }

    #[test]
    fn label_examples() {
        assert_eq!(relative_label(5, 5, 16), 16);
        assert_eq!(relative_label(0, 20, 16), 32);
        assert_eq!(relative_label(7, 3, 16), 16 - 4);
        assert_eq!(relative_label(40, 0, 16), 0);
    }

    proptest! {
        #[test]
        fn encodings_bounded(pos in 0usize..10_000, half in 1usize..64) {
            for v in sinusoidal_encoding(pos, 2 * half) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn labels_translation_invariant(i in 0usize..100, j in 0usize..100, shift in 0usize..100, r in 1usize..20) {
            prop_assert_eq!(relative_label(i, j, r), relative_label(i + shift, j + shift, r));
            prop_assert!(relative_label(i, j, r) <= 2 * r);
        }
    }
}
