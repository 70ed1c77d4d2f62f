//! Sinusoidal positional encoding for 2-D positions.

use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::math;

/// Encodes `[N, 2]` positions into `[N, width]`: the first half of the
/// features encodes x, the second half y, each as interleaved
/// `sin(p / 10000^(2j/half)), cos(p / 10000^(2j/half))` bands.
/// `width` must be divisible by 4. Position `(0, 0)` maps to the
/// alternating `[0, 1, 0, 1, ...]` pattern.
pub fn sinusoidal_pe(positions: &[(f64, f64)], width: usize) -> Tensor {
    assert!(width >= 4 && width % 4 == 0, "positional encoding width {width} must be divisible by 4");
    let half = width / 2;
    let bands = half / 2;
    let mut data = Vec::with_capacity(positions.len() * width);
    for &(x, y) in positions {
        for &coord in &[x, y] {
            for j in 0..bands {
                let freq = 1.0 / math::pow(10000.0, 2.0 * j as f64 / half as f64);
                data.push(math::sin(coord * freq));
                data.push(math::cos(coord * freq));
            }
        }
    }
    Tensor::new(&[positions.len(), width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_alternates_zero_one() {
        let pe = sinusoidal_pe(&[(0.0, 0.0)], 8);
        assert_eq!(pe.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn equal_positions_equal_encodings() {
        let pe = sinusoidal_pe(&[(3.2, -1.1), (3.2, -1.1)], 16);
        let (a, b) = pe.data().split_at(16);
        assert_eq!(a, b);
    }

    #[test]
    fn matches_direct_formula() {
        let (x, y) = (3.7, -2.1);
        let width = 16;
        let pe = sinusoidal_pe(&[(x, y)], width);
        // Straight evaluation of the band formula.
        let half = width / 2;
        let mut expect = Vec::new();
        for coord in [x, y] {
            for j in 0..half / 2 {
                let freq = 1.0 / math::pow(10000.0, 2.0 * j as f64 / half as f64);
                expect.push(math::sin(coord * freq));
                expect.push(math::cos(coord * freq));
            }
        }
        for (a, e) in pe.data().iter().zip(&expect) {
            assert!(math::abs(a - e) < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    #[should_panic]
    fn rejects_width_not_divisible_by_four() {
        sinusoidal_pe(&[(0.0, 0.0)], 6);
    }
}
