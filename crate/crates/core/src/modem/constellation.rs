//! Gray-labelled QAM constellations with unit average power.

use num_complex::Complex64;

use super::ModemError;

/// Point set indexed by bit label.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: u32,
    points: Vec<Complex64>,
}

fn gray_to_binary(mut g: u32) -> u32 {
    let mut b = g;
    while g > 1 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// Odd-integer level of a Gray label on an axis with `2^bits` levels.
fn level(label: u32, bits: u32) -> f64 {
    let n = 1u32 << bits;
    2.0 * gray_to_binary(label) as f64 - (n - 1) as f64
}

impl Constellation {
    pub fn new(order: u32) -> Result<Self, ModemError> {
        let raw: Vec<Complex64> = match order {
            4 | 16 | 64 => {
                let half = order.trailing_zeros() / 2;
                (0..order)
                    .map(|label| {
                        let i = label >> half;
                        let q = label & ((1 << half) - 1);
                        Complex64::new(level(i, half), level(q, half))
                    })
                    .collect()
            }
            // Cross: an 8×4 Gray rectangle whose |I| = 7 columns fold onto
            // the |Q| = 5 rows.
            32 => (0..32)
                .map(|label| {
                    let i = level(label >> 2, 3);
                    let q = level(label & 3, 2);
                    if i.abs() == 7.0 {
                        let folded_i = i.signum() * if q.abs() == 1.0 { 1.0 } else { 3.0 };
                        Complex64::new(folded_i, q.signum() * 5.0)
                    } else {
                        Complex64::new(i, q)
                    }
                })
                .collect(),
            other => return Err(ModemError::UnsupportedOrder(other)),
        };
        let power = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
        let scale = power.sqrt().recip();
        Ok(Self {
            order,
            points: raw.into_iter().map(|p| p * scale).collect(),
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.order.trailing_zeros()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: u32) -> Complex64 {
        self.points[label as usize]
    }

    /// Peak-to-average power ratio (linear).
    pub fn papr(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max)
    }

    /// Label of the nearest point.
    pub fn decide(&self, z: Complex64) -> u32 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k as u32;
            }
        }
        best
    }

    /// Mean of `s⁴` over the constellation; used by the blind phase estimator.
    pub fn fourth_moment(&self) -> Complex64 {
        self.points.iter().map(|p| p.powi(4)).sum::<Complex64>() / self.order as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_power_and_distinct() {
        for m in [4, 16, 32, 64] {
            let c = Constellation::new(m).unwrap();
            let p: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
            assert!((p - 1.0).abs() < 1e-12);
            for a in 0..m as usize {
                for b in a + 1..m as usize {
                    assert!((c.points()[a] - c.points()[b]).norm() > 1e-6);
                }
            }
        }
        assert_eq!(Constellation::new(8), Err(ModemError::UnsupportedOrder(8)));
    }

    #[test]
    fn cross_shape() {
        let c = Constellation::new(32).unwrap();
        let s = 20f64.sqrt();
        for p in c.points() {
            let (i, q) = ((p.re * s).round(), (p.im * s).round());
            assert!(i.abs() <= 5.0 && q.abs() <= 5.0);
            assert!(!(i.abs() == 5.0 && q.abs() == 5.0));
        }
        assert!((c.papr() - 1.7).abs() < 1e-12);
    }

    /// Nearest neighbors differ in one bit for square orders; the cross map
    /// keeps most of them that way.
    #[test]
    fn gray_neighbors() {
        for m in [4u32, 16, 64, 32] {
            let c = Constellation::new(m).unwrap();
            let unit = c
                .points()
                .iter()
                .enumerate()
                .flat_map(|(a, pa)| c.points()[a + 1..].iter().map(move |pb| (pa - pb).norm()))
                .fold(f64::INFINITY, f64::min);
            let (mut pairs, mut single) = (0, 0);
            for a in 0..m {
                for b in a + 1..m {
                    if ((c.point(a) - c.point(b)).norm() - unit).abs() < 1e-9 {
                        pairs += 1;
                        if (a ^ b).count_ones() == 1 {
                            single += 1;
                        }
                    }
                }
            }
            if m == 32 {
                assert!(single as f64 >= 0.8 * pairs as f64, "{single}/{pairs}");
            } else {
                assert_eq!(single, pairs);
            }
        }
    }

    #[test]
    fn decisions() {
        let c = Constellation::new(16).unwrap();
        for l in 0..16 {
            assert_eq!(c.decide(c.point(l) * 1.05), l);
        }
    }
}
