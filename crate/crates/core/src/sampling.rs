//! Seeded low-discrepancy sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    out
}

/// Halton sequence with a seeded Cranley–Patterson rotation.
#[derive(Debug, Clone)]
pub struct ScrambledHalton {
    shift: Vec<f64>,
}

impl ScrambledHalton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sampling supports up to {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScrambledHalton {
            shift: (0..dim).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    /// The `index`-th point of the unit cube.
    pub fn point(&self, index: usize) -> Vec<f64> {
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, base)| {
                let v = radical_inverse(index as u64 + 1, base) + s;
                v - v.floor()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn points_fill_the_cube_evenly() {
        let h = ScrambledHalton::new(2, 42);
        let mut cells = [0usize; 16];
        for i in 0..1600 {
            let p = h.point(i);
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
            cells[(p[0] * 4.0) as usize * 4 + (p[1] * 4.0) as usize] += 1;
        }
        assert!(cells.iter().all(|&c| (90..=110).contains(&c)), "{cells:?}");
        assert_eq!(h.point(17), ScrambledHalton::new(2, 42).point(17));
    }
}
