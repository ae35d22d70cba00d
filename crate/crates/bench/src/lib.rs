//! Fixtures shared by the benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_topp::sim::{Problem, Scenario};
use safe_topp::Lp1Batch;

/// The 3-DoF arm path discretized with at least `n` stages.
pub fn arm_problem(n: usize) -> Problem {
    let mut sc = Scenario::arm_pursuit(0);
    sc.n = n;
    sc.problem().expect("preset scenario is valid")
}

/// `count` random 1-D LPs with 2 to `max_rows` rows each.
pub fn random_batch(count: usize, max_rows: usize, seed: u64) -> Lp1Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Lp1Batch::with_capacity(count, count * max_rows);
    for _ in 0..count {
        for _ in 0..rng.random_range(2..=max_rows) {
            let a: f64 = rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            batch.push_row(a, rng.random_range(-5.0..5.0));
        }
        batch.finish_problem(rng.random_range(0.0..4.0));
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        let b = random_batch(100, 6, 1);
        assert_eq!(b.len(), 100);
        assert_eq!(b.row_offsets.len(), 101);
        assert!(b.a.iter().all(|&a| a != 0.0));
        assert!(arm_problem(50).grid.n() >= 50);
    }
}
