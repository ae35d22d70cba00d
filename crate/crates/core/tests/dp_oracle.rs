mod common;

use common::{check_against_oracle, controller, random_problem, smooth_problem, GridOracle, OracleReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_topp::{compute_stoppable_sets, compute_tables, TableBackend};

#[test]
fn memoized_oracle_equals_literal_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let dof = rng.random_range(1..=3);
        let p = random_problem(&mut rng, dof, 6);
        let family = compute_stoppable_sets(&p.constraints, &p.grid);
        let tables = compute_tables(&family, &p.constraints, &p.grid, 4, TableBackend::SerialMemo).unwrap();
        let mut oracle = GridOracle::new(&p.grid, &p.constraints, &family, &tables);
        let n = p.grid.n();
        for j in 1..=n.min(6) {
            for k in 0..=tables.m() {
                assert_eq!(oracle.best(j, 0, k), oracle.enumerate(j, 0, k));
            }
        }
    }
}

#[test]
fn tables_sit_inside_the_oracle_bracket() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut report = OracleReport::default();
    for _ in 0..20 {
        let dof = rng.random_range(1..=3);
        let n = rng.random_range(6..=14);
        let m = rng.random_range(3..=8);
        let p = random_problem(&mut rng, dof, n);
        let family = compute_stoppable_sets(&p.constraints, &p.grid);
        let tables = compute_tables(&family, &p.constraints, &p.grid, m, TableBackend::SerialMemo).unwrap();
        check_against_oracle(&p.grid, &p.constraints, &family, &tables, &mut report);
    }
    assert!(report.cells > 1000);
    assert!(report.clean(), "{report:?}");
}

#[test]
fn finer_grid_is_less_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let p = smooth_problem(&mut rng, 2, 60);
        let coarse = controller(&p, 25);
        let fine = controller(&p, 100);
        let exact = coarse.greedy_forward_pass().duration;
        let n = coarse.n();
        let gap_coarse = coarse.tables.tau(n, 0, 0) - exact;
        let gap_fine = fine.tables.tau(n, 0, 0) - exact;
        assert!(gap_fine >= -1e-9, "{gap_fine}");
        assert!(gap_coarse > gap_fine, "{gap_coarse} vs {gap_fine}");
    }
}
