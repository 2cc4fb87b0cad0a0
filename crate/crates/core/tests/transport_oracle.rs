use curvlab_core::linalg::{periodic_distance, Vec2};
use curvlab_core::transport::{c_transform, c_transform_back, is_c_concave, solve_exact, solve_sinkhorn, CostMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense two-phase tableau simplex with Bland's rule for
/// `min Σ c_ij x_ij` subject to row sums `a`, column sums `b`, `x ≥ 0`.
fn lp_transport_value(a: &[f64], b: &[f64], cost: &CostMatrix) -> f64 {
    let (n, m) = (a.len(), b.len());
    let nv = n * m;
    let rows = n + m;
    let cols = nv + rows + 1; // originals, artificials, rhs
    let mut t = vec![vec![0.0; cols]; rows];
    for i in 0..n {
        for j in 0..m {
            t[i][i * m + j] = 1.0;
            t[n + j][i * m + j] = 1.0;
        }
        t[i][nv + i] = 1.0;
        t[i][cols - 1] = a[i];
    }
    for j in 0..m {
        t[n + j][nv + n + j] = 1.0;
        t[n + j][cols - 1] = b[j];
    }
    let mut basis: Vec<usize> = (nv..nv + rows).collect();
    let mut alive = vec![true; rows];
    let eps = 1e-12;

    let pivot = |t: &mut Vec<Vec<f64>>, r: usize, c: usize| {
        let p = t[r][c];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r && row[c] != 0.0 {
                let f = row[c];
                for (x, y) in row.iter_mut().zip(&pr) {
                    *x -= f * y;
                }
            }
        }
    };

    let run =
        |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, alive: &[bool], obj: &dyn Fn(usize) -> f64, allowed: usize| {
            loop {
                // Reduced costs r_c = obj_c − Σ obj_basis · column.
                let mut enter = None;
                for c in 0..allowed {
                    if basis.contains(&c) {
                        continue;
                    }
                    let mut r = obj(c);
                    for (k, &bv) in basis.iter().enumerate() {
                        if alive[k] {
                            r -= obj(bv) * t[k][c];
                        }
                    }
                    if r < -eps {
                        enter = Some(c);
                        break;
                    }
                }
                let Some(c) = enter else { return };
                let mut leave: Option<(usize, f64)> = None;
                for k in 0..t.len() {
                    if !alive[k] || t[k][c] <= eps {
                        continue;
                    }
                    let ratio = t[k][cols - 1] / t[k][c];
                    match leave {
                        None => leave = Some((k, ratio)),
                        Some((lk, lr)) => {
                            if ratio < lr - eps || (ratio <= lr + eps && basis[k] < basis[lk]) {
                                leave = Some((k, ratio));
                            }
                        }
                    }
                }
                let (r, _) = leave.expect("bounded problem");
                pivot(t, r, c);
                basis[r] = c;
            }
        };

    // Phase one: minimize the sum of artificials.
    let phase1 = |c: usize| if c >= nv { 1.0 } else { 0.0 };
    run(&mut t, &mut basis, &alive, &phase1, nv + rows);
    // Drive remaining artificials out, dropping redundant rows.
    for k in 0..rows {
        if basis[k] >= nv {
            match (0..nv).find(|&c| t[k][c].abs() > 1e-9 && !basis.contains(&c)) {
                Some(c) => {
                    pivot(&mut t, k, c);
                    basis[k] = c;
                }
                None => alive[k] = false,
            }
        }
    }
    let phase2 = |c: usize| if c < nv { cost.values[c] } else { 0.0 };
    run(&mut t, &mut basis, &alive, &phase2, nv);
    (0..rows)
        .filter(|&k| alive[k])
        .map(|k| cost.values[basis[k]] * t[k][cols - 1])
        .sum()
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (Vec<f64>, Vec<f64>, CostMatrix) {
    let xs: Vec<Vec2> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let ys: Vec<Vec2> = (0..m).map(|_| [rng.random(), rng.random()]).collect();
    let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut b: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    a.iter_mut().for_each(|v| *v /= sa);
    b.iter_mut().for_each(|v| *v /= sb);
    // Make the totals agree to the last bit.
    let diff = a.iter().sum::<f64>() - b.iter().sum::<f64>();
    b[0] += diff;
    let cost = CostMatrix::from_fn(n, m, |i, j| {
        let d = periodic_distance(xs[i], ys[j]);
        0.5 * d * d
    })
    .unwrap();
    (a, b, cost)
}

#[test]
fn exact_solver_matches_lp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(n, m) in &[(5, 7), (20, 20), (50, 50)] {
        let (a, b, cost) = random_instance(&mut rng, n, m);
        let sol = solve_exact(&a, &b, &cost).unwrap();
        let oracle = lp_transport_value(&a, &b, &cost);
        assert!(
            (sol.plan.cost - oracle).abs() <= 1e-9,
            "{n}x{m}: {} vs {oracle}",
            sol.plan.cost
        );
        assert!(sol.duality_gap <= 1e-7 * (1.0 + cost.max_abs()));
        assert_eq!(sol.potential.max_violation(&cost), 0.0);
        assert!(sol.plan.marginal_error(&a, &b) <= 1e-9);
    }
}

#[test]
fn sinkhorn_approaches_exact_from_above() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b, cost) = random_instance(&mut rng, 50, 50);
    let exact = solve_exact(&a, &b, &cost).unwrap().plan.cost;
    let mut last = f64::INFINITY;
    for reg in [1e-1, 1e-2, 1e-3] {
        let s = solve_sinkhorn(&a, &b, &cost, reg, 200_000).unwrap();
        assert!(s.converged, "reg {reg}: marginal error {}", s.marginal_error);
        assert!(s.plan.cost >= exact - 1e-9);
        assert!(s.plan.cost - exact <= reg * (50.0f64).ln() * 2.0);
        assert!(s.plan.cost <= last + 1e-12);
        last = s.plan.cost;
    }
}

#[test]
fn sinkhorn_identity_cost_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, _, _) = random_instance(&mut rng, 30, 30);
    let xs: Vec<Vec2> = (0..30).map(|_| [rng.random(), rng.random()]).collect();
    let cost = CostMatrix::from_fn(30, 30, |i, j| 0.5 * periodic_distance(xs[i], xs[j]).powi(2)).unwrap();
    let reg = 1e-3;
    let s = solve_sinkhorn(&a, &a, &cost, reg, 100_000).unwrap();
    assert!(s.plan.cost <= reg * 30f64.ln());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn c_transform_pair_is_idempotent(seed in 0u64..10_000, n in 2usize..12, m in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, _, cost) = random_instance(&mut rng, n, m);
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let psi_c = c_transform(&psi, &cost);
        let psi_ccc = c_transform(&c_transform_back(&psi_c, &cost), &cost);
        for (u, v) in psi_c.iter().zip(&psi_ccc) {
            prop_assert!((u - v).abs() <= 1e-14);
        }
        // Feasibility holds bit-exactly.
        for i in 0..n {
            for j in 0..m {
                prop_assert!(psi[i] + psi_c[j] <= cost.get(i, j));
            }
        }
        // A c-transform is always c-concave.
        let back = c_transform_back(&psi_c, &cost);
        prop_assert!(is_c_concave(&back, &cost).residual <= 1e-14);
    }

    #[test]
    fn exact_plan_is_feasible_and_beats_product_plan(seed in 0u64..10_000, n in 1usize..15, m in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, cost) = random_instance(&mut rng, n, m);
        let sol = solve_exact(&a, &b, &cost).unwrap();
        prop_assert!(sol.plan.marginal_error(&a, &b) <= 1e-9);
        prop_assert!(sol.plan.entries.iter().all(|e| e.2 >= 0.0));
        let product: f64 = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| a[i] * b[j] * cost.get(i, j)).sum();
        prop_assert!(sol.plan.cost <= product + 1e-12);
        prop_assert!(sol.potential.max_violation(&cost) == 0.0);
        prop_assert!(sol.duality_gap <= 1e-7 * (1.0 + cost.max_abs()));
    }
}
