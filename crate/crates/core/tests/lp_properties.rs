//! Randomised checks of the simplex solver against a brute-force vertex
//! enumeration oracle, plus duality and Farkas-ray invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superhedge_core::lp::{
    check_solution, farkas_margin, solve_lp, LpProblem, LpStatus, PivotRule, Sense, SolverOptions,
};

/// Solve a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot_row = a[col].clone();
        for r in 0..n {
            if r != col {
                let f = a[r][col] / pivot_row[col];
                if f != 0.0 {
                    for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best objective over all vertices of `{A_eq x = b_eq, A_ub x <= b_ub, x >= 0}`,
/// or `None` when no vertex is feasible.
fn vertex_oracle(
    sense: Sense,
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
) -> Option<f64> {
    let n = c.len();
    // Candidate tight constraints: ub rows, then the bounds x_j >= 0.
    let mut cand: Vec<(Vec<f64>, f64)> = a_ub.iter().cloned().zip(b_ub.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cand.push((e, 0.0));
    }
    let need = n.checked_sub(a_eq.len())?;
    let mut best: Option<f64> = None;
    for subset in combinations(cand.len(), need) {
        let mut rows: Vec<Vec<f64>> = a_eq.to_vec();
        let mut rhs: Vec<f64> = b_eq.to_vec();
        for &s in &subset {
            rows.push(cand[s].0.clone());
            rhs.push(cand[s].1);
        }
        let Some(x) = solve_square(rows, rhs) else { continue };
        let tol = 1e-9;
        if x.iter().any(|v| *v < -tol) {
            continue;
        }
        if a_ub
            .iter()
            .zip(b_ub)
            .any(|(r, b)| r.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() > b + tol)
        {
            continue;
        }
        if a_eq
            .iter()
            .zip(b_eq)
            .any(|(r, b)| (r.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - b).abs() > tol)
        {
            continue;
        }
        let obj: f64 = c.iter().zip(&x).map(|(a, v)| a * v).sum();
        best = Some(match (best, sense) {
            (None, _) => obj,
            (Some(b), Sense::Maximize) => b.max(obj),
            (Some(b), Sense::Minimize) => b.min(obj),
        });
    }
    best
}

struct RandomLp {
    sense: Sense,
    c: Vec<f64>,
    a_eq: Vec<Vec<f64>>,
    b_eq: Vec<f64>,
    a_ub: Vec<Vec<f64>>,
    b_ub: Vec<f64>,
}

/// Bounded by construction: the first inequality row has strictly positive
/// coefficients, which together with `x >= 0` boxes the region.
fn random_bounded_lp(seed: u64) -> RandomLp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let n_eq = rng.gen_range(0..=m.min(n).min(2)).min(m - 1);
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    let mut a_ub = Vec::new();
    let mut b_ub = Vec::new();
    a_ub.push((0..n).map(|_| rng.gen_range(0.2..2.0)).collect::<Vec<f64>>());
    b_ub.push(rng.gen_range(1.0..10.0));
    for k in 1..m {
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let rhs = rng.gen_range(-3.0..6.0);
        if k <= n_eq {
            a_eq.push(row);
            b_eq.push(rhs);
        } else {
            a_ub.push(row);
            b_ub.push(rhs);
        }
    }
    let sense = if rng.gen_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
    let c = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    RandomLp { sense, c, a_eq, b_eq, a_ub, b_ub }
}

fn build(r: &RandomLp) -> LpProblem {
    LpProblem::from_dense(r.sense, r.c.clone(), &r.a_eq, &r.b_eq, &r.a_ub, &r.b_ub)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_vertex_enumeration(seed in any::<u64>()) {
        let r = random_bounded_lp(seed);
        let lp = build(&r);
        let oracle = vertex_oracle(r.sense, &r.c, &r.a_eq, &r.b_eq, &r.a_ub, &r.b_ub);
        for rule in [PivotRule::DantzigBlandFallback, PivotRule::Bland] {
            let opts = SolverOptions { pivot_rule: rule, ..SolverOptions::default() };
            let sol = solve_lp(&lp, &opts).unwrap();
            match oracle {
                Some(best) => {
                    prop_assert_eq!(sol.status, LpStatus::Optimal);
                    prop_assert!((sol.objective - best).abs() <= 1e-9 * (1.0 + best.abs()),
                        "solver {} vs oracle {}", sol.objective, best);
                }
                None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            }
        }
    }

    #[test]
    fn optimal_solutions_satisfy_strong_duality(seed in any::<u64>()) {
        let r = random_bounded_lp(seed);
        let lp = build(&r);
        let sol = solve_lp(&lp, &SolverOptions::default()).unwrap();
        if sol.status == LpStatus::Optimal {
            let d = check_solution(&lp, &sol);
            let scale = 1.0 + sol.objective.abs();
            prop_assert!(d.duality_mismatch <= 1e-8 * scale, "{:?}", d);
            prop_assert!(d.max_eq_residual <= 1e-9 * scale);
            prop_assert!(d.max_ineq_violation <= 1e-9 * scale);
            prop_assert!(d.max_bound_violation <= 1e-9);
            prop_assert!(d.max_dual_infeasibility <= 1e-8 * scale, "{:?}", d);
            prop_assert!(d.max_complementarity <= 1e-8 * scale, "{:?}", d);
        }
    }
}

#[test]
fn farkas_rays_certify_infeasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut infeasible = 0;
    for _ in 0..600 {
        let n = rng.gen_range(2..=20);
        let m = rng.gen_range(2..=12);
        let mut lp = LpProblem::new(Sense::Minimize, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        for _ in 0..m {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in 0..n {
                if rng.gen_bool(0.5) {
                    row.push((j, rng.gen_range(-3.0..3.0)));
                }
            }
            let rhs = rng.gen_range(-5.0..5.0);
            if rng.gen_bool(0.5) {
                lp.add_eq(row, rhs);
            } else {
                lp.add_ub(row, rhs);
            }
        }
        if rng.gen_bool(0.3) {
            lp.set_free(0);
        }
        let sol = solve_lp(&lp, &SolverOptions::default()).unwrap();
        if sol.status == LpStatus::Infeasible {
            infeasible += 1;
            let ray = sol.farkas_ray.as_ref().expect("ray present when infeasible");
            let (viol, ytb) = farkas_margin(&lp, ray);
            assert!(viol <= 1e-9, "ray violates sign conditions by {viol}");
            assert!(ytb > 1e-9, "ray does not separate: {ytb}");
        } else {
            assert!(sol.farkas_ray.is_none());
        }
    }
    assert!(infeasible >= 50, "only {infeasible} infeasible draws");
}
