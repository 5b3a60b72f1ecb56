use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use resunit::model::{
    generate_unit, rng_from_seed, sample, InputDistribution, NetworkGenSpec, ResidualUnit,
};
use resunit::numerics::{is_psd, Lu, Mat};
use resunit::solver::{
    analytic_center, build_slack_lp, layer1_qp, layer1_row_hinge, layer1_row_qp, layer2_lp,
    layer2_qp, layer2_row_hinge, layer2_row_qp, layer2_row_slack_lp, solve_lp, solve_qp,
    solve_row_qp, LpProblem, QpBackend, QpProblem, SolveStatus, SolverConfig, VarBlock,
    ZeroObjectivePoint,
};

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn qp(h: Mat, q: Vec<f64>, bounds: Vec<usize>) -> QpProblem {
    QpProblem {
        hessian: h,
        linear: Mat::col_vec(q),
        constant: 0.0,
        bounds,
        var_layout: vec![],
    }
}

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = rng_from_seed(seed);
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Exact minimizer of a strictly convex bound-constrained QP by enumerating active sets.
fn qp_oracle(h: &Mat, q: &[f64], bounds: &[usize]) -> Vec<f64> {
    let n = h.rows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << bounds.len()) {
        let fixed: Vec<usize> = bounds
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &i)| i)
            .collect();
        let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
        let hf = Mat::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let rhs: Vec<f64> = free.iter().map(|&i| -q[i]).collect();
        let Ok(lu) = Lu::new(&hf) else { continue };
        let sol = lu.solve(&rhs);
        let mut x = vec![0.0; n];
        for (a, &i) in free.iter().enumerate() {
            x[i] = sol[a];
        }
        if bounds.iter().any(|&i| x[i] < -1e-12) {
            continue;
        }
        let hx = h.mul_vec(&x).unwrap();
        let f = 0.5 * resunit::numerics::dot(&x, &hx) + resunit::numerics::dot(q, &x);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.expect("some active set is feasible").1
}

/// Exact LP optimum over a bounded 2-variable polygon by enumerating vertices.
fn lp2_oracle(g: &Mat, r: &[f64], c: &[f64]) -> Option<f64> {
    let m = g.rows();
    let mut best: Option<f64> = None;
    for i in 0..m {
        for j in (i + 1)..m {
            let a = Mat::from_rows(&[g.row(i).to_vec(), g.row(j).to_vec()]).unwrap();
            let Ok(lu) = Lu::new(&a) else { continue };
            let v = lu.solve(&[r[i], r[j]]);
            let feasible = (0..m).all(|k| resunit::numerics::dot(g.row(k), &v) >= r[k] - 1e-9);
            if feasible {
                let f = c[0] * v[0] + c[1] * v[1];
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
        }
    }
    best
}

#[test]
fn qp_scalar_bound_example() {
    let p = qp(Mat::from_rows(&[[1.0]]).unwrap(), vec![0.0], vec![0]);
    let rep = solve_qp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.point[(0, 0)].abs() < 1e-10);
    assert!(rep.objective_value.abs() < 1e-12);
}

#[test]
fn qp_flat_optimum_example() {
    // ½(ξ + 1 − c)² over (c free, ξ ≥ 0): any point with ξ + 1 = c.
    let h = Mat::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
    let p = QpProblem {
        hessian: h,
        linear: Mat::col_vec(vec![-1.0, 1.0]),
        constant: 0.5,
        bounds: vec![1],
        var_layout: vec![],
    };
    let rep = solve_qp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    let (c, xi) = (rep.point[(0, 0)], rep.point[(1, 0)]);
    assert!(xi >= -1e-8);
    assert!((xi + 1.0 - c).abs() < 1e-6);
    assert!(rep.objective_value < 1e-10);
}

#[test]
fn qp_layer2_small_noiseless_example() {
    // [[1,1],[1,1]] is rank one, so the validating constructor refuses it.
    assert!(ResidualUnit::new(
        Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap(),
        Mat::identity(2)
    )
    .is_err());
    let unit = ResidualUnit {
        a: Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap(),
        b: Mat::identity(2),
    };
    let s = sample(&unit, &InputDistribution::mixture(2), 6, 0.0, 3).unwrap();
    let p = layer2_qp(&s.xs, &s.ys).unwrap();
    assert_eq!(p.num_vars(), 2 * 2 + 6 * 2);
    assert!(is_psd(&p.hessian, 1e-8).unwrap());
    let rep = solve_qp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(
        rep.objective_value <= 1e-10,
        "objective {}",
        rep.objective_value
    );
    let c = Mat::from_vec(2, 2, rep.point.data()[..4].to_vec()).unwrap();
    for i in 0..6 {
        let cy = c.mul_vec(s.y(i)).unwrap();
        for j in 0..2 {
            assert!(cy[j] - s.x(i)[j] >= -1e-8);
        }
    }
}

#[test]
fn qp_matches_active_set_oracle_on_random_problems() {
    for seed in 0..40 {
        let n = 2 + (seed as usize % 4);
        let t = random_mat(n + 1, n, seed);
        let mut h = t.transpose().matmul(&t).unwrap();
        for i in 0..n {
            h[(i, i)] += 0.1;
        }
        let q: Vec<f64> = random_mat(n, 1, seed + 1000).into_data();
        let bounds: Vec<usize> = (0..n).filter(|i| (seed as usize + i) % 3 != 0).collect();
        let p = qp(h.clone(), q.clone(), bounds.clone());
        let rep = solve_qp(&p, &cfg()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal, "seed {seed}");
        let oracle = qp_oracle(&h, &q, &bounds);
        for i in 0..n {
            assert!(
                (rep.point[(i, 0)] - oracle[i]).abs() < 1e-6,
                "seed {seed}: {:?} vs {oracle:?}",
                rep.point
            );
        }
    }
}

#[test]
fn reduced_row_qp_matches_admm_on_layer_rows() {
    for seed in 0..12 {
        let d = 2 + (seed as usize % 3);
        let unit = generate_unit(&NetworkGenSpec::standard(d, d + 1, seed)).unwrap();
        let s = sample(&unit, &InputDistribution::mixture(d), 40, 0.3, seed + 100).unwrap();
        let hs = random_mat(40, d, seed + 200).map(f64::abs);
        for j in 0..d {
            let cases = [
                (
                    layer2_row_hinge(&s.xs, &s.ys, j).unwrap(),
                    layer2_row_qp(&s.xs, &s.ys, j).unwrap(),
                ),
                (
                    layer1_row_hinge(&s.xs, &hs, j).unwrap(),
                    layer1_row_qp(&s.xs, &hs, j).unwrap(),
                ),
            ];
            for ((feat, target), full) in cases {
                let red = solve_row_qp(&feat, &target, QpBackend::Reduced, &cfg()).unwrap();
                let admm = solve_qp(&full, &cfg()).unwrap();
                assert_eq!(red.status, SolveStatus::Optimal);
                assert_eq!(admm.status, SolveStatus::Optimal);
                // The reduced point is a point of the full problem with the same value.
                let v = full.objective(red.point.data());
                assert!((v - red.objective_value).abs() <= 1e-12 * (1.0 + v.abs()));
                assert!(red.point.data()[feat.cols()..].iter().all(|&x| x >= 0.0));
                let gap = red.objective_value - admm.objective_value;
                assert!(
                    gap.abs() <= 1e-7 * (1.0 + admm.objective_value.abs()),
                    "seed {seed} row {j}: {gap}"
                );
                assert!(red.kkt_residual < 1e-9);
            }
        }
    }
}

#[test]
fn reduced_row_qp_zero_optimum() {
    // Targets reachable from below: some w has f·w ≤ t everywhere.
    let feat = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let rep = solve_row_qp(&feat, &[1.0, -1.0, 0.5], QpBackend::Reduced, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.objective_value < 1e-20);
}

#[test]
fn qp_reports_iteration_limit() {
    let t = random_mat(6, 5, 77);
    let h = t.transpose().matmul(&t).unwrap();
    let p = qp(h, random_mat(5, 1, 78).into_data(), vec![0, 1, 2]);
    let c = SolverConfig {
        max_iter: 3,
        polish: false,
        ..cfg()
    };
    let rep = solve_qp(&p, &c).unwrap();
    assert_eq!(rep.status, SolveStatus::IterationLimit);
}

#[test]
fn qp_structured_and_dense_paths_agree() {
    let unit = generate_unit(&NetworkGenSpec::standard(3, 3, 5)).unwrap();
    let s = sample(&unit, &InputDistribution::mixture(3), 40, 0.2, 6).unwrap();
    let structured = layer2_row_qp(&s.xs, &s.ys, 1).unwrap();
    let dense = QpProblem {
        var_layout: vec![],
        ..structured.clone()
    };
    let a = solve_qp(&structured, &cfg()).unwrap();
    let b = solve_qp(&dense, &cfg()).unwrap();
    assert!(a.is_optimal() && b.is_optimal());
    assert!((a.objective_value - b.objective_value).abs() < 1e-10);
    for k in 0..3 {
        assert!((a.point[(k, 0)] - b.point[(k, 0)]).abs() < 1e-6);
    }
}

#[test]
fn qp_gradient_matches_finite_differences() {
    let unit = generate_unit(&NetworkGenSpec::standard(3, 3, 8)).unwrap();
    let s = sample(&unit, &InputDistribution::mixture(3), 12, 0.0, 9).unwrap();
    let hs = Mat::from_fn(12, 3, |i, j| unit.hidden(s.x(i))[j]);
    let p = layer1_qp(&s.xs, &hs).unwrap();
    let n = p.num_vars();
    let v: Vec<f64> = random_mat(n, 1, 10)
        .into_data()
        .iter()
        .map(|x| x.abs())
        .collect();
    let hv = p.hessian.mul_vec(&v).unwrap();
    let grad: Vec<f64> = hv.iter().zip(p.linear.data()).map(|(a, b)| a + b).collect();
    let step = 1e-5;
    for k in 0..n {
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[k] += step;
        vm[k] -= step;
        let fd = (p.objective(&vp) - p.objective(&vm)) / (2.0 * step);
        assert!(
            (fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1e-3),
            "var {k}: {fd} vs {}",
            grad[k]
        );
    }
    // The objective is the literal layer-1 loss.
    let a = Mat::from_vec(3, 3, v[..9].to_vec()).unwrap();
    let mut direct = 0.0;
    for i in 0..12 {
        let ax = a.mul_vec(s.x(i)).unwrap();
        for j in 0..3 {
            let r = v[9 + i * 3 + j] + ax[j] - hs[(i, j)];
            direct += r * r;
        }
    }
    direct /= 24.0;
    assert!((direct - p.objective(&v)).abs() < 1e-10);
}

#[test]
fn lp_interval_feasibility_example() {
    let g = Mat::from_rows(&[[1.0], [-1.0]]).unwrap();
    let p = LpProblem::new(vec![0.0], g, vec![1.0, -3.0], vec![]).unwrap();
    for point in [
        ZeroObjectivePoint::Vertex,
        ZeroObjectivePoint::AnalyticCenter,
    ] {
        let c = SolverConfig {
            zero_objective_point: point,
            ..cfg()
        };
        let rep = solve_lp(&p, &c).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        let v = rep.point[(0, 0)];
        assert!((1.0..=3.0).contains(&v), "{v}");
        assert_eq!(rep.max_infeasibility, 0.0);
        if point == ZeroObjectivePoint::AnalyticCenter {
            assert!((v - 2.0).abs() < 1e-8);
        }
    }
}

#[test]
fn lp_contradiction_example_has_farkas_ray() {
    let g = Mat::from_rows(&[[1.0], [-1.0]]).unwrap();
    let p = LpProblem::new(vec![0.0], g, vec![1.0, 0.0], vec![]).unwrap();
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Infeasible);
    let y = rep.farkas.expect("certificate");
    assert!(p.is_farkas_certificate(y.data(), 1e-9));
}

#[test]
fn lp_unbounded_is_reported() {
    let g = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let p = LpProblem::new(vec![-1.0, 0.0], g, vec![0.0, 0.0], vec![]).unwrap();
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Unbounded);
}

#[test]
fn lp_matches_vertex_enumeration() {
    for seed in 0..60u64 {
        let mut rng = rng_from_seed(seed);
        let m = 4 + (seed as usize % 6);
        // Constraints around a box keep the polygon bounded.
        let mut rows: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let mut rhs = vec![-3.0, -3.0, -3.0, -3.0];
        for _ in 0..m {
            rows.push(vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]);
            rhs.push(-rng.gen::<f64>());
        }
        let g = Mat::from_rows(&rows).unwrap();
        let c = vec![rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let p = LpProblem::new(c.clone(), g.clone(), rhs.clone(), vec![]).unwrap();
        let rep = solve_lp(&p, &cfg()).unwrap();
        let oracle = lp2_oracle(&g, &rhs, &c).expect("origin is feasible");
        assert_eq!(rep.status, SolveStatus::Optimal, "seed {seed}");
        assert!(
            (rep.objective_value - oracle).abs() < 1e-8,
            "seed {seed}: {} vs {oracle}",
            rep.objective_value
        );
        assert!(rep.max_infeasibility <= 1e-9);
    }
}

#[test]
fn lp_nonnegative_variables_are_respected() {
    // min v0 + v1 s.t. v0 + 2 v1 ≥ 2, v ≥ 0  →  v = (0, 1), value 1.
    let g = Mat::from_rows(&[[1.0, 2.0]]).unwrap();
    let p = LpProblem::new(vec![1.0, 1.0], g, vec![2.0], vec![0, 1]).unwrap();
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!((rep.objective_value - 1.0).abs() < 1e-10);
    assert!(rep.point[(0, 0)].abs() < 1e-10 && (rep.point[(1, 0)] - 1.0).abs() < 1e-10);
}

#[test]
fn slack_lp_single_constraint_example() {
    let xs = Mat::from_rows(&[[-1.0]]).unwrap();
    let ys = Mat::from_rows(&[[-1.0]]).unwrap();
    let p = build_slack_lp(&xs, &ys, 1, 1).unwrap();
    assert_eq!(p.num_vars(), 2);
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.objective_value.abs() < 1e-12);
    assert!(rep.point[(1, 0)].abs() < 1e-12);
    // c·(−1) + 1 ≥ 0 with zero slack means c ≤ 1.
    assert!(rep.point[(0, 0)] <= 1.0 + 1e-12);
}

#[test]
fn slack_lp_variable_count_and_zero_noise_objective() {
    let unit = generate_unit(&NetworkGenSpec::standard(3, 4, 11)).unwrap();
    let s = sample(&unit, &InputDistribution::mixture(3), 25, 0.0, 12).unwrap();
    let p = build_slack_lp(&s.xs, &s.ys, 3, 4).unwrap();
    assert_eq!(p.num_vars(), 3 * 4 + 25 * 3);
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.objective_value.abs() < 1e-9);
    assert!(rep.point.data()[12..].iter().all(|z| z.abs() < 1e-9));
}

#[test]
fn slack_objective_is_monotone_in_sample_prefixes() {
    let unit = generate_unit(&NetworkGenSpec::standard(3, 3, 13)).unwrap();
    let s = sample(&unit, &InputDistribution::mixture(3), 60, 0.3, 14).unwrap();
    let mut prev = 0.0;
    for k in [10, 20, 40, 60] {
        let pre = s.prefix(k);
        let p = layer2_row_slack_lp(&pre.xs, &pre.ys, 0).unwrap();
        let rep = solve_lp(&p, &cfg()).unwrap();
        // The builder averages over n; compare totals.
        let total = rep.objective_value * k as f64;
        assert!(total >= prev - 1e-9, "prefix {k}: {total} < {prev}");
        prev = total;
    }
}

#[test]
fn full_and_row_lp_agree_on_feasibility() {
    let unit = generate_unit(&NetworkGenSpec::standard(2, 2, 15)).unwrap();
    let s = sample(&unit, &InputDistribution::mixture(2), 30, 0.0, 16).unwrap();
    let p = layer2_lp(&s.xs, &s.ys).unwrap();
    let rep = solve_lp(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(rep.max_infeasibility <= 1e-9);
}

#[test]
fn analytic_center_of_a_box() {
    let g = Mat::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
    let p = LpProblem::new(vec![0.0, 0.0], g, vec![0.0, -2.0, 1.0, -5.0], vec![]).unwrap();
    let rep = analytic_center(&p, &cfg()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!((rep.point[(0, 0)] - 1.0).abs() < 1e-7);
    assert!((rep.point[(1, 0)] - 3.0).abs() < 1e-7);
}

#[test]
fn problems_round_trip_through_json() {
    let xs = Mat::from_rows(&[[-1.0], [2.0]]).unwrap();
    let ys = Mat::from_rows(&[[-1.0], [4.0]]).unwrap();
    let lp = build_slack_lp(&xs, &ys, 1, 1).unwrap();
    let s = serde_json::to_string(&lp).unwrap();
    assert_eq!(serde_json::from_str::<LpProblem>(&s).unwrap(), lp);
    let q = layer2_qp(&xs, &ys).unwrap();
    let s = serde_json::to_string(&q).unwrap();
    let back: QpProblem = serde_json::from_str(&s).unwrap();
    assert_eq!(back, q);
    assert_eq!(
        back.var_layout[0],
        VarBlock {
            name: "C".into(),
            start: 0,
            len: 1
        }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contradictory_systems_are_detected(seed in 0u64..100_000, n in 1usize..5, m in 1usize..6) {
        // Take a feasible system, then add a constraint implied-violated by a combination.
        let g = random_mat(m, n, seed);
        let w: Vec<f64> = random_mat(m, 1, seed + 1).into_data().iter().map(|v| v.abs() + 0.1).collect();
        let r: Vec<f64> = random_mat(m, 1, seed + 2).into_data();
        // Row −wᵀG with right-hand side > −wᵀr contradicts the others.
        let comb = g.tmul_vec(&w).unwrap();
        let mut rows = g.to_rows();
        rows.push(comb.iter().map(|v| -v).collect());
        let mut rhs = r.clone();
        rhs.push(-resunit::numerics::dot(&w, &r) + 0.5);
        let p = LpProblem::new(vec![0.0; n], Mat::from_rows(&rows).unwrap(), rhs, vec![]).unwrap();
        let rep = solve_lp(&p, &SolverConfig::default()).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Infeasible);
        prop_assert!(p.is_farkas_certificate(rep.farkas.unwrap().data(), 1e-8));
    }

    #[test]
    fn qp_solutions_are_complementary(seed in 0u64..100_000, n in 1usize..7) {
        let t = random_mat(n, n, seed);
        let h = t.transpose().matmul(&t).unwrap();
        // Linear term in the range of H keeps the problem bounded below.
        let q = h.mul_vec(&random_mat(n, 1, seed + 3).into_data()).unwrap();
        let bounds: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let rep = solve_qp(&qp(h, q, bounds.clone()), &SolverConfig::default()).unwrap();
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        let dual = rep.dual.unwrap();
        for &i in &bounds {
            prop_assert!((rep.point[(i, 0)] * dual[(i, 0)]).abs() <= 1e-6);
        }
    }
}
