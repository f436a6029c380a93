use dfc_core::matio::{
    densify, load_triplets, load_triplets_with, materialize, save_triplets, save_triplets_with, Entry, LowRankEstimate,
    ObservedMatrix, TripletOptions,
};
use dfc_core::sampling::{extract_columns, extract_rows, partition_columns, sample_without_replacement};
use dfc_core::sketch::{column_project, pinv, truncated_svd, RankTolerance};
use dfc_core::solvers::{soft_threshold, svt};
use dfc_core::SeededRng;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dense(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    SeededRng::new(seed, 0).gaussian_matrix(rows, cols)
}

/// Singular values of `a` from the eigenvalues of the Gram matrix.
fn gram_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let g = if a.nrows() >= a.ncols() { a.transpose() * a } else { a * a.transpose() };
    let mut ev: Vec<f64> = g.symmetric_eigen().eigenvalues.iter().map(|x| x.max(0.0).sqrt()).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn sparse_obs() -> impl Strategy<Value = ObservedMatrix> {
    (1usize..12, 1usize..12).prop_flat_map(|(m, n)| {
        let cells = prop::collection::btree_map((0..m, 0..n), -1e6f64..1e6, 0..=(m * n).min(40));
        cells.prop_map(move |map| {
            let entries = map.into_iter().map(|((i, j), v)| Entry::new(i, j, v)).collect();
            ObservedMatrix::new(m, n, entries).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplets_roundtrip(obs in sparse_obs()) {
        let mut buf = Vec::new();
        save_triplets(&obs, &mut buf).unwrap();
        let back = load_triplets(buf.as_slice()).unwrap();
        prop_assert_eq!(back, obs);
    }

    #[test]
    fn one_based_triplets_roundtrip(obs in sparse_obs()) {
        let opts = TripletOptions { one_based: true };
        let mut buf = Vec::new();
        save_triplets_with(&obs, &mut buf, opts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        prop_assert!(text.lines().skip(1).all(|l| !l.starts_with("0 ") && !l.contains(" 0 ")));
        prop_assert_eq!(load_triplets_with(buf.as_slice(), opts).unwrap(), obs);
    }

    #[test]
    fn sample_is_distinct_and_in_range(n in 1usize..500, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let l = ((n as f64 * frac) as usize).max(1);
        let mut s = sample_without_replacement(n, l, &mut SeededRng::new(seed, 3)).unwrap();
        prop_assert_eq!(s.len(), l);
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), l);
        prop_assert!(s.iter().all(|&i| i < n));
    }

    #[test]
    fn partition_covers_and_balances(n in 1usize..300, t_raw in 1usize..40, seed in any::<u64>()) {
        let t = t_raw.min(n);
        let plan = partition_columns(n, t, &mut SeededRng::new(seed, 0)).unwrap();
        prop_assert_eq!(plan.t(), t);
        let mut all: Vec<usize> = plan.groups().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.groups().iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let again = partition_columns(n, t, &mut SeededRng::new(seed, 0)).unwrap();
        prop_assert_eq!(again.groups(), plan.groups());
    }

    #[test]
    fn blocks_reassemble_to_the_input(obs in sparse_obs(), t_raw in 1usize..6, seed in any::<u64>()) {
        let n = obs.ncols();
        let plan = partition_columns(n, t_raw.min(n), &mut SeededRng::new(seed, 0)).unwrap();
        let mut entries = Vec::new();
        for (g, cols) in plan.groups().iter().enumerate() {
            let block = extract_columns(&obs, cols).unwrap();
            for e in block.entries() {
                entries.push(Entry::new(e.row, plan.original_column(g, e.col), e.value));
            }
        }
        let back = ObservedMatrix::new(obs.nrows(), n, entries).unwrap();
        prop_assert_eq!(back, obs);
    }

    #[test]
    fn row_extraction_is_transposed_column_extraction(obs in sparse_obs(), seed in any::<u64>()) {
        let m = obs.nrows();
        let idx = sample_without_replacement(m, (m / 2).max(1), &mut SeededRng::new(seed, 1)).unwrap();
        let rows = extract_rows(&obs, &idx).unwrap();
        let cols = extract_columns(&obs.transpose(), &idx).unwrap();
        prop_assert_eq!(rows, cols.transpose());
    }

    #[test]
    fn soft_threshold_is_nonexpansive(m in 1usize..10, n in 1usize..10, tau in 0.0f64..3.0, seed in any::<u64>()) {
        let a = dense(m, n, seed);
        let b = dense(m, n, seed ^ 0x5555);
        let lhs = (soft_threshold(&a, tau) - soft_threshold(&b, tau)).norm();
        prop_assert!(lhs <= (a - b).norm() + 1e-12);
    }

    #[test]
    fn soft_threshold_closed_form(m in 1usize..8, n in 1usize..8, tau in 0.0f64..2.0, seed in any::<u64>()) {
        let a = dense(m, n, seed);
        let out = soft_threshold(&a, tau);
        for (x, y) in a.iter().zip(out.iter()) {
            prop_assert_eq!(*y, x.signum() * (x.abs() - tau).max(0.0));
        }
    }

    #[test]
    fn svt_shrinks_singular_values(m in 1usize..25, n in 1usize..25, frac in 0.0f64..1.2, seed in any::<u64>()) {
        let a = dense(m, n, seed);
        let sv = gram_singular_values(&a);
        let tau = frac * sv[0];
        let out = svt(&a, tau);
        let want: Vec<f64> = sv.iter().map(|s| (s - tau).max(0.0)).filter(|&s| s > 1e-9).collect();
        let got = gram_singular_values(&materialize(&out));
        for (i, w) in want.iter().enumerate() {
            prop_assert!((got[i] - w).abs() < 1e-8 * sv[0].max(1.0), "{} vs {}", got[i], w);
        }
        prop_assert!(got.iter().skip(want.len()).all(|&s| s < 1e-6));
    }

    #[test]
    fn pinv_moore_penrose(m in 1usize..50, n in 1usize..50, seed in any::<u64>()) {
        let a = dense(m, n, seed);
        let x = pinv(&a, RankTolerance::default());
        let scale = a.norm() * x.norm();
        let tol = 1e-8 * scale.max(1.0);
        prop_assert!((&a * &x * &a - &a).norm() <= tol * a.norm());
        prop_assert!((&x * &a * &x - &x).norm() <= tol * x.norm());
        let ax = &a * &x;
        let xa = &x * &a;
        prop_assert!((&ax - ax.transpose()).norm() <= tol);
        prop_assert!((&xa - xa.transpose()).norm() <= tol);
    }

    #[test]
    fn eckart_young(m in 2usize..20, n in 2usize..20, seed in any::<u64>()) {
        let a = dense(m, n, seed);
        let p = m.min(n);
        let k = 1 + (seed as usize % p);
        let f = truncated_svd(&a, k).unwrap();
        let err = (&a - f.reconstruct()).norm();
        let sv = gram_singular_values(&a);
        let tail = sv[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        prop_assert!((err - tail).abs() <= 1e-8 * a.norm());
        let mut rng = SeededRng::new(seed, 9);
        for _ in 0..3 {
            let cand = rng.gaussian_matrix(m, k) * rng.gaussian_matrix(k, n);
            prop_assert!(err <= (&a - cand).norm() + 1e-12);
        }
    }

    #[test]
    fn column_projection_is_idempotent(m in 3usize..20, n in 3usize..20, r in 1usize..4, seed in any::<u64>()) {
        let r = r.min(m).min(n);
        let mut rng = SeededRng::new(seed, 0);
        let full = rng.gaussian_matrix(m, n);
        let plan = partition_columns(n, 2.min(n), &mut rng).unwrap();
        let blocks: Vec<LowRankEstimate> =
            plan.groups().iter().map(|g| LowRankEstimate::from_dense(&full.select_columns(g))).collect();
        let basis = LowRankEstimate::from_dense(&rng.gaussian_matrix(m, r));
        let once = column_project(&basis, &blocks, &plan).unwrap();
        let reblocks: Vec<LowRankEstimate> = plan.groups().iter().map(|g| once.select_columns(g)).collect();
        let twice = column_project(&basis, &reblocks, &plan).unwrap();
        let d = (materialize(&twice) - materialize(&once)).norm();
        prop_assert!(d <= 1e-10 * full.norm());
    }

    #[test]
    fn densify_matches_entries(obs in sparse_obs()) {
        let d = densify(&obs);
        for e in obs.entries() {
            prop_assert_eq!(d[(e.row, e.col)], e.value);
        }
        prop_assert_eq!(d.iter().filter(|x| **x != 0.0).count(), obs.entries().iter().filter(|e| e.value != 0.0).count());
    }
}
