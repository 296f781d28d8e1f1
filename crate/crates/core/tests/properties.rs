use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use shufflebn::dataset::{bn_batch, normalize_gd, normalize_rr_full, normalize_ss, BatchPlan, Dataset};
use shufflebn::model::{check_gradient_identity, ModelParams};
use shufflebn::optima::{normalized_distance, optimum};
use shufflebn::rng;
use shufflebn::separability::{decompose, max_margin, SepKind, DECOMP_TOL};
use shufflebn::Error;

fn mat(d: usize, q: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-4i32..=4, d * q).prop_map(move |v| DMatrix::from_iterator(d, q, v.into_iter().map(f64::from)))
}

fn points() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (2usize..=3, 3usize..=9).prop_flat_map(|(d, q)| {
        (mat(d, q), prop::collection::vec(prop::bool::ANY, q))
            .prop_map(|(x, s)| (x, s.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect()))
    })
}

fn gauss(d: usize, q: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, d * q).prop_map(move |v| DMatrix::from_vec(d, q, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decomposition_is_scale_invariant_and_certified((x, y) in points(), c in prop::sample::select(vec![1e-3, 0.5, 7.0, 1e4])) {
        let base = match decompose(&x, &y, DECOMP_TOL) {
            Err(Error::NumericallyIllConditioned(_)) => return Ok(()),
            r => r.unwrap(),
        };
        prop_assert!(base.certifies(&x, &y));
        prop_assert_eq!(base.ls_indices.len() + base.sc_indices.len(), y.len());
        let scaled = decompose(&(&x * c), &y, DECOMP_TOL).unwrap();
        prop_assert_eq!(&scaled.ls_indices, &base.ls_indices);
        prop_assert_eq!(scaled.kind, base.kind);
    }

    #[test]
    fn flipping_all_labels_keeps_the_split((x, y) in points()) {
        let Ok(a) = decompose(&x, &y, DECOMP_TOL) else { return Ok(()) };
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let b = decompose(&x, &neg, DECOMP_TOL).unwrap();
        prop_assert_eq!(a.ls_indices, b.ls_indices);
    }

    #[test]
    fn max_margin_separates_ls_data((x, y) in points()) {
        let Ok(dec) = decompose(&x, &y, DECOMP_TOL) else { return Ok(()) };
        if dec.kind != SepKind::Ls {
            return Ok(());
        }
        let mm = max_margin(&x, &y).unwrap();
        prop_assert!((mm.u.norm() - 1.0).abs() < 1e-9);
        let least = (0..y.len()).map(|i| y[i] * mm.u.dot(&x.column(i))).fold(f64::INFINITY, f64::min);
        prop_assert!(mm.margin > 0.0);
        prop_assert!((least - mm.margin).abs() < 1e-9);
    }

    #[test]
    fn bn_rows_are_standardized(x in gauss(3, 6)) {
        let z = bn_batch(&x, 0.0).unwrap();
        for r in 0..3 {
            let row = z.row(r);
            prop_assert!(row.mean().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 6.0;
            prop_assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bn_ignores_per_coordinate_affine_maps(x in gauss(2, 5), a in 0.1f64..10.0, s in -5.0f64..5.0) {
        let z = bn_batch(&x, 0.0).unwrap();
        let mut t = x.clone();
        t.row_mut(0).iter_mut().for_each(|v| *v = a * *v + s);
        let zt = bn_batch(&t, 0.0).unwrap();
        prop_assert!((z - zt).amax() < 1e-9);
    }

    #[test]
    fn random_plans_are_permutations(n_b in 1usize..8, b in 2usize..6, seed in any::<u64>()) {
        let n = n_b * b;
        let plan = BatchPlan::random(n, b, &mut rng::stream(seed, 0)).unwrap();
        let mut p = plan.perm().to_vec();
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(plan.num_batches(), n_b);
    }

    #[test]
    fn gradient_identity_holds(w in gauss(2, 3), g in prop::collection::vec(-2.0f64..2.0, 3), x in gauss(3, 4), y in gauss(2, 4)) {
        let params = ModelParams::new(w, DVector::from_vec(g)).unwrap();
        let xbar = bn_batch(&x, 1e-5).unwrap();
        prop_assert!(check_gradient_identity(&params, &xbar, &y).unwrap() < 1e-9);
    }

    #[test]
    fn gd_and_single_batch_ss_coincide(x in gauss(2, 6), y in gauss(1, 6), seed in any::<u64>()) {
        let ds = Dataset::regression(x, y).unwrap();
        let plan = BatchPlan::random(6, 6, &mut rng::stream(seed, 1)).unwrap();
        let gd = optimum(&normalize_gd(&ds, 0.0).unwrap());
        let ss = optimum(&normalize_ss(&ds, &plan, 0.0).unwrap());
        prop_assert!(normalized_distance(&ss.m, &gd.m).unwrap() < 1e-8);
    }
}

#[test]
fn rr_full_has_every_batch_once() {
    let x = DMatrix::from_fn(2, 6, |i, j| ((i + 1) * (j * j + 1)) as f64);
    let y = DMatrix::from_fn(1, 6, |_, j| j as f64);
    let ds = Dataset::regression(x, y).unwrap();
    let nds = normalize_rr_full(&ds, 3, 0.0).unwrap();
    assert_eq!(nds.boundaries().len(), 20);
    assert_eq!(nds.q(), 60);
}
