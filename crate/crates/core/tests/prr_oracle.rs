use hedge_core::benchmark::{pr_curve, prr};
use hedge_core::Error;
use hedge_testkit::{brute_force_area, brute_force_pr_curve, brute_force_prr, random_instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn three_point_case_matches_enumeration() {
    let q = [1.0, 0.0, 0.5];
    let u = [0.5, 0.2, 0.9];
    let c = pr_curve(&q, &u).unwrap();
    assert_eq!(c.mean_quality, brute_force_pr_curve(&q, &u));
    assert!((c.auc_vs_random - brute_force_area(&q, &c.mean_quality)).abs() < 1e-15);
    assert_eq!(prr(&q, &u).unwrap(), brute_force_prr(&q, &u));
    assert!((prr(&q, &u).unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn curve_grid_shape() {
    let c = pr_curve(&[0.1, 0.9, 0.4, 0.4, 0.7], &[3.0, 1.0, 2.0, 2.0, 0.5]).unwrap();
    assert_eq!(c.rejection_rates.len(), 6);
    assert_eq!(c.mean_quality.len(), 6);
    assert!(c.rejection_rates.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(c.rejection_rates[5], 1.0);
    assert_eq!(c.mean_quality[5], c.mean_quality[4]);
}

#[test]
fn random_instances_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rand::Rng::random_range(&mut rng, 2..=14);
        let (q, u) = random_instance(&mut rng, n);
        let c = pr_curve(&q, &u).unwrap();
        let oracle = brute_force_pr_curve(&q, &u);
        for (a, b) in c.mean_quality.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{q:?} {u:?}");
        }
        match prr(&q, &u) {
            Ok(v) => assert!((v - brute_force_prr(&q, &u)).abs() < 1e-9),
            Err(Error::UndefinedPrr) => assert!(q.iter().all(|&x| x == q[0])),
            Err(e) => panic!("{e}"),
        }
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u8..5, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 4.0).collect()),
            proptest::collection::vec(-4i8..4, n).prop_map(|v| v.into_iter().map(|x| x as f64 * 0.5).collect()),
        )
    })
}

proptest! {
    #[test]
    fn prr_at_most_one((q, u) in instance()) {
        if let Ok(v) = prr(&q, &u) {
            prop_assert!(v <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn oracle_and_constant((q, _u) in instance()) {
        let neg: Vec<f64> = q.iter().map(|x| -x).collect();
        match prr(&q, &neg) {
            Ok(v) => {
                prop_assert!((v - 1.0).abs() < 1e-9);
                prop_assert!(prr(&q, &vec![0.3; q.len()]).unwrap().abs() < 1e-9);
            }
            Err(Error::UndefinedPrr) => prop_assert!(q.iter().all(|&x| x == q[0])),
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn rank_invariance((q, u) in instance(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let t: Vec<f64> = u.iter().map(|x| (a * x + b).exp() + x.powi(3)).collect();
        if let Ok(v) = prr(&q, &u) {
            prop_assert_eq!(v, prr(&q, &t).unwrap());
        }
    }

    #[test]
    fn permutation_invariance((q, u) in instance(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..q.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let qp: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
        let up: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
        if let Ok(v) = prr(&q, &u) {
            prop_assert!((v - prr(&qp, &up).unwrap()).abs() < 1e-12);
        }
    }
}
