use hedge_core::ensemble::{token_measures, StepDistributionSet};
use hedge_testkit::{epkl_double_loop, random_distribution};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_steps_against_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let m = rng.random_range(2..=5);
        let support = rng.random_range(1..=6);
        let members: Vec<Vec<f64>> = (0..m).map(|_| random_distribution(&mut rng, support)).collect();
        let set = StepDistributionSet::from_dense(members.clone()).unwrap();
        let t = token_measures(&set);
        assert!(t.mi >= -1e-9);
        assert!(t.rmi >= -1e-9);
        assert!((t.epkl - epkl_double_loop(&set.per_model)).abs() < 1e-10);
        assert!((t.epkl - epkl_double_loop(&members)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn identical_members(probs in proptest::collection::vec(0.01f64..1.0, 1..7), m in 2usize..6) {
        let t: f64 = probs.iter().sum();
        let p: Vec<f64> = probs.iter().map(|x| x / t).collect();
        let set = StepDistributionSet::from_dense(vec![p; m]).unwrap();
        let r = token_measures(&set);
        prop_assert!(r.mi.abs() < 1e-12);
        prop_assert!(r.epkl.abs() < 1e-12);
        prop_assert!(r.rmi.abs() < 1e-12);
    }

    #[test]
    fn sparse_members_are_finite(ids in proptest::collection::vec((0u32..8, 0.0f64..1.0), 1..5)) {
        let a: Vec<(u32, f64)> = ids.clone();
        let b: Vec<(u32, f64)> = ids.iter().map(|&(i, p)| (i + 1, 1.0 - p)).collect();
        if let Ok(set) = StepDistributionSet::<f64>::from_sparse(&[&a, &b]) {
            let r = token_measures(&set);
            prop_assert!(r.epkl.is_finite() && r.mi.is_finite());
            for p in &set.per_model {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
