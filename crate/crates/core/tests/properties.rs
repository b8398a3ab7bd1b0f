use proptest::prelude::*;

use qsd_core::montecarlo::Bins;
use qsd_core::spectral::{
    doob_transform, principal_eigenpair, qsd, rayleigh_quotient, semigroup_apply,
    survival_probability,
};
use qsd_core::stats::{chi_square_test, tv_from_counts};
use qsd_core::sweep::random_reversible_generator;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ground_state_is_positive_and_minimizes(n in 1usize..24, seed in any::<u64>()) {
        let g = random_reversible_generator(n, seed);
        let eig = principal_eigenpair(&g).unwrap();
        prop_assert!(eig.lambda0 > 0.0);
        prop_assert!(eig.phi0.iter().all(|&p| p > 0.0));
        let norm: f64 = eig.phi0.iter().zip(g.m()).map(|(p, m)| p * p * m).sum();
        prop_assert!((norm - 1.0).abs() < 1e-10);
        // any other positive test function has a larger Rayleigh quotient
        let flat = vec![1.0; n];
        prop_assert!(rayleigh_quotient(&g, &flat) >= eig.lambda0 - 1e-12);
    }

    #[test]
    fn qsd_is_a_probability_vector(n in 1usize..24, seed in any::<u64>()) {
        let g = random_reversible_generator(n, seed);
        let nu = qsd(&g).unwrap();
        prop_assert!(nu.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!((nu.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survival_from_qsd_is_exponential(n in 2usize..16, seed in any::<u64>(), t in 0.0f64..5.0) {
        let g = random_reversible_generator(n, seed);
        let l0 = principal_eigenpair(&g).unwrap().lambda0;
        let nu = qsd(&g).unwrap();
        let s = survival_probability(&g, nu.as_slice(), t).unwrap();
        prop_assert!((s - (-l0 * t).exp()).abs() < 1e-10);
    }

    #[test]
    fn semigroup_is_sub_markovian(n in 2usize..16, seed in any::<u64>(), t in 0.0f64..10.0) {
        let g = random_reversible_generator(n, seed);
        let p = semigroup_apply(&g, t, &vec![1.0; n]).unwrap();
        prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
    }

    #[test]
    fn doob_generator_is_conservative(n in 2usize..16, seed in any::<u64>()) {
        let g = random_reversible_generator(n, seed);
        let eig = principal_eigenpair(&g).unwrap();
        let dg = doob_transform(&g, &eig).unwrap();
        prop_assert!(dg.max_row_sum() <= 1e-12 * (1.0 + g.scale()));
        prop_assert!(dg.detailed_balance_defect() <= 1e-12 * (1.0 + g.scale()));
    }

    #[test]
    fn projection_preserves_mass(
        weights in prop::collection::vec(0.0f64..1.0, 1..30),
        k in 1usize..15,
    ) {
        let n = weights.len();
        let cells: Vec<f64> = (0..=n).map(|i| (i as f64).sqrt()).collect();
        let bins = Bins::uniform(0.0, cells[n], k).unwrap();
        let total: f64 = weights.iter().sum();
        let projected: f64 = bins.project(&cells, &weights).iter().sum();
        prop_assert!((projected - total).abs() < 1e-12 * (1.0 + total));
    }

    #[test]
    fn goodness_of_fit_outputs_are_in_range(counts in prop::collection::vec(0u64..200, 2..12)) {
        prop_assume!(counts.iter().sum::<u64>() >= 20);
        let k = counts.len();
        let probs = vec![1.0 / k as f64; k];
        let tv = tv_from_counts(&counts, &probs);
        prop_assert!((0.0..=1.0).contains(&tv));
        if let Ok(t) = chi_square_test(&counts, &probs) {
            prop_assert!(t.statistic >= 0.0);
            prop_assert!((0.0..=1.0).contains(&t.p_value));
        }
    }
}
