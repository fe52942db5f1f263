use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mptp::action::{action_hessian, action_value, noise_action, PathState};
use mptp::bifurcation::BranchPoint;
use mptp::config::SigmaSpec;
use mptp::hamiltonian::{
    discretized_form, propagate, spectral_flow_s, HamiltonianConfig, Integrator, SturmCoefficients,
};
use mptp::index::{morse_index_fixed, morse_index_free};
use mptp::io::{parse_branch_csv, path_csv, PathTable};
use mptp::linalg::{dense_inertia, BlockTridiag};
use mptp::selftest::{derivative_corpus, derivative_errors, random_path};

fn corpus_path(
    which: usize,
    seed: u64,
    intervals: usize,
) -> (PathState, mptp::potential::PotentialModel) {
    let mut corpus = derivative_corpus();
    let (_, model, xm, xp) = corpus.swap_remove(which % corpus.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_path(&mut rng, &xm, &xp, intervals), model)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivatives_match_finite_differences(which in 0usize..6, seed in any::<u64>(), n in 3usize..12) {
        let (p, m) = corpus_path(which, seed, n);
        let e = derivative_errors(&p, &m);
        prop_assert!(e.gradient <= 1e-6, "gradient {}", e.gradient);
        prop_assert!(e.hessian <= 1e-5, "hessian {}", e.hessian);
    }

    #[test]
    fn action_is_affine_in_sigma(which in 0usize..6, seed in any::<u64>(), s0 in 0.0f64..1.0, s1 in 0.0f64..1.0) {
        let (p, m) = corpus_path(which, seed, 8);
        let a0 = action_value(&p.with_sigma(s0), &m);
        let a1 = action_value(&p.with_sigma(s1), &m);
        let slope = noise_action(&p, &m);
        prop_assert!((a1 - a0 - (s1 - s0) * slope).abs() <= 1e-10 * (1.0 + a0.abs() + a1.abs()));
    }

    #[test]
    fn block_inertia_matches_dense(which in 0usize..6, seed in any::<u64>(), n in 3usize..16, shift in -5.0f64..5.0) {
        let (p, m) = corpus_path(which, seed, n);
        let a = action_hessian(&p, &m, 0.0).a.shifted(shift);
        let dense = dense_inertia(&a.to_dense(), 1e-9 * a.norm_inf());
        let block = a.inertia(1e-9 * a.norm_inf());
        prop_assert_eq!(block.negative, dense.negative);
    }

    #[test]
    fn bordering_adds_at_most_one_negative_direction(which in 0usize..6, seed in any::<u64>(), n in 3usize..16) {
        let (p, m) = corpus_path(which, seed, n);
        let fixed = morse_index_fixed(&p, &m, 1e-10).index;
        let free = morse_index_free(&p, &m, 1e-10).index;
        prop_assert!(free == fixed || free == fixed + 1, "fixed {} free {}", fixed, free);
    }

    #[test]
    fn path_csv_round_trips(which in 0usize..6, seed in any::<u64>(), n in 2usize..30) {
        let (p, _) = corpus_path(which, seed, n);
        let back = PathTable::parse(&path_csv(&p).unwrap()).unwrap().to_path(p.sigma(), p.energy_offset()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn branch_csv_round_trips(rows in proptest::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 0..8)) {
        let pts: Vec<BranchPoint> = rows
            .into_iter()
            .filter(|(a, b, c)| a.is_finite() && b.is_finite() && c.is_finite())
            .map(|(sigma, s, slope)| BranchPoint { sigma, s, slope })
            .collect();
        let text = mptp::io::branch_csv(&pts).unwrap();
        prop_assert_eq!(parse_branch_csv(&text).unwrap(), pts);
    }

    #[test]
    fn constant_propagation_is_symplectic(
        p in 0.2f64..3.0, q in -2.0f64..2.0, r in -40.0f64..10.0, t in 0.2f64..2.0, midpoint in any::<bool>()
    ) {
        let c = SturmCoefficients::constant(
            DMatrix::from_element(1, 1, p),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
            t,
        ).unwrap();
        let integ = if midpoint { Integrator::Midpoint } else { Integrator::Gauss4 };
        let phi = propagate(&c, 1.0, 400, integ).unwrap();
        prop_assert!(phi.max_symplectic_defect() <= 1e-8);
    }

    #[test]
    fn conjugate_count_equals_discrete_index(omega in 0.5f64..12.0) {
        // crossings of y'' = -ω² y on [0, 1] sit at s = jπ/ω
        let near_end = (omega / PI - (omega / PI).round()).abs() < 1e-3;
        prop_assume!(!near_end);
        let c = SturmCoefficients::scalar(-omega * omega, 1.0).unwrap();
        let sf = spectral_flow_s(&c, &HamiltonianConfig::default()).unwrap();
        let count: usize = sf.interior.iter().map(|x| x.kernel_dim).sum();
        prop_assert_eq!(count, (omega / PI).floor() as usize);
        prop_assert_eq!(discretized_form(&c, 800).inertia(0.0).negative, count);
    }

    #[test]
    fn sigma_grid_is_increasing_with_exact_ends(start in 0.0f64..1.0, width in 1e-3f64..2.0, samples in 1usize..40) {
        let g = SigmaSpec::Grid { start, end: start + width, samples }.grid();
        prop_assert_eq!(g.len(), samples);
        prop_assert_eq!(g[0], start);
        if samples > 1 {
            prop_assert_eq!(*g.last().unwrap(), start + width);
            prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        }
    }
}

#[test]
fn block_tridiag_identity_has_no_negative_directions() {
    let a = BlockTridiag::new(
        vec![DMatrix::identity(2, 2); 4],
        vec![DMatrix::zeros(2, 2); 3],
    );
    assert_eq!(a.inertia(0.0).negative, 0);
    assert_eq!(
        a.mul_vec(&DVector::from_element(8, 1.0)),
        DVector::from_element(8, 1.0)
    );
}
