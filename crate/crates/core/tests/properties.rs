use clmrmp::biasing::{clone_sample, distance_weight, BiasState};
use clmrmp::gaussian::{contour_radius, difference_belief, repair_psd, GaussianBelief};
use clmrmp::propagation::{lqr_gain, ExpectedBelief, Propagator, LinearSystem};
use clmrmp::validation::{check_ext_enabled, check_robot_robot};
use clmrmp::gaussian::DifferenceBelief;
use clmrmp::weights::WeightTree;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (1e-4f64..0.25, 1e-4f64..0.25, 0.0f64..std::f64::consts::PI).prop_map(|(a, b, t)| {
        let (c, s) = (t.cos(), t.sin());
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        &r * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])) * r.transpose()
    })
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

proptest! {
    #[test]
    fn contour_radius_shrinks_with_tail_and_grows_with_scale(
        cov in spd2(),
        p in 0.01f64..0.4,
        k in 1.01f64..5.0,
    ) {
        let r = contour_radius(&cov, p).unwrap();
        prop_assert!(contour_radius(&cov, p * 0.5).unwrap() > r);
        prop_assert!(contour_radius(&(&cov * k), p).unwrap() > r);
    }

    #[test]
    fn robot_robot_acceptance_is_monotone_in_separation(
        cov in spd2(),
        dir in 0.0f64..std::f64::consts::TAU,
        d in 0.0f64..3.0,
        extra in 0.0f64..2.0,
    ) {
        let at = |dist: f64| {
            let m = DVector::from_vec(vec![dist * dir.cos(), dist * dir.sin()]);
            DifferenceBelief::new(m, cov.clone()).unwrap()
        };
        if check_robot_robot(&at(d), 0.1, 0.1, 0.05) {
            prop_assert!(check_robot_robot(&at(d + extra), 0.1, 0.1, 0.05));
        }
        if check_ext_enabled(&at(d + extra), 1.5, 0.05) {
            prop_assert!(check_ext_enabled(&at(d), 1.5, 0.05));
        }
    }

    #[test]
    fn difference_covariance_is_psd(
        a in spd2(), b in spd2(), x in -1.0f64..1.0,
    ) {
        let mut g = DMatrix::zeros(4, 4);
        g.view_mut((0, 0), (2, 2)).copy_from(&a);
        g.view_mut((2, 2), (2, 2)).copy_from(&b);
        // cross-covariance scaled so the joint stays PSD
        let cross = DMatrix::identity(2, 2) * (x * a.diagonal().min().min(b.diagonal().min()) * 0.5);
        g.view_mut((0, 2), (2, 2)).copy_from(&cross);
        g.view_mut((2, 0), (2, 2)).copy_from(&cross.transpose());
        prop_assume!(repair_psd(&g).is_ok());
        let joint = GaussianBelief::new(DVector::zeros(4), g).unwrap();
        let d = difference_belief(&joint, &[0, 1], &[2, 3]).unwrap();
        prop_assert!(min_eig(d.covariance()) >= -1e-12);
    }

    #[test]
    fn update_never_inflates_prediction(
        s in spd2(),
        l in spd2(),
        r in 0.001f64..1.0,
        u in prop::collection::vec(-0.5f64..0.5, 2),
    ) {
        let eye = DMatrix::<f64>::identity(2, 2);
        let sys = LinearSystem::new(eye.clone(), eye.clone(), &eye * 0.01).unwrap();
        let k = lqr_gain(&eye, &eye, &eye, &eye).unwrap();
        let prop = Propagator::new(sys, k).unwrap();
        let mut b = ExpectedBelief::root(DVector::zeros(2), s).unwrap();
        b.lambda = l;
        let pred = prop.predict(&b, &DVector::from_vec(u)).unwrap();
        let gamma_pred = pred.gamma();
        let sigma_bar = pred.sigma_bar.clone();
        let next = prop.update(pred, &eye, &(&eye * r)).unwrap();
        // Sigma' <= Sigma_bar, Lambda' >= 0, and Gamma' is the predicted Gamma
        prop_assert!(min_eig(&(&sigma_bar - &next.sigma)) >= -1e-12);
        prop_assert!(min_eig(&next.lambda) >= -1e-12);
        prop_assert!((next.gamma() - gamma_pred).amax() < 1e-12);
    }

    #[test]
    fn weight_pdf_stays_normalized(
        ws in prop::collection::vec(1e-3f64..1e3, 1..200),
        edits in prop::collection::vec((0usize..200, 1e-3f64..1e3), 0..50),
    ) {
        let mut t = WeightTree::new();
        for &w in &ws {
            t.push(w);
        }
        for (i, w) in edits {
            if i < ws.len() {
                t.set(i, w);
            }
        }
        let sum: f64 = (0..ws.len()).map(|i| t.probability(i)).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cloned_samples_coincide_and_weigh_the_cap(
        s in prop::collection::vec(0.0f64..10.0, 6),
        cursor in 0usize..3,
    ) {
        let mut s = s;
        let mut st = BiasState::new(3).with_clone_cursor(cursor);
        let src = clone_sample(&mut s, 2, &mut st);
        prop_assert_eq!(src, cursor);
        for r in 0..3 {
            prop_assert_eq!(&s[2 * r..2 * r + 2], &s[2 * src..2 * src + 2]);
        }
        prop_assert_eq!(distance_weight(&s, 2, 1e6), 1e6);
    }
}
