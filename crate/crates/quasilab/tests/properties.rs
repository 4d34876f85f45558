//! Property-based invariants over randomized fields, regions, and kernels.

use std::sync::Arc;

use proptest::prelude::*;

use quasilab::calculus::{edge_gradient, mollify_time, MollifierKernel, Region, SpaceTimeField};
use quasilab::mesh::{estimate_doubling, Space, TimeGrid};
use quasilab::quasimin::{
    bump_field, check_inequality, generate_test_family, truncate_test, BumpSpec, FamilySpec,
    QuasiminConstants, RegionForm, SignRestriction, Variant,
};
use quasilab::solver::chi_value;

fn setup(n: usize, steps: usize) -> (Arc<Space>, TimeGrid) {
    let space = Arc::new(Space::interval_mesh(n, 1.0).unwrap());
    let grid = TimeGrid::new(1.0, steps).unwrap();
    (space, grid)
}

fn field_from(values: &[f64], space: &Arc<Space>, grid: TimeGrid) -> SpaceTimeField {
    let nv = space.num_vertices();
    SpaceTimeField::from_fn(space.clone(), grid, |t, v| values[(t * nv + v) % values.len()])
}

proptest! {
    #[test]
    fn gradient_is_subadditive_and_homogeneous(
        a in prop::collection::vec(-10.0f64..10.0, 45),
        b in prop::collection::vec(-10.0f64..10.0, 45),
        c in -5.0f64..5.0,
    ) {
        let (space, grid) = setup(9, 4);
        let u = field_from(&a, &space, grid);
        let v = field_from(&b, &space, grid);
        let gu = edge_gradient(&u);
        let gv = edge_gradient(&v);
        let gsum = edge_gradient(&u.add(&v));
        let gscaled = edge_gradient(&u.scale(c));
        for t in 0..grid.num_slices() {
            for e in 0..space.num_edges() {
                prop_assert!(gsum.value(t, e) <= gu.value(t, e) + gv.value(t, e) + 1e-10);
                prop_assert!(
                    (gscaled.value(t, e) - c.abs() * gu.value(t, e)).abs()
                        <= 1e-10 * (1.0 + gu.value(t, e))
                );
            }
        }
    }

    #[test]
    fn gradient_is_local(
        a in prop::collection::vec(-10.0f64..10.0, 45),
        bump in -100.0f64..100.0,
    ) {
        let (space, grid) = setup(9, 4);
        let u = field_from(&a, &space, grid);
        let mut w = u.clone();
        w.set(2, space.num_vertices() - 1, bump); // far from edge 0 = (v0, v1)
        let gu = edge_gradient(&u);
        let gw = edge_gradient(&w);
        for t in 0..grid.num_slices() {
            prop_assert_eq!(gu.value(t, 0), gw.value(t, 0));
        }
    }

    #[test]
    fn truncation_shrinks_towards_phi(
        a in prop::collection::vec(-3.0f64..3.0, 45),
        i in 1u32..60,
    ) {
        let (space, grid) = setup(9, 4);
        let phi = field_from(&a, &space, grid);
        let psi = truncate_test(&phi, i);
        let cut = 1.0 / i as f64;
        for (p, s) in phi.values().iter().zip(psi.values()) {
            prop_assert!((s.abs() - (p.abs() - cut).max(0.0)).abs() <= 1e-15);
            prop_assert!(*s == 0.0 || s.signum() == p.signum());
            prop_assert!(s.abs() <= p.abs() + 1e-15);
        }
        // larger i keeps more of phi
        let finer = truncate_test(&phi, i + 1);
        for (coarse, fine) in psi.values().iter().zip(finer.values()) {
            prop_assert!(coarse.abs() <= fine.abs() + 1e-15);
        }
    }

    #[test]
    fn chi_cutoff_anchor_values(h in 0.01f64..0.2, pad in 0.05f64..1.0) {
        let t_prime = 4.0 * h + pad;
        prop_assert_eq!(chi_value(2.0 * h, h, t_prime), 1.0);
        prop_assert_eq!(chi_value(t_prime, h, t_prime), 0.5);
        prop_assert_eq!(chi_value(h, h, t_prime), 0.0);
        prop_assert_eq!(chi_value(0.0, h, t_prime), 0.0);
        // range stays within [0, 1] across the whole profile
        for k in 0..200 {
            let t = (t_prime + 2.0 * h) * k as f64 / 199.0;
            let v = chi_value(t, h, t_prime);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn margin_is_monotone_in_k(
        seed in 0u64..1000,
        k1 in 1.0f64..2.0,
        dk in 0.0f64..1.0,
        p in 1.5f64..3.0,
    ) {
        use rand::{Rng, SeedableRng};
        let (space, grid) = setup(9, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = SpaceTimeField::from_fn(space.clone(), grid, |_, _| rng.gen_range(-1.0..1.0));
        let phi = bump_field(&space, grid, &BumpSpec {
            center_vertex: 4,
            center_slice: 4,
            space_width: 0.2,
            time_halfwidth: 2,
            amplitude: 0.4,
        });
        let margin = |k: f64| check_inequality(
            &u,
            &phi,
            &QuasiminConstants::given(2.0, k).unwrap(),
            p,
            &RegionForm::Support,
            Some(0.0),
            Variant::Minimizer,
        ).unwrap().margin;
        prop_assert!(margin(k1 + dk) >= margin(k1) - 1e-12);
    }

    #[test]
    fn doubling_ratio_with_off_grid_radii(
        r in 0.011f64..0.5,
    ) {
        let space = Space::interval_mesh(33, 1.0).unwrap();
        let est = estimate_doubling(&space, &[r]).unwrap();
        prop_assert!(est.value.is_finite());
        prop_assert!(est.value >= 1.0);
    }

    #[test]
    fn mollification_contracts_sup_norm(
        a in prop::collection::vec(-5.0f64..5.0, 85),
        steps in 1usize..6,
    ) {
        let (space, grid) = setup(5, 16);
        let f = field_from(&a, &space, grid);
        let kernel = MollifierKernel::triangular(steps as f64 * grid.dt(), grid.dt()).unwrap();
        let half = kernel.half_steps() as i64;
        let mass: f64 = (-half..=half).map(|j| kernel.weight(j)).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-14);

        let sup: f64 = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mollified = mollify_time(&f, &kernel).unwrap();
        for t in mollified.valid.clone() {
            for v in 0..space.num_vertices() {
                // Young: the unit-mass average cannot exceed the sup norm
                prop_assert!(mollified.field.value(t, v).abs() <= sup + 1e-12);
            }
        }
    }

    #[test]
    fn test_family_is_deterministic_and_admissible(seed in 0u64..500) {
        let (space, grid) = setup(17, 12);
        let spec = FamilySpec {
            count: 8,
            width_range: (0.08, 0.4),
            amplitude_range: (0.1, 0.9),
            sign: SignRestriction::Any,
            seed,
        };
        let f1 = generate_test_family(&space, grid, &spec).unwrap();
        let f2 = generate_test_family(&space, grid, &spec).unwrap();
        for (a, b) in f1.members.iter().zip(&f2.members) {
            prop_assert_eq!(a.values(), b.values());
        }
        for phi in &f1.members {
            let support = Region::nonzero_set(phi).dilate(&space);
            prop_assert!(support.is_compactly_contained(&space));
        }
    }
}
