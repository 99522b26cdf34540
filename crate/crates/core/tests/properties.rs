use caloric_core::align;
use caloric_core::data;
use caloric_core::energy_space::{self, ClassicalData, LpResolution};
use caloric_core::grid::{self, Field, Grid2D, MapField, Spectral, TangentField};
use caloric_core::heat_flow::{self, HeatFlowConfig};
use caloric_core::hyperbolic::{self, kernel, HPoint};
use caloric_core::wave_map::{self, WaveConfig, WaveState};
use proptest::prelude::*;

fn point(m: usize) -> impl Strategy<Value = HPoint> {
    prop::collection::vec(-2.0f64..2.0, m).prop_map(|x| HPoint::lift(&x))
}

fn tangent_at(p: &HPoint) -> impl Strategy<Value = Vec<f64>> {
    let p = p.coords().to_vec();
    prop::collection::vec(-1.5f64..1.5, p.len()).prop_map(move |mut v| {
        kernel::tangent_project(&p, &mut v);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lifted_points_lie_on_the_hyperboloid(p in point(3)) {
        let c = p.coords();
        prop_assert!((kernel::mink(c, c) + 1.0).abs() < 1e-10 * c[0] * c[0]);
        prop_assert!(c[0] >= 1.0);
    }

    #[test]
    fn exp_inverts_log(p in point(2), q in point(2)) {
        let mut v = vec![0.0; 3];
        kernel::log(p.coords(), q.coords(), &mut v);
        let mut back = vec![0.0; 3];
        kernel::exp(p.coords(), &v, &mut back);
        for (a, b) in back.iter().zip(q.coords()) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
        let d = kernel::dist(p.coords(), q.coords());
        prop_assert!((kernel::mink(&v, &v).sqrt() - d).abs() < 1e-8 * (1.0 + d));
    }

    #[test]
    fn distance_is_a_metric(p in point(2), q in point(2), r in point(2)) {
        let d = |a: &HPoint, b: &HPoint| kernel::dist(a.coords(), b.coords());
        prop_assert!(d(&p, &p) < 1e-7);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-10);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
    }

    #[test]
    fn transport_is_an_isometry((p, v, w) in point(3).prop_flat_map(|p| (Just(p.clone()), tangent_at(&p), tangent_at(&p))), q in point(3)) {
        let (mut tv, mut tw) = (v.clone(), w.clone());
        kernel::transport(p.coords(), q.coords(), &mut tv);
        kernel::transport(p.coords(), q.coords(), &mut tw);
        prop_assert!(kernel::mink(&tv, q.coords()).abs() < 1e-9 * (1.0 + q.coords()[0].powi(2)));
        let before = kernel::mink(&v, &w);
        let after = kernel::mink(&tv, &tw);
        prop_assert!((before - after).abs() < 1e-8 * (1.0 + before.abs()));
    }

    #[test]
    fn lorentz_maps_preserve_distance(p in point(2), q in point(2), r in -1.0f64..1.0, th in 0.0f64..6.3) {
        let u = hyperbolic::boost(2, 1, r);
        let rot = hyperbolic::spatial_rotation(2, 1, 2, th);
        let (pu, qu) = (p.transformed(&u).transformed(&rot), q.transformed(&u).transformed(&rot));
        let d0 = kernel::dist(p.coords(), q.coords());
        let d1 = kernel::dist(pu.coords(), qu.coords());
        prop_assert!((d0 - d1).abs() < 1e-7 * (1.0 + d0));
    }

    #[test]
    fn polar_rotation_is_special_orthogonal(k in prop::collection::vec(-1.0f64..1.0, 9)) {
        let (u, _) = align::polar_rotation(&k, 3);
        prop_assert!(align::orthogonality_defect(&u, 3) < 1e-10);
        let det = nalgebra::Matrix3::from_row_slice(&u).determinant();
        prop_assert!((det - 1.0).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectral_heat_keeps_the_mean_and_contracts(seed in 0u64..1000, s in 0.01f64..2.0) {
        let g = Grid2D::new(32, 4.0).unwrap();
        let u = data::random_band_limited(g, 5, seed);
        let v = Spectral::new(g).heat(&u, s).unwrap();
        prop_assert!((u.integral() - v.integral()).abs() < 1e-9 * (1.0 + u.integral().abs()));
        prop_assert!(v.l2_sq() <= u.l2_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn laplacian_is_symmetric_and_negative(a in 0u64..1000, b in 0u64..1000) {
        let g = Grid2D::new(16, 3.0).unwrap();
        let (u, v) = (data::random_band_limited(g, 4, a), data::random_band_limited(g, 4, b));
        let dot = |x: &Field, y: &Field| x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum::<f64>();
        let (lu, lv) = (grid::laplacian(&u), grid::laplacian(&v));
        prop_assert!((dot(&lu, &v) - dot(&u, &lv)).abs() < 1e-9 * (1.0 + dot(&lu, &v).abs()));
        prop_assert!(dot(&lu, &u) <= 1e-12);
    }

    #[test]
    fn heat_flow_dissipates_energy(seed in 0u64..500, amp in 0.1f64..1.5) {
        let g = Grid2D::new(16, 4.0).unwrap();
        let phi = data::random_map(g, 2, amp, 3.0, 3, seed).unwrap();
        let cfg = HeatFlowConfig { s_max: 0.5, ..Default::default() };
        let tr = heat_flow::run(&phi, &cfg).unwrap();
        prop_assert!(tr.max_energy_increase <= 1e-10);
        prop_assert!(tr.rungs.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-10));
        let last = tr.rungs.last().unwrap();
        let d = 3;
        for p in last.phi.data().chunks(d) {
            prop_assert!((kernel::mink(p, p) + 1.0).abs() < 1e-9 * p[0] * p[0]);
        }
    }

    #[test]
    fn stress_tensor_round_trips(seed in 0u64..500, c in -1.0f64..1.0) {
        let g = Grid2D::new(16, 4.0).unwrap();
        let phi0 = data::random_map(g, 2, 0.8, 3.0, 3, seed).unwrap();
        let v = grid::diff(phi0.field(), 0).scaled(c);
        let phi1 = TangentField::projected(&phi0, v).unwrap().into_field();
        let d = ClassicalData::new(phi0, phi1).unwrap();
        let gram = energy_space::gram(&d);
        let back = energy_space::destress(&energy_space::stress(&d));
        prop_assert!(gram.sub(&back).unwrap().sup() < 1e-10 * (1.0 + gram.sup()));
    }

    #[test]
    fn lp_distance_ignores_global_rotations(seed in 0u64..1000, th in 0.0f64..6.3) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Grid2D::new(8, 2.0).unwrap();
        let ladder = grid::geometric_ladder(0.1, 2.0, 1.0).unwrap();
        let mut make = || {
            let mut r = LpResolution::zero(g, 2, ladder.clone());
            for f in r.psi_s.iter_mut().chain(std::iter::once(&mut r.psi_t0)) {
                for x in f.data_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
            r
        };
        let (a, b) = (make(), make());
        let u = align::plane_rotation(2, 0, 1, th);
        let d0 = energy_space::lp_distance(&a, &b).unwrap();
        let d1 = energy_space::lp_distance(&a.rotated(&u), &b).unwrap();
        let d2 = energy_space::lp_distance(&b, &a).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-10 * (1.0 + d0));
        prop_assert!((d0 - d2).abs() < 1e-10 * (1.0 + d0));
        prop_assert!(d0 <= energy_space::lp_norm(&a) + energy_space::lp_norm(&b) + 1e-12);
    }

    #[test]
    fn wave_steps_stay_on_the_constraint(seed in 0u64..500, amp in 0.1f64..1.0) {
        let g = Grid2D::new(16, 4.0).unwrap();
        let phi = data::random_map(g, 2, amp, 3.0, 3, seed).unwrap();
        let v = grid::diff(phi.field(), 1).scaled(0.5);
        let v = TangentField::projected(&phi, v).unwrap().into_field();
        let s = WaveState::new(0.0, phi, v).unwrap();
        let tr = wave_map::evolve(&s, &WaveConfig { energy_budget: 0.1, ..Default::default() }, 0.5, 1).unwrap();
        let last = tr.states.last().unwrap();
        for (p, v) in last.phi.field().data().chunks(3).zip(last.phi_t.data().chunks(3)) {
            prop_assert!((kernel::mink(p, p) + 1.0).abs() < 1e-9 * p[0] * p[0]);
            prop_assert!(kernel::mink(p, v).abs() < 1e-9 * (1.0 + p[0] * v.iter().map(|x| x.abs()).sum::<f64>()));
        }
    }

    #[test]
    fn constant_maps_are_fixed_points(x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let g = Grid2D::new(8, 2.0).unwrap();
        let phi = MapField::constant(g, &HPoint::lift(&[x, y]));
        let next = heat_flow::step(&phi, 0.1 * g.cell_area()).unwrap();
        prop_assert!(next.field().sub(phi.field()).unwrap().sup() < 1e-14);
        let w = wave_map::wave_step(&WaveState::at_rest(0.0, phi.clone()), 0.25 * g.h()).unwrap();
        prop_assert!(w.phi.field().sub(phi.field()).unwrap().sup() < 1e-14);
        prop_assert!(heat_flow::dirichlet_energy(&phi).abs() < 1e-20);
    }
}
