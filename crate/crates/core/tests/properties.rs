use monotrans::approx::{build_approximant, dyadic_average, SampledFunction};
use monotrans::func::SlopeSigns;
use monotrans::regularize::{inf_convolution, monotone_envelope_check, GridFunction};
use monotrans::*;
use proptest::prelude::*;

fn random_function() -> impl Strategy<Value = PiecewiseAffine> {
    (any::<u64>(), 1usize..=25, any::<bool>()).prop_map(|(seed, pieces, mono)| {
        let signs = if mono {
            SlopeSigns::Positive
        } else {
            SlopeSigns::Random
        };
        random_piecewise_affine(seed, pieces, (0.1, 10.0), Interval::unit(), signs)
    })
}

// Integer slopes (zero allowed) on integer-width pieces: many coincident
// levels and flat pieces.
fn lattice_function() -> impl Strategy<Value = PiecewiseAffine> {
    prop::collection::vec((1u32..=4, -3i32..=3), 1..=12).prop_map(|pieces| {
        let mut xs = vec![0.0];
        for (w, _) in &pieces {
            xs.push(xs.last().unwrap() + f64::from(*w));
        }
        let slopes: Vec<f64> = pieces.iter().map(|(_, s)| f64::from(*s)).collect();
        PiecewiseAffine::from_slopes(xs, 0.0, &slopes).unwrap()
    })
}

fn any_function() -> impl Strategy<Value = PiecewiseAffine> {
    prop_oneof![random_function(), lattice_function()]
}

fn cost() -> impl Strategy<Value = ConvexCost> {
    prop_oneof![
        (1.0f64..6.0).prop_map(|p| ConvexCost::power(p).unwrap()),
        Just(ConvexCost::exp()),
        (0.0f64..3.0, 0.1f64..3.0)
            .prop_map(|(a, c)| ConvexCost::linear_plus_power(a, c, 2.0).unwrap()),
        (0.0f64..3.0, 0.1f64..3.0, 1.5f64..4.0)
            .prop_map(|(a, c, p)| ConvexCost::linear_plus_power(a, c, p).unwrap()),
    ]
}

fn grid_function() -> impl Strategy<Value = GridFunction> {
    (
        prop::collection::vec(
            prop_oneof![4 => (0.0f64..5.0).prop_map(Some), 1 => Just(None)],
            2..=200,
        ),
        0.1f64..4.0,
    )
        .prop_map(|(vals, len)| {
            let mut values: Vec<f64> = vals
                .into_iter()
                .map(|v| v.unwrap_or(f64::INFINITY))
                .collect();
            if values.iter().all(|v| v.is_infinite()) {
                values[0] = 1.0;
            }
            GridFunction::new(0.0, len, values).unwrap()
        })
}

fn brute_force(g: &GridFunction, j: f64) -> Vec<f64> {
    let v = g.values();
    let step = j * g.spacing();
    (0..v.len())
        .map(|i| {
            let best = (0..v.len())
                .map(|m| v[m] + step * (i.abs_diff(m) as f64))
                .fold(f64::INFINITY, f64::min);
            best.min(j)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn evaluation_is_continuous_at_breakpoints(u in any_function()) {
        for (i, &x) in u.breakpoints().iter().enumerate() {
            prop_assert_eq!(u.evaluate(x).unwrap(), u.values()[i]);
            let dx = 1e-9 * u.domain().length();
            if x - dx >= u.domain().a {
                let lip = u.slopes().iter().map(|(_, s)| s.abs()).fold(0.0, f64::max);
                prop_assert!((u.evaluate(x - dx).unwrap() - u.values()[i]).abs() <= 2.0 * lip * dx);
            }
        }
    }

    #[test]
    fn cost_inverse_round_trip(f in cost()) {
        for i in 0..1000 {
            let t = 100.0 * f64::from(i) / 999.0;
            let back = f.inverse(f.eval(t)).unwrap();
            prop_assert!((back - t).abs() <= 1e-9 * t.max(1.0), "t = {t}, back = {back}");
        }
    }

    #[test]
    fn pushforward_conserves_mass(u in any_function()) {
        let nu = pushforward(&u);
        let len = u.domain().length();
        prop_assert!((nu.total_mass() - len).abs() <= 1e-12 * len);
        prop_assert!((nu.cdf(u.max_value()) - len).abs() <= 1e-9 * len);
        prop_assert!(nu.cdf_left(u.min_value()).abs() <= 1e-12 * len);
    }

    #[test]
    fn transport_reproduces_the_measure(u in any_function()) {
        let nu = pushforward(&u);
        let t = monotone_transport(&nu, u.domain()).unwrap();
        prop_assert!(t.is_non_decreasing());
        let scale = u.domain().length().max(1.0);
        prop_assert!((t.values()[0] - u.min_value()).abs() <= 1e-12 * scale);
        prop_assert!((t.values().last().unwrap() - u.max_value()).abs() <= 1e-9 * scale);
        let nu_t = pushforward(&t);
        for y in nu.nodes() {
            prop_assert!((nu.cdf(y) - nu_t.cdf(y)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn monotone_inputs_are_fixed(u in random_function()) {
        let u = if u.is_non_decreasing() { u } else { return Ok(()); };
        let t = monotone_transport(&pushforward(&u), u.domain()).unwrap();
        for &x in u.breakpoints() {
            prop_assert!((t.evaluate(x).unwrap() - u.evaluate(x).unwrap()).abs() <= 1e-9);
        }
        let n = multiplicity(&u, &t).unwrap();
        prop_assert!(n.bands().all(|(_, _, c)| c == Count::Finite(1)));
    }

    #[test]
    fn reflection_leaves_rearrangement_unchanged(u in any_function(), f in cost()) {
        let r = u.reflect();
        let t = monotone_transport(&pushforward(&u), u.domain()).unwrap();
        let tr = monotone_transport(&pushforward(&r), r.domain()).unwrap();
        let len = u.domain().length();
        for i in 0..=50 {
            let x = u.domain().a + len * f64::from(i) / 50.0;
            prop_assert!((t.evaluate(x).unwrap() - tr.evaluate(x).unwrap()).abs() <= 1e-9 * len.max(1.0));
        }
        let a = verify_inequality(&u, &f, 1e-9).unwrap();
        let b = verify_inequality(&r, &f, 1e-9).unwrap();
        prop_assert!((a.lhs - b.lhs).abs() <= 1e-9 * a.lhs.max(1.0));
        prop_assert!((a.rhs - b.rhs).abs() <= 1e-9 * a.rhs.max(1.0));
    }

    #[test]
    fn inequality_holds(u in any_function(), f in cost()) {
        let r = verify_inequality(&u, &f, 1e-9).unwrap();
        prop_assert!(r.gap >= -r.tolerance, "gap {}", r.gap);
        prop_assert!((r.lhs - dirichlet_energy(&u, &f)).abs() <= 1e-12 * r.lhs.max(1.0));
    }

    #[test]
    fn multiplicity_counts_preimages(u in random_function(), s in 0.01f64..0.99) {
        let (_, t, n) = monotrans::rearrange::rearrange(&u).unwrap();
        let dom = u.domain();
        let x = dom.a + s * dom.length();
        if n.cut_points.iter().any(|c| (c - x).abs() < 1e-6) {
            return Ok(());
        }
        let y = t.evaluate(x).unwrap();
        // independent count: sign changes of U - y over the pieces
        let crossings = u
            .slopes()
            .iter()
            .filter(|(iv, _)| {
                let lo = u.evaluate(iv.a).unwrap() - y;
                let hi = u.evaluate(iv.b).unwrap() - y;
                (lo < 0.0 && hi >= 0.0) || (lo >= 0.0 && hi < 0.0)
            })
            .count();
        prop_assert_eq!(n.count_at(x), Count::Finite(crossings as u32));
    }

    #[test]
    fn density_relation_on_regular_levels(u in random_function(), s in 0.0f64..1.0) {
        let y = u.min_value() + s * (u.max_value() - u.min_value());
        let (_, t, _) = monotrans::rearrange::rearrange(&u).unwrap();
        match density_relation_residual(&u, &t, y) {
            Ok(r) => prop_assert!(r < 1e-9, "residual {r}"),
            Err(RearrangeError::CriticalLevel(_) | RearrangeError::FlatTransport(_) | RearrangeError::LevelOutsideImage(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn json_round_trip(u in any_function(), f in cost()) {
        let back: PiecewiseAffine = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        prop_assert_eq!(&back, &u);
        let nu = pushforward(&u);
        let nu_back: Measure1D = serde_json::from_str(&serde_json::to_string(&nu).unwrap()).unwrap();
        prop_assert_eq!(nu_back, nu);
        let f_back: ConvexCost = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        prop_assert_eq!(f_back, f);
    }

    #[test]
    fn inf_convolution_matches_brute_force(g in grid_function(), j in 0.05f64..20.0) {
        let out = inf_convolution(&g, j).unwrap();
        prop_assert_eq!(out.values(), &brute_force(&g, j)[..]);
    }

    #[test]
    fn inf_convolution_invariants(g in grid_function(), j in 0.05f64..10.0, dj in 0.0f64..5.0) {
        const TOL: f64 = 1e-12;
        let out = inf_convolution(&g, j).unwrap();
        let h = g.spacing();
        for (o, v) in out.values().iter().zip(g.values()) {
            prop_assert!(*o <= v + TOL && *o <= j + TOL);
        }
        for w in out.values().windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= j * h + TOL);
        }
        let larger = inf_convolution(&g, j + dj).unwrap();
        for (lo, hi) in out.values().iter().zip(larger.values()) {
            prop_assert!(*lo <= hi + TOL);
        }
        let again = inf_convolution(&out, j).unwrap();
        for (a, b) in again.values().iter().zip(out.values()) {
            prop_assert!((a - b).abs() <= TOL);
        }
        prop_assert!(monotone_envelope_check(&g, &[j, j + dj]));
    }

    #[test]
    fn dyadic_average_preserves_mean(g in prop::collection::vec(0.0f64..10.0, 64), k in 0u32..=6) {
        let avg = dyadic_average(&g, k).unwrap();
        prop_assert_eq!(avg.len(), 1 << k);
        let m0: f64 = g.iter().sum::<f64>() / 64.0;
        let m1: f64 = avg.iter().sum::<f64>() / avg.len() as f64;
        prop_assert!((m0 - m1).abs() <= 1e-12 * m0.max(1.0));
    }

    #[test]
    fn approximants_keep_the_anchor_and_nonzero_slopes(u in random_function(), k in 0u32..=6) {
        let s = SampledFunction::from_piecewise(&u, 8).unwrap();
        let f = ConvexCost::linear_plus_power(1.0, 1.0, 2.0).unwrap();
        let uk = build_approximant(&s, &f, k).unwrap();
        prop_assert_eq!(uk.values()[0], s.values()[0]);
        prop_assert!(uk.min_abs_slope() > 0.0);
        prop_assert_eq!(uk.num_pieces(), 1 << k);
    }
}
