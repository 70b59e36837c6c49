use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use melnikov_core::expr;
use melnikov_core::melnikov::{extended_setup, fit_c, melnikov_convergent, Base, MelnikovOptions};
use melnikov_core::phase::catalog;
use melnikov_core::separatrix::paper_example_separatrix;
use melnikov_core::verify::{derivative_gap, random_expression};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn eval(e: &expr::Expression, q: f64, p: f64) -> f64 {
    e.evaluate(&HashMap::from([("q".to_string(), q), ("p".to_string(), p)])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn symbolic_derivatives_match_differences(seed in any::<u64>(), q in -1.0f64..1.0, p in -1.0f64..1.0) {
        let src = random_expression(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let gap = derivative_gap(&src, q, p).unwrap();
        prop_assert!(gap < 1e-6, "{} at ({}, {}): {}", src, q, p, gap);
    }

    #[test]
    fn printed_expressions_reparse(seed in any::<u64>()) {
        let src = random_expression(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let e = expr::parse(&src, &["q", "p"]).unwrap();
        let again = expr::parse(&e.to_string(), &["q", "p"]).unwrap();
        for k in 0..20 {
            let (q, p) = (-1.0 + 0.1 * k as f64, 0.7 - 0.07 * k as f64);
            let (a, b) = (eval(&e, q, p), eval(&again, q, p));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", src, e);
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_leibniz(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), q in -1.0f64..1.0, p in -1.0f64..1.0) {
        let sys = catalog("pendulum", &BTreeMap::new()).unwrap();
        let mk = |s: u64| random_expression(&mut ChaCha8Rng::seed_from_u64(s), 3);
        let (f, g, h) = (mk(s1), mk(s2), mk(s3));
        let obs = |src: &str| sys.observable(src).unwrap();
        let y = [q, p];
        let fg = sys.poisson_bracket(&obs(&f), &obs(&g), &y, 0.0).unwrap();
        let gf = sys.poisson_bracket(&obs(&g), &obs(&f), &y, 0.0).unwrap();
        prop_assert!((fg + gf).abs() <= 1e-12 * fg.abs().max(1.0));
        // {f, g h} = {f, g} h + g {f, h}
        let gh = format!("({g}) * ({h})");
        let lhs = sys.poisson_bracket(&obs(&f), &obs(&gh), &y, 0.0).unwrap();
        let fh = sys.poisson_bracket(&obs(&f), &obs(&h), &y, 0.0).unwrap();
        let (gv, hv) = (obs(&g).value(&y, 0.0).unwrap(), obs(&h).value(&y, 0.0).unwrap());
        let rhs = fg * hv + gv * fh;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn beta_is_linear_in_the_integral(a in -3.0f64..3.0, b in -3.0f64..3.0, t0 in 0.0f64..6.3) {
        let (ext, orbit) = extended_setup(&catalog("forced-pendulum", &BTreeMap::new()).unwrap()).unwrap();
        let opts = MelnikovOptions::default();
        let base = Base::with_time(&ext, &orbit, 0.0, t0);
        let x = ext.observable("p^2/2 + cos(q)").unwrap();
        let y = ext.observable("(p^2/2 + cos(q) - 1)^2 + p^2/2 + cos(q)").unwrap();
        let mix = ext.observable(&format!("{a}*(p^2/2 + cos(q)) + {b}*((p^2/2 + cos(q) - 1)^2 + p^2/2 + cos(q))")).unwrap();
        let bx = melnikov_convergent(&ext, &x, "A", &orbit, &base, &opts).unwrap().value;
        let by = melnikov_convergent(&ext, &y, "B", &orbit, &base, &opts).unwrap().value;
        let bm = melnikov_convergent(&ext, &mix, "aA+bB", &orbit, &base, &opts).unwrap().value;
        let want = a * bx + b * by;
        prop_assert!((bm - want).abs() <= 1e-10 * want.abs().max(bx.abs()).max(1.0), "{} vs {}", bm, want);
    }

    #[test]
    fn counting_coefficients_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let s = catalog("paper-example", &BTreeMap::new()).unwrap();
        let o = paper_example_separatrix(&s).unwrap();
        let h = s.h0().to_string();
        let mix = s.observable(&format!("{a}*({h}) + {b}*eta")).unwrap();
        let (ch, _) = fit_c(&s, s.h0_observable(), &o.target).unwrap();
        let (ce, _) = fit_c(&s, &s.observable("eta").unwrap(), &o.target).unwrap();
        let (cm, res) = fit_c(&s, &mix, &o.target).unwrap();
        prop_assert!(res < 1e-6);
        prop_assert!((cm - (a * ch + b * ce)).abs() < 1e-6);
    }
}

#[test]
fn pendulum_separatrix_energy_is_exact() {
    let (ext, orbit) = extended_setup(&catalog("forced-pendulum", &BTreeMap::new()).unwrap()).unwrap();
    for k in 0..50 {
        let y = orbit.state(-10.0 + 0.4 * k as f64);
        assert!((y[1] * y[1] / 2.0 + y[0].cos() - 1.0).abs() < 1e-13);
        assert!(y[2].abs() <= 10.0 + PI);
    }
    let _ = ext;
}
