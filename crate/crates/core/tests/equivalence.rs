mod common;

use late_core::binary::{cf_fit, cf_late, cf_po_means, iv_late, iv_po_means, lalonde_fit, telser_late};
use late_core::defier::{defier_fit, defier_late};
use late_core::multi::{lambda_matrix, pairwise_iv_late, poly_cf_fit, poly_cf_late, psi, upsilon};
use late_core::{CellStats, LinkFamily};

fn tol(x: f64, rel: f64) -> f64 {
    rel * (1.0 + x.abs())
}

#[test]
fn control_function_reproduces_wald_and_means() {
    for s in common::late_fixtures(120) {
        let st = CellStats::from_sample(&s).unwrap();
        let iv = iv_late(&st).unwrap();
        let ivm = iv_po_means(&st).unwrap();
        for link in LinkFamily::builtins() {
            let fit = cf_fit(&s, &link).unwrap();
            let cf = cf_late(&fit).unwrap();
            assert!((cf - iv).abs() <= tol(iv, 1e-8), "{}: {cf} vs {iv}", link.name());
            let cfm = cf_po_means(&fit).unwrap();
            for (a, b) in cfm.as_array().iter().zip(ivm.as_array()) {
                assert!((a - b).abs() <= tol(b, 1e-8), "{}: {a} vs {b}", link.name());
            }
        }
        let t = telser_late(&s).unwrap();
        assert!((t - iv).abs() <= tol(iv, 1e-10));
    }
}

#[test]
fn toy8_means_are_exact() {
    let st = CellStats::from_sample(&common::toy8()).unwrap();
    let m = iv_po_means(&st).unwrap();
    for (a, b) in m.as_array().iter().zip([2.0, 1.0, 0.5, -0.5]) {
        assert!((a - b).abs() < 1e-12);
    }
    for link in LinkFamily::builtins() {
        let m = cf_po_means(&cf_fit(&common::toy8(), &link).unwrap()).unwrap();
        for (a, b) in m.as_array().iter().zip([2.0, 1.0, 0.5, -0.5]) {
            assert!((a - b).abs() < 1e-12, "{}", link.name());
        }
    }
}

#[test]
fn polynomial_control_function_reproduces_pairwise_wald() {
    for k in [2, 3] {
        for s in common::multi_fixtures(k, 25) {
            let st = CellStats::from_sample(&s).unwrap();
            for link in LinkFamily::builtins() {
                let fit = poly_cf_fit(&s, &link, k).unwrap();
                for z in 1..=k {
                    let a = poly_cf_late(&fit, z).unwrap();
                    let b = pairwise_iv_late(&st, z).unwrap();
                    assert!((a - b).abs() <= 1e-6, "K={k} z={z} {}: {a} vs {b}", link.name());
                    for d in 0..2 {
                        let lam = lambda_matrix(&link, d, st.p_hats(), k).unwrap();
                        let lhs = lam.transpose() * psi(st.p_hats(), d, z).unwrap();
                        let rhs = upsilon(&link, st.p_hats(), z, k).unwrap();
                        for (x, y) in lhs.iter().zip(rhs.iter()) {
                            assert!((x - y).abs() <= 1e-8, "K={k} z={z} d={d}: {x} vs {y}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn lalonde_matches_wald_only_under_symmetry() {
    let s = common::lalonde_symmetric();
    let iv = iv_late(&CellStats::from_sample(&s).unwrap()).unwrap();
    assert!((lalonde_fit(&s).unwrap().beta - iv).abs() < 1e-8);
    let s = common::lalonde_asymmetric();
    let iv = iv_late(&CellStats::from_sample(&s).unwrap()).unwrap();
    assert!((lalonde_fit(&s).unwrap().beta - iv).abs() > 1e-6);
}

#[test]
fn defier_model_matches_moments_but_not_late() {
    let s = common::defier_fixture();
    let st = CellStats::from_sample(&s).unwrap();
    let iv = iv_late(&st).unwrap();
    for link in LinkFamily::builtins() {
        let f = defier_fit(&s, &link, 0.3).unwrap();
        for z in 0..2 {
            assert!((f.choice_probability(z) - st.p_hat(z)).abs() < 1e-12);
            for d in 0..2 {
                assert!((f.fitted(d, z).unwrap() - st.ybar(z, d).unwrap()).abs() < 1e-10);
            }
        }
        assert!((defier_late(&f).unwrap() - iv).abs() > 1e-6, "{}", link.name());
    }
}
