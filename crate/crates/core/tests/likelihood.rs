mod common;

use late_core::binary::{iv_late, iv_po_means};
use late_core::fiml::{fiml_fit, limited_info_fit, log_likelihood, BinaryCounts};
use late_core::CellStats;

#[test]
fn interior_samples_return_plug_ins() {
    for s in common::interior_binary_fixtures(30) {
        let st = CellStats::from_sample(&s).unwrap();
        let iv = iv_late(&st).unwrap();
        let m = iv_po_means(&st).unwrap();
        let r = fiml_fit(&s).unwrap();
        assert!(r.interior);
        let expect = [st.p_hat(0), st.p_hat(1) - st.p_hat(0), m.mu_1at, m.mu_0nt, m.mu_1c, m.mu_0c];
        for (a, b) in r.params.as_array().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((r.late - iv).abs() < 1e-6);
        assert!((limited_info_fit(&s).unwrap().late - iv).abs() < 1e-6);
    }
}

#[test]
fn count_likelihood_matches_observation_loop() {
    let s = common::corner_fixture();
    let c = BinaryCounts::from_sample(&s).unwrap();
    let r = fiml_fit(&s).unwrap();
    let t = r.params.as_array();
    let a = log_likelihood(&r.params, &c).unwrap();
    assert!((a - common::loglik_by_observation(&s, &t)).abs() < 1e-12);
}

#[test]
fn corner_fixture_agrees_with_lattice_search() {
    let s = common::corner_fixture();
    let st = CellStats::from_sample(&s).unwrap();
    assert!((iv_late(&st).unwrap() - 2.0).abs() < 1e-12);
    let r = fiml_fit(&s).unwrap();
    assert!(!r.interior);
    assert!(r.params.as_array()[2..].iter().all(|v| (0.0..=1.0).contains(v)));

    let starts = common::oracle_starts(&s, r.params.as_array());
    let (_, coarse) = common::grid_search(&s, &starts, 1e-3);
    assert!(r.loglik >= coarse - 1e-9, "{} < lattice {coarse}", r.loglik);
    let (t, fine) = common::grid_search(&s, &starts, 1e-7);
    assert!((r.loglik - fine).abs() < 1e-6, "{} vs refined lattice {fine} at {t:?}", r.loglik);
}
