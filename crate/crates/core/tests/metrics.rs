use frontsync::link_sim::measure_error_term_powers;
use frontsync::metrics::{
    crb, effective_snr, error_term_powers, linear_approx_coeffs, pilot_rate, pilot_rate_logdet,
    CrbPair, InvPsdGrid,
};
use frontsync::{Grid, SystemConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg_with(np: usize, f: usize, snr_db: f64) -> SystemConfig {
    SystemConfig {
        pilot_len: np,
        oversampling: f,
        ..SystemConfig::default()
    }
    .with_common_snr_db(snr_db)
}

fn random_grid(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> InvPsdGrid {
    let (rows, cols) = cfg.grid_shape();
    let u = Grid::from_fn(rows, cols, |_, _| 10f64.powf(rng.random_range(-2.0..3.0)));
    InvPsdGrid::new(u, 0.0).unwrap()
}

#[test]
fn rate_matches_logdet_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..50 {
        let np = [4, 8, 16][i % 3];
        let f = 1 + (i / 3) % 2;
        let cfg = cfg_with(np, f, rng.random_range(-5.0..25.0));
        let grid = random_grid(&cfg, &mut rng);
        let a = pilot_rate(&cfg, &grid).unwrap();
        let b = pilot_rate_logdet(&cfg, &grid).unwrap();
        assert!(((a - b) / b).abs() <= 1e-9, "N_p {np} F {f}: {a} vs {b}");
    }
}

#[test]
fn error_term_powers_match_closed_forms() {
    let cfg = SystemConfig::default();
    let (dtau, dtheta) = (0.05, 0.1);
    let measured = measure_error_term_powers(&cfg, dtau, dtheta, 100_000, 5).unwrap();
    let crbs = CrbPair {
        crb_tau: dtau * dtau / 12.0,
        crb_theta: dtheta * dtheta / 12.0,
    };
    let closed = error_term_powers(
        &cfg,
        &crbs,
        &linear_approx_coeffs(dtau, dtheta, &cfg).unwrap(),
    );
    for (m, c) in [
        (measured.p_signal, closed.p_signal),
        (measured.p_phase_noise, closed.p_phase_noise),
        (measured.p_isi, closed.p_isi),
    ] {
        assert!((m / c - 1.0).abs() < 0.05, "{m} vs {c}");
    }
}

#[test]
fn isi_scales_with_timing_variance() {
    let cfg = SystemConfig::default();
    let p: Vec<f64> = [0.02, 0.04, 0.08]
        .iter()
        .map(|d| {
            measure_error_term_powers(&cfg, *d, 0.0, 50_000, 9)
                .unwrap()
                .p_isi
                / (d * d / 12.0)
        })
        .collect();
    for w in p.windows(2) {
        assert!((w[1] / w[0] - 1.0).abs() < 0.1, "{p:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bounds_decrease_when_quantization_improves(seed in any::<u64>(), idx in 0usize..32, factor in 1.01f64..100.0) {
        let cfg = cfg_with(16, 2, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&cfg, &mut rng);
        let mut better = grid.clone();
        better.u.as_mut_slice()[idx] *= factor;
        let a = crb(&cfg, &grid).unwrap();
        let b = crb(&cfg, &better).unwrap();
        prop_assert!(b.crb_theta < a.crb_theta);
        // The k_c = 0 bins carry no delay information.
        if frontsync::grid::centered_index(idx % 16, 16) != 0 {
            prop_assert!(b.crb_tau < a.crb_tau);
        } else {
            prop_assert!(b.crb_tau == a.crb_tau);
        }
    }

    #[test]
    fn effective_snr_decreases_in_each_term(t in 1e-6f64..1e-2, th in 1e-6f64..1e-1, q in 0.0f64..1.0, bump in 1.01f64..3.0) {
        let cfg = SystemConfig::default();
        let coeffs = linear_approx_coeffs(0.1, 0.1, &cfg).unwrap();
        let base = CrbPair { crb_tau: t, crb_theta: th };
        let s = effective_snr(&cfg, &base, &coeffs, q);
        let longer = CrbPair { crb_tau: t * bump, ..base };
        let wider = CrbPair { crb_theta: th * bump, ..base };
        prop_assert!(effective_snr(&cfg, &longer, &coeffs, q) < s);
        prop_assert!(effective_snr(&cfg, &wider, &coeffs, q) < s);
        prop_assert!(effective_snr(&cfg, &base, &coeffs, q + 0.01) < s);
    }

    #[test]
    fn a_bar_is_row_independent(d in 1e-4f64..0.99) {
        let c = linear_approx_coeffs(d, 0.0, &SystemConfig::default()).unwrap();
        let plus: f64 = c.a_plus().iter().map(|a| a * a).sum();
        let minus: f64 = c.a_minus().iter().map(|a| a * a).sum();
        prop_assert!((plus - minus).abs() <= 1e-12 * plus);
        prop_assert!((plus - c.a_bar).abs() <= 1e-12 * plus);
    }
}
