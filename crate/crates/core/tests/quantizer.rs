use frontsync::metrics::InvPsdGrid;
use frontsync::quantizer::{
    apply_data_quantizer_with, apply_gaussian_model_with, apply_scalar_quantizer,
    design_scalar_quantizer,
};
use frontsync::signal_model::{seeded_rng, Dft, FrameContext};
use frontsync::{Constellation, Grid, SystemConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn shaped_grid(cfg: &SystemConfig) -> InvPsdGrid {
    let (rows, cols) = cfg.grid_shape();
    InvPsdGrid::new(Grid::from_fn(rows, cols, |n, k| 0.5 + (n + k) as f64), 0.0).unwrap()
}

#[test]
fn gaussian_model_per_bin_variance() {
    let cfg = SystemConfig::default();
    let ctx = FrameContext::new(&cfg).unwrap();
    let grid = shaped_grid(&cfg);
    let frame = ctx.pilot_frame(0.0, 0.0, &mut seeded_rng(1, 0)).unwrap();
    let mut rng = seeded_rng(2, 0);
    let trials = 40_000;
    let mut acc = Grid::filled(2, 16, 0.0);
    for _ in 0..trials {
        let c = apply_gaussian_model_with(&frame, &grid, &mut rng).unwrap();
        for (n, k, a) in acc.clone().indexed() {
            acc[(n, k)] = a + (c.observations[(n, k)] - frame.observations[(n, k)]).norm_sqr();
        }
    }
    for (n, k, a) in acc.indexed() {
        let want = 16.0 / grid.u[(n, k)];
        let got = a / trials as f64;
        assert!(
            (got / want - 1.0).abs() < 0.03,
            "bin ({n},{k}): {got} vs {want}"
        );
    }
}

#[test]
fn gaussian_model_is_circulant_in_time() {
    let cfg = SystemConfig {
        pilot_len: 8,
        oversampling: 1,
        noise_psd: 0.0,
        ..SystemConfig::default()
    };
    let psd = [0.2, 0.5, 1.0, 2.0, 0.1, 0.7, 1.5, 0.3];
    let grid = InvPsdGrid::new(
        Grid::from_vec(1, 8, psd.iter().map(|s| 1.0 / s).collect()),
        0.0,
    )
    .unwrap();
    let ctx = FrameContext::new(&cfg).unwrap();
    let frame = ctx.pilot_frame(0.0, 0.0, &mut seeded_rng(4, 0)).unwrap();
    let dft = Dft::new(8);
    let mut rng = seeded_rng(5, 0);
    let trials = 100_000;
    // Sample autocorrelation at every lag, averaged over the circle.
    let mut acf = [Complex64::new(0.0, 0.0); 8];
    for _ in 0..trials {
        let c = apply_gaussian_model_with(&frame, &grid, &mut rng).unwrap();
        let mut q: Vec<Complex64> = c
            .observations
            .row(0)
            .iter()
            .zip(frame.observations.row(0))
            .map(|(a, b)| a - b)
            .collect();
        dft.inverse(&mut q);
        for (lag, slot) in acf.iter_mut().enumerate() {
            for m in 0..8 {
                *slot += q[(m + lag) % 8] * q[m].conj();
            }
        }
    }
    for v in acf.iter_mut() {
        *v /= (trials * 8) as f64;
    }
    // Eigenvalues of the circulant covariance are the DFT of its first column.
    let mut eig = acf.to_vec();
    dft.forward(&mut eig);
    for (k, e) in eig.iter().enumerate() {
        assert!(
            (e.re / psd[k] - 1.0).abs() < 0.05,
            "bin {k}: {} vs {}",
            e.re,
            psd[k]
        );
    }
}

#[test]
fn scalar_error_variance_in_fine_regime() {
    let cfg = SystemConfig::default().with_common_snr_db(20.0);
    let ctx = FrameContext::new(&cfg).unwrap();
    // Steps far below the bin amplitude.
    let grid = InvPsdGrid::uniform(&cfg, 1e4, 0.0).unwrap();
    let spec = design_scalar_quantizer(&grid, &cfg).unwrap();
    let step = spec.step[(0, 0)];
    let root = 4.0;
    let mut rng = seeded_rng(6, 0);
    let mut acc = 0.0;
    let mut count = 0.0;
    for _ in 0..2000 {
        let frame = ctx.pilot_frame(0.1, 0.2, &mut rng).unwrap();
        let q = apply_scalar_quantizer(&frame, &spec).unwrap();
        for (a, b) in q
            .observations
            .as_slice()
            .iter()
            .zip(frame.observations.as_slice())
        {
            let e = (a - b) / root;
            acc += e.re * e.re + e.im * e.im;
            count += 2.0;
        }
    }
    let got = acc / count;
    let want = step * step / 12.0;
    assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
}

#[test]
fn clipping_is_rare() {
    let cfg = SystemConfig::default().with_common_snr_db(10.0);
    let ctx = FrameContext::new(&cfg).unwrap();
    let spec =
        design_scalar_quantizer(&InvPsdGrid::uniform(&cfg, 1.0, 0.0).unwrap(), &cfg).unwrap();
    let mut rng = seeded_rng(7, 0);
    let mut clipped = 0usize;
    let mut total = 0usize;
    for _ in 0..5000 {
        let frame = ctx.pilot_frame(0.0, 0.0, &mut rng).unwrap();
        for (n, k, y) in frame.observations.indexed() {
            let z = y / 4.0;
            let c = spec.clip_radius[(n, k)];
            clipped += (z.re.abs() > c) as usize + (z.im.abs() > c) as usize;
            total += 2;
        }
    }
    assert!(
        (clipped as f64) / (total as f64) < 1e-4,
        "{clipped} / {total}"
    );
}

#[test]
fn data_quantizer_variance_and_snr() {
    let cfg = SystemConfig {
        data_len: 10_000,
        ..SystemConfig::default()
    }
    .with_common_snr_db(10.0);
    let ctx = FrameContext::new(&cfg).unwrap();
    let mut rng = seeded_rng(8, 0);
    let frame = ctx
        .data_frame(0.0, 0.0, Constellation::Qpsk, &mut rng)
        .unwrap();
    let sigma2 = 0.05;
    let q = apply_data_quantizer_with(&frame, sigma2, &mut rng).unwrap();
    let added: f64 = q
        .observations
        .iter()
        .zip(&frame.observations)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / 10_000.0;
    assert!((added / sigma2 - 1.0).abs() < 0.03);

    let signal = cfg.amplitude * cfg.amplitude * cfg.data_energy;
    let noise: f64 = q
        .observations
        .iter()
        .zip(&frame.symbols)
        .map(|(y, x)| (y - cfg.amplitude * x).norm_sqr())
        .sum::<f64>()
        / 10_000.0;
    let want = signal / (cfg.data_noise_power() + sigma2);
    assert!(((signal / noise) / want - 1.0).abs() < 0.05);
}

proptest! {
    #[test]
    fn scalar_quantizer_stays_on_levels(seed in any::<u64>(), u in 0.05f64..100.0) {
        let cfg = SystemConfig::default();
        let ctx = FrameContext::new(&cfg).unwrap();
        let frame = ctx.pilot_frame(0.0, 0.5, &mut seeded_rng(seed, 0)).unwrap();
        let spec = design_scalar_quantizer(&InvPsdGrid::uniform(&cfg, u, 0.0).unwrap(), &cfg).unwrap();
        let q = apply_scalar_quantizer(&frame, &spec).unwrap();
        for (n, k, y) in q.observations.indexed() {
            let z = y / 4.0;
            let step = spec.step[(n, k)];
            for part in [z.re, z.im] {
                let cell = part / step - 0.5;
                prop_assert!((cell - cell.round()).abs() < 1e-6);
                prop_assert!(part.abs() <= spec.clip_radius[(n, k)].max(0.5 * step) + 1e-9);
            }
        }
    }
}
