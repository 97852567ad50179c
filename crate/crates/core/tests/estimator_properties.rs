//! Property tests for the sparse estimators.

use beamsplit_core::channel::{generate_channel, ChannelRealization, PhysicalPath};
use beamsplit_core::estimators::{bsa_estimate, extract_doas, omp_estimate_user, BsaOptions};
use beamsplit_core::linalg::argmax_first;
use beamsplit_core::sensing::{noise_variance_at_snr, observe_compressed, SensingEnsemble};
use beamsplit_core::system::{make_rng, SystemConfig};
use beamsplit_core::C64;
use proptest::prelude::*;

fn single_path(cfg: &SystemConfig, doa: f64) -> ChannelRealization {
    let path = PhysicalPath::new(doa, C64::new(1.0, 0.0), 0.0).unwrap();
    ChannelRealization::from_paths(cfg, vec![vec![path]]).unwrap()
}

fn circular_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

fn desk_one_path() -> SystemConfig {
    SystemConfig { num_paths: 1, num_users: 1, ..SystemConfig::desk() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    // Shifting by whole grid cells aligns each subcarrier's peak with the true
    // cell up to one cell of rounding; the fused peak is exact.
    #[test]
    fn shifted_peaks_align_on_true_cell(seed in 0u64..1_000_000, n in 0usize..320) {
        let cfg = desk_one_path();
        let ens = SensingEnsemble::new(&cfg, &mut make_rng(seed)).unwrap();
        let ch = single_path(&cfg, ens.grid_angles()[n]);
        let obs = observe_compressed(&ch, &ens, &mut make_rng(0), 0.0).unwrap();
        let est = &bsa_estimate(&obs, &ens, &cfg, BsaOptions::default().with_spectra()).unwrap()[0];
        let spec = &est.spectra.as_ref().unwrap()[0];
        for m in 0..cfg.num_subcarriers {
            let row: Vec<f64> = spec.shifted.row(m).iter().copied().collect();
            prop_assert!(circular_distance(argmax_first(&row), n, 320) <= 1);
        }
        prop_assert_eq!(est.doa_indices[0], n);
        let (doas, padded) = extract_doas(est, &ens);
        prop_assert_eq!(doas, vec![ens.grid_angles()[n]]);
        prop_assert!(!padded);
    }

    // Without beam-split every subcarrier's shifted peak sits on the true cell.
    #[test]
    fn alignment_is_exact_without_beam_split(seed in 0u64..1_000_000, n in 0usize..320) {
        let cfg = SystemConfig { bandwidth_hz: 1e-3, ..desk_one_path() };
        let ens = SensingEnsemble::new(&cfg, &mut make_rng(seed)).unwrap();
        let ch = single_path(&cfg, ens.grid_angles()[n]);
        let obs = observe_compressed(&ch, &ens, &mut make_rng(0), 0.0).unwrap();
        let est = &bsa_estimate(&obs, &ens, &cfg, BsaOptions::default().with_spectra()).unwrap()[0];
        let spec = &est.spectra.as_ref().unwrap()[0];
        for m in 0..cfg.num_subcarriers {
            let row: Vec<f64> = spec.shifted.row(m).iter().copied().collect();
            prop_assert_eq!(argmax_first(&row), n);
        }
    }

    #[test]
    fn residuals_shrink_and_reconstruction_is_consistent(seed in 0u64..1_000_000, snr in 0.0f64..30.0) {
        let cfg = SystemConfig { num_users: 2, ..SystemConfig::desk() };
        let ens = SensingEnsemble::new(&cfg, &mut make_rng(seed)).unwrap();
        let ch = generate_channel(&cfg, &mut make_rng(seed ^ 0xabc), None).unwrap();
        let s2 = noise_variance_at_snr(&ch, ens.precoder(), snr);
        let obs = observe_compressed(&ch, &ens, &mut make_rng(seed ^ 0xdef), s2).unwrap();
        let freqs = cfg.subcarrier_frequencies();
        let bsa = bsa_estimate(&obs, &ens, &cfg, BsaOptions::default()).unwrap();
        for (k, est) in bsa.iter().enumerate() {
            let omp = omp_estimate_user(obs.user(k), &ens, cfg.num_paths, &freqs, cfg.carrier_freq_hz).unwrap();
            for e in [est, &omp] {
                for m in 0..cfg.num_subcarriers {
                    for w in e.residual_norms[m].windows(2) {
                        prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
                    }
                    prop_assert!(e.support_sets[m].len() <= cfg.num_paths);
                    for (i, v) in e.coefficients[m].iter().enumerate() {
                        if !e.support_sets[m].contains(&i) {
                            prop_assert_eq!(v.norm(), 0.0);
                        }
                    }
                    let h = ens.dictionary() * &e.coefficients[m];
                    prop_assert!((h - &e.channels[m]).norm() <= 1e-12 * e.channels[m].norm().max(1.0));
                }
            }
            prop_assert_eq!(est.physical_doas.len(), cfg.num_paths);
        }
    }
}

#[test]
fn symmetric_paths_give_symmetric_doas() {
    let cfg = SystemConfig { num_paths: 2, num_users: 1, bandwidth_hz: 1e-3, num_rf_chains: 48, ..SystemConfig::desk() };
    let ens = SensingEnsemble::new(&cfg, &mut make_rng(11)).unwrap();
    // Cells 82 and 237 are mirror images with orthogonal steering vectors.
    let theta = ens.grid_angles()[237];
    assert_eq!(ens.grid_angles()[82], -theta);
    let paths = vec![
        PhysicalPath::new(theta, C64::new(1.0, 0.0), 0.0).unwrap(),
        PhysicalPath::new(-theta, C64::new(0.0, 0.9), 0.0).unwrap(),
    ];
    let ch = ChannelRealization::from_paths(&cfg, vec![paths]).unwrap();
    let obs = observe_compressed(&ch, &ens, &mut make_rng(0), 0.0).unwrap();
    let est = &bsa_estimate(&obs, &ens, &cfg, BsaOptions::default()).unwrap()[0];
    assert_eq!(est.physical_doas, vec![-theta, theta]);
}

#[test]
fn off_grid_doa_lands_within_one_step() {
    let cfg = desk_one_path();
    let step = 2.0 / cfg.grid_size as f64;
    for seed in 0..50u64 {
        let ens = SensingEnsemble::new(&cfg, &mut make_rng(seed)).unwrap();
        let ch = generate_channel(&cfg, &mut make_rng(seed + 1000), None).unwrap();
        let obs = observe_compressed(&ch, &ens, &mut make_rng(0), 0.0).unwrap();
        let est = &bsa_estimate(&obs, &ens, &cfg, BsaOptions::default()).unwrap()[0];
        let err = (est.physical_doas[0] - ch.physical_doas(0)[0]).abs();
        assert!(err <= step, "seed {seed}: error {err}");
    }
}

#[test]
fn repeated_peak_is_padded_and_flagged() {
    // A silent channel yields all-zero spectra, so every iteration picks cell 0.
    let cfg = SystemConfig { num_paths: 2, num_users: 1, ..SystemConfig::desk() };
    let ens = SensingEnsemble::new(&cfg, &mut make_rng(5)).unwrap();
    let path = PhysicalPath::new(0.3, C64::new(0.0, 0.0), 0.0).unwrap();
    let ch = ChannelRealization::from_paths(&cfg, vec![vec![path; 2]]).unwrap();
    let obs = observe_compressed(&ch, &ens, &mut make_rng(0), 0.0).unwrap();
    let est = &bsa_estimate(&obs, &ens, &cfg, BsaOptions::default()).unwrap()[0];
    assert_eq!(est.doa_indices, vec![0, 0]);
    assert!(est.doas_padded);
    let first = ens.grid_angles()[0];
    assert_eq!(est.physical_doas, vec![first, first]);
}
