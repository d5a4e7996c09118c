mod common;

use common::*;
use molkernel::dataset::{Dataset, FeatureDataset};
use molkernel::kernels::{cross, fingerprint_kernel, gram, KernelConfig, KernelFamily};
use molkernel::spectral::eigendecompose;
use proptest::prelude::*;

fn random_fingerprints(n: usize, d: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut r = rng(seed);
    let mut rows: Vec<Vec<bool>> = (0..n)
        .map(|i| random_bools(d, 0.05 + 0.4 * (i % 5) as f64 / 5.0, &mut r))
        .collect();
    // Edge cases: all zeros and all ones.
    rows[0] = vec![false; d];
    rows[1] = vec![true; d];
    rows
}

#[test]
fn every_fingerprint_family_matches_the_oracle() {
    let rows = random_fingerprints(50, 128, 7);
    let ds = Dataset::Fingerprint(fingerprint_dataset(&rows));
    for family in KernelFamily::FINGERPRINT {
        let cfg = KernelConfig::new(family);
        let kx = cross(&ds, &ds, &cfg).unwrap();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let want = fingerprint_oracle(family, &rows[i], &rows[j]);
                assert_eq!(kx.values[(i, j)], want, "{family} ({i},{j})");
            }
        }
    }
}

#[test]
fn gram_upper_triangle_matches_the_oracle() {
    let rows = random_fingerprints(30, 64, 8);
    let ds = Dataset::Fingerprint(fingerprint_dataset(&rows));
    for family in KernelFamily::FINGERPRINT {
        let k = gram(&ds, &KernelConfig::new(family)).unwrap();
        for i in 0..rows.len() {
            for j in i..rows.len() {
                assert_eq!(
                    k.values[(i, j)],
                    fingerprint_oracle(family, &rows[i], &rows[j]),
                    "{family}"
                );
            }
        }
    }
}

#[test]
fn amplitude_scales_by_its_square() {
    let rows = random_fingerprints(10, 32, 9);
    let bits = fingerprint_dataset(&rows);
    for family in KernelFamily::FINGERPRINT {
        let cfg = KernelConfig::new(family).with_sigma_f(3.0);
        let v = fingerprint_kernel(&bits.rows[3], &bits.rows[4], &cfg).unwrap();
        let want = 9.0 * fingerprint_oracle(family, &rows[3], &rows[4]);
        assert!((v - want).abs() <= 1e-12 * want.abs().max(1.0), "{family}");
    }
}

fn min_eig_ratio(k: &molkernel::kernels::KernelMatrix) -> f64 {
    let eig = eigendecompose(k).unwrap();
    eig.mu[eig.n() - 1] / eig.mu[0]
}

#[test]
fn psd_families_have_no_significant_negative_eigenvalues() {
    let rows = random_fingerprints(80, 256, 10);
    let fp = Dataset::Fingerprint(fingerprint_dataset(&rows));
    for family in [KernelFamily::Tanimoto, KernelFamily::MinMax] {
        let k = gram(&fp, &KernelConfig::new(family)).unwrap();
        assert!(min_eig_ratio(&k) >= -1e-8, "{family}");
    }
    let mut r = rng(11);
    let feats: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..5).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let ids = (0..80).map(|i| format!("x{i}")).collect();
    let ds = Dataset::Feature(FeatureDataset::new(ids, feats).unwrap());
    for family in [KernelFamily::Gaussian, KernelFamily::Laplacian] {
        let k = gram(&ds, &KernelConfig::new(family).with_length_scale(1.5)).unwrap();
        assert!(min_eig_ratio(&k) >= -1e-8, "{family}");
    }
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_families_are_symmetric(
        x1 in prop::collection::vec(any::<bool>(), 40),
        x2 in prop::collection::vec(any::<bool>(), 40),
    ) {
        let ds = fingerprint_dataset(&[x1.clone(), x2.clone()]);
        for family in KernelFamily::FINGERPRINT {
            if matches!(family, KernelFamily::RogersTanimoto | KernelFamily::SokalSneath) {
                continue;
            }
            let cfg = KernelConfig::new(family);
            let a = fingerprint_kernel(&ds.rows[0], &ds.rows[1], &cfg).unwrap();
            let b = fingerprint_kernel(&ds.rows[1], &ds.rows[0], &cfg).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, fingerprint_oracle(family, &x1, &x2));
        }
    }

    #[test]
    fn normalized_families_stay_in_unit_interval(
        x1 in prop::collection::vec(any::<bool>(), 40),
        x2 in prop::collection::vec(any::<bool>(), 40),
    ) {
        let ds = fingerprint_dataset(&[x1, x2]);
        for family in [
            KernelFamily::Tanimoto,
            KernelFamily::Dice,
            KernelFamily::BraunBlanquet,
            KernelFamily::Faith,
            KernelFamily::MinMax,
            KernelFamily::RusselRao,
        ] {
            let v = fingerprint_kernel(&ds.rows[0], &ds.rows[1], &KernelConfig::new(family)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v), "{} {}", family, v);
        }
    }
}
