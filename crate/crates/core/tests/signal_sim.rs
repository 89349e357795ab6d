use std::f64::consts::PI;

use num_complex::Complex64;
use qsbeam::array_geometry::{build_hybrid_layout, ArrayLayout, ArrayParams, Direction};
use qsbeam::linalg::{hermitian_eigenvalues, outer_gram, CMatrix};
use qsbeam::signal_sim::*;

fn table1() -> ArrayLayout {
    build_hybrid_layout(&ArrayParams::table1()).unwrap()
}

fn three_sources() -> Vec<SourceSpec> {
    [
        (45.0, 0.05e6, 0.3),
        (30.0, 0.15e6, 1.1),
        (50.0, 0.25e6, 2.0),
    ]
    .iter()
    .map(|&(az, f, ph)| SourceSpec::sinusoid(Direction::from_deg(45.0, az), 0.0, f, ph))
    .collect()
}

/// `Σ_k g_n e^{-jK·r_n} A_k e^{j(2πf_k l/fs + φ_k)}`, one element and snapshot at a time.
fn naive_signal(layout: &ArrayLayout, specs: &[(f64, f64, f64)], l_total: usize) -> CMatrix {
    let lambda = layout.wavelength;
    CMatrix::from_fn(layout.len(), l_total, |n, l| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(az, f, ph) in specs {
            let (phi, theta) = (PI / 4.0, f64::to_radians(az));
            let [x, y, z] = layout.elements[n].position;
            let k = 2.0 * PI / lambda;
            let dot =
                k * (phi.sin() * theta.sin() * x + phi.sin() * theta.cos() * y + phi.cos() * z);
            let s = Complex64::from_polar(1.0, 2.0 * PI * f * l as f64 / SAMPLE_RATE_HZ + ph);
            acc += Complex64::from_polar(1.0, -dot) * s;
        }
        acc
    })
}

#[test]
fn noiseless_three_sources_matches_per_element_oracle() {
    let layout = table1();
    let x = collect_plane_waves(
        &layout,
        &three_sources(),
        50,
        NoiseSpec {
            variance: 0.0,
            seed: 7,
        },
    )
    .unwrap();
    let oracle = naive_signal(
        &layout,
        &[
            (45.0, 0.05e6, 0.3),
            (30.0, 0.15e6, 1.1),
            (50.0, 0.25e6, 2.0),
        ],
        50,
    );
    let worst = (&x.data - &oracle)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-11, "worst {worst}");
}

#[test]
fn three_sources_with_noise_has_three_dominant_directions() {
    let layout = table1();
    let x = collect_plane_waves(
        &layout,
        &three_sources(),
        200,
        NoiseSpec {
            variance: 0.1,
            seed: 7,
        },
    )
    .unwrap();
    let ev = hermitian_eigenvalues(&(outer_gram(&x.data) / Complex64::from(200.0)));
    let n = ev.len();
    // each unit source carries its full power through the array
    assert!(ev[n - 3] > 10.0, "third eigenvalue {}", ev[n - 3]);
    assert!(ev[n - 4] < 1.0, "fourth eigenvalue {}", ev[n - 4]);
}

#[test]
fn covariance_eigen_profile() {
    let layout = table1();
    let sigma2 = 0.01;
    let x = collect_plane_waves(
        &layout,
        &three_sources(),
        1000,
        NoiseSpec {
            variance: sigma2,
            seed: 11,
        },
    )
    .unwrap();
    let cov = sample_covariance_default(&x).unwrap();
    let ev = hermitian_eigenvalues(&cov.data);
    let n = ev.len();
    assert!(ev[n - 3] > 100.0 * sigma2);
    // the noise bulk of a 140 x 1000 sample covariance lies in
    // σ²(1 ± √(140/1000))²
    let ratio: f64 = 140.0 / 1000.0;
    let lo = sigma2 * (1.0 - ratio.sqrt()).powi(2) * 0.9 + cov.loading;
    let hi = sigma2 * (1.0 + ratio.sqrt()).powi(2) * 1.1 + cov.loading;
    for &v in &ev[..n - 3] {
        assert!(
            v > lo && v < hi,
            "noise eigenvalue {v} outside [{lo}, {hi}]"
        );
    }
    let skew = (&cov.data - cov.data.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    assert_eq!(skew, 0.0);
}

#[test]
fn pure_noise_covariance_off_diagonal_shrinks() {
    let mut p = ArrayParams::table1();
    p.n_per_loop = 8;
    p.loops_per_cylinder = 1;
    p.n_cylinders = 1;
    p.circular_elements = 0;
    p.elements_per_cylinder = None;
    let layout = build_hybrid_layout(&p).unwrap();
    let sigma2 = 2.0;
    let l = 10_000;
    let x = collect_plane_waves(
        &layout,
        &[],
        l,
        NoiseSpec {
            variance: sigma2,
            seed: 5,
        },
    )
    .unwrap();
    let r = sample_covariance(&x, 0.0).unwrap().data;
    let bound = 5.0 * sigma2 / (l as f64).sqrt();
    for i in 0..r.nrows() {
        assert!((r[(i, i)].re - sigma2).abs() < bound);
        for j in 0..r.ncols() {
            if i != j {
                assert!(r[(i, j)].norm() <= bound, "({i},{j}) = {}", r[(i, j)]);
            }
        }
    }
}

#[test]
fn awgn_power_and_snr() {
    let layout = table1();
    let clean = collect_plane_waves(
        &layout,
        &three_sources()[..1],
        10_000,
        NoiseSpec {
            variance: 0.0,
            seed: 0,
        },
    )
    .unwrap();
    let clean_power = clean.mean_power();
    // isotropic unit source: every entry has unit magnitude
    assert!((clean_power - 1.0).abs() < 1e-12);
    for (snr, expect) in [(0.0, 1.0), (10.0, 0.1)] {
        let noisy = apply_awgn(&clean, snr, 3).unwrap();
        let noise = SnapshotMatrix {
            data: &noisy.data - &clean.data,
            sample_rate: clean.sample_rate,
        };
        let p = noise.mean_power();
        assert!(
            (p / expect - 1.0).abs() < 0.05,
            "snr {snr}: noise power {p}"
        );
        let measured = 10.0 * (clean_power / p).log10();
        assert!((measured - snr).abs() < 0.5);
    }
}

#[test]
fn seeds_reproduce_bit_for_bit() {
    let layout = table1();
    let a = collect_plane_waves(
        &layout,
        &three_sources(),
        64,
        NoiseSpec {
            variance: 0.3,
            seed: 99,
        },
    )
    .unwrap();
    let b = collect_plane_waves(
        &layout,
        &three_sources(),
        64,
        NoiseSpec {
            variance: 0.3,
            seed: 99,
        },
    )
    .unwrap();
    let c = collect_plane_waves(
        &layout,
        &three_sources(),
        64,
        NoiseSpec {
            variance: 0.3,
            seed: 100,
        },
    )
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        apply_awgn(&a, 5.0, 1).unwrap(),
        apply_awgn(&b, 5.0, 1).unwrap()
    );
}

#[test]
fn trial_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..10_000).map(|k| trial_seed(42, k)).collect();
    assert_eq!(seeds.len(), 10_000);
}
