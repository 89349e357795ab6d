#![allow(dead_code)]
pub mod svm_oracle;

use num_complex::Complex64;
use qsbeam::array_geometry::{build_hybrid_layout, ArrayLayout, ArrayParams, Direction};
use qsbeam::linalg::{CMatrix, CVector};
use qsbeam::signal_sim::{
    collect_plane_waves, sample_covariance_default, CovarianceMatrix, NoiseSpec, SourceSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ring(n: usize) -> ArrayLayout {
    let mut p = ArrayParams::table1();
    p.n_per_loop = n;
    p.loops_per_cylinder = 1;
    p.n_cylinders = 1;
    p.circular_elements = 0;
    p.elements_per_cylinder = None;
    build_hybrid_layout(&p).unwrap()
}

pub fn table1() -> ArrayLayout {
    build_hybrid_layout(&ArrayParams::table1()).unwrap()
}

/// A random narrowband scene: array, source directions (first is desired,
/// the rest at least 8° away from each other), and its sample covariance.
pub struct RandomScene {
    pub layout: ArrayLayout,
    pub directions: Vec<Direction>,
    pub cov: CovarianceMatrix,
}

pub fn random_scene(r: &mut ChaCha8Rng) -> RandomScene {
    let layout = if r.random_bool(0.2) {
        table1()
    } else {
        ring(r.random_range(8..=24))
    };
    let k = r.random_range(1..=3);
    let mut az: Vec<f64> = Vec::new();
    while az.len() < k {
        let a: f64 = r.random_range(0.0..90.0);
        if az.iter().all(|b| (a - b).abs() > 8.0) {
            az.push(a);
        }
    }
    let el = r.random_range(30.0..80.0);
    let directions: Vec<Direction> = az.iter().map(|&a| Direction::from_deg(el, a)).collect();
    let sources: Vec<SourceSpec> = directions
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            SourceSpec::sinusoid(
                d,
                r.random_range(-5.0..5.0),
                (0.05 + 0.1 * i as f64) * 1e6,
                r.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let snapshots = r.random_range(50..300);
    let x = collect_plane_waves(
        &layout,
        &sources,
        snapshots,
        NoiseSpec {
            variance: 10f64.powf(-r.random_range(0.0..20.0) / 10.0),
            seed: r.random(),
        },
    )
    .unwrap();
    let cov = sample_covariance_default(&x).unwrap();
    RandomScene {
        layout,
        directions,
        cov,
    }
}

pub fn random_cvector(r: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| {
        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    })
}

pub fn random_cmatrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    })
}
