//! Synthetic element-output data: narrowband plane waves, AWGN, snapshot
//! matrices and sample covariances.
//!
//! Random numbers come from ChaCha20 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Each consumer draws from its own ChaCha stream so
//! that adding one kind of randomness never shifts another:
//!
//! | stream | consumer                                   |
//! |--------|--------------------------------------------|
//! | 1      | receiver noise in [`collect_plane_waves`]  |
//! | 2      | noise added by [`apply_awgn`]              |
//! | 3      | per-trial source phases (scenario level)   |
//!
//! Noise is drawn snapshot-major, element-minor, real part before
//! imaginary part, so element `n` of snapshot `l` consumes normals
//! `2(l·N + n)` and `2(l·N + n) + 1` of its stream.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{ArrayLayout, Direction};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitize, outer_gram, trace_re, CMatrix, ZERO};

/// Baseband sample rate of simulated snapshots.
pub const SAMPLE_RATE_HZ: f64 = 1.0e6;

pub const NOISE_STREAM: u64 = 1;
pub const AWGN_STREAM: u64 = 2;
pub const PHASE_STREAM: u64 = 3;

/// Default diagonal loading relative to the average diagonal of `R̂`.
pub const DEFAULT_LOADING_FACTOR: f64 = 1e-6;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives independent per-trial seeds from a base seed.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    let mut z = base ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Waveform {
    /// `amplitude · exp(j(2π f t + phase))` sampled at [`SAMPLE_RATE_HZ`].
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Caller-supplied baseband samples; must cover every snapshot.
    Samples(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub direction: Direction,
    pub waveform: Waveform,
    /// Line-of-sight channel gain applied to the whole waveform.
    pub channel_gain: Complex64,
}

impl SourceSpec {
    pub fn sinusoid(direction: Direction, power_db: f64, frequency: f64, phase: f64) -> Self {
        Self {
            direction,
            waveform: Waveform::Sinusoid {
                amplitude: 10f64.powf(power_db / 20.0),
                frequency,
                phase,
            },
            channel_gain: Complex64::new(1.0, 0.0),
        }
    }

    fn validate(&self, n_snapshots: usize) -> Result<()> {
        match &self.waveform {
            Waveform::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                if !(*amplitude >= 0.0) || !amplitude.is_finite() {
                    return invalid("source amplitude must be finite and >= 0");
                }
                if !(*frequency > 0.0) || !frequency.is_finite() || !phase.is_finite() {
                    return invalid("source frequency must be > 0 and phase finite");
                }
            }
            Waveform::Samples(s) => {
                if s.len() < n_snapshots {
                    return invalid(format!(
                        "source supplies {} samples but {n_snapshots} snapshots were requested",
                        s.len()
                    ));
                }
                if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return invalid("source samples contain NaN or infinite values");
                }
            }
        }
        if !self.channel_gain.re.is_finite() || !self.channel_gain.im.is_finite() {
            return invalid("channel gain must be finite");
        }
        Ok(())
    }

    fn sample(&self, l: usize) -> Complex64 {
        let s = match &self.waveform {
            Waveform::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Complex64::from_polar(
                *amplitude,
                2.0 * PI * frequency * l as f64 / SAMPLE_RATE_HZ + phase,
            ),
            Waveform::Samples(s) => s[l],
        };
        s * self.channel_gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

/// Element outputs: one row per element, one column per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: CMatrix,
    pub sample_rate: f64,
}

impl SnapshotMatrix {
    pub fn elements(&self) -> usize {
        self.data.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }

    /// Mean power per entry, `‖X‖²_F / (N L)`.
    pub fn mean_power(&self) -> f64 {
        self.data.norm_squared() / (self.data.len() as f64)
    }
}

/// Hermitian sample covariance with its diagonal loading.
///
/// When built from snapshots the matrix keeps them, so that solvers can
/// factor the data directly instead of the squared-up covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub data: CMatrix,
    pub loading: f64,
    /// Snapshots `X` with `data = X Xᴴ / L + loading · I`.
    pub snapshots: Option<CMatrix>,
}

impl CovarianceMatrix {
    /// Wraps an explicit Hermitian matrix (e.g. a true covariance).
    pub fn from_matrix(mut data: CMatrix) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return invalid("covariance must be square");
        }
        let scale = crate::linalg::max_abs(&data).max(1.0);
        let skew = (&data - data.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if skew > 1e-12 * scale {
            return invalid(format!("covariance is not Hermitian (skew {skew:.3e})"));
        }
        hermitize(&mut data);
        Ok(Self {
            data,
            loading: 0.0,
            snapshots: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.scale(c),
            loading: self.loading * c,
            snapshots: self.snapshots.as_ref().map(|x| x.scale(c.sqrt())),
        }
    }
}

/// Simulates `X[:, l] = Σ_k a(φ_k, θ_k) s_k[l] + n[l]` where `a` holds the
/// unnormalized element responses (gain included) and `n` is circular
/// complex Gaussian noise with covariance `variance · I`.
pub fn collect_plane_waves(
    layout: &ArrayLayout,
    sources: &[SourceSpec],
    n_snapshots: usize,
    noise: NoiseSpec,
) -> Result<SnapshotMatrix> {
    if n_snapshots == 0 {
        return invalid("at least one snapshot is required");
    }
    if !(noise.variance >= 0.0) || !noise.variance.is_finite() {
        return invalid("noise variance must be finite and >= 0");
    }
    if sources.is_empty() && noise.variance == 0.0 {
        return invalid("no sources and no noise: nothing to simulate");
    }
    for s in sources {
        s.validate(n_snapshots)?;
    }

    let n = layout.len();
    let mut data = CMatrix::from_element(n, n_snapshots, ZERO);
    for src in sources {
        let a = layout.response(src.direction.phi, src.direction.theta);
        for l in 0..n_snapshots {
            let s = src.sample(l);
            let mut col = data.column_mut(l);
            col.axpy(s, &a, Complex64::new(1.0, 0.0));
        }
    }
    if noise.variance > 0.0 {
        add_noise(
            &mut data,
            noise.variance,
            &mut stream_rng(noise.seed, NOISE_STREAM),
        );
    }
    Ok(SnapshotMatrix {
        data,
        sample_rate: SAMPLE_RATE_HZ,
    })
}

fn add_noise(data: &mut CMatrix, variance: f64, rng: &mut ChaCha20Rng) {
    let sigma = (variance / 2.0).sqrt();
    // nalgebra storage is column-major, i.e. snapshot-major here.
    for z in data.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(sigma * re, sigma * im);
    }
}

/// `1e-6 · tr(R̂)/N`
pub fn default_loading(r: &CMatrix) -> f64 {
    DEFAULT_LOADING_FACTOR * trace_re(r) / r.nrows() as f64
}

/// `R̂ = X Xᴴ / L + loading · I`, exactly Hermitian.
pub fn sample_covariance(x: &SnapshotMatrix, loading: f64) -> Result<CovarianceMatrix> {
    if x.snapshots() == 0 {
        return invalid("sample covariance needs at least one snapshot");
    }
    if !(loading >= 0.0) || !loading.is_finite() {
        return invalid("diagonal loading must be finite and >= 0");
    }
    let mut data = outer_gram(&x.data).unscale(x.snapshots() as f64);
    for i in 0..data.nrows() {
        data[(i, i)].re += loading;
    }
    Ok(CovarianceMatrix {
        data,
        loading,
        snapshots: Some(x.data.clone()),
    })
}

/// Sample covariance with the default loading of `1e-6 · tr(XXᴴ/L)/N`.
pub fn sample_covariance_default(x: &SnapshotMatrix) -> Result<CovarianceMatrix> {
    let unloaded = outer_gram(&x.data).unscale(x.snapshots() as f64);
    sample_covariance(x, default_loading(&unloaded))
}

/// Adds white Gaussian noise at `snr_db` relative to the mean entry power
/// of `x`. `snr_db = +∞` returns `x` unchanged.
pub fn apply_awgn(x: &SnapshotMatrix, snr_db: f64, seed: u64) -> Result<SnapshotMatrix> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if snr_db.is_nan() {
        return invalid("SNR is NaN");
    }
    let power = x.mean_power();
    if !(power > 0.0) {
        return invalid("cannot set an SNR on an all-zero signal");
    }
    let variance = power / 10f64.powf(snr_db / 10.0);
    let mut out = x.clone();
    add_noise(&mut out.data, variance, &mut stream_rng(seed, AWGN_STREAM));
    Ok(out)
}

/// Sidecar written next to a binary snapshot dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

pub const SNAPSHOT_FORMAT: &str = "c128le-interleaved-rowmajor";

/// Writes little-endian interleaved `re, im` f64 pairs in row-major order,
/// plus a JSON sidecar at `<path>.json`.
pub fn write_snapshots(path: &Path, x: &SnapshotMatrix, seed: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(x.data.len() * 16);
    for r in 0..x.elements() {
        for c in 0..x.snapshots() {
            let z = x.data[(r, c)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    let sidecar = SnapshotSidecar {
        format: SNAPSHOT_FORMAT.into(),
        rows: x.elements(),
        cols: x.snapshots(),
        sample_rate: x.sample_rate,
        seed,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_snapshots(path: &Path) -> Result<(SnapshotMatrix, SnapshotSidecar)> {
    let sidecar: SnapshotSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.format != SNAPSHOT_FORMAT {
        return invalid(format!("unsupported snapshot format `{}`", sidecar.format));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != sidecar.rows * sidecar.cols * 16 {
        return Err(Error::InvalidConfig(format!(
            "snapshot file has {} bytes, sidecar implies {}",
            bytes.len(),
            sidecar.rows * sidecar.cols * 16
        )));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    let data = CMatrix::from_fn(sidecar.rows, sidecar.cols, |r, c| {
        let k = 2 * (r * sidecar.cols + c);
        Complex64::new(f(k), f(k + 1))
    });
    Ok((
        SnapshotMatrix {
            data,
            sample_rate: sidecar.sample_rate,
        },
        sidecar,
    ))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{build_hybrid_layout, steering_vector, ArrayParams};
    use approx::assert_relative_eq;

    fn small_layout() -> ArrayLayout {
        build_hybrid_layout(&ArrayParams {
            n_per_loop: 6,
            loops_per_cylinder: 1,
            n_cylinders: 2,
            circular_elements: 4,
            elements_per_cylinder: None,
            ..ArrayParams::table1()
        })
        .unwrap()
    }

    #[test]
    fn nothing_to_simulate_is_rejected() {
        let layout = small_layout();
        assert!(collect_plane_waves(
            &layout,
            &[],
            10,
            NoiseSpec {
                variance: 0.0,
                seed: 1
            }
        )
        .is_err());
    }

    #[test]
    fn zero_amplitude_source_gives_zero_matrix() {
        let layout = small_layout();
        let src = SourceSpec {
            direction: Direction::from_deg(45.0, 45.0),
            waveform: Waveform::Sinusoid {
                amplitude: 0.0,
                frequency: 1e3,
                phase: 0.0,
            },
            channel_gain: Complex64::new(1.0, 0.0),
        };
        let x = collect_plane_waves(
            &layout,
            &[src],
            5,
            NoiseSpec {
                variance: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert!(x.data.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn single_source_is_rank_one_along_the_steering_vector() {
        let layout = small_layout();
        let dir = Direction::from_deg(0.0, 0.0);
        let src = SourceSpec::sinusoid(dir, 0.0, 1.0e4, 0.3);
        let x = collect_plane_waves(
            &layout,
            &[src],
            8,
            NoiseSpec {
                variance: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        let a = steering_vector(&layout, dir.phi, dir.theta).unwrap().values;
        for l in 0..8 {
            let col = x.data.column(l).into_owned();
            let proj = crate::linalg::dotc(&a, &col);
            let resid = &col - &a * proj;
            assert!(resid.norm() < 1e-12 * col.norm());
        }
    }

    #[test]
    fn rejects_nan_samples() {
        let layout = small_layout();
        let src = SourceSpec {
            direction: Direction::from_deg(45.0, 45.0),
            waveform: Waveform::Samples(vec![Complex64::new(f64::NAN, 0.0); 4]),
            channel_gain: Complex64::new(1.0, 0.0),
        };
        assert!(collect_plane_waves(
            &layout,
            &[src],
            4,
            NoiseSpec {
                variance: 0.1,
                seed: 1
            }
        )
        .is_err());
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let layout = small_layout();
        let src = SourceSpec::sinusoid(Direction::from_deg(45.0, 30.0), 0.0, 2.0e4, 0.0);
        let noise = NoiseSpec {
            variance: 0.5,
            seed: 99,
        };
        let a = collect_plane_waves(&layout, std::slice::from_ref(&src), 50, noise).unwrap();
        let b = collect_plane_waves(&layout, std::slice::from_ref(&src), 50, noise).unwrap();
        assert_eq!(a, b);
        let c = collect_plane_waves(&layout, &[src], 50, NoiseSpec { seed: 100, ..noise }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn covariance_of_zero_is_loading_identity() {
        let x = SnapshotMatrix {
            data: CMatrix::from_element(3, 4, ZERO),
            sample_rate: SAMPLE_RATE_HZ,
        };
        let r = sample_covariance(&x, 0.25).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.25 } else { 0.0 };
                assert_eq!(r.data[(i, j)], Complex64::new(expected, 0.0));
            }
        }
    }

    #[test]
    fn covariance_of_single_snapshot_is_outer_product() {
        let col = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.25),
            Complex64::new(0.0, -1.0),
        ];
        let x = SnapshotMatrix {
            data: CMatrix::from_column_slice(3, 1, &col),
            sample_rate: SAMPLE_RATE_HZ,
        };
        let r = sample_covariance(&x, 0.1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut expected = col[i] * col[j].conj();
                if i == j {
                    expected.re += 0.1;
                }
                assert!((r.data[(i, j)] - expected).norm() < 1e-15);
            }
        }
        assert_eq!(r.data, r.data.adjoint());
    }

    #[test]
    fn awgn_infinite_snr_is_identity_and_zero_signal_errors() {
        let layout = small_layout();
        let src = SourceSpec::sinusoid(Direction::from_deg(45.0, 45.0), 0.0, 1.0e4, 0.0);
        let x = collect_plane_waves(
            &layout,
            &[src],
            16,
            NoiseSpec {
                variance: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(apply_awgn(&x, f64::INFINITY, 3).unwrap(), x);
        let zero = SnapshotMatrix {
            data: CMatrix::from_element(2, 2, ZERO),
            sample_rate: SAMPLE_RATE_HZ,
        };
        assert!(apply_awgn(&zero, 10.0, 3).is_err());
    }

    #[test]
    fn awgn_hits_requested_power() {
        // unit-power constant signal, one element, 10 000 snapshots
        let x = SnapshotMatrix {
            data: CMatrix::from_element(1, 10_000, Complex64::new(1.0, 0.0)),
            sample_rate: SAMPLE_RATE_HZ,
        };
        for (snr, expected) in [(0.0, 1.0), (10.0, 0.1)] {
            let y = apply_awgn(&x, snr, 11).unwrap();
            let noise_power = (&y.data - &x.data).norm_squared() / 10_000.0;
            assert_relative_eq!(noise_power, expected, max_relative = 0.05);
            let measured_snr = 10.0 * (x.mean_power() / noise_power).log10();
            assert!((measured_snr - snr).abs() < 0.5);
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = std::env::temp_dir().join(format!("qsbeam-snap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.bin");
        let x = SnapshotMatrix {
            data: CMatrix::from_fn(3, 5, |r, c| Complex64::new(r as f64 - 0.5, c as f64 * 1e-3)),
            sample_rate: SAMPLE_RATE_HZ,
        };
        write_snapshots(&path, &x, 42).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // row-major: second pair is (row 0, col 1)
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), -0.5);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1e-3);
        let (y, side) = read_snapshots(&path).unwrap();
        assert_eq!(y, x);
        assert_eq!(side.seed, 42);
        std::fs::remove_dir_all(&dir).ok();
    }
}
