//! End-to-end direction finding and null steering.
//!
//! A scenario is simulated, its sample covariance is turned into a Capon
//! spectrum over the class grid, and the QS-SVM picks one class per source.
//! After each pick the found direction is projected out of the covariance
//! and the spectrum is recomputed, so the k-th pick sees the scene without
//! the sources already located. LCMV weights with a unit response toward
//! the desired estimate and nulls toward the rest give the synthesized
//! pattern.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{
    build_hybrid_layout, steering_vector, ArrayLayout, ArrayParams, Direction,
};
use crate::beamformer::{
    beam_pattern, lcmv_weights, theta_sweep, BeamPattern, BeamWeights, LcmvConstraints,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{trace_re, CMatrix, CVector};
use crate::qs_svm::{
    capon_spectrum, train_multiclass, LabeledDataset, QsSvmHyperparams, QsSvmModel, VoteTally,
    SPECTRUM_FEATURE_VERSION,
};
use crate::signal_sim::{
    collect_plane_waves, sample_covariance, stream_rng, trial_seed, CovarianceMatrix, NoiseSpec,
    SnapshotMatrix, SourceSpec, PHASE_STREAM, SAMPLE_RATE_HZ,
};

/// Inclusive angle range `start:stop:step` in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AngleRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return invalid(format!(
                "angle range {start}:{stop}:{step} needs step > 0 and stop >= start"
            ));
        }
        Ok(Self { start, stop, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.start - 1e-9 && angle <= self.stop + 1e-9
    }
}

impl FromStr for AngleRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("angle range `{s}` is not start:stop:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Self::new(v[0], v[1], v[2])
    }
}

impl fmt::Display for AngleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl Serialize for AngleRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AngleRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub az_deg: f64,
    pub el_deg: f64,
    #[serde(default)]
    pub power_db: f64,
    /// Baseband tone; defaults to `(0.05 + 0.1·k)·fs` for source `k`, which
    /// makes the tones orthogonal over any multiple of 10 snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
}

impl SourceConfig {
    pub fn new(az_deg: f64, el_deg: f64, power_db: f64) -> Self {
        Self {
            az_deg,
            el_deg,
            power_db,
            frequency_hz: None,
        }
    }

    pub fn direction(&self) -> Direction {
        Direction::from_deg(self.el_deg, self.az_deg)
    }
}

pub fn default_tone(k: usize) -> f64 {
    (0.05 + 0.1 * k as f64) * SAMPLE_RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub samples_per_class: usize,
    /// Training SNRs are drawn uniformly from this range (dB).
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Up to this many extra sources are added to each sample and
    /// projected out before featurization.
    pub max_companions: usize,
    /// Snapshots per training sample; defaults to the scenario's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<usize>,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 12,
            snr_db_min: -10.0,
            snr_db_max: 25.0,
            max_companions: 2,
            snapshots: None,
            eta: 10.0,
            lambda: 1e-3,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn hyperparams(&self) -> Result<QsSvmHyperparams> {
        QsSvmHyperparams::new(self.eta, self.lambda)
    }
}

fn default_array() -> ArrayParams {
    ArrayParams::table1()
}

fn default_class_grid() -> AngleRange {
    AngleRange::new(0.0, 90.0, 5.0).expect("valid")
}

fn default_pattern_grid() -> AngleRange {
    AngleRange::new(0.0, 90.0, 0.25).expect("valid")
}

fn default_el() -> f64 {
    45.0
}

/// Beamforming loading relative to `tr/N`. Near the noise floor, so the
/// finite-sample desired-signal cancellation of the unloaded LCMV does not
/// pull the main lobe below its own sidelobes.
pub const SYNTHESIS_LOADING_FACTOR: f64 = 0.1;

fn default_loading() -> f64 {
    SYNTHESIS_LOADING_FACTOR
}

fn default_feature_loading() -> f64 {
    1e-2
}

fn default_snapshots() -> usize {
    1000
}

fn default_snr() -> f64 {
    10.0
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_array")]
    pub array: ArrayParams,
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub desired_index: usize,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Azimuth classes of the DoA classifier.
    #[serde(default = "default_class_grid")]
    pub class_grid: AngleRange,
    /// Elevation of the class grid and of pattern cuts.
    #[serde(default = "default_el")]
    pub grid_el_deg: f64,
    #[serde(default = "default_pattern_grid")]
    pub pattern_grid: AngleRange,
    /// Diagonal loading of the beamforming covariance, relative to `tr/N`.
    #[serde(default = "default_loading")]
    pub loading_factor: f64,
    /// Diagonal loading of the covariance behind the spectrum features.
    #[serde(default = "default_feature_loading")]
    pub feature_loading_factor: f64,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl Scenario {
    /// Desired source at 45° azimuth with interferers at 30° and 50°, all
    /// at 45° elevation, on the hybrid array.
    pub fn fig3() -> Self {
        Self {
            array: ArrayParams::table1(),
            sources: vec![
                SourceConfig::new(45.0, 45.0, 0.0),
                SourceConfig::new(30.0, 45.0, 0.0),
                SourceConfig::new(50.0, 45.0, 0.0),
            ],
            desired_index: 0,
            snr_db: default_snr(),
            snapshots: default_snapshots(),
            seed: default_seed(),
            class_grid: default_class_grid(),
            grid_el_deg: default_el(),
            pattern_grid: default_pattern_grid(),
            loading_factor: default_loading(),
            feature_loading_factor: default_feature_loading(),
            training: TrainingConfig::default(),
        }
    }

    /// Single-source acquisition scene for throughput sweeps: one snapshot
    /// of a source at 45° on a single 8-element ring. Single-snapshot
    /// spectra are noisy, so training draws 40 samples per class.
    pub fn acquisition() -> Self {
        let mut array = ArrayParams::table1();
        array.n_per_loop = 8;
        array.loops_per_cylinder = 1;
        array.n_cylinders = 1;
        array.circular_elements = 0;
        array.elements_per_cylinder = None;
        Self {
            array,
            sources: vec![SourceConfig::new(45.0, 45.0, 0.0)],
            snapshots: 1,
            training: TrainingConfig {
                samples_per_class: 40,
                ..TrainingConfig::default()
            },
            ..Self::fig3()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.sources.is_empty() {
            return invalid("scenario needs at least one source");
        }
        if self.desired_index >= self.sources.len() {
            return invalid(format!(
                "desired_index {} out of range for {} sources",
                self.desired_index,
                self.sources.len()
            ));
        }
        if self.snapshots == 0 {
            return invalid("snapshots must be >= 1");
        }
        if self.snr_db.is_nan() {
            return invalid("snr_db is NaN");
        }
        for s in &self.sources {
            if !self.class_grid.contains(s.az_deg) {
                return invalid(format!(
                    "source azimuth {}° lies outside the class grid {}",
                    s.az_deg, self.class_grid
                ));
            }
            if !s.el_deg.is_finite() || !s.power_db.is_finite() {
                return invalid("source angles and power must be finite");
            }
            if let Some(f) = s.frequency_hz {
                if !(f > 0.0) || !f.is_finite() {
                    return invalid("source frequency must be positive");
                }
            }
        }
        if self.class_grid.values().len() < 2 {
            return invalid("class grid needs at least two angles");
        }
        if !(self.loading_factor >= 0.0) || !(self.feature_loading_factor > 0.0) {
            return invalid("loading factors must be non-negative (feature loading positive)");
        }
        if self.training.samples_per_class == 0
            || self.training.snr_db_min > self.training.snr_db_max
        {
            return invalid("training needs samples_per_class >= 1 and snr_db_min <= snr_db_max");
        }
        self.training.hyperparams()?;
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    pub fn layout(&self) -> Result<ArrayLayout> {
        build_hybrid_layout(&self.array)
    }

    pub fn desired(&self) -> &SourceConfig {
        &self.sources[self.desired_index]
    }

    /// Source waveforms for one trial: configured tones with phases drawn
    /// from the phase stream of `seed`.
    pub fn source_specs(&self, seed: u64) -> Vec<SourceSpec> {
        let mut rng = stream_rng(seed, PHASE_STREAM);
        self.sources
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let phase = rng.random::<f64>() * 2.0 * PI;
                SourceSpec::sinusoid(
                    s.direction(),
                    s.power_db,
                    s.frequency_hz.unwrap_or(default_tone(k)),
                    phase,
                )
            })
            .collect()
    }

    pub fn simulate(&self, layout: &ArrayLayout, seed: u64) -> Result<SnapshotMatrix> {
        collect_plane_waves(
            layout,
            &self.source_specs(seed),
            self.snapshots,
            NoiseSpec {
                variance: self.noise_variance(),
                seed,
            },
        )
    }
}

/// Sample covariance with loading `factor · tr(XXᴴ/L)/N`.
pub fn loaded_covariance(x: &SnapshotMatrix, factor: f64) -> Result<CovarianceMatrix> {
    let unloaded = sample_covariance(x, 0.0)?;
    let n = unloaded.dim() as f64;
    let loading = factor * trace_re(&unloaded.data) / n;
    sample_covariance(x, loading)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaModel {
    pub feature_version: String,
    pub array: ArrayParams,
    pub class_grid: AngleRange,
    pub grid_el_deg: f64,
    pub feature_loading_factor: f64,
    pub training: TrainingConfig,
    pub svm: QsSvmModel,
}

impl DoaModel {
    pub fn class_angles(&self) -> Vec<f64> {
        self.class_grid.values()
    }

    /// Unit-norm steering vectors toward each class, as columns.
    pub fn steering_matrix(&self, layout: &ArrayLayout) -> Result<CMatrix> {
        class_steering(layout, &self.class_angles(), self.grid_el_deg)
    }

    /// Fails unless the model was trained for this scenario's array and grid.
    pub fn check_compatible(&self, scenario: &Scenario) -> Result<()> {
        if self.array != scenario.array
            || self.class_grid != scenario.class_grid
            || (self.grid_el_deg - scenario.grid_el_deg).abs() > 1e-12
            || self.feature_version != SPECTRUM_FEATURE_VERSION
        {
            return Err(Error::Untrained(format!(
                "model covers grid {} at el {}° on a {}-element array, scenario needs grid {} at el {}° on {} elements",
                self.class_grid,
                self.grid_el_deg,
                self.array.total_elements(),
                scenario.class_grid,
                scenario.grid_el_deg,
                scenario.array.total_elements()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn class_steering(layout: &ArrayLayout, az_deg: &[f64], el_deg: f64) -> Result<CMatrix> {
    let cols = az_deg
        .iter()
        .map(|&az| Ok(steering_vector(layout, el_deg.to_radians(), az.to_radians())?.values))
        .collect::<Result<Vec<CVector>>>()?;
    Ok(CMatrix::from_columns(&cols))
}

/// Simulates the labelled spectra the classifier is trained on. Each sample
/// holds one source on a class angle (the label) at a random SNR, plus up to
/// `max_companions` sources on other classes that are projected out.
pub fn training_set(scenario: &Scenario, layout: &ArrayLayout) -> Result<LabeledDataset> {
    let cfg = &scenario.training;
    let angles = scenario.class_grid.values();
    let g = angles.len();
    let steering = class_steering(layout, &angles, scenario.grid_el_deg)?;
    let snapshots = cfg.snapshots.unwrap_or(scenario.snapshots);
    let mut rng = stream_rng(cfg.seed, PHASE_STREAM);
    let mut points = Vec::with_capacity(g * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(g * cfg.samples_per_class);
    let mut sample = 0u64;
    for class in 0..g {
        for _ in 0..cfg.samples_per_class {
            let snr = cfg.snr_db_min + (cfg.snr_db_max - cfg.snr_db_min) * rng.random::<f64>();
            let companions = rng.random_range(0..=cfg.max_companions.min(g - 1));
            let mut chosen = vec![class];
            while chosen.len() < companions + 1 {
                let c = rng.random_range(0..g);
                if !chosen.contains(&c) {
                    chosen.push(c);
                }
            }
            let sources: Vec<SourceSpec> = chosen
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    SourceSpec::sinusoid(
                        Direction::from_deg(scenario.grid_el_deg, angles[c]),
                        0.0,
                        default_tone(k),
                        rng.random::<f64>() * 2.0 * PI,
                    )
                })
                .collect();
            let seed = trial_seed(cfg.seed ^ 0x5452_4149_4e00_0000, sample);
            sample += 1;
            let x = collect_plane_waves(
                layout,
                &sources,
                snapshots,
                NoiseSpec {
                    variance: 10f64.powf(-snr / 10.0),
                    seed,
                },
            )?;
            let cov = loaded_covariance(&x, scenario.feature_loading_factor)?;
            let deflate: Vec<CVector> = chosen[1..]
                .iter()
                .map(|&c| steering.column(c).into_owned())
                .collect();
            let refs: Vec<&CVector> = deflate.iter().collect();
            points.push(capon_spectrum(&cov, &steering, &refs)?);
            labels.push(class as i64);
        }
    }
    LabeledDataset::new(points, labels)
}

pub fn train_model(scenario: &Scenario) -> Result<DoaModel> {
    scenario.validate()?;
    let layout = scenario.layout()?;
    let data = training_set(scenario, &layout)?;
    let svm = train_multiclass(
        &data,
        &scenario.training.hyperparams()?,
        SPECTRUM_FEATURE_VERSION,
    )?;
    Ok(DoaModel {
        feature_version: SPECTRUM_FEATURE_VERSION.to_string(),
        array: scenario.array.clone(),
        class_grid: scenario.class_grid,
        grid_el_deg: scenario.grid_el_deg,
        feature_loading_factor: scenario.feature_loading_factor,
        training: scenario.training.clone(),
        svm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub class_index: usize,
    pub az_deg: f64,
    pub el_deg: f64,
    /// Pairwise contests won by the chosen class over `G − 1`.
    pub confidence: f64,
    /// `1 − mean` of the peak-normalized spectrum over the classes still in
    /// play: near 1 for a clear peak, small for a flat, noise-like spectrum.
    pub contrast: f64,
    pub tally: VoteTally,
}

impl DoaEstimate {
    pub fn direction(&self) -> Direction {
        Direction::from_deg(self.el_deg, self.az_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaResult {
    /// One estimate per source, in the order they were found.
    pub estimates: Vec<DoaEstimate>,
    /// Index into `estimates` of the one closest to the declared desired
    /// source.
    pub desired: usize,
}

impl DoaResult {
    pub fn desired_estimate(&self) -> &DoaEstimate {
        &self.estimates[self.desired]
    }

    pub fn interferer_estimates(&self) -> Vec<&DoaEstimate> {
        self.estimates
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.desired)
            .map(|(_, e)| e)
            .collect()
    }

    pub fn estimated_az(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.az_deg).collect()
    }

    /// True when every true azimuth is matched by an estimate on the grid.
    pub fn recovers(&self, truth_az: &[f64]) -> bool {
        let mut est = self.estimated_az();
        truth_az.iter().all(|t| {
            if let Some(pos) = est.iter().position(|e| (e - t).abs() < 1e-6) {
                est.remove(pos);
                true
            } else {
                false
            }
        })
    }
}

/// Finds `k` sources by repeated classify-then-deflate.
pub fn estimate_sources(
    model: &DoaModel,
    steering: &CMatrix,
    cov: &CovarianceMatrix,
    k: usize,
    desired_az: f64,
) -> Result<DoaResult> {
    let angles = model.class_angles();
    let g = angles.len();
    if k == 0 || k >= g {
        return invalid(format!("cannot locate {k} sources on a {g}-class grid"));
    }
    let mut estimates: Vec<DoaEstimate> = Vec::with_capacity(k);
    for _ in 0..k {
        let deflate: Vec<CVector> = estimates
            .iter()
            .map(|e| steering.column(e.class_index).into_owned())
            .collect();
        let refs: Vec<&CVector> = deflate.iter().collect();
        let spectrum = capon_spectrum(cov, steering, &refs)?;
        let tally = model.svm.tally(&spectrum)?;
        let class_index = tally
            .ranking()
            .into_iter()
            .find(|c| estimates.iter().all(|e| e.class_index != *c))
            .expect("k < G leaves a free class");
        estimates.push(DoaEstimate {
            class_index,
            az_deg: angles[class_index],
            el_deg: model.grid_el_deg,
            confidence: tally.wins[class_index] as f64 / (g - 1) as f64,
            contrast: spectral_contrast(&spectrum, estimates.len()),
            tally,
        });
    }
    let desired = (0..estimates.len())
        .min_by(|&a, &b| {
            (estimates[a].az_deg - desired_az)
                .abs()
                .total_cmp(&(estimates[b].az_deg - desired_az).abs())
        })
        .expect("k >= 1");
    Ok(DoaResult { estimates, desired })
}

fn spectral_contrast(spectrum: &[f64], deflated: usize) -> f64 {
    let live = spectrum.len() - deflated;
    1.0 - spectrum.iter().sum::<f64>() / live as f64
}

/// Simulation, estimation and covariance of one seeded trial.
pub struct TrialOutcome {
    pub doa: DoaResult,
    pub snapshots: SnapshotMatrix,
}

/// Runs the pipeline for a scenario with a prepared layout and steering
/// matrix, using `seed` for the phases and noise.
pub fn run_trial(
    scenario: &Scenario,
    model: &DoaModel,
    layout: &ArrayLayout,
    steering: &CMatrix,
    seed: u64,
) -> Result<TrialOutcome> {
    let x = scenario.simulate(layout, seed)?;
    let cov = loaded_covariance(&x, model.feature_loading_factor)?;
    let doa = estimate_sources(
        model,
        steering,
        &cov,
        scenario.sources.len(),
        scenario.desired().az_deg,
    )?;
    Ok(TrialOutcome { doa, snapshots: x })
}

pub fn run_doa(scenario: &Scenario, model: &DoaModel) -> Result<DoaResult> {
    scenario.validate()?;
    model.check_compatible(scenario)?;
    let layout = scenario.layout()?;
    let steering = model.steering_matrix(&layout)?;
    Ok(run_trial(scenario, model, &layout, &steering, scenario.seed)?.doa)
}

/// LCMV weights with unit response toward the desired estimate and nulls
/// toward the distinct interferer estimates.
pub fn synthesize_weights(
    layout: &ArrayLayout,
    cov: &CovarianceMatrix,
    doa: &DoaResult,
) -> Result<BeamWeights> {
    let desired = doa.desired_estimate();
    let mut dirs = vec![desired.direction()];
    let mut responses = vec![Complex64::new(1.0, 0.0)];
    let mut seen = vec![desired.class_index];
    for e in doa.interferer_estimates() {
        if !seen.contains(&e.class_index) {
            seen.push(e.class_index);
            dirs.push(e.direction());
            responses.push(Complex64::new(0.0, 0.0));
        }
    }
    let constraints = LcmvConstraints::new(layout, &dirs, &responses)?;
    lcmv_weights(cov, &constraints)
}

/// Synthesized pattern for the scenario's own seeded data.
pub fn synthesize_pattern(scenario: &Scenario, doa: &DoaResult) -> Result<BeamPattern> {
    Ok(synthesize(scenario, doa)?.1)
}

pub fn synthesize(scenario: &Scenario, doa: &DoaResult) -> Result<(BeamWeights, BeamPattern)> {
    scenario.validate()?;
    let layout = scenario.layout()?;
    let x = scenario.simulate(&layout, scenario.seed)?;
    let cov = loaded_covariance(&x, scenario.loading_factor)?;
    let w = synthesize_weights(&layout, &cov, doa)?;
    let grid = pattern_grid(scenario)?;
    let pattern = beam_pattern(&w, &layout, &grid)?;
    Ok((w, pattern))
}

pub fn pattern_grid(scenario: &Scenario) -> Result<Vec<Direction>> {
    let g = scenario.pattern_grid;
    theta_sweep(scenario.grid_el_deg, g.start, g.stop, g.step)
}
