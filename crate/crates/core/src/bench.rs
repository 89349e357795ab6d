//! Monte-Carlo and timing sweeps: classification throughput against SNR,
//! per-sample latency against batch size, the fixed-point datapath
//! trade-off, and element-pattern efficiency comparisons.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::array_geometry::{ArrayLayout, GainPattern};
use crate::doa_pipeline::{run_trial, train_model, DoaModel, Scenario};
use crate::error::{invalid, Result};
use crate::fixed_datapath::{fx_inner_product, quantize_vector, FixedPointFormat, PipelineConfig};
use crate::linalg::CMatrix;
use crate::signal_sim::{stream_rng, trial_seed, PHASE_STREAM};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

/// Samples classified per timed latency run.
pub const LATENCY_SAMPLES_PER_RUN: usize = 4096;

pub const EFFICIENCY_CAVEAT: &str =
    "accuracies depend on the element gain proxies; absolute values of \
measured printed elements need electromagnetic models that are not part of this software";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    fn new(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Exact two-sided McNemar test between two classifiers on paired trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub first: String,
    pub second: String,
    /// Trials only the first got right.
    pub only_first: usize,
    pub only_second: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub schema_version: u32,
    pub bench: String,
    pub sweep: Series,
    /// The first entry is the headline metric.
    pub metrics: Vec<Series>,
    pub trials: usize,
    pub seed: u64,
    /// Seconds spent on each sweep point. Not reproducible.
    pub wall_times: Vec<f64>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paired_tests: Vec<PairedTest>,
    /// Classes assigned to the latency sample pool, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl BenchResult {
    pub fn metric(&self, name: &str) -> Option<&[f64]> {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.values.as_slice())
    }

    pub fn headline(&self) -> &[f64] {
        &self.metrics[0].values
    }

    /// The result with the timing fields zeroed; everything left is a pure
    /// function of the configuration.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_times.iter_mut().for_each(|t| *t = 0.0);
        if r.bench == "latency" {
            for m in &mut r.metrics {
                m.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per sweep point: the sweep value, each metric, the wall time.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# schema_version={}\n# bench={}\n",
            self.schema_version, self.bench
        );
        out.push_str(&self.sweep.name);
        for m in &self.metrics {
            out.push(',');
            out.push_str(&m.name);
        }
        out.push_str(",wall_time_s\n");
        for (i, x) in self.sweep.values.iter().enumerate() {
            out.push_str(&format!("{x}"));
            for m in &self.metrics {
                out.push_str(&format!(",{}", m.values[i]));
            }
            out.push_str(&format!(",{:.6e}\n", self.wall_times[i]));
        }
        out
    }
}

fn elapsed_secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64().max(1e-9)
}

struct Trial {
    hit: bool,
    confidence: f64,
    contrast: f64,
}

fn trial(
    scenario: &Scenario,
    model: &DoaModel,
    layout: &ArrayLayout,
    steering: &CMatrix,
    seed: u64,
) -> Result<Trial> {
    let o = run_trial(scenario, model, layout, steering, seed)?;
    let d = o.doa.desired_estimate();
    Ok(Trial {
        hit: (d.az_deg - scenario.desired().az_deg).abs() < 1e-9,
        confidence: d.confidence,
        contrast: d.contrast,
    })
}

/// Fraction of trials whose desired source lands on its true class, per
/// SNR. Trial `k` uses the same seed at every SNR.
pub fn throughput_vs_snr(
    scenario: &Scenario,
    model: &DoaModel,
    snr_db: &[f64],
    trials: usize,
) -> Result<BenchResult> {
    if trials < 50 {
        return invalid(format!(
            "throughput needs at least 50 trials per point, got {trials}"
        ));
    }
    if snr_db.is_empty() {
        return invalid("SNR list is empty");
    }
    scenario.validate()?;
    model.check_compatible(scenario)?;
    let layout = scenario.layout()?;
    let steering = model.steering_matrix(&layout)?;
    let mut rate = Vec::with_capacity(snr_db.len());
    let mut confidence = Vec::with_capacity(snr_db.len());
    let mut contrast = Vec::with_capacity(snr_db.len());
    let mut wall = Vec::with_capacity(snr_db.len());
    for &snr in snr_db {
        let t = Instant::now();
        let mut sc = scenario.clone();
        sc.snr_db = snr;
        let (mut hits, mut conf, mut contr) = (0usize, 0.0, 0.0);
        for k in 0..trials {
            let t = trial(
                &sc,
                model,
                &layout,
                &steering,
                trial_seed(scenario.seed, k as u64),
            )?;
            hits += t.hit as usize;
            conf += t.confidence;
            contr += t.contrast;
        }
        let n = trials as f64;
        rate.push(hits as f64 / n);
        confidence.push(conf / n);
        contrast.push(contr / n);
        wall.push(elapsed_secs(t));
    }
    Ok(BenchResult {
        schema_version: BENCH_SCHEMA_VERSION,
        bench: "throughput".into(),
        sweep: Series::new("snr_db", snr_db.to_vec()),
        metrics: vec![
            Series::new("throughput", rate),
            Series::new("mean_confidence", confidence),
            Series::new("mean_contrast", contrast),
        ],
        trials,
        seed: scenario.seed,
        wall_times: wall,
        config: serde_json::to_value(scenario)?,
        paired_tests: vec![],
        outputs: vec![],
        notes: vec!["throughput = classification success rate of the desired source".into()],
    })
}

/// Spectra of `count` seeded trials, the sample pool of the latency bench.
pub fn feature_pool(scenario: &Scenario, model: &DoaModel, count: usize) -> Result<Vec<Vec<f64>>> {
    let layout = scenario.layout()?;
    let steering = model.steering_matrix(&layout)?;
    (0..count)
        .map(|k| {
            let x = scenario.simulate(&layout, trial_seed(scenario.seed, k as u64))?;
            let cov = crate::doa_pipeline::loaded_covariance(&x, model.feature_loading_factor)?;
            crate::qs_svm::capon_spectrum(&cov, &steering, &[])
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-sample and per-batch wall-clock classification latency. Each run
/// classifies [`LATENCY_SAMPLES_PER_RUN`] samples (rounded up to whole
/// batches) drawn cyclically from `pool`; one warm-up run is discarded and
/// the median of `runs` timed runs is reported.
pub fn latency_vs_batch(
    model: &DoaModel,
    pool: &[Vec<f64>],
    batch_sizes: &[usize],
    runs: usize,
) -> Result<BenchResult> {
    if batch_sizes.is_empty() {
        return invalid("batch size list is empty");
    }
    if let Some(b) = batch_sizes.iter().find(|&&b| b == 0) {
        return invalid(format!("batch size must be >= 1, got {b}"));
    }
    if runs == 0 {
        return invalid("latency needs at least one timed run");
    }
    if pool.is_empty() {
        return invalid("latency sample pool is empty");
    }
    let compiled = model.svm.compile();
    let outputs = compiled.classify_batch(pool)?;
    let mut per_sample = Vec::with_capacity(batch_sizes.len());
    let mut per_batch = Vec::with_capacity(batch_sizes.len());
    let mut wall = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let batches: Vec<Vec<Vec<f64>>> = (0..LATENCY_SAMPLES_PER_RUN.div_ceil(b))
            .map(|i| {
                (0..b)
                    .map(|j| pool[(i * b + j) % pool.len()].clone())
                    .collect()
            })
            .collect();
        let start = Instant::now();
        let mut times = Vec::with_capacity(runs);
        for run in 0..=runs {
            let t = Instant::now();
            for batch in &batches {
                std::hint::black_box(compiled.classify_batch(std::hint::black_box(batch))?);
            }
            if run > 0 {
                times.push(elapsed_secs(t));
            }
        }
        let m = median(&mut times);
        per_sample.push(m / (batches.len() * b) as f64 * 1e3);
        per_batch.push(m / batches.len() as f64 * 1e3);
        wall.push(elapsed_secs(start));
    }
    Ok(BenchResult {
        schema_version: BENCH_SCHEMA_VERSION,
        bench: "latency".into(),
        sweep: Series::new(
            "batch_size",
            batch_sizes.iter().map(|&b| b as f64).collect(),
        ),
        metrics: vec![
            Series::new("per_sample_ms", per_sample),
            Series::new("per_batch_ms", per_batch),
        ],
        trials: runs,
        seed: 0,
        wall_times: wall,
        config: serde_json::json!({
            "classes": model.svm.classes.len(),
            "feature_dim": model.svm.dim,
            "pool_size": pool.len(),
            "samples_per_run": LATENCY_SAMPLES_PER_RUN,
        }),
        paired_tests: vec![],
        outputs,
        notes: vec!["median of timed runs after one discarded warm-up run".into()],
    })
}

/// Cycle model and measured error of a length-`len` fixed-point inner
/// product for each pipeline stage count. Operands are random unit-modulus
/// vectors scaled by `1/√len`, like steering vectors.
pub fn datapath_sweep(
    len: usize,
    fmt: &FixedPointFormat,
    stages: &[u32],
    fanin: u32,
    trials: usize,
    seed: u64,
) -> Result<BenchResult> {
    if len == 0 || stages.is_empty() || trials == 0 {
        return invalid("datapath sweep needs len >= 1, a stage list and trials >= 1");
    }
    fmt.validate()?;
    let mut rng = stream_rng(seed, PHASE_STREAM);
    let scale = 1.0 / (len as f64).sqrt();
    let mut draw = || -> Vec<Complex64> {
        (0..len)
            .map(|_| Complex64::from_polar(scale, rng.random::<f64>() * std::f64::consts::TAU))
            .collect()
    };
    let pairs: Vec<_> = (0..trials)
        .map(|_| {
            let (u, _) = quantize_vector(&draw(), fmt);
            let (v, _) = quantize_vector(&draw(), fmt);
            (u, v)
        })
        .collect();
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut wall = Vec::with_capacity(stages.len());
    for &s in stages {
        let t = Instant::now();
        let cfg = PipelineConfig::new(s, fanin)?;
        let (mut err, mut events, mut report) = (0.0f64, 0u64, None);
        for (u, v) in &pairs {
            let (_, r) = fx_inner_product(u, v, fmt, &cfg)?;
            err = err.max(r.max_abs_error);
            events += r.overflow_events;
            report = Some(r);
        }
        let r = report.expect("trials >= 1");
        cols[0].push(r.throughput);
        cols[1].push(r.cycles_latency as f64);
        cols[2].push(r.initiation_interval as f64);
        cols[3].push(err);
        cols[4].push(err / fmt.lsb());
        cols[5].push(events as f64);
        wall.push(elapsed_secs(t));
    }
    let names = [
        "throughput_per_cycle",
        "latency_cycles",
        "initiation_interval",
        "max_abs_error",
        "max_abs_error_lsb",
        "overflow_events",
    ];
    Ok(BenchResult {
        schema_version: BENCH_SCHEMA_VERSION,
        bench: "datapath".into(),
        sweep: Series::new("stages", stages.iter().map(|&s| s as f64).collect()),
        metrics: names
            .iter()
            .zip(cols)
            .map(|(n, v)| Series::new(n, v))
            .collect(),
        trials,
        seed,
        wall_times: wall,
        config: serde_json::json!({ "len": len, "format": fmt.to_string(), "fanin": fanin }),
        paired_tests: vec![],
        outputs: vec![],
        notes: vec!["structural cycle model: adder levels mapped onto pipeline stages".into()],
    })
}

/// Two-sided exact McNemar p-value for `b` and `c` discordant pairs.
pub fn mcnemar_exact(b: usize, c: usize) -> f64 {
    let n = (b + c) as u64;
    if n == 0 {
        return 1.0;
    }
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    (2.0 * binom.cdf(b.min(c) as u64)).min(1.0)
}

/// Desired-source accuracy of the scenario under each element gain
/// pattern. Every pattern gets its own trained model and sees the same
/// trial seeds; each later pattern is paired against the first.
pub fn efficiency_compare(
    scenario: &Scenario,
    patterns: &[String],
    trials: usize,
) -> Result<BenchResult> {
    if patterns.len() < 2 {
        return invalid("efficiency comparison needs at least two gain patterns");
    }
    if trials == 0 {
        return invalid("efficiency comparison needs trials >= 1");
    }
    let gains = patterns
        .iter()
        .map(|p| GainPattern::from_name(p))
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes: Vec<Vec<bool>> = Vec::with_capacity(gains.len());
    let mut wall = Vec::with_capacity(gains.len());
    for gain in &gains {
        let t = Instant::now();
        let mut sc = scenario.clone();
        sc.array.gain = *gain;
        sc.validate()?;
        let model = train_model(&sc)?;
        let layout = sc.layout()?;
        let steering = model.steering_matrix(&layout)?;
        let hits = (0..trials)
            .map(|k| {
                Ok(trial(
                    &sc,
                    &model,
                    &layout,
                    &steering,
                    trial_seed(sc.seed, k as u64),
                )?
                .hit)
            })
            .collect::<Result<Vec<bool>>>()?;
        outcomes.push(hits);
        wall.push(elapsed_secs(t));
    }
    let accuracy = outcomes
        .iter()
        .map(|o| o.iter().filter(|&&h| h).count() as f64 / trials as f64)
        .collect();
    let paired_tests = (1..gains.len())
        .map(|i| {
            let only_first = (0..trials)
                .filter(|&k| outcomes[0][k] && !outcomes[i][k])
                .count();
            let only_second = (0..trials)
                .filter(|&k| !outcomes[0][k] && outcomes[i][k])
                .count();
            PairedTest {
                first: gains[0].name(),
                second: gains[i].name(),
                only_first,
                only_second,
                p_value: mcnemar_exact(only_first, only_second),
            }
        })
        .collect();
    Ok(BenchResult {
        schema_version: BENCH_SCHEMA_VERSION,
        bench: "efficiency".into(),
        sweep: Series::new(
            "pattern_index",
            (0..gains.len()).map(|i| i as f64).collect(),
        ),
        metrics: vec![Series::new("accuracy", accuracy)],
        trials,
        seed: scenario.seed,
        wall_times: wall,
        config: serde_json::json!({
            "patterns": gains.iter().map(|g| g.name()).collect::<Vec<_>>(),
            "scenario": scenario,
        }),
        paired_tests,
        outputs: vec![],
        notes: vec![EFFICIENCY_CAVEAT.into()],
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tied values sharing their average rank.
/// `None` when either series is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
