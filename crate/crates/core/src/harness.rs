//! Monte Carlo experiments over channel realizations.
//!
//! Each `(sweep value, realization)` pair is an independent job: its channel,
//! tag placement, BSPD batches and BER slots all come from streams addressed
//! by the experiment seed and the realization index, so the record set does
//! not depend on how rayon schedules the jobs.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline1, baseline2, baseline3};
use crate::bspd::{run_bspd, BspdOptions, StepSchedule};
use crate::channel::{complex_normal, generate_channel, CVec, ChannelRealization};
use crate::config::{SystemConfig, TagRegion, Topology};
use crate::error::{Error, Result};
use crate::params::Transceiver;
use crate::rng::{stream, Purpose};
use crate::sinr::{
    expected_sinr_exact, expected_sinr_monte_carlo, BarrierUtility, SinrVector, Utility, MAX_ENUM_TAGS,
};

/// Samples used for the expectation when there are too many tags to enumerate.
pub const MC_FALLBACK_SAMPLES: usize = 20_000;
pub const DEFAULT_BER_SLOTS: usize = 100_000;
const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bspd,
    Baseline1,
    Baseline2,
    Baseline3,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Bspd, Scheme::Baseline1, Scheme::Baseline2, Scheme::Baseline3];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bspd => "bspd",
            Scheme::Baseline1 => "baseline1",
            Scheme::Baseline2 => "baseline2",
            Scheme::Baseline3 => "baseline3",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(vec![format!("unknown scheme '{s}'")]))
    }
}

/// Parameter varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    M,
    N,
    #[serde(rename = "P_max")]
    PMax,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::M => "M",
            SweepParam::N => "N",
            SweepParam::PMax => "P_max",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::M => c.m = value as usize,
            SweepParam::N => c.n = value as usize,
            SweepParam::PMax => c.p_max = value,
        }
        c
    }

    fn check(self, value: f64) -> Option<String> {
        let ok = match self {
            SweepParam::M | SweepParam::N => value >= 1.0 && value.fract() == 0.0 && value <= 1e6,
            SweepParam::PMax => value > 0.0 && value.is_finite(),
        };
        (!ok).then(|| format!("sweep value {value} is not valid for {}", self.name()))
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(SweepParam::M),
            "N" | "n" => Ok(SweepParam::N),
            "P_max" | "p_max" | "pmax" => Ok(SweepParam::PMax),
            _ => Err(Error::Config(vec![format!("unknown sweep parameter '{s}' (expected M, N or P_max)")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    /// Linear units; `P_max` in watts.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub cfg: SystemConfig,
    pub topo: Topology,
    /// When set, tags are dropped uniformly in this rectangle for every
    /// realization instead of using `topo.tag_pos`.
    pub tag_region: Option<TagRegion>,
    pub schemes: Vec<Scheme>,
    pub n_realizations: usize,
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub bspd: BspdOptions,
    pub schedule: StepSchedule,
    pub ber_slots: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_realizations == 0 {
            problems.push("n_realizations must be >= 1".to_string());
        }
        if self.schemes.is_empty() {
            problems.push("at least one scheme is required".to_string());
        }
        if self.ber_slots == 0 {
            problems.push("ber_slots must be >= 1".to_string());
        }
        if let Some(r) = &self.tag_region {
            if !(r.x[0] <= r.x[1] && r.y[0] <= r.y[1]) || !r.x.iter().chain(&r.y).all(|v| v.is_finite()) {
                problems.push(format!("tag region {r:?} is empty or not finite"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                problems.push(format!("sweep over {} has no values", s.param));
            }
            problems.extend(s.values.iter().filter_map(|&v| s.param.check(v)));
        }
        let mut push_config = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Config(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
        };
        push_config(self.cfg.validate());
        push_config(self.topo.validate(self.cfg.k));
        push_config(self.bspd.validate());
        push_config(self.schedule.validate());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `(value, config)` for every sweep point, or the base config alone.
    pub fn points(&self) -> Vec<(Option<f64>, SystemConfig)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| (Some(v), s.param.apply(&self.cfg, v))).collect(),
            None => vec![(None, self.cfg.clone())],
        }
    }
}

/// Metrics of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scheme: Scheme,
    /// Name of the swept parameter, empty without a sweep.
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub realization: usize,
    pub gamma_s: f64,
    pub gamma_tags: Vec<f64>,
    pub worst_gamma: f64,
    /// Barrier utility, continued linearly below the barrier clamp.
    pub utility: f64,
    /// `log2(1 + gamma_s)`, bits/s/Hz.
    pub dl_rate: f64,
    pub worst_ber: f64,
    /// 95% Wilson half-width of the worst tag's error rate.
    pub ber_halfwidth: f64,
    /// BSPD iterations, 0 for the closed-form schemes.
    pub iterations: usize,
    pub wall_s: f64,
}

impl MetricRecord {
    /// Copy with the timing field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        MetricRecord { wall_s: 0.0, ..self.clone() }
    }
}

/// A scheme that failed on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFailure {
    pub scheme: Scheme,
    pub sweep_value: Option<f64>,
    pub realization: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricRecord>,
    pub failures: Vec<SchemeFailure>,
}

impl ExperimentOutcome {
    /// Failures per scheme, in [`Scheme::ALL`] order, omitting zero counts.
    pub fn failure_counts(&self) -> Vec<(Scheme, usize)> {
        Scheme::ALL
            .into_iter()
            .map(|s| (s, self.failures.iter().filter(|f| f.scheme == s).count()))
            .filter(|&(_, n)| n > 0)
            .collect()
    }
}

pub fn dl_rate(gamma_s: f64) -> f64 {
    (1.0 + gamma_s).log2()
}

/// Worst-tag bit error rate with its confidence half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct BerEstimate {
    /// Largest per-tag error rate, capped at 0.5.
    pub worst: f64,
    pub halfwidth: f64,
    pub per_tag: Vec<f64>,
    pub n_slots: usize,
}

/// 95% Wilson score half-width for `errors` out of `n` trials.
pub fn wilson_halfwidth(errors: usize, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let nf = n as f64;
    let p = errors as f64 / nf;
    let z2 = WILSON_Z * WILSON_Z;
    WILSON_Z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt()
}

/// Slot-level OOK simulation after perfect direct-link cancellation.
///
/// Per slot: draw the tag bits and `||s||^2 ~ Gamma(L, 1)`; the despread
/// observation at tag `k`'s receiver is
/// `sum_m sqrt(alpha_m) b_m (u_k^H h_hat_m^H v) ||s||^2 + u_k^H n`,
/// with `n ~ CN(0, sigma^2 ||s||^2 I)`. Tag `k` decides 1 when the projection
/// onto its noiseless "on" amplitude exceeds half that amplitude.
pub fn worst_tag_ber(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    n_slots: usize,
    seed: u64,
) -> Result<BerEstimate> {
    if n_slots == 0 {
        return Err(Error::Domain("n_slots must be >= 1".to_string()));
    }
    theta.check(cfg)?;
    ch.check(cfg)?;
    let k_tags = cfg.k;
    if k_tags == 0 {
        return Ok(BerEstimate { worst: 0.0, halfwidth: 0.0, per_tag: Vec::new(), n_slots });
    }
    let z: Vec<CVec> = ch.h_hat.iter().map(|h| h.ad_mul(&theta.v)).collect();
    // coupling[k][m] = sqrt(alpha_m) u_k^H z_m
    let coupling: Vec<Vec<Complex64>> = theta
        .u
        .iter()
        .map(|uk| z.iter().zip(&cfg.alpha).map(|(zm, a)| uk.dotc(zm) * a.sqrt()).collect())
        .collect();
    let u_adj: Vec<Vec<Complex64>> = theta.u.iter().map(|uk| uk.iter().map(|c| c.conj()).collect()).collect();
    let norm_gamma = Gamma::new(cfg.l as f64, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = stream(seed, Purpose::Ber, 0, 0);
    let mut errors = vec![0usize; k_tags];
    let mut b = vec![false; k_tags];
    let mut noise = vec![Complex64::default(); cfg.n];
    for _ in 0..n_slots {
        for (bk, &r) in b.iter_mut().zip(&cfg.rho) {
            *bk = rng.random::<f64>() < r;
        }
        let x = norm_gamma.sample(&mut rng);
        let scale = (cfg.sigma_w2 * x).sqrt();
        for e in noise.iter_mut() {
            *e = complex_normal(&mut rng) * scale;
        }
        for k in 0..k_tags {
            let mut r: Complex64 = u_adj[k].iter().zip(&noise).map(|(a, n)| a * n).sum();
            for (m, &bm) in b.iter().enumerate() {
                if bm {
                    r += coupling[k][m] * x;
                }
            }
            let on = coupling[k][k] * x;
            let amp = on.norm();
            let decided = amp > 0.0 && (on.conj() * r).re / amp > amp / 2.0;
            if decided != b[k] {
                errors[k] += 1;
            }
        }
    }
    let per_tag: Vec<f64> = errors.iter().map(|&e| e as f64 / n_slots as f64).collect();
    let worst_k = (0..k_tags).fold(0, |w, k| if errors[k] > errors[w] { k } else { w });
    Ok(BerEstimate {
        worst: per_tag[worst_k].min(0.5),
        halfwidth: wilson_halfwidth(errors[worst_k], n_slots),
        per_tag,
        n_slots,
    })
}

/// Expected SINRs: exact enumeration, or Monte Carlo beyond [`MAX_ENUM_TAGS`].
pub fn evaluate_sinr(theta: &Transceiver, ch: &ChannelRealization, cfg: &SystemConfig, seed: u64) -> Result<SinrVector> {
    if cfg.k <= MAX_ENUM_TAGS {
        expected_sinr_exact(theta, ch, cfg)
    } else {
        Ok(expected_sinr_monte_carlo(theta, ch, cfg, MC_FALLBACK_SAMPLES, seed)?.mean)
    }
}

/// Seed of realization `r`, shared by every sweep point.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    stream(seed, Purpose::Channel, 0, r as u64).random()
}

/// Topology of realization `r`: tags redrawn in the region if one is given.
pub fn realization_topology(spec: &ExperimentSpec, r: usize) -> Topology {
    let mut topo = spec.topo.clone();
    if let Some(region) = spec.tag_region {
        let mut rng = stream(spec.seed, Purpose::TagPlacement, r as u64, 0);
        for p in topo.tag_pos.iter_mut() {
            *p = [
                region.x[0] + (region.x[1] - region.x[0]) * rng.random::<f64>(),
                region.y[0] + (region.y[1] - region.y[0]) * rng.random::<f64>(),
            ];
        }
    }
    topo
}

struct Job<'a> {
    spec: &'a ExperimentSpec,
    sweep_value: Option<f64>,
    cfg: &'a SystemConfig,
    realization: usize,
}

fn design(scheme: Scheme, job: &Job, ch: &ChannelRealization, seed: u64) -> Result<(Transceiver, usize)> {
    let cfg = job.cfg;
    Ok(match scheme {
        Scheme::Bspd => {
            let opts = BspdOptions { seed, ..job.spec.bspd };
            let run = run_bspd(cfg, ch, &job.spec.schedule, &opts, None).map_err(|a| a.error)?;
            (run.theta, run.iterations)
        }
        Scheme::Baseline1 => (baseline1(ch, cfg), 0),
        Scheme::Baseline2 => (baseline2(ch, cfg), 0),
        Scheme::Baseline3 => (baseline3(ch, cfg), 0),
    })
}

fn evaluate(job: &Job, idx: usize, scheme: Scheme, ch: &ChannelRealization, seed: u64) -> Result<MetricRecord> {
    let cfg = job.cfg;
    let start = Instant::now();
    let (theta, iterations) = design(scheme, job, ch, seed)?;
    let wall_s = start.elapsed().as_secs_f64();
    if theta.power() > cfg.p_max + 1e-9 {
        return Err(Error::Solver(format!(
            "{scheme} returned ||v||^2 = {} above P_max = {}",
            theta.power(),
            cfg.p_max
        )));
    }
    let sinr = evaluate_sinr(&theta, ch, cfg, seed)?;
    let ber = worst_tag_ber(&theta, ch, cfg, job.spec.ber_slots, stream(seed, Purpose::Ber, idx as u64, 1).random())?;
    Ok(MetricRecord {
        scheme,
        sweep_param: job.spec.sweep.as_ref().map(|s| s.param.name().to_string()).unwrap_or_default(),
        sweep_value: job.sweep_value,
        realization: job.realization,
        gamma_s: sinr.gamma_s,
        worst_gamma: sinr.worst_tag(),
        utility: BarrierUtility::from_config(cfg).value_extended(&sinr),
        dl_rate: dl_rate(sinr.gamma_s),
        worst_ber: ber.worst,
        ber_halfwidth: ber.halfwidth,
        gamma_tags: sinr.gamma,
        iterations,
        wall_s,
    })
}

fn run_job(job: &Job) -> (Vec<MetricRecord>, Vec<SchemeFailure>) {
    let seed = realization_seed(job.spec.seed, job.realization);
    let fail = |scheme, e: &dyn fmt::Display| SchemeFailure {
        scheme,
        sweep_value: job.sweep_value,
        realization: job.realization,
        message: e.to_string(),
    };
    let topo = realization_topology(job.spec, job.realization);
    let ch = match generate_channel(job.cfg, &topo, seed) {
        Ok(ch) => ch,
        Err(e) => return (Vec::new(), job.spec.schemes.iter().map(|&s| fail(s, &e)).collect()),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (idx, &scheme) in job.spec.schemes.iter().enumerate() {
        match evaluate(job, idx, scheme, &ch, seed) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{scheme} failed on realization {}: {e}", job.realization);
                failures.push(fail(scheme, &e));
            }
        }
    }
    (records, failures)
}

/// Runs every scheme on every `(sweep value, realization)` pair.
///
/// Records come back ordered by sweep point, then realization, then the
/// order of `spec.schemes`. Scheme failures are collected rather than fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let points = spec.points();
    let jobs: Vec<Job> = points
        .iter()
        .flat_map(|(value, cfg)| {
            (0..spec.n_realizations).map(move |realization| Job {
                spec,
                sweep_value: *value,
                cfg,
                realization,
            })
        })
        .collect();
    let results: Vec<_> = jobs.par_iter().map(run_job).collect();
    let mut out = ExperimentOutcome::default();
    for (r, f) in results {
        out.records.extend(r);
        out.failures.extend(f);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// From the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// CSV column order.
pub const CSV_HEADER: [&str; 14] = [
    "scheme",
    "sweep_param",
    "sweep_value",
    "realization",
    "gamma_s",
    "gamma_tags",
    "worst_gamma",
    "utility",
    "dl_rate",
    "worst_ber",
    "ber_halfwidth",
    "iterations",
    "wall_s",
    "k",
];

fn fmt_f64(x: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{x:?}")
}

fn csv_row(r: &MetricRecord) -> Vec<String> {
    vec![
        r.scheme.to_string(),
        r.sweep_param.clone(),
        r.sweep_value.map(fmt_f64).unwrap_or_default(),
        r.realization.to_string(),
        fmt_f64(r.gamma_s),
        r.gamma_tags.iter().map(|&g| fmt_f64(g)).collect::<Vec<_>>().join(";"),
        fmt_f64(r.worst_gamma),
        fmt_f64(r.utility),
        fmt_f64(r.dl_rate),
        fmt_f64(r.worst_ber),
        fmt_f64(r.ber_halfwidth),
        r.iterations.to_string(),
        fmt_f64(r.wall_s),
        r.gamma_tags.len().to_string(),
    ]
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<MetricRecord, String> {
    let field = |i: usize| row.get(i).ok_or_else(|| format!("missing column {}", CSV_HEADER[i]));
    let num = |i: usize| -> std::result::Result<f64, String> {
        let s = field(i)?;
        s.parse().map_err(|_| format!("column {}: '{s}' is not a number", CSV_HEADER[i]))
    };
    let int = |i: usize| -> std::result::Result<usize, String> {
        let s = field(i)?;
        s.parse().map_err(|_| format!("column {}: '{s}' is not an integer", CSV_HEADER[i]))
    };
    let k = int(13)?;
    let tags = field(5)?;
    let gamma_tags = if k == 0 {
        Vec::new()
    } else {
        tags.split(';')
            .map(|s| s.parse().map_err(|_| format!("column gamma_tags: '{s}' is not a number")))
            .collect::<std::result::Result<Vec<f64>, _>>()?
    };
    if gamma_tags.len() != k {
        return Err(format!("gamma_tags has {} entries, k = {k}", gamma_tags.len()));
    }
    let sweep_value = match field(2)? {
        "" => None,
        _ => Some(num(2)?),
    };
    Ok(MetricRecord {
        scheme: field(0)?.parse().map_err(|e: Error| e.to_string())?,
        sweep_param: field(1)?.to_string(),
        sweep_value,
        realization: int(3)?,
        gamma_s: num(4)?,
        gamma_tags,
        worst_gamma: num(6)?,
        utility: num(7)?,
        dl_rate: num(8)?,
        worst_ber: num(9)?,
        ber_halfwidth: num(10)?,
        iterations: int(11)?,
        wall_s: num(12)?,
    })
}

/// Writes records as CSV (header [`CSV_HEADER`], tag SINRs joined by `;`)
/// or as a JSON array.
pub fn write_records(records: &[MetricRecord], path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            let to_err = |e: csv::Error| Error::io(path, e.into());
            w.write_record(CSV_HEADER).map_err(to_err)?;
            for r in records {
                w.write_record(csv_row(r)).map_err(to_err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        Format::Json => {
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, records).map_err(|e| Error::io(path, e.into()))?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_records(path: &Path, format: Format) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    match format {
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(BufReader::new(file));
            let header = rd.headers().map_err(|e| parse_err(e.to_string()))?;
            if header.iter().ne(CSV_HEADER) {
                return Err(parse_err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
            }
            rd.records()
                .enumerate()
                .map(|(i, row)| {
                    let row = row.map_err(|e| parse_err(e.to_string()))?;
                    parse_row(&row).map_err(|m| parse_err(format!("row {}: {m}", i + 1)))
                })
                .collect()
        }
        Format::Json => serde_json::from_reader(BufReader::new(file)).map_err(|e| parse_err(e.to_string())),
    }
}

/// Per-record quantities that can be averaged into a figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    GammaS,
    WorstGamma,
    Utility,
    DlRate,
    WorstBer,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::GammaS, Metric::WorstGamma, Metric::Utility, Metric::DlRate, Metric::WorstBer];

    pub fn name(self) -> &'static str {
        match self {
            Metric::GammaS => "gamma_s",
            Metric::WorstGamma => "worst_gamma",
            Metric::Utility => "utility",
            Metric::DlRate => "dl_rate",
            Metric::WorstBer => "worst_ber",
        }
    }

    pub fn of(self, r: &MetricRecord) -> f64 {
        match self {
            Metric::GammaS => r.gamma_s,
            Metric::WorstGamma => r.worst_gamma,
            Metric::Utility => r.utility,
            Metric::DlRate => r.dl_rate,
            Metric::WorstBer => r.worst_ber,
        }
    }
}

/// Sample mean and its standard error (`NaN` for fewer than two values).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One point of a figure series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub scheme: Scheme,
    /// Sweep value, or 0 for an unswept experiment.
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of `metric` per `(scheme, sweep value)`, ordered
/// by scheme then by x.
pub fn figure_series(records: &[MetricRecord], metric: Metric) -> Vec<FigurePoint> {
    let mut keys: Vec<(Scheme, f64)> = records.iter().map(|r| (r.scheme, r.sweep_value.unwrap_or(0.0))).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|(scheme, x)| {
            let xs: Vec<f64> = records
                .iter()
                .filter(|r| r.scheme == scheme && r.sweep_value.unwrap_or(0.0) == x)
                .map(|r| metric.of(r))
                .collect();
            let (mean, stderr) = mean_stderr(&xs);
            FigurePoint { scheme, x, mean, stderr, n: xs.len() }
        })
        .collect()
}

pub fn write_figure(points: &[FigurePoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let to_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["scheme", "x", "mean", "stderr", "n"]).map_err(to_err)?;
    for p in points {
        w.write_record([p.scheme.to_string(), fmt_f64(p.x), fmt_f64(p.mean), fmt_f64(p.stderr), p.n.to_string()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `figure_<param>_<metric>.csv` for every metric into `dir` and
/// returns the paths written.
pub fn emit_figures(records: &[MetricRecord], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let param = records
        .first()
        .map(|r| if r.sweep_param.is_empty() { "none".to_string() } else { r.sweep_param.clone() })
        .unwrap_or_else(|| "none".to_string());
    Metric::ALL
        .into_iter()
        .map(|m| {
            let path = dir.join(format!("figure_{param}_{}.csv", m.name()));
            write_figure(&figure_series(records, m), &path)?;
            Ok(path)
        })
        .collect()
}

/// Per-scheme averages over all records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub n: usize,
    pub gamma_s: f64,
    pub worst_gamma: f64,
    pub utility: f64,
    pub dl_rate: f64,
    pub worst_ber: f64,
}

pub fn summarize(records: &[MetricRecord]) -> Vec<SchemeSummary> {
    Scheme::ALL
        .into_iter()
        .filter_map(|scheme| {
            let rs: Vec<&MetricRecord> = records.iter().filter(|r| r.scheme == scheme).collect();
            if rs.is_empty() {
                return None;
            }
            let mean = |m: Metric| rs.iter().map(|r| m.of(r)).sum::<f64>() / rs.len() as f64;
            Some(SchemeSummary {
                scheme,
                n: rs.len(),
                gamma_s: mean(Metric::GammaS),
                worst_gamma: mean(Metric::WorstGamma),
                utility: mean(Metric::Utility),
                dl_rate: mean(Metric::DlRate),
                worst_ber: mean(Metric::WorstBer),
            })
        })
        .collect()
}

/// Plain-text table of [`summarize`] output.
pub fn format_summary(rows: &[SchemeSummary]) -> String {
    let mut s = format!(
        "{:<10} {:>5} {:>16} {:>12} {:>14} {:>16} {:>14}\n",
        "scheme", "n", "DL rate (b/s/Hz)", "worst BER", "DL SINR", "worst tag SINR", "utility"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>5} {:>16.4} {:>12.4e} {:>14.4} {:>16.4} {:>14.4}\n",
            r.scheme.name(),
            r.n,
            r.dl_rate,
            r.worst_ber,
            r.gamma_s,
            r.worst_gamma,
            r.utility
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{default_topology, small_config, unit_channel};

    fn spec(schemes: Vec<Scheme>, n: usize) -> ExperimentSpec {
        let mut cfg = small_config(4, 2, 2);
        cfg.sigma_w2 = 1e-13;
        cfg.p_max = 0.01;
        ExperimentSpec {
            cfg,
            topo: default_topology(2),
            tag_region: None,
            schemes,
            n_realizations: n,
            sweep: None,
            seed: 11,
            bspd: BspdOptions { max_iters: 30, ..Default::default() },
            schedule: StepSchedule::Standard,
            ber_slots: 200,
        }
    }

    fn record(scheme: Scheme, r: usize, k: usize) -> MetricRecord {
        MetricRecord {
            scheme,
            sweep_param: "P_max".into(),
            sweep_value: Some(0.1 + r as f64 / 3.0),
            realization: r,
            gamma_s: 1.0 / 3.0 + r as f64,
            gamma_tags: (0..k).map(|i| (i as f64 + 0.1).sqrt() * 1e-7).collect(),
            worst_gamma: 1e-7 * 0.1f64.sqrt(),
            utility: -12345.678901234567,
            dl_rate: std::f64::consts::PI,
            worst_ber: 0.0123,
            ber_halfwidth: 1e-3 / 7.0,
            iterations: 17,
            wall_s: 0.25,
        }
    }

    #[test]
    fn rate_mapping() {
        assert_eq!(dl_rate(0.0), 0.0);
        assert_eq!(dl_rate(1.0), 1.0);
        assert!((dl_rate(2f64.powf(6.167) - 1.0) - 6.167).abs() < 1e-12);
    }

    #[test]
    fn one_realization_one_scheme_per_sweep_value() {
        let mut s = spec(vec![Scheme::Baseline1], 1);
        s.sweep = Some(Sweep { param: SweepParam::PMax, values: vec![0.001, 0.01, 0.1] });
        let out = run_experiment(&s).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.records.len(), 3);
        let xs: Vec<_> = out.records.iter().map(|r| r.sweep_value.unwrap()).collect();
        assert_eq!(xs, vec![0.001, 0.01, 0.1]);
        for r in &out.records {
            assert!(r.gamma_s >= 0.0 && r.gamma_tags.iter().all(|&g| g >= 0.0));
            assert!((0.0..=0.5).contains(&r.worst_ber));
        }
    }

    #[test]
    fn records_do_not_depend_on_thread_count() {
        let mut s = spec(vec![Scheme::Bspd, Scheme::Baseline2], 4);
        s.tag_region = Some(TagRegion { x: [99.0, 101.0], y: [198.0, 199.5] });
        let strip = |o: ExperimentOutcome| o.records.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = strip(one.install(|| run_experiment(&s).unwrap()));
        let parallel = strip(run_experiment(&s).unwrap());
        assert_eq!(serial.len(), 8);
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn invalid_specs_list_problems() {
        let mut s = spec(vec![], 0);
        s.sweep = Some(Sweep { param: SweepParam::M, values: vec![2.5, 0.0] });
        match s.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 4, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs: Vec<_> = (0..3).map(|r| record(Scheme::ALL[r], r, 3)).collect();
        recs.push(MetricRecord { sweep_param: String::new(), sweep_value: None, ..record(Scheme::Bspd, 9, 0) });
        for fmt in [Format::Csv, Format::Json] {
            let p = dir.path().join(format!("r.{fmt:?}"));
            write_records(&recs, &p, fmt).unwrap();
            assert_eq!(read_records(&p, fmt).unwrap(), recs);
        }
    }

    #[test]
    fn empty_outputs_and_header_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_records(&[], &p, Format::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim_end(), CSV_HEADER.join(","));
        let j = dir.path().join("e.json");
        write_records(&[], &j, Format::Json).unwrap();
        assert_eq!(std::fs::read_to_string(&j).unwrap().trim(), "[]");
        assert!(read_records(&p, Format::Csv).unwrap().is_empty());
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = read_records(Path::new("/nonexistent/records.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/records.csv"));
    }

    #[test]
    fn noiseless_ber_is_zero() {
        let mut cfg = small_config(4, 3, 3);
        cfg.sigma_w2 *= 1e-20;
        let ch = unit_channel(&cfg, 3, 0.5);
        let theta = baseline2(&ch, &cfg);
        let n = 2000;
        let est = worst_tag_ber(&theta, &ch, &cfg, n, 1).unwrap();
        assert!(est.worst <= 1.0 / n as f64, "{est:?}");
    }

    #[test]
    fn silent_transmitter_ber_equals_on_probability() {
        let mut cfg = small_config(3, 2, 2);
        cfg.rho = vec![0.3, 0.2];
        let ch = unit_channel(&cfg, 4, 0.5);
        let mut theta = baseline1(&ch, &cfg);
        theta.v = CVec::zeros(cfg.m);
        let n = 20_000;
        let est = worst_tag_ber(&theta, &ch, &cfg, n, 2).unwrap();
        assert!((est.per_tag[0] - 0.3).abs() < 4.0 * (0.21 / n as f64).sqrt());
        assert!((est.worst - 0.3).abs() < 2.0 * est.halfwidth);
    }

    #[test]
    fn wilson_halfwidth_shrinks_like_inverse_sqrt() {
        let h1 = wilson_halfwidth(100, 1000);
        let h2 = wilson_halfwidth(400, 4000);
        assert!((h1 / h2 - 2.0).abs() < 0.01);
        let mut cfg = small_config(3, 2, 2);
        cfg.sigma_w2 = 3.0;
        let ch = unit_channel(&cfg, 5, 0.5);
        let theta = baseline2(&ch, &cfg);
        let a = worst_tag_ber(&theta, &ch, &cfg, 2_000, 3).unwrap();
        let b = worst_tag_ber(&theta, &ch, &cfg, 32_000, 3).unwrap();
        assert!(a.worst > 0.01, "{a:?}");
        let ratio = a.halfwidth / b.halfwidth;
        assert!((3.0..5.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn stderr_agrees_with_bootstrap() {
        let s = spec(vec![Scheme::Baseline2], 50);
        let out = run_experiment(&s).unwrap();
        let xs: Vec<f64> = out.records.iter().map(|r| r.worst_gamma).collect();
        let (_, se) = mean_stderr(&xs);
        let mut rng = stream(1, Purpose::Oracle, 77, 0);
        let means: Vec<f64> = (0..2000)
            .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
            .collect();
        let (_, boot_se) = mean_stderr(&means);
        let boot_sd = boot_se * (means.len() as f64).sqrt();
        assert!((boot_sd / se - 1.0).abs() < 0.15, "{boot_sd} vs {se}");
        let fig = figure_series(&out.records, Metric::WorstGamma);
        assert_eq!(fig.len(), 1);
        assert_eq!(fig[0].n, 50);
        assert_eq!(fig[0].stderr, se);
    }

    #[test]
    fn figures_group_by_scheme_and_x() {
        let recs: Vec<_> = (0..6).map(|i| {
            let mut r = record(Scheme::ALL[i % 2], i, 2);
            r.sweep_value = Some((i / 2) as f64);
            r
        }).collect();
        let fig = figure_series(&recs, Metric::GammaS);
        assert_eq!(fig.len(), 6);
        assert!(fig.iter().all(|p| p.n == 1 && p.stderr.is_nan()));
        assert_eq!(fig[0].scheme, Scheme::Bspd);
        assert!(fig.windows(2).all(|w| w[0].scheme < w[1].scheme || w[0].x < w[1].x));
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_figures(&recs, dir.path()).unwrap();
        assert_eq!(paths.len(), Metric::ALL.len());
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn summary_has_one_row_per_scheme() {
        let recs: Vec<_> = (0..8).map(|i| record(Scheme::ALL[i % 4], i, 2)).collect();
        let rows = summarize(&recs);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.n == 2));
        let table = format_summary(&rows);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("DL rate") && table.contains("worst BER"));
    }
}
