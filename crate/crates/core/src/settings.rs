//! Configuration documents.
//!
//! A document is JSON with five sections: `system`, `topology`, `schedule`,
//! `bspd` and `experiment`. Every field has a default, so `{}` is a valid
//! document describing the reference scenario (64 x 16 antennas, 4 tags).
//! Powers and gains are given in dBm/dB here and converted to linear units
//! while loading; nothing downstream sees decibels.
//!
//! Per-tag fields (`alpha`, `rho`, `gamma0`, `chi_k`, `chi_bk`, `gain_b_db`)
//! take either one number, applied to every tag, or a list of length `k`.
//!
//! `psi`, the barrier price, has no reference value. It defaults to 10, and
//! absolute utilities, rates and BERs depend on it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bspd::{BspdOptions, StepSchedule, StopMetric};
use crate::config::{SystemConfig, TagRegion, Topology};
use crate::error::{Error, Result};
use crate::harness::{ExperimentSpec, Scheme, Sweep, SweepParam, DEFAULT_BER_SLOTS};

/// The shipped default document.
pub const DEFAULT_DOCUMENT: &str = include_str!("../config/default.json");

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// One value for every tag, or one per tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerTag {
    All(f64),
    Each(Vec<f64>),
}

impl PerTag {
    fn resolve(&self, key: &str, k: usize, problems: &mut Vec<String>) -> Vec<f64> {
        match self {
            PerTag::All(x) => vec![*x; k],
            PerTag::Each(xs) if xs.len() == k => xs.clone(),
            PerTag::Each(xs) => {
                problems.push(format!("{key} has {} entries but k = {k}", xs.len()));
                vec![f64::NAN; k]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Transmit antennas.
    pub m: usize,
    /// Receive antennas.
    pub n: usize,
    /// Tags.
    pub k: usize,
    /// Primary symbols per tag symbol.
    pub l: usize,
    pub alpha: PerTag,
    pub rho: PerTag,
    pub noise_dbm: f64,
    pub p_max_dbm: f64,
    pub psi: f64,
    pub gamma0: PerTag,
    /// Mini-batch size.
    pub batch: usize,
    /// Proximal weights; `null` means `1e-4 * P_max` in watts.
    pub tau_v: Option<f64>,
    pub tau_u: Option<f64>,
    pub eps_bar: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            m: 64,
            n: 16,
            k: 4,
            l: 128,
            alpha: PerTag::All(0.1),
            rho: PerTag::All(0.5),
            noise_dbm: -100.0,
            p_max_dbm: 10.0,
            psi: 10.0,
            gamma0: PerTag::All(5.0),
            batch: 10,
            tau_v: None,
            tau_u: None,
            eps_bar: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub pt_pos: [f64; 2],
    pub pr_pos: [f64; 2],
    /// Fixed tag positions. When `null`, tags are dropped uniformly in
    /// `tag_region` for every realization.
    pub tag_pos: Option<Vec<[f64; 2]>>,
    pub tag_region: TagRegion,
    pub chi0: f64,
    pub chi_k: PerTag,
    pub chi_bk: PerTag,
    pub gain_t_db: f64,
    pub gain_r_db: f64,
    pub gain_b_db: PerTag,
    pub wavelength: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            pt_pos: [100.0, 0.0],
            pr_pos: [100.0, 200.0],
            tag_pos: None,
            tag_region: TagRegion { x: [99.0, 101.0], y: [198.0, 199.5] },
            chi0: 3.5,
            chi_k: PerTag::All(3.5),
            chi_bk: PerTag::All(2.0),
            gain_t_db: 6.0,
            gain_r_db: 6.0,
            gain_b_db: PerTag::All(6.0),
            wavelength: 0.33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BspdSection {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub window: usize,
    pub trace_every: usize,
    pub stop_metric: StopMetric,
}

impl Default for BspdSection {
    fn default() -> Self {
        let d = BspdOptions::default();
        BspdSection {
            max_iters: d.max_iters,
            rel_tol: d.rel_tol,
            window: d.window,
            trace_every: d.trace_every,
            stop_metric: d.stop_metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    /// Antenna counts for `M`/`N`, dBm for `P_max`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub schemes: Vec<Scheme>,
    pub realizations: usize,
    pub sweep: Option<SweepSection>,
    pub ber_slots: usize,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            schemes: Scheme::ALL.to_vec(),
            realizations: 200,
            sweep: None,
            ber_slots: DEFAULT_BER_SLOTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub system: SystemSection,
    pub topology: TopologySection,
    pub schedule: StepSchedule,
    pub bspd: BspdSection,
    pub experiment: ExperimentSection,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        ConfigDocument {
            system: SystemSection::default(),
            topology: TopologySection::default(),
            schedule: StepSchedule::Standard,
            bspd: BspdSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// A loaded, validated configuration in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// The document after overrides, as it would be written back out.
    pub document: ConfigDocument,
    pub cfg: SystemConfig,
    /// Tag positions are the region's center when tags are placed randomly.
    pub topo: Topology,
    pub tag_region: Option<TagRegion>,
    pub schedule: StepSchedule,
    pub bspd: BspdOptions,
    pub experiment: ExperimentSpec,
}

/// Every node path of `v` below the root, dot-separated.
fn node_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            out.push(p.clone());
            node_paths(child, &p, out);
        }
    }
}

/// Full path for an override key: dotted keys are taken as given (matched
/// case-insensitively), bare keys must name exactly one node.
fn resolve_key(doc: &Value, key: &str) -> std::result::Result<Vec<String>, String> {
    let mut nodes = Vec::new();
    node_paths(doc, "", &mut nodes);
    let wanted = key.to_ascii_lowercase();
    if wanted.contains('.') {
        if let Some(p) = nodes.iter().find(|p| p.to_ascii_lowercase() == wanted) {
            return Ok(p.split('.').map(str::to_string).collect());
        }
        let parent = &wanted[..wanted.rfind('.').unwrap_or(0)];
        let parent_is_null = lookup(doc, parent).is_some_and(Value::is_null);
        return if parent_is_null {
            Ok(key.split('.').map(str::to_string).collect())
        } else {
            Err(format!("unknown key '{key}'"))
        };
    }
    let hits: Vec<&String> = nodes
        .iter()
        .filter(|p| p.rsplit('.').next().is_some_and(|l| l.to_ascii_lowercase() == wanted))
        .collect();
    match hits.as_slice() {
        [one] => Ok(one.split('.').map(str::to_string).collect()),
        [] => Err(format!("unknown key '{key}'")),
        many => Err(format!(
            "key '{key}' is ambiguous: {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )),
    }
}

fn lookup<'a>(doc: &'a Value, lower_path: &str) -> Option<&'a Value> {
    lower_path.split('.').try_fold(doc, |v, seg| {
        v.as_object()?.iter().find(|(k, _)| k.to_ascii_lowercase() == seg).map(|(_, c)| c)
    })
}

fn set_path(doc: &mut Value, path: &[String], value: Value) {
    let mut cur = doc;
    for seg in path {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur.as_object_mut().unwrap().entry(seg.clone()).or_insert(Value::Null);
    }
    *cur = value;
}

/// Applies `KEY=VALUE` overrides to a document. Values are parsed as JSON
/// when possible and taken as strings otherwise.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    let mut problems = Vec::new();
    for item in overrides {
        let Some((key, raw)) = item.split_once('=') else {
            problems.push(format!("override '{item}' is not KEY=VALUE"));
            continue;
        };
        let (key, raw) = (key.trim(), raw.trim());
        let mut reference = serde_json::to_value(ConfigDocument::default()).expect("defaults serialize");
        merge(&mut reference, doc);
        match resolve_key(&reference, key) {
            Ok(path) => {
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
                set_path(doc, &path, value);
            }
            Err(msg) => problems.push(msg),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Reads a document (or the defaults when `path` is `None`), applies
/// overrides and converts to linear units. Every problem found is reported.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Settings> {
    let (mut raw, origin) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })?;
            (v, p.to_path_buf())
        }
        None => (Value::Object(Default::default()), "<defaults>".into()),
    };
    if !raw.is_object() {
        return Err(Error::Parse { path: origin, msg: "top level must be an object".into() });
    }
    apply_overrides(&mut raw, overrides)?;
    let document: ConfigDocument = serde_path_to_error::deserialize(&raw).map_err(|e| {
        let key = e.path().to_string();
        Error::Config(vec![format!("{key}: {}", e.into_inner())])
    })?;
    Settings::from_document(document)
}

impl Settings {
    pub fn from_document(document: ConfigDocument) -> Result<Settings> {
        let mut problems = Vec::new();
        let s = &document.system;
        let t = &document.topology;
        let k = s.k;
        let p_max = dbm_to_watts(s.p_max_dbm);
        let cfg = SystemConfig {
            m: s.m,
            n: s.n,
            k,
            l: s.l,
            alpha: s.alpha.resolve("alpha", k, &mut problems),
            rho: s.rho.resolve("rho", k, &mut problems),
            sigma_w2: dbm_to_watts(s.noise_dbm),
            p_max,
            psi: s.psi,
            gamma0: s.gamma0.resolve("gamma0", k, &mut problems),
            batch: s.batch,
            tau_v: s.tau_v.unwrap_or(1e-4 * p_max),
            tau_u: s.tau_u.unwrap_or(1e-4 * p_max),
            eps_bar: s.eps_bar,
        };
        let tag_region = t.tag_pos.is_none().then_some(t.tag_region);
        let tag_pos = match &t.tag_pos {
            Some(p) => {
                if p.len() != k {
                    problems.push(format!("tag_pos has {} entries but k = {k}", p.len()));
                }
                p.clone()
            }
            None => {
                let r = t.tag_region;
                vec![[(r.x[0] + r.x[1]) / 2.0, (r.y[0] + r.y[1]) / 2.0]; k]
            }
        };
        let topo = Topology {
            pt_pos: t.pt_pos,
            pr_pos: t.pr_pos,
            tag_pos,
            chi0: t.chi0,
            chi_k: t.chi_k.resolve("chi_k", k, &mut problems),
            chi_bk: t.chi_bk.resolve("chi_bk", k, &mut problems),
            g_t: db_to_linear(t.gain_t_db),
            g_r: db_to_linear(t.gain_r_db),
            g_b: t
                .gain_b_db
                .resolve("gain_b_db", k, &mut problems)
                .into_iter()
                .map(db_to_linear)
                .collect(),
            lambda_c: t.wavelength,
        };
        let e = &document.experiment;
        let b = &document.bspd;
        let bspd = BspdOptions {
            max_iters: b.max_iters,
            rel_tol: b.rel_tol,
            window: b.window,
            seed: e.seed,
            trace_every: b.trace_every,
            stop_metric: b.stop_metric,
            ..BspdOptions::default()
        };
        let sweep = e.sweep.as_ref().map(|sw| Sweep {
            param: sw.param,
            values: match sw.param {
                SweepParam::PMax => sw.values.iter().map(|&d| dbm_to_watts(d)).collect(),
                _ => sw.values.clone(),
            },
        });
        let experiment = ExperimentSpec {
            cfg: cfg.clone(),
            topo: topo.clone(),
            tag_region,
            schemes: e.schemes.clone(),
            n_realizations: e.realizations,
            sweep,
            seed: e.seed,
            bspd,
            schedule: document.schedule.clone(),
            ber_slots: e.ber_slots,
        };
        if problems.is_empty() {
            if let Err(err) = experiment.validate() {
                match err {
                    Error::Config(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Settings {
            schedule: document.schedule.clone(),
            document,
            cfg,
            topo,
            tag_region,
            bspd,
            experiment,
        })
    }

    /// The resolved document as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("document serializes")
    }
}
