//! Monte-Carlo campaigns: one CSV row per trial plus a JSON summary.
//!
//! Trial `i` runs on `seed.derive(TRIAL_TAG, i)`. Trials are spread over
//! the rayon pool and collected in trial order, so every artifact is a
//! pure function of the configuration.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cpj::{correct_distribution, instance_divergence, sample_path, CpjInstance};
use crate::error::{Error, Result};
use crate::info::{Dist, JointDist};
use crate::onesamp::{comm_bound, expected_leading_terms, run_sampler, Outcome, SamplerConfig};
use crate::prototree::{
    comm_complexity, compress_copies, compress_with, expected_cpj_divergence, external_info_cost,
    internal_from, protocol_t_max, transcript_distribution, ProtocolTree,
};
use crate::sharedrand::SharedSeed;

pub const TRIAL_TAG: u64 = 0x31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignParams {
    pub eps: f64,
    pub trials: usize,
    pub seed: SharedSeed,
}

impl CampaignParams {
    pub fn new(eps: f64, trials: usize, seed: SharedSeed) -> Result<Self> {
        if trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "eps {eps} outside (0, 1/2]"
            )));
        }
        Ok(Self { eps, trials, seed })
    }

    pub fn trial_seed(&self, trial: usize) -> SharedSeed {
        self.seed.derive(TRIAL_TAG, trial as u64)
    }

    fn run<T: Send>(&self, f: impl Fn(usize, SharedSeed) -> Result<T> + Sync) -> Result<Vec<T>> {
        (0..self.trials)
            .into_par_iter()
            .map(|i| f(i, self.trial_seed(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BitStats {
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl BitStats {
    pub fn of(bits: &[u64]) -> Self {
        if bits.is_empty() {
            return Self::default();
        }
        let mut sorted = bits.to_vec();
        sorted.sort_unstable();
        // nearest rank
        let pct =
            |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Self {
            mean: bits.iter().sum::<u64>() as f64 / bits.len() as f64,
            p50: pct(0.5),
            p90: pct(0.9),
            p99: pct(0.99),
            max: *sorted.last().expect("non-empty"),
        }
    }
}

fn rate(count: usize, total: usize) -> f64 {
    count as f64 / total.max(1) as f64
}

/// Statistical distance between the empirical law of `hits` over
/// `0..exact.len()` and `exact`; 1 when there are no hits.
pub fn empirical_distance(hits: impl IntoIterator<Item = usize>, exact: &[f64]) -> f64 {
    let mut counts = vec![0u64; exact.len()];
    let mut n = 0u64;
    for h in hits {
        counts[h] += 1;
        n += 1;
    }
    if n == 0 {
        return 1.0;
    }
    0.5 * counts
        .iter()
        .zip(exact)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub trial: usize,
    pub a: usize,
    pub b: Option<usize>,
    pub outcome: String,
    #[serde(rename = "bits_A")]
    pub bits_a: u64,
    #[serde(rename = "bits_B")]
    pub bits_b: u64,
    pub rounds_t: u32,
    pub k: u64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub trials: usize,
    pub eps: f64,
    pub t_max: u32,
    pub k_bits: u32,
    pub divergence: f64,
    /// `D(P‖Q) + 2 log₂(1/ε)`.
    pub expected_leading_terms: f64,
    pub bits: BitStats,
    pub match_rate: f64,
    pub mismatch_rate: f64,
    pub abort_rate: f64,
    pub error_rate: f64,
    pub bound_violations: usize,
    /// Distance of A's empirical output law from `P`.
    pub a_marginal_distance: f64,
}

pub fn sample_campaign(
    p: &Dist,
    q: &Dist,
    params: &CampaignParams,
) -> Result<(Vec<SampleRow>, SampleSummary)> {
    let cfg = SamplerConfig::for_pair(p, q, params.eps)?;
    let rows = params.run(|trial, seed| {
        let run = run_sampler(p, q, &seed, cfg)?;
        Ok(SampleRow {
            trial,
            a: run.a,
            b: run.b,
            outcome: run.stats.outcome.as_str().to_string(),
            bits_a: run.stats.bits_a,
            bits_b: run.stats.bits_b,
            rounds_t: run.stats.rounds_t,
            k: run.stats.k,
            bound: comm_bound(p, q, run.a, params.eps),
        })
    })?;
    let n = rows.len();
    let count = |o: Outcome| rows.iter().filter(|r| r.outcome == o.as_str()).count();
    let aborts = count(Outcome::AbortKOverflow) + count(Outcome::AbortTMax);
    let bits: Vec<u64> = rows.iter().map(|r| r.bits_a + r.bits_b).collect();
    let divergence = crate::info::kl_divergence(p, q)?;
    let summary = SampleSummary {
        trials: n,
        eps: params.eps,
        t_max: cfg.t_max,
        k_bits: cfg.k_bits,
        divergence,
        expected_leading_terms: expected_leading_terms(divergence, params.eps),
        bits: BitStats::of(&bits),
        match_rate: rate(count(Outcome::Match), n),
        mismatch_rate: rate(count(Outcome::Mismatch), n),
        abort_rate: rate(aborts, n),
        error_rate: rate(n - count(Outcome::Match), n),
        bound_violations: rows
            .iter()
            .filter(|r| (r.bits_a + r.bits_b) as f64 > r.bound)
            .count(),
        a_marginal_distance: empirical_distance(rows.iter().map(|r| r.a), p.probs()),
    };
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpjRow {
    pub trial: usize,
    /// Concatenated labels of the leaf reached, `-` if none.
    #[serde(rename = "leafA")]
    pub leaf_a: String,
    #[serde(rename = "leafB")]
    pub leaf_b: String,
    #[serde(rename = "match")]
    pub matched: bool,
    pub bits: u64,
    pub divcost_path: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpjSummary {
    pub trials: usize,
    pub eps: f64,
    pub depth: usize,
    pub t_max: u32,
    /// Expected divergence cost under the correct distribution.
    pub expected_divergence: f64,
    pub bits: BitStats,
    pub match_rate: f64,
    pub abort_rate: f64,
    pub bound_violations: usize,
    /// Distance of matched runs' leaf law from the correct distribution.
    pub leaf_distance: f64,
}

pub fn cpj_campaign(f: &CpjInstance, params: &CampaignParams) -> Result<(Vec<CpjRow>, CpjSummary)> {
    let leaf_index: HashMap<Vec<usize>, usize> = f
        .leaves()
        .into_iter()
        .enumerate()
        .map(|(i, (p, _))| (p, i))
        .collect();
    let runs = params.run(|trial, seed| {
        let run = sample_path(f, &seed, params.eps)?;
        let code = |s: &crate::cpj::PathSample| {
            if s.complete {
                s.code()
            } else {
                "-".to_string()
            }
        };
        let matched = run.stats.outcome == Outcome::Match;
        let row = CpjRow {
            trial,
            leaf_a: code(&run.a),
            leaf_b: code(&run.b),
            matched,
            bits: run.stats.total_bits(),
            divcost_path: run.a.divergence_cost,
            bound: run.bound,
        };
        let leaf = matched.then(|| leaf_index[&run.a.indices]);
        Ok((row, leaf, run.stats.outcome.is_abort(), run.stats.max_t))
    })?;
    let n = runs.len();
    let bits: Vec<u64> = runs.iter().map(|r| r.0.bits).collect();
    let summary = CpjSummary {
        trials: n,
        eps: params.eps,
        depth: f.depth(),
        t_max: crate::cpj::instance_t_max(f),
        expected_divergence: instance_divergence(f),
        bits: BitStats::of(&bits),
        match_rate: rate(runs.iter().filter(|r| r.0.matched).count(), n),
        abort_rate: rate(runs.iter().filter(|r| r.2).count(), n),
        bound_violations: runs.iter().filter(|r| r.0.bits as f64 > r.0.bound).count(),
        leaf_distance: empirical_distance(
            runs.iter().filter_map(|r| r.1),
            correct_distribution(f).probs(),
        ),
    };
    Ok((runs.into_iter().map(|r| r.0).collect(), summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoReport {
    pub internal_ic: f64,
    pub external_ic: f64,
    pub cc: usize,
    /// Expected divergence cost of the protocol's CPJ instances.
    pub expected_divergence: f64,
    /// `|expected_divergence - internal_ic|`.
    pub identity_residual: f64,
}

pub fn info_report(pi: &ProtocolTree, mu: &JointDist) -> Result<InfoReport> {
    let t = transcript_distribution(pi, mu)?;
    let internal_ic = internal_from(&t)?;
    let expected_divergence = expected_cpj_divergence(pi, mu)?;
    Ok(InfoReport {
        internal_ic,
        external_ic: external_info_cost(pi, mu)?,
        cc: comm_complexity(pi),
        expected_divergence,
        identity_residual: (expected_divergence - internal_ic).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressRow {
    pub trial: usize,
    pub branch: usize,
    pub x: usize,
    pub y: usize,
    /// Message bits of each side's transcript, `-` if the walk stopped early.
    #[serde(rename = "transcriptA")]
    pub transcript_a: String,
    #[serde(rename = "transcriptB")]
    pub transcript_b: String,
    #[serde(rename = "match")]
    pub matched: bool,
    #[serde(rename = "outputA")]
    pub output_a: Option<i64>,
    #[serde(rename = "outputB")]
    pub output_b: Option<i64>,
    pub bits: u64,
    pub divcost_path: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressSummary {
    pub trials: usize,
    pub eps: f64,
    pub t_max: u32,
    pub info: InfoReport,
    /// Number of rounds `k` (tree depth).
    pub rounds: usize,
    pub bits: BitStats,
    pub matched_mean_bits: f64,
    pub match_rate: f64,
    /// `IC + 2k log₂(1/ε) + 5√(k·IC) + 9k + 1`.
    pub mean_bits_bound: f64,
    pub bound_violations: usize,
    /// Distance of matched runs' transcript law from the exact one.
    pub transcript_distance: f64,
}

pub fn mean_bits_bound(ic: f64, rounds: usize, eps: f64) -> f64 {
    let k = rounds as f64;
    ic + 2.0 * k * (1.0 / eps).log2() + 5.0 * (k * ic.max(0.0)).sqrt() + 9.0 * k + 1.0
}

pub fn compress_campaign(
    pi: &ProtocolTree,
    mu: &JointDist,
    params: &CampaignParams,
) -> Result<(Vec<CompressRow>, CompressSummary)> {
    let exact = transcript_distribution(pi, mu)?;
    let index: HashMap<(usize, Vec<usize>), usize> = exact
        .transcripts
        .iter()
        .enumerate()
        .map(|(i, t)| ((t.branch, t.path.clone()), i))
        .collect();
    let info = info_report(pi, mu)?;
    let t_max = protocol_t_max(pi, mu, 1)?;
    let cfg = SamplerConfig::new(params.eps)?.with_t_max(t_max);
    let shared = Arc::new(pi.clone());
    let runs = params.run(|trial, seed| {
        let run = compress_with(&shared, mu, &seed, cfg)?;
        let matched = run.stats.outcome == Outcome::Match;
        let text = |t: &crate::prototree::Transcript| {
            if t.output.is_some() {
                t.bits()
            } else {
                "-".to_string()
            }
        };
        let hit = matched.then(|| index[&(run.branch, run.a.path.clone())]);
        Ok((
            CompressRow {
                trial,
                branch: run.branch,
                x: run.x,
                y: run.y,
                transcript_a: text(&run.a),
                transcript_b: text(&run.b),
                matched,
                output_a: run.a.output,
                output_b: run.b.output,
                bits: run.stats.total_bits(),
                divcost_path: run.divergence_cost,
                bound: run.bound,
            },
            hit,
        ))
    })?;
    let n = runs.len();
    let bits: Vec<u64> = runs.iter().map(|r| r.0.bits).collect();
    let matched: Vec<u64> = runs
        .iter()
        .filter(|r| r.0.matched)
        .map(|r| r.0.bits)
        .collect();
    let rounds = pi.depth();
    let summary = CompressSummary {
        trials: n,
        eps: params.eps,
        t_max,
        rounds,
        bits: BitStats::of(&bits),
        matched_mean_bits: BitStats::of(&matched).mean,
        match_rate: rate(matched.len(), n),
        mean_bits_bound: mean_bits_bound(info.internal_ic, rounds, params.eps),
        bound_violations: runs.iter().filter(|r| r.0.bits as f64 > r.0.bound).count(),
        transcript_distance: empirical_distance(
            runs.iter().filter_map(|r| r.1),
            &exact.transcript_marginal(),
        ),
        info,
    };
    Ok((runs.into_iter().map(|r| r.0).collect(), summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizeRow {
    pub n: usize,
    pub trials: usize,
    pub t_max: u32,
    pub mean_bits: f64,
    pub per_copy_bits: f64,
    pub match_rate: f64,
    /// Mean divergence cost per copy over matched runs.
    pub per_copy_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizeSummary {
    pub eps: f64,
    pub info: InfoReport,
    /// `IC + 2·CC·log₂(1/ε)`.
    pub per_copy_bound: f64,
    pub rows: Vec<AmortizeRow>,
    /// Every step changes per-copy bits by less than +5%.
    pub non_increasing: bool,
}

/// Compresses `n` parallel copies `trials` times.
pub fn amortize_point(
    pi: &Arc<ProtocolTree>,
    mu: &JointDist,
    n: usize,
    params: &CampaignParams,
) -> Result<AmortizeRow> {
    let t_max = protocol_t_max(pi, mu, n)?;
    let cfg = SamplerConfig::new(params.eps)?.with_t_max(t_max);
    let runs = params.run(|_, seed| compress_copies(pi, mu, n, &seed, cfg))?;
    let trials = runs.len() as f64;
    let mean_bits = runs
        .iter()
        .map(|r| r.stats.total_bits() as f64)
        .sum::<f64>()
        / trials;
    Ok(AmortizeRow {
        n,
        trials: runs.len(),
        t_max,
        mean_bits,
        per_copy_bits: mean_bits / n as f64,
        match_rate: runs
            .iter()
            .filter(|r| r.stats.outcome == Outcome::Match)
            .count() as f64
            / trials,
        per_copy_divergence: {
            let matched: Vec<f64> = runs
                .iter()
                .filter(|r| r.stats.outcome == Outcome::Match)
                .map(|r| r.divergence_cost)
                .collect();
            matched.iter().sum::<f64>() / matched.len().max(1) as f64 / n as f64
        },
    })
}

pub fn per_copy_bound(ic: f64, cc: usize, eps: f64) -> f64 {
    ic + 2.0 * cc as f64 * (1.0 / eps).log2()
}

pub fn is_non_increasing(per_copy: &[f64], tolerance: f64) -> bool {
    per_copy.windows(2).all(|w| w[1] < w[0] * (1.0 + tolerance))
}

pub fn amortize_campaign(
    pi: &ProtocolTree,
    mu: &JointDist,
    n_list: &[usize],
    params: &CampaignParams,
) -> Result<(Vec<AmortizeRow>, AmortizeSummary)> {
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidParameter(
            "n-list must hold positive copy counts".into(),
        ));
    }
    let shared = Arc::new(pi.clone());
    let rows = n_list
        .iter()
        .map(|&n| amortize_point(&shared, mu, n, params))
        .collect::<Result<Vec<_>>>()?;
    let info = info_report(pi, mu)?;
    let per_copy: Vec<f64> = rows.iter().map(|r| r.per_copy_bits).collect();
    let summary = AmortizeSummary {
        eps: params.eps,
        per_copy_bound: per_copy_bound(info.internal_ic, info.cc, params.eps),
        info,
        non_increasing: is_non_increasing(&per_copy, 0.05),
        rows: rows.clone(),
    };
    Ok((rows, summary))
}

pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)
            .map_err(|e| Error::Transport(format!("csv: {e}")))?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Transport(e.to_string()))
}

/// Parses `arg` as inline JSON, or else reads it as a file path.
pub fn load_json<T: DeserializeOwned>(arg: &str) -> Result<T> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return serde_json::from_str(arg).map_err(|e| Error::Input {
            origin: "inline JSON".into(),
            msg: e.to_string(),
        });
    }
    let text = std::fs::read_to_string(arg).map_err(|e| Error::Input {
        origin: arg.into(),
        msg: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Input {
        origin: arg.into(),
        msg: e.to_string(),
    })
}

/// A distribution given directly or as the `key` field of a pair file.
pub fn load_dist(arg: &str, key: &str) -> Result<Dist> {
    let value: serde_json::Value = load_json(arg)?;
    let inner = match value.get(key) {
        Some(v) if value.is_object() && value.get("probs").is_none() => v.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::Input {
        origin: arg.into(),
        msg: e.to_string(),
    })
}

/// A protocol file, or a bundle `{"protocol", "mu"}`; an explicit `mu`
/// argument wins over the bundled prior.
pub fn load_protocol(protocol: &str, mu: Option<&str>) -> Result<(ProtocolTree, JointDist)> {
    let value: serde_json::Value = load_json(protocol)?;
    let bad = |e: serde_json::Error| Error::Input {
        origin: protocol.into(),
        msg: e.to_string(),
    };
    let (pi, bundled) = match value.get("protocol") {
        Some(p) => (
            serde_json::from_value(p.clone()).map_err(bad)?,
            value.get("mu").cloned(),
        ),
        None => (serde_json::from_value(value).map_err(bad)?, None),
    };
    let mu = match (mu, bundled) {
        (Some(m), _) => load_json(m)?,
        (None, Some(m)) => serde_json::from_value(m).map_err(bad)?,
        (None, None) => {
            return Err(Error::Input {
                origin: protocol.into(),
                msg: "no prior: pass --mu or a bundle with \"mu\"".into(),
            })
        }
    };
    Ok((pi, mu))
}

/// Campaign selector with its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Sample {
        p: String,
        q: String,
    },
    Cpj {
        instance: String,
    },
    Compress {
        protocol: String,
        mu: Option<String>,
    },
    Amortize {
        protocol: String,
        mu: Option<String>,
        n_list: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub engine: Engine,
    pub eps: f64,
    pub trials: usize,
    pub seed: SharedSeed,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub csv: String,
    pub summary: serde_json::Value,
}

fn to_value<T: Serialize>(engine: &str, params: &CampaignParams, t: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(t).expect("summaries serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.insert("engine".into(), engine.into());
        obj.insert("seed".into(), params.seed.to_string().into());
    }
    v
}

pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignOutput> {
    let params = CampaignParams::new(cfg.eps, cfg.trials, cfg.seed)?;
    let (csv, summary) = match &cfg.engine {
        Engine::Sample { p, q } => {
            let (p, q) = (load_dist(p, "p")?, load_dist(q, "q")?);
            let (rows, s) = sample_campaign(&p, &q, &params)?;
            (csv_string(&rows)?, to_value("sample", &params, &s))
        }
        Engine::Cpj { instance } => {
            let f: CpjInstance = load_json(instance)?;
            let (rows, s) = cpj_campaign(&f, &params)?;
            (csv_string(&rows)?, to_value("cpj", &params, &s))
        }
        Engine::Compress { protocol, mu } => {
            let (pi, mu) = load_protocol(protocol, mu.as_deref())?;
            let (rows, s) = compress_campaign(&pi, &mu, &params)?;
            (csv_string(&rows)?, to_value("compress", &params, &s))
        }
        Engine::Amortize {
            protocol,
            mu,
            n_list,
        } => {
            let (pi, mu) = load_protocol(protocol, mu.as_deref())?;
            let (rows, s) = amortize_campaign(&pi, &mu, n_list, &params)?;
            (csv_string(&rows)?, to_value("amortize", &params, &s))
        }
    };
    Ok(CampaignOutput { csv, summary })
}

/// Writes the CSV to `out` and the summary next to it as `<out>.json`.
pub fn write_outputs(out: &Path, output: &CampaignOutput) -> Result<PathBuf> {
    std::fs::write(out, &output.csv)?;
    let mut summary_path = out.as_os_str().to_owned();
    summary_path.push(".json");
    let summary_path = PathBuf::from(summary_path);
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&output.summary).expect("json"),
    )?;
    Ok(summary_path)
}
