//! Experiment runner: per-trial data and model construction, pruning, metrics and CSV output.
//!
//! Trial `t` uses `weight_seed + t` and `data_seed + t` for every pruner, so all pruners see
//! identical inputs within a trial. Trials run on the rayon pool and are reassembled in trial
//! order. Everything written to the metric tables is a function of the config alone; wall
//! times go to `timings.csv`, the only file that differs between runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sharp_core::baselines::PrunerKind;
use sharp_core::flops::{prefill_flops, refinement_overhead, FlopsParams, FlopsReport};
use sharp_core::metrics::{bias_concentration, needle_retention, segment_coverage};
use sharp_core::model::init_model;
use sharp_core::regdedup::{PruneResult, StageClock, StageTimings};
use sharp_core::segmask::{detect_boundaries, frame_pool, SegmentPartition};
use sharp_core::videogen::{align_needles, generate, homogeneous};
use sharp_core::{ModelConfig, ModelWeights};

use crate::cache::ProfileCache;
use crate::config::{DataSource, ExperimentConfig};
use crate::error::{Result, SharpError};
use crate::seqfile::{self, SequenceFile};

/// Nanoseconds since construction.
#[derive(Debug)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl StageClock for WallClock {
    fn now_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

/// Bumped whenever a column is added, removed, renamed or reordered in any table below.
pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 19] = [
    "trial",
    "pruner",
    "weight_seed",
    "data_seed",
    "visual_len",
    "budget",
    "requested_retention",
    "achieved_retention",
    "needles",
    "needle_retention",
    "segment_coverage",
    "segments_detected",
    "end_bias",
    "flops_ratio",
    "total_tflops",
    "retained",
    "absorbed",
    "dropped",
    "shortfall",
];
pub const STATS_COLUMNS: [&str; 6] = ["trial", "pruner", "stage", "segment_id", "count", "achieved_retention"];
pub const PARTITION_COLUMNS: [&str; 4] = ["trial", "frame_index", "segment_id", "truth_segment_id"];
pub const FLOPS_COLUMNS: [&str; 6] = ["trial", "pruner", "R", "total_tflops", "ratio", "per_stage_overhead"];
pub const SCORES_COLUMNS: [&str; 8] = [
    "trial",
    "pruner",
    "position",
    "frame",
    "raw_score",
    "ranking_score",
    "retained",
    "covered",
];
pub const TIMINGS_COLUMNS: [&str; 8] = [
    "trial",
    "pruner",
    "attn_ns",
    "filter_ns",
    "dedup_ns",
    "fill_ns",
    "forward_ns",
    "total_ns",
];

/// Inputs for one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub file: SequenceFile,
    pub weights: ModelWeights,
    pub weight_seed: u64,
    pub data_seed: u64,
}

/// Builds the model and data of trial `t`.
pub fn trial_data(config: &ExperimentConfig, t: usize, loaded: Option<&SequenceFile>) -> Result<TrialData> {
    let weight_seed = config.model.weight_seed.wrapping_add(t as u64);
    let data_seed = config.data_seed.wrapping_add(t as u64);
    let model: ModelConfig = config.model.clone().with_seed(weight_seed);
    let weights = init_model(&model)?;
    let file = match (&config.data, loaded) {
        (_, Some(f)) => f.clone(),
        (DataSource::File(path), None) => seqfile::read(path)?,
        (DataSource::Synthetic(plan), None) => {
            let mut video = generate(&plan.spec(data_seed), &model)?;
            if !video.needles.is_empty() {
                video = align_needles(&weights, &video, plan.needle_strength)?;
            }
            SequenceFile::from_video(&video)
        }
        (
            DataSource::Homogeneous {
                frames,
                tokens_per_frame,
                text_len,
            },
            None,
        ) => SequenceFile {
            sequence: homogeneous(*frames, *tokens_per_frame, *text_len, &model)?,
            truth: Some(Vec::new()),
            needles: Vec::new(),
        },
    };
    if file.sequence.dim() != model.hidden_dim {
        return Err(SharpError::config(
            "model.num_heads",
            format!(
                "sequence width {} does not match hidden size {}",
                file.sequence.dim(),
                model.hidden_dim
            ),
        ));
    }
    Ok(TrialData {
        file,
        weights,
        weight_seed,
        data_seed,
    })
}

/// One pruner on one trial.
#[derive(Debug, Clone)]
pub struct PrunerRun {
    pub result: PruneResult,
    pub flops: FlopsReport,
    pub needle_rate: f64,
    pub coverage: Option<f64>,
    pub end_bias: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub trial: usize,
    pub weight_seed: u64,
    pub data_seed: u64,
    pub needles: usize,
    pub frames: usize,
    pub detected: SegmentPartition,
    pub truth: Option<SegmentPartition>,
    pub runs: Vec<PrunerRun>,
}

pub fn run_trial(
    config: &ExperimentConfig,
    t: usize,
    loaded: Option<&SequenceFile>,
    cache: &ProfileCache,
) -> Result<TrialOutput> {
    let data = trial_data(config, t, loaded)?;
    let seq = &data.file.sequence;
    let truth = data.file.truth_partition();
    let detected = detect_boundaries(&frame_pool(seq)?, config.prune.tau_seg, seq.tokens_per_frame())?;
    let params = FlopsParams::from_model(data.weights.config())?;
    let mut runs = Vec::with_capacity(config.pruners.len());
    for &kind in &config.pruners {
        let clock = WallClock::new();
        let result = kind.run_timed(seq, &data.weights, &config.prune, cache, data.data_seed, &clock)?;
        let mut flops = prefill_flops(seq.visual_len(), &params, result.retained_indices().len() as f64 / seq.visual_len() as f64)?;
        flops.overhead = refinement_overhead(&result.stats, params.hidden);
        runs.push(PrunerRun {
            needle_rate: needle_retention(&result, &data.file.needles),
            coverage: truth.as_ref().map(|p| segment_coverage(&result, p)),
            end_bias: bias_concentration(&result)?,
            flops,
            result,
        });
    }
    Ok(TrialOutput {
        trial: t,
        weight_seed: data.weight_seed,
        data_seed: data.data_seed,
        needles: data.file.needles.len(),
        frames: seq.frames(),
        detected,
        truth,
        runs,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub pruners: Vec<PrunerKind>,
    pub trials: Vec<TrialOutput>,
}

/// Runs every trial on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig, cache: &ProfileCache) -> Result<ExperimentReport> {
    config.validate()?;
    let loaded = match &config.data {
        DataSource::File(path) => Some(seqfile::read(path)?),
        _ => None,
    };
    let trials: Vec<TrialOutput> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t, loaded.as_ref(), cache))
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        pruners: config.pruners.clone(),
        trials,
    })
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn e(v: f64) -> String {
    format!("{v:.6e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| SharpError::Csv(e.into_error().into()))
}

impl ExperimentReport {
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(METRICS_COLUMNS)?;
        // numeric columns that get mean/std rows, by position in METRICS_COLUMNS
        let mut agg: BTreeMap<usize, Vec<Vec<Option<f64>>>> = BTreeMap::new();
        for tr in &self.trials {
            for (p, run) in tr.runs.iter().enumerate() {
                let r = &run.result;
                let s = &r.stats;
                let detected = (r.pruner == "sharp").then(|| tr.detected.len() as f64);
                let nums: [Option<f64>; 15] = [
                    Some(r.visual_len as f64),
                    Some(s.budget as f64),
                    Some(s.requested_retention as f64),
                    Some(r.retained_indices().len() as f64 / r.visual_len as f64),
                    Some(tr.needles as f64),
                    Some(run.needle_rate),
                    run.coverage,
                    detected,
                    Some(run.end_bias),
                    Some(run.flops.ratio),
                    Some(run.flops.total / 1e12),
                    Some(s.retained as f64),
                    Some(s.absorbed as f64),
                    Some(s.dropped as f64),
                    Some(s.shortfall as f64),
                ];
                agg.entry(p).or_default().push(nums.to_vec());
                let mut row = vec![
                    tr.trial.to_string(),
                    r.pruner.to_string(),
                    tr.weight_seed.to_string(),
                    tr.data_seed.to_string(),
                ];
                for (i, v) in nums.iter().enumerate() {
                    row.push(match (i, v) {
                        // integer-valued columns print without decimals
                        (0 | 1 | 4 | 7 | 11..=14, Some(x)) => format!("{}", *x as u64),
                        (10, Some(x)) => e(*x),
                        (_, v) => opt(*v),
                    });
                }
                w.write_record(&row)?;
            }
        }
        for (p, rows) in &agg {
            let name = self.pruners[*p].name();
            let cols = rows[0].len();
            let stats: Vec<Option<(f64, f64)>> = (0..cols)
                .map(|c| {
                    let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
                    (!vals.is_empty()).then(|| mean_std(&vals))
                })
                .collect();
            for (label, pick) in [("mean", 0usize), ("std", 1)] {
                let mut row = vec![label.to_string(), name.to_string(), String::new(), String::new()];
                for (c, st) in stats.iter().enumerate() {
                    row.push(match st {
                        Some(ms) => {
                            let v = if pick == 0 { ms.0 } else { ms.1 };
                            if c == 10 {
                                e(v)
                            } else {
                                f(v)
                            }
                        }
                        None => String::new(),
                    });
                }
                w.write_record(&row)?;
            }
        }
        finish(w)
    }

    pub fn stats_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(STATS_COLUMNS)?;
        for tr in &self.trials {
            for run in &tr.runs {
                let r = &run.result;
                for st in &r.stats.per_segment {
                    for (stage, count) in [
                        ("selected", st.selected),
                        ("prefiltered", st.prefiltered),
                        ("remaining", st.remaining),
                        ("deduped", st.deduped),
                        ("clusters", st.clusters),
                        ("filled", st.filled),
                        ("shortfall", st.shortfall),
                    ] {
                        w.write_record([
                            tr.trial.to_string(),
                            r.pruner.to_string(),
                            stage.to_string(),
                            st.segment.to_string(),
                            count.to_string(),
                            String::new(),
                        ])?;
                    }
                }
                w.write_record([
                    tr.trial.to_string(),
                    r.pruner.to_string(),
                    "summary".to_string(),
                    "all".to_string(),
                    r.stats.retained.to_string(),
                    f(r.achieved_retention() as f64),
                ])?;
            }
        }
        finish(w)
    }

    pub fn partition_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(PARTITION_COLUMNS)?;
        for tr in &self.trials {
            let det = tr.detected.frame_segments();
            let truth = tr.truth.as_ref().map(|p| p.frame_segments());
            for frame in 0..tr.frames {
                w.write_record([
                    tr.trial.to_string(),
                    frame.to_string(),
                    det[frame].to_string(),
                    truth.as_ref().map(|t| t[frame].to_string()).unwrap_or_default(),
                ])?;
            }
        }
        finish(w)
    }

    pub fn flops_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(FLOPS_COLUMNS)?;
        for tr in &self.trials {
            for run in &tr.runs {
                let fl = &run.flops;
                let o = fl.overhead;
                w.write_record([
                    tr.trial.to_string(),
                    run.result.pruner.to_string(),
                    f(fl.retention),
                    e(fl.total / 1e12),
                    f(fl.ratio),
                    format!("filter={};dedup={};fill={}", e(o.filter), e(o.dedup), e(o.fill)),
                ])?;
            }
        }
        finish(w)
    }

    pub fn scores_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(SCORES_COLUMNS)?;
        for tr in &self.trials {
            for run in &tr.runs {
                let r = &run.result;
                let p = tr.detected.tokens_per_frame();
                let retained = r.retained_indices();
                let covered = r.covered_indices();
                for i in 0..r.visual_len {
                    let score = |s: &Option<sharp_core::ScoreVector>| {
                        s.as_ref().map(|s| format!("{:.6e}", s.values[i])).unwrap_or_default()
                    };
                    w.write_record([
                        tr.trial.to_string(),
                        r.pruner.to_string(),
                        i.to_string(),
                        (i / p).to_string(),
                        score(&r.raw_scores),
                        score(&r.ranking_scores),
                        u8::from(retained.binary_search(&i).is_ok()).to_string(),
                        u8::from(covered.binary_search(&i).is_ok()).to_string(),
                    ])?;
                }
            }
        }
        finish(w)
    }

    pub fn timings_csv(&self) -> Result<Vec<u8>> {
        let mut w = writer();
        w.write_record(TIMINGS_COLUMNS)?;
        for tr in &self.trials {
            for run in &tr.runs {
                let StageTimings {
                    attn,
                    filter,
                    dedup,
                    fill,
                    forward,
                    total,
                } = run.result.timings;
                let mut row = vec![tr.trial.to_string(), run.result.pruner.to_string()];
                row.extend([attn, filter, dedup, fill, forward, total].map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        finish(w)
    }

    /// Every deterministic table, keyed by file name.
    pub fn deterministic_files(&self) -> Result<BTreeMap<&'static str, Vec<u8>>> {
        Ok(BTreeMap::from([
            ("metrics.csv", self.metrics_csv()?),
            ("stats.csv", self.stats_csv()?),
            ("partition.csv", self.partition_csv()?),
            ("flops.csv", self.flops_csv()?),
            ("scores.csv", self.scores_csv()?),
        ]))
    }

    /// Writes all tables (and `timings.csv`) into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| SharpError::io(dir, e))?;
        let mut files = self.deterministic_files()?;
        files.insert("timings.csv", self.timings_csv()?);
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| SharpError::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wall_clock_is_monotone() {
        let c = WallClock::new();
        let a = c.now_ns();
        assert!(c.now_ns() >= a);
    }
}
