//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`model.`, `data.`, `prune.`, `run.`). Blank lines and lines
//! starting with `#` are ignored. Unknown or repeated keys are errors, and every error names
//! the offending key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sharp_core::baselines::PrunerKind;
use sharp_core::regdedup::{MergeRule, PruneConfig};
use sharp_core::videogen::{NeedleSpec, SyntheticSpec, DEFAULT_SHARED_OFFSET};
use sharp_core::ModelConfig;

use crate::error::{Result, SharpError};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlan {
    pub scenes: usize,
    pub frames_per_scene: usize,
    pub tokens_per_frame: usize,
    pub noise_sigma: f32,
    pub text_len: usize,
    pub shared_offset: f32,
    /// Number of needles spread over the middle half of the frames.
    pub needles: usize,
    /// Blend toward the query-aligned direction, in `[0, 1]`.
    pub needle_strength: f32,
}

impl Default for SyntheticPlan {
    fn default() -> Self {
        Self {
            scenes: 3,
            frames_per_scene: 4,
            tokens_per_frame: 8,
            noise_sigma: 0.1,
            text_len: 4,
            shared_offset: DEFAULT_SHARED_OFFSET,
            needles: 0,
            needle_strength: 1.0,
        }
    }
}

impl SyntheticPlan {
    pub fn spec(&self, data_seed: u64) -> SyntheticSpec {
        let mut spec = SyntheticSpec::uniform(
            self.scenes,
            self.frames_per_scene,
            self.tokens_per_frame,
            self.noise_sigma,
            self.text_len,
            data_seed,
        );
        spec.shared_offset = self.shared_offset;
        spec.needles = needle_plan(spec.total_frames(), self.tokens_per_frame, self.needles, data_seed);
        spec
    }
}

/// `count` needles; needle `k` sits in frame `F/4 + k·(F/2)/count` at a seed-dependent slot.
pub fn needle_plan(frames: usize, tokens_per_frame: usize, count: usize, data_seed: u64) -> Vec<NeedleSpec> {
    (0..count)
        .map(|k| NeedleSpec {
            frame: (frames / 4 + k * (frames / 2).max(1) / count).min(frames.saturating_sub(1)),
            slot: ((data_seed as usize).wrapping_add(3 * k)) % tokens_per_frame.max(1),
            seed: data_seed.wrapping_mul(1000).wrapping_add(k as u64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticPlan),
    Homogeneous {
        frames: usize,
        tokens_per_frame: usize,
        text_len: usize,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    /// Base data seed; trial `t` uses `data_seed + t`.
    pub data_seed: u64,
    pub prune: PruneConfig,
    pub pruners: Vec<PrunerKind>,
    pub trials: usize,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataSource::Synthetic(SyntheticPlan::default()),
            data_seed: 0,
            prune: PruneConfig::default(),
            pruners: vec![PrunerKind::Sharp],
            trials: 1,
            out_dir: None,
            cache_dir: None,
            plots: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| SharpError::config(key, format!("cannot parse `{value}`: {e}")))
}

pub fn parse_pruners(key: &str, value: &str) -> Result<Vec<PrunerKind>> {
    let list: Vec<PrunerKind> = value
        .split(',')
        .map(|s| parse::<PrunerKind>(key, s.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(SharpError::config(key, "no pruner given"));
    }
    Ok(list)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SharpError::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SharpError::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(SharpError::config(k, "given more than once"));
            }
        }

        let mut cfg = Self::default();
        let mut plan = SyntheticPlan::default();
        let mut source = "synthetic".to_string();
        let mut path: Option<PathBuf> = None;
        let mut homogeneous_frames = 12usize;

        for (k, v) in &entries {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "model.num_layers" => cfg.model.num_layers = parse(k, v)?,
                "model.num_heads" => cfg.model.num_heads = parse(k, v)?,
                "model.head_dim" => cfg.model.head_dim = parse(k, v)?,
                "model.ffn_dim" => cfg.model.ffn_dim = parse(k, v)?,
                "model.rope_base" => cfg.model.rope_base = parse(k, v)?,
                "model.weight_seed" => cfg.model.weight_seed = parse(k, v)?,
                "model.prune_layer" => cfg.model.prune_layer = parse(k, v)?,
                "model.shared_qk" => cfg.model.shared_qk = parse(k, v)?,

                "data.source" => source = v.to_string(),
                "data.path" => path = Some(PathBuf::from(v)),
                "data.seed" => cfg.data_seed = parse(k, v)?,
                "data.scenes" => plan.scenes = parse(k, v)?,
                "data.frames_per_scene" => plan.frames_per_scene = parse(k, v)?,
                "data.frames" => homogeneous_frames = parse(k, v)?,
                "data.tokens_per_frame" => plan.tokens_per_frame = parse(k, v)?,
                "data.noise_sigma" => plan.noise_sigma = parse(k, v)?,
                "data.text_len" => plan.text_len = parse(k, v)?,
                "data.shared_offset" => plan.shared_offset = parse(k, v)?,
                "data.needles" => plan.needles = parse(k, v)?,
                "data.needle_strength" => plan.needle_strength = parse(k, v)?,

                "prune.retention" => cfg.prune.retention = parse(k, v)?,
                "prune.lambda" => cfg.prune.lambda = parse(k, v)?,
                "prune.beta" => cfg.prune.beta = parse(k, v)?,
                "prune.tau_seg" => cfg.prune.tau_seg = parse(k, v)?,
                "prune.tau_filter" => cfg.prune.tau_filter = parse(k, v)?,
                "prune.tau_merge" => cfg.prune.tau_merge = parse(k, v)?,
                "prune.tau_cluster" => cfg.prune.tau_cluster = parse(k, v)?,
                "prune.merge_rule" => cfg.prune.merge_rule = parse::<MergeRule>(k, v)?,

                "run.pruner" => cfg.pruners = parse_pruners(k, v)?,
                "run.trials" => cfg.trials = parse(k, v)?,
                "run.out_dir" => cfg.out_dir = Some(PathBuf::from(v)),
                "run.cache_dir" => cfg.cache_dir = Some(PathBuf::from(v)),
                "run.plots" => cfg.plots = parse(k, v)?,
                other => return Err(SharpError::config(other, "unknown key")),
            }
        }
        cfg.model.hidden_dim = cfg.model.num_heads * cfg.model.head_dim;

        cfg.data = match source.as_str() {
            "synthetic" => DataSource::Synthetic(plan),
            "homogeneous" => DataSource::Homogeneous {
                frames: homogeneous_frames,
                tokens_per_frame: plan.tokens_per_frame,
                text_len: plan.text_len,
            },
            "file" => DataSource::File(path.ok_or_else(|| SharpError::config("data.path", "required when data.source = file"))?),
            other => {
                return Err(SharpError::config(
                    "data.source",
                    format!("unknown source `{other}` (expected synthetic | homogeneous | file)"),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section, reporting the first failing key.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| {
            let msg = e.to_string();
            let detail = msg.trim_start_matches("invalid configuration: ");
            let field = ["prune_layer", "head_dim", "rope_base", "hidden_dim"]
                .into_iter()
                .find(|f| detail.starts_with(f))
                .map_or_else(|| "model".to_string(), |f| format!("model.{f}"));
            SharpError::config(field, detail)
        })?;
        let p = &self.prune;
        for (key, v) in [
            ("prune.retention", p.retention),
            ("prune.tau_seg", p.tau_seg),
            ("prune.tau_filter", p.tau_filter),
            ("prune.tau_merge", p.tau_merge),
            ("prune.tau_cluster", p.tau_cluster),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SharpError::config(key, format!("{v} must be in (0, 1]")));
            }
        }
        if !p.lambda.is_finite() {
            return Err(SharpError::config("prune.lambda", "must be finite"));
        }
        if !(p.beta.is_finite() && p.beta >= 0.0) {
            return Err(SharpError::config("prune.beta", "must be finite and >= 0"));
        }
        if self.trials == 0 {
            return Err(SharpError::config("run.trials", "must be at least 1"));
        }
        if self.pruners.is_empty() {
            return Err(SharpError::config("run.pruner", "no pruner given"));
        }
        match &self.data {
            DataSource::Synthetic(plan) => {
                for (key, v) in [
                    ("data.scenes", plan.scenes),
                    ("data.frames_per_scene", plan.frames_per_scene),
                    ("data.tokens_per_frame", plan.tokens_per_frame),
                    ("data.text_len", plan.text_len),
                ] {
                    if v == 0 {
                        return Err(SharpError::config(key, "must be at least 1"));
                    }
                }
                if !(plan.noise_sigma >= 0.0 && plan.noise_sigma.is_finite()) {
                    return Err(SharpError::config("data.noise_sigma", "must be finite and >= 0"));
                }
                if !(0.0..=1.0).contains(&plan.needle_strength) {
                    return Err(SharpError::config("data.needle_strength", "must be in [0, 1]"));
                }
                if !plan.shared_offset.is_finite() {
                    return Err(SharpError::config("data.shared_offset", "must be finite"));
                }
            }
            DataSource::Homogeneous {
                frames,
                tokens_per_frame,
                text_len,
            } => {
                for (key, v) in [
                    ("data.frames", *frames),
                    ("data.tokens_per_frame", *tokens_per_frame),
                    ("data.text_len", *text_len),
                ] {
                    if v == 0 {
                        return Err(SharpError::config(key, "must be at least 1"));
                    }
                }
            }
            DataSource::File(_) => {}
        }
        Ok(())
    }
}
