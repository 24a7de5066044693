//! Flat JSON run configuration. Every key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidtome_core::harness::PipelineConfig;
use vidtome_core::{MergeMode, NoiseSchedule, OrderPolicy, ToyDenoiserConfig, VidToMeConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Synthetic {
    /// A shared base frame plus a linear drift and per-frame noise.
    #[default]
    Drifting,
    /// Independent standard-normal frames.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Sequential,
    #[default]
    Random,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Latent file to edit; when absent a synthetic video is generated.
    pub input: Option<PathBuf>,
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub latent_channels: Option<usize>,
    pub synthetic: Synthetic,
    pub drift: f64,
    pub noise: f64,

    pub token_channels: usize,
    pub heads: usize,
    pub attention_sites: usize,
    pub merge_prefix: usize,
    pub merge_suffix: usize,
    /// Explicit per-site merge flags; overrides `merge_prefix`/`merge_suffix`.
    pub merge_sites: Option<Vec<bool>>,
    pub score_gain: f64,
    pub content_gain: f64,
    pub readout_gain: f64,
    pub model_seed: u64,

    pub steps: Option<usize>,
    /// Explicit `alpha_1..alpha_T`; must be strictly decreasing in `(0, 1]`.
    pub alphas: Option<Vec<f64>>,

    pub chunk_size: usize,
    pub local_ratio: f64,
    pub global_ratio: f64,
    pub merge_to_local_probability: f64,
    pub merge_mode: MergeMode,
    pub global_merging: bool,
    pub merging: bool,
    pub merge_during_inversion: bool,
    pub order: Order,
    pub mixed_fraction: f64,
    pub inversion_iterations: usize,
    pub inversion_tolerance: f64,
    /// Conditioning seed for generation; the model default is used when absent,
    /// which makes the run a reconstruction.
    pub edit_conditioning_seed: Option<u64>,

    pub output: PathBuf,
    /// Metrics report; defaults to the output path with a `.json` extension.
    pub report: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ToyDenoiserConfig::default();
        let vt = VidToMeConfig::default();
        let pipe = PipelineConfig::default();
        Self {
            input: None,
            frames: None,
            height: None,
            width: None,
            latent_channels: None,
            synthetic: Synthetic::default(),
            drift: 0.05,
            noise: 0.05,
            token_channels: model.token_channels,
            heads: model.heads,
            attention_sites: model.sites,
            merge_prefix: model.merge_prefix,
            merge_suffix: model.merge_suffix,
            merge_sites: None,
            score_gain: model.score_gain,
            content_gain: model.content_gain,
            readout_gain: model.readout_gain,
            model_seed: model.seed,
            steps: None,
            alphas: None,
            chunk_size: vt.chunk_size,
            local_ratio: vt.local_ratio,
            global_ratio: vt.global_ratio,
            merge_to_local_probability: vt.merge_to_local_probability,
            merge_mode: vt.merge_mode,
            global_merging: vt.global_merging,
            merging: pipe.merging,
            merge_during_inversion: pipe.merge_during_inversion,
            order: Order::default(),
            mixed_fraction: 0.5,
            inversion_iterations: pipe.inversion_iterations,
            inversion_tolerance: pipe.inversion_tolerance,
            edit_conditioning_seed: None,
            output: PathBuf::from("out.vtml"),
            report: None,
            seed: 0,
        }
    }
}

pub const DEFAULT_FRAMES: usize = 8;
pub const DEFAULT_SIDE: usize = 16;
pub const DEFAULT_STEPS: usize = 50;

/// Everything a run needs, checked for consistency.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub model: ToyDenoiserConfig,
    pub merge_sites: Option<Vec<bool>>,
    pub pipeline: PipelineConfig,
    pub schedule: NoiseSchedule,
    pub input: Option<PathBuf>,
    /// `(frames, height, width, latent_channels)` for synthetic input.
    pub synthetic_shape: (usize, usize, usize, usize),
    pub synthetic: Synthetic,
    pub drift: f64,
    pub noise: f64,
    pub edit_conditioning_seed: Option<u64>,
    pub output: PathBuf,
    pub report: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.output);
        if let Some(p) = cfg.report.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn vidtome(&self) -> VidToMeConfig {
        VidToMeConfig {
            chunk_size: self.chunk_size,
            local_ratio: self.local_ratio,
            global_ratio: self.global_ratio,
            merge_to_local_probability: self.merge_to_local_probability,
            merge_mode: self.merge_mode,
            global_merging: self.global_merging,
            seed: self.seed,
        }
    }

    pub fn order_policy(&self) -> OrderPolicy {
        match self.order {
            Order::Sequential => OrderPolicy::Sequential,
            Order::Random => OrderPolicy::Random,
            Order::Mixed => OrderPolicy::Mixed {
                fraction: self.mixed_fraction,
            },
        }
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        match (&self.alphas, self.steps) {
            (Some(a), Some(t)) if a.len() != t => Err(CliError::Config(format!(
                "steps = {t} but {} alphas were given",
                a.len()
            ))),
            (Some(a), _) => NoiseSchedule::new(a.clone()).map_err(CliError::config),
            (None, t) => NoiseSchedule::linear(t.unwrap_or(DEFAULT_STEPS)).map_err(CliError::config),
        }
    }

    pub fn resolve(&self) -> CliResult<ResolvedRun> {
        let vidtome = self.vidtome();
        vidtome.validate().map_err(CliError::config)?;
        let pipeline = PipelineConfig {
            vidtome,
            order: self.order_policy(),
            merging: self.merging,
            merge_during_inversion: self.merge_during_inversion,
            inversion_iterations: self.inversion_iterations,
            inversion_tolerance: self.inversion_tolerance,
        };
        pipeline.validate().map_err(CliError::config)?;
        let schedule = self.schedule()?;
        for (name, v) in [("drift", self.drift), ("noise", self.noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        let dims = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("latent_channels", self.latent_channels),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == Some(0)) {
            return Err(CliError::Config(format!("{name} must be >= 1")));
        }
        let model = ToyDenoiserConfig {
            latent_channels: self.latent_channels.unwrap_or(ToyDenoiserConfig::default().latent_channels),
            token_channels: self.token_channels,
            heads: self.heads,
            sites: self.attention_sites,
            merge_prefix: self.merge_prefix,
            merge_suffix: self.merge_suffix,
            score_gain: self.score_gain,
            content_gain: self.content_gain,
            readout_gain: self.readout_gain,
            seed: self.model_seed,
        };
        if let Some(flags) = &self.merge_sites {
            if flags.len() != self.attention_sites {
                return Err(CliError::Config(format!(
                    "merge_sites has {} flags for {} attention sites",
                    flags.len(),
                    self.attention_sites
                )));
            }
        }
        let output = self.output.clone();
        let report = self.report.clone().unwrap_or_else(|| output.with_extension("json"));
        if report == output {
            return Err(CliError::Config("report and output paths coincide".into()));
        }
        Ok(ResolvedRun {
            model,
            merge_sites: self.merge_sites.clone(),
            pipeline,
            schedule,
            input: self.input.clone(),
            synthetic_shape: (
                self.frames.unwrap_or(DEFAULT_FRAMES),
                self.height.unwrap_or(DEFAULT_SIDE),
                self.width.unwrap_or(DEFAULT_SIDE),
                model.latent_channels,
            ),
            synthetic: self.synthetic,
            drift: self.drift,
            noise: self.noise,
            edit_conditioning_seed: self.edit_conditioning_seed,
            output,
            report,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(json: &str) -> String {
        match RunConfig::from_json(json).and_then(|c| c.resolve().map(|_| ())) {
            Err(e) => e.to_string(),
            Ok(()) => panic!("{json} accepted"),
        }
    }

    #[test]
    fn empty_document_is_the_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let run = cfg.resolve().unwrap();
        assert_eq!(run.schedule.steps(), 50);
        assert_eq!(run.synthetic_shape, (8, 16, 16, 4));
        assert_eq!(run.report, PathBuf::from("out.json"));
    }

    #[test]
    fn specific_messages() {
        assert!(err(r#"{"local_ratio": 1.5}"#).contains("local_ratio = 1.5 outside [0, 1]"));
        assert!(err(r#"{"global_ratio": -0.1}"#).contains("global_ratio"));
        assert!(err(r#"{"merge_to_local_probability": 2}"#).contains("merge_to_local_probability"));
        assert!(err(r#"{"alphas": [0.9, 0.95]}"#).contains("not strictly decreasing"));
        assert!(err(r#"{"alphas": [0.9, 0.0]}"#).contains("outside (0, 1]"));
        assert!(err(r#"{"alphas": [0.9], "steps": 2}"#).contains("steps = 2"));
        assert!(err(r#"{"chunk_sizes": [4]}"#).contains("unknown field"));
        assert!(err(r#"{"order": "mixed", "mixed_fraction": 3}"#).contains("mixed fraction"));
        assert!(err(r#"{"merge_sites": [true]}"#).contains("merge_sites"));
        assert!(err(r#"{"frames": 0}"#).contains("frames"));
        assert!(err(r#"{"merge_mode": "median"}"#).contains("unknown variant"));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let path = dir.join("run.json");
        fs::write(&path, r#"{"output": "a/out.vtml", "input": "/abs/in.vtml"}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.output, dir.join("a/out.vtml"));
        assert_eq!(cfg.input, Some(PathBuf::from("/abs/in.vtml")));
    }
}
