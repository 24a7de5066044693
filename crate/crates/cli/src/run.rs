//! `vidtome run`: invert a video to noise, regenerate it with merged attention,
//! and write the latents plus a JSON metrics report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::Serialize;
use vidtome_core::harness::frame_distance;
use vidtome_core::{
    generate_video, invert_video, merged_counts, temporal_variance, CostReport, RunStats, SeededRng, ToyDenoiser,
    VideoLatents,
};

use crate::config::{ResolvedRun, RunConfig, Synthetic};
use crate::error::{CliError, CliResult};
use crate::latent_file::{read_video, write_video};

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTotals {
    pub inversion: CostReport,
    pub generation: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// `"vidtome"` when generation merges tokens, `"per_frame"` otherwise.
    pub mode: &'static str,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub latent_channels: usize,
    pub tokens_per_frame: usize,
    pub steps: usize,
    pub seed: u64,
    pub temporal_variance_input: Option<f64>,
    pub temporal_variance_output: Option<f64>,
    pub first_last_distance_output: f64,
    /// Relative difference between output and input latents.
    pub relative_change: f64,
    pub cost: CostTotals,
    pub chunk_evaluations: u64,
    /// Measured attention-input fraction for full chunks with global tokens.
    pub merged_token_ratio: Option<f64>,
    /// The same fraction from the closed-form merge counts.
    pub expected_merged_token_ratio: Option<f64>,
    pub wall_time_seconds: f64,
    pub output: PathBuf,
}

fn load_input(run: &ResolvedRun, cfg: &RunConfig, rng: &mut SeededRng) -> CliResult<VideoLatents> {
    let video_seed = rng.next_u64();
    let Some(path) = &run.input else {
        let (n, h, w, c) = run.synthetic_shape;
        let video = match run.synthetic {
            Synthetic::Drifting => VideoLatents::drifting(n, h, w, c, run.drift, run.noise, video_seed),
            Synthetic::Random => VideoLatents::random(n, h, w, c, video_seed),
        };
        return video.map_err(CliError::config);
    };
    let video = read_video(path)?;
    let checks = [
        ("frames", cfg.frames, video.frames()),
        ("height", cfg.height, video.height()),
        ("width", cfg.width, video.width()),
        ("latent_channels", cfg.latent_channels, video.channels()),
    ];
    for (name, want, got) in checks {
        if let Some(want) = want {
            if want != got {
                return Err(CliError::Config(format!(
                    "{name} = {want} but {} has {got}",
                    path.display()
                )));
            }
        }
    }
    Ok(video)
}

fn build_model(run: &ResolvedRun, latent_channels: usize) -> CliResult<ToyDenoiser> {
    let cfg = vidtome_core::ToyDenoiserConfig {
        latent_channels,
        ..run.model
    };
    let mut model = ToyDenoiser::new(&cfg).map_err(CliError::config)?;
    if let Some(flags) = &run.merge_sites {
        for (site, &flag) in model.sites_mut().iter_mut().zip(flags) {
            site.merge_enabled = flag;
        }
    }
    Ok(model)
}

/// Runs a configuration. Output latents depend only on the configuration and
/// seed; the report additionally carries wall time.
pub fn execute(mut cfg: RunConfig, overrides: &RunOverrides) -> CliResult<RunReport> {
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output = out.clone();
    }
    let run = cfg.resolve()?;
    let started = Instant::now();
    let mut rng = SeededRng::new(run.seed);
    let video = load_input(&run, &cfg, &mut rng)?;
    let model = build_model(&run, video.channels())?;
    let source = model.default_conditioning().to_vec();
    let target = match run.edit_conditioning_seed {
        Some(s) => model.conditioning_from_seed(s),
        None => source.clone(),
    };
    info!(
        "{} frames of {}x{}x{}, {} steps, seed {}",
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
        run.schedule.steps(),
        run.seed
    );

    let mut inv_stats = RunStats::default();
    let noisy = invert_video(&video, &model, &run.schedule, &run.pipeline, &source, &mut rng.fork(), &mut inv_stats)
        .map_err(CliError::Numeric)?;
    debug!("inversion: {} chunk evaluations", inv_stats.chunk_evaluations);
    let mut gen_stats = RunStats::default();
    let out = generate_video(&noisy, &model, &run.schedule, &run.pipeline, &target, &mut rng.fork(), &mut gen_stats)
        .map_err(CliError::Numeric)?;
    debug!("generation: {} chunk evaluations", gen_stats.chunk_evaluations);

    if let Some(dir) = run.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    write_video(&out, &run.output)?;

    let merging = run.pipeline.merging && run.pipeline.vidtome.merging_active();
    let n = video.tokens_per_frame();
    let b = run.pipeline.vidtome.chunk_size;
    let expected = (merging && video.frames() > b)
        .then(|| merged_counts(b, n, &run.pipeline.vidtome).steady as f64 / (b * n) as f64);
    let tv = |v: &VideoLatents| (v.frames() >= 2).then(|| temporal_variance(v).ok()).flatten();
    let report = RunReport {
        mode: if merging { "vidtome" } else { "per_frame" },
        frames: video.frames(),
        height: video.height(),
        width: video.width(),
        latent_channels: video.channels(),
        tokens_per_frame: n,
        steps: run.schedule.steps(),
        seed: run.seed,
        temporal_variance_input: tv(&video),
        temporal_variance_output: tv(&out),
        first_last_distance_output: frame_distance(&out, 0, out.frames() - 1),
        relative_change: out.relative_error(&video),
        cost: CostTotals {
            inversion: inv_stats.cost,
            generation: gen_stats.cost,
        },
        chunk_evaluations: inv_stats.chunk_evaluations + gen_stats.chunk_evaluations,
        merged_token_ratio: gen_stats.merged_token_ratio(),
        expected_merged_token_ratio: expected,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        output: run.output.clone(),
    };
    write_report(&report, &run.report)?;
    info!("wrote {} and {}", run.output.display(), run.report.display());
    Ok(report)
}

fn write_report(report: &RunReport, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn execute_file(config: &Path, overrides: &RunOverrides) -> CliResult<RunReport> {
    execute(RunConfig::load(config)?, overrides)
}
