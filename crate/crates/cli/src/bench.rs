//! `vidtome bench`: attention cost of per-frame, extended and merged attention
//! over a `(B, p, N)` grid, from the closed form and, for small `N`, from
//! instrumented execution.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vidtome_core::error::Error as CoreError;
use vidtome_core::{
    cost_of, global_merge, local_merge, merged_counts, self_attention, self_attention_batch, AttentionWeights,
    CostReport, GlobalTokenState, SeededRng, TokenMatrix, TokenSet, VidToMeConfig,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub chunk_sizes: Vec<usize>,
    /// Used for both the local and the global merging ratio.
    pub ratios: Vec<f64>,
    pub tokens: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    /// Grid points with at most this many tokens per frame are also executed.
    pub verify_max_tokens: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            chunk_sizes: vec![1, 2, 4, 8],
            ratios: vec![0.5, 0.9],
            tokens: vec![64, 256, 1000],
            channels: 64,
            heads: 1,
            verify_max_tokens: 64,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.chunk_sizes.is_empty() || self.ratios.is_empty() || self.tokens.is_empty() {
            return Err(CliError::Config("benchmark grid is empty".into()));
        }
        if self.chunk_sizes.contains(&0) || self.tokens.contains(&0) {
            return Err(CliError::Config("chunk sizes and token counts must be >= 1".into()));
        }
        if let Some(p) = self.ratios.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CliError::Config(format!("ratio = {p} outside [0, 1]")));
        }
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(CliError::Config(format!(
                "{} heads do not divide {} channels",
                self.heads, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Each frame attends to itself.
    PerFrame,
    /// One attention over all frames of the chunk.
    Extended,
    /// Local merging only (the first chunk of an iteration).
    MergedLocal,
    /// Local then global merging (every later chunk).
    Merged,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [BenchMode::PerFrame, BenchMode::Extended, BenchMode::MergedLocal, BenchMode::Merged];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::PerFrame => "per_frame",
            BenchMode::Extended => "extended",
            BenchMode::MergedLocal => "merged_local",
            BenchMode::Merged => "merged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub chunk_size: usize,
    pub ratio: f64,
    pub tokens: usize,
    pub mode: BenchMode,
    /// Total attention input length over the calls of this mode.
    pub attention_tokens: usize,
    pub score_entries: u64,
    pub macs: u64,
    pub peak_buffer: u64,
    /// Score entries relative to attention over a single frame.
    pub score_ratio_vs_frame: f64,
    /// Score entries relative to per-frame attention over the whole chunk.
    pub score_ratio_vs_per_frame: f64,
    /// Whether instrumented execution reproduced the analytic counts; empty when not run.
    pub verified: Option<bool>,
}

fn lengths(mode: BenchMode, b: usize, n: usize, cfg: &VidToMeConfig) -> Vec<usize> {
    match mode {
        BenchMode::PerFrame => vec![n; b],
        BenchMode::Extended => vec![b * n],
        BenchMode::MergedLocal => vec![merged_counts(b, n, cfg).local],
        BenchMode::Merged => vec![merged_counts(b, n, cfg).steady],
    }
}

fn random_chunk(b: usize, n: usize, c: usize, rng: &mut SeededRng) -> TokenMatrix {
    let data = (0..b * n * c).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    TokenMatrix::new(b, n, c, data).expect("finite random tokens")
}

/// Executes every mode on random tokens; returns `(attention length, cost)` per mode.
fn instrumented(b: usize, n: usize, cfg: &VidToMeConfig, bench: &BenchConfig) -> Result<Vec<(usize, CostReport)>, CoreError> {
    let c = bench.channels;
    let mut rng = SeededRng::new(bench.seed ^ ((b as u64) << 32) ^ n as u64);
    let weights = AttentionWeights::seeded(c, bench.heads, rng.next_u64())?;
    let first = random_chunk(b, n, c, &mut rng);
    let second = random_chunk(b, n, c, &mut rng);

    let mut out = Vec::with_capacity(4);
    let frames: Vec<TokenSet> = (0..b).map(|f| first.frame_set(f)).collect();
    let refs: Vec<&TokenSet> = frames.iter().collect();
    let mut cost = CostReport::default();
    self_attention_batch(&refs, &weights, Some(&mut cost))?;
    out.push((b * n, cost));

    let mut cost = CostReport::default();
    self_attention(&first.flatten(), &weights, Some(&mut cost))?;
    out.push((b * n, cost));

    let (local_first, _) = local_merge(&first, cfg, &mut rng)?;
    let mut cost = CostReport::default();
    self_attention(&local_first, &weights, Some(&mut cost))?;
    out.push((local_first.len(), cost));

    let state = GlobalTokenState::with_tokens(local_first, 0);
    let (local, mut record) = local_merge(&second, cfg, &mut rng)?;
    let (merged, _) = global_merge(&local, &state, cfg, &mut rng, &mut record)?;
    let mut cost = CostReport::default();
    self_attention(&merged, &weights, Some(&mut cost))?;
    out.push((merged.len(), cost));
    Ok(out)
}

pub fn run_grid(bench: &BenchConfig) -> CliResult<Vec<BenchRow>> {
    bench.validate()?;
    let (c, h) = (bench.channels, bench.heads);
    let mut rows = Vec::new();
    for &b in &bench.chunk_sizes {
        for &p in &bench.ratios {
            let cfg = VidToMeConfig {
                chunk_size: b,
                local_ratio: p,
                global_ratio: p,
                ..VidToMeConfig::default()
            };
            for &n in &bench.tokens {
                let measured = if n <= bench.verify_max_tokens {
                    Some(instrumented(b, n, &cfg, bench).map_err(CliError::Numeric)?)
                } else {
                    None
                };
                let frame = cost_of(&[n], c, h).score_entries as f64;
                let per_frame = cost_of(&vec![n; b], c, h).score_entries as f64;
                for (i, mode) in BenchMode::ALL.into_iter().enumerate() {
                    let lens = lengths(mode, b, n, &cfg);
                    let cost = cost_of(&lens, c, h);
                    let total: usize = lens.iter().sum();
                    let verified = measured.as_ref().map(|m| m[i] == (total, cost));
                    rows.push(BenchRow {
                        chunk_size: b,
                        ratio: p,
                        tokens: n,
                        mode,
                        attention_tokens: total,
                        score_entries: cost.score_entries,
                        macs: cost.macs,
                        peak_buffer: cost.peak_buffer,
                        score_ratio_vs_frame: cost.score_entries as f64 / frame,
                        score_ratio_vs_per_frame: cost.score_entries as f64 / per_frame,
                        verified,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Format(e.to_string()))
}

pub fn from_csv(text: &str) -> CliResult<Vec<BenchRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Format(e.to_string()))
}

pub fn to_table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>3} {:>5} {:>6} {:<13} {:>7} {:>14} {:>16} {:>14} {:>9} {:>9} {:>8}",
        "B", "p", "N", "mode", "tokens", "score_entries", "macs", "peak_buffer", "vs_frame", "vs_per_fr", "verified"
    );
    for r in rows {
        let verified = match r.verified {
            Some(true) => "yes",
            Some(false) => "NO",
            None => "-",
        };
        let _ = writeln!(
            s,
            "{:>3} {:>5} {:>6} {:<13} {:>7} {:>14} {:>16} {:>14} {:>9.4} {:>9.4} {:>8}",
            r.chunk_size,
            r.ratio,
            r.tokens,
            r.mode.name(),
            r.attention_tokens,
            r.score_entries,
            r.macs,
            r.peak_buffer,
            r.score_ratio_vs_frame,
            r.score_ratio_vs_per_frame,
            verified
        );
    }
    s
}

/// Runs the grid, writes the CSV and returns the text table. Rows whose
/// execution disagreed with the closed form are reported as an error after
/// the CSV is written.
pub fn execute(bench: &BenchConfig, csv_path: &Path) -> CliResult<String> {
    let rows = run_grid(bench)?;
    fs::write(csv_path, to_csv(&rows)?).map_err(CliError::io(csv_path))?;
    if let Some(bad) = rows.iter().find(|r| r.verified == Some(false)) {
        return Err(CliError::Numeric(CoreError::Consistency(format!(
            "instrumented cost differs from the closed form at B={} p={} N={} mode={}",
            bad.chunk_size,
            bad.ratio,
            bad.tokens,
            bad.mode.name()
        ))));
    }
    Ok(to_table(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            chunk_sizes: vec![1, 4],
            ratios: vec![0.9],
            tokens: vec![16, 1000],
            channels: 8,
            heads: 2,
            verify_max_tokens: 16,
            seed: 3,
        }
    }

    #[test]
    fn single_frame_chunks_agree_across_modes() {
        let rows = run_grid(&small()).unwrap();
        for n in [16, 1000] {
            let pick = |m| rows.iter().find(|r| r.chunk_size == 1 && r.tokens == n && r.mode == m).unwrap();
            let base = pick(BenchMode::PerFrame);
            for m in [BenchMode::Extended, BenchMode::MergedLocal] {
                assert_eq!(pick(m).score_entries, base.score_entries);
                assert_eq!(pick(m).peak_buffer, base.peak_buffer);
            }
            assert!(pick(BenchMode::Merged).score_entries > base.score_entries);
        }
    }

    #[test]
    fn small_grid_points_are_verified() {
        let rows = run_grid(&small()).unwrap();
        assert!(rows.iter().filter(|r| r.tokens == 16).all(|r| r.verified == Some(true)));
        assert!(rows.iter().filter(|r| r.tokens == 1000).all(|r| r.verified.is_none()));
    }

    #[test]
    fn csv_reparses() {
        let rows = run_grid(&small()).unwrap();
        assert_eq!(from_csv(&to_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn grid_validation() {
        let empty = BenchConfig {
            tokens: vec![],
            ..small()
        };
        assert!(run_grid(&empty).is_err());
        let bad = BenchConfig {
            ratios: vec![1.2],
            ..small()
        };
        assert!(run_grid(&bad).unwrap_err().to_string().contains("ratio = 1.2"));
    }
}
