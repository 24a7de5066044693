use crate::attention::{self_attention_batch, AttentionWeights, CostReport};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tokens::{TokenMatrix, TokenSet};
use crate::vidtome::{merged_self_attention, GlobalTokenState, VidToMeConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDenoiserConfig {
    pub latent_channels: usize,
    pub token_channels: usize,
    pub heads: usize,
    pub sites: usize,
    /// Leading sites with merging enabled.
    pub merge_prefix: usize,
    /// Trailing sites with merging enabled.
    pub merge_suffix: usize,
    /// Scale of the query/key projections; larger values sharpen attention.
    pub score_gain: f64,
    /// Weight of the attended content subtracted at each site.
    pub content_gain: f64,
    /// Gain of the read-out relative to the left inverse of the embedding.
    pub readout_gain: f64,
    pub seed: u64,
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            token_channels: 8,
            heads: 1,
            sites: 4,
            merge_prefix: 1,
            merge_suffix: 1,
            score_gain: 2.0,
            content_gain: 0.5,
            readout_gain: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSite<T> {
    pub weights: AttentionWeights<T>,
    pub merge_enabled: bool,
}

/// Merging state threaded through one model evaluation.
pub struct MergeContext<'a, T> {
    pub cfg: &'a VidToMeConfig,
    /// One global-token set per attention site.
    pub states: &'a mut [GlobalTokenState<T>],
    pub rng: &'a mut SeededRng,
}

/// Counters accumulated over a pipeline run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub cost: CostReport,
    pub chunk_evaluations: u64,
    /// Attention-input size summed over merged sites of full-size, non-first chunks.
    pub merged_tokens: u64,
    /// `B * N` summed over the same site calls.
    pub merged_baseline: u64,
}

impl RunStats {
    /// Mean fraction of tokens left after merging for full-size chunks with global tokens.
    pub fn merged_token_ratio(&self) -> Option<f64> {
        (self.merged_baseline > 0).then(|| self.merged_tokens as f64 / self.merged_baseline as f64)
    }
}

/// Noise predictor: per-token embedding, a stack of residual self-attention
/// sites, and a per-token linear read-out.
///
/// `eps(z, t, c) = U h_S`, `h_0 = E z + time(t) + c`, `h_s = h_{s-1} + attn_s(h_{s-1})`.
///
/// `U` is a scaled left inverse of `E`, so the skip path predicts noise
/// proportional to `z`. Each site has tied random query/key maps, identity
/// values and a negative output map, so it subtracts the content of similar
/// tokens: the attention path carries the clean-content estimate, which enters
/// a noise prediction with a negative sign.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser<T> {
    latent_channels: usize,
    token_channels: usize,
    patch_embed: Vec<T>,
    unembed: Vec<T>,
    sites: Vec<AttentionSite<T>>,
    conditioning: Vec<T>,
}

impl<T: Scalar> ToyDenoiser<T> {
    pub fn new(cfg: &ToyDenoiserConfig) -> Result<Self> {
        let (cl, c) = (cfg.latent_channels, cfg.token_channels);
        if cl == 0 || c == 0 || cfg.sites == 0 {
            return Err(Error::Parameter("denoiser needs channels and at least one site".into()));
        }
        if cfg.merge_prefix + cfg.merge_suffix > cfg.sites {
            return Err(Error::Parameter(format!(
                "{} + {} merge sites exceed {} sites",
                cfg.merge_prefix, cfg.merge_suffix, cfg.sites
            )));
        }
        for (name, v) in [
            ("score_gain", cfg.score_gain),
            ("content_gain", cfg.content_gain),
            ("readout_gain", cfg.readout_gain),
        ] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
        }
        if c < cl {
            return Err(Error::Parameter(format!(
                "token channels {c} below latent channels {cl}: the embedding must be injective"
            )));
        }
        let mut rng = SeededRng::new(cfg.seed);
        let mut dense = |rows: usize, cols: usize, gain: f64| -> Vec<T> {
            let scale = gain / (rows as f64).sqrt();
            (0..rows * cols).map(|_| T::lit(rng.uniform(-1.0, 1.0) * scale)).collect()
        };
        let embed64: Vec<f64> = dense(cl, c, 1.0).into_iter().map(|v| v.as_f64()).collect();
        let unembed = left_inverse(&embed64, cl, c)
            .ok_or_else(|| Error::Parameter(format!("embedding drawn from seed {} is singular", cfg.seed)))?
            .into_iter()
            .map(|v| T::lit(v * cfg.readout_gain))
            .collect();
        let patch_embed = embed64.into_iter().map(T::lit).collect();
        let conditioning = dense(1, c, 0.5);
        let identity = |gain: f64| -> Vec<T> {
            (0..c * c)
                .map(|i| T::lit(if i / c == i % c { gain } else { 0.0 }))
                .collect()
        };
        let sites = (0..cfg.sites)
            .map(|s| {
                let wq = dense(c, c, cfg.score_gain);
                let weights = AttentionWeights::from_parts(
                    c,
                    cfg.heads,
                    wq.clone(),
                    wq,
                    identity(1.0),
                    identity(-cfg.content_gain),
                )?;
                Ok(AttentionSite {
                    weights,
                    merge_enabled: s < cfg.merge_prefix || s >= cfg.sites - cfg.merge_suffix,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            latent_channels: cl,
            token_channels: c,
            patch_embed,
            unembed,
            sites,
            conditioning,
        })
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn token_channels(&self) -> usize {
        self.token_channels
    }

    pub fn sites(&self) -> &[AttentionSite<T>] {
        &self.sites
    }

    pub fn sites_mut(&mut self) -> &mut [AttentionSite<T>] {
        &mut self.sites
    }

    /// The model's built-in conditioning vector.
    pub fn default_conditioning(&self) -> &[T] {
        &self.conditioning
    }

    /// A different conditioning vector of the same scale, drawn from `seed`.
    pub fn conditioning_from_seed(&self, seed: u64) -> Vec<T> {
        let mut rng = SeededRng::new(seed);
        let scale = 0.5 / (self.token_channels as f64).sqrt();
        (0..self.token_channels)
            .map(|_| T::lit(rng.uniform(-1.0, 1.0) * scale))
            .collect()
    }

    fn time_embedding(&self, t: usize) -> Vec<f64> {
        let c = self.token_channels;
        (0..c)
            .map(|j| {
                let freq = 1.0 / libm::pow(10_000.0, (j / 2 * 2) as f64 / c as f64);
                let phase = t as f64 * freq;
                0.2 * if j % 2 == 0 { libm::sin(phase) } else { libm::cos(phase) }
            })
            .collect()
    }

    /// Noise prediction for the frames of one chunk.
    ///
    /// Sites flagged `merge_enabled` run cross-frame merged attention when a
    /// [`MergeContext`] is supplied; every other site attends per frame.
    pub fn predict_chunk(
        &self,
        frames: &[&[T]],
        t: usize,
        conditioning: &[T],
        mut merge: Option<MergeContext<'_, T>>,
        stats: &mut RunStats,
    ) -> Result<Vec<Vec<T>>> {
        let (cl, c) = (self.latent_channels, self.token_channels);
        let b = frames.len();
        if b == 0 {
            return Err(Error::EmptySet("chunk frames"));
        }
        if conditioning.len() != c {
            return Err(Error::Dimension {
                expected: c,
                actual: conditioning.len(),
            });
        }
        let frame_len = frames[0].len();
        if frame_len == 0 || frame_len % cl != 0 || frames.iter().any(|f| f.len() != frame_len) {
            return Err(Error::Dimension {
                expected: frame_len.max(cl),
                actual: frames.iter().map(|f| f.len()).find(|&l| l != frame_len).unwrap_or(frame_len),
            });
        }
        if let Some(ctx) = &merge {
            if ctx.states.len() != self.sites.len() {
                return Err(Error::Consistency(format!(
                    "{} global states for {} sites",
                    ctx.states.len(),
                    self.sites.len()
                )));
            }
        }
        let n = frame_len / cl;
        stats.chunk_evaluations += 1;

        let bias: Vec<f64> = self
            .time_embedding(t)
            .into_iter()
            .zip(conditioning)
            .map(|(te, cv)| te + cv.as_f64())
            .collect();
        let mut h: Vec<T> = Vec::with_capacity(b * n * c);
        for frame in frames {
            for z in frame.chunks_exact(cl) {
                for j in 0..c {
                    let mut acc = bias[j];
                    for (i, zi) in z.iter().enumerate() {
                        acc += zi.as_f64() * self.patch_embed[i * c + j].as_f64();
                    }
                    h.push(T::lit(acc));
                }
            }
        }

        for (s, site) in self.sites.iter().enumerate() {
            let delta: Vec<T> = match merge.as_mut() {
                Some(ctx) if site.merge_enabled => {
                    let chunk = TokenMatrix::from_raw(b, n, c, h.clone());
                    let had_global = !ctx.states[s].is_empty();
                    let out = merged_self_attention(
                        &chunk,
                        &site.weights,
                        ctx.cfg,
                        &ctx.states[s],
                        ctx.rng,
                        Some(&mut stats.cost),
                    )?;
                    if had_global && b == ctx.cfg.chunk_size && ctx.cfg.global_merging {
                        stats.merged_tokens += out.merged_len as u64;
                        stats.merged_baseline += (b * n) as u64;
                    }
                    ctx.states[s] = out.state;
                    out.output.into_vec()
                }
                _ => {
                    let sets: Vec<TokenSet<T>> = h
                        .chunks_exact(n * c)
                        .map(|f| TokenSet::from_raw(c, f.to_vec()))
                        .collect();
                    let refs: Vec<&TokenSet<T>> = sets.iter().collect();
                    self_attention_batch(&refs, &site.weights, Some(&mut stats.cost))?
                        .into_iter()
                        .flat_map(|o| o.into_vec())
                        .collect()
                }
            };
            for (hv, dv) in h.iter_mut().zip(delta) {
                *hv += dv;
            }
        }

        let mut out = Vec::with_capacity(b);
        for frame_h in h.chunks_exact(n * c) {
            let mut eps = Vec::with_capacity(frame_len);
            for tok in frame_h.chunks_exact(c) {
                for k in 0..cl {
                    let mut acc = 0.0f64;
                    for (j, hj) in tok.iter().enumerate() {
                        acc += hj.as_f64() * self.unembed[j * cl + k].as_f64();
                    }
                    eps.push(T::lit(acc));
                }
            }
            if eps.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { stage: "denoiser read-out" });
            }
            out.push(eps);
        }
        Ok(out)
    }
}

/// `U` with `E U = I` for a full-row-rank `rows x cols` matrix `E`:
/// `U = E^T (E E^T)^-1`, by Gauss-Jordan elimination with partial pivoting.
fn left_inverse(e: &[f64], rows: usize, cols: usize) -> Option<Vec<f64>> {
    let mut gram = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            gram[i * rows + j] = (0..cols).map(|k| e[i * cols + k] * e[j * cols + k]).sum();
        }
    }
    let mut inv: Vec<f64> = (0..rows * rows).map(|i| if i / rows == i % rows { 1.0 } else { 0.0 }).collect();
    for col in 0..rows {
        let pivot = (col..rows).max_by(|&a, &b| gram[a * rows + col].abs().total_cmp(&gram[b * rows + col].abs()))?;
        if gram[pivot * rows + col].abs() < 1e-10 {
            return None;
        }
        for k in 0..rows {
            gram.swap(col * rows + k, pivot * rows + k);
            inv.swap(col * rows + k, pivot * rows + k);
        }
        let d = gram[col * rows + col];
        for k in 0..rows {
            gram[col * rows + k] /= d;
            inv[col * rows + k] /= d;
        }
        for r in 0..rows {
            if r != col {
                let f = gram[r * rows + col];
                for k in 0..rows {
                    gram[r * rows + k] -= f * gram[col * rows + k];
                    inv[r * rows + k] -= f * inv[col * rows + k];
                }
            }
        }
    }
    // U[k][i] = sum_j E[j][k] inv[j][i]
    let mut u = vec![0.0; cols * rows];
    for k in 0..cols {
        for i in 0..rows {
            u[k * rows + i] = (0..rows).map(|j| e[j * cols + k] * inv[j * rows + i]).sum();
        }
    }
    Some(u)
}
