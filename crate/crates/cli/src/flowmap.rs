//! Token-matching flow maps as binary PPM.
//!
//! Each pixel is a token position of the first frame. A matched token is drawn
//! at full value with hue `atan2(dy, dx)` and saturation `|d| / max |d|`, so a
//! zero displacement is white; unmatched tokens are mid gray. The largest
//! displacement is stored in a header comment, which makes the map decodable.

use std::fs;
use std::path::Path;

use vidtome_core::{bipartite_match, merge_count, TokenSet, VideoLatents};

use crate::error::{CliError, CliResult};
use crate::latent_file::read_video;

pub const UNMATCHED: [u8; 3] = [128, 128, 128];
const MAX_DISPLACEMENT_KEY: &str = "max_displacement=";

/// Per-position displacement `(dx, dy)` from a token in one frame to its match in another.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub vectors: Vec<Option<(i64, i64)>>,
}

impl FlowField {
    pub fn matched(&self) -> usize {
        self.vectors.iter().flatten().count()
    }

    pub fn max_displacement(&self) -> f64 {
        self.vectors
            .iter()
            .flatten()
            .map(|&(dx, dy)| ((dx * dx + dy * dy) as f64).sqrt())
            .fold(0.0, f64::max)
    }
}

fn frame_tokens(video: &VideoLatents, f: usize) -> TokenSet {
    TokenSet::new(video.channels(), video.frame(f).to_vec()).expect("validated latents")
}

/// Matches tokens of frame `src` (in the source role) to frame `dst` and keeps
/// the `floor(ratio * N)` most similar links.
pub fn flow_between(video: &VideoLatents, src: usize, dst: usize, ratio: f64) -> CliResult<FlowField> {
    let n = video.frames();
    if src >= n || dst >= n {
        return Err(CliError::Usage(format!("frame pair {src},{dst} out of range for {n} frames")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CliError::Usage(format!("ratio = {ratio} outside [0, 1]")));
    }
    let (h, w) = (video.height(), video.width());
    let tokens = h * w;
    let map = bipartite_match(&frame_tokens(video, src), &frame_tokens(video, dst), merge_count(ratio, tokens))
        .map_err(CliError::Numeric)?;
    let mut vectors = vec![None; tokens];
    for e in map.edges() {
        let (sy, sx) = ((e.src / w) as i64, (e.src % w) as i64);
        let (dy, dx) = ((e.dst / w) as i64, (e.dst % w) as i64);
        vectors[e.src] = Some((dx - sx, dy - sy));
    }
    Ok(FlowField {
        height: h,
        width: w,
        vectors,
    })
}

fn hsv_to_rgb(hue_deg: f64, s: f64) -> [u8; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let sector = (h.floor() as usize).min(5);
    let f = h - sector as f64;
    let (p, q, t) = (1.0 - s, 1.0 - s * f, 1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    let byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    [byte(r), byte(g), byte(b)]
}

/// `(hue in degrees, saturation)`; `None` unless the value channel is full.
fn rgb_to_hs(px: [u8; 3]) -> Option<(f64, f64)> {
    let [r, g, b] = px.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if px.iter().max() != Some(&255) {
        return None;
    }
    let delta = max - min;
    let s = delta / max;
    if delta == 0.0 {
        return Some((0.0, 0.0));
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Some((hue.rem_euclid(360.0), s))
}

pub fn render(field: &FlowField) -> Vec<u8> {
    let max = field.max_displacement();
    let mut out = format!("P6\n# {MAX_DISPLACEMENT_KEY}{max}\n{} {}\n255\n", field.width, field.height).into_bytes();
    for v in &field.vectors {
        let px = match *v {
            None => UNMATCHED,
            Some((dx, dy)) => {
                let mag = ((dx * dx + dy * dy) as f64).sqrt();
                if mag == 0.0 {
                    [255, 255, 255]
                } else {
                    let hue = libm::atan2(dy as f64, dx as f64).to_degrees();
                    hsv_to_rgb(hue, mag / max)
                }
            }
        };
        out.extend_from_slice(&px);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFlow {
    pub width: usize,
    pub height: usize,
    pub max_displacement: f64,
    pub pixels: Vec<[u8; 3]>,
    /// `(dx, dy)` per matched pixel.
    pub vectors: Vec<Option<(f64, f64)>>,
}

impl DecodedFlow {
    /// Displacements snapped to the token grid.
    pub fn grid_vectors(&self) -> Vec<Option<(i64, i64)>> {
        self.vectors
            .iter()
            .map(|v| v.map(|(dx, dy)| (dx.round() as i64, dy.round() as i64)))
            .collect()
    }
}

pub fn decode(bytes: &[u8]) -> CliResult<DecodedFlow> {
    let bad = |m: &str| CliError::Format(format!("ppm: {m}"));
    let mut pos = 0;
    let mut fields: Vec<String> = Vec::new();
    let mut max_disp = None;
    while fields.len() < 4 {
        match bytes.get(pos) {
            None => return Err(bad("truncated header")),
            Some(b'#') => {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                if let Some(v) = comment.trim().strip_prefix(MAX_DISPLACEMENT_KEY) {
                    max_disp = Some(v.parse::<f64>().map_err(|_| bad("max_displacement is not a number"))?);
                }
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let end = bytes[pos..]
                    .iter()
                    .position(|b| b.is_ascii_whitespace())
                    .map_or(bytes.len(), |e| pos + e);
                fields.push(String::from_utf8_lossy(&bytes[pos..end]).into_owned());
                pos = end;
            }
        }
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit maps are supported"));
    }
    let max_displacement = max_disp.ok_or_else(|| bad("missing max_displacement comment"))?;
    let raster = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() != 3 * width * height {
        return Err(bad("raster size does not match the header"));
    }
    let pixels: Vec<[u8; 3]> = raster.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    let vectors = pixels
        .iter()
        .map(|&px| {
            if px == UNMATCHED {
                return Ok(None);
            }
            let (hue, s) = rgb_to_hs(px).ok_or_else(|| bad("pixel is neither gray nor a full-value flow colour"))?;
            let mag = s * max_displacement;
            let rad = hue.to_radians();
            Ok(Some((mag * rad.cos(), mag * rad.sin())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DecodedFlow {
        width,
        height,
        max_displacement,
        pixels,
        vectors,
    })
}

/// Two frames where the second is the first moved one token column to the
/// right; the vacated first column is filled with fresh values.
pub fn translation_instance(height: usize, width: usize, channels: usize, seed: u64) -> CliResult<VideoLatents> {
    let base = VideoLatents::random(2, height, width, channels, seed).map_err(CliError::config)?;
    let (a, fresh) = (base.frame(0), base.frame(1));
    let mut data = a.to_vec();
    for y in 0..height {
        for x in 0..width {
            let at = |xx: usize| (y * width + xx) * channels;
            let src = if x == 0 { &fresh[at(0)..at(0) + channels] } else { &a[at(x - 1)..at(x - 1) + channels] };
            data.extend_from_slice(src);
        }
    }
    VideoLatents::new(2, height, width, channels, data).map_err(CliError::config)
}

/// The ratio that keeps exactly the tokens with a true counterpart in the
/// translation instance.
pub fn translation_ratio(width: usize) -> f64 {
    (width - 1) as f64 / width as f64
}

pub fn execute(input: &Path, frames: (usize, usize), ratio: f64, out: &Path) -> CliResult<FlowField> {
    let video = read_video(input)?;
    let field = flow_between(&video, frames.0, frames.1, ratio)?;
    fs::write(out, render(&field)).map_err(CliError::io(out))?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_round_trip() {
        for deg in [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0] {
            let (h, s) = rgb_to_hs(hsv_to_rgb(deg, 1.0)).unwrap();
            assert!((h - deg).abs() < 1.0 && (s - 1.0).abs() < 1e-9, "{deg}: {h} {s}");
        }
        assert_eq!(hsv_to_rgb(0.0, 1.0), [255, 0, 0]);
        assert_eq!(rgb_to_hs([255, 255, 255]), Some((0.0, 0.0)));
        assert_eq!(rgb_to_hs(UNMATCHED), None);
    }

    #[test]
    fn identical_frames_give_white() {
        let v = VideoLatents::random(1, 3, 4, 2, 1).unwrap();
        let field = flow_between(&v, 0, 0, 1.0).unwrap();
        assert_eq!(field.matched(), 12);
        let img = decode(&render(&field)).unwrap();
        assert!(img.pixels.iter().all(|&p| p == [255, 255, 255]));
        assert!(img.grid_vectors().iter().all(|v| *v == Some((0, 0))));
    }

    #[test]
    fn unmatched_count_is_tokens_minus_r() {
        let v = VideoLatents::random(2, 5, 5, 3, 2).unwrap();
        let field = flow_between(&v, 0, 1, 0.4).unwrap();
        let img = decode(&render(&field)).unwrap();
        assert_eq!(img.pixels.iter().filter(|&&p| p == UNMATCHED).count(), 25 - 10);
    }

    #[test]
    fn bad_frames_and_ratio() {
        let v = VideoLatents::random(2, 2, 2, 2, 3).unwrap();
        assert!(matches!(flow_between(&v, 0, 2, 0.5), Err(CliError::Usage(_))));
        assert!(matches!(flow_between(&v, 0, 1, 1.5), Err(CliError::Usage(_))));
    }

    #[test]
    fn decoder_rejects_garbage() {
        assert!(decode(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode(b"P6\n# max_displacement=1\n1 1\n255\n\0\0").is_err());
    }
}
