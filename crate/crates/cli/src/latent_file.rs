//! `VTML` latent container: magic, `u32` version, `u32` frames/height/width/channels,
//! then little-endian `f32` values in frame-major order.

use std::fs;
use std::path::Path;

use vidtome_core::VideoLatents;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"VTML";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl LatentFile {
    pub fn from_video(video: &VideoLatents) -> CliResult<Self> {
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| CliError::Format(format!("{what} {v} does not fit in u32")))
        };
        Ok(Self {
            frames: dim(video.frames(), "frame count")?,
            height: dim(video.height(), "height")?,
            width: dim(video.width(), "width")?,
            channels: dim(video.channels(), "channel count")?,
            data: video.as_slice().to_vec(),
        })
    }

    pub fn into_video(self) -> CliResult<VideoLatents> {
        VideoLatents::new(
            self.frames as usize,
            self.height as usize,
            self.width as usize,
            self.channels as usize,
            self.data,
        )
        .map_err(|e| CliError::Format(format!("latent payload: {e}")))
    }

    fn expected_values(frames: u32, height: u32, width: u32, channels: u32) -> Option<usize> {
        [frames, height, width, channels]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let n = Self::expected_values(self.frames, self.height, self.width, self.channels);
        if n != Some(self.data.len()) {
            return Err(CliError::Format(format!(
                "header {}x{}x{}x{} does not describe {} values",
                self.frames,
                self.height,
                self.width,
                self.channels,
                self.data.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.frames, self.height, self.width, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CliError::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(CliError::Format("missing VTML magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported version {version}")));
        }
        let (frames, height, width, channels) = (word(1), word(2), word(3), word(4));
        let payload = &bytes[HEADER_LEN..];
        let n = Self::expected_values(frames, height, width, channels)
            .filter(|n| n.checked_mul(4) == Some(payload.len()))
            .ok_or_else(|| {
                CliError::Format(format!(
                    "header {frames}x{height}x{width}x{channels} does not match a {}-byte payload",
                    payload.len()
                ))
            })?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<_>>();
        debug_assert_eq!(data.len(), n);
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&fs::read(path).map_err(CliError::io(path))?)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()?).map_err(CliError::io(path))
    }
}

pub fn read_video(path: &Path) -> CliResult<VideoLatents> {
    LatentFile::read(path)?.into_video()
}

pub fn write_video(video: &VideoLatents, path: &Path) -> CliResult<()> {
    LatentFile::from_video(video)?.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let f = LatentFile {
            frames: 1,
            height: 1,
            width: 2,
            channels: 1,
            data: vec![1.0, -2.5],
        };
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VTML");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 8);
        assert_eq!(LatentFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_damage() {
        let f = LatentFile {
            frames: 2,
            height: 1,
            width: 1,
            channels: 1,
            data: vec![0.0, 1.0],
        };
        let bytes = f.to_bytes().unwrap();
        assert!(LatentFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(LatentFile::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(LatentFile::from_bytes(&bad).is_err());
        let short = LatentFile { data: vec![0.0], ..f };
        assert!(short.to_bytes().is_err());
    }
}
