//! Raw PGM (P5) / PPM (P6) images with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Channel-major pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width || data.is_empty() {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image with {} samples",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds from 8-bit samples in channel-major order.
    pub fn from_bytes(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// PGM for one channel, PPM for three.
    pub fn encode_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::shape(format!("cannot write {c}-channel image"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        let planar = self.to_bytes();
        let plane = self.height * self.width;
        for i in 0..plane {
            for c in 0..self.channels {
                out.push(planar[c * plane + i]);
            }
        }
        Ok(out)
    }

    pub fn decode_pnm(buf: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PNM header".into()));
            }
            fields.push(std::str::from_utf8(&buf[start..pos]).unwrap_or("").to_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Format(format!("unsupported PNM magic {m:?}"))),
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PNM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
        }
        let plane = width * height;
        let raster = buf
            .get(pos..pos + plane * channels)
            .ok_or_else(|| Error::Format("truncated PNM raster".into()))?;
        let mut planar = vec![0u8; plane * channels];
        for i in 0..plane {
            for c in 0..channels {
                planar[c * plane + i] = raster[i * channels + c];
            }
        }
        Self::from_bytes(channels, height, width, &planar)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pnm(&buf).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pnm()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_and_ppm_round_trip() {
        let gray = Image::from_bytes(1, 2, 3, &[0, 10, 20, 30, 40, 255]).unwrap();
        assert_eq!(Image::decode_pnm(&gray.encode_pnm().unwrap()).unwrap(), gray);

        let rgb = Image::from_bytes(3, 1, 2, &[1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = rgb.encode_pnm().unwrap();
        // interleaved on disk: r0 g0 b0 r1 g1 b1
        assert_eq!(&bytes[bytes.len() - 6..], &[1, 3, 5, 2, 4, 6]);
        assert_eq!(Image::decode_pnm(&bytes).unwrap(), rgb);
    }

    #[test]
    fn header_comments_are_skipped() {
        let buf = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        let img = Image::decode_pnm(buf).unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(Image::decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(Image::decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Image::decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
