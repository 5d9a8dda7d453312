//! Binary 8-bit PGM (P5) and PPM (P6).

use std::path::Path;

use crate::error::{Error, PnmError, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit pixels as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub data: Vec<u8>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::MalformedHeader(format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<RawImage, PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::MalformedHeader("file too short for a magic number".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(PnmError::UnsupportedMagic(String::from_utf8_lossy(other).into_owned())),
    };
    let mut header = Header { bytes, pos: 2 };
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::MalformedHeader(format!("zero extent {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        Some(_) => return Err(PnmError::MalformedHeader("no whitespace after maxval".into())),
        None => {
            return Err(PnmError::Truncated {
                expected: width * height * channels,
                actual: 0,
            })
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[header.pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    Ok(RawImage {
        width,
        height,
        channels,
        data: payload[..expected].to_vec(),
    })
}

pub fn encode_pnm(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

impl RawImage {
    /// `(H, W, 3)` tensor in `[0, 1]`; grayscale is replicated to three channels.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks_exact(self.channels) {
            if self.channels == 1 {
                let v = px[0] as f32 / 255.0;
                data.extend_from_slice(&[v, v, v]);
            } else {
                data.extend(px.iter().map(|&b| b as f32 / 255.0));
            }
        }
        Tensor::new(&[self.height, self.width, 3], data).expect("consistent image extents")
    }

    /// Quantize an `(H, W, 3)` (or `(1, H, W, 3)`) tensor in `[0, 1]` to 8-bit RGB.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = image_extent(t)?;
        let data = t.data().iter().map(|&v| quantize(v)).collect();
        Ok(Self {
            width: w,
            height: h,
            channels: 3,
            data,
        })
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `(H, W)` of an RGB image tensor shaped `(H, W, 3)` or `(1, H, W, 3)`.
pub fn image_extent(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w, 3] | [1, h, w, 3] => Ok((h, w)),
        _ => Err(Error::shape(
            "image",
            "(H, W, 3)",
            crate::tensor::shape_str(t.shape()),
        )),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(load_raw(path)?.to_tensor())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_pnm(&bytes)?)
}

pub fn save_raw(path: impl AsRef<Path>, img: &RawImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

pub fn save_ppm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    save_raw(path, &RawImage::from_tensor(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel_p6() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        let img = decode_pnm(&bytes).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert_eq!(&t.data()[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(encode_pnm(&img), bytes);
    }

    #[test]
    fn gray_replicated() {
        let mut bytes = b"P5 1 1 255\n".to_vec();
        bytes.push(128);
        let t = decode_pnm(&bytes).unwrap().to_tensor();
        let v = 128.0f32 / 255.0;
        assert_eq!(t.data(), &[v, v, v]);
        assert!((v - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn header_comments_allowed() {
        let mut bytes = b"P5\n# made by hand\n1 # width done\n1\n255\n".to_vec();
        bytes.push(7);
        assert_eq!(decode_pnm(&bytes).unwrap().data, vec![7]);
    }

    #[test]
    fn distinct_errors() {
        let truncated = [b"P6\n2 2\n255\n".as_slice(), &[1, 2, 3]].concat();
        assert_eq!(
            decode_pnm(&truncated),
            Err(PnmError::Truncated { expected: 12, actual: 3 })
        );
        let msg = decode_pnm(&truncated).unwrap_err().to_string();
        assert!(msg.contains("12") && msg.contains('3'), "{msg}");

        assert!(matches!(decode_pnm(b"P6\n2 x\n255\n"), Err(PnmError::MalformedHeader(_))));
        assert_eq!(decode_pnm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(PnmError::UnsupportedMaxval(65535)));
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n1 2 3"), Err(PnmError::UnsupportedMagic(_))));
        assert!(matches!(decode_pnm(b"P"), Err(PnmError::MalformedHeader(_))));
    }

    #[test]
    fn tensor_quantization_round_trip() {
        let raw = RawImage {
            width: 3,
            height: 2,
            channels: 3,
            data: (0..18).map(|i| (i * 14) as u8).collect(),
        };
        assert_eq!(RawImage::from_tensor(&raw.to_tensor()).unwrap(), raw);
    }
}
