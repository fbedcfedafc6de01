//! Frame extraction from uncompressed YUV4MPEG2 (`.y4m`) video.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use super::color::to_rgb_normalized;
use super::io::{ensure_dir, write_image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

/// Parsed stream header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    chroma: Chroma,
    full_range: bool,
}

impl Y4mHeader {
    fn chroma_dims(&self) -> (usize, usize) {
        let (w, h) = (self.width, self.height);
        match self.chroma {
            Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
            Chroma::C422 => (w.div_ceil(2), h),
            Chroma::C444 => (w, h),
            Chroma::Mono => (0, 0),
        }
    }

    fn frame_bytes(&self) -> usize {
        let (cw, ch) = self.chroma_dims();
        self.width * self.height + 2 * cw * ch
    }
}

/// Streaming reader yielding interleaved BGR frames.
pub struct Y4mReader<R> {
    inner: R,
    header: Y4mHeader,
    path: PathBuf,
    buf: Vec<u8>,
}

impl Y4mReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Ingest {
            path: path.to_path_buf(),
            reason,
        };
        let line = read_line(&mut inner, 1024).map_err(|e| fail(e.to_string()))?;
        let line = line.ok_or_else(|| fail("file is empty".into()))?;
        let mut tokens = line.split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(fail("not a YUV4MPEG2 stream".into()));
        }
        let (mut width, mut height) = (0, 0);
        let mut chroma = Chroma::C420;
        let mut full_range = false;
        for tok in tokens.filter(|t| !t.is_empty()) {
            let (tag, val) = tok.split_at(1);
            match tag {
                "W" => width = val.parse().map_err(|_| fail(format!("bad width '{val}'")))?,
                "H" => height = val.parse().map_err(|_| fail(format!("bad height '{val}'")))?,
                "C" => {
                    chroma = match val {
                        v if v.starts_with("420") => Chroma::C420,
                        "422" => Chroma::C422,
                        "444" => Chroma::C444,
                        "mono" => Chroma::Mono,
                        other => return Err(fail(format!("unsupported colourspace '{other}'"))),
                    }
                }
                "X" if val == "COLORRANGE=FULL" => full_range = true,
                _ => {}
            }
        }
        if width == 0 || height == 0 {
            return Err(fail(format!("invalid frame size {width}x{height}")));
        }
        Ok(Y4mReader {
            inner,
            header: Y4mHeader {
                width,
                height,
                chroma,
                full_range,
            },
            path: path.to_path_buf(),
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &Y4mHeader {
        &self.header
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Ingest {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    /// Next frame as BGR bytes, `None` at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>> {
        let line = read_line(&mut self.inner, 1024).map_err(|e| self.fail(e.to_string()))?;
        let Some(line) = line else {
            return Ok(None);
        };
        if !line.starts_with("FRAME") {
            return Err(self.fail(format!("expected FRAME marker, found '{line}'")));
        }
        self.buf.resize(self.header.frame_bytes(), 0);
        self.inner
            .read_exact(&mut self.buf)
            .map_err(|_| self.fail("truncated frame data"))?;
        Ok(Some(yuv_to_bgr(&self.header, &self.buf)))
    }
}

/// One header line without the newline; `None` at EOF before any byte.
fn read_line<R: BufRead>(r: &mut R, limit: usize) -> std::io::Result<Option<String>> {
    let mut bytes = Vec::new();
    let n = r.by_ref().take(limit as u64).read_until(b'\n', &mut bytes)?;
    if n == 0 {
        return Ok(None);
    }
    if bytes.last() != Some(&b'\n') {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "unterminated header line",
        ));
    }
    bytes.pop();
    String::from_utf8(bytes)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn yuv_to_bgr(h: &Y4mHeader, frame: &[u8]) -> Vec<u8> {
    let (w, ht) = (h.width, h.height);
    let (cw, ch) = h.chroma_dims();
    let (y_plane, rest) = frame.split_at(w * ht);
    let (u_plane, v_plane) = rest.split_at(cw * ch);
    let mut out = Vec::with_capacity(w * ht * 3);
    for row in 0..ht {
        for col in 0..w {
            let yv = y_plane[row * w + col] as f64;
            let (u, v) = if h.chroma == Chroma::Mono {
                (128.0, 128.0)
            } else {
                let cx = col * cw / w;
                let cy = row * ch / ht;
                (u_plane[cy * cw + cx] as f64, v_plane[cy * cw + cx] as f64)
            };
            let (d, e) = (u - 128.0, v - 128.0);
            let (r, g, b) = if h.full_range {
                (yv + 1.402 * e, yv - 0.344_136 * d - 0.714_136 * e, yv + 1.772 * d)
            } else {
                let c = 1.164_383 * (yv - 16.0);
                (c + 1.596_027 * e, c - 0.391_762 * d - 0.812_968 * e, c + 2.017_232 * d)
            };
            let q = |x: f64| x.round().clamp(0.0, 255.0) as u8;
            out.extend_from_slice(&[q(b), q(g), q(r)]);
        }
    }
    out
}

/// Write every `stride`-th frame (source index `i` with `i % stride == 0`)
/// to `out_dir/frame_%06d.png`, numbered by source index. Returns the number
/// of files written.
pub fn extract_frames(video: &Path, out_dir: &Path, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let mut reader = Y4mReader::open(video)?;
    let (w, h) = (reader.header().width, reader.header().height);
    ensure_dir(out_dir)?;
    let mut index = 0usize;
    let mut written = 0usize;
    while let Some(bgr) = reader.next_frame()? {
        if index % stride == 0 {
            let rgb = to_rgb_normalized(&bgr, h, w, 3)?;
            write_image(&out_dir.join(format!("frame_{index:06}.png")), &rgb)?;
            written += 1;
        }
        index += 1;
    }
    if index == 0 {
        return Err(Error::EmptyVideo(video.to_path_buf()));
    }
    log::info!("extracted {written} of {index} frames from {}", video.display());
    Ok(written)
}
