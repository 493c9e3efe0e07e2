//! Frame ingestion: a directory of numbered PNG/PPM images, or a raw RGB
//! stream with a one-line `INCX-RGB <width> <height>` header followed by
//! back-to-back frames.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::detector::Image;
use crate::error::{Error, Result};

pub const RAW_MAGIC: &str = "INCX-RGB";

const FRAME_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub enum FrameSource {
    Files(VecDeque<PathBuf>),
    Raw {
        reader: Box<dyn BufRead + Send>,
        width: usize,
        height: usize,
    },
    Memory(VecDeque<Image>),
}

/// Trailing run of digits in a file stem, used to order frames.
fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

impl FrameSource {
    /// Opens a frame directory, a raw stream file, or `-` for a raw stream
    /// on standard input.
    pub fn open(path: &Path) -> Result<Self> {
        if path == Path::new("-") {
            return Self::raw(Box::new(BufReader::new(io::stdin())));
        }
        if path.is_dir() {
            return Self::directory(path);
        }
        if !path.exists() {
            return Err(Error::NoFrames(path.display().to_string()));
        }
        Self::raw(Box::new(BufReader::new(File::open(path)?)))
    }

    pub fn directory(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        if files.is_empty() {
            return Err(Error::NoFrames(dir.display().to_string()));
        }
        files.sort_by(|a, b| frame_number(a).cmp(&frame_number(b)).then_with(|| a.cmp(b)));
        Ok(Self::Files(files.into()))
    }

    pub fn raw(mut reader: Box<dyn BufRead + Send>) -> Result<Self> {
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let bad = || Error::Image(format!("bad raw stream header {:?}", header.trim_end()));
        let mut parts = header.split_whitespace();
        if parts.next() != Some(RAW_MAGIC) {
            return Err(bad());
        }
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|n| *n > 0)
                .ok_or_else(bad)
        };
        let (width, height) = (dim()?, dim()?);
        Ok(Self::Raw {
            reader,
            width,
            height,
        })
    }

    pub fn from_images(frames: Vec<Image>) -> Self {
        Self::Memory(frames.into())
    }

    fn next_frame(&mut self) -> Result<Option<Image>> {
        match self {
            Self::Files(paths) => paths.pop_front().map(|p| Image::open(&p)).transpose(),
            Self::Memory(frames) => Ok(frames.pop_front()),
            Self::Raw {
                reader,
                width,
                height,
            } => {
                let mut data = vec![0u8; *width * *height * 3];
                let mut filled = 0;
                while filled < data.len() {
                    match reader.read(&mut data[filled..])? {
                        0 => break,
                        n => filled += n,
                    }
                }
                match filled {
                    0 => Ok(None),
                    n if n == data.len() => Image::new(*width, *height, data).map(Some),
                    n => Err(Error::Image(format!(
                        "raw stream ends mid-frame after {n} bytes"
                    ))),
                }
            }
        }
    }
}

impl Iterator for FrameSource {
    type Item = Result<Image>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Writes frames in the raw stream format. All frames must share a size.
pub fn write_raw_stream(w: &mut impl Write, frames: &[Image]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::NoFrames("empty frame list".into()))?;
    writeln!(w, "{RAW_MAGIC} {} {}", first.width(), first.height())?;
    for f in frames {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(Error::DimensionMismatch(
                "raw stream frames differ in size".into(),
            ));
        }
        w.write_all(f.data())?;
    }
    Ok(())
}
