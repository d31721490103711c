//! Dataset persistence: a binary view archive plus a JSON manifest.
//!
//! Archive layout (all integers little-endian): magic `VDS1`, then u32
//! format version, view count, width, height, followed by every view's
//! pixels as f32, concatenated in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::render::DepthImage;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"VDS1";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARCHIVE_NAME: &str = "views.vds";
pub const MANIFEST_NAME: &str = "manifest.json";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Writes `manifest.json` and `views.vds` into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, views: &[DepthImage]) -> Result<()> {
    if views.len() != manifest.total_views() {
        return Err(Error::InvalidConfig(format!(
            "manifest lists {} views but {} were provided",
            manifest.total_views(),
            views.len()
        )));
    }
    for v in views {
        if v.width() != manifest.resolution as usize || v.height() != manifest.resolution as usize {
            return Err(Error::InvalidConfig(format!(
                "view is {}x{} but the manifest says {}",
                v.width(),
                v.height(),
                manifest.resolution
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let manifest_path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Json { path: manifest_path.clone(), detail: e.to_string() })?;
    fs::write(&manifest_path, json + "\n").map_err(|e| io_err(&manifest_path, e))?;

    let archive_path = dir.join(ARCHIVE_NAME);
    let mut buf = Vec::with_capacity(
        16 + views.len() * (manifest.resolution as usize).pow(2) * 4,
    );
    buf.extend_from_slice(&ARCHIVE_MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(views.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest.resolution.to_le_bytes());
    buf.extend_from_slice(&manifest.resolution.to_le_bytes());
    for view in views {
        for &d in view.depths() {
            buf.extend_from_slice(&(d as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(&archive_path).map_err(|e| io_err(&archive_path, e))?;
    f.write_all(&buf).map_err(|e| io_err(&archive_path, e))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                detail: format!(
                    "truncated while reading {what}: needed {n} bytes at offset {}",
                    self.offset
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<DepthImage>)> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let json = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)
        .map_err(|e| Error::Json { path: manifest_path.clone(), detail: e.to_string() })?;

    let archive_path = dir.join(ARCHIVE_NAME);
    let mut bytes = Vec::new();
    fs::File::open(&archive_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(&archive_path, e))?;
    let views = parse_archive(&archive_path, &bytes, &manifest)?;
    Ok((manifest, views))
}

fn parse_archive(
    path: &Path,
    bytes: &[u8],
    manifest: &DatasetManifest,
) -> Result<Vec<DepthImage>> {
    let mut cur = Cursor { bytes, offset: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic:?}, expected {ARCHIVE_MAGIC:?}"),
        });
    }
    let version = cur.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("view count")? as usize;
    let width = cur.u32("width")? as usize;
    let height = cur.u32("height")? as usize;
    if count != manifest.total_views() || width != manifest.resolution as usize {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            detail: format!(
                "archive holds {count} views at {width}x{height}, manifest expects {} at {}",
                manifest.total_views(),
                manifest.resolution
            ),
        });
    }
    let mut views = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = cur.take(width * height * 4, "pixel block")?;
        let depths: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        views.push(DepthImage::new(width, height, depths));
    }
    if cur.offset != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: cur.offset as u64,
            detail: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    Ok(views)
}
