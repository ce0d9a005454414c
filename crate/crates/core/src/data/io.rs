//! Binary containers and on-disk dataset layout.
//!
//! `HCB1` feature/embedding files: magic, u32 LE rows, u32 LE columns, then
//! `rows × cols` f32 LE values in row-major order.
//!
//! A dataset directory holds `features.hcb`, `labels.csv` (see
//! [`crate::hierarchy::read_labels_csv`]) and `splits.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Dataset, Partition, Split};
use crate::error::{Error, Result};
use crate::hierarchy::{read_labels_csv, write_labels_csv};

pub const FEATURES_MAGIC: &[u8; 4] = b"HCB1";
pub const FEATURES_FILE: &str = "features.hcb";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.json";

/// Little-endian reader that tracks its byte offset for error reporting.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    fn fill<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        let start = self.offset;
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => {
                    Error::format(start, format!("truncated while reading {what}"))
                }
                _ => Error::format(start, e.to_string()),
            })?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.fill("magic")?;
        if &got != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.fill("u32").map(u32::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.fill("f32").map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.fill("f64").map(f64::from_le_bytes)
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(self.offset, "trailing bytes after payload")),
            Err(e) => Err(Error::format(self.offset, e.to_string())),
        }
    }
}

/// Writes a matrix as `HCB1`. Values are stored as f32.
pub fn write_hcb<W: Write>(mut w: W, m: ArrayView2<f64>) -> std::io::Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(std::io::Error::other)?;
    let cols = u32::try_from(m.ncols()).map_err(std::io::Error::other)?;
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for &v in m.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()
}

pub fn read_hcb<R: Read>(r: R) -> Result<Array2<f64>> {
    let mut r = ByteReader::new(r);
    r.expect_magic(FEATURES_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mut data = Vec::with_capacity((rows * cols).min(1 << 24));
    for _ in 0..rows * cols {
        data.push(r.f32()? as f64);
    }
    r.expect_eof()?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::format(12, e.to_string()))
}

/// Writes through `<path>.tmp` and renames into place.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let tmp = tmp_path(path);
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_hcb_file(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    atomic_write(path, |w| write_hcb(w, m).map_err(|e| Error::io(path, e)))
}

pub fn read_hcb_file(path: &Path) -> Result<Array2<f64>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_hcb(BufReader::new(f))
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    level_count: usize,
    split: Vec<Split>,
    partition: Vec<Partition>,
}

/// Writes the three dataset files into `dir` (created if missing).
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_hcb_file(&dir.join(FEATURES_FILE), ds.features.view())?;
    let labels = dir.join(LABELS_FILE);
    atomic_write(&labels, |w| write_labels_csv(w, &ds.paths, ds.level_count))?;
    let manifest = SplitManifest {
        level_count: ds.level_count,
        split: ds.splits.clone(),
        partition: ds.partitions.clone(),
    };
    let splits = dir.join(SPLITS_FILE);
    atomic_write(&splits, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n").map_err(|e| Error::io(&splits, e))
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features = read_hcb_file(&dir.join(FEATURES_FILE))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let paths = read_labels_csv(BufReader::new(labels))?;
    let splits_path = dir.join(SPLITS_FILE);
    let splits = File::open(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    let manifest: SplitManifest = serde_json::from_reader(BufReader::new(splits))?;
    if features.nrows() != paths.len()
        || manifest.split.len() != paths.len()
        || manifest.partition.len() != paths.len()
    {
        return Err(Error::Structural(format!(
            "row counts disagree: {} features, {} labels, {} split tags",
            features.nrows(),
            paths.len(),
            manifest.split.len()
        )));
    }
    let ds = Dataset {
        features,
        paths,
        level_count: manifest.level_count,
        splits: manifest.split,
        partitions: manifest.partition,
    };
    ds.validate()?;
    Ok(ds)
}
