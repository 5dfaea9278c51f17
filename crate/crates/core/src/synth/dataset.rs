//! Binary scene-pair dataset with a JSON sidecar index.
//!
//! Layout of the `.bin` file (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "PCALDSET"
//! version  u32
//! count    u32
//! record*  { len: u32, payload: [u8; len], crc32(payload): u32 }
//! ```
//!
//! A payload holds the ground-truth transform, both centers, headings and the
//! distance as f64, the class label and mesh id as u16-length-prefixed UTF-8,
//! the two point counts as u32, and then all coordinates as f32.
//!
//! The sidecar (`<name>.json`) lists the byte offset of each record together
//! with its labels, plus an optional echo of the generating configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geom::{GroundTransform, Point3, PointCloud};

use super::scene::SceneSample;
use super::SynthError;

pub const DATASET_MAGIC: &[u8; 8] = b"PCALDSET";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub offset: u64,
    pub len: u32,
    pub class_label: String,
    pub mesh_id: String,
    pub distance_d: f64,
    pub points1: u32,
    pub points2: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub records: Vec<RecordEntry>,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn index_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

fn encode(sample: &SceneSample) -> Vec<u8> {
    let mut buf = Vec::with_capacity(128 + 12 * (sample.cloud1.len() + sample.cloud2.len()));
    let f = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
    f(&mut buf, sample.gt.tx);
    f(&mut buf, sample.gt.ty);
    f(&mut buf, sample.gt.yaw);
    for c in [sample.center1, sample.center2] {
        f(&mut buf, c.x);
        f(&mut buf, c.y);
        f(&mut buf, c.z);
    }
    f(&mut buf, sample.heading1);
    f(&mut buf, sample.heading2);
    f(&mut buf, sample.distance_d);
    for s in [&sample.class_label, &sample.mesh_id] {
        let bytes = s.as_bytes();
        let n = bytes.len().min(u16::MAX as usize);
        buf.extend_from_slice(&(n as u16).to_le_bytes());
        buf.extend_from_slice(&bytes[..n]);
    }
    buf.extend_from_slice(&(sample.cloud1.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.cloud2.len() as u32).to_le_bytes());
    for p in sample.cloud1.iter().chain(sample.cloud2.iter()) {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SynthError> {
        if self.pos + n > self.buf.len() {
            return Err(SynthError::CorruptRecord { index: self.record, reason: "payload too short".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, SynthError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, SynthError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SynthError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, SynthError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let record = self.record;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| SynthError::CorruptRecord { index: record, reason: "invalid utf-8 label".into() })
    }

    fn cloud(&mut self, n: usize) -> Result<PointCloud, SynthError> {
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y, z) = (self.f32()?, self.f32()?, self.f32()?);
            pts.push(Point3::new(x as f64, y as f64, z as f64));
        }
        Ok(PointCloud::new(pts))
    }
}

fn decode(buf: &[u8], record: usize) -> Result<SceneSample, SynthError> {
    let mut c = Cursor { buf, pos: 0, record };
    let gt = GroundTransform { tx: c.f64()?, ty: c.f64()?, yaw: c.f64()? };
    let center1 = Point3::new(c.f64()?, c.f64()?, c.f64()?);
    let center2 = Point3::new(c.f64()?, c.f64()?, c.f64()?);
    let heading1 = c.f64()?;
    let heading2 = c.f64()?;
    let distance_d = c.f64()?;
    let class_label = c.string()?;
    let mesh_id = c.string()?;
    let n1 = c.u32()? as usize;
    let n2 = c.u32()? as usize;
    let cloud1 = c.cloud(n1)?;
    let cloud2 = c.cloud(n2)?;
    if c.pos != buf.len() {
        return Err(SynthError::CorruptRecord { index: record, reason: "trailing bytes".into() });
    }
    Ok(SceneSample { cloud1, cloud2, gt, center1, center2, heading1, heading2, distance_d, class_label, mesh_id })
}

/// Writes samples to `path` and the index to `path` with a `.json` extension.
/// Parent directories are created as needed.
pub fn write_dataset(samples: &[SceneSample], path: impl AsRef<Path>, config: serde_json::Value) -> Result<DatasetIndex, SynthError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(DATASET_MAGIC).map_err(io_err(path))?;
    w.write_all(&DATASET_VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(samples.len() as u32).to_le_bytes()).map_err(io_err(path))?;

    let mut offset = HEADER_BYTES;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let payload = encode(s);
        let crc = crc32fast::hash(&payload);
        w.write_all(&(payload.len() as u32).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&payload).map_err(io_err(path))?;
        w.write_all(&crc.to_le_bytes()).map_err(io_err(path))?;
        records.push(RecordEntry {
            offset,
            len: payload.len() as u32,
            class_label: s.class_label.clone(),
            mesh_id: s.mesh_id.clone(),
            distance_d: s.distance_d,
            points1: s.cloud1.len() as u32,
            points2: s.cloud2.len() as u32,
        });
        offset += 8 + payload.len() as u64;
    }
    w.flush().map_err(io_err(path))?;

    let index = DatasetIndex { format: "pcalign-dataset".into(), version: DATASET_VERSION, count: samples.len(), records, config };
    let ipath = index_path(path);
    let json = serde_json::to_string_pretty(&index).map_err(|e| SynthError::Config(e.to_string()))?;
    std::fs::write(&ipath, json).map_err(io_err(&ipath))?;
    Ok(index)
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<u32, SynthError> {
    let mut header = [0u8; HEADER_BYTES as usize];
    r.read_exact(&mut header).map_err(|_| SynthError::Version { path: path.to_path_buf(), found: None })?;
    if &header[..8] != DATASET_MAGIC {
        return Err(SynthError::Version { path: path.to_path_buf(), found: None });
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(SynthError::Version { path: path.to_path_buf(), found: Some(version) });
    }
    Ok(u32::from_le_bytes(header[12..16].try_into().unwrap()))
}

fn read_record<R: Read>(r: &mut R, index: usize) -> Result<SceneSample, SynthError> {
    let corrupt = |reason: &str| SynthError::CorruptRecord { index, reason: reason.to_string() };
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| corrupt("truncated record header"))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|_| corrupt("truncated payload"))?;
    let mut crc = [0u8; 4];
    r.read_exact(&mut crc).map_err(|_| corrupt("missing checksum"))?;
    if crc32fast::hash(&payload) != u32::from_le_bytes(crc) {
        return Err(corrupt("checksum mismatch"));
    }
    decode(&payload, index)
}

/// Reads every sample of a dataset file.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SceneSample>, SynthError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let count = read_header(&mut r, path)? as usize;
    (0..count).map(|i| read_record(&mut r, i)).collect()
}

/// Random access to a dataset through its sidecar index.
pub struct DatasetReader {
    file: BufReader<File>,
    pub index: DatasetIndex,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let mut file = BufReader::new(File::open(path).map_err(io_err(path))?);
        let count = read_header(&mut file, path)? as usize;
        let ipath = index_path(path);
        let text = std::fs::read_to_string(&ipath).map_err(io_err(&ipath))?;
        let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| SynthError::Config(format!("{}: {e}", ipath.display())))?;
        if index.version != DATASET_VERSION || index.count != count || index.records.len() != count {
            return Err(SynthError::Version { path: ipath, found: Some(index.version) });
        }
        Ok(Self { file, index })
    }

    pub fn len(&self) -> usize {
        self.index.count
    }

    pub fn is_empty(&self) -> bool {
        self.index.count == 0
    }

    pub fn get(&mut self, i: usize) -> Result<SceneSample, SynthError> {
        let entry = self.index.records.get(i).ok_or(SynthError::CorruptRecord { index: i, reason: "index out of range".into() })?;
        self.file
            .seek(SeekFrom::Start(entry.offset))
            .map_err(|_| SynthError::CorruptRecord { index: i, reason: "seek failed".into() })?;
        read_record(&mut self.file, i)
    }
}
