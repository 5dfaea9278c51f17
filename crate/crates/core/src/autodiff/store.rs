use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::{AutodiffError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Tensor,
}

/// Named tensors owned by a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a model-building bug.
    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    /// Weight `[fan_in, fan_out]` drawn from U(±sqrt(6 / fan_in)).
    pub fn insert_linear_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound) as Real).collect();
        self.insert(name, ParamKind::Trainable, Tensor { shape: vec![fan_in, fan_out], data })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].kind == ParamKind::Trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.numel()).sum()
    }

    /// `running ← decay·running + (1 − decay)·batch`.
    pub fn blend(&mut self, id: ParamId, batch: &[Real], decay: f64) {
        let t = &mut self.entries[id.0].value;
        assert_eq!(t.numel(), batch.len(), "running statistic size");
        for (r, &b) in t.data.iter_mut().zip(batch) {
            *r = (decay * *r as f64 + (1.0 - decay) * b as f64) as Real;
        }
    }
}

/// Batch-norm decay at a given epoch: starts at 0.5, the remaining gap to 1
/// halves every 30 epochs, capped at 0.99.
pub fn bn_decay(epoch: usize) -> f64 {
    (1.0 - 0.5 * 0.5f64.powi((epoch / 30) as i32)).min(0.99)
}

const MAGIC: &[u8; 8] = b"PCALCKPT";
const VERSION: u32 = 1;

/// Parameters plus the model configuration they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: ParamStore,
}

fn fmt_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Format(msg.into())
}

/// Layout: magic, u32 version, u8 value width, u32 config length + JSON,
/// u32 entry count, entries (u16 name length + name, u8 kind, u8 rank,
/// u32 dims, little-endian values), then a CRC32 of everything before it.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), AutodiffError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(std::mem::size_of::<Real>() as u8);
    buf.extend_from_slice(&(ckpt.config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(ckpt.config_json.as_bytes());
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for e in &ckpt.params.entries {
        buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        buf.push(e.value.shape.len() as u8);
        for &d in &e.value.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.value.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let io = |source| AutodiffError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| fmt_err("truncated file"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, AutodiffError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, AutodiffError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AutodiffError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|source| AutodiffError::Io { path: path.to_path_buf(), source })?;
    if raw.len() < MAGIC.len() + 8 || &raw[..8] != MAGIC {
        return Err(fmt_err("not a checkpoint file"));
    }
    let (body, tail) = raw.split_at(raw.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(fmt_err("checksum mismatch"));
    }
    let mut c = Cursor { data: body, pos: 8 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let width = c.u8()? as usize;
    if width != 4 && width != 8 {
        return Err(fmt_err(format!("unsupported value width {width}")));
    }
    let clen = c.u32()? as usize;
    let config_json = String::from_utf8(c.take(clen)?.to_vec()).map_err(|_| fmt_err("config is not UTF-8"))?;
    let count = c.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).map_err(|_| fmt_err("name is not UTF-8"))?;
        let kind = match c.u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(fmt_err(format!("unknown entry kind {k}"))),
        };
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let bytes = c.take(n * width)?;
        let data = bytes
            .chunks_exact(width)
            .map(|b| {
                if width == 4 {
                    f32::from_le_bytes(b.try_into().unwrap()) as Real
                } else {
                    f64::from_le_bytes(b.try_into().unwrap()) as Real
                }
            })
            .collect();
        if params.find(&name).is_some() {
            return Err(fmt_err(format!("duplicate entry {name}")));
        }
        params.insert(name, kind, Tensor { shape, data });
    }
    if c.pos != body.len() {
        return Err(fmt_err("trailing bytes"));
    }
    Ok(Checkpoint { config_json, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decay_schedule() {
        assert_eq!(bn_decay(0), 0.5);
        assert_eq!(bn_decay(29), 0.5);
        assert_eq!(bn_decay(30), 0.75);
        assert_eq!(bn_decay(60), 0.875);
        assert_eq!(bn_decay(199), 0.99);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert_linear_weight("l0.w", 7, 5, &mut rng);
        store.insert("l0.b", ParamKind::Trainable, Tensor::filled(&[5], -0.0));
        store.insert("bn.mean", ParamKind::Buffer, Tensor::new(vec![2], vec![Real::MIN_POSITIVE, 1e-30]).unwrap());
        let ckpt = Checkpoint { config_json: "{\"bins\":50}".into(), params: store };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config_json, ckpt.config_json);
        for id in ckpt.params.ids() {
            let (a, b) = (ckpt.params.get(id), back.params.get(id));
            assert_eq!(a.shape, b.shape);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(ckpt.params.name(id), back.params.name(id));
            assert_eq!(ckpt.params.kind(id), back.params.kind(id));
        }
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", ParamKind::Trainable, Tensor::filled(&[4], 1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &Checkpoint { config_json: "{}".into(), params: store }).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(AutodiffError::Format(_))));
        std::fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(AutodiffError::Format(_))));
    }
}
