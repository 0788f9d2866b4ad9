//! Binary files: encoder checkpoints (`CFP1`), fingerprints (`CFPF`) and
//! reference databases (`CFPD`). Everything is little-endian. Decoders
//! report the byte offset of the first problem and never return a partially
//! filled value.

use std::path::Path;

use contrafp_core::fingerprint::{Fingerprint, SubFingerprint};
use contrafp_core::matchdb::{FingerprintDb, TrackEntry};
use contrafp_core::nn::{EncoderConfig, ParamSet, Tensor, EMBED_DIM};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFP1";
pub const FINGERPRINT_MAGIC: &[u8; 4] = b"CFPF";
pub const DB_MAGIC: &[u8; 4] = b"CFPD";
pub const VERSION: u32 = 1;

/// Upper bound on any stored count, so that a corrupt length field fails
/// with a format error instead of a huge allocation.
const MAX_COUNT: u32 = 1 << 28;

struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, buf: &'a [u8]) -> Self {
        Self { what, buf, pos: 0 }
    }

    fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(self.error(
                self.pos,
                format!("truncated in {field}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn count(&mut self, field: &str) -> Result<u32> {
        let at = self.pos;
        let n = self.u32(field)?;
        if n > MAX_COUNT {
            return Err(self.error(at, format!("{field} of {n} is implausibly large")));
        }
        Ok(n)
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.error(self.pos, format!("{field} length overflows")))?;
        Ok(self
            .take(bytes, field)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.count(field)? as usize;
        let at = self.pos;
        let bytes = self.take(n, field)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| self.error(at, format!("{field} is not UTF-8")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(self.error(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(self.error(at, format!("unsupported version {v}, expected {VERSION}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize, field: &str) -> Result<()> {
    let n = u32::try_from(n)
        .ok()
        .filter(|&n| n <= MAX_COUNT)
        .ok_or_else(|| Error::Usage(format!("{field} of {n} is too large to store")))?;
    put_u32(out, n);
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str, field: &str) -> Result<()> {
    put_len(out, s.len(), field)?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::atomic_write(path, |mut f| {
        use std::io::Write;
        f.write_all(bytes).map_err(|e| Error::io(path, e))
    })
}

pub fn encode_checkpoint(p: &ParamSet<f32>) -> Result<Vec<u8>> {
    let cfg = p.config();
    let mut out = Vec::with_capacity(64 + p.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, VERSION);
    put_len(&mut out, cfg.conv_channels.len(), "conv layer count")?;
    for &c in &cfg.conv_channels {
        put_len(&mut out, c, "channel count")?;
    }
    put_len(&mut out, cfg.embed_dim, "embedding size")?;
    put_len(&mut out, cfg.n_mels, "mel bands")?;
    put_len(&mut out, cfg.n_frames, "frames")?;
    put_len(&mut out, p.num_tensors(), "tensor count")?;
    for (name, t) in p.iter() {
        put_str(&mut out, name, "tensor name")?;
        put_len(&mut out, t.shape().len(), "rank")?;
        for &d in t.shape() {
            put_len(&mut out, d, "dimension")?;
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader::new("checkpoint", bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let config_at = r.pos;
    let n_conv = r.count("conv layer count")?;
    let conv_channels = (0..n_conv)
        .map(|_| r.count("channel count").map(|c| c as usize))
        .collect::<Result<_>>()?;
    let config = EncoderConfig {
        conv_channels,
        embed_dim: r.count("embedding size")? as usize,
        n_mels: r.count("mel bands")? as usize,
        n_frames: r.count("frames")? as usize,
    };
    config
        .validate()
        .map_err(|e| r.error(config_at, e.to_string()))?;
    let n = r.count("tensor count")?;
    let mut named = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let at = r.pos;
        let name = r.string("tensor name")?;
        let rank = r.count("rank")?;
        let shape = (0..rank)
            .map(|_| r.count("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.error(at, "tensor size overflows"))?;
        let data = r.f32s(len, &format!("tensor {name}"))?;
        let t = Tensor::from_vec(&shape, data).map_err(|e| r.error(at, e.to_string()))?;
        named.push((name, t));
    }
    r.finish()?;
    ParamSet::from_tensors(&config, named).map_err(|e| r.error(config_at, e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, p: &ParamSet<f32>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(p)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet<f32>> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

pub fn encode_fingerprint(fp: &Fingerprint) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + fp.track_ref.len() + fp.subs.len() * (8 + EMBED_DIM * 4));
    out.extend_from_slice(FINGERPRINT_MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &fp.track_ref, "track name")?;
    put_len(&mut out, fp.subs.len(), "sub-fingerprint count")?;
    for (i, s) in fp.subs.iter().enumerate() {
        if s.vector.len() != EMBED_DIM {
            return Err(Error::Usage(format!(
                "sub-fingerprint {i} has {} values, expected {EMBED_DIM}",
                s.vector.len()
            )));
        }
        out.extend_from_slice(&s.offset_s.to_le_bytes());
        put_f32s(&mut out, &s.vector);
    }
    Ok(out)
}

pub fn decode_fingerprint(bytes: &[u8]) -> Result<Fingerprint> {
    let mut r = Reader::new("fingerprint", bytes);
    r.header(FINGERPRINT_MAGIC)?;
    let track_ref = r.string("track name")?;
    let n = r.count("sub-fingerprint count")?;
    let mut subs = Vec::with_capacity(n.min(1 << 16) as usize);
    for i in 0..n {
        let offset_s = r.f64(&format!("offset of sub-fingerprint {i}"))?;
        let vector = r.f32s(EMBED_DIM, &format!("sub-fingerprint {i}"))?;
        subs.push(SubFingerprint { vector, offset_s });
    }
    r.finish()?;
    Ok(Fingerprint { track_ref, subs })
}

pub fn save_fingerprint(path: impl AsRef<Path>, fp: &Fingerprint) -> Result<()> {
    write_file(path.as_ref(), &encode_fingerprint(fp)?)
}

pub fn load_fingerprint(path: impl AsRef<Path>) -> Result<Fingerprint> {
    decode_fingerprint(&read_file(path.as_ref())?)
}

/// Rows are stored grouped by track in table order, which is how
/// [`FingerprintDb::add_track`] lays them out, so owners need no storage.
pub fn encode_db(db: &FingerprintDb) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + db.matrix().len() * 4);
    out.extend_from_slice(DB_MAGIC);
    put_u32(&mut out, VERSION);
    put_len(&mut out, db.dim(), "dimension")?;
    put_len(&mut out, db.tracks().len(), "track count")?;
    for t in db.tracks() {
        put_u32(&mut out, t.id);
        put_str(&mut out, &t.name, "track name")?;
        put_u32(&mut out, t.sub_count);
    }
    let owners = db
        .tracks()
        .iter()
        .flat_map(|t| std::iter::repeat(t.id).take(t.sub_count as usize));
    if !owners.eq(db.row_owner().iter().copied()) {
        return Err(Error::Usage(
            "database rows are not grouped by track in table order".into(),
        ));
    }
    put_f32s(&mut out, db.matrix());
    Ok(out)
}

pub fn decode_db(bytes: &[u8]) -> Result<FingerprintDb> {
    let mut r = Reader::new("database", bytes);
    r.header(DB_MAGIC)?;
    let dim = r.count("dimension")? as usize;
    let n = r.count("track count")?;
    let mut tracks = Vec::with_capacity(n.min(1 << 16) as usize);
    let mut rows = 0usize;
    for i in 0..n {
        let id = r.u32(&format!("id of track {i}"))?;
        let name = r.string(&format!("name of track {i}"))?;
        let sub_count = r.count(&format!("sub count of track {i}"))?;
        rows += sub_count as usize;
        tracks.push(TrackEntry {
            id,
            name,
            sub_count,
        });
    }
    let row_owner: Vec<u32> = tracks
        .iter()
        .flat_map(|t| std::iter::repeat(t.id).take(t.sub_count as usize))
        .collect();
    let matrix_at = r.pos;
    let matrix = r.f32s(rows * dim, "row matrix")?;
    r.finish()?;
    FingerprintDb::from_parts(dim, tracks, matrix, row_owner)
        .map_err(|e| r.error(matrix_at, e.to_string()))
}

pub fn save_db(path: impl AsRef<Path>, db: &FingerprintDb) -> Result<()> {
    write_file(path.as_ref(), &encode_db(db)?)
}

pub fn load_db(path: impl AsRef<Path>) -> Result<FingerprintDb> {
    decode_db(&read_file(path.as_ref())?)
}
