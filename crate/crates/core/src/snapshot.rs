//! Binary snapshots of a cluster, optionally with the RNG stream that grew it.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "IDLA" | version u16 | d u8 | flags u8 | t u64
//! bbox lo[d] i32 | bbox hi[d] i32
//! occupancy bitmap over the bbox, lexicographic, LSB first, padded to a byte
//! arrival times of occupied sites in lexicographic order, zigzag delta LEB128
//! [flags & 1] master_seed u64 | stream_index u64 | word_pos u128
//! CRC-64/XZ of everything above, u64
//! ```
//!
//! An empty cluster stores the one-cell box at the origin with a zero bit.

use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::cluster::Cluster;
use crate::error::{IdlaError, Result};
use crate::lattice::{LatticeGeometry, Site, MAX_DIM};
use crate::rng::{RngState, RngStream};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"IDLA";
pub const SNAPSHOT_VERSION: u16 = 1;
const FLAG_RNG: u8 = 1;

pub(crate) const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

/// Cursor over a byte slice; every read fails cleanly on truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| IdlaError::CorruptSnapshot("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub(crate) fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(IdlaError::CorruptSnapshot("varint too long".into()))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Advances `cur` to the next point of the box `[lo, hi]` in lexicographic
/// order; `false` after the last point.
pub(crate) fn lex_next(cur: &mut [i32], lo: &[i32], hi: &[i32]) -> bool {
    for i in (0..cur.len()).rev() {
        if cur[i] < hi[i] {
            cur[i] += 1;
            return true;
        }
        cur[i] = lo[i];
    }
    false
}

/// Appends the CRC trailer.
pub(crate) fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let sum = CRC64.checksum(&body);
    body.extend_from_slice(&sum.to_le_bytes());
    body
}

/// Checks magic and trailer, returning the body after the magic.
pub(crate) fn unseal<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<&'a [u8]> {
    if bytes.len() < 12 {
        return Err(IdlaError::CorruptSnapshot("file too short".into()));
    }
    if &bytes[..4] != magic {
        return Err(IdlaError::CorruptSnapshot("bad magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    if CRC64.checksum(body) != stored {
        return Err(IdlaError::CorruptSnapshot("checksum mismatch".into()));
    }
    Ok(&body[4..])
}

/// Serializes a cluster and, if given, the stream position to resume from.
pub fn encode(cluster: &Cluster, rng: Option<&RngStream>) -> Vec<u8> {
    let d = cluster.dim();
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(d as u8);
    out.push(if rng.is_some() { FLAG_RNG } else { 0 });
    out.extend_from_slice(&cluster.count().to_le_bytes());
    let (lo, hi) = cluster.bounding_box().unwrap_or((vec![0; d], vec![0; d]));
    for v in lo.iter().chain(&hi) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let mut byte = 0u8;
    let mut nbits = 0u32;
    let mut times = Vec::with_capacity(cluster.count() as usize);
    let mut cur = lo.clone();
    loop {
        let t = cluster.arrival(&cur);
        if let Some(t) = t {
            byte |= 1 << nbits;
            times.push(t);
        }
        nbits += 1;
        if nbits == 8 {
            out.push(byte);
            byte = 0;
            nbits = 0;
        }
        if !lex_next(&mut cur, &lo, &hi) {
            break;
        }
    }
    if nbits > 0 {
        out.push(byte);
    }

    let mut prev = 0i64;
    for t in times {
        put_varint(&mut out, zigzag(t as i64 - prev));
        prev = t as i64;
    }
    if let Some(rng) = rng {
        let s = rng.state();
        out.extend_from_slice(&s.master_seed.to_le_bytes());
        out.extend_from_slice(&s.stream_index.to_le_bytes());
        out.extend_from_slice(&s.word_pos.to_le_bytes());
    }
    seal(out)
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Cluster, Option<RngStream>)> {
    let body = unseal(bytes, SNAPSHOT_MAGIC)?;
    let mut r = Reader::new(body);
    let version = r.u16()?;
    if version != SNAPSHOT_VERSION {
        return Err(IdlaError::CorruptSnapshot(format!("unsupported version {version}")));
    }
    let d = r.u8()? as usize;
    if d > MAX_DIM {
        return Err(IdlaError::CorruptSnapshot(format!("bad dimension {d}")));
    }
    let geometry = LatticeGeometry::new(d)
        .map_err(|_| IdlaError::CorruptSnapshot(format!("bad dimension {d}")))?;
    let flags = r.u8()?;
    let t = r.u64()?;
    let lo: Vec<i32> = (0..d).map(|_| r.i32()).collect::<Result<_>>()?;
    let hi: Vec<i32> = (0..d).map(|_| r.i32()).collect::<Result<_>>()?;
    let mut cells: u64 = 1;
    for i in 0..d {
        if hi[i] < lo[i] {
            return Err(IdlaError::CorruptSnapshot("inverted bounding box".into()));
        }
        cells = cells
            .checked_mul((hi[i] as i64 - lo[i] as i64 + 1) as u64)
            .ok_or_else(|| IdlaError::CorruptSnapshot("bounding box too large".into()))?;
    }
    let bitmap = r.take(cells.div_ceil(8) as usize)?;

    let mut sites = Vec::with_capacity(t as usize);
    let mut cur = lo.clone();
    for cell in 0..cells as usize {
        if bitmap[cell >> 3] >> (cell & 7) & 1 == 1 {
            sites.push(Site::new(cur.clone()));
        }
        lex_next(&mut cur, &lo, &hi);
    }
    if sites.len() as u64 != t {
        return Err(IdlaError::CorruptSnapshot("bitmap does not match particle count".into()));
    }
    let mut slots: Vec<Option<Site>> = vec![None; t as usize];
    let mut prev = 0i64;
    for s in sites {
        prev += unzigzag(r.varint()?);
        if prev < 1 || prev as u64 > t || slots[prev as usize - 1].is_some() {
            return Err(IdlaError::CorruptSnapshot("arrival times are not a permutation".into()));
        }
        slots[prev as usize - 1] = Some(s);
    }
    let ordered: Vec<Site> = slots.into_iter().map(Option::unwrap).collect();
    let rng = if flags & FLAG_RNG != 0 {
        Some(RngStream::from_state(RngState {
            master_seed: r.u64()?,
            stream_index: r.u64()?,
            word_pos: r.u128()?,
        }))
    } else {
        None
    };
    if !r.is_done() {
        return Err(IdlaError::CorruptSnapshot("trailing bytes".into()));
    }
    let cluster = Cluster::from_sites(geometry, &ordered)
        .map_err(|e| IdlaError::CorruptSnapshot(e.to_string()))?;
    Ok((cluster, rng))
}

pub fn snapshot(cluster: &Cluster, rng: Option<&RngStream>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(cluster, rng))?;
    Ok(())
}

pub fn restore(path: impl AsRef<Path>) -> Result<(Cluster, Option<RngStream>)> {
    decode(&std::fs::read(path)?)
}
