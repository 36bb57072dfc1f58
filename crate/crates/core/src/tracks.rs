//! Keypoint track records and their CSV / binary serialization.
//!
//! One record per (frame, keypoint). The CSV header is
//! `frame,kp_id,u,v,confidence,sigma2_x,sigma2_y,sigma2_xy`; the binary
//! container is a little-endian record stream behind a versioned magic.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 6] = b"KPTRAK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u64,
    pub kp_id: u32,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub sigma2_xy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointTracks {
    records: Vec<TrackRecord>,
}

impl KeypointTracks {
    pub fn new(mut records: Vec<TrackRecord>) -> Self {
        records.sort_by_key(|r| (r.frame, r.kp_id));
        Self { records }
    }

    pub fn records(&self) -> &[TrackRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.frame + 1)
            .max()
            .unwrap_or(0) as usize
    }

    pub fn n_keypoints(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.kp_id + 1)
            .max()
            .unwrap_or(0) as usize
    }

    pub fn get(&self, frame: u64, kp_id: u32) -> Option<&TrackRecord> {
        self.records
            .binary_search_by_key(&(frame, kp_id), |r| (r.frame, r.kp_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Every (frame, keypoint) pair present for frames 0..n_frames.
    pub fn check_continuous(&self) -> Result<()> {
        let (nf, nk) = (self.n_frames(), self.n_keypoints());
        for f in 0..nf as u64 {
            for k in 0..nk as u32 {
                if self.get(f, k).is_none() {
                    return Err(Error::MissingFrame {
                        frame: f as usize,
                        kp: k as usize,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "frame",
            "kp_id",
            "u",
            "v",
            "confidence",
            "sigma2_x",
            "sigma2_y",
            "sigma2_xy",
        ])?;
        for r in &self.records {
            w.serialize((
                r.frame,
                r.kp_id,
                r.u,
                r.v,
                r.confidence,
                r.sigma2_x,
                r.sigma2_y,
                r.sigma2_xy,
            ))?;
        }
        let bytes = w.into_inner().map_err(|e| {
            Error::InvalidArgument(format!("csv flush failed: {e}"))
        })?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv_string()?.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut records = Vec::new();
        for row in reader.deserialize() {
            let (frame, kp_id, u, v, confidence, sigma2_x, sigma2_y, sigma2_xy): (
                u64,
                u32,
                f64,
                f64,
                f64,
                f64,
                f64,
                f64,
            ) = row?;
            records.push(TrackRecord {
                frame,
                kp_id,
                u,
                v,
                confidence,
                sigma2_x,
                sigma2_y,
                sigma2_xy,
            });
        }
        Ok(Self::new(records))
    }

    pub fn to_binary(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.records.len() * 60);
        out.write_all(MAGIC).expect("vec write");
        out.write_u16::<LittleEndian>(VERSION).expect("vec write");
        out.write_u64::<LittleEndian>(self.records.len() as u64)
            .expect("vec write");
        for r in &self.records {
            out.write_u64::<LittleEndian>(r.frame).expect("vec write");
            out.write_u32::<LittleEndian>(r.kp_id).expect("vec write");
            for v in [r.u, r.v, r.confidence, r.sigma2_x, r.sigma2_y, r.sigma2_xy] {
                out.write_f64::<LittleEndian>(v).expect("vec write");
            }
        }
        Ok(out)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_binary()?)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 6];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::InvalidArgument("track container too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::InvalidArgument("not a keypoint track container".into()));
        }
        let version = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::InvalidArgument("truncated track container".into()))?;
        if version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported track container version {version}"
            )));
        }
        let n = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::InvalidArgument("truncated track container".into()))?;
        let mut records = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let frame = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| Error::InvalidArgument("truncated track record".into()))?;
            let kp_id = cur
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::InvalidArgument("truncated track record".into()))?;
            let mut vals = [0.0f64; 6];
            for v in &mut vals {
                *v = cur
                    .read_f64::<LittleEndian>()
                    .map_err(|_| Error::InvalidArgument("truncated track record".into()))?;
            }
            records.push(TrackRecord {
                frame,
                kp_id,
                u: vals[0],
                v: vals[1],
                confidence: vals[2],
                sigma2_x: vals[3],
                sigma2_y: vals[4],
                sigma2_xy: vals[5],
            });
        }
        Ok(Self::new(records))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_binary(&bytes)
    }

    /// Load from `.csv` or the binary container based on extension.
    pub fn read(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(path)
        } else {
            Self::read_binary(path)
        }
    }
}
