use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::observation::{Costmap, Observation};
use crate::sim::Action;

const MAGIC: &[u8; 4] = b"SNRD";
pub const DATASET_VERSION: u32 = 1;
const RECORD_BYTES: u32 = 8 + 8 + 4 * 8 + 3 * 8 + 1;

/// One step of experience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub obs_digest: u64,
    pub a_nom: Action<f64>,
    pub a_star: Action<f64>,
    pub next_digest: u64,
    pub r: f64,
    pub r_g: f64,
    pub r_c: f64,
    pub done: bool,
}

impl ReplayRecord {
    /// Builds a record with `r = r_g + r_c`.
    pub fn new(
        obs_digest: u64,
        a_nom: Action<f64>,
        a_star: Action<f64>,
        next_digest: u64,
        r_g: f64,
        r_c: f64,
        done: bool,
    ) -> Self {
        Self {
            obs_digest,
            a_nom,
            a_star,
            next_digest,
            r: r_g + r_c,
            r_g,
            r_c,
            done,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.r,
            self.r_g,
            self.r_c,
            self.a_nom.linear,
            self.a_nom.angular,
            self.a_star.linear,
            self.a_star.angular,
        ];
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::MalformedRecord("non-finite value".into()));
        }
        if self.r != self.r_g + self.r_c {
            return Err(Error::MalformedRecord(format!(
                "r = {} but r_g + r_c = {}",
                self.r,
                self.r_g + self.r_c
            )));
        }
        Ok(())
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&RECORD_BYTES.to_le_bytes());
        out.extend_from_slice(&self.obs_digest.to_le_bytes());
        out.extend_from_slice(&self.next_digest.to_le_bytes());
        for v in [
            self.a_nom.linear,
            self.a_nom.angular,
            self.a_star.linear,
            self.a_star.angular,
            self.r,
            self.r_g,
            self.r_c,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.done as u8);
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != RECORD_BYTES as usize {
            return Err(Error::MalformedRecord(format!("record of {} bytes", b.len())));
        }
        let u = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let f = |k: usize| f64::from_bits(u(16 + 8 * k));
        let done = match b[RECORD_BYTES as usize - 1] {
            0 => false,
            1 => true,
            x => return Err(Error::MalformedRecord(format!("done flag {x}"))),
        };
        let rec = Self {
            obs_digest: u(0),
            next_digest: u(8),
            a_nom: Action::new(f(0), f(1)),
            a_star: Action::new(f(2), f(3)),
            r: f(4),
            r_g: f(5),
            r_c: f(6),
            done,
        };
        rec.validate()?;
        Ok(rec)
    }
}

fn pack_bits(hasher: &mut Sha256, map: &Costmap<f64>) {
    hasher.update((map.height as u64).to_le_bytes());
    hasher.update((map.width as u64).to_le_bytes());
    let packed: Vec<u8> = map
        .cells
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &c)| acc | (((c != 0) as u8) << i))
        })
        .collect();
    hasher.update(&packed);
}

fn finish(hasher: Sha256) -> u64 {
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Digest of a costmap's occupancy bits.
pub fn digest_costmap(map: &Costmap<f64>) -> u64 {
    let mut h = Sha256::new();
    pack_bits(&mut h, map);
    finish(h)
}

/// Digest of every frame's occupancy bits plus the goal and velocity.
pub fn digest_observation(obs: &Observation<f64>) -> u64 {
    let mut h = Sha256::new();
    for f in &obs.frames {
        pack_bits(&mut h, f);
    }
    for v in [
        obs.goal_rel.x,
        obs.goal_rel.y,
        obs.velocity.linear,
        obs.velocity.angular,
    ] {
        h.update(v.to_le_bytes());
    }
    finish(h)
}

/// Ordered replay dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<ReplayRecord>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: ReplayRecord) -> Result<()> {
        record.validate()?;
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ReplayRecord] {
        &self.records
    }

    /// `n` records drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<ReplayRecord>> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok((0..n)
            .map(|_| self.records[rng.random_range(0..self.records.len())])
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (4 + RECORD_BYTES as usize));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            r.encode(&mut out);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 16 || &b[..4] != MAGIC {
            return Err(Error::MalformedRecord("missing dataset header".into()));
        }
        let version = u32::from_le_bytes(b[4..8].try_into().expect("4 bytes"));
        if version != DATASET_VERSION {
            return Err(Error::MalformedRecord(format!("unsupported dataset version {version}")));
        }
        let count = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
        let mut records = Vec::new();
        let mut at = 16;
        while at < b.len() {
            if at + 4 > b.len() {
                return Err(Error::MalformedRecord("truncated length prefix".into()));
            }
            let len = u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize;
            at += 4;
            if at + len > b.len() {
                return Err(Error::MalformedRecord("truncated record".into()));
            }
            records.push(ReplayRecord::decode(&b[at..at + len])?);
            at += len;
        }
        if records.len() as u64 != count {
            return Err(Error::MalformedRecord(format!(
                "header declares {count} records, found {}",
                records.len()
            )));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut b = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut b)?;
        Self::from_bytes(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::CostmapParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(i: u64) -> ReplayRecord {
        ReplayRecord::new(
            i,
            Action::new(0.5, 0.1),
            Action::new(0.4, 0.2),
            i + 1,
            0.3 * i as f64,
            -0.01,
            i % 3 == 0,
        )
    }

    #[test]
    fn round_trip() {
        let mut d = Dataset::new();
        for i in 0..10 {
            d.append(rec(i)).unwrap();
        }
        let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back, d);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        d.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), d);
    }

    #[test]
    fn rejects_bad_records() {
        let mut d = Dataset::new();
        let mut r = rec(1);
        r.r += 1e-9;
        assert!(d.append(r).is_err());
        let mut bytes = {
            let mut ok = Dataset::new();
            ok.append(rec(2)).unwrap();
            ok.to_bytes()
        };
        let n = bytes.len();
        bytes[n - 1] = 7;
        assert!(Dataset::from_bytes(&bytes).is_err());
        assert!(Dataset::from_bytes(b"nope").is_err());
        bytes[n - 1] = 1;
        bytes[4] = 9;
        assert!(Dataset::from_bytes(&bytes).is_err());
    }

    #[test]
    fn seeded_sampling() {
        let mut d = Dataset::new();
        for i in 0..50 {
            d.append(rec(i)).unwrap();
        }
        let a = d.sample(8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = d.sample(8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(Dataset::new().sample(1, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn digests_track_content() {
        let mut m = Costmap::empty(&CostmapParams::default());
        let d0 = digest_costmap(&m);
        m.set(5, 5, true);
        assert_ne!(d0, digest_costmap(&m));
        assert_eq!(digest_costmap(&m), digest_costmap(&m.clone()));
    }
}
