//! The `E2O1` dataset file.
//!
//! ```text
//! "E2O1" | header_len: u32 LE | header: UTF-8 JSON | records...
//! record = state f64*d_s | action f64*d_a | reward f64 | next_state f64*d_s
//!        | boundary f64 | terminal f64 | episode u32 | step u32      (all LE)
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, ReplayBuffer};
use crate::envsuite::TaskSpec;
use crate::error::{Error, Result};

pub const FORMAT_MAGIC: &[u8; 4] = b"E2O1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episode_length: u64,
    pub agent: String,
    pub seed: u64,
    pub config_hash: String,
    pub size: u64,
    #[serde(default)]
    pub relabel_task: Option<TaskSpec>,
}

fn record_len(h: &DatasetHeader) -> usize {
    8 * (2 * h.obs_dim + h.act_dim + 3) + 8
}

pub(super) fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut header = ds.header.clone();
    header.size = ds.len() as u64;
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + ds.len() * record_len(&header));
    out.extend_from_slice(FORMAT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let put = |out: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for t in ds.transitions.iter() {
        put(&mut out, t.state);
        put(&mut out, t.action);
        put(&mut out, &[t.reward]);
        put(&mut out, t.next_state);
        put(&mut out, &[f64::from(u8::from(t.boundary)), f64::from(u8::from(t.terminal))]);
        out.extend_from_slice(&t.episode.to_le_bytes());
        out.extend_from_slice(&t.step.to_le_bytes());
    }
    Ok(out)
}

fn flag(x: f64, offset: usize) -> Result<bool> {
    match x {
        0.0 => Ok(false),
        1.0 => Ok(true),
        other => Err(Error::integrity(offset as u64, format!("flag field holds {other}"))),
    }
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 8 {
        return Err(Error::integrity(bytes.len() as u64, "file shorter than the fixed preamble"));
    }
    if &bytes[..4] != FORMAT_MAGIC {
        return Err(Error::integrity(0, "bad magic, expected E2O1"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = 8 + hlen;
    if bytes.len() < body {
        return Err(Error::integrity(bytes.len() as u64, "truncated header"));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| Error::integrity(8, format!("malformed header: {e}")))?;
    if header.obs_dim == 0 || header.act_dim == 0 {
        return Err(Error::integrity(8, "header declares zero dimensions"));
    }
    let rec = record_len(&header);
    let payload = bytes.len() - body;
    if !payload.is_multiple_of(rec) {
        let whole = payload / rec;
        return Err(Error::integrity(
            (body + whole * rec) as u64,
            format!("truncated record after {whole} complete records"),
        ));
    }
    let count = payload / rec;
    if count as u64 != header.size {
        return Err(Error::integrity(
            body as u64,
            format!("header declares {} transitions, payload holds {count}", header.size),
        ));
    }
    let (ds, da) = (header.obs_dim, header.act_dim);
    let mut buf = ReplayBuffer::unbounded(ds, da)?;
    let mut state = vec![0.0; ds];
    let mut action = vec![0.0; da];
    let mut next = vec![0.0; ds];
    for k in 0..count {
        let base = body + k * rec;
        let f = |j: usize| f64::from_le_bytes(bytes[base + 8 * j..base + 8 * j + 8].try_into().expect("8 bytes"));
        for (j, s) in state.iter_mut().enumerate() {
            *s = f(j);
        }
        for (j, a) in action.iter_mut().enumerate() {
            *a = f(ds + j);
        }
        let reward = f(ds + da);
        for (j, s) in next.iter_mut().enumerate() {
            *s = f(ds + da + 1 + j);
        }
        let boundary = flag(f(2 * ds + da + 1), base)?;
        let terminal = flag(f(2 * ds + da + 2), base)?;
        let ids = base + 8 * (2 * ds + da + 3);
        let episode = u32::from_le_bytes(bytes[ids..ids + 4].try_into().expect("4 bytes"));
        let step = u32::from_le_bytes(bytes[ids + 4..ids + 8].try_into().expect("4 bytes"));
        buf.push(&state, &action, reward, &next, boundary, terminal, episode, step)
            .map_err(|e| Error::integrity(base as u64, e.to_string()))?;
    }
    Ok(Dataset { header, transitions: buf })
}

pub(super) fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = to_bytes(ds)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub(super) fn load(path: &Path) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Transition;

    fn sample() -> Dataset {
        let mut buf = ReplayBuffer::unbounded(2, 1).unwrap();
        for i in 0..25u32 {
            buf.append(&Transition {
                state: vec![i as f64 * 0.1, -0.0],
                action: vec![(i as f64).sin()],
                reward: if i % 5 == 0 { 1.0 } else { 0.0 },
                next_state: vec![i as f64 * 0.1 + 0.1, 1e-300],
                boundary: i % 10 == 9,
                terminal: false,
                episode: i / 10,
                step: i % 10,
            })
            .unwrap();
        }
        let header = DatasetHeader {
            env: "pointmass".into(),
            obs_dim: 2,
            act_dim: 1,
            episode_length: 10,
            agent: "random".into(),
            seed: 3,
            config_hash: "abc".into(),
            size: 0,
            relabel_task: None,
        };
        Dataset::new(header, buf).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample();
        let bytes = to_bytes(&ds).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        assert_eq!(&bytes[..4], b"E2O1");
    }

    #[test]
    fn truncated_file_fails_closed() {
        let bytes = to_bytes(&sample()).unwrap();
        for cut in [3, 7, 20, bytes.len() - 1, bytes.len() - 60] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity { .. }), "{cut}: {err}");
        }
    }

    #[test]
    fn size_mismatch_detected() {
        let mut ds = sample();
        let mut bytes = to_bytes(&ds).unwrap();
        // Drop one whole record: payload stays record-aligned but disagrees with the header.
        let rec = record_len(&ds.header);
        bytes.truncate(bytes.len() - rec);
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("declares 25"), "{err}");
        ds.header.size = 99;
        // to_bytes rewrites size from the payload, so the file stays consistent.
        assert!(from_bytes(&to_bytes(&ds).unwrap()).is_ok());
    }
}
