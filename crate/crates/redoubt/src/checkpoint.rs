//! Bit-exact checkpoint files.
//!
//! Layout: 8 magic bytes `REDOUBT1`, a u64 little-endian header length, a
//! JSON header (parameter name/shape table, phase tag, frozen prefixes,
//! RNG state, named optimizer states), then the raw little-endian f64
//! payloads in header order: all parameters, then m and v for each listed
//! optimizer moment. Nothing is quantized or compressed, so
//! load(save(s)) == s down to the last bit.

use crate::error::{Error, Result};
use crate::nn::{AdamParams, AdamState, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"REDOUBT1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    dims: Vec<usize>,
    requires_grad: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamEntry {
    hp: AdamParams,
    t: u64,
    moments: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    phase: String,
    epoch: u32,
    params: Vec<ParamEntry>,
    frozen: Vec<String>,
    rng: RngState,
    optimizers: Vec<(String, AdamEntry)>,
}

/// Everything a phase needs to resume.
pub struct Checkpoint {
    pub phase: String,
    pub epoch: u32,
    pub store: ParamStore,
    pub rng: RngState,
    pub optimizers: Vec<(String, AdamState)>,
}

pub fn save(
    path: &Path,
    phase: &str,
    epoch: u32,
    store: &ParamStore,
    rng: &RngState,
    optimizers: &[(&str, &AdamState)],
) -> Result<()> {
    for (name, v) in store.iter() {
        if !v.value.all_finite() {
            return Err(Error::Checkpoint(format!("non-finite values in {name}")));
        }
    }
    let header = Header {
        phase: phase.to_string(),
        epoch,
        params: store
            .iter()
            .map(|(n, v)| ParamEntry {
                name: n.clone(),
                dims: v.value.dims().to_vec(),
                requires_grad: v.requires_grad,
            })
            .collect(),
        frozen: store.frozen_prefixes().to_vec(),
        rng: rng.clone(),
        optimizers: optimizers
            .iter()
            .map(|(name, st)| {
                (
                    name.to_string(),
                    AdamEntry {
                        hp: st.hp,
                        t: st.t,
                        moments: st
                            .moments
                            .iter()
                            .map(|(n, (m, _))| ParamEntry {
                                name: n.clone(),
                                dims: m.dims().to_vec(),
                                requires_grad: true,
                            })
                            .collect(),
                    },
                )
            })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(hjson.len() as u64).to_le_bytes())?;
        w.write_all(&hjson)?;
        for (_, v) in store.iter() {
            write_tensor(&mut w, &v.value)?;
        }
        for (_, st) in optimizers {
            for (_, (m, v)) in st.moments.iter() {
                write_tensor(&mut w, m)?;
                write_tensor(&mut w, v)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_tensor(r: &mut impl Read, dims: &[usize], what: &str) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated payload at {what}: {e}")))?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_vec(dims, data).map_err(|e| Error::Checkpoint(format!("{what}: {e}")))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("short file: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:02x?}")));
    }
    let mut lenb = [0u8; 8];
    r.read_exact(&mut lenb)
        .map_err(|e| Error::Checkpoint(format!("short header length: {e}")))?;
    let hlen = u64::from_le_bytes(lenb) as usize;
    if hlen > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible header length {hlen}")));
    }
    let mut hjson = vec![0u8; hlen];
    r.read_exact(&mut hjson)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&hjson)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    let mut store = ParamStore::new();
    for p in &header.params {
        let t = read_tensor(&mut r, &p.dims, &p.name)?;
        store.insert(&p.name, t);
        store.get_mut(&p.name)?.requires_grad = p.requires_grad;
    }
    store.set_frozen_prefixes(header.frozen);

    let mut optimizers = Vec::new();
    for (name, entry) in header.optimizers {
        let mut st = AdamState::new(entry.hp);
        st.t = entry.t;
        let mut moments = IndexMap::new();
        for p in &entry.moments {
            let m = read_tensor(&mut r, &p.dims, &format!("{name}.m.{}", p.name))?;
            let v = read_tensor(&mut r, &p.dims, &format!("{name}.v.{}", p.name))?;
            moments.insert(p.name.clone(), (m, v));
        }
        st.moments = moments;
        optimizers.push((name, st));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        phase: header.phase,
        epoch: header.epoch,
        store,
        rng: header.rng,
        optimizers,
    })
}

/// Checks a loaded store carries exactly the parameters (names and shapes)
/// of a reference architecture.
pub fn check_same_architecture(loaded: &ParamStore, reference: &ParamStore) -> Result<()> {
    let fmt = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
        s.iter().map(|(n, v)| (n.clone(), v.value.dims().to_vec())).collect()
    };
    let (a, b) = (fmt(loaded), fmt(reference));
    if a != b {
        let da: Vec<_> = a.iter().filter(|x| !b.contains(x)).collect();
        let db: Vec<_> = b.iter().filter(|x| !a.contains(x)).collect();
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint-only {da:?}, expected-only {db:?}"
        )));
    }
    Ok(())
}

/// Convenience lookup used by stages that only need a weight snapshot.
pub fn load_params(path: &Path) -> Result<ParamStore> {
    Ok(load(path)?.store)
}

pub fn params_equal_bitwise(a: &ParamStore, b: &ParamStore) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b.iter()).all(|((na, va), (nb, vb))| {
        na == nb
            && va.value.dims() == vb.value.dims()
            && va
                .value
                .data()
                .iter()
                .zip(vb.value.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    })
}
