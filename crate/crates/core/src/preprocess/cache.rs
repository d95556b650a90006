use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::batch::{SubgraphBatch, SubgraphRecord};
use super::{preprocess_graph, PreprocessConfig};
use crate::error::{G5Error, Result};
use crate::graph::GraphDataset;
use crate::io::envelope::{self, ByteReader, ByteWriter};

pub const CACHE_MAGIC: [u8; 4] = *b"G5PP";
pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Fresh,
    Built,
}

/// Digest of everything about a graph that preprocessing depends on.
pub fn structure_fingerprint(dataset: &GraphDataset) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(dataset.id().as_bytes());
    h.update((dataset.num_nodes() as u64).to_le_bytes());
    for &(u, v) in dataset.edges() {
        h.update((u as u64).to_le_bytes());
        h.update((v as u64).to_le_bytes());
    }
    h.finalize().to_vec()
}

pub fn cache_path(dir: &Path, graph_id: &str, k: usize, cfg: &PreprocessConfig) -> PathBuf {
    dir.join(format!(
        "{graph_id}-k{k}-a{}-wl{}-hop{}.g5pp",
        cfg.alpha, cfg.wl_iterations, cfg.hop_cap
    ))
}

fn encode(batch: &SubgraphBatch, cfg: &PreprocessConfig, fingerprint: &[u8]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.str(&batch.graph_id);
    w.u64(batch.k as u64);
    w.f64(cfg.alpha);
    w.u64(cfg.wl_iterations as u64);
    w.u64(cfg.hop_cap as u64);
    w.bytes(fingerprint);
    w.u64(batch.records.len() as u64);
    for r in &batch.records {
        w.usizes(&r.nodes);
        w.f64s(&r.intimacy);
        w.usizes(&r.wl);
        w.usizes(&r.hops);
    }
    envelope::seal(CACHE_MAGIC, CACHE_VERSION, &w.into_inner())
}

struct Decoded {
    batch: SubgraphBatch,
    alpha: f64,
    wl_iterations: usize,
    hop_cap: usize,
    fingerprint: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let payload = envelope::open(CACHE_MAGIC, CACHE_VERSION, bytes)?;
    let mut r = ByteReader::new(payload);
    let graph_id = r.str()?;
    let k = r.u64()? as usize;
    let alpha = r.f64()?;
    let wl_iterations = r.u64()? as usize;
    let hop_cap = r.u64()? as usize;
    let fingerprint = r.bytes()?.to_vec();
    let n = r.u64()? as usize;
    let mut records = Vec::with_capacity(n.min(payload.len()));
    for _ in 0..n {
        let rec = SubgraphRecord {
            nodes: r.usizes()?,
            intimacy: r.f64s()?,
            wl: r.usizes()?,
            hops: r.usizes()?,
        };
        let len = rec.nodes.len();
        if len == 0 || rec.intimacy.len() + 1 != len || rec.wl.len() != len || rec.hops.len() != len {
            return Err(G5Error::Integrity("inconsistent subgraph record".into()));
        }
        records.push(rec);
    }
    if !r.is_done() {
        return Err(G5Error::Integrity("trailing bytes after cache payload".into()));
    }
    Ok(Decoded {
        batch: SubgraphBatch { graph_id, k, records },
        alpha,
        wl_iterations,
        hop_cap,
        fingerprint,
    })
}

pub fn save_batch(batch: &SubgraphBatch, dataset: &GraphDataset, cfg: &PreprocessConfig, path: &Path) -> Result<()> {
    envelope::write_atomic(path, &encode(batch, cfg, &structure_fingerprint(dataset)))
}

pub fn load_batch(path: &Path) -> Result<SubgraphBatch> {
    let bytes = std::fs::read(path).map_err(|e| G5Error::io(path, e))?;
    Ok(decode(&bytes)?.batch)
}

/// Return the cached batch for `(graph, k, alpha, WL iterations, hop cap)` if
/// it exists and matches the graph, otherwise build and store it.
pub fn load_or_build(
    dataset: &GraphDataset,
    k: usize,
    cfg: &PreprocessConfig,
    dir: &Path,
) -> Result<(SubgraphBatch, CacheStatus)> {
    let path = cache_path(dir, dataset.id(), k, cfg);
    if let Ok(bytes) = std::fs::read(&path) {
        match decode(&bytes) {
            Ok(d) if d.batch.k == k
                && d.batch.graph_id == dataset.id()
                && d.alpha == cfg.alpha
                && d.wl_iterations == cfg.wl_iterations
                && d.hop_cap == cfg.hop_cap
                && d.fingerprint == structure_fingerprint(dataset)
                && d.batch.records.len() == dataset.num_nodes() =>
            {
                return Ok((d.batch, CacheStatus::Fresh));
            }
            Ok(_) => log::info!("{}: stale cache, rebuilding", path.display()),
            Err(e) => log::warn!("{}: unreadable cache ({e}), rebuilding", path.display()),
        }
    }
    let batch = preprocess_graph(dataset, k, cfg)?;
    save_batch(&batch, dataset, cfg, &path)?;
    Ok((batch, CacheStatus::Built))
}
