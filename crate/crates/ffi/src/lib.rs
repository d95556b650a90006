//! C ABI over the g5 toolkit.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`G5Status`]; on failure, [`g5_last_error_message`] describes the error
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use g5::apocalypse::cdr_route;
use g5::graph::{load_citation_graph, GraphDataset};
use g5::io::{load_checkpoint, Checkpoint};
use g5::preprocess::{preprocess_graph, PreprocessConfig, SubgraphBatch};
use g5::G5Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum G5Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Contract = 5,
    Config = 6,
    Parse = 7,
    Io = 8,
    Integrity = 9,
    Version = 10,
    LabelAccess = 11,
    PipelineOrder = 12,
    Panic = 13,
    Other = 14,
}

impl From<&G5Error> for G5Status {
    fn from(e: &G5Error) -> Self {
        match e {
            G5Error::Shape(_) => G5Status::Shape,
            G5Error::Numeric(_) => G5Status::Numeric,
            G5Error::Contract(_) => G5Status::Contract,
            G5Error::Config(_) => G5Status::Config,
            G5Error::Parse { .. } => G5Status::Parse,
            G5Error::Io { .. } => G5Status::Io,
            G5Error::Integrity(_) => G5Status::Integrity,
            G5Error::Version { .. } => G5Status::Version,
            G5Error::LabelAccess(_) => G5Status::LabelAccess,
            G5Error::PipelineOrder(_) => G5Status::PipelineOrder,
            G5Error::EmptyDataset(_) | G5Error::Schema(_) => G5Status::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: G5Status, msg: impl Into<String>) -> G5Status {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), G5Status>) -> G5Status {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => G5Status::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(G5Status::Panic, "internal panic"),
    }
}

fn lift<T>(r: g5::Result<T>) -> Result<T, G5Status> {
    r.map_err(|e| fail(G5Status::from(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, G5Status> {
    Ok(PathBuf::from(str_arg(p, name)?))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, G5Status> {
    if p.is_null() {
        return Err(fail(G5Status::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(G5Status::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, G5Status> {
    p.as_mut()
        .ok_or_else(|| fail(G5Status::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, G5Status> {
    p.as_ref()
        .ok_or_else(|| fail(G5Status::NullPointer, format!("{name} is null")))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn g5_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// A loaded graph, optionally with its preprocessed subgraphs.
pub struct G5Dataset {
    dataset: GraphDataset,
    batch: Option<SubgraphBatch>,
}

/// Load a graph from `<content>` and `<cites>` files into `*out`.
///
/// # Safety
/// All pointers must be valid; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn g5_dataset_load(
    content_path: *const c_char,
    cites_path: *const c_char,
    graph_id: *const c_char,
    out: *mut *mut G5Dataset,
) -> G5Status {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let content = path_arg(content_path, "content_path")?;
        let cites = path_arg(cites_path, "cites_path")?;
        let id = str_arg(graph_id, "graph_id")?;
        let dataset = lift(load_citation_graph(content, cites, id))?;
        *out = Box::into_raw(Box::new(G5Dataset { dataset, batch: None }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`g5_dataset_load`] and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn g5_dataset_free(ds: *mut G5Dataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Node, edge, feature and class counts. Any output pointer may be null.
///
/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn g5_dataset_counts(
    ds: *const G5Dataset,
    nodes: *mut usize,
    edges: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> G5Status {
    guard(|| {
        let d = &handle(ds, "ds")?.dataset;
        for (p, v) in [
            (nodes, d.num_nodes()),
            (edges, d.num_edges()),
            (features, d.feature_dim()),
            (classes, d.num_classes()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Compute intimacy contexts of size `k`, WL codes and hop distances with
/// default settings.
///
/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn g5_dataset_preprocess(ds: *mut G5Dataset, k: usize) -> G5Status {
    guard(|| {
        let h = ds
            .as_mut()
            .ok_or_else(|| fail(G5Status::NullPointer, "ds is null"))?;
        h.batch = Some(lift(preprocess_graph(&h.dataset, k, &PreprocessConfig::default()))?);
        Ok(())
    })
}

/// Copy the context of `node` (most intimate first, target excluded) into
/// `ids`, writing at most `capacity` entries; `*written` receives the full
/// context length.
///
/// # Safety
/// `ds` must be a live handle; `ids` must hold `capacity` entries (may be
/// null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn g5_dataset_context(
    ds: *const G5Dataset,
    node: usize,
    ids: *mut usize,
    capacity: usize,
    written: *mut usize,
) -> G5Status {
    guard(|| {
        let h = handle(ds, "ds")?;
        let written = out_arg(written, "written")?;
        let batch = h
            .batch
            .as_ref()
            .ok_or_else(|| fail(G5Status::PipelineOrder, "call g5_dataset_preprocess first"))?;
        if node >= batch.len() {
            return Err(fail(G5Status::InvalidArgument, format!("node {node} out of range")));
        }
        let ctx = &batch.record(node).nodes[1..];
        *written = ctx.len();
        if capacity > 0 {
            if ids.is_null() {
                return Err(fail(G5Status::NullPointer, "ids is null"));
            }
            let n = ctx.len().min(capacity);
            ptr::copy_nonoverlapping(ctx.as_ptr(), ids, n);
        }
        Ok(())
    })
}

/// A checkpoint opened read-only.
pub struct G5Checkpoint {
    checkpoint: Checkpoint,
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn g5_checkpoint_load(path: *const c_char, out: *mut *mut G5Checkpoint) -> G5Status {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let checkpoint = lift(load_checkpoint(&path))?;
        *out = Box::into_raw(Box::new(G5Checkpoint { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `ck` must come from [`g5_checkpoint_load`]; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn g5_checkpoint_free(ck: *mut G5Checkpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Scalar parameter count, portal size and number of registered graphs.
/// Any output pointer may be null.
///
/// # Safety
/// `ck` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn g5_checkpoint_info(
    ck: *const G5Checkpoint,
    params: *mut usize,
    universal_k: *mut usize,
    graphs: *mut usize,
) -> G5Status {
    guard(|| {
        let c = &handle(ck, "ck")?.checkpoint;
        let count = c.tensors.values().map(|t| t.len()).sum();
        for (p, v) in [
            (params, count),
            (universal_k, c.meta.universal_k),
            (graphs, c.meta.graphs.len()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Route `sources` vectors of length `dim` (row-major in `u`) for
/// `iterations` rounds. Writes the output vector to `v` (length `dim`) and,
/// when `couplings` is non-null, the final couplings (length `sources`).
///
/// # Safety
/// `u` must hold `sources * dim` values, `v` `dim` values and `couplings`
/// (if given) `sources` values.
#[no_mangle]
pub unsafe extern "C" fn g5_cdr_route(
    u: *const f64,
    sources: usize,
    dim: usize,
    iterations: usize,
    v: *mut f64,
    couplings: *mut f64,
) -> G5Status {
    guard(|| {
        if u.is_null() || v.is_null() {
            return Err(fail(G5Status::NullPointer, "u and v must not be null"));
        }
        let flat = std::slice::from_raw_parts(u, sources * dim);
        let rows: Vec<&[f64]> = if dim == 0 {
            vec![&[][..]; sources]
        } else {
            flat.chunks(dim).collect()
        };
        let r = lift(cdr_route(&rows, iterations))?;
        ptr::copy_nonoverlapping(r.v.as_ptr(), v, dim);
        if !couplings.is_null() {
            let c = r.final_couplings();
            ptr::copy_nonoverlapping(c.as_ptr(), couplings, c.len());
        }
        Ok(())
    })
}
