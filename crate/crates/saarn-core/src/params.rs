//! Named parameter storage, deterministic initialization, and the
//! self-describing checkpoint container.
//!
//! Every parameter's initial value is drawn from an RNG stream keyed by
//! `(seed, parameter name)`, so a parameter's initialization does not
//! depend on registration order or on which other parameters exist. Two
//! model configurations sharing a submodule therefore share that
//! submodule's initial weights under the same seed.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Stable 64-bit mix of a seed and a name (FNV-1a plus an avalanche
/// finalizer); used everywhere a named RNG stream is derived.
pub fn mix_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    /// Uniform with bound `sqrt(1 / fan_in)`, `fan_in` = first dimension.
    UniformFanIn,
}

pub struct ParamEntry {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered, name-indexed collection of trainable arrays.
pub struct ParamStore {
    seed: u64,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a parameter and draws its initial value from the stream
    /// keyed by `(seed, name)`.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) {
        assert!(
            !self.index.contains_key(name),
            "parameter {name:?} registered twice"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, name));
        let value = match init {
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Uniform(bound) => {
                ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound))
            }
            Init::UniformFanIn => {
                let fan_in = shape[0].max(1);
                let bound = (1.0 / fan_in as f64).sqrt();
                ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound))
            }
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
        });
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self.entries[self.index[name]].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        let i = self.index[name];
        &mut self.entries[i].value
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        let i = self.index[name];
        assert_eq!(self.entries[i].value.shape(), value.shape());
        self.entries[i].value = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Vec<ParamEntry> {
        &mut self.entries
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Binds the parameter as a named graph leaf.
    pub fn bind(&self, graph: &mut Graph, name: &str) -> NodeId {
        graph.named_input(name, self.get(name).clone())
    }
}

/// A named linear map (weight plus optional bias).
#[derive(Clone, Debug)]
pub struct Linear {
    pub w_name: String,
    pub b_name: Option<String>,
}

impl Linear {
    /// Registers `prefix.w` / `prefix.b` with the given init for the
    /// weight; the bias always starts at zero.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let w_name = format!("{prefix}.w");
        store.register(&w_name, &[in_dim, out_dim], init);
        let b_name = bias.then(|| {
            let b = format!("{prefix}.b");
            store.register(&b, &[out_dim], Init::Zeros);
            b
        });
        Self { w_name, b_name }
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> BoundLinear {
        BoundLinear {
            w: store.bind(graph, &self.w_name),
            b: self.b_name.as_ref().map(|b| store.bind(graph, b)),
        }
    }
}

/// Graph-bound linear map.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: NodeId,
    pub b: Option<NodeId>,
}

impl BoundLinear {
    pub fn apply(&self, graph: &mut Graph, x: NodeId) -> NodeId {
        let y = graph.linear_last(x, self.w);
        match self.b {
            Some(b) => graph.add_bias_last(y, b),
            None => y,
        }
    }
}

/// Collects gradients of all bound parameters by name.
pub fn collect_param_grads(
    graph: &Graph,
    grads: &crate::autodiff::Gradients,
) -> HashMap<String, ArrayD<f64>> {
    let mut out = HashMap::new();
    for (name, id) in graph.bound_params() {
        if let Some(g) = grads.wrt(*id) {
            out.insert(name.clone(), g.clone());
        }
    }
    out
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SAARNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes a self-describing checkpoint: magic, format version, a JSON
/// metadata blob, then named f64 arrays with explicit shapes.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta)?;
    out.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&meta_bytes)?;
    out.write_all(&(store.entries.len() as u64).to_le_bytes())?;
    for entry in &store.entries {
        let name = entry.name.as_bytes();
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(entry.value.ndim() as u32).to_le_bytes())?;
        for &d in entry.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in entry.value.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

/// Loads a checkpoint, rejecting unknown magic or format versions.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let mut r = BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?,
    );
    let magic: [u8; 8] = read_exact(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_len = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated metadata: {e}")))?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;

    let n_entries = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut store = ParamStore::new(0);
    for _ in 0..n_entries {
        let name_len = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f64; len];
        for slot in data.iter_mut() {
            *slot = f64::from_le_bytes(read_exact(&mut r)?);
        }
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("bad shape for {name}: {e}")))?;
        store.index.insert(name.clone(), store.entries.len());
        store.entries.push(ParamEntry { name, value });
    }
    Ok((store, meta))
}
