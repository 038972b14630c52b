//! Checkpoint directories: backbone weights and the attention query in a
//! small named-tensor container, the tokenizer vocabulary, the materialized
//! verbalizer (machine- and human-readable), optimizer state, and a config
//! record. A round-trip reproduces forward outputs bitwise.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig};
use super::optimizer::{AdamW, AdamWConfig};
use super::tokenizer::WordPieceTokenizer;
use super::{Model, MultiplnError};
use crate::verbalizer::{AggregateMode, MaterializedVerbalizer};

const MAGIC: &[u8; 8] = b"MPPTCKPT";
const VERSION: u32 = 1;

pub const MODEL_FILE: &str = "model.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const OPTIMIZER_META_FILE: &str = "optimizer.json";
pub const META_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const VERBALIZER_FILE: &str = "verbalizer.json";
pub const VERBALIZER_DUMP_FILE: &str = "verbalizer.txt";

/// Everything needed to rebuild the model shell and audit the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Backbone identity (a published model name at full scale, or the
    /// compact seeded configuration used here).
    pub backbone_id: String,
    pub backbone: BackboneConfig,
    pub gamma: usize,
    pub seed: u64,
    pub query_seed: u64,
    pub ablation: String,
    pub aggregate_mode: AggregateMode,
    pub freeze_units: bool,
    pub lowercase: bool,
    pub max_prompt_len: usize,
    /// Training steps taken when the checkpoint was written.
    pub step: u64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> MultiplnError + '_ {
    move |source| MultiplnError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> MultiplnError {
    MultiplnError::CheckpointFormat { path: path.display().to_string(), reason: reason.into() }
}

/// Writes named f32 tensors; atomic via a temp file in the same directory.
pub fn write_tensors(path: &Path, entries: &[(String, &[f32])]) -> Result<(), MultiplnError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        w.write_all(MAGIC).map_err(io_err(path))?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err(path))?;
        for (name, data) in entries {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes()).map_err(io_err(path))?;
            w.write_all(name_bytes).map_err(io_err(path))?;
            w.write_all(&(data.len() as u64).to_le_bytes()).map_err(io_err(path))?;
            let mut buf = Vec::with_capacity(4 * 16_384.min(data.len()));
            for chunk in data.chunks(16_384) {
                buf.clear();
                for v in chunk {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf).map_err(io_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path)
        .map_err(|e| MultiplnError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

/// Reads a named-tensor file written by [`write_tensors`].
pub fn read_tensors(path: &Path) -> Result<Vec<(String, Vec<f32>)>, MultiplnError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io_err(path))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        if name_len > 4096 {
            return Err(format_err(path, "tensor name too long"));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err(path))?;
        let name =
            String::from_utf8(name_bytes).map_err(|_| format_err(path, "tensor name not UTF-8"))?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(io_err(path))?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let mut bytes = vec![0u8; 4 * len];
        r.read_exact(&mut bytes)
            .map_err(|_| format_err(path, format!("tensor `{name}` truncated")))?;
        let data =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push((name, data));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(format_err(path, "trailing bytes after last tensor"));
    }
    Ok(entries)
}

/// Saves model, tokenizer, meta, and (optionally) optimizer state to `dir`.
pub fn save(
    dir: &Path,
    model: &Model<f32>,
    tokenizer: &WordPieceTokenizer,
    meta: &CheckpointMeta,
    optimizer: Option<&AdamW<f32>>,
) -> Result<(), MultiplnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let meta_path = dir.join(META_FILE);
    let meta_json =
        serde_json::to_string_pretty(meta).map_err(|e| format_err(&meta_path, e.to_string()))?;
    fs::write(&meta_path, meta_json).map_err(io_err(&meta_path))?;

    let mut entries: Vec<(String, &[f32])> =
        model.backbone.slots().into_iter().map(|(name, _, data)| (name, data)).collect();
    entries.push((String::from("query"), model.query.as_slice().expect("contiguous")));
    write_tensors(&dir.join(MODEL_FILE), &entries)?;

    tokenizer.write_vocab_file(&dir.join(VOCAB_FILE))?;

    let verb_path = dir.join(VERBALIZER_FILE);
    let verb_json = serde_json::to_string_pretty(&model.verbalizer_units)
        .map_err(|e| format_err(&verb_path, e.to_string()))?;
    fs::write(&verb_path, verb_json).map_err(io_err(&verb_path))?;
    let dump_path = dir.join(VERBALIZER_DUMP_FILE);
    fs::write(&dump_path, model.verbalizer_units.render_dump()).map_err(io_err(&dump_path))?;

    if let Some(opt) = optimizer {
        let opt_meta_path = dir.join(OPTIMIZER_META_FILE);
        let opt_meta = serde_json::json!({ "config": opt.config, "step": opt.step });
        fs::write(&opt_meta_path, opt_meta.to_string()).map_err(io_err(&opt_meta_path))?;
        let mut moment_entries: Vec<(String, &[f32])> = Vec::new();
        for (i, m) in opt.m.iter().enumerate() {
            moment_entries.push((format!("m.{i}"), m.as_slice()));
        }
        for (i, v) in opt.v.iter().enumerate() {
            moment_entries.push((format!("v.{i}"), v.as_slice()));
        }
        write_tensors(&dir.join(OPTIMIZER_FILE), &moment_entries)?;
    }
    Ok(())
}

fn fill_backbone_from(
    entries: &[(String, Vec<f32>)],
    backbone: &mut Backbone<f32>,
    path: &Path,
) -> Result<(), MultiplnError> {
    for (name, _, slot) in backbone.slots_mut() {
        let (_, data) = entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| format_err(path, format!("missing tensor `{name}`")))?;
        if data.len() != slot.len() {
            return Err(format_err(
                path,
                format!("tensor `{name}` has {} values, expected {}", data.len(), slot.len()),
            ));
        }
        slot.copy_from_slice(data);
    }
    Ok(())
}

/// Everything [`load`] restores: model, tokenizer, metadata, and the
/// optimizer state when the checkpoint carries one.
pub type LoadedCheckpoint = (Model<f32>, WordPieceTokenizer, CheckpointMeta, Option<AdamW<f32>>);

/// Loads a checkpoint directory written by [`save`].
pub fn load(dir: &Path) -> Result<LoadedCheckpoint, MultiplnError> {
    let meta_path = dir.join(META_FILE);
    let meta_json = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&meta_json).map_err(|e| format_err(&meta_path, e.to_string()))?;
    meta.backbone.validate()?;

    let tokenizer = WordPieceTokenizer::from_vocab_file(&dir.join(VOCAB_FILE), meta.lowercase)?;

    let verb_path = dir.join(VERBALIZER_FILE);
    let verb_json = fs::read_to_string(&verb_path).map_err(io_err(&verb_path))?;
    let units: MaterializedVerbalizer =
        serde_json::from_str(&verb_json).map_err(|e| format_err(&verb_path, e.to_string()))?;

    let model_path = dir.join(MODEL_FILE);
    let entries = read_tensors(&model_path)?;
    let mut backbone = Backbone::<f32>::init(&meta.backbone, 0)?;
    fill_backbone_from(&entries, &mut backbone, &model_path)?;
    let (_, query_data) = entries
        .iter()
        .find(|(n, _)| n == "query")
        .ok_or_else(|| format_err(&model_path, "missing tensor `query`"))?;
    if query_data.len() != meta.backbone.d_model {
        return Err(format_err(&model_path, "query length does not match d_model"));
    }
    let query = Array1::from_vec(query_data.clone());
    let model = Model::from_parts(
        backbone,
        query,
        meta.query_seed,
        units,
        meta.aggregate_mode,
        meta.freeze_units,
    )?;

    let optimizer = load_optimizer(dir, &model)?;
    Ok((model, tokenizer, meta, optimizer))
}

fn load_optimizer(dir: &Path, model: &Model<f32>) -> Result<Option<AdamW<f32>>, MultiplnError> {
    let opt_meta_path: PathBuf = dir.join(OPTIMIZER_META_FILE);
    if !opt_meta_path.exists() {
        return Ok(None);
    }
    #[derive(Deserialize)]
    struct OptMeta {
        config: AdamWConfig,
        step: u64,
    }
    let raw = fs::read_to_string(&opt_meta_path).map_err(io_err(&opt_meta_path))?;
    let opt_meta: OptMeta =
        serde_json::from_str(&raw).map_err(|e| format_err(&opt_meta_path, e.to_string()))?;
    let lens = model.slot_lens();
    let mut opt = AdamW::<f32>::new(opt_meta.config, &lens);
    opt.step = opt_meta.step;
    let opt_path = dir.join(OPTIMIZER_FILE);
    let entries = read_tensors(&opt_path)?;
    for (i, len) in lens.iter().enumerate() {
        for (prefix, store) in [("m", &mut opt.m), ("v", &mut opt.v)] {
            let name = format!("{prefix}.{i}");
            let (_, data) = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| format_err(&opt_path, format!("missing tensor `{name}`")))?;
            if data.len() != *len {
                return Err(format_err(&opt_path, format!("tensor `{name}` length mismatch")));
            }
            store[i].copy_from_slice(data);
        }
    }
    Ok(Some(opt))
}
