//! The `TSWC` container: several tasks, each a list of named module streams.
//!
//! Layout (integers little-endian):
//! `"TSWC"` · version u8 · task count u32, then per task:
//! id len u16 · id UTF-8 · metadata len u32 · `key=value` lines UTF-8 ·
//! module count u32, then per module: name len u16 · name · stream len u32 ·
//! stream bytes.

use std::fs;
use std::path::Path;

use crate::codec::sass::{
    choose_format, decode, encode, expected_bits, reencode, EncodedModule, Format, ModuleData,
    QuantizedModule,
};
use crate::error::{CodecError, Error, Result};
use crate::tswitch::TaskSwitch;
use crate::vector::{Module, ParamSet, TaskVector};

pub const MAGIC: &[u8; 4] = b"TSWC";
pub const VERSION: u8 = 1;

/// One decoded module.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModule {
    pub name: String,
    pub data: ModuleData,
}

/// A task's modules in decoded form, with free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTask {
    pub task_id: String,
    pub metadata: Vec<(String, String)>,
    pub modules: Vec<StoredModule>,
}

impl StoredTask {
    /// Raw `f32` storage of a parameter set (base or fine-tuned weights).
    pub fn from_params(task_id: impl Into<String>, params: &ParamSet) -> Self {
        let modules = params
            .modules()
            .iter()
            .map(|m| StoredModule {
                name: m.name.clone(),
                data: ModuleData::Raw(m.values.iter().map(|&v| v as f32).collect()),
            })
            .collect();
        Self {
            task_id: task_id.into(),
            metadata: Vec::new(),
            modules,
        }
    }

    /// 1-bit storage of a T-Switch: bins 0/1 are the signs, the knob is the
    /// scale (rounded to `f32`).
    pub fn from_switch(switch: &TaskSwitch) -> Self {
        let modules = switch
            .modules
            .iter()
            .map(|m| {
                let survivors = m
                    .mask
                    .iter()
                    .zip(&m.polarity)
                    .enumerate()
                    .filter(|(_, (&a, _))| a)
                    .map(|(j, (_, &p))| (j as u32, u32::from(p > 0)))
                    .collect();
                StoredModule {
                    name: m.name.clone(),
                    data: ModuleData::Quantized(QuantizedModule {
                        n: m.len(),
                        bits: 1,
                        range_neg: 2.0,
                        range_pos: 2.0,
                        scale: m.knob as f32,
                        survivors,
                    }),
                }
            })
            .collect();
        Self {
            task_id: switch.task_id.clone(),
            metadata: Vec::new(),
            modules,
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        ParamSet::new(
            self.modules
                .iter()
                .map(|m| Module::new(m.name.clone(), m.data.to_values()))
                .collect(),
        )
    }

    pub fn to_task_vector(&self) -> Result<TaskVector> {
        Ok(TaskVector {
            task_id: self.task_id.clone(),
            params: self.to_params()?,
        })
    }

    pub fn total_len(&self) -> usize {
        self.modules.iter().map(|m| m.data.len()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.modules.iter().map(|m| m.data.nnz()).sum()
    }

    /// Parameter-weighted sparsity `1 − Σnnz / Σn`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.total_len() as f64
    }
}

/// How modules pick their stream format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormatPolicy {
    /// Cheapest of SASS, Indep and Dense per module.
    #[default]
    Auto,
    /// Force one format for quantized modules; raw modules stay dense.
    Fixed(Format),
}

/// A task's modules as encoded streams.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTask {
    pub task_id: String,
    pub metadata: Vec<(String, String)>,
    pub modules: Vec<(String, EncodedModule)>,
}

impl EncodedTask {
    pub fn encode(task: &StoredTask, policy: FormatPolicy) -> Result<Self> {
        let modules = task
            .modules
            .iter()
            .map(|m| {
                let format = match (&m.data, policy) {
                    (ModuleData::Raw(_), _) => Format::Dense,
                    (ModuleData::Quantized(q), FormatPolicy::Auto) => choose_format(q),
                    (ModuleData::Quantized(_), FormatPolicy::Fixed(f)) => f,
                };
                Ok((m.name.clone(), encode(&m.data, format)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task_id: task.task_id.clone(),
            metadata: task.metadata.clone(),
            modules,
        })
    }

    pub fn decode(&self) -> Result<StoredTask> {
        let modules = self
            .modules
            .iter()
            .map(|(name, e)| {
                Ok(StoredModule {
                    name: name.clone(),
                    data: decode(&e.bytes)?.1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StoredTask {
            task_id: self.task_id.clone(),
            metadata: self.metadata.clone(),
            modules,
        })
    }

    pub fn formula_bits(&self) -> usize {
        self.modules.iter().map(|(_, e)| e.formula_bits()).sum()
    }

    pub fn file_bits(&self) -> usize {
        self.modules.iter().map(|(_, e)| e.file_bits()).sum()
    }

    pub fn total_len(&self) -> usize {
        self.modules.iter().map(|(_, e)| e.header.n).sum()
    }
}

/// Per-module summary printed by `inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleReport {
    pub task_id: String,
    pub module: String,
    pub format: Format,
    pub n: usize,
    pub nnz: usize,
    pub sparsity: f64,
    /// `0` for raw modules.
    pub bits: u32,
    /// `0` for non-SASS formats.
    pub group: usize,
    pub payload_bits: usize,
    pub formula_bits: usize,
    pub file_bits: usize,
    /// Size predicted by the SASS formula at the achieved sparsity; `None`
    /// for raw modules.
    pub expected_bits: Option<f64>,
}

impl ModuleReport {
    pub fn new(task_id: &str, module: &str, e: &EncodedModule) -> Result<Self> {
        let (_, data) = decode(&e.bytes)?;
        let n = e.header.n;
        let nnz = data.nnz();
        let sparsity = 1.0 - nnz as f64 / n as f64;
        let expected = match (&data, e.header.bits) {
            (_, 0) => None,
            _ => {
                let c = if e.header.group > 0 {
                    e.header.group
                } else {
                    crate::codec::sass::optimal_group(n, sparsity)
                };
                Some(expected_bits(n, c, sparsity, e.header.bits))
            }
        };
        Ok(Self {
            task_id: task_id.to_string(),
            module: module.to_string(),
            format: e.header.format,
            n,
            nnz,
            sparsity,
            bits: e.header.bits,
            group: e.header.group,
            payload_bits: e.payload_bits,
            formula_bits: e.formula_bits(),
            file_bits: e.file_bits(),
            expected_bits: expected,
        })
    }
}

/// Serializes tasks into a container.
pub fn write_container(tasks: &[EncodedTask]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&len_u32(tasks.len())?.to_le_bytes());
    for t in tasks {
        put_str16(&mut out, &t.task_id)?;
        let mut meta = String::new();
        for (k, v) in &t.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(CodecError::Container(format!(
                    "metadata entry `{k}` is not a single key=value line"
                ))
                .into());
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&len_u32(meta.len())?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&len_u32(t.modules.len())?.to_le_bytes());
        for (name, e) in &t.modules {
            put_str16(&mut out, name)?;
            out.extend_from_slice(&len_u32(e.bytes.len())?.to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
    }
    Ok(out)
}

/// Parses a container, validating every module stream.
pub fn read_container(bytes: &[u8]) -> Result<Vec<EncodedTask>> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("missing TSWC magic"));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let task_count = r.u32()?;
    let mut tasks = Vec::new();
    for _ in 0..task_count {
        let task_id = r.str16()?;
        let meta_len = r.u32()? as usize;
        let meta =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let metadata = meta
            .lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad("metadata line without `=`"))
            })
            .collect::<Result<Vec<_>>>()?;
        let module_count = r.u32()?;
        let mut modules = Vec::new();
        for _ in 0..module_count {
            let name = r.str16()?;
            let len = r.u32()? as usize;
            let stream = r.take(len)?;
            let (header, data) = decode(stream)?;
            let e = reencode(&header, &data)?;
            if e.bytes != stream {
                return Err(bad("module stream is not in canonical form"));
            }
            modules.push((name, e));
        }
        tasks.push(EncodedTask {
            task_id,
            metadata,
            modules,
        });
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last task"));
    }
    Ok(tasks)
}

pub fn save(path: impl AsRef<Path>, tasks: &[EncodedTask]) -> Result<()> {
    fs::write(path, write_container(tasks)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<EncodedTask>> {
    read_container(&fs::read(path)?)
}

/// Loads and decodes every task of a container.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<StoredTask>> {
    load(path)?.iter().map(EncodedTask::decode).collect()
}

/// Encodes and saves decoded tasks.
pub fn save_tasks(
    path: impl AsRef<Path>,
    tasks: &[StoredTask],
    policy: FormatPolicy,
) -> Result<Vec<EncodedTask>> {
    let encoded = tasks
        .iter()
        .map(|t| EncodedTask::encode(t, policy))
        .collect::<Result<Vec<_>>>()?;
    save(path, &encoded)?;
    Ok(encoded)
}

fn bad(reason: &str) -> Error {
    CodecError::Container(reason.to_string()).into()
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| bad("length exceeds u32"))
}

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| bad("identifier longer than 65535 bytes"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::from(CodecError::Truncated {
                    offset: self.bytes.len() * 8,
                })
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("identifier is not UTF-8"))
    }
}
