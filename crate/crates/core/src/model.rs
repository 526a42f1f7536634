//! On-disk model format.
//!
//! A model is a directory holding `manifest.json` and `tensors.bin`. The
//! manifest lists every tensor with its dtype, shape, byte offset and byte
//! length inside `tensors.bin`. `f32` tensors are raw little-endian binary32,
//! row-major. `bitplanes` tensors are their planes in level order, each as a
//! little-endian u64 bit count followed by the u64 words. Quantized models
//! also carry their [`ScalingConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lstm::{ClassifierHead, FeatureSource, Gate, GateParams, LstmParams};
use crate::qlstm::{QuantizedGate, QuantizedLstmParams, ScalingConfig};
use crate::quant::MultiLevelTensor;
use crate::tensor::{BitPlane, DenseTensor};

pub const MODEL_VERSION: u32 = 1;
pub const FORMAT_FP: &str = "mlbin-lstm";
pub const FORMAT_QUANTIZED: &str = "mlbin-qlstm";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    Bitplanes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_exp: Option<i32>,
}

impl TensorEntry {
    fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub n_input: usize,
    pub n_hidden: usize,
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<FeatureSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    pub tensors: Vec<TensorEntry>,
    /// Fields this version does not know about.
    #[serde(flatten, skip_serializing)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ModelManifest {
    pub fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Manifest(format!("tensor `{name}` is not declared")))
    }

    fn check_layout(&self, blob_len: u64) -> Result<()> {
        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let end = t.offset.checked_add(t.length).ok_or_else(|| {
                Error::Manifest(format!("tensor `{}` offset overflows", t.name))
            })?;
            if end > blob_len {
                return Err(Error::Truncated {
                    name: t.name.clone(),
                    needed: end,
                    available: blob_len,
                });
            }
            spans.push((t.offset, end, &t.name));
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            ensure!(w[0].1 <= w[1].0, Manifest, "tensors `{}` and `{}` overlap", w[0].2, w[1].2);
        }
        let mut names: Vec<&str> = self.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        ensure!(names.windows(2).all(|w| w[0] != w[1]), Manifest, "duplicate tensor name");
        Ok(())
    }
}

/// Full-precision model with an optional readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: LstmParams,
    pub head: Option<ClassifierHead>,
}

/// Quantized model with an optional full-precision readout.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub params: QuantizedLstmParams,
    pub head: Option<ClassifierHead>,
}

/// Either kind, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    FullPrecision(Model),
    Quantized(QuantizedModel),
}

fn gate_tensor_name(kind: &str, g: Gate) -> String {
    format!("{kind}.{}", g.name())
}

struct Writer {
    blob: Vec<u8>,
    entries: Vec<TensorEntry>,
}

impl Writer {
    fn new() -> Self {
        Self { blob: Vec::new(), entries: Vec::new() }
    }

    fn f32(&mut self, name: String, t: &DenseTensor) {
        let offset = self.blob.len() as u64;
        for v in t.data() {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name,
            dtype: Dtype::F32,
            shape: t.shape().to_vec(),
            offset,
            length: self.blob.len() as u64 - offset,
            levels: None,
            alpha_exp: None,
        });
    }

    fn planes(&mut self, name: String, t: &MultiLevelTensor) {
        let offset = self.blob.len() as u64;
        for p in t.planes() {
            p.write_to(&mut self.blob).expect("writing to a Vec cannot fail");
        }
        self.entries.push(TensorEntry {
            name,
            dtype: Dtype::Bitplanes,
            shape: t.shape().to_vec(),
            offset,
            length: self.blob.len() as u64 - offset,
            levels: Some(t.levels()),
            alpha_exp: Some(t.alpha_exp()),
        });
    }

    fn head(&mut self, head: &Option<ClassifierHead>) {
        if let Some(h) = head {
            self.f32("head.weights".into(), &h.weights);
            self.f32("head.bias".into(), &h.bias);
        }
    }

    fn finish(self, path: &Path, manifest: ModelManifest) -> Result<()> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let bin = path.join(TENSOR_FILE);
        fs::write(&bin, &self.blob).map_err(|e| Error::io(&bin, e))?;
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let man = path.join(MANIFEST_FILE);
        fs::write(&man, json + "\n").map_err(|e| Error::io(&man, e))
    }
}

fn manifest_for(
    format: &str,
    n_input: usize,
    n_hidden: usize,
    head: &Option<ClassifierHead>,
    scaling: Option<ScalingConfig>,
    tensors: Vec<TensorEntry>,
) -> ModelManifest {
    ModelManifest {
        format: format.into(),
        version: MODEL_VERSION,
        n_input,
        n_hidden,
        n_classes: head.as_ref().map_or(0, |h| h.n_classes()),
        feature: head.as_ref().map(|h| h.feature),
        scaling,
        tensors,
        extra: BTreeMap::new(),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let p = &model.params;
    let mut w = Writer::new();
    for g in Gate::ALL {
        let gp = p.gate(g);
        w.f32(gate_tensor_name("w_fwd", g), &gp.w_fwd);
        w.f32(gate_tensor_name("w_rec", g), &gp.w_rec);
        w.f32(gate_tensor_name("bias", g), &gp.bias);
    }
    w.head(&model.head);
    let entries = std::mem::take(&mut w.entries);
    let manifest = manifest_for(FORMAT_FP, p.n_input(), p.n_hidden(), &model.head, None, entries);
    w.finish(path.as_ref(), manifest)
}

pub fn save_qmodel(path: impl AsRef<Path>, model: &QuantizedModel) -> Result<()> {
    let q = &model.params;
    let mut w = Writer::new();
    for g in Gate::ALL {
        let qg = q.gate(g);
        w.planes(gate_tensor_name("w_fwd", g), &qg.w_fwd);
        w.planes(gate_tensor_name("w_rec", g), &qg.w_rec);
        w.planes(gate_tensor_name("bias", g), &qg.bias);
    }
    w.head(&model.head);
    let entries = std::mem::take(&mut w.entries);
    let (nx, nh) = (crate::lstm::Cell::n_input(q), crate::lstm::Cell::n_hidden(q));
    let manifest = manifest_for(FORMAT_QUANTIZED, nx, nh, &model.head, Some(*q.config()), entries);
    w.finish(path.as_ref(), manifest)
}

/// Reads and validates the manifest and the tensor blob.
pub fn read_raw(path: impl AsRef<Path>) -> Result<(ModelManifest, Vec<u8>)> {
    let path = path.as_ref();
    let man = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(v) => return Err(Error::Version { found: v as u32, expected: MODEL_VERSION }),
        None => return Err(Error::Manifest("missing `version`".into())),
    }
    let manifest: ModelManifest =
        serde_json::from_value(value).map_err(|e| Error::Manifest(e.to_string()))?;
    for key in manifest.extra.keys() {
        log::warn!("{}: ignoring unknown manifest field `{key}`", man.display());
    }
    let bin = path.join(TENSOR_FILE);
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    manifest.check_layout(blob.len() as u64)?;
    Ok((manifest, blob))
}

fn read_f32(m: &ModelManifest, blob: &[u8], name: &str, shape: &[usize]) -> Result<DenseTensor> {
    let e = m.entry(name)?;
    ensure!(e.dtype == Dtype::F32, Manifest, "tensor `{name}` must be f32");
    ensure!(e.shape == shape, Manifest, "tensor `{name}` has shape {:?}, expected {shape:?}", e.shape);
    let expected = 4 * e.elements() as u64;
    if e.length != expected {
        return Err(Error::SizeMismatch { name: name.into(), declared: e.length, expected });
    }
    let bytes = &blob[e.offset as usize..(e.offset + e.length) as usize];
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    DenseTensor::new(e.shape.clone(), data)
}

fn read_planes(m: &ModelManifest, blob: &[u8], name: &str, shape: &[usize]) -> Result<MultiLevelTensor> {
    let e = m.entry(name)?;
    ensure!(e.dtype == Dtype::Bitplanes, Manifest, "tensor `{name}` must be bitplanes");
    ensure!(e.shape == shape, Manifest, "tensor `{name}` has shape {:?}, expected {shape:?}", e.shape);
    let levels = e.levels.ok_or_else(|| Error::Manifest(format!("tensor `{name}` lacks `levels`")))?;
    let alpha_exp = e.alpha_exp.ok_or_else(|| Error::Manifest(format!("tensor `{name}` lacks `alpha_exp`")))?;
    let mut rest = &blob[e.offset as usize..(e.offset + e.length) as usize];
    let mut planes = Vec::new();
    while !rest.is_empty() {
        let plane = BitPlane::read_from(&mut rest).map_err(|err| match err {
            Error::Truncated { .. } => Error::SizeMismatch {
                name: name.into(),
                declared: e.length,
                expected: levels as u64 * (8 + 8 * e.elements().div_ceil(64) as u64),
            },
            other => other,
        })?;
        if plane.len() != e.elements() {
            return Err(Error::Structure(format!(
                "tensor `{name}`: plane of {} bits, shape {shape:?} needs {}",
                plane.len(),
                e.elements()
            )));
        }
        planes.push(plane);
    }
    if planes.len() != levels as usize {
        return Err(Error::Structure(format!(
            "tensor `{name}` declares {levels} levels but holds {} planes",
            planes.len()
        )));
    }
    MultiLevelTensor::from_parts(e.shape.clone(), alpha_exp, planes)
}

fn read_head(m: &ModelManifest, blob: &[u8]) -> Result<Option<ClassifierHead>> {
    if m.n_classes == 0 {
        return Ok(None);
    }
    let w = read_f32(m, blob, "head.weights", &[m.n_classes, m.n_hidden])?;
    let b = read_f32(m, blob, "head.bias", &[m.n_classes])?;
    Ok(Some(ClassifierHead::new(w, b, m.feature.unwrap_or_default())?))
}

fn parse_fp(m: &ModelManifest, blob: &[u8]) -> Result<Model> {
    let (nx, nh) = (m.n_input, m.n_hidden);
    let mut gates = Vec::with_capacity(4);
    for g in Gate::ALL {
        gates.push(GateParams {
            w_fwd: read_f32(m, blob, &gate_tensor_name("w_fwd", g), &[nh, nx])?,
            w_rec: read_f32(m, blob, &gate_tensor_name("w_rec", g), &[nh, nh])?,
            bias: read_f32(m, blob, &gate_tensor_name("bias", g), &[nh])?,
        });
    }
    let gates: [GateParams; 4] = gates.try_into().expect("four gates");
    Ok(Model { params: LstmParams::new(nx, nh, gates)?, head: read_head(m, blob)? })
}

fn parse_quantized(m: &ModelManifest, blob: &[u8]) -> Result<QuantizedModel> {
    let (nx, nh) = (m.n_input, m.n_hidden);
    let scaling = m
        .scaling
        .ok_or_else(|| Error::Manifest("quantized model lacks `scaling`".into()))?;
    let mut gates = Vec::with_capacity(4);
    for g in Gate::ALL {
        gates.push(QuantizedGate {
            w_fwd: read_planes(m, blob, &gate_tensor_name("w_fwd", g), &[nh, nx])?,
            w_rec: read_planes(m, blob, &gate_tensor_name("w_rec", g), &[nh, nh])?,
            bias: read_planes(m, blob, &gate_tensor_name("bias", g), &[nh])?,
        });
    }
    let gates: [QuantizedGate; 4] = gates.try_into().expect("four gates");
    Ok(QuantizedModel {
        params: QuantizedLstmParams::from_parts(nx, nh, scaling, gates)?,
        head: read_head(m, blob)?,
    })
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyModel> {
    let (m, blob) = read_raw(path)?;
    match m.format.as_str() {
        FORMAT_FP => Ok(AnyModel::FullPrecision(parse_fp(&m, &blob)?)),
        FORMAT_QUANTIZED => Ok(AnyModel::Quantized(parse_quantized(&m, &blob)?)),
        other => Err(Error::Manifest(format!("unknown model format `{other}`"))),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    match load_any(path)? {
        AnyModel::FullPrecision(m) => Ok(m),
        AnyModel::Quantized(_) => Err(Error::Manifest("expected a full-precision model".into())),
    }
}

pub fn load_qmodel(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    match load_any(path)? {
        AnyModel::Quantized(m) => Ok(m),
        AnyModel::FullPrecision(_) => Err(Error::Manifest("expected a quantized model".into())),
    }
}
