//! `.tqm` model container, size accounting and budget checks.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `TQM1`                                  |
//! | 4      | 2    | format version (currently 1)                  |
//! | 6      | 1    | flavor: 0 = float32, 1 = int8                 |
//! | 7      | 1    | reserved, 0                                   |
//! | 8      | 4    | payload length `L`                            |
//! | 12     | L    | payload                                       |
//! | 12 + L | 4    | CRC-32 (IEEE) of the payload                  |
//!
//! The payload starts with the network config as a length-prefixed TOML
//! string. A float32 payload follows with the parameter count of layers and,
//! per conv/dense, a weight shape (4 x u32), the f32 weights, a bias count
//! and the f32 biases. An int8 payload follows with the activation edges
//! (count, then f32 scale + i32 zero point each) and one tagged record per
//! layer: 0 conv, 1 dense, 2 fire (squeeze, squeeze edge, expand 1x1,
//! expand 3x3), 3 pass-through. A conv/dense record is a weight shape, the
//! i8 weights, the channel count and per channel the f32 weight scale, i32
//! bias, i32 Q31 multiplier and i32 shift.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::netgraph::{LayerParams, ModelParams, Network, NetworkConfig};
use crate::quantizer::{QuantConv, QuantLayer, QuantizedModel, RequantParams};
use crate::tensor::{ActQuant, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"TQM1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
/// Largest model that fits the reference device's memory.
pub const DEFAULT_BUDGET_BYTES: u64 = 230 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Float32,
    Int8,
}

impl Flavor {
    fn code(self) -> u8 {
        match self {
            Flavor::Float32 => 0,
            Flavor::Int8 => 1,
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Float32 => "float32",
            Flavor::Int8 => "int8",
        })
    }
}

/// A trained float network.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatModel {
    pub config: NetworkConfig,
    pub params: ModelParams<f32>,
}

impl FloatModel {
    /// Validates the parameters against the config.
    pub fn new(config: NetworkConfig, params: ModelParams<f32>) -> Result<Self> {
        Network::new(config.clone())?.check_params(&params)?;
        Ok(FloatModel { config, params })
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.config.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Float(FloatModel),
    Int8(QuantizedModel),
}

impl Model {
    pub fn flavor(&self) -> Flavor {
        match self {
            Model::Float(_) => Flavor::Float32,
            Model::Int8(_) => Flavor::Int8,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        match self {
            Model::Float(m) => &m.config,
            Model::Int8(m) => m.config(),
        }
    }
}

/// Fixed-size fields at the start of a container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub flavor: Flavor,
    pub payload_len: u32,
    pub checksum: u32,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("container fields are below 4 GiB"));
    }
    fn shape(&mut self, s: Shape) {
        for d in [s.n, s.h, s.w, s.c] {
            self.len(d);
        }
    }
    fn edge(&mut self, q: ActQuant) {
        self.f32(q.scale);
        self.i32(q.zero_point);
    }
    fn conv(&mut self, q: &QuantConv) {
        self.shape(q.weights.shape());
        self.0.extend(q.weights.data().iter().map(|&v| v as u8));
        self.len(q.out_channels());
        for c in 0..q.out_channels() {
            self.f32(q.weight_scales[c]);
            self.i32(q.bias[c]);
            self.i32(q.requant[c].multiplier);
            self.i32(q.requant[c].shift);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("payload ends inside a field".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    /// A count that must fit in what is left of the payload.
    fn len(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("count {n} exceeds the remaining payload")));
        }
        Ok(n)
    }
    fn shape(&mut self) -> Result<Shape> {
        let mut d = [0usize; 4];
        for v in &mut d {
            *v = self.u32()? as usize;
        }
        let s = Shape::new(d[0], d[1], d[2], d[3]);
        let elems = d.iter().try_fold(1usize, |acc, &v| acc.checked_mul(v));
        match elems {
            Some(n) if n <= self.buf.len() - self.pos => Ok(s),
            _ => Err(Error::Format(format!("tensor shape {s} exceeds the remaining payload"))),
        }
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::Format("oversized array".into()))?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
    fn edge(&mut self) -> Result<ActQuant> {
        let scale = self.f32()?;
        let zero_point = self.i32()?;
        ActQuant::new(scale, zero_point).map_err(|e| Error::Format(e.to_string()))
    }
    fn conv(&mut self) -> Result<QuantConv> {
        let shape = self.shape()?;
        let weights: Vec<i8> = self.take(shape.len())?.iter().map(|&b| b as i8).collect();
        let c = self.len(16)?;
        let mut q = QuantConv {
            weights: Tensor::from_vec(shape, weights)?,
            weight_scales: Vec::with_capacity(c),
            bias: Vec::with_capacity(c),
            requant: Vec::with_capacity(c),
        };
        for _ in 0..c {
            q.weight_scales.push(self.f32()?);
            q.bias.push(self.i32()?);
            let multiplier = self.i32()?;
            let shift = self.i32()?;
            q.requant.push(RequantParams { multiplier, shift });
        }
        Ok(q)
    }
}

fn payload_start(config: &NetworkConfig) -> Writer {
    let mut w = Writer(Vec::new());
    let toml = config.to_toml();
    w.len(toml.len());
    w.0.extend_from_slice(toml.as_bytes());
    w
}

fn wrap(flavor: Flavor, payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(flavor.code());
    out.push(0);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

pub fn serialize_float(config: &NetworkConfig, params: &ModelParams<f32>) -> Vec<u8> {
    let mut w = payload_start(config);
    w.len(params.layers.len());
    for l in &params.layers {
        w.shape(l.weights.shape());
        l.weights.data().iter().for_each(|&v| w.f32(v));
        w.len(l.bias.len());
        l.bias.iter().for_each(|&v| w.f32(v));
    }
    wrap(Flavor::Float32, w.0)
}

pub fn serialize_int8(qm: &QuantizedModel) -> Vec<u8> {
    let mut w = payload_start(qm.config());
    w.len(qm.edges.len());
    qm.edges.iter().for_each(|&e| w.edge(e));
    w.len(qm.layers.len());
    for layer in &qm.layers {
        match layer {
            QuantLayer::Conv(q) => {
                w.u8(0);
                w.conv(q);
            }
            QuantLayer::Dense(q) => {
                w.u8(1);
                w.conv(q);
            }
            QuantLayer::Fire {
                squeeze,
                squeeze_q,
                expand1,
                expand3,
            } => {
                w.u8(2);
                w.conv(squeeze);
                w.edge(*squeeze_q);
                w.conv(expand1);
                w.conv(expand3);
            }
            QuantLayer::PassThrough => w.u8(3),
        }
    }
    wrap(Flavor::Int8, w.0)
}

pub fn serialize(model: &Model) -> Vec<u8> {
    match model {
        Model::Float(m) => serialize_float(&m.config, &m.params),
        Model::Int8(m) => serialize_int8(m),
    }
}

/// Parses and checks the fixed header and checksum; returns the header and
/// the payload.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(Error::Format("not a .tqm container (bad magic)".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption("truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let flavor = match bytes[6] {
        0 => Flavor::Float32,
        1 => Flavor::Int8,
        other => return Err(Error::Format(format!("unknown flavor byte {other}"))),
    };
    let payload_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let end = HEADER_LEN + payload_len as usize;
    if bytes.len() < end + 4 {
        return Err(Error::Corruption(format!(
            "truncated: {} bytes, header announces {}",
            bytes.len(),
            end + 4
        )));
    }
    if bytes.len() > end + 4 {
        return Err(Error::Corruption(format!("{} trailing bytes", bytes.len() - end - 4)));
    }
    let payload = &bytes[HEADER_LEN..end];
    let checksum = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if checksum != actual {
        return Err(Error::Corruption(format!(
            "checksum mismatch: stored {checksum:08x}, computed {actual:08x}"
        )));
    }
    Ok((
        Header {
            version,
            flavor,
            payload_len,
            checksum,
        },
        payload,
    ))
}

pub fn deserialize(bytes: &[u8]) -> Result<Model> {
    let (header, payload) = read_header(bytes)?;
    let mut r = Reader { buf: payload, pos: 0 };
    let n = r.len(1)?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Format(format!("config is not UTF-8: {e}")))?;
    let config = NetworkConfig::from_toml(text).map_err(|e| Error::Format(e.to_string()))?;
    let model = match header.flavor {
        Flavor::Float32 => {
            let count = r.len(20)?;
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let shape = r.shape()?;
                let weights = Tensor::from_vec(shape, r.f32s(shape.len())?)?;
                let nb = r.len(4)?;
                layers.push(LayerParams {
                    weights,
                    bias: r.f32s(nb)?,
                });
            }
            let params = ModelParams { layers };
            Model::Float(FloatModel::new(config, params).map_err(|e| Error::Format(e.to_string()))?)
        }
        Flavor::Int8 => {
            let ne = r.len(8)?;
            let edges = (0..ne).map(|_| r.edge()).collect::<Result<Vec<_>>>()?;
            let nl = r.len(1)?;
            let mut layers = Vec::with_capacity(nl);
            for _ in 0..nl {
                layers.push(match r.u8()? {
                    0 => QuantLayer::Conv(r.conv()?),
                    1 => QuantLayer::Dense(r.conv()?),
                    2 => {
                        let squeeze = r.conv()?;
                        let squeeze_q = r.edge()?;
                        QuantLayer::Fire {
                            squeeze,
                            squeeze_q,
                            expand1: r.conv()?,
                            expand3: r.conv()?,
                        }
                    }
                    3 => QuantLayer::PassThrough,
                    tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
                });
            }
            Model::Int8(QuantizedModel::from_parts(config, edges, layers).map_err(|e| Error::Format(e.to_string()))?)
        }
    };
    if r.pos != payload.len() {
        return Err(Error::Format(format!("{} unread payload bytes", payload.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &Model) -> Result<u64> {
    let bytes = serialize(model);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeReport {
    pub float_bytes: u64,
    pub int8_bytes: u64,
    /// `100 * (1 - int8 / float)`.
    pub reduction_pct: f64,
}

impl SizeReport {
    pub fn saved_bytes(&self) -> i64 {
        self.float_bytes as i64 - self.int8_bytes as i64
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "float32 {:.1} KB -> int8 {:.1} KB ({:.2}% smaller)",
            self.float_bytes as f64 / 1024.0,
            self.int8_bytes as f64 / 1024.0,
            self.reduction_pct
        )
    }
}

pub fn size_report(float_bytes: u64, int8_bytes: u64) -> Result<SizeReport> {
    if float_bytes == 0 || int8_bytes == 0 {
        return Err(Error::Data("model sizes must be positive".into()));
    }
    Ok(SizeReport {
        float_bytes,
        int8_bytes,
        reduction_pct: 100.0 * (1.0 - int8_bytes as f64 / float_bytes as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetCheck {
    pub pass: bool,
    pub model_bytes: u64,
    pub budget_bytes: u64,
    /// `budget - model`; negative when over budget.
    pub margin_bytes: i64,
}

impl fmt::Display for BudgetCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {:.1} KB against a {:.1} KB budget (margin {:.1} KB)",
            if self.pass { "PASS" } else { "FAIL" },
            self.model_bytes as f64 / 1024.0,
            self.budget_bytes as f64 / 1024.0,
            self.margin_bytes as f64 / 1024.0
        )
    }
}

/// Passes when the model is strictly smaller than the budget.
pub fn budget_check(model_bytes: u64, budget_bytes: u64) -> BudgetCheck {
    BudgetCheck {
        pass: model_bytes < budget_bytes,
        model_bytes,
        budget_bytes,
        margin_bytes: budget_bytes as i64 - model_bytes as i64,
    }
}
