//! Proposal models: a global bias and a bag-of-opcodes MLP.
//!
//! Both expose their parameters as one flat `f64` vector so the optimizer
//! and gradient code can treat them uniformly.

use std::io::{self, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Isa, Program};
use crate::proposal::{ProposalParams, NUM_MOVE_KINDS};

/// Opcode occurrence counts of a program, indexed by opcode (length V).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BowFeature {
    pub counts: Vec<u32>,
}

impl BowFeature {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

pub fn featurize(isa: &Isa, p: &Program) -> BowFeature {
    let mut counts = vec![0u32; isa.vocab_size()];
    for insn in p.live() {
        counts[insn.opcode as usize] += 1;
    }
    BowFeature { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bias,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias" => Ok(ModelKind::Bias),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model kind `{other}` (expected bias or mlp)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Bias => "bias",
            ModelKind::Mlp => "mlp",
        })
    }
}

/// Unnormalized scores of the two categorical heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub kind: [f64; NUM_MOVE_KINDS],
    pub opcode: Vec<f64>,
}

impl Logits {
    pub fn zeros(n_opcodes: usize) -> Self {
        Logits {
            kind: [0.0; NUM_MOVE_KINDS],
            opcode: vec![0.0; n_opcodes],
        }
    }

    pub fn add_scaled(&mut self, other: &Logits, scale: f64) {
        for (a, b) in self.kind.iter_mut().zip(&other.kind) {
            *a += scale * b;
        }
        for (a, b) in self.opcode.iter_mut().zip(&other.opcode) {
            *a += scale * b;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Learned logits that ignore the program: `9 + V'` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    n_opcodes: usize,
    params: Vec<f64>,
}

impl BiasModel {
    pub fn zeros(isa: &Isa) -> Self {
        let n_opcodes = isa.proposable_size();
        BiasModel {
            n_opcodes,
            params: vec![0.0; NUM_MOVE_KINDS + n_opcodes],
        }
    }

    pub fn kind_logits(&self) -> &[f64] {
        &self.params[..NUM_MOVE_KINDS]
    }

    pub fn opcode_logits(&self) -> &[f64] {
        &self.params[NUM_MOVE_KINDS..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Offset of the row-major `outputs x inputs` weight block.
    weights: usize,
    /// Offset of the `outputs` bias block.
    bias: usize,
}

impl Layer {
    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.weights..self.weights + self.inputs * self.outputs];
        let b = &params[self.bias..self.bias + self.outputs];
        for (row, bias) in w.chunks_exact(self.inputs).zip(b) {
            out.push(bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x`, and returns the gradient with respect to `x`.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        let n = self.inputs;
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[self.bias + o] += g;
            let row = self.weights + o * n;
            for i in 0..n {
                grad[row + i] += g * x[i];
                dx[i] += g * params[row + i];
            }
        }
        dx
    }
}

/// `V -> hidden... -> (9, V')` with ReLU after every hidden layer and a
/// linear head per categorical.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input: usize,
    hidden: Vec<usize>,
    n_opcodes: usize,
    layers: Vec<Layer>,
    kind_head: Layer,
    opcode_head: Layer,
    params: Vec<f64>,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [100, 300, 300];

struct Activations {
    /// `inputs[0]` is the feature vector; `inputs[l + 1]` is the ReLU output
    /// of hidden layer `l`.
    inputs: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Hidden layers get uniform weights in `±1/sqrt(fan_in)`; biases and
    /// both heads start at zero, so the initial proposal is uniform.
    pub fn new<R: Rng + ?Sized>(isa: &Isa, hidden: &[usize], rng: &mut R) -> Self {
        let mut model = MlpModel::zeros(isa, hidden);
        for layer in &model.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in &mut model.params[layer.weights..layer.weights + layer.inputs * layer.outputs] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        model
    }

    pub fn zeros(isa: &Isa, hidden: &[usize]) -> Self {
        assert!(!hidden.is_empty(), "MLP needs at least one hidden layer");
        let input = isa.vocab_size();
        let n_opcodes = isa.proposable_size();
        let mut offset = 0;
        let mut make = |inputs: usize, outputs: usize| {
            let layer = Layer {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            };
            offset += inputs * outputs + outputs;
            layer
        };
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(make(prev, h));
            prev = h;
        }
        let kind_head = make(prev, NUM_MOVE_KINDS);
        let opcode_head = make(prev, n_opcodes);
        MlpModel {
            input,
            hidden: hidden.to_vec(),
            n_opcodes,
            layers,
            kind_head,
            opcode_head,
            params: vec![0.0; offset],
        }
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Sets both output heads (weights and biases) to zero.
    pub fn zero_heads(&mut self) {
        for head in [self.kind_head, self.opcode_head] {
            self.params[head.weights..head.bias + head.outputs].fill(0.0);
        }
    }

    fn activations(&self, feat: &BowFeature) -> Activations {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(feat.counts.iter().map(|&c| f64::from(c)).collect::<Vec<_>>());
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(&self.params, inputs.last().expect("input"), &mut z);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            inputs.push(z);
        }
        Activations { inputs }
    }

    fn logits(&self, feat: &BowFeature) -> Logits {
        let acts = self.activations(feat);
        let h = acts.inputs.last().expect("hidden output");
        let mut kind = Vec::new();
        self.kind_head.forward(&self.params, h, &mut kind);
        let mut opcode = Vec::new();
        self.opcode_head.forward(&self.params, h, &mut opcode);
        let mut out = Logits::zeros(self.n_opcodes);
        out.kind.copy_from_slice(&kind);
        out.opcode = opcode;
        out
    }

    fn backward(&self, feat: &BowFeature, dlogits: &Logits, grad: &mut [f64]) {
        let acts = self.activations(feat);
        let h = acts.inputs.last().expect("hidden output");
        let mut dh = self.kind_head.backward(&self.params, h, &dlogits.kind, grad);
        let dh_op = self.opcode_head.backward(&self.params, h, &dlogits.opcode, grad);
        dh.iter_mut().zip(dh_op).for_each(|(a, b)| *a += b);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // ReLU gate: the post-activation is positive exactly where the
            // pre-activation is.
            let out = &acts.inputs[l + 1];
            let dz: Vec<f64> = dh
                .iter()
                .zip(out)
                .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                .collect();
            dh = layer.backward(&self.params, &acts.inputs[l], &dz, grad);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Bias(BiasModel),
    Mlp(MlpModel),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file is not a proposal model (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("unknown model kind tag {0}")]
    Kind(u8),
    #[error("model vocabulary V={found_v}, V'={found_vp} does not match the ISA (V={v}, V'={vp})")]
    Vocabulary {
        found_v: usize,
        found_vp: usize,
        v: usize,
        vp: usize,
    },
    #[error("parameter count {found} does not match the declared shape ({expected})")]
    ParamCount { found: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

const MAGIC: &[u8; 8] = b"SOPTMODL";
const FORMAT_VERSION: u32 = 1;

impl Model {
    pub fn zeros(isa: &Isa, kind: ModelKind, hidden: &[usize]) -> Self {
        match kind {
            ModelKind::Bias => Model::Bias(BiasModel::zeros(isa)),
            ModelKind::Mlp => Model::Mlp(MlpModel::zeros(isa, hidden)),
        }
    }

    /// Standard initialization: zero bias, or an MLP with random hidden
    /// layers and zero heads.
    pub fn init<R: Rng + ?Sized>(isa: &Isa, kind: ModelKind, hidden: &[usize], rng: &mut R) -> Self {
        match kind {
            ModelKind::Bias => Model::Bias(BiasModel::zeros(isa)),
            ModelKind::Mlp => Model::Mlp(MlpModel::new(isa, hidden, rng)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Bias(_) => ModelKind::Bias,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Bias(m) => &m.params,
            Model::Mlp(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Bias(m) => &mut m.params,
            Model::Mlp(m) => &mut m.params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn n_opcodes(&self) -> usize {
        match self {
            Model::Bias(m) => m.n_opcodes,
            Model::Mlp(m) => m.n_opcodes,
        }
    }

    pub fn hidden(&self) -> &[usize] {
        match self {
            Model::Bias(_) => &[],
            Model::Mlp(m) => &m.hidden,
        }
    }

    pub fn logits(&self, feat: &BowFeature) -> Logits {
        match self {
            Model::Bias(m) => {
                let mut out = Logits::zeros(m.n_opcodes);
                out.kind.copy_from_slice(m.kind_logits());
                out.opcode.copy_from_slice(m.opcode_logits());
                out
            }
            Model::Mlp(m) => m.logits(feat),
        }
    }

    /// Proposal distribution for a program with features `feat`.
    pub fn forward(&self, isa: &Isa, feat: &BowFeature) -> ProposalParams {
        let logits = self.logits(feat);
        let mut kind = [0.0; NUM_MOVE_KINDS];
        kind.copy_from_slice(&softmax(&logits.kind));
        ProposalParams::new(isa, kind, softmax(&logits.opcode)).expect("softmax output is a distribution")
    }

    /// Adds `J^T dlogits` to `grad`, where `J` is the Jacobian of the logits
    /// with respect to the parameters at `feat`.
    pub fn backward(&self, feat: &BowFeature, dlogits: &Logits, grad: &mut [f64]) {
        match self {
            Model::Bias(_) => {
                grad[..NUM_MOVE_KINDS]
                    .iter_mut()
                    .zip(&dlogits.kind)
                    .for_each(|(g, d)| *g += d);
                grad[NUM_MOVE_KINDS..]
                    .iter_mut()
                    .zip(&dlogits.opcode)
                    .for_each(|(g, d)| *g += d);
            }
            Model::Mlp(m) => m.backward(feat, dlogits, grad),
        }
    }

    pub fn check_vocabulary(&self, isa: &Isa) -> Result<(), ModelError> {
        let (v, vp) = (isa.vocab_size(), isa.proposable_size());
        let found_v = match self {
            Model::Bias(_) => v,
            Model::Mlp(m) => m.input,
        };
        if found_v != v || self.n_opcodes() != vp {
            return Err(ModelError::Vocabulary {
                found_v,
                found_vp: self.n_opcodes(),
                v,
                vp,
            });
        }
        Ok(())
    }

    /// Binary format, all integers and floats little-endian:
    ///
    /// ```text
    /// magic "SOPTMODL" | version u32 | kind u8 (0 bias, 1 mlp)
    /// V u32 | V' u32 | hidden-layer count u32 | hidden widths u32...
    /// seed u64 | parameter count u64 | parameters f64...
    /// ```
    ///
    /// MLP parameters are laid out layer by layer (hidden layers, then the
    /// move-kind head, then the opcode head), each as a row-major
    /// `outputs x inputs` weight matrix followed by its bias vector. Bias
    /// parameters are the 9 move-kind logits followed by the V' opcode logits.
    pub fn write<W: Write>(&self, isa: &Isa, seed: u64, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[match self.kind() {
            ModelKind::Bias => 0,
            ModelKind::Mlp => 1,
        }])?;
        w.write_all(&(isa.vocab_size() as u32).to_le_bytes())?;
        w.write_all(&(self.n_opcodes() as u32).to_le_bytes())?;
        w.write_all(&(self.hidden().len() as u32).to_le_bytes())?;
        for &h in self.hidden() {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        w.write_all(&seed.to_le_bytes())?;
        w.write_all(&(self.num_params() as u64).to_le_bytes())?;
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a model, returning it with the seed recorded in its header.
    pub fn read<R: Read>(isa: &Isa, mut r: R) -> Result<(Model, u64), ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ModelError::Version(version));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let kind = match tag[0] {
            0 => ModelKind::Bias,
            1 => ModelKind::Mlp,
            other => return Err(ModelError::Kind(other)),
        };
        let v = read_u32(&mut r)? as usize;
        let vp = read_u32(&mut r)? as usize;
        if v != isa.vocab_size() || vp != isa.proposable_size() {
            return Err(ModelError::Vocabulary {
                found_v: v,
                found_vp: vp,
                v: isa.vocab_size(),
                vp: isa.proposable_size(),
            });
        }
        let n_hidden = read_u32(&mut r)? as usize;
        let hidden = (0..n_hidden)
            .map(|_| read_u32(&mut r).map(|h| h as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let seed = read_u64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut model = Model::zeros(isa, kind, &hidden);
        if count != model.num_params() {
            return Err(ModelError::ParamCount {
                found: count,
                expected: model.num_params(),
            });
        }
        let mut buf = [0u8; 8];
        for p in model.params_mut() {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok((model, seed))
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
