//! Dense feed-forward networks used as classifiers, generators and variational posteriors.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grad::tape::{matmul_raw, Gradients, Tape, Var};
use crate::grad::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// `y = act(x W + b)` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

/// Parameter handles of a network registered on one tape.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    vars: Vec<(Var, Var, Activation)>,
}

impl BoundNetwork {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.run(tape, x, self.vars.len())
    }

    /// Output of the penultimate layer (after its activation).
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.vars.len() < 2 {
            return shape_err("features", "network has no hidden layer");
        }
        self.run(tape, x, self.vars.len() - 1)
    }

    fn run(&self, tape: &mut Tape, x: Var, upto: usize) -> Result<Var> {
        let xv = tape.value(x);
        let in_dim = tape.value(self.vars[0].0).shape()[0];
        // Inputs on a tape are always `[batch, dim]`.
        if xv.ndim() != 2 || xv.cols() != in_dim {
            return shape_err(
                "forward",
                format!("input {:?} for network with input dim {in_dim}", xv.shape()),
            );
        }
        let mut h = x;
        for &(w, b, act) in &self.vars[..upto] {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = act.on_tape(tape, z)?;
        }
        Ok(h)
    }

    /// Parameter gradients in [`Network::params`] order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .flat_map(|&(w, b, _)| [grads.get(w), grads.get(b)])
            .collect()
    }
}

impl Network {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("Network", "no layers");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.ndim() != 2 || l.bias.shape() != [l.out_dim()] {
                return shape_err("Network", format!("layer {i} has inconsistent parameters"));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return shape_err(
                    "Network",
                    format!(
                        "{} outputs feed {} inputs",
                        pair[0].out_dim(),
                        pair[1].in_dim()
                    ),
                );
            }
        }
        Ok(Self { layers })
    }

    /// Xavier-uniform weights, zero biases. `dims = [in, h1, ..., out]`; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return shape_err("Network::xavier", format!("bad dims {dims:?}"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-a..a))
                    .collect();
                Dense {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 2 == dims.len() { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    /// All-zero parameters.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return shape_err("Network::zeros", format!("bad dims {dims:?}"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
                activation: if i + 2 == dims.len() { output } else { hidden },
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        BoundNetwork {
            vars: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.param(l.weight.clone()),
                        tape.param(l.bias.clone()),
                        l.activation,
                    )
                })
                .collect(),
        }
    }

    /// Records `f(x)` on `tape`; parameters are registered as fresh leaves.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.bind(tape).forward(tape, x)
    }

    /// Plain forward pass without recording.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.run_plain(x, self.layers.len())
    }

    /// Penultimate-layer representation without recording.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        if self.layers.len() < 2 {
            return shape_err("features", "network has no hidden layer");
        }
        self.run_plain(x, self.layers.len() - 1)
    }

    fn run_plain(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let n = x.rows();
        if x.cols() != self.input_dim() || x.ndim() > 2 {
            return shape_err(
                "forward",
                format!(
                    "input {:?} for network with input dim {}",
                    x.shape(),
                    self.input_dim()
                ),
            );
        }
        let mut h = x.data().to_vec();
        let mut width = self.input_dim();
        for l in &self.layers[..upto] {
            let m = l.out_dim();
            let mut z = matmul_raw(&h, l.weight.data(), n, width, m);
            for row in z.chunks_mut(m) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v = l.activation.apply(*v + b);
                }
            }
            h = z;
            width = m;
        }
        let out = Tensor::new(vec![n, width], h)?;
        out.ensure_finite("forward")?;
        Ok(out)
    }

    /// Writes the snapshot layout: magic `ADTNET01`, `u32` layer count, then per layer
    /// `u8` activation tag and `u64` in/out dims; after the header, every layer's weight
    /// (row-major) followed by its bias. All integers and reals are little-endian.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&[l.activation.tag()])?;
            w.write_all(&(l.in_dim() as u64).to_le_bytes())?;
            w.write_all(&(l.out_dim() as u64).to_le_bytes())?;
        }
        for p in self.params() {
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            format: "snapshot",
            detail: detail.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let mut tag = [0u8; 1];
            let mut b8 = [0u8; 8];
            r.read_exact(&mut tag)
                .map_err(|_| bad("truncated header"))?;
            let act = Activation::from_tag(tag[0]).ok_or_else(|| bad("unknown activation tag"))?;
            r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
            let i = u64::from_le_bytes(b8) as usize;
            r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
            let o = u64::from_le_bytes(b8) as usize;
            header.push((act, i, o));
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b8 = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b8)
                    .map_err(|_| bad("truncated payload"))?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let mut layers = Vec::with_capacity(count);
        for (act, i, o) in header {
            let w = read_vec(i * o)?;
            let b = read_vec(o)?;
            layers.push(Dense {
                weight: Tensor::new(vec![i, o], w)?,
                bias: Tensor::new(vec![o], b)?,
                activation: act,
            });
        }
        Self::from_layers(layers)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"ADTNET01";
