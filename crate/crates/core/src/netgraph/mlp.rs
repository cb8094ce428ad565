//! Fully connected ReLU networks and their weights-file format.
//!
//! The on-disk format is JSON:
//!
//! ```json
//! {"input_dim": 4,
//!  "layers": [{"weights": [["1.0000000000000000e0", ...], ...],
//!              "bias": ["0.0000000000000000e0", ...],
//!              "activation": "relu"}]}
//! ```
//!
//! Floats are written as decimal strings with 17 significant digits so every
//! binary64 value survives a round trip unchanged. Plain JSON numbers are
//! accepted on input.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() {
            return Err(Error::Schema("network needs an input and at least one layer".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return Err(Error::Schema(format!(
                    "layers[{i}].weights has {} columns, expected {width}",
                    layer.in_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Schema(format!(
                    "layers[{i}].bias has length {}, expected {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Schema(format!("layers[{i}] has non-finite parameters")));
            }
            width = layer.out_dim();
        }
        Ok(Self { input_dim, layers })
    }

    /// He-initialised network with ReLU hidden layers and an identity output.
    pub fn random(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("need at least input and output sizes"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weights = Matrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound));
                let act = if i + 2 == sizes.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::new(weights, vec![0.0; w[1]], act)
            })
            .collect();
        Self::new(sizes[0], layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(Layer::out_dim)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                input.len()
            )));
        }
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = layer.weights.mul_vec(&x);
            for (v, b) in y.iter_mut().zip(&layer.bias) {
                *v += b;
                if layer.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
            x = y;
        }
        x
    }

    /// Forward pass that keeps every layer's post-activation output.
    pub fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let mut y = layer.weights.mul_vec(x);
            for (v, b) in y.iter_mut().zip(&layer.bias) {
                *v += b;
                if layer.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
            acts.push(y);
        }
        acts
    }

    /// Accumulates `scale · ∂out/∂θ` into `grads` for a trace produced by
    /// [`Mlp::forward_trace`], where `dout` is the upstream gradient of the
    /// network output.
    pub fn backward(&self, trace: &[Vec<f64>], dout: &[f64], scale: f64, grads: &mut MlpGrads) {
        let mut delta: Vec<f64> = dout.iter().map(|d| d * scale).collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace[li + 1];
            if layer.activation == Activation::Relu {
                for (d, o) in delta.iter_mut().zip(out) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace[li];
            let g = &mut grads.layers[li];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.in_dim()..(r + 1) * layer.in_dim()];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.in_dim()];
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(layer.weights.row(r)) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.data().len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Visits every parameter together with its gradient, in file order.
    pub fn for_each_param_mut(&mut self, grads: &MlpGrads, mut f: impl FnMut(&mut f64, f64)) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
            for r in 0..rows {
                for c in 0..cols {
                    f(&mut layer.weights[(r, c)], g.weights[r * cols + c]);
                }
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                f(b, *gb);
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| {
                json!({
                    "weights": l.weights.to_rows().iter()
                        .map(|row| row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>())
                        .collect::<Vec<_>>(),
                    "bias": l.bias.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>(),
                    "activation": match l.activation {
                        Activation::Relu => "relu",
                        Activation::Identity => "identity",
                    },
                })
            })
            .collect();
        json!({ "input_dim": self.input_dim, "layers": layers })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| parse_err("$", "expected an object"))?;
        for key in obj.keys() {
            if key != "input_dim" && key != "layers" {
                return Err(parse_err(key, "unknown field"));
            }
        }
        let input_dim = obj
            .get("input_dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err("input_dim", "expected a positive integer"))?
            as usize;
        let layers_v = obj
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err("layers", "expected an array"))?;
        let mut layers = Vec::with_capacity(layers_v.len());
        for (i, lv) in layers_v.iter().enumerate() {
            let field = |f: &str| format!("layers[{i}].{f}");
            let lo = lv
                .as_object()
                .ok_or_else(|| parse_err(&format!("layers[{i}]"), "expected an object"))?;
            for key in lo.keys() {
                if !matches!(key.as_str(), "weights" | "bias" | "activation") {
                    return Err(parse_err(&field(key), "unknown field"));
                }
            }
            let rows_v = lo
                .get("weights")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err(&field("weights"), "expected an array of rows"))?;
            let mut rows = Vec::with_capacity(rows_v.len());
            for (r, row) in rows_v.iter().enumerate() {
                let name = format!("layers[{i}].weights[{r}]");
                rows.push(parse_vec(row, &name)?);
            }
            let cols = rows.first().map_or(0, Vec::len);
            if let Some(r) = rows.iter().position(|row| row.len() != cols) {
                return Err(Error::Schema(format!(
                    "layers[{i}].weights[{r}] has length {}, expected {cols}",
                    rows[r].len()
                )));
            }
            let bias = parse_vec(
                lo.get("bias").ok_or_else(|| parse_err(&field("bias"), "missing"))?,
                &field("bias"),
            )?;
            let activation = match lo.get("activation").and_then(Value::as_str) {
                Some("relu") => Activation::Relu,
                Some("identity") => Activation::Identity,
                _ => return Err(parse_err(&field("activation"), "expected \"relu\" or \"identity\"")),
            };
            let weights = if rows.is_empty() {
                Matrix::zeros(0, 0)
            } else {
                Matrix::from_rows(&rows)
            };
            layers.push(Layer::new(weights, bias, activation));
        }
        Self::new(input_dim, layers)
    }
}

/// Parameter gradients laid out like the network.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    /// Row-major, same shape as the layer's weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlpGrads {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

fn parse_err(field: &str, message: &str) -> Error {
    Error::Parse {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(v: &Value, field: &str) -> Result<f64> {
    let x = match v {
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(field, &format!("bad float {s:?}: {e}")))?,
        Value::Number(n) => n.as_f64().ok_or_else(|| parse_err(field, "bad number"))?,
        _ => return Err(parse_err(field, "expected a number or decimal string")),
    };
    if !x.is_finite() {
        return Err(parse_err(field, "value is not finite"));
    }
    Ok(x)
}

fn parse_vec(v: &Value, field: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| parse_err(field, "expected an array"))?
        .iter()
        .enumerate()
        .map(|(j, x)| parse_f64(x, &format!("{field}[{j}]")))
        .collect()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Mlp> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| parse_err("$", &e.to_string()))?;
    Mlp::from_json(&value)
}

pub fn save_network(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&net.to_json())?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
