use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bound, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<'g>(self, v: Var<'g>) -> Var<'g> {
        match self {
            Activation::Relu => v.relu(),
            Activation::Identity => v,
        }
    }
}

/// How freshly created weight matrices are filled. Biases always start at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// `U(−ε, ε)`.
    Uniform(f64),
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn,
}

impl WeightInit {
    fn sample(self, fan_in: usize, rng: &mut impl Rng) -> f64 {
        let bound = match self {
            WeightInit::Uniform(eps) => eps,
            WeightInit::FanIn => 1.0 / (fan_in as f64).sqrt(),
        };
        rng.random_range(-bound..=bound)
    }

    pub fn matrix(self, rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| self.sample(rows, rng)).collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    }
}

/// Layer widths of a fully connected stack, input first.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { sizes, hidden, output: Activation::Identity }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Adds `layer{i}.weight` (`in × out`) and `layer{i}.bias` (`out`).
    pub fn init_params(&self, init: WeightInit, rng: &mut impl Rng) -> Result<ParameterSet> {
        self.init_params_per_layer(|_| init, rng)
    }

    /// [`MlpSpec::init_params`] with the scheme chosen per layer index.
    pub fn init_params_per_layer(
        &self,
        init: impl Fn(usize) -> WeightInit,
        rng: &mut impl Rng,
    ) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        for (i, w) in self.sizes.windows(2).enumerate() {
            params.insert(Self::weight_name(i), init(i).matrix(w[0], w[1], rng))?;
            params.insert(Self::bias_name(i), Tensor::zeros(&[w[1]]))?;
        }
        Ok(params)
    }

    /// Applies the stack to `input` (`batch × sizes[0]`). `label` prefixes
    /// the layer name in shape errors.
    pub fn forward<'g>(&self, bound: &Bound<'g>, input: Var<'g>, label: &str) -> Result<Var<'g>> {
        let mut h = input;
        for layer in 0..self.layers() {
            let w = bound.get(&Self::weight_name(layer))?;
            let b = bound.get(&Self::bias_name(layer))?;
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let ws = w.shape();
            if ws != [fan_in, fan_out] || b.shape() != [fan_out] {
                return Err(Error::shape(
                    format!("{label} layer {layer} parameters"),
                    format!("[{fan_in}, {fan_out}] and [{fan_out}]"),
                    format!("{:?} and {:?}", ws, b.shape()),
                ));
            }
            let cols = h.value().cols();
            if cols != fan_in {
                return Err(Error::shape(format!("{label} layer {layer} input"), fan_in, cols));
            }
            let act = if layer + 1 == self.layers() { self.output } else { self.hidden };
            h = act.apply(h.matmul(w)?.add_row(b)?);
        }
        Ok(h)
    }
}

/// Evaluates an MLP on a single input or a batch of rows.
pub fn mlp_forward(params: &ParameterSet, input: &Tensor, spec: &MlpSpec) -> Result<Tensor> {
    let g = Graph::new();
    let bound = params.bind_frozen(&g);
    let x = g.constant(input.clone());
    let out = spec.forward(&bound, x, "mlp")?;
    let value = (*out.value()).clone();
    if input.shape().len() == 1 {
        return Ok(Tensor::vector(value.into_data()));
    }
    Ok(value)
}

/// Gated recurrent unit:
///
/// ```text
/// u  = σ(x W_u + h U_u + b_u)
/// r  = σ(x W_r + h U_r + b_r)
/// c  = tanh(x W_c + (r ⊙ h) U_c + b_c)
/// h' = (1 − u) ⊙ h + u ⊙ c
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["u", "r", "c"];

impl GruSpec {
    pub fn init_params(&self, init: WeightInit, rng: &mut impl Rng) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        for gate in GATES {
            params.insert(format!("w_{gate}"), init.matrix(self.input, self.hidden, rng))?;
            params.insert(format!("u_{gate}"), init.matrix(self.hidden, self.hidden, rng))?;
            params.insert(format!("b_{gate}"), Tensor::zeros(&[self.hidden]))?;
        }
        Ok(params)
    }

    fn check(&self, bound: &Bound<'_>, h: &Var<'_>, x: &Var<'_>) -> Result<()> {
        for gate in GATES {
            let w = bound.get(&format!("w_{gate}"))?.shape();
            let u = bound.get(&format!("u_{gate}"))?.shape();
            if w != [self.input, self.hidden] || u != [self.hidden, self.hidden] {
                return Err(Error::shape(
                    format!("gru gate {gate}"),
                    format!("[{}, {}] and [{}, {}]", self.input, self.hidden, self.hidden, self.hidden),
                    format!("{w:?} and {u:?}"),
                ));
            }
        }
        let (hv, xv) = (h.value(), x.value());
        if hv.cols() != self.hidden {
            return Err(Error::shape("gru hidden state", self.hidden, hv.cols()));
        }
        if xv.cols() != self.input {
            return Err(Error::shape("gru input", self.input, xv.cols()));
        }
        if hv.rows() != xv.rows() {
            return Err(Error::shape("gru batch", hv.rows(), xv.rows()));
        }
        Ok(())
    }

    /// One step for a batch: `h` is `batch × hidden`, `x` is `batch × input`.
    pub fn step<'g>(&self, bound: &Bound<'g>, h: Var<'g>, x: Var<'g>) -> Result<Var<'g>> {
        self.check(bound, &h, &x)?;
        let gate = |name: &str, state: Var<'g>| -> Result<Var<'g>> {
            x.matmul(bound.get(&format!("w_{name}"))?)?
                .add(state.matmul(bound.get(&format!("u_{name}"))?)?)?
                .add_row(bound.get(&format!("b_{name}"))?)
        };
        let u = gate("u", h)?.sigmoid();
        let r = gate("r", h)?.sigmoid();
        let c = gate("c", r.mul(h)?)?.tanh();
        // (1 − u) ⊙ h + u ⊙ c = h + u ⊙ (c − h)
        h.add(u.mul(c.sub(h)?)?)
    }
}

/// Evaluates a single GRU step on plain vectors.
pub fn gru_step(params: &ParameterSet, h_prev: &Tensor, x_t: &Tensor) -> Result<Tensor> {
    let hidden = params.get("u_u")?.rows();
    let input = params.get("w_u")?.rows();
    let spec = GruSpec { input, hidden };
    let g = Graph::new();
    let bound = params.bind_frozen(&g);
    let h = g.constant(Tensor::matrix(1, h_prev.len(), h_prev.data().to_vec())?);
    let x = g.constant(Tensor::matrix(1, x_t.len(), x_t.data().to_vec())?);
    let out = spec.step(&bound, h, x)?;
    Ok(Tensor::vector(out.value().data().to_vec()))
}
