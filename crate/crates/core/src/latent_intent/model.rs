use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{ClipBounds, DiagGaussian, GaussianVars};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Bound, Graph, MlpSpec, ParameterSet, Tensor, Var, WeightInit};

/// Sizes of the observed and latent vectors and of the hidden layers shared
/// by all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub hidden: Vec<usize>,
}

impl IntentDims {
    pub fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.z == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("intent dims must be positive: {self:?}")));
        }
        if self.z >= self.y {
            return Err(Error::invalid(format!(
                "latent dim {} must be smaller than future-behavior dim {}",
                self.z, self.y
            )));
        }
        Ok(())
    }

    fn spec(&self, input: usize, target: usize) -> MlpSpec {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(2 * target);
        MlpSpec::new(sizes, Activation::Relu)
    }

    /// `p(z|x)`: `x → (μ, log σ²)` over `z`.
    pub fn prior_spec(&self) -> MlpSpec {
        self.spec(self.x, self.z)
    }

    /// `q(z|x,y)`: `x ‖ y → (μ, log σ²)` over `z`.
    pub fn encoder_spec(&self) -> MlpSpec {
        self.spec(self.x + self.y, self.z)
    }

    /// `p(y|z)`: `z → (μ, log σ²)` over `y`.
    pub fn decoder_spec(&self) -> MlpSpec {
        self.spec(self.z, self.y)
    }
}

/// Which weights of each network are drawn from `U(−ε, ε)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScope {
    /// Only the layer producing `(μ, log σ²)`; hidden layers use fan-in
    /// scaling. Outputs still start within `ε·‖h‖` of zero.
    #[default]
    OutputLayer,
    /// Every layer. The dependence of each output on its input then starts
    /// at order `ε^depth`, which leaves the ELBO stuck at `z` carrying no
    /// information for thousands of steps.
    AllLayers,
}

/// Parameters of the prior, encoder and decoder networks.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentModule {
    pub dims: IntentDims,
    /// `None` disables soft clipping (only useful to show what it prevents).
    pub clip: Option<ClipBounds>,
    pub init_epsilon: f64,
    pub prior: ParameterSet,
    pub encoder: ParameterSet,
    pub decoder: ParameterSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

impl IntentModule {
    /// Weights from `U(−ε, ε)`, biases zero. With small `ε` every network
    /// outputs ≈ 0, so prior and posterior both start near `N(0, I)`.
    pub fn init(dims: IntentDims, clip: Option<ClipBounds>, init_epsilon: f64, seed: u64) -> Result<Self> {
        Self::init_scoped(dims, clip, init_epsilon, InitScope::default(), seed)
    }

    pub fn init_scoped(
        dims: IntentDims,
        clip: Option<ClipBounds>,
        init_epsilon: f64,
        scope: InitScope,
        seed: u64,
    ) -> Result<Self> {
        if !(init_epsilon > 0.0 && init_epsilon.is_finite()) {
            return Err(Error::invalid(format!("init_epsilon must be positive, got {init_epsilon}")));
        }
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.hidden.len();
        let init = |layer: usize| match scope {
            InitScope::OutputLayer if layer < last => WeightInit::FanIn,
            _ => WeightInit::Uniform(init_epsilon),
        };
        let prior = dims.prior_spec().init_params_per_layer(init, &mut rng)?;
        let encoder = dims.encoder_spec().init_params_per_layer(init, &mut rng)?;
        let decoder = dims.decoder_spec().init_params_per_layer(init, &mut rng)?;
        Ok(Self { dims, clip, init_epsilon, prior, encoder, decoder })
    }

    pub fn param_sets(&self) -> [&ParameterSet; 3] {
        [&self.prior, &self.encoder, &self.decoder]
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParameterSet; 3] {
        [&mut self.prior, &mut self.encoder, &mut self.decoder]
    }

    /// Binds the three networks to `graph`; `trainable = false` binds them
    /// as constants.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundIntent<'g> {
        let bind = |p: &ParameterSet| if trainable { p.bind(graph) } else { p.bind_frozen(graph) };
        BoundIntent::new(self.dims.clone(), self.clip, bind(&self.prior), bind(&self.encoder), bind(&self.decoder))
    }

    fn check_len(&self, what: &str, t: &Tensor, expected: usize) -> Result<()> {
        if t.len() != expected {
            return Err(Error::shape(what, expected, t.len()));
        }
        Ok(())
    }

    pub fn prior(&self, x: &Tensor) -> Result<DiagGaussian> {
        self.check_len("prior input x", x, self.dims.x)?;
        let g = Graph::new();
        let m = self.bind(&g, false);
        single(m.prior(row(&g, x)?)?)
    }

    pub fn encode(&self, x: &Tensor, y: &Tensor) -> Result<DiagGaussian> {
        self.check_len("encoder input x", x, self.dims.x)?;
        self.check_len("encoder input y", y, self.dims.y)?;
        let g = Graph::new();
        let m = self.bind(&g, false);
        single(m.encode(row(&g, x)?, row(&g, y)?)?)
    }

    /// `p(y|z)`; there is deliberately no way to pass `x` here.
    pub fn decode(&self, z: &Tensor) -> Result<DiagGaussian> {
        self.check_len("decoder input z", z, self.dims.z)?;
        let g = Graph::new();
        let m = self.bind(&g, false);
        single(m.decode(row(&g, z)?)?)
    }

    /// Single-sample ELBO for one `(x, y)` pair with the posterior noise
    /// supplied by the caller.
    pub fn elbo(&self, x: &Tensor, y: &Tensor, noise: &Tensor) -> Result<ElboTerms> {
        self.check_len("elbo x", x, self.dims.x)?;
        self.check_len("elbo y", y, self.dims.y)?;
        self.check_len("elbo noise", noise, self.dims.z)?;
        let g = Graph::new();
        let m = self.bind(&g, false);
        let out = m.elbo(row(&g, x)?, row(&g, y)?, row(&g, noise)?)?;
        let recon = out.recon.sum().value().item();
        let kl = out.kl.sum().value().item();
        Ok(ElboTerms { elbo: recon - kl, recon, kl })
    }

    /// Prior and posterior of every row of `xs`/`ys` in one pass.
    pub fn prior_posterior_batch(&self, xs: &Tensor, ys: &Tensor) -> Result<(GaussianRows, GaussianRows)> {
        let g = Graph::new();
        let m = self.bind(&g, false);
        let (x, y) = (g.constant(xs.clone()), g.constant(ys.clone()));
        let p = m.prior(x)?;
        let q = m.encode(x, y)?;
        Ok((GaussianRows::from_vars(&p), GaussianRows::from_vars(&q)))
    }

    pub fn prior_batch(&self, xs: &Tensor) -> Result<GaussianRows> {
        let g = Graph::new();
        let m = self.bind(&g, false);
        Ok(GaussianRows::from_vars(&m.prior(g.constant(xs.clone()))?))
    }
}

/// Diagonal Gaussians evaluated for a batch, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRows {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianRows {
    fn from_vars(v: &GaussianVars<'_>) -> Self {
        Self { mean: (*v.mean.value()).clone(), log_var: (*v.log_var.value()).clone() }
    }

    pub fn rows(&self) -> usize {
        self.mean.rows()
    }

    pub fn row(&self, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: Tensor::vector(self.mean.row(i).to_vec()),
            log_var: Tensor::vector(self.log_var.row(i).to_vec()),
        }
    }
}

fn row<'g>(g: &'g Graph, t: &Tensor) -> Result<Var<'g>> {
    Ok(g.constant(Tensor::matrix(1, t.len(), t.data().to_vec())?))
}

fn single(v: GaussianVars<'_>) -> Result<DiagGaussian> {
    DiagGaussian::new(Tensor::vector(v.mean.value().data().to_vec()), Tensor::vector(v.log_var.value().data().to_vec()))
}

/// The intent networks bound to one graph.
pub struct BoundIntent<'g> {
    dims: IntentDims,
    clip: Option<ClipBounds>,
    prior: Bound<'g>,
    encoder: Bound<'g>,
    decoder: Bound<'g>,
}

/// Element-wise ELBO pieces for a batch; `recon` is `batch × d_y`, `kl` is
/// `batch × d_z`.
pub struct ElboVars<'g> {
    pub recon: Var<'g>,
    pub kl: Var<'g>,
    pub prior: GaussianVars<'g>,
    pub posterior: GaussianVars<'g>,
    pub likelihood: GaussianVars<'g>,
}

impl<'g> BoundIntent<'g> {
    pub fn new(
        dims: IntentDims,
        clip: Option<ClipBounds>,
        prior: Bound<'g>,
        encoder: Bound<'g>,
        decoder: Bound<'g>,
    ) -> Self {
        Self { dims, clip, prior, encoder, decoder }
    }

    pub fn prior(&self, x: Var<'g>) -> Result<GaussianVars<'g>> {
        let d = &self.dims;
        let out = d.prior_spec().forward(&self.prior, x, "prior")?;
        GaussianVars::from_output(out, d.z, self.clip)
    }

    pub fn encode(&self, x: Var<'g>, y: Var<'g>) -> Result<GaussianVars<'g>> {
        let d = &self.dims;
        let input = Var::concat(&[x, y])?;
        let out = d.encoder_spec().forward(&self.encoder, input, "encoder")?;
        GaussianVars::from_output(out, d.z, self.clip)
    }

    pub fn decode(&self, z: Var<'g>) -> Result<GaussianVars<'g>> {
        let d = &self.dims;
        let out = d.decoder_spec().forward(&self.decoder, z, "decoder")?;
        GaussianVars::from_output(out, d.y, self.clip)
    }

    /// `recon = log p(y | z)` with `z` drawn from `q(z|x,y)` using `noise`,
    /// and `kl = KL(q(z|x,y) ‖ p(z|x))`.
    pub fn elbo(&self, x: Var<'g>, y: Var<'g>, noise: Var<'g>) -> Result<ElboVars<'g>> {
        let prior = self.prior(x)?;
        self.elbo_with_prior(prior, x, y, noise)
    }

    pub fn elbo_with_prior(
        &self,
        prior: GaussianVars<'g>,
        x: Var<'g>,
        y: Var<'g>,
        noise: Var<'g>,
    ) -> Result<ElboVars<'g>> {
        let posterior = self.encode(x, y)?;
        let z = posterior.sample(noise)?;
        let likelihood = self.decode(z)?;
        Ok(ElboVars {
            recon: likelihood.log_likelihood_terms(y)?,
            kl: posterior.kl_terms(&prior)?,
            prior,
            posterior,
            likelihood,
        })
    }
}
