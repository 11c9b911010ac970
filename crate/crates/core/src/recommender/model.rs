use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::policy::PolicyDistribution;
use crate::error::{Error, Result};
use crate::latent_intent::{ClipBounds, GaussianVars, IntentDims, IntentModule, LatentSample};
use crate::numerics::{Activation, Bound, Graph, GruSpec, MlpSpec, ParameterSet, Tensor, Var, WeightInit};
use crate::seeding::{stream_seed, Stream};
use crate::simulator::InteractionEvent;

/// Sizes of the recommendation networks.
#[derive(Clone, Debug, PartialEq)]
pub struct RecommenderDims {
    pub catalog_size: usize,
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    pub latent_dim: usize,
    pub context_dim: usize,
    pub post_fusion_hidden: Vec<usize>,
}

impl RecommenderDims {
    pub fn gru_spec(&self) -> GruSpec {
        GruSpec { input: self.embedding_dim, hidden: self.gru_hidden }
    }

    /// `hidden ‖ z ‖ context → … → embedding_dim`, ReLU between layers.
    pub fn post_fusion_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.gru_hidden + self.latent_dim + self.context_dim];
        sizes.extend(&self.post_fusion_hidden);
        sizes.push(self.embedding_dim);
        MlpSpec::new(sizes, Activation::Relu)
    }
}

/// Item embeddings read by the GRU (`item`), the GRU itself, the post-fusion
/// MLP, and the policy's item representations (`output`).
#[derive(Clone, Debug, PartialEq)]
pub struct RecommenderParams {
    pub dims: RecommenderDims,
    pub embeddings: ParameterSet,
    pub gru: ParameterSet,
    pub post_fusion: ParameterSet,
}

const EMBEDDING_SCALE: f64 = 0.1;

impl RecommenderParams {
    pub fn init(dims: RecommenderDims, seed: u64) -> Result<Self> {
        if dims.catalog_size == 0 || dims.embedding_dim == 0 || dims.gru_hidden == 0 || dims.latent_dim == 0 {
            return Err(Error::invalid(format!("recommender dims must be positive: {dims:?}")));
        }
        if dims.post_fusion_hidden.contains(&0) {
            return Err(Error::invalid("post-fusion hidden sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = WeightInit::Uniform(EMBEDDING_SCALE);
        let mut embeddings = ParameterSet::new();
        embeddings.insert("item", table.matrix(dims.catalog_size, dims.embedding_dim, &mut rng))?;
        embeddings.insert("output", table.matrix(dims.catalog_size, dims.embedding_dim, &mut rng))?;
        let gru = dims.gru_spec().init_params(WeightInit::FanIn, &mut rng)?;
        let post_fusion = dims.post_fusion_spec().init_params(WeightInit::FanIn, &mut rng)?;
        Ok(Self { dims, embeddings, gru, post_fusion })
    }

    pub fn param_sets(&self) -> [&ParameterSet; 3] {
        [&self.embeddings, &self.gru, &self.post_fusion]
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParameterSet; 3] {
        [&mut self.embeddings, &mut self.gru, &mut self.post_fusion]
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundRecommender<'g> {
        let bind = |p: &ParameterSet| if trainable { p.bind(graph) } else { p.bind_frozen(graph) };
        BoundRecommender::new(self.dims.clone(), bind(&self.embeddings), bind(&self.gru), bind(&self.post_fusion))
    }

    /// Final GRU state after reading `events` in order; zero for no events.
    pub fn encode_history(&self, events: &[InteractionEvent]) -> Result<Tensor> {
        let g = Graph::new();
        let b = self.bind(&g, false);
        let items: Vec<usize> = events.iter().map(|e| e.item_id).collect();
        Ok(flatten(b.encode_history(&g, &[items.as_slice()])?))
    }

    /// Post-fusion MLP over `hidden ‖ z ‖ context`. `z` enters as a constant.
    pub fn fuse(&self, hidden: &Tensor, z: &LatentSample, context: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let b = self.bind(&g, false);
        let out = b.fuse(row(&g, hidden)?, row(&g, &z.z)?, row(&g, context)?)?;
        Ok(flatten(out))
    }

    pub fn policy(&self, user_repr: &Tensor) -> Result<PolicyDistribution> {
        let g = Graph::new();
        let b = self.bind(&g, false);
        let logits = b.logits(row(&g, user_repr)?)?;
        PolicyDistribution::from_logits(flatten(logits))
    }
}

fn row<'g>(g: &'g Graph, t: &Tensor) -> Result<Var<'g>> {
    Ok(g.constant(Tensor::matrix(1, t.len(), t.data().to_vec())?))
}

fn flatten(v: Var<'_>) -> Tensor {
    Tensor::vector(v.value().data().to_vec())
}

/// The recommendation networks bound to one graph.
pub struct BoundRecommender<'g> {
    dims: RecommenderDims,
    embeddings: Bound<'g>,
    gru: Bound<'g>,
    post_fusion: Bound<'g>,
}

impl<'g> BoundRecommender<'g> {
    pub fn new(dims: RecommenderDims, embeddings: Bound<'g>, gru: Bound<'g>, post_fusion: Bound<'g>) -> Self {
        Self { dims, embeddings, gru, post_fusion }
    }

    /// GRU over each history, oldest first. Shorter histories are left-padded
    /// and the padded steps leave the state untouched, so every row equals
    /// its own unpadded run. Returns `batch × gru_hidden`.
    pub fn encode_history(&self, graph: &'g Graph, histories: &[&[usize]]) -> Result<Var<'g>> {
        let d = &self.dims;
        for h in histories {
            if let Some(&bad) = h.iter().find(|&&i| i >= d.catalog_size) {
                return Err(Error::OutOfRange { what: "history item", index: bad, bound: d.catalog_size });
            }
        }
        let batch = histories.len();
        let longest = histories.iter().map(|h| h.len()).max().unwrap_or(0);
        let mut h = graph.constant(Tensor::zeros(&[batch.max(1), d.gru_hidden]));
        let table = self.embeddings.get("item")?;
        let spec = d.gru_spec();
        for k in 0..longest {
            let mut items = Vec::with_capacity(batch);
            let mut mask = Vec::with_capacity(batch * d.gru_hidden);
            let mut all_active = true;
            for hist in histories {
                let offset = longest - hist.len();
                let active = k >= offset;
                all_active &= active;
                items.push(if active { hist[k - offset] } else { 0 });
                mask.extend(std::iter::repeat_n(f64::from(u8::from(active)), d.gru_hidden));
            }
            let next = spec.step(&self.gru, h, table.gather_rows(&items)?)?;
            h = if all_active {
                next
            } else {
                // m ⊙ next + (1 − m) ⊙ h keeps both branches bit-exact
                let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
                let m = graph.constant(Tensor::matrix(batch, d.gru_hidden, mask)?);
                let keep = graph.constant(Tensor::matrix(batch, d.gru_hidden, keep)?);
                m.mul(next)?.add(keep.mul(h)?)?
            };
        }
        Ok(h)
    }

    pub fn fuse(&self, hidden: Var<'g>, z: Var<'g>, context: Var<'g>) -> Result<Var<'g>> {
        let d = &self.dims;
        let widths = [(hidden, d.gru_hidden, "hidden"), (z, d.latent_dim, "z"), (context, d.context_dim, "context")];
        for (v, w, what) in widths {
            let cols = v.value().cols();
            if cols != w {
                return Err(Error::shape(format!("fuse {what}"), w, cols));
            }
        }
        let input = Var::concat(&[hidden, z, context])?;
        d.post_fusion_spec().forward(&self.post_fusion, input, "post-fusion")
    }

    /// `batch × catalog` scores `user_repr · outputᵀ`.
    pub fn logits(&self, user_repr: Var<'g>) -> Result<Var<'g>> {
        let cols = user_repr.value().cols();
        if cols != self.dims.embedding_dim {
            return Err(Error::shape("policy input", self.dims.embedding_dim, cols));
        }
        user_repr.matmul_bt(self.embeddings.get("output")?)
    }
}

/// Intent module and recommender trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentRecommender {
    pub variant: Variant,
    pub intent: IntentModule,
    pub recommender: RecommenderParams,
}

/// Names of the six parameter sets, in [`IntentRecommender::param_sets`]
/// order.
pub const PARAM_SET_NAMES: [&str; 6] = [
    "intent.prior",
    "intent.encoder",
    "intent.decoder",
    "recommender.embeddings",
    "recommender.gru",
    "recommender.post_fusion",
];

impl IntentRecommender {
    pub fn init(
        config: &ModelConfig,
        variant: Variant,
        x_dim: usize,
        y_dim: usize,
        context_dim: usize,
        catalog_size: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let dims = IntentDims { x: x_dim, y: y_dim, z: config.latent_dim, hidden: config.intent_hidden.clone() };
        let clip = if config.soft_clip { Some(ClipBounds::new(config.clip_lower, config.clip_upper)?) } else { None };
        let intent = IntentModule::init_scoped(
            dims,
            clip,
            config.init_epsilon,
            config.init_scope,
            stream_seed(seed, Stream::ModelInit, 0),
        )?;
        let rec_dims = RecommenderDims {
            catalog_size,
            embedding_dim: config.embedding_dim,
            gru_hidden: config.gru_hidden,
            latent_dim: config.latent_dim,
            context_dim,
            post_fusion_hidden: config.post_fusion_hidden.clone(),
        };
        let recommender = RecommenderParams::init(rec_dims, stream_seed(seed, Stream::ModelInit, 1))?;
        Ok(Self { variant, intent, recommender })
    }

    pub fn param_sets(&self) -> [&ParameterSet; 6] {
        let [p, e, d] = self.intent.param_sets();
        let [m, g, f] = self.recommender.param_sets();
        [p, e, d, m, g, f]
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParameterSet; 6] {
        let [p, e, d] = self.intent.param_sets_mut();
        let [m, g, f] = self.recommender.param_sets_mut();
        [p, e, d, m, g, f]
    }

    pub fn context_dim(&self) -> usize {
        self.recommender.dims.context_dim
    }

    /// The `z` fed to the recommender: a detached draw from `p(z|x)` (or its
    /// mean), or zeros for the control variant.
    pub fn serving_z<'g>(
        &self,
        graph: &'g Graph,
        prior: &GaussianVars<'g>,
        noise: Var<'g>,
        use_mean: bool,
    ) -> Result<Var<'g>> {
        Ok(match self.variant {
            Variant::Control => {
                let rows = prior.mean.value().rows();
                graph.constant(Tensor::zeros(&[rows, self.intent.dims.z]))
            }
            Variant::Experiment if use_mean => prior.mean.stop_gradient(),
            Variant::Experiment => prior.sample(noise)?.stop_gradient(),
        })
    }
}
