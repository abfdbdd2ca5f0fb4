//! Adversarial split training on the active party: a weight-clipped
//! Wasserstein critic and a generator on top of the cut layer, plus a
//! randomized-response penalty. The gradient broadcast to passive parties
//! is the sum of the batch-normalized GAN and penalty gradients.
//!
//! The same loop drives the baselines in [`crate::baselines`]; only the
//! cut-gradient rule changes with [`MethodKind`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{max_norm_perturb, vanilla_cut_gradient, MethodKind};
use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::nn::{
    clip_weights, l2_normalize, Activation, AdamState, ForwardCache, Gradients, Init, Matrix, MlpParams,
    DEFAULT_LEAKY_SLOPE,
};
use crate::protocol::{Aggregator, Federation, PassiveParty};

/// Cut-layer values are clamped into `[CLAMP, 1 - CLAMP]` before any log.
pub const CLAMP: f64 = 1e-7;

/// How often the randomized-response offsets are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ResponseSampling {
    #[default]
    PerBatch,
    PerEpoch,
    /// One draw per example, held for the whole run.
    Once,
}

impl std::str::FromStr for ResponseSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "per_batch" | "batch" => Ok(Self::PerBatch),
            "per_epoch" | "epoch" => Ok(Self::PerEpoch),
            "once" => Ok(Self::Once),
            other => Err(Error::InvalidParameter(format!("unknown response sampling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GafmConfig {
    /// Half-width of the randomized response around 0.5, in `[0, 0.5]`.
    pub delta: f64,
    /// Standard deviation of the noise added to real labels for the critic.
    pub sigma: f64,
    /// Weight of the normalized penalty gradient.
    pub gamma: f64,
    /// Critic weight-clipping bound.
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub lr_l: f64,
    pub seed: u64,
    pub local_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub init: Init,
    pub response_sampling: ResponseSampling,
}

impl Default for GafmConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            sigma: 0.01,
            gamma: 1.0,
            clip: 0.1,
            epochs: 300,
            batch_size: 1028,
            lr_d: 1e-4,
            lr_g: 1e-4,
            lr_l: 1e-4,
            seed: 0,
            local_hidden: vec![32, 16],
            generator_hidden: vec![32, 16],
            critic_hidden: vec![64, 32, 16],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init: Init::default(),
            response_sampling: ResponseSampling::PerBatch,
        }
    }
}

impl GafmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=0.5).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 0.5]", self.delta));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        for (name, lr) in [("lr_d", self.lr_d), ("lr_g", self.lr_g), ("lr_l", self.lr_l)] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky slope must be non-negative".into());
        }
        Ok(())
    }
}

/// Label-holding participant: labels, generator, critic and their optimizers.
#[derive(Debug, Clone)]
pub struct ActiveState {
    pub labels: Vec<u8>,
    pub generator: MlpParams<f64>,
    pub critic: MlpParams<f64>,
    pub generator_adam: AdamState<f64>,
    pub critic_adam: AdamState<f64>,
}

impl ActiveState {
    pub fn new<R: Rng + ?Sized>(labels: Vec<u8>, config: &GafmConfig, rng: &mut R) -> Result<Self> {
        let slope = config.leaky_slope;
        let hidden = |ws: &[usize]| -> Vec<(usize, Activation)> {
            ws.iter().map(|&w| (w, Activation::LeakyRelu { slope })).collect()
        };
        let mut gen_layers = hidden(&config.generator_hidden);
        gen_layers.push((1, Activation::Sigmoid));
        let mut critic_layers = hidden(&config.critic_hidden);
        critic_layers.push((1, Activation::Identity));
        let generator = MlpParams::init(1, &gen_layers, config.init, rng)?;
        let critic = MlpParams::init(1, &critic_layers, config.init, rng)?;
        Ok(Self::with_models(labels, generator, critic))
    }

    pub fn with_models(labels: Vec<u8>, generator: MlpParams<f64>, critic: MlpParams<f64>) -> Self {
        Self {
            labels,
            generator_adam: AdamState::new(&generator),
            critic_adam: AdamState::new(&critic),
            generator,
            critic,
        }
    }
}

/// Pseudo-labels `0.5 + u` for positives and `0.5 - u` for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedResponse {
    pub values: Vec<f64>,
    pub delta: f64,
}

/// Draws a fresh `u ~ Uniform(0, delta)` per example.
pub fn draw_randomized_response<R: Rng + ?Sized>(
    labels: &[u8],
    delta: f64,
    rng: &mut R,
) -> Result<RandomizedResponse> {
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta {delta} outside [0, 0.5]")));
    }
    let values = labels
        .iter()
        .map(|&l| {
            let u = if delta > 0.0 { rng.gen_range(0.0..delta) } else { 0.0 };
            match l {
                1 => Ok(0.5 + u),
                0 => Ok(0.5 - u),
                other => Err(Error::InvalidParameter(format!("label {other} is not 0/1"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomizedResponse { values, delta })
}

/// Wasserstein critic objective: `mean(d_real) - mean(d_fake)`.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    m(d_real) - m(d_fake)
}

#[inline]
fn clamp_unit(y: f64) -> f64 {
    y.clamp(CLAMP, 1.0 - CLAMP)
}

/// Soft-target binary cross entropy of the cut layer against `targets`.
pub fn penalty_loss(y_tilde: &[f64], targets: &[f64]) -> f64 {
    let n = y_tilde.len().max(1) as f64;
    -y_tilde
        .iter()
        .zip(targets)
        .map(|(&y, &t)| {
            let y = clamp_unit(y);
            t * y.ln() + (1.0 - t) * (1.0 - y).ln()
        })
        .sum::<f64>()
        / n
}

/// Per-example derivative of [`penalty_loss`]: `(y - t) / (n y (1 - y))`.
pub fn penalty_grad(y_tilde: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = y_tilde.len() as f64;
    y_tilde
        .iter()
        .zip(targets)
        .map(|(&y, &t)| {
            let y = clamp_unit(y);
            (y - t) / (n * y * (1.0 - y))
        })
        .collect()
}

/// Broadcast gradient: `normalize(gan) + gamma * normalize(penalty)`, normalized over the batch.
pub fn cut_gradient(grad_gan: &[f64], grad_penalty: &[f64], gamma: f64) -> Vec<f64> {
    debug_assert_eq!(grad_gan.len(), grad_penalty.len());
    let g = l2_normalize(grad_gan);
    let p = l2_normalize(grad_penalty);
    g.iter().zip(&p).map(|(a, b)| a + gamma * b).collect()
}

fn column(v: &[f64]) -> Matrix<f64> {
    Matrix::column(v.to_vec())
}

/// One ascent step of the critic on the GAN objective, then weight clipping.
/// Returns the objective before the step.
pub fn discriminator_step<R: Rng + ?Sized>(
    active: &mut ActiveState,
    y_tilde: &[f64],
    labels: &[u8],
    config: &GafmConfig,
    rng: &mut R,
) -> Result<f64> {
    if y_tilde.len() != labels.len() {
        return Err(Error::Shape("cut batch and label batch differ".into()));
    }
    let n = y_tilde.len() as f64;
    let noise = Normal::new(0.0, config.sigma)
        .map_err(|e| Error::InvalidParameter(format!("sigma: {e}")))?;
    let real: Vec<f64> = labels.iter().map(|&l| f64::from(l) + noise.sample(rng)).collect();
    let fake = active.generator.predict(&column(y_tilde))?;

    let (d_real, cache_real) = active.critic.forward(&column(&real))?;
    let (d_fake, cache_fake) = active.critic.forward(&fake)?;
    let loss = gan_loss(d_real.as_slice(), d_fake.as_slice());

    // descend on -loss
    let up_real = Matrix::column(vec![-1.0 / n; real.len()]);
    let up_fake = Matrix::column(vec![1.0 / n; real.len()]);
    let (mut grads, _) = active.critic.backward(&cache_real, &up_real)?;
    let (g_fake, _) = active.critic.backward(&cache_fake, &up_fake)?;
    grads.add_assign(&g_fake)?;
    active.critic_adam.step(&mut active.critic, &grads, config.lr_d)?;
    clip_weights(&mut active.critic, config.clip);
    Ok(loss)
}

struct GeneratorPass {
    param_grads: Gradients<f64>,
    input_grad: Vec<f64>,
    prediction: Vec<f64>,
}

/// Backpropagates `-mean(D(G(y)))` through the critic and the generator.
fn generator_pass(active: &ActiveState, y_tilde: &[f64]) -> Result<GeneratorPass> {
    let n = y_tilde.len() as f64;
    let (y_hat, gen_cache): (Matrix<f64>, ForwardCache<f64>) =
        active.generator.forward(&column(y_tilde))?;
    let (_, critic_cache) = active.critic.forward(&y_hat)?;
    let upstream = Matrix::column(vec![-1.0 / n; y_tilde.len()]);
    let (_, d_yhat) = active.critic.backward(&critic_cache, &upstream)?;
    let (param_grads, d_input) = active.generator.backward(&gen_cache, &d_yhat)?;
    Ok(GeneratorPass {
        param_grads,
        input_grad: d_input.into_vec(),
        prediction: y_hat.into_vec(),
    })
}

/// One descent step of the generator on the GAN objective.
pub fn generator_step(active: &mut ActiveState, y_tilde: &[f64], lr: f64) -> Result<()> {
    let pass = generator_pass(active, y_tilde)?;
    active
        .generator_adam
        .step(&mut active.generator, &pass.param_grads, lr)
}

/// Gradient of the generator parameters for `-mean(D(G(y)))`, without stepping.
pub fn generator_param_grads(active: &ActiveState, y_tilde: &[f64]) -> Result<Gradients<f64>> {
    Ok(generator_pass(active, y_tilde)?.param_grads)
}

/// `d L_GAN / d y_tilde` per example, together with the predictions `G(y_tilde)`.
pub fn gan_cut_grad(active: &ActiveState, y_tilde: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pass = generator_pass(active, y_tilde)?;
    Ok((pass.input_grad, pass.prediction))
}

/// Per-example audit record from the final training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub index: usize,
    pub label: u8,
    pub y_tilde: f64,
    pub y_hat: f64,
    /// The gradient actually broadcast to the passive side.
    pub grad_total: f64,
    /// Normalized GAN component, when the method has one.
    pub grad_gan: Option<f64>,
    /// `gamma`-weighted normalized penalty component, when the method has one.
    pub grad_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_auc: f64,
    /// AUC of the raw cut values, before the generator.
    pub cut_auc: f64,
    pub mean_prediction: f64,
    pub gan_loss: f64,
    pub penalty_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub epochs: Vec<EpochMetrics>,
    pub records: Vec<CutRecord>,
}

/// Passive federation plus active party, trained under one method.
#[derive(Debug, Clone)]
pub struct SplitModel {
    pub method: MethodKind,
    pub federation: Federation,
    pub active: ActiveState,
    /// Predict `1 - G(y)` instead of `G(y)`. The Wasserstein objective only
    /// matches marginals, so the generator may come out decreasing; the
    /// active party fixes the orientation from its training labels.
    pub flip_head: bool,
}

impl SplitModel {
    /// Seeded initialization: local models in party order, then generator, then critic.
    pub fn init(
        method: MethodKind,
        train_features: &Matrix<f64>,
        labels: Vec<u8>,
        partition: &FeaturePartition,
        config: &GafmConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train_features.rows() != labels.len() {
            return Err(Error::Shape("feature rows and labels differ".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let parties = partition
            .parties
            .iter()
            .enumerate()
            .map(|(id, cols)| {
                PassiveParty::new(
                    id,
                    train_features,
                    cols.clone(),
                    &config.local_hidden,
                    config.leaky_slope,
                    config.init,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregator = Aggregator::for_parties(parties.len());
        let federation = Federation::new(parties, aggregator)?;
        let active = ActiveState::new(labels, config, &mut rng)?;
        Ok(Self {
            method,
            federation,
            active,
            flip_head: false,
        })
    }

    /// Final predictions: `G(y_tilde)` for generator methods, `y_tilde` otherwise.
    pub fn predict(&self, features: &Matrix<f64>) -> Result<Vec<f64>> {
        let y = self.federation.cut_values(features)?;
        self.head(&y)
    }

    fn head(&self, y_tilde: &[f64]) -> Result<Vec<f64>> {
        if !self.method.uses_generator() {
            return Ok(y_tilde.to_vec());
        }
        let mut out = self.active.generator.predict(&column(y_tilde))?.into_vec();
        if self.flip_head {
            out.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        Ok(out)
    }

    /// Sets the head orientation so that training AUC is at least 0.5.
    pub fn orient(&mut self) -> Result<f64> {
        if !self.method.uses_generator() {
            return Ok(auc(&self.federation.train_cut_values()?, &self.active.labels)?);
        }
        self.flip_head = false;
        let raw = auc(&self.head(&self.federation.train_cut_values()?)?, &self.active.labels)?;
        self.flip_head = raw < 0.5;
        Ok(raw.max(1.0 - raw))
    }
}

/// Near-equal contiguous batches: `round(n / batch_size)` of them, at least one.
pub fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let count = ((n as f64 / batch_size as f64).round() as usize).max(1).min(n.max(1));
    (0..count)
        .map(|b| (b * n / count, (b + 1) * n / count))
        .collect()
}

fn response_targets<R: Rng + ?Sized>(
    per_epoch: Option<&[f64]>,
    idx: &[usize],
    y_batch: &[u8],
    delta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(match per_epoch {
        Some(all) => idx.iter().map(|&i| all[i]).collect(),
        None => draw_randomized_response(y_batch, delta, rng)?.values,
    })
}

/// Runs `config.epochs` epochs of split training under `model.method`.
pub fn train(model: &mut SplitModel, config: &GafmConfig) -> Result<TrainOutput> {
    config.validate()?;
    let method = model.method;
    let n = model.federation.num_examples();
    let labels = model.active.labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut records = Vec::new();
    let mut first_gan_update = true;
    let run_response = match config.response_sampling {
        ResponseSampling::Once => Some(draw_randomized_response(&labels, config.delta, &mut rng)?.values),
        _ => None,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == config.epochs;
        let epoch_response = match config.response_sampling {
            ResponseSampling::PerEpoch => {
                Some(draw_randomized_response(&labels, config.delta, &mut rng)?.values)
            }
            ResponseSampling::Once => run_response.clone(),
            ResponseSampling::PerBatch => None,
        };
        let (mut gan_sum, mut pen_sum, mut batches) = (0.0, 0.0, 0usize);

        for (b, &(lo, hi)) in batch_bounds(n, config.batch_size).iter().enumerate() {
            let idx = &order[lo..hi];
            let y_batch: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let y_tilde = model.federation.forward_round(epoch, b, idx)?;


            let mut gan_part = None;
            let mut pen_part = None;
            let mut y_hat = y_tilde.clone();
            let total: Vec<f64> = match method {
                MethodKind::Gafm | MethodKind::GanOnly => {
                    // The very first critic/generator update sees Gaussian cut values.
                    let gan_input: Vec<f64> = if first_gan_update {
                        first_gan_update = false;
                        (0..idx.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
                    } else {
                        y_tilde.clone()
                    };
                    let active = &mut model.active;
                    gan_sum += discriminator_step(active, &gan_input, &y_batch, config, &mut rng)?;
                    generator_step(active, &gan_input, config.lr_g)?;
                    let (g_gan, pred) = gan_cut_grad(active, &y_tilde)?;
                    y_hat = pred;
                    let gan_n = l2_normalize(&g_gan);
                    if method == MethodKind::Gafm {
                        let targets =
                            response_targets(epoch_response.as_deref(), idx, &y_batch, config.delta, &mut rng)?;
                        pen_sum += penalty_loss(&y_tilde, &targets);
                        let pen_n: Vec<f64> = l2_normalize(&penalty_grad(&y_tilde, &targets))
                            .into_iter()
                            .map(|v| config.gamma * v)
                            .collect();
                        let total = gan_n.iter().zip(&pen_n).map(|(a, b)| a + b).collect();
                        gan_part = Some(gan_n);
                        pen_part = Some(pen_n);
                        total
                    } else {
                        gan_part = Some(gan_n.clone());
                        gan_n
                    }
                }
                MethodKind::PenaltyOnly => {
                    let targets =
                        response_targets(epoch_response.as_deref(), idx, &y_batch, config.delta, &mut rng)?;
                    pen_sum += penalty_loss(&y_tilde, &targets);
                    let pen_n = l2_normalize(&penalty_grad(&y_tilde, &targets));
                    pen_part = Some(pen_n.clone());
                    pen_n
                }
                MethodKind::Vanilla => vanilla_cut_gradient(&y_tilde, &y_batch),
                MethodKind::MaxNorm => {
                    max_norm_perturb(&vanilla_cut_gradient(&y_tilde, &y_batch), &mut rng)
                }
            };

            if let Some(bad) = total.iter().find(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    message: format!("non-finite cut gradient {bad}"),
                });
            }
            if !(gan_sum.is_finite() && pen_sum.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    message: "non-finite loss".into(),
                });
            }

            if last_epoch {
                for (k, &i) in idx.iter().enumerate() {
                    records.push(CutRecord {
                        index: i,
                        label: labels[i],
                        y_tilde: y_tilde[k],
                        y_hat: y_hat[k],
                        grad_total: total[k],
                        grad_gan: gan_part.as_ref().map(|v| v[k]),
                        grad_penalty: pen_part.as_ref().map(|v| v[k]),
                    });
                }
            }

            model.federation.backward_round(epoch, b, &total, config.lr_l)?;
            batches += 1;
        }

        let cut = model.federation.train_cut_values()?;
        let train_auc = model.orient().unwrap_or(0.5);
        let preds = model.head(&cut)?;
        epochs.push(EpochMetrics {
            epoch,
            train_auc,
            cut_auc: auc(&cut, &labels).unwrap_or(0.5),
            mean_prediction: preds.iter().sum::<f64>() / preds.len().max(1) as f64,
            gan_loss: gan_sum / batches as f64,
            penalty_loss: pen_sum / batches as f64,
        });
    }
    records.sort_by_key(|r| r.index);
    if model.flip_head {
        records.iter_mut().for_each(|r| r.y_hat = 1.0 - r.y_hat);
    }
    Ok(TrainOutput { epochs, records })
}
