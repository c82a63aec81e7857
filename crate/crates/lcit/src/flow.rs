//! Conditional Gaussian-mixture normalizing flow: three MLP heads map the
//! conditioning vector z to per-component means, log-variances, and mixture
//! weights. The forward transform u(x, z) = Σᵢ wᵢ(z)·Φᵢ(x|z) is a strictly
//! increasing CDF mixture, so Φ⁻¹(u) yields a marginally standard-normal
//! latent once the mixture fits the conditional density.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, LayerOrder, Mode, MlpHead, MlpHeadRecord};
use crate::numerics::{log_sum_exp, normal_logpdf, phi, std_normal_icdf, Probability};
use crate::rng::rng_from;

/// log σ² is clamped to this band before exponentiation.
pub const LOGVAR_CLAMP: f64 = 7.0;
/// u is clamped into [U_CLAMP, 1 - U_CLAMP] before the quantile map.
pub const U_CLAMP: f64 = 1e-6;

pub const DEFAULT_COMPONENTS: usize = 32;
pub const DEFAULT_HIDDEN: usize = 4;

/// Training hyperparameters; defaults follow the fixed settings used
/// throughout the experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub components: usize,
    pub hidden_dim: usize,
    pub layer_order: LayerOrder,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            weight_decay: 5e-5,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            val_fraction: 0.30,
            components: DEFAULT_COMPONENTS,
            hidden_dim: DEFAULT_HIDDEN,
            layer_order: LayerOrder::BatchNormThenRelu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in (0,1)".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.components == 0 || self.hidden_dim == 0 || self.max_epochs == 0 {
            return Err(Error::Config("components, hidden_dim and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// All learnable state of one conditional flow.
#[derive(Debug, Clone)]
pub struct FlowParameters {
    pub k: usize,
    /// Dimension of the conditioning set; 0 makes the flow unconditional
    /// (heads consume a constant dummy input).
    pub d: usize,
    pub head_mu: MlpHead,
    pub head_logvar: MlpHead,
    pub head_weights: MlpHead,
}

/// Per-sample conditional mixture: n×k means, variances, weights.
#[derive(Debug, Clone)]
pub struct MixtureParameters {
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
    pub weights: Array2<f64>,
}

/// Inferred latents; `u` keeps the pre-clamp transform values for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct LatentSeries {
    pub epsilon: Vec<f64>,
    pub u: Vec<f64>,
}

/// Per-epoch log-likelihoods from one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loglik: Vec<f64>,
    pub val_loglik: Vec<f64>,
    pub best_epoch: usize,
    pub retried_with_halved_lr: bool,
}

/// Gradients of the mean conditional log-likelihood w.r.t. the flat
/// parameters of each head.
#[derive(Debug, Clone)]
pub struct FlowGradients {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRecord {
    pub version: u32,
    pub k: usize,
    pub d: usize,
    pub head_mu: MlpHeadRecord,
    pub head_logvar: MlpHeadRecord,
    pub head_weights: MlpHeadRecord,
}

impl FlowParameters {
    pub fn new(k: usize, d: usize, hidden_dim: usize, order: LayerOrder, seed: u64) -> Self {
        let input_dim = d.max(1);
        let mut rng = rng_from(seed, 0xF10A);
        FlowParameters {
            k,
            d,
            head_mu: MlpHead::new(input_dim, hidden_dim, k, order, &mut rng),
            head_logvar: MlpHead::new(input_dim, hidden_dim, k, order, &mut rng),
            head_weights: MlpHead::new(input_dim, hidden_dim, k, order, &mut rng),
        }
    }

    /// Frozen single-component standard-normal flow: u = Φ(x), ε ≈ x.
    pub fn identity(d: usize) -> Self {
        let input_dim = d.max(1);
        FlowParameters {
            k: 1,
            d,
            head_mu: MlpHead::constant(input_dim, &[0.0]),
            head_logvar: MlpHead::constant(input_dim, &[0.0]),
            head_weights: MlpHead::constant(input_dim, &[0.0]),
        }
    }

    /// Frozen flow emitting fixed per-component means, log-variances, and
    /// weight logits for every z.
    pub fn frozen(d: usize, means: &[f64], logvars: &[f64], logits: &[f64]) -> Self {
        assert_eq!(means.len(), logvars.len());
        assert_eq!(means.len(), logits.len());
        let input_dim = d.max(1);
        FlowParameters {
            k: means.len(),
            d,
            head_mu: MlpHead::constant(input_dim, means),
            head_logvar: MlpHead::constant(input_dim, logvars),
            head_weights: MlpHead::constant(input_dim, logits),
        }
    }

    /// Map a conditioning matrix to head input; d = 0 becomes a constant
    /// one-column dummy input.
    pub fn conditioning_input(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.d {
            return Err(Error::Shape(format!(
                "conditioning matrix has {} columns, flow expects {}",
                z.ncols(),
                self.d
            )));
        }
        if self.d == 0 {
            Ok(Array2::ones((z.nrows(), 1)))
        } else {
            Ok(z.clone())
        }
    }

    /// Conditional mixture parameters for a batch. Train mode uses batch
    /// statistics and updates the heads' running statistics.
    pub fn mixture_params(&mut self, z: &Array2<f64>, mode: Mode) -> Result<MixtureParameters> {
        let inputs = self.conditioning_input(z)?;
        let mu = self.head_mu.forward(&inputs, mode)?;
        let logvar = self.head_logvar.forward(&inputs, mode)?;
        let logits = self.head_weights.forward(&inputs, mode)?;
        Self::assemble(mu, logvar, logits)
    }

    /// Mixture parameters without mutating any state.
    pub fn mixture_params_stateless(&self, z: &Array2<f64>, mode: Mode) -> Result<MixtureParameters> {
        let (mu, logvar, logits) = self.raw_head_outputs(z, mode)?;
        Self::assemble(mu, logvar, logits)
    }

    fn raw_head_outputs(
        &self,
        z: &Array2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let inputs = self.conditioning_input(z)?;
        let train = mode == Mode::Train;
        Ok((
            self.head_mu.forward_stateless(&inputs, train),
            self.head_logvar.forward_stateless(&inputs, train),
            self.head_weights.forward_stateless(&inputs, train),
        ))
    }

    fn assemble(
        mu: Array2<f64>,
        logvar: Array2<f64>,
        logits: Array2<f64>,
    ) -> Result<MixtureParameters> {
        if mu.iter().chain(logvar.iter()).chain(logits.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite head output".into()));
        }
        let variances = logvar.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP).exp());
        let weights = softmax_rows(&logits);
        Ok(MixtureParameters {
            means: mu,
            variances,
            weights,
        })
    }

    /// Mean conditional log-likelihood (1/n) Σ log Σᵢ wᵢ(z)·N(x; μᵢ, σᵢ²).
    pub fn conditional_loglik(&self, x: &[f64], z: &Array2<f64>, mode: Mode) -> Result<f64> {
        check_xz(x, z)?;
        let params = self.mixture_params_stateless(z, mode)?;
        mixture_loglik(x, &params).map(|per_sample| crate::numerics::mean(&per_sample))
    }

    /// Mean conditional log-likelihood together with its analytic gradients
    /// w.r.t. all three heads' parameters, under train-mode statistics.
    pub fn loglik_gradients(&self, x: &[f64], z: &Array2<f64>) -> Result<(f64, FlowGradients)> {
        check_xz(x, z)?;
        let n = x.len();
        let inputs = self.conditioning_input(z)?;
        let (mu, logvar_raw, logits) = self.raw_head_outputs(z, Mode::Train)?;
        let params = Self::assemble(mu.clone(), logvar_raw.clone(), logits)?;

        let per_sample = mixture_loglik(x, &params)?;
        let loglik = crate::numerics::mean(&per_sample);
        let k = self.k;

        // Upstream gradients of the mean log-likelihood w.r.t. raw head
        // outputs, via posterior responsibilities.
        let mut up_mu = Array2::zeros((n, k));
        let mut up_logvar = Array2::zeros((n, k));
        let mut up_logits = Array2::zeros((n, k));
        let scale = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..k {
                let m = params.means[[i, j]];
                let var = params.variances[[i, j]];
                let w = params.weights[[i, j]];
                let lp = normal_logpdf(x[i], m, var)?;
                let resp = (w.ln() + lp - per_sample[i]).exp();
                let diff = x[i] - m;
                up_mu[[i, j]] = scale * resp * diff / var;
                // Zero where the log-variance clamp is active.
                let raw = logvar_raw[[i, j]];
                up_logvar[[i, j]] = if raw.abs() < LOGVAR_CLAMP {
                    scale * resp * (-0.5 + diff * diff / (2.0 * var))
                } else {
                    0.0
                };
                up_logits[[i, j]] = scale * (resp - w);
            }
        }

        Ok((
            loglik,
            FlowGradients {
                mu: self.head_mu.gradients(&inputs, &up_mu)?.flat(),
                logvar: self.head_logvar.gradients(&inputs, &up_logvar)?.flat(),
                weights: self.head_weights.gradients(&inputs, &up_logits)?.flat(),
            },
        ))
    }

    /// Latent inference over the whole dataset in eval mode:
    /// u = Σᵢ wᵢ(z)·Φ((x − μᵢ(z))/σᵢ(z)), clamped, then ε = Φ⁻¹(u).
    pub fn infer_latents(&self, x: &[f64], z: &Array2<f64>) -> Result<LatentSeries> {
        check_xz(x, z)?;
        let params = self.mixture_params_stateless(z, Mode::Eval)?;
        let mut u_raw = Vec::with_capacity(x.len());
        let mut epsilon = Vec::with_capacity(x.len());
        for (i, &xi) in x.iter().enumerate() {
            let mut u = 0.0;
            for j in 0..self.k {
                let sd = params.variances[[i, j]].sqrt();
                u += params.weights[[i, j]] * phi((xi - params.means[[i, j]]) / sd);
            }
            u_raw.push(u);
            let clamped = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
            epsilon.push(std_normal_icdf(Probability::new(clamped)?)?);
        }
        Ok(LatentSeries { epsilon, u: u_raw })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.head_mu.flat_params();
        out.extend(self.head_logvar.flat_params());
        out.extend(self.head_weights.flat_params());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let a = self.head_mu.flat_params().len();
        let b = self.head_logvar.flat_params().len();
        let c = self.head_weights.flat_params().len();
        if flat.len() != a + b + c {
            return Err(Error::Shape("flow flat parameter length mismatch".into()));
        }
        self.head_mu.set_flat_params(&flat[..a])?;
        self.head_logvar.set_flat_params(&flat[a..a + b])?;
        self.head_weights.set_flat_params(&flat[a + b..])?;
        Ok(())
    }

    pub fn to_record(&self) -> FlowRecord {
        FlowRecord {
            version: 1,
            k: self.k,
            d: self.d,
            head_mu: self.head_mu.to_record(),
            head_logvar: self.head_logvar.to_record(),
            head_weights: self.head_weights.to_record(),
        }
    }

    pub fn from_record(rec: &FlowRecord) -> Result<Self> {
        if rec.version != 1 {
            return Err(Error::Config(format!("unsupported flow record version {}", rec.version)));
        }
        Ok(FlowParameters {
            k: rec.k,
            d: rec.d,
            head_mu: MlpHead::from_record(&rec.head_mu)?,
            head_logvar: MlpHead::from_record(&rec.head_logvar)?,
            head_weights: MlpHead::from_record(&rec.head_weights)?,
        })
    }
}

fn check_xz(x: &[f64], z: &Array2<f64>) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    if x.len() != z.nrows() {
        return Err(Error::Shape(format!(
            "x has {} entries but z has {} rows",
            x.len(),
            z.nrows()
        )));
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Per-sample log-likelihoods under a conditional mixture.
fn mixture_loglik(x: &[f64], params: &MixtureParameters) -> Result<Vec<f64>> {
    let k = params.means.ncols();
    let mut out = Vec::with_capacity(x.len());
    let mut lps = vec![0.0; k];
    let mut lws = vec![0.0; k];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..k {
            lps[j] = normal_logpdf(xi, params.means[[i, j]], params.variances[[i, j]])?;
            lws[j] = params.weights[[i, j]].ln();
        }
        out.push(log_sum_exp(&lps, &lws)?);
    }
    Ok(out)
}

/// Train a conditional flow by minibatch Adam on the negative conditional
/// log-likelihood, with a 70/30 train/validation split and early stopping on
/// validation log-likelihood. Returns the best-validation parameters.
pub fn train_cnf(x: &[f64], z: &Array2<f64>, config: &TrainConfig) -> Result<(FlowParameters, TrainReport)> {
    config.validate()?;
    check_xz(x, z)?;
    if x.len() < 20 {
        return Err(Error::TooFewSamples { got: x.len(), min: 20 });
    }
    match train_once(x, z, config, config.learning_rate) {
        Ok(result) => Ok(result),
        Err(Error::Divergence(_)) => {
            let mut result = train_once(x, z, config, config.learning_rate / 2.0)?;
            result.1.retried_with_halved_lr = true;
            Ok(result)
        }
        Err(other) => Err(other),
    }
}

fn train_once(
    x: &[f64],
    z: &Array2<f64>,
    config: &TrainConfig,
    learning_rate: f64,
) -> Result<(FlowParameters, TrainReport)> {
    let n = x.len();
    let (train_idx, val_idx) = crate::data::split_indices(n, config.val_fraction, config.seed)?;

    let mut flow = FlowParameters::new(
        config.components,
        z.ncols(),
        config.hidden_dim,
        config.layer_order,
        config.seed,
    );
    let mut adam_mu = AdamState::new(flow.head_mu.param_layout(), learning_rate, config.weight_decay);
    let mut adam_lv = AdamState::new(flow.head_logvar.param_layout(), learning_rate, config.weight_decay);
    let mut adam_w = AdamState::new(flow.head_weights.param_layout(), learning_rate, config.weight_decay);

    let gather = |idx: &[usize]| -> (Vec<f64>, Array2<f64>) {
        let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let zs = z.select(Axis(0), idx);
        (xs, zs)
    };
    let (val_x, val_z) = gather(&val_idx);

    let mut shuffle_rng = rng_from(config.seed, 0x5417);
    let mut report = TrainReport::default();
    let mut best_val = f64::NEG_INFINITY;
    let mut best: Option<FlowParameters> = None;
    let mut epochs_since_improvement = 0;

    let mut order: Vec<usize> = train_idx.clone();
    for epoch in 0..config.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loglik = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (bx, bz) = gather(chunk);
            let (loglik, grads) = flow.loglik_gradients(&bx, &bz)?;
            if !loglik.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            // Update running batchnorm statistics for this batch.
            flow.mixture_params(&bz, Mode::Train)?;

            // Ascent on the log-likelihood == Adam descent on its negation.
            let neg = |g: &[f64]| -> Vec<f64> { g.iter().map(|v| -v).collect() };
            let mut p = flow.head_mu.flat_params();
            adam_mu.step(&mut p, &neg(&grads.mu))?;
            flow.head_mu.set_flat_params(&p)?;
            let mut p = flow.head_logvar.flat_params();
            adam_lv.step(&mut p, &neg(&grads.logvar))?;
            flow.head_logvar.set_flat_params(&p)?;
            let mut p = flow.head_weights.flat_params();
            adam_w.step(&mut p, &neg(&grads.weights))?;
            flow.head_weights.set_flat_params(&p)?;

            epoch_loglik += loglik;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::TooFewSamples { got: train_idx.len(), min: 2 });
        }
        report.train_loglik.push(epoch_loglik / batches as f64);

        let val_ll = flow.conditional_loglik(&val_x, &val_z, Mode::Eval)?;
        if !val_ll.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        report.val_loglik.push(val_ll);

        if val_ll > best_val {
            best_val = val_ll;
            best = Some(flow.clone());
            report.best_epoch = epoch;
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= config.patience {
                break;
            }
        }
    }

    Ok((best.expect("at least one epoch ran"), report))
}
