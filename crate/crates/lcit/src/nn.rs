//! Minimal feed-forward kernel: one-hidden-layer MLPs with batch
//! normalization and ReLU, analytic gradients, and Adam with decoupled
//! weight decay. No autodiff; the backward pass is written out by hand,
//! including the batch-statistics pathway of batchnorm.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Placement of batchnorm relative to the hidden ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerOrder {
    /// affine -> batchnorm -> ReLU -> affine (default)
    BatchNormThenRelu,
    /// affine -> ReLU -> batchnorm -> affine
    ReluThenBatchNorm,
}

/// One MLP head: input -> hidden (batchnorm + ReLU) -> output.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub order: LayerOrder,
    w1: Array2<f64>, // input_dim x hidden
    b1: Array1<f64>,
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
    w2: Array2<f64>, // hidden x output
    b2: Array1<f64>,
}

/// Gradients for every learnable parameter of a head, in field order.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

struct ForwardCache {
    bn_in: Array2<f64>,    // batchnorm input
    mu: Array1<f64>,       // batch mean per hidden unit
    var: Array1<f64>,      // batch variance per hidden unit
    xhat: Array2<f64>,     // normalized batchnorm input
    hidden: Array2<f64>,   // input to affine-2
    relu_arg: Array2<f64>, // argument that ReLU was applied to
}

fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl MlpHead {
    /// Fresh head with Glorot-uniform weights, zero biases, identity batchnorm.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        order: LayerOrder,
        rng: &mut R,
    ) -> Self {
        MlpHead {
            input_dim,
            hidden_dim,
            output_dim,
            order,
            w1: glorot_uniform(rng, input_dim, hidden_dim),
            b1: Array1::zeros(hidden_dim),
            gamma: Array1::ones(hidden_dim),
            beta: Array1::zeros(hidden_dim),
            running_mean: Array1::zeros(hidden_dim),
            running_var: Array1::ones(hidden_dim),
            w2: glorot_uniform(rng, hidden_dim, output_dim),
            b2: Array1::zeros(output_dim),
        }
    }

    /// Forward pass. Train mode normalizes with batch statistics and updates
    /// the running statistics; eval mode uses the running statistics.
    pub fn forward(&mut self, inputs: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        if mode == Mode::Train {
            if inputs.nrows() < 2 {
                return Err(Error::Shape(
                    "train-mode forward needs a batch of at least 2 rows".into(),
                ));
            }
            let (out, cache) = self.forward_cached(inputs, true);
            self.running_mean = &self.running_mean * BN_MOMENTUM + &cache.mu * (1.0 - BN_MOMENTUM);
            self.running_var = &self.running_var * BN_MOMENTUM + &cache.var * (1.0 - BN_MOMENTUM);
            Ok(out)
        } else {
            let (out, _) = self.forward_cached(inputs, false);
            Ok(out)
        }
    }

    /// Eval-mode forward without touching any state.
    pub fn forward_eval(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        Ok(self.forward_cached(inputs, false).0)
    }

    /// Forward pass without mutating running statistics; `train` selects
    /// batch statistics instead of running statistics.
    pub(crate) fn forward_stateless(&self, inputs: &Array2<f64>, train: bool) -> Array2<f64> {
        self.forward_cached(inputs, train).0
    }

    fn check_inputs(&self, inputs: &Array2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, head expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite MLP input".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &Array2<f64>, train: bool) -> (Array2<f64>, ForwardCache) {
        let n = inputs.nrows();
        let pre = inputs.dot(&self.w1) + &self.b1;

        let bn_in = match self.order {
            LayerOrder::BatchNormThenRelu => pre.clone(),
            LayerOrder::ReluThenBatchNorm => pre.mapv(|v| v.max(0.0)),
        };

        let (mu, var) = if train {
            let mu = bn_in.mean_axis(Axis(0)).expect("nonempty batch");
            let var = bn_in
                .map_axis(Axis(0), |col| {
                    let m = col.mean().unwrap();
                    col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
                })
                .to_owned();
            (mu, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let denom = var.mapv(|v| (v + BN_VAR_FLOOR).sqrt());
        let xhat = (&bn_in - &mu) / &denom;
        let bn_out = &xhat * &self.gamma + &self.beta;

        let (hidden, relu_arg) = match self.order {
            LayerOrder::BatchNormThenRelu => (bn_out.mapv(|v| v.max(0.0)), bn_out),
            LayerOrder::ReluThenBatchNorm => (bn_out, pre.clone()),
        };

        let out = hidden.dot(&self.w2) + &self.b2;
        (
            out,
            ForwardCache {
                bn_in,
                mu,
                var,
                xhat,
                hidden,
                relu_arg,
            },
        )
    }

    /// Gradients of L = Σᵢⱼ upstream[i,j]·output[i,j] w.r.t. every learnable
    /// parameter, using train-mode (batch-statistic) forward semantics.
    pub fn gradients(
        &self,
        inputs: &Array2<f64>,
        upstream: &Array2<f64>,
    ) -> Result<MlpGradients> {
        self.check_inputs(inputs)?;
        let n = inputs.nrows();
        if upstream.nrows() != n || upstream.ncols() != self.output_dim {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                n,
                self.output_dim
            )));
        }
        if n < 2 {
            return Err(Error::Shape(
                "gradients are defined for train-mode batches of at least 2 rows".into(),
            ));
        }

        let (_, cache) = self.forward_cached(inputs, true);

        let d_w2 = cache.hidden.t().dot(upstream);
        let d_b2 = upstream.sum_axis(Axis(0));
        let d_hidden = upstream.dot(&self.w2.t());

        // Walk back through ReLU and batchnorm in the configured order.
        let (d_gamma, d_beta, d_pre) = match self.order {
            LayerOrder::BatchNormThenRelu => {
                let d_bn_out = &d_hidden * &cache.relu_arg.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let (dg, db, d_bn_in) = self.batchnorm_backward(&d_bn_out, &cache);
                (dg, db, d_bn_in)
            }
            LayerOrder::ReluThenBatchNorm => {
                let (dg, db, d_bn_in) = self.batchnorm_backward(&d_hidden, &cache);
                let mask = cache.relu_arg.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                (dg, db, &d_bn_in * &mask)
            }
        };

        let d_w1 = inputs.t().dot(&d_pre);
        let d_b1 = d_pre.sum_axis(Axis(0));

        Ok(MlpGradients {
            w1: d_w1,
            b1: d_b1,
            gamma: d_gamma,
            beta: d_beta,
            w2: d_w2,
            b2: d_b2,
        })
    }

    // Returns (dγ, dβ, d input) including the batch mean/variance pathway.
    fn batchnorm_backward(
        &self,
        d_out: &Array2<f64>,
        cache: &ForwardCache,
    ) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
        let n = cache.bn_in.nrows() as f64;
        let d_gamma = (d_out * &cache.xhat).sum_axis(Axis(0));
        let d_beta = d_out.sum_axis(Axis(0));
        let d_xhat = d_out * &self.gamma;
        let inv_std = cache.var.mapv(|v| 1.0 / (v + BN_VAR_FLOOR).sqrt());

        let sum_dxhat = d_xhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
        let d_in = (d_xhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &inv_std / n;
        (d_gamma, d_beta, d_in)
    }

    /// Parameter groups in flat-vector order: (name, length).
    pub fn param_layout(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("w1", self.input_dim * self.hidden_dim),
            ("b1", self.hidden_dim),
            ("gamma", self.hidden_dim),
            ("beta", self.hidden_dim),
            ("w2", self.hidden_dim * self.output_dim),
            ("b2", self.output_dim),
        ]
    }

    /// All learnable parameters, row-major, in layout order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.gamma.iter());
        out.extend(self.beta.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.param_layout().iter().map(|(_, l)| l).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {total}",
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for target in self.w1.iter_mut() {
            *target = it.next().unwrap();
        }
        for target in self.b1.iter_mut() {
            *target = it.next().unwrap();
        }
        for target in self.gamma.iter_mut() {
            *target = it.next().unwrap();
        }
        for target in self.beta.iter_mut() {
            *target = it.next().unwrap();
        }
        for target in self.w2.iter_mut() {
            *target = it.next().unwrap();
        }
        for target in self.b2.iter_mut() {
            *target = it.next().unwrap();
        }
        Ok(())
    }

    /// Frozen head that outputs a constant row regardless of input: zero
    /// weights, layer-2 bias set to `constants`.
    pub fn constant(input_dim: usize, constants: &[f64]) -> Self {
        let hidden = 1;
        MlpHead {
            input_dim,
            hidden_dim: hidden,
            output_dim: constants.len(),
            order: LayerOrder::BatchNormThenRelu,
            w1: Array2::zeros((input_dim, hidden)),
            b1: Array1::zeros(hidden),
            gamma: Array1::ones(hidden),
            beta: Array1::zeros(hidden),
            running_mean: Array1::zeros(hidden),
            running_var: Array1::ones(hidden),
            w2: Array2::zeros((hidden, constants.len())),
            b2: Array1::from(constants.to_vec()),
        }
    }

    pub fn to_record(&self) -> MlpHeadRecord {
        MlpHeadRecord {
            version: 1,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            order: self.order,
            params: self.flat_params(),
            running_mean: self.running_mean.to_vec(),
            running_var: self.running_var.to_vec(),
        }
    }

    pub fn from_record(rec: &MlpHeadRecord) -> Result<Self> {
        if rec.version != 1 {
            return Err(Error::Config(format!(
                "unsupported parameter record version {}",
                rec.version
            )));
        }
        if rec.running_mean.len() != rec.hidden_dim || rec.running_var.len() != rec.hidden_dim {
            return Err(Error::Shape("running statistics length mismatch".into()));
        }
        let mut head = MlpHead {
            input_dim: rec.input_dim,
            hidden_dim: rec.hidden_dim,
            output_dim: rec.output_dim,
            order: rec.order,
            w1: Array2::zeros((rec.input_dim, rec.hidden_dim)),
            b1: Array1::zeros(rec.hidden_dim),
            gamma: Array1::ones(rec.hidden_dim),
            beta: Array1::zeros(rec.hidden_dim),
            running_mean: Array1::from(rec.running_mean.clone()),
            running_var: Array1::from(rec.running_var.clone()),
            w2: Array2::zeros((rec.hidden_dim, rec.output_dim)),
            b2: Array1::zeros(rec.output_dim),
        };
        head.set_flat_params(&rec.params)?;
        Ok(head)
    }
}

impl MlpGradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.gamma.iter());
        out.extend(self.beta.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }
}

/// Flat, versioned parameter record (shapes + row-major values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpHeadRecord {
    pub version: u32,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub order: LayerOrder,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    layout: Vec<(&'static str, usize)>,
}

impl AdamState {
    pub fn new(layout: Vec<(&'static str, usize)>, learning_rate: f64, weight_decay: f64) -> Self {
        let total = layout.iter().map(|(_, l)| l).sum();
        AdamState {
            m: vec![0.0; total],
            v: vec![0.0; total],
            step: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            layout,
        }
    }

    fn group_of(&self, index: usize) -> &'static str {
        let mut offset = 0;
        for (name, len) in &self.layout {
            offset += len;
            if index < offset {
                return name;
            }
        }
        "unknown"
    }

    /// One Adam step with bias correction, followed by decoupled weight decay
    /// params <- params - lr * weight_decay * params.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state holds {} entries, got params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                group: self.group_of(bad).to_string(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            params[i] -= self.learning_rate * self.weight_decay * params[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.5..1.5))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    /// Central finite-difference oracle over the flat parameter vector.
    fn fd_gradients(head: &MlpHead, inputs: &Array2<f64>, upstream: &Array2<f64>) -> Vec<f64> {
        let base = head.flat_params();
        let h = 1e-4;
        let mut out = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut probe = head.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat_params(&p).unwrap();
            let plus = (probe.forward_cached(inputs, true).0 * upstream).sum();
            p[i] = base[i] - h;
            probe.set_flat_params(&p).unwrap();
            let minus = (probe.forward_cached(inputs, true).0 * upstream).sum();
            out[i] = (plus - minus) / (2.0 * h);
        }
        out
    }

    #[test]
    fn zero_weights_propagate_bias() {
        let head = MlpHead::constant(3, &[1.5, -2.0]);
        let inputs = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let out = head.forward_eval(&inputs).unwrap();
        for row in out.rows() {
            assert_abs_diff_eq!(row[0], 1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], -2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_batchnorm_reduces_to_identity() {
        // hidden_dim=1, unit weights, running stats (0,1), γ=1, β=0: the head
        // is an affine map of a 1-D input (through ReLU).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = MlpHead::new(1, 1, 1, LayerOrder::BatchNormThenRelu, &mut rng);
        let flat = vec![1.0, 0.0, 1.0, 0.0, 2.0, 0.5]; // w1, b1, γ, β, w2, b2
        head.set_flat_params(&flat).unwrap();
        let inputs = Array2::from_shape_vec((3, 1), vec![0.5, 1.0, 2.0]).unwrap();
        let out = head.forward_eval(&inputs).unwrap();
        let scale = 2.0 / (1.0_f64 + BN_VAR_FLOOR).sqrt();
        for (o, x) in out.column(0).iter().zip(inputs.column(0)) {
            assert_abs_diff_eq!(*o, scale * x + 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_share_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut head = MlpHead::new(2, 4, 3, LayerOrder::BatchNormThenRelu, &mut rng);
        let mut inputs = random_inputs(&mut rng, 4, 2);
        let first = inputs.row(0).to_owned();
        inputs.row_mut(3).assign(&first);
        let out = head.forward(&inputs, Mode::Train).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(out[[0, j]], out[[3, j]], epsilon = 1e-12);
        }
    }

    #[test]
    fn train_mode_rejects_batch_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = MlpHead::new(2, 4, 1, LayerOrder::BatchNormThenRelu, &mut rng);
        let inputs = random_inputs(&mut rng, 1, 2);
        assert!(head.forward(&inputs, Mode::Train).is_err());
        assert!(head.forward(&inputs, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_forward_is_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = MlpHead::new(3, 4, 2, LayerOrder::BatchNormThenRelu, &mut rng);
        let inputs = random_inputs(&mut rng, 6, 3);
        let full = head.forward_eval(&inputs).unwrap();
        let single = head
            .forward_eval(&inputs.row(2).to_owned().insert_axis(Axis(0)))
            .unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(full[[2, j]], single[[0, j]], epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = MlpHead::new(3, 4, 2, LayerOrder::BatchNormThenRelu, &mut rng);
        let inputs = random_inputs(&mut rng, 5, 3);
        let grads = head.gradients(&inputs, &Array2::zeros((5, 2))).unwrap();
        assert!(grads.flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // 10+ random configurations covering every parameter group and both
        // layer orders.
        for seed in 0..12u64 {
            let order = if seed % 2 == 0 {
                LayerOrder::BatchNormThenRelu
            } else {
                LayerOrder::ReluThenBatchNorm
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let head = MlpHead::new(3, 4, 2, order, &mut rng);
            let inputs = random_inputs(&mut rng, 8, 3);
            let upstream = random_inputs(&mut rng, 8, 2);
            let analytic = head.gradients(&inputs, &upstream).unwrap().flat();
            let numeric = fd_gradients(&head, &inputs, &upstream);
            for (i, (a, b)) in analytic.iter().zip(&numeric).enumerate() {
                assert!(
                    rel_err(*a, *b) <= 1e-4,
                    "seed {seed} param {i}: analytic {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn duplicated_rows_with_halved_upstream_keep_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = MlpHead::new(2, 4, 2, LayerOrder::BatchNormThenRelu, &mut rng);
        let inputs = random_inputs(&mut rng, 6, 2);
        let upstream = random_inputs(&mut rng, 6, 2);
        let base = head.gradients(&inputs, &upstream).unwrap().flat();

        let doubled = ndarray::concatenate(Axis(0), &[inputs.view(), inputs.view()]).unwrap();
        let half = ndarray::concatenate(Axis(0), &[upstream.view(), upstream.view()]).unwrap() * 0.5;
        let dup = head.gradients(&doubled, &half).unwrap().flat();
        for (a, b) in base.iter().zip(&dup) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn adam_null_update_and_counter() {
        let mut state = AdamState::new(vec![("w", 2)], 5e-3, 0.0);
        let mut params = vec![0.3, -0.7];
        state.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(state.step, 1);
        assert_abs_diff_eq!(params[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(params[1], -0.7, epsilon = 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Hand-derived t=1 recurrence: m̂=g, v̂=g², Δ = lr·g/(|g|+ε).
        let lr = 5e-3;
        let g = 0.5;
        let mut state = AdamState::new(vec![("w", 1)], lr, 0.0);
        let mut params = vec![1.0];
        state.step(&mut params, &[g]).unwrap();
        let expected = 1.0 - lr * g / (g + 1e-8);
        assert_abs_diff_eq!(params[0], expected, epsilon = 1e-15);
        assert!((1.0 - params[0] - lr).abs() <= 1e-9);
    }

    #[test]
    fn adam_decoupled_decay_scales_params() {
        let mut state = AdamState::new(vec![("w", 1)], 5e-3, 5e-5);
        let mut params = vec![2.0];
        state.step(&mut params, &[0.0]).unwrap();
        assert_abs_diff_eq!(params[0], 2.0 * (1.0 - 5e-3 * 5e-5), epsilon = 1e-15);
    }

    #[test]
    fn adam_flags_non_finite_gradient_group() {
        let mut state = AdamState::new(vec![("w1", 2), ("b1", 1)], 5e-3, 0.0);
        let mut params = vec![0.0; 3];
        let err = state.step(&mut params, &[0.0, 0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("b1"), "got: {err}");
    }

    #[test]
    fn training_decreases_convex_probe_loss() {
        let mut ok = 0;
        let trials = 20;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut head = MlpHead::new(2, 4, 1, LayerOrder::BatchNormThenRelu, &mut rng);
            let inputs = random_inputs(&mut rng, 16, 2);
            let target = random_inputs(&mut rng, 16, 1);
            let mut adam = AdamState::new(head.param_layout(), 5e-3, 0.0);
            let loss = |head: &mut MlpHead| -> f64 {
                let out = head.forward(&inputs, Mode::Train).unwrap();
                (&out - &target).mapv(|d| d * d).mean().unwrap()
            };
            let initial = loss(&mut head);
            for _ in 0..200 {
                let out = head.forward(&inputs, Mode::Train).unwrap();
                let upstream = (&out - &target) * (2.0 / 16.0);
                let grads = head.gradients(&inputs, &upstream).unwrap().flat();
                let mut params = head.flat_params();
                adam.step(&mut params, &grads).unwrap();
                head.set_flat_params(&params).unwrap();
            }
            if loss(&mut head) < initial {
                ok += 1;
            }
        }
        assert!(ok * 100 >= trials * 95, "only {ok}/{trials} trials improved");
    }

    #[test]
    fn record_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let head = MlpHead::new(3, 4, 5, LayerOrder::ReluThenBatchNorm, &mut rng);
        let json = serde_json::to_string(&head.to_record()).unwrap();
        let rec: MlpHeadRecord = serde_json::from_str(&json).unwrap();
        let back = MlpHead::from_record(&rec).unwrap();
        assert_eq!(head.flat_params(), back.flat_params());
        let inputs = random_inputs(&mut rng, 4, 3);
        assert_eq!(
            head.forward_eval(&inputs).unwrap(),
            back.forward_eval(&inputs).unwrap()
        );
    }
}
