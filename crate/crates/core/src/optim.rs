//! Adam with L2-coupled weight decay.

use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("optimizer config {self:?}")))
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// One Adam update over every parameter set.
///
/// The decay term `weight_decay · param` is added to the gradient before the
/// moment updates. If any gradient is non-finite no parameter is touched.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut LayerParams<T>],
    config: &OptimizerConfig,
) -> Result<()> {
    config.validate()?;
    for p in params.iter() {
        if !p.grad_weight.all_finite() || !p.grad_bias.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    for p in params.iter_mut() {
        p.adam.step += 1;
        let t = p.adam.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let LayerParams {
            weight,
            bias,
            grad_weight,
            grad_bias,
            adam,
            ..
        } = &mut **p;
        update(
            weight,
            grad_weight,
            &mut adam.m_weight,
            &mut adam.v_weight,
            config,
            c1,
            c2,
        );
        update(
            bias,
            grad_bias,
            &mut adam.m_bias,
            &mut adam.v_bias,
            config,
            c1,
            c2,
        );
    }
    Ok(())
}

fn update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    cfg: &OptimizerConfig,
    c1: f64,
    c2: f64,
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let wd = T::from_f64_lossy(cfg.weight_decay);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    let c1 = T::from_f64_lossy(c1);
    let c2 = T::from_f64_lossy(c2);
    for (((w, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        let g = g + wd * *w;
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *w = *w - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Full-batch training schedule shared by the three networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Stop once the epoch loss drops below this.
    pub target_loss: Option<f64>,
    /// Seeds parameter initialization.
    pub seed: u64,
    /// Log every this many epochs (0 = silent).
    pub log_every: usize,
    /// Step decay: every `n` epochs the learning rate is multiplied by `factor`.
    pub decay: Option<(usize, f64)>,
}

impl TrainConfig {
    pub fn new(epochs: usize, target_loss: Option<f64>, seed: u64) -> Self {
        Self {
            epochs,
            optimizer: OptimizerConfig::default(),
            target_loss,
            seed,
            log_every: 0,
            decay: None,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.optimizer.learning_rate = lr;
        self
    }

    pub fn with_decay(mut self, every: usize, factor: f64) -> Self {
        self.decay = Some((every, factor));
        self
    }

    /// Optimizer settings in effect at `epoch`.
    pub fn optimizer_at(&self, epoch: usize) -> OptimizerConfig {
        let mut o = self.optimizer;
        if let Some((every, factor)) = self.decay.filter(|d| d.0 > 0) {
            o.learning_rate *= factor.powi((epoch / every) as i32);
        }
        o
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss per epoch, evaluated before that epoch's update.
    pub history: Vec<f64>,
    pub reached_target: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().copied()
    }
}

/// Full-batch loop. `sample` runs forward and backward for sample `i`,
/// accumulating gradients, and returns its loss. Gradients are averaged
/// over the batch in fixed sample order before each Adam step.
pub fn fit<N: ?Sized>(
    net: &mut N,
    samples: usize,
    config: &TrainConfig,
    stage: &str,
    params: impl Fn(&mut N) -> Vec<&mut LayerParams<f32>>,
    mut sample: impl FnMut(&mut N, usize) -> Result<f64>,
) -> Result<TrainReport> {
    config.optimizer.validate()?;
    if let Some((_, f)) = config.decay {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{stage}: decay factor {f} outside (0, 1]"
            )));
        }
    }
    if samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "{stage}: empty training set"
        )));
    }
    let mut report = TrainReport::default();
    let inv = 1.0 / samples as f32;
    for epoch in 0..config.epochs {
        for p in params(net) {
            p.zero_grad();
        }
        let mut loss = 0.0;
        for i in 0..samples {
            loss += sample(net, i)?;
        }
        loss /= samples as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.history.push(loss);
        if config.log_every > 0 && epoch % config.log_every == 0 {
            tracing::info!(stage, epoch, loss, "training");
        }
        if config.target_loss.is_some_and(|t| loss < t) {
            report.reached_target = true;
            break;
        }
        let mut ps = params(net);
        for p in ps.iter_mut() {
            p.grad_weight.scale(inv);
            p.grad_bias.scale(inv);
        }
        adam_step(&mut ps, &config.optimizer_at(epoch)).map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::NonFiniteLoss { epoch },
            other => other,
        })?;
    }
    Ok(report)
}
