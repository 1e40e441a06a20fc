//! CNN fusing a left and a right single-inlet latent into a dual-inlet latent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::caer::{LatentFeature, Provenance, LATENT_CHANNELS};
use crate::container::ParamStore;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Layer, LayerParams, Relu, ResidualBlock, Sequential, Tape};
use crate::ops;
use crate::optim::{fit, TrainConfig, TrainReport};
use crate::tensor::{Scalar, Tensor};

pub const AGGREGATOR_EPOCHS: usize = 6000;

/// `(z_left, z_right, z_dual)` training triple.
pub type Triple = (LatentFeature, LatentFeature, LatentFeature);

pub struct Aggregator<T: Scalar = f32> {
    pub net: Sequential<T>,
}

impl<T: Scalar> Aggregator<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        let mut cin = 2 * LATENT_CHANNELS;
        for (k, cout) in [256, 128].into_iter().enumerate() {
            net.push(Conv2d::new(format!("agg.s{k}.conv"), cin, cout, &mut rng));
            net.push(Relu);
            net.push(ResidualBlock::new(&format!("agg.s{k}.res"), cout, &mut rng));
            cin = cout;
        }
        net.push(Conv2d::new("agg.out", cin, LATENT_CHANNELS, &mut rng));
        Self { net }
    }

    /// Left in channels 0–63, right in 64–127.
    pub fn concat(left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        if left.shape() != right.shape() {
            return Err(Error::shape(
                "aggregate inputs",
                left.shape(),
                right.shape(),
            ));
        }
        let (c, _, _) = left.dims3("aggregate")?;
        if c != LATENT_CHANNELS {
            return Err(Error::shape("aggregate channels", LATENT_CHANNELS, c));
        }
        Tensor::concat_channels(&[left, right])
    }

    pub fn forward_raw(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(&Self::concat(left, right)?)
    }

    pub fn accumulate_sample(
        &mut self,
        left: &Tensor<T>,
        right: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let y = self
            .net
            .forward_train(&Self::concat(left, right)?, &mut tape)?;
        let loss = ops::mse(&y, target)?.to_f64().unwrap_or(f64::NAN);
        self.net.backward(&ops::mse_grad(&y, target)?, &mut tape)?;
        Ok(loss)
    }

    pub fn params(&self) -> Vec<&LayerParams<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.net.params_mut()
    }

    pub fn save_into(&self, store: &mut ParamStore) {
        store.insert_params(&self.params());
    }

    pub fn load_from(store: &ParamStore) -> Result<Self> {
        let mut a = Self::new(0);
        store.load_params(&mut a.params_mut())?;
        Ok(a)
    }
}

impl Aggregator<f32> {
    pub fn aggregate(&self, left: &LatentFeature, right: &LatentFeature) -> Result<LatentFeature> {
        LatentFeature::new(
            self.forward_raw(&left.tensor, &right.tensor)?,
            Provenance::Aggregated,
        )
    }

    /// Mean `mse(aggregate(zL, zR), z_dual)` over `triples`.
    pub fn loss(&self, triples: &[Triple]) -> Result<f64> {
        let mut total = 0.0;
        for (l, r, d) in triples {
            total += ops::mse(&self.forward_raw(&l.tensor, &r.tensor)?, &d.tensor)? as f64;
        }
        Ok(total / triples.len().max(1) as f64)
    }

    pub fn train(&mut self, triples: &[Triple], config: &TrainConfig) -> Result<TrainReport> {
        fit(
            self,
            triples.len(),
            config,
            "aggregator",
            |a| a.params_mut(),
            |a, i| {
                let (l, r, d) = &triples[i];
                a.accumulate_sample(&l.tensor, &r.tensor, &d.tensor)
            },
        )
    }
}

pub fn train_aggregator(
    triples: &[Triple],
    config: &TrainConfig,
) -> Result<(Aggregator, TrainReport)> {
    let mut a = Aggregator::new(config.seed);
    let report = a.train(triples, config)?;
    Ok((a, report))
}
