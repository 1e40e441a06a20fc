//! Fully connected predictor from an inlet descriptor to a single-inlet latent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::caer::{LatentFeature, Provenance};
use crate::container::ParamStore;
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerParams, Linear, Relu, Sequential, Tape};
use crate::ops;
use crate::optim::{fit, TrainConfig, TrainReport};
use crate::solver::MAX_INLET_VELOCITY;
use crate::tensor::{Scalar, Tensor};

/// Output widths of the six layers on the benchmark grid. The last one
/// follows the latent size on other grids.
pub const MLP_WIDTHS: [usize; 6] = [128, 512, 1026, 2000, 2000, 1280];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InletDescriptor {
    /// 0 = left, 1 = right.
    pub position: f32,
    /// Supply velocity over 1.2 m/s.
    pub velocity: f32,
}

impl InletDescriptor {
    pub fn new(position: f32, velocity: f32) -> Result<Self> {
        let d = Self { position, velocity };
        d.validate()?;
        Ok(d)
    }

    pub fn left(speed: f64) -> Result<Self> {
        Self::new(0.0, (speed / MAX_INLET_VELOCITY) as f32)
    }

    pub fn right(speed: f64) -> Result<Self> {
        Self::new(1.0, (speed / MAX_INLET_VELOCITY) as f32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position != 0.0 && self.position != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "inlet position {} is not 0 or 1",
                self.position
            )));
        }
        if !(0.0..=1.0).contains(&self.velocity) {
            return Err(Error::InvalidArgument(format!(
                "normalized inlet velocity {} outside [0, 1]",
                self.velocity
            )));
        }
        Ok(())
    }
}

pub struct Mlp<T: Scalar = f32> {
    latent_shape: [usize; 3],
    pub net: Sequential<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(latent_shape: [usize; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        let mut widths = MLP_WIDTHS;
        widths[5] = latent_shape.iter().product();
        let mut input = 2;
        for (k, &w) in widths.iter().enumerate() {
            net.push(Linear::new(format!("mlp.l{k}"), input, w, &mut rng));
            if k + 1 < widths.len() {
                net.push(Relu);
            }
            input = w;
        }
        Self { latent_shape, net }
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.latent_shape
    }

    fn batch(descriptors: &[InletDescriptor]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(2 * descriptors.len());
        for d in descriptors {
            d.validate()?;
            data.push(T::from_f64_lossy(d.position as f64));
            data.push(T::from_f64_lossy(d.velocity as f64));
        }
        Tensor::new(vec![descriptors.len(), 2], data)
    }

    /// One row of flattened latents per descriptor.
    pub fn forward_batch(&self, descriptors: &[InletDescriptor]) -> Result<Tensor<T>> {
        self.net.forward(&Self::batch(descriptors)?)
    }

    /// Batch MSE against flattened targets (`N × latent`), accumulating gradients.
    pub fn accumulate_batch(
        &mut self,
        descriptors: &[InletDescriptor],
        targets: &Tensor<T>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let y = self
            .net
            .forward_train(&Self::batch(descriptors)?, &mut tape)?;
        let loss = ops::mse(&y, targets)?.to_f64().unwrap_or(f64::NAN);
        self.net.backward(&ops::mse_grad(&y, targets)?, &mut tape)?;
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

    pub fn load_from(store: &ParamStore, latent_shape: [usize; 3]) -> Result<Self> {
        let mut m = Self::new(latent_shape, 0);
        store.load_params(&mut m.params_mut())?;
        Ok(m)
    }
}

impl Mlp<f32> {
    pub fn predict_latent(&self, d: &InletDescriptor) -> Result<LatentFeature> {
        let y = self.forward_batch(std::slice::from_ref(d))?;
        LatentFeature::new(y.reshape(&self.latent_shape)?, Provenance::MlpPredicted)
    }

    /// Two descriptors in one batch, so the weights are streamed once.
    pub fn predict_pair(
        &self,
        a: &InletDescriptor,
        b: &InletDescriptor,
    ) -> Result<(LatentFeature, LatentFeature)> {
        let y = self.forward_batch(&[*a, *b])?;
        let n: usize = self.latent_shape.iter().product();
        let latent = |row: &[f32]| {
            LatentFeature::new(
                Tensor::new(self.latent_shape.to_vec(), row.to_vec())?,
                Provenance::MlpPredicted,
            )
        };
        Ok((latent(&y.data()[..n])?, latent(&y.data()[n..])?))
    }

    pub fn train(
        &mut self,
        pairs: &[(InletDescriptor, LatentFeature)],
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        let n: usize = self.latent_shape.iter().product();
        let mut data = Vec::with_capacity(n * pairs.len());
        for (_, z) in pairs {
            if z.shape() != self.latent_shape {
                return Err(Error::shape("mlp target", self.latent_shape, z.shape()));
            }
            data.extend_from_slice(z.as_slice());
        }
        let targets = Tensor::new(vec![pairs.len(), n], data)?;
        let inputs: Vec<InletDescriptor> = pairs.iter().map(|p| p.0).collect();
        fit(
            self,
            1,
            config,
            "mlp",
            |m| m.params_mut(),
            |m, _| m.accumulate_batch(&inputs, &targets),
        )
    }
}

pub fn train_mlp(
    pairs: &[(InletDescriptor, LatentFeature)],
    config: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("mlp: empty training set".into()))?;
    let shape = first.1.shape();
    let mut m = Mlp::new([shape[0], shape[1], shape[2]], config.seed);
    let report = m.train(pairs, config)?;
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_ranges() {
        let d = InletDescriptor::right(0.6).unwrap();
        assert_eq!(d.position, 1.0);
        assert!((d.velocity - 0.5).abs() < 1e-7);
        assert!(InletDescriptor::left(1.3).is_err());
        assert!(InletDescriptor::new(0.5, 0.2).is_err());
        assert!(InletDescriptor::new(0.0, -0.1).is_err());
    }

    #[test]
    fn layer_widths() {
        let m: Mlp<f32> = Mlp::new([64, 4, 5], 3);
        let shapes: Vec<Vec<usize>> = m
            .params()
            .iter()
            .map(|p| p.weight.shape().to_vec())
            .collect();
        assert_eq!(
            shapes,
            vec![
                vec![128, 2],
                vec![512, 128],
                vec![1026, 512],
                vec![2000, 1026],
                vec![2000, 2000],
                vec![1280, 2000]
            ]
        );
        let z = m
            .predict_latent(&InletDescriptor::left(0.5).unwrap())
            .unwrap();
        assert_eq!(z.shape(), [64, 4, 5]);
        assert_eq!(z.len(), 1280);
        assert_eq!(z.provenance, Provenance::MlpPredicted);
    }
}
