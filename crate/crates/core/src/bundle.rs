//! Trained model bundle, the staged training pipeline and dual-inlet prediction.

use std::path::Path;
use std::time::{Duration, Instant};

use crate::aggregator::{Aggregator, Triple};
use crate::caer::{Caer, LatentFeature};
use crate::container::ParamStore;
use crate::dataset::{denormalize, Dataset, NormalizationSpec, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::mlp::{InletDescriptor, Mlp};
use crate::optim::{TrainConfig, TrainReport};
use crate::solver::Configuration;
use crate::tensor::Tensor;

/// Admissible inlet velocities for prediction (m/s).
pub const PREDICT_RANGE: (f64, f64) = (0.05, 1.0);

/// Epochs and final loss of each stage; zero epochs means untrained.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainingSummary {
    pub caer_epochs: usize,
    pub caer_loss: f64,
    pub mlp_epochs: usize,
    pub mlp_loss: f64,
    pub aggregator_epochs: usize,
    pub aggregator_loss: f64,
}

impl TrainingSummary {
    fn to_tensor(self) -> Tensor<f32> {
        let v = [
            self.caer_epochs as f32,
            self.caer_loss as f32,
            self.mlp_epochs as f32,
            self.mlp_loss as f32,
            self.aggregator_epochs as f32,
            self.aggregator_loss as f32,
        ];
        Tensor::new(vec![6], v.to_vec()).expect("six values")
    }

    fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let d = t.data();
        if d.len() != 6 {
            return Err(Error::shape("meta.trained", [6], t.shape()));
        }
        Ok(Self {
            caer_epochs: d[0] as usize,
            caer_loss: d[1] as f64,
            mlp_epochs: d[2] as usize,
            mlp_loss: d[3] as f64,
            aggregator_epochs: d[4] as usize,
            aggregator_loss: d[5] as f64,
        })
    }
}

/// Encoder, both decoders, predictor, aggregator and normalization.
pub struct ModelBundle {
    pub norm: NormalizationSpec,
    pub caer: Caer,
    pub mlp: Mlp,
    pub aggregator: Aggregator,
    pub summary: TrainingSummary,
}

/// One end-to-end prediction in physical units, row 0 at the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrediction {
    pub ny: usize,
    pub nx: usize,
    /// m/s
    pub velocity: Vec<f32>,
    /// °C
    pub temperature: Vec<f32>,
    pub elapsed: Duration,
}

impl ModelBundle {
    /// Freshly initialized networks for an `ny × nx` grid.
    pub fn untrained(ny: usize, nx: usize, norm: NormalizationSpec, seed: u64) -> Result<Self> {
        norm.validate()?;
        let caer = Caer::new(ny, nx, seed)?;
        let mlp = Mlp::new(caer.latent_shape(), seed.wrapping_add(1));
        let aggregator = Aggregator::new(seed.wrapping_add(2));
        Ok(Self {
            norm,
            caer,
            mlp,
            aggregator,
            summary: TrainingSummary::default(),
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.caer.grid()
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        let (ny, nx) = self.grid();
        s.insert(
            "meta.grid",
            Tensor::new(vec![2], vec![ny as f32, nx as f32]).expect("two values"),
        );
        let n = self.norm;
        s.insert(
            "meta.norm",
            Tensor::new(
                vec![3],
                vec![
                    n.velocity_scale as f32,
                    n.temperature_min as f32,
                    n.temperature_max as f32,
                ],
            )
            .expect("three values"),
        );
        s.insert("meta.trained", self.summary.to_tensor());
        self.caer.save_into(&mut s);
        self.mlp.save_into(&mut s);
        self.aggregator.save_into(&mut s);
        s
    }

    pub fn from_store(s: &ParamStore) -> Result<Self> {
        let grid = s.require("meta.grid")?.data();
        if grid.len() != 2 {
            return Err(Error::shape("meta.grid", [2], grid.len()));
        }
        let (ny, nx) = (grid[0] as usize, grid[1] as usize);
        let n = s.require("meta.norm")?.data();
        if n.len() != 3 {
            return Err(Error::shape("meta.norm", [3], n.len()));
        }
        // bounds are stored as f32; they carry at most six decimals
        let exact = |x: f32| (x as f64 * 1e6).round() / 1e6;
        let norm = NormalizationSpec {
            velocity_scale: exact(n[0]),
            temperature_min: exact(n[1]),
            temperature_max: exact(n[2]),
        };
        norm.validate()?;
        let caer = Caer::load_from(s, ny, nx)?;
        let mlp = Mlp::load_from(s, caer.latent_shape())?;
        let aggregator = Aggregator::load_from(s)?;
        let summary = TrainingSummary::from_tensor(s.require("meta.trained")?)?;
        Ok(Self {
            norm,
            caer,
            mlp,
            aggregator,
            summary,
        })
    }

    /// Writes the container and returns its CRC32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<u32> {
        let bytes = self.to_store().encode();
        std::fs::write(path, &bytes)?;
        Ok(trailing_crc(&bytes))
    }

    /// Loads a container, returning the bundle and its CRC32.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, u32)> {
        let bytes = std::fs::read(path)?;
        let store = ParamStore::decode(&bytes)?;
        Ok((Self::from_store(&store)?, trailing_crc(&bytes)))
    }

    /// Predicted `(z_left, z_right, z_dual)` for raw inlet velocities.
    pub fn predict_latents(
        &self,
        left: f64,
        right: f64,
    ) -> Result<(LatentFeature, LatentFeature, LatentFeature)> {
        for v in [left, right] {
            if !(PREDICT_RANGE.0..=PREDICT_RANGE.1).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "inlet velocity {v} m/s outside [{}, {}]",
                    PREDICT_RANGE.0, PREDICT_RANGE.1
                )));
            }
        }
        let (zl, zr) = self.mlp.predict_pair(
            &InletDescriptor::left(left)?,
            &InletDescriptor::right(right)?,
        )?;
        let zd = self.aggregator.aggregate(&zl, &zr)?;
        Ok((zl, zr, zd))
    }

    pub fn predict_dual(&self, left: f64, right: f64) -> Result<DualPrediction> {
        let start = Instant::now();
        let (_, _, z) = self.predict_latents(left, right)?;
        let (v, t) = self.caer.decode(&z)?;
        let (velocity, temperature) = denormalize(&v, &t, &self.norm);
        let (ny, nx) = self.grid();
        Ok(DualPrediction {
            ny,
            nx,
            velocity,
            temperature,
            elapsed: start.elapsed(),
        })
    }

    /// Fits the autoencoder on every training record.
    pub fn train_caer(&mut self, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
        self.check_dataset(data)?;
        let inputs: Vec<Tensor<f32>> = data.split(Split::Train).map(|r| r.fields.clone()).collect();
        self.caer = Caer::new(data.ny, data.nx, config.seed)?;
        let report = self.caer.train(&inputs, config)?;
        self.summary.caer_epochs = report.history.len();
        self.summary.caer_loss = report.final_loss().unwrap_or(f64::NAN);
        Ok(report)
    }

    /// Fits the predictor on the encoded single-inlet training cases.
    pub fn train_mlp(&mut self, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
        self.check_dataset(data)?;
        let sets = LatentSets::encode(&self.caer, data.split(Split::Train))?;
        self.mlp = Mlp::new(self.caer.latent_shape(), config.seed);
        let report = self.mlp.train(&sets.pairs, config)?;
        self.summary.mlp_epochs = report.history.len();
        self.summary.mlp_loss = report.final_loss().unwrap_or(f64::NAN);
        Ok(report)
    }

    /// Fits the aggregator on encoded `(left, right, dual)` triples.
    pub fn train_aggregator(
        &mut self,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        self.check_dataset(data)?;
        let sets = LatentSets::encode(&self.caer, data.split(Split::Train))?;
        self.aggregator = Aggregator::new(config.seed);
        let report = self.aggregator.train(&sets.triples, config)?;
        self.summary.aggregator_epochs = report.history.len();
        self.summary.aggregator_loss = report.final_loss().unwrap_or(f64::NAN);
        Ok(report)
    }

    /// Continues aggregator training with MLP-predicted component latents
    /// as inputs, keeping encoded dual latents as targets.
    pub fn finetune_aggregator(
        &mut self,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        self.check_dataset(data)?;
        let sets = LatentSets::encode(&self.caer, data.split(Split::Train))?;
        let mut triples = Vec::with_capacity(sets.triples.len());
        for (spec, (_, _, zd)) in sets.dual_specs.iter().zip(&sets.triples) {
            let (zl, zr, _) = self.predict_latents(spec.0, spec.1)?;
            triples.push((zl, zr, zd.clone()));
        }
        let report = self.aggregator.train(&triples, config)?;
        self.summary.aggregator_epochs += report.history.len();
        self.summary.aggregator_loss = report.final_loss().unwrap_or(f64::NAN);
        Ok(report)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if (data.ny, data.nx) != self.grid() {
            return Err(Error::shape(
                "dataset grid",
                self.grid(),
                (data.ny, data.nx),
            ));
        }
        if data.norm != self.norm {
            return Err(Error::InvalidArgument(format!(
                "dataset normalization {:?} differs from the model's {:?}",
                data.norm, self.norm
            )));
        }
        Ok(())
    }
}

fn trailing_crc(bytes: &[u8]) -> u32 {
    let n = bytes.len();
    u32::from_le_bytes(
        bytes[n - 4..]
            .try_into()
            .expect("container ends with a CRC"),
    )
}

/// Free-function form of [`ModelBundle::predict_dual`].
pub fn predict_dual(left: f64, right: f64, bundle: &ModelBundle) -> Result<DualPrediction> {
    bundle.predict_dual(left, right)
}

/// Encoded latents of a set of records, arranged for the two downstream stages.
#[derive(Debug, Clone, Default)]
pub struct LatentSets {
    /// Single-inlet descriptors and their latents.
    pub pairs: Vec<(InletDescriptor, LatentFeature)>,
    /// Dual cases whose matching single-inlet latents are present.
    pub triples: Vec<Triple>,
    /// `(left, right)` velocities of each triple.
    pub dual_specs: Vec<(f64, f64)>,
    /// Every latent with its configuration, in record order.
    pub labelled: Vec<(LatentFeature, Configuration)>,
}

fn same_speed(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

impl LatentSets {
    pub fn encode<'a>(
        caer: &Caer,
        records: impl IntoIterator<Item = &'a SampleRecord>,
    ) -> Result<Self> {
        let mut out = Self::default();
        let mut lefts = Vec::new();
        let mut rights = Vec::new();
        let mut duals = Vec::new();
        for r in records {
            let z = caer.encode(&r.fields)?;
            let spec = r.spec;
            match spec.configuration {
                Configuration::LeftOnly => {
                    out.pairs
                        .push((InletDescriptor::left(spec.left_inlet_velocity)?, z.clone()));
                    lefts.push((spec.left_inlet_velocity, z.clone()));
                }
                Configuration::RightOnly => {
                    out.pairs.push((
                        InletDescriptor::right(spec.right_inlet_velocity)?,
                        z.clone(),
                    ));
                    rights.push((spec.right_inlet_velocity, z.clone()));
                }
                Configuration::Dual => duals.push((
                    spec.left_inlet_velocity,
                    spec.right_inlet_velocity,
                    z.clone(),
                )),
            }
            out.labelled.push((z, spec.configuration));
        }
        for (l, r, zd) in duals {
            let zl = lefts.iter().find(|(v, _)| same_speed(*v, l));
            let zr = rights.iter().find(|(v, _)| same_speed(*v, r));
            if let (Some((_, zl)), Some((_, zr))) = (zl, zr) {
                out.triples.push((zl.clone(), zr.clone(), zd));
                out.dual_specs.push((l, r));
            } else {
                tracing::warn!(
                    left = l,
                    right = r,
                    "dual case without matching single-inlet cases skipped"
                );
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip_and_range() {
        let b = ModelBundle::untrained(20, 30, NormalizationSpec::default(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cbml");
        let crc = b.save(&path).unwrap();
        let (back, crc2) = ModelBundle::load(&path).unwrap();
        assert_eq!(crc, crc2);
        assert_eq!(back.grid(), (20, 30));
        let p = b.predict_dual(0.5, 0.7).unwrap();
        let q = back.predict_dual(0.5, 0.7).unwrap();
        assert_eq!(back.norm, b.norm);
        assert!(p.velocity == q.velocity && p.temperature == q.temperature);
        assert_eq!(p.temperature.len(), 600);
        assert!(b.predict_dual(0.04, 0.5).is_err());
        assert!(b.predict_dual(0.5, 1.01).is_err());
        assert!(b.predict_dual(1.0, 0.05).is_ok());
    }
}
