//! Convolutional autoencoder with residual blocks: one shared encoder, two
//! decoder branches (velocity magnitude and temperature).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::ParamStore;
use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::layers::{
    Conv2d, ConvTranspose2d, Layer, LayerParams, MaxPool, Relu, ResidualBlock, Sequential, Sigmoid,
    Tape, Upsample,
};
use crate::ops;
use crate::optim::{fit, TrainConfig, TrainReport};
use crate::tensor::{Scalar, Tensor};

pub const ENCODER_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];
pub const DECODER_CHANNELS: [usize; 5] = [64, 64, 32, 16, 8];
pub const LATENT_CHANNELS: usize = 64;
pub const FIELD_CHANNELS: usize = 2;

/// Where a latent came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Encoded,
    MlpPredicted,
    Aggregated,
}

/// A `64×h×w` latent; `64×4×5` on the benchmark grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    pub tensor: Tensor<f32>,
    pub provenance: Provenance,
}

impl LatentFeature {
    pub fn new(tensor: Tensor<f32>, provenance: Provenance) -> Result<Self> {
        let (c, _, _) = tensor.dims3("latent")?;
        if c != LATENT_CHANNELS {
            return Err(Error::shape("latent channels", LATENT_CHANNELS, c));
        }
        if !tensor.all_finite() {
            return Err(Error::InvalidArgument(
                "latent contains non-finite values".into(),
            ));
        }
        Ok(Self { tensor, provenance })
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn as_slice(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }
}

/// Spatial sizes from the input grid down to the latent, one per pooling.
pub fn shape_schedule(ny: usize, nx: usize) -> [(usize, usize); 6] {
    let mut s = [(ny, nx); 6];
    for k in 1..6 {
        s[k] = (
            ops::pooled_extent(s[k - 1].0),
            ops::pooled_extent(s[k - 1].1),
        );
    }
    s
}

pub struct Caer<T: Scalar = f32> {
    ny: usize,
    nx: usize,
    /// Five stages: conv, relu, pool, residual block.
    pub encoder: Sequential<T>,
    pub dec_v: Sequential<T>,
    pub dec_t: Sequential<T>,
}

fn decoder<T: Scalar>(
    prefix: &str,
    sizes: &[(usize, usize); 6],
    rng: &mut ChaCha8Rng,
) -> Sequential<T> {
    let mut net = Sequential::new();
    let mut cin = LATENT_CHANNELS;
    for (k, &cout) in DECODER_CHANNELS.iter().enumerate() {
        let mut stage = Sequential::new();
        stage.push(Upsample {
            target: sizes[4 - k],
        });
        stage.push(ConvTranspose2d::new(
            format!("{prefix}.s{k}.convt"),
            cin,
            cout,
            rng,
        ));
        stage.push(Relu);
        stage.push(ResidualBlock::new(&format!("{prefix}.s{k}.res"), cout, rng));
        net.push(stage);
        cin = cout;
    }
    net.push(ConvTranspose2d::new(format!("{prefix}.out"), cin, 1, rng));
    net.push(Sigmoid);
    net
}

impl<T: Scalar> Caer<T> {
    pub fn new(ny: usize, nx: usize, seed: u64) -> Result<Self> {
        if ny < 2 || nx < 2 {
            return Err(Error::InvalidArgument(format!("grid {ny}x{nx} too small")));
        }
        let sizes = shape_schedule(ny, nx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Sequential::new();
        let mut cin = FIELD_CHANNELS;
        for (k, &cout) in ENCODER_CHANNELS.iter().enumerate() {
            let mut stage = Sequential::new();
            stage.push(Conv2d::new(format!("enc.s{k}.conv"), cin, cout, &mut rng));
            stage.push(Relu);
            stage.push(MaxPool);
            let mut res = ResidualBlock::new(&format!("enc.s{k}.res"), cout, &mut rng);
            // the latent stays unrectified so it can be regressed
            res.output_relu = k + 1 < ENCODER_CHANNELS.len();
            stage.push(res);
            encoder.push(stage);
            cin = cout;
        }
        let dec_v = decoder("dec_v", &sizes, &mut rng);
        let dec_t = decoder("dec_t", &sizes, &mut rng);
        Ok(Self {
            ny,
            nx,
            encoder,
            dec_v,
            dec_t,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [FIELD_CHANNELS, self.ny, self.nx]
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        let (h, w) = shape_schedule(self.ny, self.nx)[5];
        [LATENT_CHANNELS, h, w]
    }

    /// Input elements over latent elements.
    pub fn compression_ratio(&self) -> f64 {
        let i: usize = self.input_shape().iter().product();
        let l: usize = self.latent_shape().iter().product();
        i as f64 / l as f64
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape("caer input", self.input_shape(), x.shape()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(Error::shape("caer latent", self.latent_shape(), z.shape()));
        }
        Ok(())
    }

    pub fn encode_raw(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }

    /// Output of every encoder stage, input excluded.
    pub fn encoder_trace(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut out = Vec::new();
        let mut h = x.clone();
        for stage in &self.encoder.layers {
            h = stage.forward(&h)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Output of every decoder stage of the velocity branch, then the final field.
    pub fn decoder_trace(&self, z: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_latent(z)?;
        let mut out = Vec::new();
        let mut h = z.clone();
        for stage in &self.dec_v.layers {
            h = stage.forward(&h)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// `(velocity, temperature)`, each `1×ny×nx` in (0, 1).
    pub fn decode_raw(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_latent(z)?;
        if !z.all_finite() {
            return Err(Error::InvalidArgument(
                "latent contains non-finite values".into(),
            ));
        }
        Ok((self.dec_v.forward(z)?, self.dec_t.forward(z)?))
    }

    /// Summed reconstruction loss `mse(v̂, v) + mse(t̂, t)` for one sample,
    /// accumulating its parameter gradients.
    pub fn accumulate_sample(&mut self, x: &Tensor<T>) -> Result<f64> {
        self.check_input(x)?;
        let target = x.split_channels(&[1, 1])?;
        let mut enc_tape = Tape::new();
        let mut v_tape = Tape::new();
        let mut t_tape = Tape::new();
        let z = self.encoder.forward_train(x, &mut enc_tape)?;
        let v = self.dec_v.forward_train(&z, &mut v_tape)?;
        let t = self.dec_t.forward_train(&z, &mut t_tape)?;
        let loss = ops::mse(&v, &target[0])?.to_f64().unwrap_or(f64::NAN)
            + ops::mse(&t, &target[1])?.to_f64().unwrap_or(f64::NAN);
        let mut gz = self
            .dec_v
            .backward(&ops::mse_grad(&v, &target[0])?, &mut v_tape)?;
        gz.add_assign(
            &self
                .dec_t
                .backward(&ops::mse_grad(&t, &target[1])?, &mut t_tape)?,
        )?;
        self.encoder.backward(&gz, &mut enc_tape)?;
        Ok(loss)
    }

    pub fn loss(&self, x: &Tensor<T>) -> Result<f64> {
        let target = x.split_channels(&[1, 1])?;
        let (v, t) = self.decode_raw(&self.encode_raw(x)?)?;
        Ok(ops::mse(&v, &target[0])?.to_f64().unwrap_or(f64::NAN)
            + ops::mse(&t, &target[1])?.to_f64().unwrap_or(f64::NAN))
    }

    pub fn params(&self) -> Vec<&LayerParams<T>> {
        let mut p = self.encoder.params();
        p.extend(self.dec_v.params());
        p.extend(self.dec_t.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.dec_v.params_mut());
        p.extend(self.dec_t.params_mut());
        p
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.num_elements()).sum()
    }

    pub fn save_into(&self, store: &mut ParamStore) {
        store.insert_params(&self.params());
    }

    pub fn load_from(store: &ParamStore, ny: usize, nx: usize) -> Result<Self> {
        let mut net = Self::new(ny, nx, 0)?;
        store.load_params(&mut net.params_mut())?;
        Ok(net)
    }
}

impl Caer<f32> {
    pub fn encode(&self, x: &Tensor<f32>) -> Result<LatentFeature> {
        LatentFeature::new(self.encode_raw(x)?, Provenance::Encoded)
    }

    pub fn decode(&self, z: &LatentFeature) -> Result<(Tensor<f32>, Tensor<f32>)> {
        self.decode_raw(&z.tensor)
    }

    /// Full-batch Adam on the summed reconstruction loss.
    pub fn train(&mut self, inputs: &[Tensor<f32>], config: &TrainConfig) -> Result<TrainReport> {
        for x in inputs {
            self.check_input(x)?;
        }
        fit(
            self,
            inputs.len(),
            config,
            "caer",
            |n| n.params_mut(),
            |n, i| n.accumulate_sample(&inputs[i]),
        )
    }
}

/// Train a fresh autoencoder on the fields of `records`.
pub fn train_caer(records: &[SampleRecord], config: &TrainConfig) -> Result<(Caer, TrainReport)> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("caer: empty training set".into()))?;
    let (ny, nx) = first.grid();
    let inputs: Vec<Tensor<f32>> = records.iter().map(|r| r.fields.clone()).collect();
    let mut net = Caer::new(ny, nx, config.seed)?;
    let report = net.train(&inputs, config)?;
    Ok((net, report))
}
