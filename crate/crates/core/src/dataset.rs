//! Case matrices, field normalization and the `FLOWDS1` dataset container.
//!
//! Layout: `"FLOWDS1\0"`, record count `u32`, velocity scale, temperature
//! min and max as `f64`, grid `ny`, `nx` as `u32`; per record the case
//! scalars (see the case file), split code `u8`, record `ny`, `nx` as `u32`
//! and `2·ny·nx` little-endian `f32` (channel 0 velocity magnitude, channel 1
//! temperature, row 0 at the floor); trailing CRC32.

use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::solver::{
    build_case, read_case, solve_steady, write_case, CaseRecord, CaseSpec, RoomGeometry,
    SolverSettings,
};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"FLOWDS1\0";

/// Supply velocities of the training tables (m/s).
pub const TRAINING_VELOCITIES: [f64; 5] = [0.05, 0.25, 0.50, 0.70, 1.00];

/// Dual-inlet test pairs (left, right) in m/s.
pub const TEST_PAIRS: [(f64, f64); 6] = [
    (0.1, 0.9),
    (0.2, 0.8),
    (0.4, 0.6),
    (0.6, 0.4),
    (0.8, 0.2),
    (0.9, 0.1),
];

/// Fraction of clamped cells above which [`to_sample`] warns.
pub const CLAMP_WARNING_FRACTION: f64 = 1e-3;

/// Fixed physical bounds mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub velocity_scale: f64,
    pub temperature_min: f64,
    pub temperature_max: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            velocity_scale: 1.2,
            temperature_min: 10.0,
            temperature_max: 35.0,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.velocity_scale > 0.0 && self.temperature_max > self.temperature_min) {
            return Err(Error::InvalidArgument(format!(
                "degenerate normalization {self:?}"
            )));
        }
        Ok(())
    }

    pub fn velocity(&self, magnitude: f64) -> f64 {
        magnitude / self.velocity_scale
    }

    pub fn temperature(&self, celsius: f64) -> f64 {
        (celsius - self.temperature_min) / (self.temperature_max - self.temperature_min)
    }

    pub fn velocity_inverse(&self, normalized: f64) -> f64 {
        normalized * self.velocity_scale
    }

    pub fn temperature_inverse(&self, normalized: f64) -> f64 {
        self.temperature_min + normalized * (self.temperature_max - self.temperature_min)
    }
}

impl NormalizationSpec {
    /// `self` widened, never narrowed, so every given case maps into
    /// `[0, 1]`: the velocity scale grows to 1.05× the largest magnitude and
    /// the temperature bounds gain 0.5 °C of margin, all rounded outward to 0.1.
    pub fn covering<'a>(&self, cases: impl IntoIterator<Item = &'a CaseRecord>) -> Self {
        let mut out = *self;
        for c in cases {
            let vmax = c.cells.magnitude.iter().copied().fold(0.0, f64::max);
            let tmin = c
                .cells
                .temperature
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let tmax = c
                .cells
                .temperature
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            if vmax > out.velocity_scale {
                out.velocity_scale = (vmax * 1.05 * 10.0).ceil() / 10.0;
            }
            if tmin < out.temperature_min {
                out.temperature_min = ((tmin - 0.5) * 10.0).floor() / 10.0;
            }
            if tmax > out.temperature_max {
                out.temperature_max = ((tmax + 0.5) * 10.0).ceil() / 10.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// One normalized scenario: a `2×ny×nx` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub spec: CaseSpec,
    pub fields: Tensor<f32>,
    pub split: Split,
}

impl SampleRecord {
    pub fn grid(&self) -> (usize, usize) {
        (self.fields.shape()[1], self.fields.shape()[2])
    }
}

/// Training specs (5 left-only, 5 right-only, 25 dual) and the 6 dual test specs.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMatrix {
    pub train: Vec<CaseSpec>,
    pub test: Vec<CaseSpec>,
}

impl CaseMatrix {
    pub fn all(&self) -> impl Iterator<Item = (CaseSpec, Split)> + '_ {
        self.train
            .iter()
            .map(|s| (*s, Split::Train))
            .chain(self.test.iter().map(|s| (*s, Split::Test)))
    }
}

pub fn generate_case_matrix() -> CaseMatrix {
    let mut train: Vec<CaseSpec> = TRAINING_VELOCITIES
        .iter()
        .map(|&v| CaseSpec::left_only(v))
        .collect();
    train.extend(TRAINING_VELOCITIES.iter().map(|&v| CaseSpec::right_only(v)));
    for &l in &TRAINING_VELOCITIES {
        for &r in &TRAINING_VELOCITIES {
            train.push(CaseSpec::dual(l, r));
        }
    }
    let test = TEST_PAIRS
        .iter()
        .map(|&(l, r)| CaseSpec::dual(l, r))
        .collect();
    CaseMatrix { train, test }
}

/// File name of a case result inside a dataset directory.
pub fn case_file_name(spec: &CaseSpec, split: Split) -> String {
    format!(
        "{}_{}_L{:.2}_R{:.2}.flowc",
        split.as_str(),
        spec.configuration.as_str(),
        spec.left_inlet_velocity,
        spec.right_inlet_velocity
    )
}

/// Solve every case, writing `FLOWC1` files into `out_dir` when given.
///
/// Existing converged case files on the same grid are reused, so an
/// interrupted run resumes. Cases are distributed over `threads` workers;
/// the returned order follows `cases` regardless of completion order.
pub fn simulate_cases(
    cases: &[(CaseSpec, Split)],
    geometry: &RoomGeometry,
    settings: &SolverSettings,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<Vec<(CaseRecord, Split)>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CaseRecord>>>> =
        Mutex::new((0..cases.len()).map(|_| None).collect());
    let work = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        if k >= cases.len() {
            break;
        }
        let (spec, split) = cases[k];
        let r = solve_one(&spec, split, geometry, settings, out_dir);
        results.lock().expect("results lock")[k] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(work);
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .zip(cases)
        .map(|(r, &(_, split))| r.expect("every case visited").map(|c| (c, split)))
        .collect()
}

fn solve_one(
    spec: &CaseSpec,
    split: Split,
    geometry: &RoomGeometry,
    settings: &SolverSettings,
    out_dir: Option<&Path>,
) -> Result<CaseRecord> {
    let path = out_dir.map(|d| d.join(case_file_name(spec, split)));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        if let Ok(rec) = read_case(p) {
            if rec.converged
                && rec.spec == *spec
                && (rec.cells.nx, rec.cells.ny) == (geometry.nx, geometry.ny)
            {
                tracing::info!(file = %p.display(), "reusing solved case");
                return Ok(rec);
            }
        }
    }
    let started = std::time::Instant::now();
    let state = solve_steady(&build_case(spec, geometry)?, settings)?;
    tracing::info!(
        left = spec.left_inlet_velocity,
        right = spec.right_inlet_velocity,
        iterations = state.convergence.iterations,
        converged = state.converged(),
        seconds = started.elapsed().as_secs_f64(),
        "case solved"
    );
    let rec = CaseRecord::from_state(*spec, &state);
    if let Some(p) = path {
        write_case(p, &rec)?;
    }
    Ok(rec)
}

/// Normalize solved cases into a dataset. Bounds start from `base` and are
/// widened to cover the training cases.
pub fn build_dataset(cases: &[(CaseRecord, Split)], base: &NormalizationSpec) -> Result<Dataset> {
    let norm = base.covering(
        cases
            .iter()
            .filter(|(_, s)| *s == Split::Train)
            .map(|(c, _)| c),
    );
    if norm != *base {
        tracing::warn!(
            ?norm,
            "normalization bounds widened to cover the training fields"
        );
    }
    let records = cases
        .iter()
        .map(|(c, split)| to_sample(c, &norm, *split).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(norm, records)
}

/// Normalize a solved case; returns the record and the fraction of values
/// that had to be clamped into `[0, 1]`.
pub fn to_sample(
    case: &CaseRecord,
    norm: &NormalizationSpec,
    split: Split,
) -> Result<(SampleRecord, f64)> {
    if !case.converged {
        return Err(Error::Unconverged);
    }
    norm.validate()?;
    let c = &case.cells;
    let n = c.nx * c.ny;
    let mut data = Vec::with_capacity(2 * n);
    let mut clamped = 0usize;
    let mut push = |x: f64| {
        if !(0.0..=1.0).contains(&x) {
            clamped += 1;
        }
        data.push(x.clamp(0.0, 1.0) as f32);
    };
    for &m in &c.magnitude {
        push(norm.velocity(m));
    }
    for &t in &c.temperature {
        push(norm.temperature(t));
    }
    let fraction = clamped as f64 / (2 * n) as f64;
    if fraction > CLAMP_WARNING_FRACTION {
        tracing::warn!(
            left = case.spec.left_inlet_velocity,
            right = case.spec.right_inlet_velocity,
            fraction,
            "normalized fields clamped into [0, 1]"
        );
    }
    let fields = Tensor::new(vec![2, c.ny, c.nx], data)?;
    Ok((
        SampleRecord {
            spec: case.spec,
            fields,
            split,
        },
        fraction,
    ))
}

/// Physical fields (m/s, °C) of a normalized `2×ny×nx` or pair of
/// `1×ny×nx` tensors.
pub fn denormalize(
    velocity: &Tensor<f32>,
    temperature: &Tensor<f32>,
    norm: &NormalizationSpec,
) -> (Vec<f32>, Vec<f32>) {
    (
        velocity
            .data()
            .iter()
            .map(|&v| norm.velocity_inverse(v as f64) as f32)
            .collect(),
        temperature
            .data()
            .iter()
            .map(|&t| norm.temperature_inverse(t as f64) as f32)
            .collect(),
    )
}

/// A dataset file: normalization plus records on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub norm: NormalizationSpec,
    pub ny: usize,
    pub nx: usize,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(norm: NormalizationSpec, records: Vec<SampleRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset needs at least one record".into()))?;
        let (ny, nx) = first.grid();
        for r in &records {
            if r.fields.shape() != [2, ny, nx] {
                return Err(Error::shape(
                    "dataset record",
                    [2, ny, nx],
                    r.fields.shape(),
                ));
            }
        }
        Ok(Self {
            norm,
            ny,
            nx,
            records,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(DATASET_MAGIC);
        w.u32(self.records.len() as u32);
        w.f64(self.norm.velocity_scale);
        w.f64(self.norm.temperature_min);
        w.f64(self.norm.temperature_max);
        w.u32(self.ny as u32);
        w.u32(self.nx as u32);
        for r in &self.records {
            crate::solver::write_spec_bytes(&mut w, &r.spec);
            w.u8(r.split.code());
            w.u32(r.fields.shape()[1] as u32);
            w.u32(r.fields.shape()[2] as u32);
            w.f32s(r.fields.data().iter().copied());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, DATASET_MAGIC)?;
        let count = r.u32("record count")? as usize;
        let norm = NormalizationSpec {
            velocity_scale: r.f64("velocity scale")?,
            temperature_min: r.f64("temperature min")?,
            temperature_max: r.f64("temperature max")?,
        };
        let at = r.position();
        norm.validate()
            .map_err(|e| Error::corrupt(e.to_string(), at))?;
        let ny = r.u32("ny")? as usize;
        let nx = r.u32("nx")? as usize;
        if count == 0 || ny == 0 || nx == 0 {
            return Err(Error::corrupt(
                format!("empty dataset header ({count} records, {ny}×{nx})"),
                at,
            ));
        }
        let mut records = Vec::with_capacity(count.min(1024));
        for k in 0..count {
            let spec = crate::solver::read_spec_bytes(&mut r)?;
            let at = r.position();
            let split = Split::from_code(r.u8("split")?)
                .ok_or_else(|| Error::corrupt(format!("record {k}: unknown split code"), at))?;
            let at = r.position();
            let (ry, rx) = (r.u32("record ny")? as usize, r.u32("record nx")? as usize);
            if (ry, rx) != (ny, nx) {
                return Err(Error::corrupt(
                    format!("record {k}: grid {ry}×{rx} does not match dataset grid {ny}×{nx}"),
                    at,
                ));
            }
            let data = r.f32s(2 * ny * nx, "record fields")?;
            records.push(SampleRecord {
                spec,
                fields: Tensor::new(vec![2, ny, nx], data)?,
                split,
            });
        }
        r.finish("dataset")?;
        Ok(Self {
            norm,
            ny,
            nx,
            records,
        })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.encode())?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::decode(&std::fs::read(path)?)
}
