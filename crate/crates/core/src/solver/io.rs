//! `FLOWC1` case result files.
//!
//! Layout: `"FLOWC1\0"`; left/right inlet velocity, inlet and window
//! temperature, heat flux as `f64`; configuration code `u8`; `nx`, `ny` as
//! `u32`; u, v, magnitude, temperature as `nx·ny` little-endian `f32` each
//! (row 0 at the floor); converged flag `u8`, iterations `u32`, final residual
//! `f64`; trailing CRC32.

use std::path::Path;

use super::simple::{CellFields, FlowState};
use super::{CaseSpec, Configuration};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const CASE_MAGIC: &[u8; 7] = b"FLOWC1\0";

/// Persisted outcome of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub spec: CaseSpec,
    pub cells: CellFields,
    pub converged: bool,
    pub iterations: u32,
    pub final_residual: f64,
}

impl CaseRecord {
    pub fn from_state(spec: CaseSpec, state: &FlowState) -> Self {
        Self {
            spec,
            cells: state.cells.clone(),
            converged: state.converged(),
            iterations: state.convergence.iterations as u32,
            final_residual: state.convergence.final_residual(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(CASE_MAGIC);
        write_spec(&mut w, &self.spec);
        let c = &self.cells;
        w.u32(c.nx as u32);
        w.u32(c.ny as u32);
        for field in [&c.u, &c.v, &c.magnitude, &c.temperature] {
            w.f32s(field.iter().map(|&x| x as f32));
        }
        w.u8(self.converged as u8);
        w.u32(self.iterations);
        w.f64(self.final_residual);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, CASE_MAGIC)?;
        let spec = read_spec(&mut r)?;
        let at = r.position();
        let nx = r.u32("nx")? as usize;
        let ny = r.u32("ny")? as usize;
        let n = nx
            .checked_mul(ny)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::corrupt(format!("invalid grid {nx}×{ny}"), at))?;
        let mut field = |what: &str| -> Result<Vec<f64>> {
            Ok(r.f32s(n, what)?.into_iter().map(f64::from).collect())
        };
        let u = field("u")?;
        let v = field("v")?;
        let magnitude = field("magnitude")?;
        let temperature = field("temperature")?;
        let converged = r.u8("converged flag")? != 0;
        let iterations = r.u32("iterations")?;
        let final_residual = r.f64("final residual")?;
        r.finish("case record")?;
        Ok(Self {
            spec,
            cells: CellFields {
                nx,
                ny,
                u,
                v,
                magnitude,
                temperature,
            },
            converged,
            iterations,
            final_residual,
        })
    }
}

pub(crate) fn write_spec(w: &mut ByteWriter, s: &CaseSpec) {
    w.f64(s.left_inlet_velocity);
    w.f64(s.right_inlet_velocity);
    w.f64(s.inlet_temperature);
    w.f64(s.window_temperature);
    w.f64(s.boundary_heat_flux);
    w.u8(s.configuration.code());
}

pub(crate) fn read_spec(r: &mut ByteReader) -> Result<CaseSpec> {
    let left_inlet_velocity = r.f64("left velocity")?;
    let right_inlet_velocity = r.f64("right velocity")?;
    let inlet_temperature = r.f64("inlet temperature")?;
    let window_temperature = r.f64("window temperature")?;
    let boundary_heat_flux = r.f64("heat flux")?;
    let at = r.position();
    let code = r.u8("configuration")?;
    let configuration = Configuration::from_code(code)
        .ok_or_else(|| Error::corrupt(format!("unknown configuration code {code}"), at))?;
    Ok(CaseSpec {
        left_inlet_velocity,
        right_inlet_velocity,
        inlet_temperature,
        window_temperature,
        boundary_heat_flux,
        configuration,
    })
}

pub fn write_case(path: impl AsRef<Path>, record: &CaseRecord) -> Result<()> {
    std::fs::write(path, record.encode())?;
    Ok(())
}

pub fn read_case(path: impl AsRef<Path>) -> Result<CaseRecord> {
    CaseRecord::decode(&std::fs::read(path)?)
}
