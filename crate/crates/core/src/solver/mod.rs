//! Steady 2D Boussinesq finite-volume solver for the ventilated room.

mod diagnostics;
mod io;
pub mod linear;
mod simple;

pub use diagnostics::{energy_balance, extract_profile, mass_imbalance, EnergyTerms, Profile};
pub use io::{read_case, write_case, CaseRecord, CASE_MAGIC};
pub(crate) use io::{read_spec as read_spec_bytes, write_spec as write_spec_bytes};
pub use simple::{solve_steady, CellFields, Convergence, FlowState, SolverSettings};

use crate::error::{Error, Result};

/// Largest supply velocity accepted by [`CaseSpec::validate`] (m/s).
pub const MAX_INLET_VELOCITY: f64 = 1.2;

/// Air at 20 °C with a constant eddy-viscosity closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirProperties {
    pub density: f64,
    pub specific_heat: f64,
    pub kinematic_viscosity: f64,
    /// ν_eff / ν.
    pub eddy_viscosity_ratio: f64,
    pub turbulent_prandtl: f64,
    pub expansion_coefficient: f64,
    pub gravity: f64,
    pub reference_temperature: f64,
}

impl Default for AirProperties {
    fn default() -> Self {
        Self {
            density: 1.204,
            specific_heat: 1006.0,
            kinematic_viscosity: 1.516e-5,
            eddy_viscosity_ratio: 50.0,
            turbulent_prandtl: 0.85,
            expansion_coefficient: 3.4e-3,
            gravity: 9.81,
            reference_temperature: 22.5,
        }
    }
}

impl AirProperties {
    pub fn effective_viscosity(&self) -> f64 {
        self.kinematic_viscosity * self.eddy_viscosity_ratio
    }

    pub fn effective_diffusivity(&self) -> f64 {
        self.effective_viscosity() / self.turbulent_prandtl
    }
}

/// Thermal condition on a solid boundary face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Thermal {
    Adiabatic,
    Fixed(f64),
    /// Heat flux into the domain, W/m².
    Flux(f64),
}

/// Boundary condition on one boundary face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceBc {
    /// No-slip wall.
    Wall(Thermal),
    /// Normal injection into the domain at `speed` m/s.
    Inlet { speed: f64, temperature: f64 },
    /// Zero-gradient outlet; outflow is rescaled to match total inflow.
    Outlet,
}

impl FaceBc {
    pub fn is_outlet(&self) -> bool {
        matches!(self, FaceBc::Outlet)
    }
}

/// Assembled boundary-value problem on a uniform grid.
///
/// Side arrays run along the side: `west`/`east` from floor to ceiling
/// (`ny` faces), `south`/`north` from left to right (`nx` faces).
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub west: Vec<FaceBc>,
    pub east: Vec<FaceBc>,
    pub south: Vec<FaceBc>,
    pub north: Vec<FaceBc>,
    pub air: AirProperties,
    pub buoyancy: bool,
    pub initial_temperature: f64,
}

impl Problem {
    pub fn dx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.height / self.ny as f64
    }

    /// Volumetric inflow per unit depth (m²/s).
    pub fn inflow(&self) -> f64 {
        let side = |faces: &[FaceBc], len: f64| -> f64 {
            faces
                .iter()
                .map(|f| match f {
                    FaceBc::Inlet { speed, .. } => speed * len,
                    _ => 0.0,
                })
                .sum()
        };
        side(&self.west, self.dy())
            + side(&self.east, self.dy())
            + side(&self.south, self.dx())
            + side(&self.north, self.dx())
    }

    /// Problem mirrored about the vertical centre line.
    pub fn mirrored(&self) -> Problem {
        let mut p = self.clone();
        std::mem::swap(&mut p.west, &mut p.east);
        p.south.reverse();
        p.north.reverse();
        p
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidCase(format!(
                "grid {}×{} too small",
                self.nx, self.ny
            )));
        }
        if self.west.len() != self.ny
            || self.east.len() != self.ny
            || self.south.len() != self.nx
            || self.north.len() != self.nx
        {
            return Err(Error::InvalidCase(
                "boundary arrays do not match grid".into(),
            ));
        }
        let has_outlet = [&self.west, &self.east, &self.south, &self.north]
            .iter()
            .any(|s| s.iter().any(FaceBc::is_outlet));
        if self.inflow() > 0.0 && !has_outlet {
            return Err(Error::InvalidCase("inflow without an outlet".into()));
        }
        Ok(())
    }
}

/// Benchmark room: width × height with inlet slots at the top of each side
/// wall, windows below them and one outlet slot centred on the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomGeometry {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub inlet_height: f64,
    pub window_length: f64,
    pub outlet_width: f64,
}

impl Default for RoomGeometry {
    fn default() -> Self {
        Self::with_grid(150, 100)
    }
}

impl RoomGeometry {
    pub fn with_grid(nx: usize, ny: usize) -> Self {
        Self {
            width: 1.5,
            height: 1.0,
            nx,
            ny,
            inlet_height: 0.1,
            window_length: 0.9,
            outlet_width: 0.1,
        }
    }

    pub fn dx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.height / self.ny as f64
    }

    /// Whether the side-wall face `j` (floor = 0) lies in the inlet slot.
    pub fn in_inlet_slot(&self, j: usize) -> bool {
        let yc = (j as f64 + 0.5) * self.dy();
        yc > self.height - self.inlet_height
    }

    /// Whether side-wall face `j` lies on the window.
    pub fn on_window(&self, j: usize) -> bool {
        let yc = (j as f64 + 0.5) * self.dy();
        yc < self.window_length && !self.in_inlet_slot(j)
    }

    /// Whether floor face `i` lies in the outlet slot.
    pub fn in_outlet(&self, i: usize) -> bool {
        let xc = (i as f64 + 0.5) * self.dx();
        (xc - 0.5 * self.width).abs() < 0.5 * self.outlet_width
    }
}

/// Which inlets a scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Configuration {
    LeftOnly,
    RightOnly,
    Dual,
}

impl Configuration {
    pub fn as_str(&self) -> &'static str {
        match self {
            Configuration::LeftOnly => "left",
            Configuration::RightOnly => "right",
            Configuration::Dual => "dual",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Configuration::LeftOnly => 0,
            Configuration::RightOnly => 1,
            Configuration::Dual => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Configuration::LeftOnly),
            1 => Some(Configuration::RightOnly),
            2 => Some(Configuration::Dual),
            _ => None,
        }
    }
}

/// One boundary-condition scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseSpec {
    pub left_inlet_velocity: f64,
    pub right_inlet_velocity: f64,
    pub inlet_temperature: f64,
    pub window_temperature: f64,
    /// Heat flow per unit depth through each of floor and ceiling, W/m
    /// (negative leaves the room).
    pub boundary_heat_flux: f64,
    pub configuration: Configuration,
}

impl CaseSpec {
    fn with(left: f64, right: f64, configuration: Configuration) -> Self {
        Self {
            left_inlet_velocity: left,
            right_inlet_velocity: right,
            inlet_temperature: 10.0,
            window_temperature: 35.0,
            boundary_heat_flux: -200.0,
            configuration,
        }
    }

    pub fn left_only(v: f64) -> Self {
        Self::with(v, 0.0, Configuration::LeftOnly)
    }

    pub fn right_only(v: f64) -> Self {
        Self::with(0.0, v, Configuration::RightOnly)
    }

    pub fn dual(left: f64, right: f64) -> Self {
        Self::with(left, right, Configuration::Dual)
    }

    /// Left and right swapped.
    pub fn mirrored(&self) -> Self {
        let configuration = match self.configuration {
            Configuration::LeftOnly => Configuration::RightOnly,
            Configuration::RightOnly => Configuration::LeftOnly,
            Configuration::Dual => Configuration::Dual,
        };
        Self {
            left_inlet_velocity: self.right_inlet_velocity,
            right_inlet_velocity: self.left_inlet_velocity,
            configuration,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l, r) = (self.left_inlet_velocity, self.right_inlet_velocity);
        for (side, v) in [("left", l), ("right", r)] {
            if !(0.0..=MAX_INLET_VELOCITY).contains(&v) {
                return Err(Error::InvalidCase(format!(
                    "{side} inlet velocity {v} outside [0, {MAX_INLET_VELOCITY}] m/s"
                )));
            }
        }
        if l == 0.0 && r == 0.0 {
            return Err(Error::InvalidCase("both inlets disabled".into()));
        }
        let consistent = match self.configuration {
            Configuration::LeftOnly => l > 0.0 && r == 0.0,
            Configuration::RightOnly => l == 0.0 && r > 0.0,
            Configuration::Dual => l > 0.0 && r > 0.0,
        };
        if !consistent {
            return Err(Error::InvalidCase(format!(
                "configuration {} inconsistent with velocities L={l}, R={r}",
                self.configuration.as_str()
            )));
        }
        for (what, v) in [
            ("inlet temperature", self.inlet_temperature),
            ("window temperature", self.window_temperature),
            ("heat flux", self.boundary_heat_flux),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidCase(format!("{what} is not finite")));
            }
        }
        Ok(())
    }
}

/// Assemble the boundary conditions of `spec` on `geometry`.
pub fn build_case(spec: &CaseSpec, geometry: &RoomGeometry) -> Result<Problem> {
    spec.validate()?;
    Ok(assemble(spec, geometry))
}

fn assemble(spec: &CaseSpec, g: &RoomGeometry) -> Problem {
    let side = |speed: f64| -> Vec<FaceBc> {
        (0..g.ny)
            .map(|j| {
                if g.in_inlet_slot(j) {
                    if speed > 0.0 {
                        FaceBc::Inlet {
                            speed,
                            temperature: spec.inlet_temperature,
                        }
                    } else {
                        FaceBc::Wall(Thermal::Adiabatic)
                    }
                } else if g.on_window(j) {
                    FaceBc::Wall(Thermal::Fixed(spec.window_temperature))
                } else {
                    FaceBc::Wall(Thermal::Adiabatic)
                }
            })
            .collect()
    };
    let outlet_faces = (0..g.nx).filter(|&i| g.in_outlet(i)).count();
    let floor_flux = spec.boundary_heat_flux / ((g.nx - outlet_faces) as f64 * g.dx());
    let ceiling_flux = spec.boundary_heat_flux / g.width;
    let south = (0..g.nx)
        .map(|i| {
            if g.in_outlet(i) {
                FaceBc::Outlet
            } else {
                FaceBc::Wall(Thermal::Flux(floor_flux))
            }
        })
        .collect();
    let north = vec![FaceBc::Wall(Thermal::Flux(ceiling_flux)); g.nx];
    let air = AirProperties::default();
    Problem {
        width: g.width,
        height: g.height,
        nx: g.nx,
        ny: g.ny,
        west: side(spec.left_inlet_velocity),
        east: side(spec.right_inlet_velocity),
        south,
        north,
        air,
        buoyancy: true,
        initial_temperature: air.reference_temperature,
    }
}

/// Benchmark room with no forcing at all: both inlets closed, windows at the
/// inlet temperature and zero wall flux. Used as a solver diagnostic.
pub fn quiescent_problem(geometry: &RoomGeometry, temperature: f64) -> Problem {
    let spec = CaseSpec {
        left_inlet_velocity: 0.0,
        right_inlet_velocity: 0.0,
        inlet_temperature: temperature,
        window_temperature: temperature,
        boundary_heat_flux: 0.0,
        configuration: Configuration::Dual,
    };
    let mut p = assemble(&spec, geometry);
    p.initial_temperature = temperature;
    p
}

/// `spec` with windows at the inlet temperature and zero wall flux.
pub fn adiabatic_problem(spec: &CaseSpec, geometry: &RoomGeometry) -> Result<Problem> {
    let mut s = *spec;
    s.window_temperature = s.inlet_temperature;
    s.boundary_heat_flux = 0.0;
    let mut p = build_case(&s, geometry)?;
    p.initial_temperature = s.inlet_temperature;
    Ok(p)
}

/// Isothermal jet room: inlet slot at the top of the left wall, outlet slot at
/// the bottom of the right wall, adiabatic walls elsewhere.
pub fn validation_problem(geometry: &RoomGeometry, inlet_speed: f64) -> Problem {
    let temperature = 20.0;
    let west = (0..geometry.ny)
        .map(|j| {
            if geometry.in_inlet_slot(j) {
                FaceBc::Inlet {
                    speed: inlet_speed,
                    temperature,
                }
            } else {
                FaceBc::Wall(Thermal::Adiabatic)
            }
        })
        .collect();
    let east = (0..geometry.ny)
        .map(|j| {
            let yc = (j as f64 + 0.5) * geometry.dy();
            if yc < geometry.inlet_height {
                FaceBc::Outlet
            } else {
                FaceBc::Wall(Thermal::Adiabatic)
            }
        })
        .collect();
    Problem {
        width: geometry.width,
        height: geometry.height,
        nx: geometry.nx,
        ny: geometry.ny,
        west,
        east,
        south: vec![FaceBc::Wall(Thermal::Adiabatic); geometry.nx],
        north: vec![FaceBc::Wall(Thermal::Adiabatic); geometry.nx],
        air: AirProperties::default(),
        buoyancy: false,
        initial_temperature: temperature,
    }
}
