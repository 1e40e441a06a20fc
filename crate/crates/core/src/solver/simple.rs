//! SIMPLE pressure–velocity coupling on a staggered grid.
//!
//! `u` lives on vertical faces ((nx+1)×ny), `v` on horizontal faces
//! (nx×(ny+1)); pressure and temperature at cell centres. Convection is
//! first-order upwind, diffusion central, both in conservative form.

use super::linear::{iccg, Stencil};
use super::{FaceBc, Problem, Thermal};
use crate::error::{Error, Result};

/// Iteration controls for [`solve_steady`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub velocity_relaxation: f64,
    pub pressure_relaxation: f64,
    pub temperature_relaxation: f64,
    pub momentum_sweeps: usize,
    pub energy_sweeps: usize,
    /// Relative residual target of the pressure-correction solve.
    pub pressure_tolerance: f64,
    /// Consecutive residual increases that count as divergence.
    pub divergence_window: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_iterations: 20_000,
            velocity_relaxation: 0.7,
            pressure_relaxation: 0.3,
            temperature_relaxation: 0.8,
            momentum_sweeps: 2,
            energy_sweeps: 2,
            pressure_tolerance: 0.1,
            divergence_window: 500,
        }
    }
}

impl SolverSettings {
    pub fn with_tolerance(mut self, tolerance: f64, max_iterations: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        self
    }
}

/// Scaled residuals per iteration: `[mass, u, v, energy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<[f64; 4]>,
}

impl Convergence {
    pub fn final_residual(&self) -> f64 {
        self.history
            .last()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY)
    }
}

/// Cell-centred fields, row-major with row 0 at the floor (`j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct CellFields {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl CellFields {
    /// Fields mirrored about the vertical centre line (u changes sign).
    pub fn mirrored(&self) -> CellFields {
        let (nx, ny) = (self.nx, self.ny);
        let flip = |f: &[f64], sign: f64| -> Vec<f64> {
            let mut out = vec![0.0; nx * ny];
            for j in 0..ny {
                for i in 0..nx {
                    out[j * nx + i] = sign * f[j * nx + (nx - 1 - i)];
                }
            }
            out
        };
        CellFields {
            nx,
            ny,
            u: flip(&self.u, -1.0),
            v: flip(&self.v, 1.0),
            magnitude: flip(&self.magnitude, 1.0),
            temperature: flip(&self.temperature, 1.0),
        }
    }

    pub fn mean_temperature(&self) -> f64 {
        self.temperature.iter().sum::<f64>() / self.temperature.len() as f64
    }
}

/// Solved state of a [`Problem`].
#[derive(Debug, Clone)]
pub struct FlowState {
    pub problem: Problem,
    pub cells: CellFields,
    /// Staggered x-velocity, `j * (nx + 1) + i`.
    pub u_faces: Vec<f64>,
    /// Staggered y-velocity, `j * nx + i`.
    pub v_faces: Vec<f64>,
    pub pressure: Vec<f64>,
    pub convergence: Convergence,
}

impl FlowState {
    pub fn converged(&self) -> bool {
        self.convergence.converged
    }
}

struct Simple<'a> {
    p: &'a Problem,
    s: SolverSettings,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    rho: f64,
    mu: f64,
    alpha: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    pr: Vec<f64>,
    t: Vec<f64>,
    du: Vec<f64>,
    dv: Vec<f64>,
    inflow: f64,
    temperature_span: f64,
    /// Largest inlet speed, used to floor the momentum residual scale.
    velocity_scale: f64,
}

/// Run SIMPLE iterations until every scaled residual is below the tolerance.
///
/// Hitting `max_iterations` returns the state flagged unconverged; a
/// non-finite residual or `divergence_window` consecutive residual increases
/// abort with [`Error::Diverged`].
pub fn solve_steady(problem: &Problem, settings: &SolverSettings) -> Result<FlowState> {
    problem.validate()?;
    let mut st = Simple::new(problem, *settings);
    let mut history = Vec::new();
    let mut rising = 0usize;
    let mut previous = f64::INFINITY;
    let mut converged = false;
    for it in 0..settings.max_iterations {
        let r = st.iterate();
        let worst = r.iter().copied().fold(0.0, f64::max);
        history.push(r);
        if !worst.is_finite() || r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                iterations: it + 1,
                residual: worst,
            });
        }
        if it % 500 == 0 {
            tracing::debug!(
                iteration = it,
                mass = r[0],
                u = r[1],
                v = r[2],
                energy = r[3]
            );
        }
        if worst < settings.tolerance {
            converged = true;
            break;
        }
        rising = if worst > previous { rising + 1 } else { 0 };
        previous = worst;
        if rising >= settings.divergence_window {
            return Err(Error::Diverged {
                iterations: it + 1,
                residual: worst,
            });
        }
    }
    if converged {
        st.finalize_continuity();
    }
    let iterations = history.len();
    Ok(st.into_state(Convergence {
        converged,
        iterations,
        history,
    }))
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

impl<'a> Simple<'a> {
    fn new(p: &'a Problem, s: SolverSettings) -> Self {
        let (nx, ny) = (p.nx, p.ny);
        let mut temps = vec![p.initial_temperature];
        for side in [&p.west, &p.east, &p.south, &p.north] {
            for f in side.iter() {
                match f {
                    FaceBc::Wall(Thermal::Fixed(t)) => temps.push(*t),
                    FaceBc::Inlet { temperature, .. } => temps.push(*temperature),
                    _ => {}
                }
            }
        }
        let mut speed: f64 = 0.0;
        for side in [&p.west, &p.east, &p.south, &p.north] {
            for f in side.iter() {
                if let FaceBc::Inlet { speed: s, .. } = f {
                    speed = speed.max(*s);
                }
            }
        }
        let lo = temps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut me = Self {
            p,
            s,
            nx,
            ny,
            dx: p.dx(),
            dy: p.dy(),
            rho: p.air.density,
            mu: p.air.density * p.air.effective_viscosity(),
            alpha: p.air.effective_diffusivity(),
            u: vec![0.0; (nx + 1) * ny],
            v: vec![0.0; nx * (ny + 1)],
            pr: vec![0.0; nx * ny],
            t: vec![p.initial_temperature; nx * ny],
            du: vec![0.0; (nx + 1) * ny],
            dv: vec![0.0; nx * (ny + 1)],
            inflow: p.inflow(),
            temperature_span: (hi - lo).max(1.0),
            velocity_scale: if speed > 0.0 { speed } else { 0.1 },
        };
        me.boundary_velocities();
        me
    }

    #[inline]
    fn iu(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    #[inline]
    fn iv(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    fn ic(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    fn iterate(&mut self) -> [f64; 4] {
        let ru = self.solve_u();
        let rv = self.solve_v();
        self.boundary_velocities();
        let rm = self.correct_pressure(self.s.pressure_tolerance);
        let rt = self.solve_energy();
        [rm, ru, rv, rt]
    }

    /// Fixed inlet/wall velocities, extrapolated outlets scaled to the inflow.
    fn boundary_velocities(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            let k = self.iu(0, j);
            self.u[k] = match self.p.west[j] {
                FaceBc::Inlet { speed, .. } => speed,
                FaceBc::Wall(_) => 0.0,
                FaceBc::Outlet => self.u[self.iu(1, j)],
            };
            let k = self.iu(nx, j);
            self.u[k] = match self.p.east[j] {
                FaceBc::Inlet { speed, .. } => -speed,
                FaceBc::Wall(_) => 0.0,
                FaceBc::Outlet => self.u[self.iu(nx - 1, j)],
            };
        }
        for i in 0..nx {
            let k = self.iv(i, 0);
            self.v[k] = match self.p.south[i] {
                FaceBc::Inlet { speed, .. } => speed,
                FaceBc::Wall(_) => 0.0,
                FaceBc::Outlet => self.v[self.iv(i, 1)],
            };
            let k = self.iv(i, ny);
            self.v[k] = match self.p.north[i] {
                FaceBc::Inlet { speed, .. } => -speed,
                FaceBc::Wall(_) => 0.0,
                FaceBc::Outlet => self.v[self.iv(i, ny - 1)],
            };
        }
        // outward flux through outlets and total outlet length
        let mut out = 0.0;
        let mut length = 0.0;
        for j in 0..ny {
            if self.p.west[j].is_outlet() {
                out -= self.u[self.iu(0, j)] * self.dy;
                length += self.dy;
            }
            if self.p.east[j].is_outlet() {
                out += self.u[self.iu(nx, j)] * self.dy;
                length += self.dy;
            }
        }
        for i in 0..nx {
            if self.p.south[i].is_outlet() {
                out -= self.v[self.iv(i, 0)] * self.dx;
                length += self.dx;
            }
            if self.p.north[i].is_outlet() {
                out += self.v[self.iv(i, ny)] * self.dx;
                length += self.dx;
            }
        }
        if length == 0.0 {
            return;
        }
        let uniform = out <= 1e-12 * self.inflow.max(f64::MIN_POSITIVE);
        let (scale, speed) = if uniform {
            (0.0, self.inflow / length)
        } else {
            (self.inflow / out, 0.0)
        };
        for j in 0..ny {
            if self.p.west[j].is_outlet() {
                let k = self.iu(0, j);
                self.u[k] = self.u[k] * scale - speed;
            }
            if self.p.east[j].is_outlet() {
                let k = self.iu(nx, j);
                self.u[k] = self.u[k] * scale + speed;
            }
        }
        for i in 0..nx {
            if self.p.south[i].is_outlet() {
                let k = self.iv(i, 0);
                self.v[k] = self.v[k] * scale - speed;
            }
            if self.p.north[i].is_outlet() {
                let k = self.iv(i, ny);
                self.v[k] = self.v[k] * scale + speed;
            }
        }
    }

    /// Diffusion coefficient for a tangential-velocity boundary under a
    /// staggered control volume spanning boundary faces `a` and `b`.
    fn tangential_d(&self, a: FaceBc, b: FaceBc, length: f64, half: f64) -> f64 {
        if a.is_outlet() && b.is_outlet() {
            0.0
        } else {
            self.mu * length / half
        }
    }

    fn solve_u(&mut self) -> f64 {
        let (nx, ny, dx, dy, rho) = (self.nx, self.ny, self.dx, self.dy, self.rho);
        let mut st = Stencil::new(nx - 1, ny);
        let dxx = self.mu * dy / dx;
        let dyy = self.mu * dx / dy;
        for j in 0..ny {
            for i in 1..nx {
                let k = st.idx(i - 1, j);
                let fe = rho * 0.5 * (self.u[self.iu(i, j)] + self.u[self.iu(i + 1, j)]) * dy;
                let fw = rho * 0.5 * (self.u[self.iu(i - 1, j)] + self.u[self.iu(i, j)]) * dy;
                let fn_ =
                    rho * 0.5 * (self.v[self.iv(i - 1, j + 1)] + self.v[self.iv(i, j + 1)]) * dx;
                let fs = rho * 0.5 * (self.v[self.iv(i - 1, j)] + self.v[self.iv(i, j)]) * dx;
                let dn = if j + 1 < ny {
                    dyy
                } else {
                    self.tangential_d(self.p.north[i - 1], self.p.north[i], dx, 0.5 * dy)
                };
                let ds = if j > 0 {
                    dyy
                } else {
                    self.tangential_d(self.p.south[i - 1], self.p.south[i], dx, 0.5 * dy)
                };
                let ae = dxx + pos(-fe);
                let aw = dxx + pos(fw);
                let an = dn + pos(-fn_);
                let as_ = ds + pos(fs);
                let ap = dxx + pos(fe) + dxx + pos(-fw) + dn + pos(fn_) + ds + pos(-fs);
                let mut b = (self.pr[self.ic(i - 1, j)] - self.pr[self.ic(i, j)]) * dy;
                if i + 1 < nx {
                    st.ae[k] = ae;
                } else {
                    b += ae * self.u[self.iu(nx, j)];
                }
                if i > 1 {
                    st.aw[k] = aw;
                } else {
                    b += aw * self.u[self.iu(0, j)];
                }
                // tangential boundary velocity is zero, so boundary an/as drop out
                if j + 1 < ny {
                    st.an[k] = an;
                }
                if j > 0 {
                    st.as_[k] = as_;
                }
                st.ap[k] = ap;
                st.b[k] = b;
            }
        }
        let mut phi: Vec<f64> = (0..ny)
            .flat_map(|j| (1..nx).map(move |i| (i, j)))
            .map(|(i, j)| self.u[self.iu(i, j)])
            .collect();
        let (res, norm) = st.residual(&phi);
        let norm = norm.max(1e-2 * self.velocity_scale * st.ap.iter().sum::<f64>());
        st.under_relax(self.s.velocity_relaxation, &phi);
        st.line_sweeps(&mut phi, self.s.momentum_sweeps);
        for j in 0..ny {
            for i in 1..nx {
                let k = st.idx(i - 1, j);
                let ku = self.iu(i, j);
                self.u[ku] = phi[k];
                self.du[ku] = dy / st.ap[k];
            }
        }
        scaled(res, norm)
    }

    fn solve_v(&mut self) -> f64 {
        let (nx, ny, dx, dy, rho) = (self.nx, self.ny, self.dx, self.dy, self.rho);
        let mut st = Stencil::new(nx, ny - 1);
        let dxx = self.mu * dy / dx;
        let dyy = self.mu * dx / dy;
        let air = &self.p.air;
        let buoyancy = if self.p.buoyancy {
            rho * air.gravity * air.expansion_coefficient * dx * dy
        } else {
            0.0
        };
        for j in 1..ny {
            for i in 0..nx {
                let k = st.idx(i, j - 1);
                let fn_ = rho * 0.5 * (self.v[self.iv(i, j)] + self.v[self.iv(i, j + 1)]) * dx;
                let fs = rho * 0.5 * (self.v[self.iv(i, j - 1)] + self.v[self.iv(i, j)]) * dx;
                let fe =
                    rho * 0.5 * (self.u[self.iu(i + 1, j - 1)] + self.u[self.iu(i + 1, j)]) * dy;
                let fw = rho * 0.5 * (self.u[self.iu(i, j - 1)] + self.u[self.iu(i, j)]) * dy;
                let de = if i + 1 < nx {
                    dxx
                } else {
                    self.tangential_d(self.p.east[j - 1], self.p.east[j], dy, 0.5 * dx)
                };
                let dw = if i > 0 {
                    dxx
                } else {
                    self.tangential_d(self.p.west[j - 1], self.p.west[j], dy, 0.5 * dx)
                };
                let ae = de + pos(-fe);
                let aw = dw + pos(fw);
                let an = dyy + pos(-fn_);
                let as_ = dyy + pos(fs);
                let ap = de + pos(fe) + dw + pos(-fw) + dyy + pos(fn_) + dyy + pos(-fs);
                let tf = 0.5 * (self.t[self.ic(i, j - 1)] + self.t[self.ic(i, j)]);
                let mut b = (self.pr[self.ic(i, j - 1)] - self.pr[self.ic(i, j)]) * dx
                    + buoyancy * (tf - air.reference_temperature);
                if j + 1 < ny {
                    st.an[k] = an;
                } else {
                    b += an * self.v[self.iv(i, ny)];
                }
                if j > 1 {
                    st.as_[k] = as_;
                } else {
                    b += as_ * self.v[self.iv(i, 0)];
                }
                if i + 1 < nx {
                    st.ae[k] = ae;
                }
                if i > 0 {
                    st.aw[k] = aw;
                }
                st.ap[k] = ap;
                st.b[k] = b;
            }
        }
        let mut phi: Vec<f64> = (1..ny)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| self.v[self.iv(i, j)])
            .collect();
        let (res, norm) = st.residual(&phi);
        let norm = norm.max(1e-2 * self.velocity_scale * st.ap.iter().sum::<f64>());
        st.under_relax(self.s.velocity_relaxation, &phi);
        st.line_sweeps(&mut phi, self.s.momentum_sweeps);
        for j in 1..ny {
            for i in 0..nx {
                let k = st.idx(i, j - 1);
                let kv = self.iv(i, j);
                self.v[kv] = phi[k];
                self.dv[kv] = dx / st.ap[k];
            }
        }
        scaled(res, norm)
    }

    /// Per-cell mass imbalance (inflow positive), kg/(m·s).
    fn imbalance(&self, i: usize, j: usize) -> f64 {
        self.rho
            * ((self.u[self.iu(i, j)] - self.u[self.iu(i + 1, j)]) * self.dy
                + (self.v[self.iv(i, j)] - self.v[self.iv(i, j + 1)]) * self.dx)
    }

    fn mass_reference(&self) -> f64 {
        self.rho * self.inflow.max(1e-3 * self.velocity_scale * self.p.height)
    }

    /// Solve the pressure-correction equation and correct u, v, p. Returns
    /// the scaled mass residual before correction.
    fn correct_pressure(&mut self, rel_tol: f64) -> f64 {
        let (nx, ny, dx, dy, rho) = (self.nx, self.ny, self.dx, self.dy, self.rho);
        let mut st = Stencil::new(nx, ny);
        let mut total = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let k = st.idx(i, j);
                let mut ap = 0.0;
                if i + 1 < nx {
                    st.ae[k] = rho * self.du[self.iu(i + 1, j)] * dy;
                    ap += st.ae[k];
                }
                if i > 0 {
                    st.aw[k] = rho * self.du[self.iu(i, j)] * dy;
                    ap += st.aw[k];
                }
                if j + 1 < ny {
                    st.an[k] = rho * self.dv[self.iv(i, j + 1)] * dx;
                    ap += st.an[k];
                }
                if j > 0 {
                    st.as_[k] = rho * self.dv[self.iv(i, j)] * dx;
                    ap += st.as_[k];
                }
                st.ap[k] = ap;
                st.b[k] = self.imbalance(i, j);
                total += st.b[k].abs();
            }
        }
        let mut pc = vec![0.0; nx * ny];
        iccg(&st, &mut pc, Some(0), rel_tol, 2000);
        let mean = pc.iter().sum::<f64>() / pc.len() as f64;
        for v in &mut pc {
            *v -= mean;
        }
        for j in 0..ny {
            for i in 1..nx {
                let k = self.iu(i, j);
                self.u[k] += self.du[k] * (pc[self.ic(i - 1, j)] - pc[self.ic(i, j)]);
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let k = self.iv(i, j);
                self.v[k] += self.dv[k] * (pc[self.ic(i, j - 1)] - pc[self.ic(i, j)]);
            }
        }
        let a = self.s.pressure_relaxation;
        for (p, c) in self.pr.iter_mut().zip(&pc) {
            *p += a * c;
        }
        total / self.mass_reference()
    }

    /// Tight final projection so the returned velocities satisfy discrete
    /// continuity far below the outer tolerance. Pressure is left untouched.
    fn finalize_continuity(&mut self) {
        let saved = self.pr.clone();
        for _ in 0..3 {
            self.correct_pressure(1e-12);
        }
        self.pr = saved;
    }

    /// `(ap, b)` contribution of a boundary face to a temperature cell.
    fn energy_boundary(&self, bc: FaceBc, outward: f64, length: f64, half: f64) -> (f64, f64) {
        let rho_cp = self.rho * self.p.air.specific_heat;
        match bc {
            FaceBc::Wall(Thermal::Adiabatic) => (0.0, 0.0),
            FaceBc::Wall(Thermal::Fixed(tb)) => {
                let d = self.alpha * length / half;
                (d, d * tb)
            }
            FaceBc::Wall(Thermal::Flux(q)) => (0.0, q * length / rho_cp),
            FaceBc::Inlet { temperature, .. } => {
                let a = self.alpha * length / half + pos(-outward);
                (a, a * temperature)
            }
            // zero gradient in either flow direction
            FaceBc::Outlet => (0.0, 0.0),
        }
    }

    /// Energy with `ap = Σ a_nb`: the discrete continuity error of the
    /// current iterate is not fed back into temperature, so a uniform field
    /// stays uniform when nothing heats or cools it.
    fn solve_energy(&mut self) -> f64 {
        let (nx, ny, dx, dy) = (self.nx, self.ny, self.dx, self.dy);
        let mut st = Stencil::new(nx, ny);
        let dxx = self.alpha * dy / dx;
        let dyy = self.alpha * dx / dy;
        for j in 0..ny {
            for i in 0..nx {
                let k = st.idx(i, j);
                let fe = self.u[self.iu(i + 1, j)] * dy;
                let fw = self.u[self.iu(i, j)] * dy;
                let fn_ = self.v[self.iv(i, j + 1)] * dx;
                let fs = self.v[self.iv(i, j)] * dx;
                let mut ap = 0.0;
                let mut b = 0.0;
                let mut boundary = |(a, bb): (f64, f64)| {
                    ap += a;
                    b += bb;
                };
                if i + 1 < nx {
                    st.ae[k] = dxx + pos(-fe);
                } else {
                    boundary(self.energy_boundary(self.p.east[j], fe, dy, 0.5 * dx));
                }
                if i > 0 {
                    st.aw[k] = dxx + pos(fw);
                } else {
                    boundary(self.energy_boundary(self.p.west[j], -fw, dy, 0.5 * dx));
                }
                if j + 1 < ny {
                    st.an[k] = dyy + pos(-fn_);
                } else {
                    boundary(self.energy_boundary(self.p.north[i], fn_, dx, 0.5 * dy));
                }
                if j > 0 {
                    st.as_[k] = dyy + pos(fs);
                } else {
                    boundary(self.energy_boundary(self.p.south[i], -fs, dx, 0.5 * dy));
                }
                st.ap[k] = ap + st.ae[k] + st.aw[k] + st.an[k] + st.as_[k];
                st.b[k] = b;
            }
        }
        let (res, _) = st.residual(&self.t);
        let norm = st.ap.iter().sum::<f64>() * self.temperature_span;
        let previous = self.t.clone();
        st.under_relax(self.s.temperature_relaxation, &previous);
        st.line_sweeps(&mut self.t, self.s.energy_sweeps);
        scaled(res, norm)
    }

    fn into_state(self, convergence: Convergence) -> FlowState {
        let (nx, ny) = (self.nx, self.ny);
        let mut u = vec![0.0; nx * ny];
        let mut v = vec![0.0; nx * ny];
        let mut magnitude = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = self.ic(i, j);
                u[k] = 0.5 * (self.u[self.iu(i, j)] + self.u[self.iu(i + 1, j)]);
                v[k] = 0.5 * (self.v[self.iv(i, j)] + self.v[self.iv(i, j + 1)]);
                magnitude[k] = u[k].hypot(v[k]);
            }
        }
        FlowState {
            problem: self.p.clone(),
            cells: CellFields {
                nx,
                ny,
                u,
                v,
                magnitude,
                temperature: self.t,
            },
            u_faces: self.u,
            v_faces: self.v,
            pressure: self.pr,
            convergence,
        }
    }
}

fn scaled(res: f64, norm: f64) -> f64 {
    if res == 0.0 {
        0.0
    } else if norm > 0.0 {
        res / norm
    } else {
        f64::INFINITY
    }
}
