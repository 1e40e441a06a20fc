//! Post-processing of solved states: balances and line profiles.

use super::simple::FlowState;
use super::{FaceBc, Thermal};
use crate::error::{Error, Result};

/// Vertical profile of cell-centred u through one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub column: usize,
    /// Cell-centre x of the column.
    pub x: f64,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

/// u-velocity profile at the cell-centre column nearest to `x`.
pub fn extract_profile(state: &FlowState, x: f64) -> Result<Profile> {
    let p = &state.problem;
    if !(0.0..=p.width).contains(&x) {
        return Err(Error::InvalidArgument(format!(
            "profile position {x} m outside [0, {}] m",
            p.width
        )));
    }
    let dx = p.dx();
    let column = ((x / dx - 0.5).round().max(0.0) as usize).min(p.nx - 1);
    let nx = p.nx;
    Ok(Profile {
        column,
        x: (column as f64 + 0.5) * dx,
        y: (0..p.ny).map(|j| (j as f64 + 0.5) * p.dy()).collect(),
        u: (0..p.ny).map(|j| state.cells.u[j * nx + column]).collect(),
    })
}

/// Global and worst per-cell mass imbalance, both relative to total inflow.
pub fn mass_imbalance(state: &FlowState) -> (f64, f64) {
    let p = &state.problem;
    let (nx, ny, dx, dy) = (p.nx, p.ny, p.dx(), p.dy());
    let u = |i: usize, j: usize| state.u_faces[j * (nx + 1) + i];
    let v = |i: usize, j: usize| state.v_faces[j * nx + i];
    let mut net = 0.0;
    for j in 0..ny {
        net += (u(0, j) - u(nx, j)) * dy;
    }
    for i in 0..nx {
        net += (v(i, 0) - v(i, ny)) * dx;
    }
    let mut worst: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let r = (u(i, j) - u(i + 1, j)) * dy + (v(i, j) - v(i, j + 1)) * dx;
            worst = worst.max(r.abs());
        }
    }
    let q = p.inflow().max(1e-300);
    (net.abs() / q, worst / q)
}

/// Heat flows per unit depth (W/m, positive into the room) and the
/// resulting imbalance fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub windows: f64,
    pub inlets: f64,
    pub outlet: f64,
    pub walls: f64,
    pub imbalance: f64,
}

/// `|Σ heat in − Σ heat out| / largest term`, evaluated with the same face
/// fluxes the energy equation uses. Valid for unconverged states too.
pub fn energy_balance(state: &FlowState) -> EnergyTerms {
    let p = &state.problem;
    let (nx, ny, dx, dy) = (p.nx, p.ny, p.dx(), p.dy());
    let rho_cp = p.air.density * p.air.specific_heat;
    let alpha = p.air.effective_diffusivity();
    let t = &state.cells.temperature;
    let mut terms = EnergyTerms {
        windows: 0.0,
        inlets: 0.0,
        outlet: 0.0,
        walls: 0.0,
        imbalance: 0.0,
    };
    let mut face = |bc: FaceBc, outward: f64, length: f64, half: f64, tp: f64| match bc {
        FaceBc::Wall(Thermal::Adiabatic) => {}
        FaceBc::Wall(Thermal::Fixed(tb)) => {
            terms.windows += rho_cp * alpha * length / half * (tb - tp)
        }
        FaceBc::Wall(Thermal::Flux(q)) => terms.walls += q * length,
        FaceBc::Inlet { temperature, .. } => {
            terms.inlets +=
                rho_cp * (-outward * temperature + alpha * length / half * (temperature - tp));
        }
        FaceBc::Outlet => terms.outlet -= rho_cp * outward * tp,
    };
    for j in 0..ny {
        let (tw, te) = (t[j * nx], t[j * nx + nx - 1]);
        face(
            p.west[j],
            -state.u_faces[j * (nx + 1)] * dy,
            dy,
            0.5 * dx,
            tw,
        );
        face(
            p.east[j],
            state.u_faces[j * (nx + 1) + nx] * dy,
            dy,
            0.5 * dx,
            te,
        );
    }
    for i in 0..nx {
        let (ts, tn) = (t[i], t[(ny - 1) * nx + i]);
        face(p.south[i], -state.v_faces[i] * dx, dx, 0.5 * dy, ts);
        face(
            p.north[i],
            state.v_faces[ny * nx + i] * dx,
            dx,
            0.5 * dy,
            tn,
        );
    }
    let largest = [terms.windows, terms.inlets, terms.outlet, terms.walls]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let net = terms.windows + terms.inlets + terms.outlet + terms.walls;
    terms.imbalance = if largest > 0.0 {
        net.abs() / largest
    } else {
        0.0
    };
    terms
}
