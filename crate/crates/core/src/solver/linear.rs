//! Five-point stencil systems on a structured block of unknowns.
//!
//! `ap·φP = ae·φE + aw·φW + an·φN + as·φS + b`. Neighbours outside the block
//! are folded into `b` by the assembler, so their coefficients are zero here.

#[derive(Debug, Clone)]
pub struct Stencil {
    pub ni: usize,
    pub nj: usize,
    pub ap: Vec<f64>,
    pub ae: Vec<f64>,
    pub aw: Vec<f64>,
    pub an: Vec<f64>,
    pub as_: Vec<f64>,
    pub b: Vec<f64>,
}

impl Stencil {
    pub fn new(ni: usize, nj: usize) -> Self {
        let n = ni * nj;
        Self {
            ni,
            nj,
            ap: vec![0.0; n],
            ae: vec![0.0; n],
            aw: vec![0.0; n],
            an: vec![0.0; n],
            as_: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ni + i
    }

    fn neighbour_sum(&self, phi: &[f64], i: usize, j: usize) -> f64 {
        let k = self.idx(i, j);
        let mut s = 0.0;
        if i + 1 < self.ni {
            s += self.ae[k] * phi[k + 1];
        }
        if i > 0 {
            s += self.aw[k] * phi[k - 1];
        }
        if j + 1 < self.nj {
            s += self.an[k] * phi[k + self.ni];
        }
        if j > 0 {
            s += self.as_[k] * phi[k - self.ni];
        }
        s
    }

    /// `(Σ|ap·φ − Σa·φnb − b|, Σ|ap·φ|)`.
    pub fn residual(&self, phi: &[f64]) -> (f64, f64) {
        let mut res = 0.0;
        let mut norm = 0.0;
        for j in 0..self.nj {
            for i in 0..self.ni {
                let k = self.idx(i, j);
                let r = self.ap[k] * phi[k] - self.neighbour_sum(phi, i, j) - self.b[k];
                res += r.abs();
                norm += (self.ap[k] * phi[k]).abs();
            }
        }
        (res, norm)
    }

    /// Implicit under-relaxation towards `previous`.
    pub fn under_relax(&mut self, alpha: f64, previous: &[f64]) {
        for k in 0..self.ap.len() {
            let ap = self.ap[k] / alpha;
            self.b[k] += (1.0 - alpha) * ap * previous[k];
            self.ap[k] = ap;
        }
    }

    /// Line-by-line tridiagonal sweeps, alternating row and column lines and
    /// traversal direction.
    pub fn line_sweeps(&self, phi: &mut [f64], sweeps: usize) {
        let n = self.ni.max(self.nj);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for s in 0..sweeps {
            let reverse = s % 2 == 1;
            for jj in 0..self.nj {
                let j = if reverse { self.nj - 1 - jj } else { jj };
                self.solve_row(phi, j, &mut p, &mut q);
            }
            for ii in 0..self.ni {
                let i = if reverse { self.ni - 1 - ii } else { ii };
                self.solve_column(phi, i, &mut p, &mut q);
            }
        }
    }

    fn solve_row(&self, phi: &mut [f64], j: usize, p: &mut [f64], q: &mut [f64]) {
        let ni = self.ni;
        for i in 0..ni {
            let k = self.idx(i, j);
            let mut d = self.b[k];
            if j + 1 < self.nj {
                d += self.an[k] * phi[k + ni];
            }
            if j > 0 {
                d += self.as_[k] * phi[k - ni];
            }
            let lower = if i > 0 { self.aw[k] } else { 0.0 };
            let upper = if i + 1 < ni { self.ae[k] } else { 0.0 };
            let (pp, qp) = if i > 0 {
                (p[i - 1], q[i - 1])
            } else {
                (0.0, 0.0)
            };
            let denom = self.ap[k] - lower * pp;
            p[i] = upper / denom;
            q[i] = (d + lower * qp) / denom;
        }
        for i in (0..ni).rev() {
            let k = self.idx(i, j);
            phi[k] = if i + 1 < ni {
                p[i] * phi[k + 1] + q[i]
            } else {
                q[i]
            };
        }
    }

    fn solve_column(&self, phi: &mut [f64], i: usize, p: &mut [f64], q: &mut [f64]) {
        let (ni, nj) = (self.ni, self.nj);
        for j in 0..nj {
            let k = self.idx(i, j);
            let mut d = self.b[k];
            if i + 1 < ni {
                d += self.ae[k] * phi[k + 1];
            }
            if i > 0 {
                d += self.aw[k] * phi[k - 1];
            }
            let lower = if j > 0 { self.as_[k] } else { 0.0 };
            let upper = if j + 1 < nj { self.an[k] } else { 0.0 };
            let (pp, qp) = if j > 0 {
                (p[j - 1], q[j - 1])
            } else {
                (0.0, 0.0)
            };
            let denom = self.ap[k] - lower * pp;
            p[j] = upper / denom;
            q[j] = (d + lower * qp) / denom;
        }
        for j in (0..nj).rev() {
            let k = self.idx(i, j);
            phi[k] = if j + 1 < nj {
                p[j] * phi[k + ni] + q[j]
            } else {
                q[j]
            };
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.nj {
            for i in 0..self.ni {
                let k = self.idx(i, j);
                out[k] = self.ap[k] * x[k] - self.neighbour_sum(x, i, j);
            }
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients with an IC(0) preconditioner for a symmetric stencil
/// (`ae[k] == aw[k+1]`, `an[k] == as[k+ni]`).
///
/// When `pin` is set that unknown is held at zero, which regularises the
/// all-Neumann pressure-correction system.
pub fn iccg(
    st: &Stencil,
    x: &mut [f64],
    pin: Option<usize>,
    rel_tol: f64,
    max_iter: usize,
) -> SolveStats {
    let n = st.ap.len();
    let ni = st.ni;
    let mut a = st.clone();
    if let Some(k) = pin {
        a.ap[k] = 1.0;
        a.b[k] = 0.0;
        let (i, j) = (k % ni, k / ni);
        a.ae[k] = 0.0;
        a.aw[k] = 0.0;
        a.an[k] = 0.0;
        a.as_[k] = 0.0;
        if i > 0 {
            a.ae[k - 1] = 0.0;
        }
        if i + 1 < ni {
            a.aw[k + 1] = 0.0;
        }
        if j > 0 {
            a.an[k - ni] = 0.0;
        }
        if j + 1 < a.nj {
            a.as_[k + ni] = 0.0;
        }
        x[k] = 0.0;
    }

    // IC(0) diagonal
    let mut d = vec![0.0; n];
    for j in 0..a.nj {
        for i in 0..ni {
            let k = a.idx(i, j);
            let mut v = a.ap[k];
            if i > 0 {
                v -= a.aw[k] * a.aw[k] / d[k - 1];
            }
            if j > 0 {
                v -= a.as_[k] * a.as_[k] / d[k - ni];
            }
            d[k] = if v > 1e-12 * a.ap[k] { v } else { a.ap[k] };
        }
    }
    let precondition = |r: &[f64], z: &mut [f64]| {
        for j in 0..a.nj {
            for i in 0..ni {
                let k = j * ni + i;
                let mut v = r[k];
                if i > 0 {
                    v += a.aw[k] * z[k - 1];
                }
                if j > 0 {
                    v += a.as_[k] * z[k - ni];
                }
                z[k] = v / d[k];
            }
        }
        for j in (0..a.nj).rev() {
            for i in (0..ni).rev() {
                let k = j * ni + i;
                let mut v = 0.0;
                if i + 1 < ni {
                    v += a.ae[k] * z[k + 1];
                }
                if j + 1 < a.nj {
                    v += a.an[k] * z[k + ni];
                }
                z[k] += v / d[k];
            }
        }
    };

    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for k in 0..n {
        r[k] = a.b[k] - r[k];
    }
    let b_norm = a.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
    let mut it = 0;
    while it < max_iter && rel > rel_tol {
        a.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        it += 1;
        if rel <= rel_tol {
            break;
        }
        precondition(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    SolveStats {
        iterations: it,
        relative_residual: rel,
    }
}
