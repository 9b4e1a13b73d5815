//! Linearizations at the equilibrium: characteristic polynomials of the fast
//! and full systems, their unique positive eigenvalues, and the unstable
//! eigenvector that seeds all shooting runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FiringRate, Landscape, ModelParams};

/// Eigenvalue refinement tolerance.
pub const EIGEN_TOL: f64 = 1e-13;
/// Pivot threshold below which the eigenvector solve is considered degenerate.
pub const PIVOT_TOL: f64 = 1e-12;

/// Characteristic polynomial of the fast-system linearization at a saddle
/// equilibrium (u_e, u_e, 0) with depression level q:
/// f(X) = X^3 + X^2/c - b^2 X - (b^2/c)(1 - q S'(u_e)).
#[derive(Clone, Copy, Debug)]
pub struct FastCharPoly {
    /// Coefficients in descending powers X^3 .. X^0.
    pub coeffs: [f64; 4],
}

impl FastCharPoly {
    pub fn at_point(params: &ModelParams, s: &FiringRate, u_e: f64, q: f64) -> FastCharPoly {
        let b2 = params.b * params.b;
        let c = params.c;
        FastCharPoly {
            coeffs: [1.0, 1.0 / c, -b2, -(b2 / c) * (1.0 - q * s.deriv(u_e))],
        }
    }

    pub fn at_equilibrium(
        params: &ModelParams,
        landscape: &Landscape,
        s: &FiringRate,
    ) -> FastCharPoly {
        Self::at_point(params, s, landscape.u0, landscape.q0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let [a3, a2, a1, _] = self.coeffs;
        3.0 * a3 * x * x + 2.0 * a2 * x + a1
    }
}

/// Characteristic polynomial of the full-system linearization at p0.
#[derive(Clone, Copy, Debug)]
pub struct FullCharPoly {
    /// Coefficients in descending powers X^4 .. X^0.
    pub coeffs: [f64; 5],
}

impl FullCharPoly {
    pub fn at_equilibrium(
        params: &ModelParams,
        landscape: &Landscape,
        s: &FiringRate,
    ) -> FullCharPoly {
        let b2 = params.b * params.b;
        let (c, eps, beta) = (params.c, params.epsilon, params.beta);
        let s0 = s.value(landscape.u0);
        let sp0 = s.deriv(landscape.u0);
        let q0 = landscape.q0;
        let k = 1.0 + beta * s0;
        FullCharPoly {
            coeffs: [
                1.0,
                (1.0 / c) * (1.0 + eps * k),
                -b2 + (eps / (c * c)) * k,
                (b2 / c) * (q0 * sp0 - 1.0 - eps * k),
                (b2 / (c * c)) * eps * (q0 * sp0 - 1.0 - beta * s0),
            ],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let [a4, a3, a2, a1, _] = self.coeffs;
        ((4.0 * a4 * x + 3.0 * a3) * x + 2.0 * a2) * x + a1
    }

    /// Number of sign changes of g along a scan of (0, hi]; the positive
    /// eigenvalue is unique iff this is 1.
    pub fn sign_changes_on_positive_axis(&self, hi: f64, samples: usize) -> usize {
        let mut changes = 0;
        let mut prev = self.eval(0.0);
        for i in 1..=samples {
            let x = hi * i as f64 / samples as f64;
            let gx = self.eval(x);
            if prev != 0.0 && gx != 0.0 && prev.signum() != gx.signum() {
                changes += 1;
            }
            if gx != 0.0 {
                prev = gx;
            }
        }
        changes
    }
}

/// Bracketed bisection refined by a few clipped Newton steps.
fn bracketed_root(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m == lo || m == hi {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if flo * fm < 0.0 {
            hi = m;
        } else {
            lo = m;
            flo = fm;
        }
        if hi - lo < EIGEN_TOL * lo.abs().max(1.0) * 1e-2 {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = df(x);
        if d == 0.0 {
            break;
        }
        let step = f(x) / d;
        let next = x - step;
        if next > lo && next < hi {
            x = next;
        } else {
            break;
        }
    }
    x
}

/// The unique positive eigenvalue of the fast linearization at a general
/// saddle point of the level-q fast system. Guaranteed bracket (0, b):
/// f(0) < 0 when q S'(u_e) < 1 and f(b) = (b^2/c) q S'(u_e) > 0.
pub fn fast_positive_eigenvalue_at(
    params: &ModelParams,
    s: &FiringRate,
    u_e: f64,
    q: f64,
) -> Result<f64> {
    params.require_positive_speed()?;
    let poly = FastCharPoly::at_point(params, s, u_e, q);
    if poly.eval(0.0) >= 0.0 {
        return Err(Error::numerical(
            "fast eigenvalue",
            format!(
                "f(0) = {} >= 0: q S'(u_e) >= 1 at u_e = {u_e}, level {q} is not a saddle",
                poly.eval(0.0)
            ),
        ));
    }
    debug_assert!(poly.eval(params.b) > 0.0);
    Ok(bracketed_root(
        |x| poly.eval(x),
        |x| poly.deriv(x),
        0.0,
        params.b,
    ))
}

/// Positive eigenvalue of the fast system linearized at the landscape's
/// left equilibrium.
pub fn fast_positive_eigenvalue(
    params: &ModelParams,
    landscape: &Landscape,
    s: &FiringRate,
) -> Result<f64> {
    fast_positive_eigenvalue_at(params, s, landscape.u0, landscape.q0)
}

/// Positive eigenvalue of the full linearization; reduces to the fast one
/// when epsilon = 0 since then g(X) = X f(X).
pub fn full_positive_eigenvalue(
    params: &ModelParams,
    landscape: &Landscape,
    s: &FiringRate,
) -> Result<f64> {
    params.require_positive_speed()?;
    if params.epsilon == 0.0 {
        return fast_positive_eigenvalue(params, landscape, s);
    }
    let poly = FullCharPoly::at_equilibrium(params, landscape, s);
    if poly.eval(0.0) >= 0.0 {
        return Err(Error::numerical(
            "full eigenvalue",
            format!("g(0) = {} >= 0: determinant sign lost", poly.eval(0.0)),
        ));
    }
    let mut hi = params.b;
    let mut grow = 0;
    while poly.eval(hi) <= 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 64 {
            return Err(Error::numerical(
                "full eigenvalue",
                "no sign change of g on the positive axis",
            ));
        }
    }
    Ok(bracketed_root(|x| poly.eval(x), |x| poly.deriv(x), 0.0, hi))
}

/// Unit unstable eigenvector of the full linearization, sign-fixed so the
/// branch enters {u > u0, v > u0, w > 0}.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UnstableDirection {
    pub lambda1: f64,
    pub mu: [f64; 4],
}

/// The full-system linearization matrix B at p0, row-major.
pub fn linearization_matrix(
    params: &ModelParams,
    landscape: &Landscape,
    s: &FiringRate,
) -> [[f64; 4]; 4] {
    let b2 = params.b * params.b;
    let (c, eps, beta) = (params.c, params.epsilon, params.beta);
    let s0 = s.value(landscape.u0);
    let sp0 = s.deriv(landscape.u0);
    let q0 = landscape.q0;
    [
        [-1.0 / c, 1.0 / c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-b2 * q0 * sp0, b2, 0.0, -b2 * s0],
        [-(eps / c) * beta * q0 * sp0, 0.0, 0.0, -(eps / c) * (1.0 + beta * s0)],
    ]
}

/// Solve (B - lambda1 I) mu = 0 in closed form from the row relations:
/// mu2 = (1 + c lambda1) mu1, mu3 = lambda1 mu2,
/// mu4 = -(eps/c) beta q0 S'(u0) mu1 / (lambda1 + (eps/c)(1 + beta S(u0))).
pub fn unstable_eigenvector(
    params: &ModelParams,
    landscape: &Landscape,
    s: &FiringRate,
) -> Result<UnstableDirection> {
    let lambda1 = full_positive_eigenvalue(params, landscape, s)?;
    let (c, eps, beta) = (params.c, params.epsilon, params.beta);
    let s0 = s.value(landscape.u0);
    let sp0 = s.deriv(landscape.u0);
    let mu1 = 1.0;
    let mu2 = (1.0 + c * lambda1) * mu1;
    let mu3 = lambda1 * mu2;
    let mu4 = if eps == 0.0 {
        0.0
    } else {
        let pivot = lambda1 + (eps / c) * (1.0 + beta * s0);
        if pivot.abs() < PIVOT_TOL {
            return Err(Error::numerical(
                "unstable eigenvector",
                format!("near-defective linearization: pivot {pivot}"),
            ));
        }
        -(eps / c) * beta * landscape.q0 * sp0 * mu1 / pivot
    };
    let norm = (mu1 * mu1 + mu2 * mu2 + mu3 * mu3 + mu4 * mu4).sqrt();
    Ok(UnstableDirection {
        lambda1,
        mu: [mu1 / norm, mu2 / norm, mu3 / norm, mu4 / norm],
    })
}

/// Positive eigenvalue and unit 3-vector eigendirection of the fast system
/// linearized at a general saddle (u_e, u_e, 0) with level q. Used to seed
/// fronts at the left root and backs at the right root.
pub fn fast_unstable_direction_at(
    params: &ModelParams,
    s: &FiringRate,
    u_e: f64,
    q: f64,
) -> Result<(f64, [f64; 3])> {
    let lambda1 = fast_positive_eigenvalue_at(params, s, u_e, q)?;
    let n1 = 1.0;
    let n2 = 1.0 + params.c * lambda1;
    let n3 = lambda1 * n2;
    let norm = (n1 * n1 + n2 * n2 + n3 * n3).sqrt();
    Ok((lambda1, [n1 / norm, n2 / norm, n3 / norm]))
}
