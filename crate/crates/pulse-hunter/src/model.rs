//! Model definition: parameters, firing rate, travelling-wave vector fields,
//! and the derived equilibrium landscape (roots, knee, Maxwell integral,
//! condition checks).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scan window for all scalar root hunts. The model keeps every relevant
/// root of `u` inside (0, 1); the margin guards pathological firing rates.
pub const SCAN_LO: f64 = -0.5;
pub const SCAN_HI: f64 = 1.5;
pub const SCAN_CELLS: usize = 4096;
/// Bisection refinement tolerance for scalar roots.
pub const ROOT_TOL: f64 = 1e-14;
/// Two roots of a level equation closer than this are treated as a tangency.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Absolute tolerance for the adaptive Maxwell quadrature.
pub const QUAD_TOL: f64 = 1e-12;

/// Physical parameters of the field model plus the wave speed `c`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    /// Kernel decay rate (1/space), > 0.
    pub b: f64,
    /// Depression strength, > 0.
    pub beta: f64,
    /// Firing-rate gain, > 0.
    pub lambda: f64,
    /// Firing threshold.
    pub kappa: f64,
    /// Recovery time-scale ratio, >= 0.
    pub epsilon: f64,
    /// Wave speed; must be > 0 for any travelling-wave integration.
    pub c: f64,
}

impl ModelParams {
    /// The parameter point used throughout for illustration:
    /// lambda = 20, kappa = 0.22, beta = 5, b = 4.5.
    pub fn reference(epsilon: f64, c: f64) -> Self {
        ModelParams {
            b: 4.5,
            beta: 5.0,
            lambda: 20.0,
            kappa: 0.22,
            epsilon,
            c,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Structural validity: b > 0, beta > 0, epsilon >= 0.
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) {
            return Err(Error::Config(format!("b must be > 0, got {}", self.b)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !self.lambda.is_finite() || !self.kappa.is_finite() {
            return Err(Error::Config("lambda/kappa must be finite".into()));
        }
        Ok(())
    }

    /// The wave ODE divides by c; reject non-positive speeds up front.
    pub fn require_positive_speed(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!(
                "wave speed c must be > 0, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// An evaluatable firing rate S with its analytic derivative.
///
/// The sigmoid family is the default; user-supplied rates must provide the
/// derivative in closed form (no automatic differentiation).
#[derive(Clone)]
pub enum FiringRate {
    Sigmoid { gain: f64, threshold: f64 },
    Custom {
        value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        deriv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for FiringRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FiringRate::Sigmoid { gain, threshold } => f
                .debug_struct("Sigmoid")
                .field("gain", gain)
                .field("threshold", threshold)
                .finish(),
            FiringRate::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// Numerically stable logistic: sigma(x) = 1/(1+e^-x) evaluated branchwise
/// so large |x| never overflows.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl FiringRate {
    /// S(u) = 1/(1 + e^{lambda (kappa - u)}) with analytic derivative.
    pub fn sigmoid(params: &ModelParams) -> FiringRate {
        FiringRate::Sigmoid {
            gain: params.lambda,
            threshold: params.kappa,
        }
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match self {
            FiringRate::Sigmoid { gain, threshold } => logistic(gain * (u - threshold)),
            FiringRate::Custom { value, .. } => value(u),
        }
    }

    #[inline]
    pub fn deriv(&self, u: f64) -> f64 {
        match self {
            FiringRate::Sigmoid { gain, .. } => {
                let s = self.value(u);
                gain * s * (1.0 - s)
            }
            FiringRate::Custom { deriv, .. } => deriv(u),
        }
    }

    /// h(u) = u / S(u), whose level sets give the fast-system equilibria.
    #[inline]
    pub fn h(&self, u: f64) -> f64 {
        u / self.value(u)
    }

    /// h'(u) = (S - u S') / S^2.
    #[inline]
    pub fn h_deriv(&self, u: f64) -> f64 {
        let s = self.value(u);
        (s - u * self.deriv(u)) / (s * s)
    }
}

/// Phase point of the full travelling-wave system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State4 {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub q: f64,
}

/// Phase point of the fast (depression-frozen) system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl State4 {
    pub const ZERO: State4 = State4 {
        u: 0.0,
        v: 0.0,
        w: 0.0,
        q: 0.0,
    };

    pub fn new(u: f64, v: f64, w: f64, q: f64) -> State4 {
        State4 { u, v, w, q }
    }

    #[inline]
    pub fn add_scaled(&self, k: f64, other: &State4) -> State4 {
        State4 {
            u: self.u + k * other.u,
            v: self.v + k * other.v,
            w: self.w + k * other.w,
            q: self.q + k * other.q,
        }
    }

    #[inline]
    pub fn sub(&self, other: &State4) -> State4 {
        self.add_scaled(-1.0, other)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w + self.q * self.q).sqrt()
    }

    #[inline]
    pub fn dist(&self, other: &State4) -> f64 {
        self.sub(other).norm()
    }

    #[inline]
    pub fn max_abs(&self) -> f64 {
        self.u.abs().max(self.v.abs()).max(self.w.abs()).max(self.q.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.w.is_finite() && self.q.is_finite()
    }

    pub fn fast_part(&self) -> State3 {
        State3 {
            u: self.u,
            v: self.v,
            w: self.w,
        }
    }
}

impl State3 {
    pub fn new(u: f64, v: f64, w: f64) -> State3 {
        State3 { u, v, w }
    }

    pub fn with_q(&self, q: f64) -> State4 {
        State4 {
            u: self.u,
            v: self.v,
            w: self.w,
            q,
        }
    }
}

/// Right-hand side of the full travelling-wave system:
/// u' = (v-u)/c, v' = w, w' = b^2 (v - q S(u)), q' = (eps/c)(1 - q - beta q S(u)).
#[inline]
pub fn full_vector_field(p: &State4, params: &ModelParams, s: &FiringRate) -> State4 {
    debug_assert!(params.c > 0.0);
    let su = s.value(p.u);
    State4 {
        u: (p.v - p.u) / params.c,
        v: p.w,
        w: params.b * params.b * (p.v - p.q * su),
        q: (params.epsilon / params.c) * (1.0 - p.q - params.beta * p.q * su),
    }
}

/// Right-hand side of the fast system at frozen depression level `q`.
#[inline]
pub fn fast_vector_field(r: &State3, q: f64, params: &ModelParams, s: &FiringRate) -> State3 {
    debug_assert!(params.c > 0.0);
    State3 {
        u: (r.v - r.u) / params.c,
        v: r.w,
        w: params.b * params.b * (r.v - q * s.value(r.u)),
    }
}

/// Derived equilibrium structure of the model at fixed parameters.
#[derive(Clone, Debug, Serialize)]
pub struct Landscape {
    /// Equilibrium input level: unique root of u (1 + beta S(u)) = S(u).
    pub u0: f64,
    /// Equilibrium depression level q0 = 1/(1 + beta S(u0)).
    pub q0: f64,
    /// Middle root of h(u) = q0.
    pub um: f64,
    /// Right root of h(u) = q0.
    pub uplus: f64,
    /// Location of the local minimum of h (the knee).
    pub u_knee: f64,
    /// h(u_knee); lowest depression level with three fast equilibria.
    pub q_min: f64,
    /// Location of the local maximum of h.
    pub u_local_max: f64,
    /// h(u_local_max).
    pub h_local_max: f64,
    /// Integral of (q0 S(u) - u) du from u0 to uplus.
    pub maxwell_integral: f64,
    /// Flags for the five model conditions; all true on success.
    pub conditions: [bool; 5],
    /// Non-fatal notes, e.g. the critical-point scan hitting its window edge.
    pub warnings: Vec<String>,
}

impl Landscape {
    /// The unique equilibrium p0 = (u0, u0, 0, q0) of the full system.
    pub fn equilibrium(&self) -> State4 {
        State4::new(self.u0, self.u0, 0.0, self.q0)
    }

    /// The fast-system equilibrium (u0, u0, 0).
    pub fn fast_equilibrium(&self) -> State3 {
        State3::new(self.u0, self.u0, 0.0)
    }

    pub fn right_equilibrium(&self) -> State3 {
        State3::new(self.uplus, self.uplus, 0.0)
    }
}

/// Plain bisection on a bracketing interval, refined to `tol` in u.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() < tol || m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// All sign-change roots of `f` on [lo, hi] found on a uniform grid and
/// refined by bisection. Grid resolution follows the scan design: the cell
/// count is fixed, so roots closer than a cell may merge (tangency handling
/// is up to the caller).
pub fn grid_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let dx = (hi - lo) / cells as f64;
    let mut x_prev = lo;
    let mut f_prev = f(lo);
    for i in 1..=cells {
        let x = lo + i as f64 * dx;
        let fx = f(x);
        if f_prev == 0.0 {
            roots.push(x_prev);
        } else if f_prev * fx < 0.0 {
            roots.push(bisect(&f, x_prev, x, ROOT_TOL));
        }
        x_prev = x;
        f_prev = fx;
    }
    if f_prev == 0.0 {
        roots.push(x_prev);
    }
    roots
}

/// Adaptive Simpson quadrature with absolute tolerance.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(_f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(f, a, fa, m, fm, flm);
        let right = simpson(f, m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(f, a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 48)
}

/// Roots of h(u) = level on (0, SCAN_HI], ascending. Roots closer than
/// TANGENCY_TOL are merged into one (tangency).
pub fn h_level_roots(s: &FiringRate, level: f64) -> Vec<f64> {
    let f = |u: f64| s.h(u) - level;
    let raw = grid_roots(f, SCAN_HI / SCAN_CELLS as f64 * 0.5, SCAN_HI, SCAN_CELLS);
    let mut merged: Vec<f64> = Vec::new();
    for r in raw {
        if let Some(last) = merged.last() {
            if (r - last).abs() < TANGENCY_TOL {
                continue;
            }
        }
        merged.push(r);
    }
    merged
}

/// Integral of (q S(u) - u) du between the outer roots of h(u) = q.
pub fn maxwell_integral_between(s: &FiringRate, q: f64, lo: f64, hi: f64) -> f64 {
    adaptive_simpson(&|u: f64| q * s.value(u) - u, lo, hi, QUAD_TOL)
}

/// Compute the landscape and verify the five model conditions, failing with
/// the number of the first violated condition.
pub fn compute_landscape(params: &ModelParams, s: &FiringRate) -> Result<Landscape> {
    params.validate()?;
    let mut warnings = Vec::new();

    // Condition 1: S positive, increasing, bounded within (0, 1).
    let n_check = 512;
    for i in 0..=n_check {
        let u = SCAN_LO + (SCAN_HI - SCAN_LO) * i as f64 / n_check as f64;
        let su = s.value(u);
        if !(su > 0.0 && su < 1.0) {
            return Err(Error::condition(
                1,
                format!("S({u}) = {su} outside (0, 1)"),
            ));
        }
        if !(s.deriv(u) > 0.0) {
            return Err(Error::condition(
                1,
                format!("S'({u}) = {} not positive", s.deriv(u)),
            ));
        }
    }

    // Condition 2: h has one local maximum followed by one local minimum on
    // the scan window. Critical points are located from the analytic h'.
    let h_lo = SCAN_HI / SCAN_CELLS as f64 * 0.5;
    let crit = grid_roots(|u| s.h_deriv(u), h_lo, SCAN_HI, SCAN_CELLS);
    if crit.len() != 2 {
        return Err(Error::condition(
            2,
            format!(
                "expected exactly one local max and one local min of h on ({h_lo:.4}, {SCAN_HI}], found {} critical points",
                crit.len()
            ),
        ));
    }
    let (u_local_max, u_knee) = (crit[0], crit[1]);
    if !(s.h_deriv(0.5 * (u_local_max + u_knee)) < 0.0) {
        return Err(Error::condition(
            2,
            "critical points of h are not max-then-min",
        ));
    }
    if s.h_deriv(SCAN_HI) < 0.0 {
        warnings.push(format!(
            "h'({SCAN_HI}) < 0: h may have critical points beyond the scan window"
        ));
    }

    // Condition 3: exactly one equilibrium of the full system.
    let eq = |u: f64| u * (1.0 + params.beta * s.value(u)) - s.value(u);
    let eq_roots = grid_roots(eq, SCAN_LO, SCAN_HI, SCAN_CELLS);
    if eq_roots.len() != 1 {
        return Err(Error::condition(
            3,
            format!(
                "expected exactly one equilibrium, found {} roots on [{SCAN_LO}, {SCAN_HI}]",
                eq_roots.len()
            ),
        ));
    }
    let u0 = eq_roots[0];
    let q0 = 1.0 / (1.0 + params.beta * s.value(u0));

    // Condition 4: three fast equilibria at level q0.
    let level = h_level_roots(s, q0);
    if level.len() != 3 {
        return Err(Error::condition(
            4,
            format!(
                "expected three roots of h(u) = q0, found {}: {:?}",
                level.len(),
                level
            ),
        ));
    }
    let (um, uplus) = (level[1], level[2]);
    if !((level[0] - u0).abs() < 1e-9 && u0 < um && um < uplus) {
        return Err(Error::condition(
            4,
            format!(
                "fast equilibria out of order: u0 = {u0}, level roots = {:?}",
                level
            ),
        ));
    }
    let q_min = s.h(u_knee);
    let h_local_max = s.h(u_local_max);

    // Condition 5: positive Maxwell integral over (u0, uplus).
    let maxwell_integral = maxwell_integral_between(s, q0, u0, uplus);
    if !(maxwell_integral > 0.0) {
        return Err(Error::condition(
            5,
            format!("Maxwell integral {maxwell_integral} not positive"),
        ));
    }

    Ok(Landscape {
        u0,
        q0,
        um,
        uplus,
        u_knee,
        q_min,
        u_local_max,
        h_local_max,
        maxwell_integral,
        conditions: [true; 5],
        warnings,
    })
}

/// Which derivative identity of the wave system a residual refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DerivIdentity {
    /// At u' = 0: u'' = v'/c.
    USecond,
    /// At u' = u'' = 0: u''' = v''/c.
    UThird,
    /// At u' = u'' = u''' = 0: u'''' = -(b^2/c) q' S(u).
    UFourth,
    /// At q' = 0: q'' = -(eps/c) beta q S'(u) u'.
    QSecond,
    /// At w' = 0: v''' = w'' = b^2 (v' - q' S(u) - q S'(u) u').
    WSecond,
    /// At q' = u' = 0: q''' = -(eps/c^2) beta q S'(u) v'.
    QThird,
    /// At q' = u' = v' = 0: q'''' = -(eps/c^2) beta q S'(u) w'.
    QFourth,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityResidual {
    pub identity: DerivIdentity,
    /// How far the point is from satisfying the identity's precondition
    /// (max |relevant lower-order derivative|).
    pub precondition: f64,
    /// Residual of the identity itself at this point.
    pub residual: f64,
}

/// Evaluate the chained derivative identities of the wave system at a point.
///
/// All derivatives are evaluated from the vector field by exact chain rules;
/// the two identities whose general form would need S'' use the reduction
/// valid under their precondition (the dropped terms carry squares of the
/// vanishing derivatives).
pub fn prop2_identities(p: &State4, params: &ModelParams, s: &FiringRate) -> Vec<IdentityResidual> {
    let c = params.c;
    let b2 = params.b * params.b;
    let eps = params.epsilon;
    let beta = params.beta;
    let su = s.value(p.u);
    let sp = s.deriv(p.u);
    let q = p.q;

    let u1 = (p.v - p.u) / c;
    let v1 = p.w;
    let w1 = b2 * (p.v - q * su);
    let q1 = (eps / c) * (1.0 - q - beta * q * su);

    let u2 = (v1 - u1) / c;
    let v2 = w1;
    let w2 = b2 * (v1 - q1 * su - q * sp * u1);
    let q2 = -(eps / c) * (q1 * (1.0 + beta * su) + beta * q * sp * u1);

    let u3 = (v2 - u2) / c;
    let v3 = w2;
    let u4 = (v3 - u3) / c;

    let q3 = -(eps / c) * (q2 * (1.0 + beta * su) + 2.0 * beta * q1 * sp * u1 + beta * q * sp * u2);
    let q4 = -(eps / c) * beta * q * sp * u3;

    vec![
        IdentityResidual {
            identity: DerivIdentity::USecond,
            precondition: u1.abs(),
            residual: (u2 - v1 / c).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::UThird,
            precondition: u1.abs().max(u2.abs()),
            residual: (u3 - v2 / c).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::UFourth,
            precondition: u1.abs().max(u2.abs()).max(u3.abs()),
            residual: (u4 + b2 / c * q1 * su).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::QSecond,
            precondition: q1.abs(),
            residual: (q2 + (eps / c) * beta * q * sp * u1).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::WSecond,
            precondition: w1.abs(),
            residual: (v3 - b2 * (v1 - q1 * su - q * sp * u1)).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::QThird,
            precondition: q1.abs().max(u1.abs()),
            residual: (q3 + (eps / (c * c)) * beta * q * sp * v1).abs(),
        },
        IdentityResidual {
            identity: DerivIdentity::QFourth,
            precondition: q1.abs().max(u1.abs()).max(v1.abs()),
            residual: (q4 + (eps / (c * c)) * beta * q * sp * w1).abs(),
        },
    ]
}

/// Check the inward-pointing field condition on the boundaries of the two
/// positively invariant regions {v<0, w<0, slab} and {v>1, w>0, slab} with
/// slab = {1/(1+beta) < q < 1}. Returns any violating boundary points.
pub fn invariant_region_violations(
    params: &ModelParams,
    s: &FiringRate,
    n_per_region: usize,
) -> Vec<(State4, &'static str)> {
    let mut bad = Vec::new();
    let q_lo = 1.0 / (1.0 + params.beta);
    let q_hi = 1.0;
    // Deterministic low-discrepancy-ish sampling of the boundary faces.
    let sample = |i: usize, n: usize| (i as f64 + 0.5) / n as f64;
    let faces = 4; // binding faces per region: v-face, w-face, q-lo, q-hi
    let per_face = n_per_region.div_ceil(faces);
    for region in 0..2 {
        let (v_face, w_sign, v_sign) = if region == 0 {
            (0.0, -1.0, -1.0) // {v<0, w<0}
        } else {
            (1.0, 1.0, 1.0) // {v>1, w>0}
        };
        for i in 0..per_face {
            let t = sample(i, per_face);
            let u = -0.4 + 1.8 * t; // u is unconstrained in the region definition
            let q = q_lo + (q_hi - q_lo) * (0.1 + 0.8 * t);
            let w = w_sign * (0.05 + 2.0 * t);
            let v_in = v_face + v_sign * (0.05 + 0.9 * t);

            // Face v = v_face (w, q interior): need v' = w pointing inward.
            let p = State4::new(u, v_face, w, q);
            let f = full_vector_field(&p, params, s);
            if f.v * v_sign < 0.0 {
                bad.push((p, "v-face"));
            }

            // Face w = 0 (v, q interior): need w' pointing inward.
            let p = State4::new(u, v_in, 0.0, q);
            let f = full_vector_field(&p, params, s);
            if f.w * w_sign < 0.0 {
                bad.push((p, "w-face"));
            }

            // Face q = q_lo: need q' >= 0.
            let p = State4::new(u, v_in, w, q_lo);
            let f = full_vector_field(&p, params, s);
            if f.q < 0.0 {
                bad.push((p, "q-lo-face"));
            }

            // Face q = 1: need q' <= 0.
            let p = State4::new(u, v_in, w, q_hi);
            let f = full_vector_field(&p, params, s);
            if f.q > 0.0 {
                bad.push((p, "q-hi-face"));
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn faye() -> (ModelParams, FiringRate) {
        let params = ModelParams::reference(0.005, 0.3);
        let s = FiringRate::sigmoid(&params);
        (params, s)
    }

    /// Independent scalar-root oracle used to cross-check the landscape:
    /// its own sigmoid evaluation and its own bisection loop.
    mod oracle {
        pub fn sig(lam: f64, kap: f64, u: f64) -> f64 {
            let x = lam * (u - kap);
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                x.exp() / (1.0 + x.exp())
            }
        }
        pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
            let mut fa = f(a);
            assert!(fa * f(b) < 0.0, "oracle bracket invalid");
            for _ in 0..120 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            0.5 * (a + b)
        }
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let (_, s) = faye();
        assert_eq!(s.value(0.22), 0.5);
        assert!((s.value(1e3) - 1.0).abs() < 1e-15);
        assert!(s.value(-1e3) >= 0.0 && s.value(-1e3) < 1e-300);
        // No overflow at extreme scan values.
        assert!(s.value(1e8).is_finite());
        assert!(s.value(-1e8).is_finite());
        assert!(s.deriv(-1e8).is_finite() && s.deriv(1e8).is_finite());
    }

    #[test]
    fn sigmoid_at_zero_matches_high_precision_value() {
        let (_, s) = faye();
        // 1/(1 + e^4.4) evaluated at 40 digits.
        assert!((s.value(0.0) - 0.012128434984274239792846665984942673609).abs() < 1e-16);
    }

    #[test]
    fn full_field_hand_computed_point() {
        let (params, s) = faye();
        let p = State4::new(0.3, 0.35, 0.1, 0.8);
        let f = full_vector_field(&p, &params, &s);
        // Arithmetic from the wave ODE at 40-digit precision.
        assert!((f.u - 0.3 / 1.8).abs() < 1e-15); // (0.35-0.3)/0.3 = 1/6
        assert!((f.v - 0.1).abs() < 1e-15);
        assert!((f.w - -6.391197839169576605847241716841967).abs() < 1e-12);
        assert!((f.q - -0.052134559008928298789494821880008).abs() < 1e-15);
    }

    #[test]
    fn full_field_vanishes_at_equilibrium() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        let f = full_vector_field(&l.equilibrium(), &params, &s);
        assert!(f.norm() < 1e-12, "field at equilibrium: {f:?}");
    }

    #[test]
    fn frozen_depression_for_zero_epsilon() {
        let (params, s) = faye();
        let params = params.with_epsilon(0.0);
        let p = State4::new(0.4, 0.1, -0.3, 0.7);
        assert_eq!(full_vector_field(&p, &params, &s).q, 0.0);
    }

    #[test]
    fn fast_field_vanishes_at_all_three_equilibria() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        for ue in [l.u0, l.um, l.uplus] {
            let f = fast_vector_field(&State3::new(ue, ue, 0.0), l.q0, &params, &s);
            let norm = (f.u * f.u + f.v * f.v + f.w * f.w).sqrt();
            assert!(norm < 1e-10, "fast field at {ue}: {f:?}");
        }
        // Knee is a tangency root of h(u) = q_min.
        let f = fast_vector_field(&State3::new(l.u_knee, l.u_knee, 0.0), l.q_min, &params, &s);
        assert!(f.w.abs() < 1e-10);
    }

    #[test]
    fn landscape_matches_independent_bisection_oracle() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        assert_eq!(l.conditions, [true; 5]);

        let (lam, kap, beta) = (20.0, 0.22, 5.0);
        let u0 = oracle::bisect(
            |u| u * (1.0 + beta * oracle::sig(lam, kap, u)) - oracle::sig(lam, kap, u),
            0.001,
            0.05,
        );
        let q0 = 1.0 / (1.0 + beta * oracle::sig(lam, kap, u0));
        let um = oracle::bisect(|u| u / oracle::sig(lam, kap, u) - q0, 0.06, 0.2);
        let uplus = oracle::bisect(|u| u / oracle::sig(lam, kap, u) - q0, 0.5, 1.2);
        let knee = oracle::bisect(
            |u| {
                let sv = oracle::sig(lam, kap, u);
                sv - u * lam * sv * (1.0 - sv)
            },
            0.25,
            0.5,
        );
        assert!((l.u0 - u0).abs() < 1e-12);
        assert!((l.q0 - q0).abs() < 1e-12);
        assert!((l.um - um).abs() < 1e-12);
        assert!((l.uplus - uplus).abs() < 1e-12);
        assert!((l.u_knee - knee).abs() < 1e-12);

        // Values frozen from a 40-digit computation.
        assert!((l.u0 - 0.015101709559238194556112542989).abs() < 1e-13);
        assert!((l.q0 - 0.924491452203809027219437285053).abs() < 1e-13);
        assert!((l.um - 0.129077529596295902391897824269).abs() < 1e-13);
        assert!((l.uplus - 0.924490749497797658969169491104).abs() < 1e-13);
        assert!((l.u_knee - 0.300589695929419398404414282925).abs() < 1e-12);
        assert!((l.q_min - 0.360566163599918288709874900503).abs() < 1e-12);
        assert!((l.maxwell_integral - 0.223306848373160779179729373667).abs() < 1e-10);
    }

    #[test]
    fn equilibrium_residuals_are_tiny() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        assert!((l.u0 - l.q0 * s.value(l.u0)).abs() < 1e-12);
        assert!((l.q0 * (1.0 + params.beta * s.value(l.u0)) - 1.0).abs() < 1e-12);
        assert!(l.q0 > 0.0 && l.q0 < 1.0);
        assert!(l.u0 > 0.0 && l.uplus < 1.0);
    }

    #[test]
    fn root_ordering_and_h_slopes() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        assert!(l.u0 < l.um && l.um < l.u_knee && l.u_knee < l.uplus);
        assert!(l.q_min < l.q0);
        assert!(s.h_deriv(l.u0) > 0.0);
        assert!(s.h_deriv(l.um) < 0.0);
        assert!(s.h_deriv(l.uplus) > 0.0);
    }

    #[test]
    fn vanishing_depression_breaks_uniqueness() {
        // As beta -> 0 the equilibrium equation degenerates to u = S(u),
        // which has three roots for this steep sigmoid.
        let params = ModelParams {
            beta: 1e-8,
            ..ModelParams::reference(0.005, 0.3)
        };
        let s = FiringRate::sigmoid(&params);
        match compute_landscape(&params, &s) {
            Err(Error::ConditionViolation { condition: 3, .. }) => {}
            other => panic!("expected condition 3 violation, got {other:?}"),
        }
    }

    #[test]
    fn quadrature_stable_under_interval_halving() {
        let (params, s) = faye();
        let l = compute_landscape(&params, &s).unwrap();
        // Composite Simpson at two resolutions as the independent check.
        let simpson = |n: usize| {
            let (a, b) = (l.u0, l.uplus);
            let dx = (b - a) / n as f64;
            let f = |u: f64| l.q0 * s.value(u) - u;
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += f(a + i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * dx / 3.0
        };
        let coarse = simpson(1 << 12);
        let fine = simpson(1 << 13);
        assert!((coarse - fine).abs() < 1e-10);
        assert!((l.maxwell_integral - fine).abs() < 1e-10);
    }

    #[test]
    fn identity_residuals_at_constructed_critical_points() {
        let (params, s) = faye();
        // u' = 0 at v = u.
        let p = State4::new(0.3, 0.3, -0.2, 0.8);
        let res = prop2_identities(&p, &params, &s);
        let r = res.iter().find(|r| r.identity == DerivIdentity::USecond).unwrap();
        assert!(r.precondition < 1e-14);
        assert!(r.residual < 1e-10, "u'' residual {}", r.residual);

        // q' = 0 at q = 1/(1 + beta S(u)).
        let u = 0.25;
        let q = 1.0 / (1.0 + params.beta * s.value(u));
        let p = State4::new(u, 0.4, 0.1, q);
        let res = prop2_identities(&p, &params, &s);
        let r = res.iter().find(|r| r.identity == DerivIdentity::QSecond).unwrap();
        assert!(r.precondition < 1e-14);
        assert!(r.residual < 1e-10, "q'' residual {}", r.residual);

        // q' = u' = v' = 0: on the recovery nullcline with v = u and w = 0.
        let p = State4::new(u, u, 0.0, q);
        let res = prop2_identities(&p, &params, &s);
        for id in [DerivIdentity::QThird, DerivIdentity::QFourth] {
            let r = res.iter().find(|r| r.identity == id).unwrap();
            assert!(r.precondition < 1e-14);
            assert!(r.residual < 1e-10, "{id:?} residual {}", r.residual);
        }
    }

    #[test]
    fn invariant_regions_have_no_outward_field() {
        let (params, s) = faye();
        let bad = invariant_region_violations(&params, &s, 200);
        assert!(bad.is_empty(), "outward field at {bad:?}");
    }
}
