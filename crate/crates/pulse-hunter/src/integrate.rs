//! Adaptive Dormand-Prince 5(4) integration with dense output and
//! root-located event detection.
//!
//! Every trajectory classification downstream rests on the event contract:
//! each sign change of each tracked functional between accepted steps is
//! located on the dense interpolant by bisection, and near-zero dips without
//! a sign change are logged as grazes so classifiers can treat them as
//! boundary cases.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FiringRate, Landscape, ModelParams, State4};
use crate::spectral::UnstableDirection;

/// Norm threshold treated as blow-up.
pub const OVERFLOW_NORM: f64 = 1e6;
/// Step size below which the controller gives up.
pub const MIN_STEP: f64 = 1e-14;
/// Interior samples per accepted step when hunting event sign changes.
const EVENT_SAMPLES: usize = 8;

/// Autonomous right-hand side over the 4-dimensional phase space.
pub trait OdeField {
    fn deriv(&self, y: &State4) -> State4;
}

/// The full travelling-wave system.
#[derive(Clone, Debug)]
pub struct FullSystem {
    pub params: ModelParams,
    pub firing: FiringRate,
}

impl FullSystem {
    pub fn new(params: ModelParams, firing: FiringRate) -> Result<FullSystem> {
        params.validate()?;
        params.require_positive_speed()?;
        Ok(FullSystem { params, firing })
    }
}

impl OdeField for FullSystem {
    #[inline]
    fn deriv(&self, y: &State4) -> State4 {
        crate::model::full_vector_field(y, &self.params, &self.firing)
    }
}

/// The fast system at a frozen depression level; the q component is carried
/// along as a constant so event functionals stay evaluable.
#[derive(Clone, Debug)]
pub struct FastSystem {
    pub params: ModelParams,
    pub firing: FiringRate,
    pub q: f64,
}

impl FastSystem {
    pub fn new(params: ModelParams, firing: FiringRate, q: f64) -> Result<FastSystem> {
        params.validate()?;
        params.require_positive_speed()?;
        Ok(FastSystem { params, firing, q })
    }
}

impl OdeField for FastSystem {
    #[inline]
    fn deriv(&self, y: &State4) -> State4 {
        let b2 = self.params.b * self.params.b;
        State4 {
            u: (y.v - y.u) / self.params.c,
            v: y.w,
            w: b2 * (y.v - self.q * self.firing.value(y.u)),
            q: 0.0,
        }
    }
}

/// Field negation, for backward-time diagnostics.
#[derive(Clone, Debug)]
pub struct Reversed<F>(pub F);

impl<F: OdeField> OdeField for Reversed<F> {
    #[inline]
    fn deriv(&self, y: &State4) -> State4 {
        let d = self.0.deriv(y);
        State4 {
            u: -d.u,
            v: -d.v,
            w: -d.w,
            q: -d.q,
        }
    }
}

/// Values the event functionals need besides the state.
#[derive(Clone, Debug)]
pub struct EventContext {
    pub u0: f64,
    pub q0: f64,
    pub um: f64,
    pub u_knee: f64,
    pub beta: f64,
    pub b: f64,
    pub equilibrium: State4,
    pub firing: FiringRate,
}

impl EventContext {
    pub fn new(params: &ModelParams, landscape: &Landscape, firing: &FiringRate) -> EventContext {
        EventContext {
            u0: landscape.u0,
            q0: landscape.q0,
            um: landscape.um,
            u_knee: landscape.u_knee,
            beta: params.beta,
            b: params.b,
            equilibrium: landscape.equilibrium(),
            firing: firing.clone(),
        }
    }

    /// A context for fields that do not reference landscape levels (test
    /// systems, level-crossing-only runs).
    pub fn bare(params: &ModelParams, firing: &FiringRate) -> EventContext {
        EventContext {
            u0: 0.0,
            q0: 0.0,
            um: 0.0,
            u_knee: 0.0,
            beta: params.beta,
            b: params.b,
            equilibrium: State4::ZERO,
            firing: firing.clone(),
        }
    }
}

/// Sign functionals whose zeros drive all trajectory semantics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EventKind {
    /// w = 0 (zero of v').
    WZero,
    /// v - u = 0 (zero of u').
    UPrimeZero,
    /// 1 - q - beta q S(u) = 0 (zero of q' for eps > 0).
    QPrimeZero,
    /// u - u0 = 0.
    UEq,
    /// q - q0 = 0.
    QEq,
    /// u = 0.
    UZero,
    /// u - u_knee = 0.
    UKnee,
    /// u - um = 0.
    UMid,
    /// v - 1 = 0.
    VOne,
    /// v = 0.
    VZero,
    /// |w| - sqrt(2) b = 0.
    WBound,
    /// u - level = 0 for an arbitrary level.
    ULevel(f64),
    /// v - level = 0 for an arbitrary level.
    VLevel(f64),
    /// |p - p0| - radius = 0 (re-entry into a ball around the equilibrium).
    HomeBall(f64),
}

impl EventKind {
    #[inline]
    pub fn value(&self, y: &State4, ctx: &EventContext) -> f64 {
        match *self {
            EventKind::WZero => y.w,
            EventKind::UPrimeZero => y.v - y.u,
            EventKind::QPrimeZero => 1.0 - y.q - ctx.beta * y.q * ctx.firing.value(y.u),
            EventKind::UEq => y.u - ctx.u0,
            EventKind::QEq => y.q - ctx.q0,
            EventKind::UZero => y.u,
            EventKind::UKnee => y.u - ctx.u_knee,
            EventKind::UMid => y.u - ctx.um,
            EventKind::VOne => y.v - 1.0,
            EventKind::VZero => y.v,
            EventKind::WBound => y.w.abs() - std::f64::consts::SQRT_2 * ctx.b,
            EventKind::ULevel(level) => y.u - level,
            EventKind::VLevel(level) => y.v - level,
            EventKind::HomeBall(radius) => y.dist(&ctx.equilibrium) - radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EventDirection {
    Rising,
    Falling,
    Any,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub direction: EventDirection,
    pub terminal: bool,
}

impl EventSpec {
    pub fn new(kind: EventKind, direction: EventDirection, terminal: bool) -> EventSpec {
        EventSpec {
            kind,
            direction,
            terminal,
        }
    }

    fn accepts(&self, before: f64, after: f64) -> bool {
        match self.direction {
            EventDirection::Rising => before < 0.0 && after > 0.0,
            EventDirection::Falling => before > 0.0 && after < 0.0,
            EventDirection::Any => before * after < 0.0,
        }
    }
}

/// How an event was registered: a located sign change, or a graze where the
/// functional dipped below tolerance without changing sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Crossing {
    Sign,
    Graze,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EventRecord {
    pub spec_index: usize,
    pub kind: EventKind,
    pub t: f64,
    pub state: State4,
    pub crossing: Crossing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Termination {
    /// Index into the event log of the terminal event.
    TerminalEvent(usize),
    Horizon,
    StepUnderflow,
    Overflow,
    MaxSteps,
}

/// One accepted step with its dense-output coefficients.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub t0: f64,
    pub h: f64,
    rcont: [State4; 5],
}

impl StepRecord {
    /// Quartic dense-output evaluation at theta in [0, 1].
    #[inline]
    pub fn interpolate(&self, theta: f64) -> State4 {
        let [r1, r2, r3, r4, r5] = &self.rcont;
        let om = 1.0 - theta;
        let inner = r4.add_scaled(om, r5);
        let mid = r3.add_scaled(theta, &inner);
        let outer = r2.add_scaled(om, &mid);
        r1.add_scaled(theta, &outer)
    }

    pub fn end_state(&self) -> State4 {
        self.rcont[0].add_scaled(1.0, &self.rcont[1])
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t_start: f64,
    pub steps: Vec<StepRecord>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub t_end: f64,
    pub y_end: State4,
}

impl Trajectory {
    /// Dense sample at any time inside [t_start, t_end].
    pub fn sample(&self, t: f64) -> State4 {
        debug_assert!(!self.steps.is_empty());
        let idx = self
            .steps
            .partition_point(|s| s.t0 + s.h < t)
            .min(self.steps.len() - 1);
        let step = &self.steps[idx];
        let theta = ((t - step.t0) / step.h).clamp(0.0, 1.0);
        step.interpolate(theta)
    }

    /// States at accepted step endpoints, including the start state.
    pub fn step_states(&self) -> impl Iterator<Item = (f64, State4)> + '_ {
        let head = self
            .steps
            .first()
            .map(|s| (s.t0, s.interpolate(0.0)))
            .into_iter();
        head.chain(self.steps.iter().map(|s| (s.t0 + s.h, s.end_state())))
    }

    /// Minimum distance to a reference point over dense samples of [t_from,
    /// t_end], at roughly `per_step` samples per accepted step.
    pub fn min_distance_to(&self, p: &State4, t_from: f64, per_step: usize) -> (f64, f64) {
        let mut best = (f64::INFINITY, t_from);
        for step in &self.steps {
            if step.t0 + step.h < t_from {
                continue;
            }
            for j in 0..=per_step {
                let theta = j as f64 / per_step as f64;
                let t = step.t0 + theta * step.h;
                if t < t_from || t > self.t_end {
                    continue;
                }
                let d = step.interpolate(theta).dist(p);
                if d < best.0 {
                    best = (d, t);
                }
            }
        }
        best
    }

    pub fn events_of(&self, kind_index: usize) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.spec_index == kind_index)
    }

    pub fn has_graze(&self) -> bool {
        self.events.iter().any(|e| e.crossing == Crossing::Graze)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Functional magnitudes below this at a local dip are logged as grazes;
    /// located events are also checked against it.
    pub event_value_tol: f64,
    /// Event times are located to this absolute tolerance.
    pub event_t_tol: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rtol: 1e-10,
            atol: 1e-12,
            horizon: 500.0,
            max_step: 1.0,
            max_steps: 4_000_000,
            event_value_tol: 1e-9,
            event_t_tol: 1e-12,
        }
    }
}

impl IntegrateOptions {
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// Shooting seed: the equilibrium displaced along the unstable direction.
pub fn seed_unstable(landscape: &Landscape, direction: &UnstableDirection, offset: f64) -> State4 {
    debug_assert!((0.0..=1e-5).contains(&offset), "offset {offset} out of range");
    let p0 = landscape.equilibrium();
    State4 {
        u: p0.u + offset * direction.mu[0],
        v: p0.v + offset * direction.mu[1],
        w: p0.w + offset * direction.mu[2],
        q: p0.q + offset * direction.mu[3],
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn error_norm(err: &State4, y0: &State4, y1: &State4, rtol: f64, atol: f64) -> f64 {
    let sc = |a: f64, b: f64| atol + rtol * a.abs().max(b.abs());
    let e = [
        err.u / sc(y0.u, y1.u),
        err.v / sc(y0.v, y1.v),
        err.w / sc(y0.w, y1.w),
        err.q / sc(y0.q, y1.q),
    ];
    (e.iter().map(|x| x * x).sum::<f64>() / 4.0).sqrt()
}

fn initial_step<F: OdeField>(field: &F, y0: &State4, f0: &State4, opts: &IntegrateOptions) -> f64 {
    let sc = |y: f64| opts.atol + opts.rtol * y.abs();
    let d0 = (y0.u / sc(y0.u)).hypot(y0.v / sc(y0.v)).hypot(y0.w / sc(y0.w)).hypot(y0.q / sc(y0.q));
    let d1 = (f0.u / sc(y0.u)).hypot(f0.v / sc(y0.v)).hypot(f0.w / sc(y0.w)).hypot(f0.q / sc(y0.q));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1 = y0.add_scaled(h0, f0);
    let f1 = field.deriv(&y1);
    let d2 = f1.sub(f0).norm() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.max_step)
}

/// Sign changes whose bracketing samples never rise above this magnitude are
/// treated as arithmetic noise (e.g. a functional that is identically zero
/// along the run up to rounding) and not logged.
const EVENT_NOISE_FLOOR: f64 = 1e-13;

/// Per-spec graze tracking carried across steps: the detector arms once the
/// functional has been well away from zero and fires on a strict local
/// minimum of |g| below the event tolerance without a sign change.
#[derive(Clone, Copy)]
struct GrazeState {
    armed: bool,
    prev: Option<(f64, f64, State4)>,
    prev2: Option<f64>,
}

struct EventScanner<'a> {
    specs: &'a [EventSpec],
    ctx: &'a EventContext,
    opts: &'a IntegrateOptions,
    graze: Vec<GrazeState>,
}

impl<'a> EventScanner<'a> {
    fn new(specs: &'a [EventSpec], ctx: &'a EventContext, opts: &'a IntegrateOptions) -> Self {
        EventScanner {
            specs,
            ctx,
            opts,
            graze: vec![
                GrazeState {
                    armed: false,
                    prev: None,
                    prev2: None,
                };
                specs.len()
            ],
        }
    }

    /// Locate all events within one accepted step; returns them time-ordered.
    fn scan(&mut self, step: &StepRecord) -> Vec<EventRecord> {
        let mut found: Vec<EventRecord> = Vec::new();
        let arm_threshold = 100.0 * self.opts.event_value_tol;
        for (spec_index, spec) in self.specs.iter().enumerate() {
            let g = |theta: f64| spec.kind.value(&step.interpolate(theta), self.ctx);
            let mut samples = [0.0; EVENT_SAMPLES + 1];
            for (j, slot) in samples.iter_mut().enumerate() {
                *slot = g(j as f64 / EVENT_SAMPLES as f64);
            }
            let mut crossed = false;
            for j in 0..EVENT_SAMPLES {
                let (ga, gb) = (samples[j], samples[j + 1]);
                if ga.abs().max(gb.abs()) < EVENT_NOISE_FLOOR {
                    continue;
                }
                if !spec.accepts(ga, gb) {
                    continue;
                }
                let mut lo = j as f64 / EVENT_SAMPLES as f64;
                let mut hi = (j + 1) as f64 / EVENT_SAMPLES as f64;
                let mut glo = ga;
                while step.h * (hi - lo) > self.opts.event_t_tol {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid);
                    if gm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if glo * gm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        glo = gm;
                    }
                }
                let theta = 0.5 * (lo + hi);
                found.push(EventRecord {
                    spec_index,
                    kind: spec.kind,
                    t: step.t0 + theta * step.h,
                    state: step.interpolate(theta),
                    crossing: Crossing::Sign,
                });
                crossed = true;
            }

            // Graze tracking over the continuous sample stream. The shared
            // boundary sample (theta = 0 equals the previous step's end) is
            // skipped when the stream is already running.
            let state = &mut self.graze[spec_index];
            if crossed {
                // A located crossing resets the detector; |g| is legitimately
                // small near it.
                state.armed = false;
                state.prev = None;
                state.prev2 = None;
                continue;
            }
            let start_j = if state.prev.is_some() { 1 } else { 0 };
            for j in start_j..=EVENT_SAMPLES {
                let theta = j as f64 / EVENT_SAMPLES as f64;
                let gj = samples[j];
                if gj.abs() >= arm_threshold {
                    state.armed = true;
                }
                if let (Some(pp), Some((tp, gp, sp))) = (state.prev2, state.prev) {
                    if state.armed
                        && gp.abs() < self.opts.event_value_tol
                        && pp.signum() == gp.signum()
                        && gj.signum() == gp.signum()
                        && pp.abs() > gp.abs()
                        && gj.abs() > gp.abs()
                    {
                        found.push(EventRecord {
                            spec_index,
                            kind: spec.kind,
                            t: tp,
                            state: sp,
                            crossing: Crossing::Graze,
                        });
                        state.armed = false;
                    }
                }
                state.prev2 = state.prev.map(|(_, gp, _)| gp);
                state.prev = Some((step.t0 + theta * step.h, gj, step.interpolate(theta)));
            }
        }
        found.sort_by(|a, b| a.t.total_cmp(&b.t));
        found
    }
}

/// Integrate from `start` until the first terminal event, the horizon, or a
/// numerical stop. `StepUnderflow`, `Overflow`, and `MaxSteps` are reported
/// through `Trajectory::termination` so classifiers can use them (blow-up is
/// itself a classification signal), not as `Err`.
pub fn integrate<F: OdeField>(
    field: &F,
    start: State4,
    events: &[EventSpec],
    ctx: &EventContext,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !start.is_finite() {
        return Err(Error::numerical("integrate", "non-finite start state"));
    }
    if !(opts.horizon > 0.0) {
        return Err(Error::numerical("integrate", "horizon must be positive"));
    }

    let mut scanner = EventScanner::new(events, ctx, opts);

    let mut t = 0.0;
    let mut y = start;
    let mut k1 = field.deriv(&y);
    let mut h = initial_step(field, &y, &k1, opts).min(opts.horizon);

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut log: Vec<EventRecord> = Vec::new();

    let mut n_steps = 0usize;
    loop {
        if n_steps >= opts.max_steps {
            return Ok(finish(steps, log, Termination::MaxSteps, t, y));
        }
        n_steps += 1;
        if t + h > opts.horizon {
            h = opts.horizon - t;
        }

        let k2 = field.deriv(&y.add_scaled(h * A21, &k1));
        let k3 = field.deriv(&y.add_scaled(h * A31, &k1).add_scaled(h * A32, &k2));
        let k4 = field.deriv(
            &y.add_scaled(h * A41, &k1)
                .add_scaled(h * A42, &k2)
                .add_scaled(h * A43, &k3),
        );
        let k5 = field.deriv(
            &y.add_scaled(h * A51, &k1)
                .add_scaled(h * A52, &k2)
                .add_scaled(h * A53, &k3)
                .add_scaled(h * A54, &k4),
        );
        let k6 = field.deriv(
            &y.add_scaled(h * A61, &k1)
                .add_scaled(h * A62, &k2)
                .add_scaled(h * A63, &k3)
                .add_scaled(h * A64, &k4)
                .add_scaled(h * A65, &k5),
        );
        let y1 = y
            .add_scaled(h * A71, &k1)
            .add_scaled(h * A73, &k3)
            .add_scaled(h * A74, &k4)
            .add_scaled(h * A75, &k5)
            .add_scaled(h * A76, &k6);
        let k7 = field.deriv(&y1);

        let err = State4::ZERO
            .add_scaled(h * E1, &k1)
            .add_scaled(h * E3, &k3)
            .add_scaled(h * E4, &k4)
            .add_scaled(h * E5, &k5)
            .add_scaled(h * E6, &k6)
            .add_scaled(h * E7, &k7);

        let norm = if y1.is_finite() {
            error_norm(&err, &y, &y1, opts.rtol, opts.atol)
        } else {
            f64::INFINITY
        };

        if norm <= 1.0 {
            // Accepted: build dense coefficients and scan for events.
            let ydiff = y1.sub(&y);
            let bspl = State4 {
                u: h * k1.u - ydiff.u,
                v: h * k1.v - ydiff.v,
                w: h * k1.w - ydiff.w,
                q: h * k1.q - ydiff.q,
            };
            let rcont4 = State4 {
                u: ydiff.u - h * k7.u - bspl.u,
                v: ydiff.v - h * k7.v - bspl.v,
                w: ydiff.w - h * k7.w - bspl.w,
                q: ydiff.q - h * k7.q - bspl.q,
            };
            let rcont5 = State4::ZERO
                .add_scaled(D1, &k1)
                .add_scaled(D3, &k3)
                .add_scaled(D4, &k4)
                .add_scaled(D5, &k5)
                .add_scaled(D6, &k6)
                .add_scaled(D7, &k7);
            let rcont5 = State4 {
                u: h * rcont5.u,
                v: h * rcont5.v,
                w: h * rcont5.w,
                q: h * rcont5.q,
            };
            let step = StepRecord {
                t0: t,
                h,
                rcont: [y, ydiff, bspl, rcont4, rcont5],
            };

            let mut terminal: Option<usize> = None;
            for ev in scanner.scan(&step) {
                let is_terminal = ev.crossing == Crossing::Sign && events[ev.spec_index].terminal;
                log.push(ev);
                if is_terminal {
                    terminal = Some(log.len() - 1);
                    break;
                }
            }

            steps.push(step);
            if let Some(idx) = terminal {
                let ev = log[idx];
                return Ok(finish(steps, log, Termination::TerminalEvent(idx), ev.t, ev.state));
            }

            t += h;
            y = y1;
            k1 = k7;

            if y.max_abs() > OVERFLOW_NORM {
                return Ok(finish(steps, log, Termination::Overflow, t, y));
            }
            if t >= opts.horizon {
                return Ok(finish(steps, log, Termination::Horizon, t, y));
            }

            let fac = if norm == 0.0 {
                10.0
            } else {
                (0.9 * norm.powf(-0.2)).clamp(0.2, 10.0)
            };
            h = (h * fac).min(opts.max_step);
        } else {
            let fac = (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9);
            h *= fac;
            if h < MIN_STEP {
                return Ok(finish(steps, log, Termination::StepUnderflow, t, y));
            }
        }
    }
}

fn finish(
    steps: Vec<StepRecord>,
    events: Vec<EventRecord>,
    termination: Termination,
    t_end: f64,
    y_end: State4,
) -> Trajectory {
    let t_start = steps.first().map(|s| s.t0).unwrap_or(0.0);
    Trajectory {
        t_start,
        steps,
        events,
        termination,
        t_end,
        y_end,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_landscape;
    use crate::spectral::unstable_eigenvector;
    use std::f64::consts::PI;

    struct Harmonic;
    impl OdeField for Harmonic {
        fn deriv(&self, y: &State4) -> State4 {
            State4::new(y.v, -y.u, 0.0, 0.0)
        }
    }

    fn faye(c: f64, eps: f64) -> (ModelParams, FiringRate, Landscape) {
        let params = ModelParams::reference(eps, c);
        let s = FiringRate::sigmoid(&params);
        let l = compute_landscape(&params, &s).unwrap();
        (params, s, l)
    }

    #[test]
    fn harmonic_zero_crossings_match_closed_form() {
        let params = ModelParams::reference(0.0, 1.0);
        let s = FiringRate::sigmoid(&params);
        let ctx = EventContext::bare(&params, &s);
        let events = [EventSpec::new(
            EventKind::ULevel(0.0),
            EventDirection::Any,
            false,
        )];
        let opts = IntegrateOptions {
            rtol: 1e-12,
            atol: 1e-14,
            horizon: 10.0,
            ..Default::default()
        };
        let traj = integrate(&Harmonic, State4::new(0.0, 1.0, 0.0, 0.0), &events, &ctx, &opts)
            .unwrap();
        let crossings: Vec<f64> = traj
            .events
            .iter()
            .filter(|e| e.crossing == Crossing::Sign)
            .map(|e| e.t)
            .collect();
        assert_eq!(crossings.len(), 3);
        for (k, t) in crossings.iter().enumerate() {
            let want = (k + 1) as f64 * PI;
            assert!((t - want).abs() < 1e-10, "crossing {k}: {t} vs {want}");
        }
        // Dense output reproduces the sinusoid between steps.
        for t in [0.37, 1.91, 4.4, 7.03, 9.99] {
            assert!((traj.sample(t).u - t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_start_is_constant_with_no_events() {
        let (params, s, l) = faye(0.3, 0.005);
        let field = FullSystem::new(params, s.clone()).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::WZero, EventDirection::Any, false),
            EventSpec::new(EventKind::UPrimeZero, EventDirection::Any, false),
        ];
        // The equilibrium is a saddle: the 1e-16 root residual grows like
        // e^{lambda1 t}, so the constant-trajectory window is kept short.
        let opts = IntegrateOptions::default().with_horizon(2.0);
        let traj = integrate(&field, l.equilibrium(), &events, &ctx, &opts).unwrap();
        assert_eq!(traj.termination, Termination::Horizon);
        assert!(traj.y_end.dist(&l.equilibrium()) < 1e-10);
        assert!(traj.events.is_empty());
    }

    #[test]
    fn large_speed_escapes_upward_with_positive_w() {
        let (params, s, l) = faye(10.0, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::WZero, EventDirection::Falling, true),
            EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
        ];
        let start = seed_unstable(&l, &dir, 1e-7);
        let traj = integrate(&field, start, &events, &ctx, &IntegrateOptions::default()).unwrap();
        match traj.termination {
            Termination::TerminalEvent(i) => assert_eq!(traj.events[i].kind, EventKind::VOne),
            other => panic!("expected V=1 exit, got {other:?}"),
        }
        for (_, y) in traj.step_states() {
            assert!(y.w >= 0.0, "w went negative before the escape");
        }
    }

    #[test]
    fn seed_matches_direction_and_offset() {
        let (params, s, l) = faye(0.3, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        assert_eq!(seed_unstable(&l, &dir, 0.0), l.equilibrium());
        // Frozen depression: the seed keeps q = q0 exactly.
        assert_eq!(seed_unstable(&l, &dir, 1e-7).q, l.q0);

        let (params, s, l) = faye(0.3, 0.005);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let p = seed_unstable(&l, &dir, 1e-7);
        assert!(p.q < l.q0);
        assert!(p.u > l.u0 && p.v > p.u && p.w > 0.0);
    }

    #[test]
    fn event_times_stable_under_seed_offset_halving() {
        let (params, s, l) = faye(0.3, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::UMid, EventDirection::Rising, false),
            EventSpec::new(EventKind::WZero, EventDirection::Falling, true),
        ];
        let run = |offset: f64| {
            let traj = integrate(
                &field,
                seed_unstable(&l, &dir, offset),
                &events,
                &ctx,
                &IntegrateOptions::default(),
            )
            .unwrap();
            let t_mid = traj.events_of(0).next().unwrap().t;
            let t_turn = traj.events_of(1).next().unwrap().t;
            t_turn - t_mid
        };
        // Times measured from the u = um crossing are offset-invariant up to
        // the manifold's quadratic correction.
        let d = (run(1e-7) - run(5e-8)).abs();
        assert!(d < 1e-5, "offset sensitivity {d}");
    }

    #[test]
    fn first_turn_time_converges_under_tolerance_halving() {
        let (params, s, l) = faye(0.3, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::UMid, EventDirection::Rising, false),
            EventSpec::new(EventKind::WZero, EventDirection::Falling, true),
        ];
        let run = |rtol: f64| {
            let opts = IntegrateOptions::default().with_tolerances(rtol, rtol * 1e-2);
            let traj = integrate(&field, seed_unstable(&l, &dir, 1e-7), &events, &ctx, &opts)
                .unwrap();
            let dt = traj.events_of(1).next().unwrap().t - traj.events_of(0).next().unwrap().t;
            dt
        };
        let ref_t = run(1e-12);
        let coarse = (run(1e-8) - ref_t).abs();
        let fine = (run(1e-10) - ref_t).abs();
        assert!(coarse < 1e-6, "coarse deviation {coarse}");
        assert!(fine < 1e-8, "fine deviation {fine}");
        assert!(fine <= coarse.max(1e-12));
    }

    #[test]
    fn event_log_is_complete_under_dense_resampling() {
        let (params, s, l) = faye(0.2, 0.005);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FullSystem::new(params, s.clone()).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::UPrimeZero, EventDirection::Any, false),
            EventSpec::new(EventKind::QPrimeZero, EventDirection::Any, false),
            EventSpec::new(EventKind::UEq, EventDirection::Any, false),
            EventSpec::new(EventKind::UZero, EventDirection::Falling, true),
        ];
        let traj = integrate(
            &field,
            seed_unstable(&l, &dir, 1e-7),
            &events,
            &ctx,
            &IntegrateOptions::default(),
        )
        .unwrap();
        for (spec_index, spec) in events.iter().enumerate() {
            let logged = traj
                .events_of(spec_index)
                .filter(|e| e.crossing == Crossing::Sign)
                .count();
            // Resample the dense solution at 10x the event-scan resolution;
            // pairs whose left sample is past the terminal time are ignored.
            let mut count = 0;
            let mut prev: Option<(f64, f64)> = None;
            for step in &traj.steps {
                for j in 0..=80 {
                    let t = step.t0 + step.h * j as f64 / 80.0;
                    let g = spec.kind.value(&step.interpolate(j as f64 / 80.0), &ctx);
                    if let Some((tp, gp)) = prev {
                        if tp <= traj.t_end
                            && gp.abs().max(g.abs()) > 1e-13
                            && gp.signum() != g.signum()
                            && gp != 0.0
                            && g != 0.0
                        {
                            count += 1;
                        }
                    }
                    prev = Some((t, g));
                }
            }
            assert_eq!(
                logged, count,
                "spec {spec_index} ({:?}): logged {logged}, resampled {count}",
                spec.kind
            );
        }
    }

    #[test]
    fn escape_bound_forces_exit_within_kernel_time() {
        // Once |w| > sqrt(2) b while 0 < v < 1, v must leave (0,1) within
        // sqrt(2)/b time units.
        let sqrt2 = std::f64::consts::SQRT_2;
        for (c, eps) in [(5.0, 0.0), (0.01, 0.005), (0.003, 0.005)] {
            let (params, s, l) = faye(c, eps);
            let dir = unstable_eigenvector(&params, &l, &s).unwrap();
            let field = FullSystem::new(params, s.clone()).unwrap();
            let ctx = EventContext::new(&params, &l, &s);
            let events = [
                EventSpec::new(EventKind::WBound, EventDirection::Rising, false),
                EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
                EventSpec::new(EventKind::VZero, EventDirection::Falling, true),
            ];
            let traj = integrate(
                &field,
                seed_unstable(&l, &dir, 1e-7),
                &events,
                &ctx,
                &IntegrateOptions::default(),
            )
            .unwrap();
            let bound_hit = traj
                .events_of(0)
                .find(|e| e.state.v > 0.0 && e.state.v < 1.0)
                .map(|e| e.t);
            if let Some(t_bound) = bound_hit {
                let exit = traj.events.iter().find(|e| {
                    (e.kind == EventKind::VOne || e.kind == EventKind::VZero) && e.t >= t_bound
                });
                let t_exit = exit.map(|e| e.t).expect("no exit after |w| bound");
                assert!(
                    t_exit - t_bound <= sqrt2 / params.b + 1e-9,
                    "c = {c}: exit took {}",
                    t_exit - t_bound
                );
            }
        }
    }

    #[test]
    fn velocity_gap_bounded_while_w_moderate() {
        // While 0 < w <= sqrt(2) b from the seed, 0 < v - u < c sqrt(2) b.
        let sqrt2 = std::f64::consts::SQRT_2;
        let (params, s, l) = faye(0.25, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [EventSpec::new(EventKind::WZero, EventDirection::Falling, true)];
        let traj = integrate(
            &field,
            seed_unstable(&l, &dir, 1e-7),
            &events,
            &ctx,
            &IntegrateOptions::default(),
        )
        .unwrap();
        for (_, y) in traj.step_states() {
            if y.w > 0.0 && y.w <= sqrt2 * params.b {
                assert!(y.v - y.u > 0.0, "v - u = {} not positive", y.v - y.u);
                assert!(y.v - y.u < params.c * sqrt2 * params.b);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_event_logs() {
        let (params, s, l) = faye(0.3, 0.005);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FullSystem::new(params, s.clone()).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::UPrimeZero, EventDirection::Any, false),
            EventSpec::new(EventKind::UZero, EventDirection::Falling, true),
        ];
        let run = || {
            integrate(
                &field,
                seed_unstable(&l, &dir, 1e-7),
                &events,
                &ctx,
                &IntegrateOptions::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(b.events.iter()) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            assert_eq!(x.state.u.to_bits(), y.state.u.to_bits());
        }
    }

    #[test]
    fn interpolant_consistent_with_halved_max_step() {
        let (params, s, l) = faye(0.3, 0.0);
        let dir = unstable_eigenvector(&params, &l, &s).unwrap();
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let opts_a = IntegrateOptions {
            horizon: 4.0,
            ..Default::default()
        };
        let opts_b = IntegrateOptions {
            horizon: 4.0,
            max_step: 0.5,
            ..Default::default()
        };
        let a = integrate(&field, seed_unstable(&l, &dir, 1e-7), &[], &ctx, &opts_a).unwrap();
        let b = integrate(&field, seed_unstable(&l, &dir, 1e-7), &[], &ctx, &opts_b).unwrap();
        for i in 1..40 {
            let t = 4.0 * i as f64 / 40.0;
            let d = a.sample(t).dist(&b.sample(t));
            assert!(d < 1e-8, "dense mismatch {d} at t = {t}");
        }
    }
}
