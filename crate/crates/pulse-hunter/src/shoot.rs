//! Shooting classification of unstable-manifold trajectories and the speed
//! bisections built on it: the front speed of the depression-frozen system,
//! and the fast and slow pulse speeds of the full system.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{
    integrate, Crossing, EventContext, EventDirection, EventKind, EventSpec, FastSystem,
    FullSystem, IntegrateOptions, Termination, Trajectory,
};
use crate::model::{FiringRate, Landscape, ModelParams, State4};
use crate::spectral::{fast_unstable_direction_at, unstable_eigenvector, UnstableDirection};

#[derive(Clone, Copy, Debug)]
pub struct ShootOptions {
    pub integrate: IntegrateOptions,
    /// Displacement along the unstable direction used to start a shot.
    pub seed_offset: f64,
    /// Radius of the equilibrium ball whose re-entry marks a homoclinic
    /// candidate, confirmed by monotone decay over one extra time unit.
    pub home_radius: f64,
    /// |w(t1)/c| must exceed this for the second-derivative sign test.
    pub second_deriv_margin: f64,
    /// Pre-scan cells for every speed search; catches interleaved
    /// classifications and picks the outermost flip.
    pub scan_cells: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            integrate: IntegrateOptions {
                horizon: 600.0,
                ..Default::default()
            },
            seed_offset: 1e-7,
            home_radius: 1e-3,
            second_deriv_margin: 1e-8,
            scan_cells: 64,
        }
    }
}

/// Primary classification of one unstable-manifold shot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ShotClass {
    /// v crossed 1 with w > 0 throughout: speed too large.
    FastEscapeUp,
    /// w reached zero; for the fast system this means c below the front speed.
    FastTurn,
    /// The rise-fall-exit pattern of the fast-pulse shooting set completed.
    LambdaMember,
    /// First q' zero found with u' < 0 there.
    SigmaMember,
    /// Sigma member whose q' stayed positive while u > 0 and q < q0.
    Sigma1Member,
    /// Re-entered the equilibrium ball with q < q0, u' > 0, and decaying
    /// distance.
    HomoclinicCandidate,
    /// Graze, horizon, or step failure: no verdict.
    Unresolved,
}

/// Everything a speed search needs to know about one shot.
#[derive(Clone, Debug, Serialize)]
pub struct ShotOutcome {
    pub class: ShotClass,
    pub unresolved_reason: Option<String>,
    /// Raw time at which u first crossed um; all reported times below are
    /// shifted so this crossing sits at t = 0.
    pub t_um_crossing: Option<f64>,
    /// First zero of u' (normalized), with u''(t1) < 0.
    pub t1: Option<f64>,
    /// First crossing of u = u0 after t1 with u' < 0 throughout (normalized).
    pub t2: Option<f64>,
    /// Exit time: u = 0 or q = q0 (normalized).
    pub t3: Option<f64>,
    /// First zero of q' with u'(tau1) < 0 (normalized).
    pub tau1: Option<f64>,
    /// First zero of w (normalized).
    pub t_w_zero: Option<f64>,
    pub v_at_w_zero: Option<f64>,
    pub u_at_w_zero: Option<f64>,
    pub u_at_t1: Option<f64>,
    pub in_lambda: bool,
    pub in_sigma: bool,
    /// None when the run ended before the verdict was decidable.
    pub in_sigma1: Option<bool>,
    /// Steps where q >= q0 or q' >= 0 while w > 0 (expected 0 for eps > 0).
    pub monotone_depression_violations: usize,
    pub graze: bool,
    /// Minimum distance to the equilibrium over the tail after t1.
    pub tail_residual: Option<f64>,
}

impl ShotOutcome {
    fn unresolved(reason: impl Into<String>) -> ShotOutcome {
        ShotOutcome {
            class: ShotClass::Unresolved,
            unresolved_reason: Some(reason.into()),
            t_um_crossing: None,
            t1: None,
            t2: None,
            t3: None,
            tau1: None,
            t_w_zero: None,
            v_at_w_zero: None,
            u_at_w_zero: None,
            u_at_t1: None,
            in_lambda: false,
            in_sigma: false,
            in_sigma1: None,
            monotone_depression_violations: 0,
            graze: false,
            tail_residual: None,
        }
    }
}

/// Opposite-classification certificate attached to every returned speed.
#[derive(Clone, Debug, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub lo_class: String,
    pub hi_class: String,
    /// Number of classification flips seen by the pre-scan (1 = monotone).
    pub flip_count: usize,
    /// True when refinement stopped inside an unresolved band.
    pub stalled: bool,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

fn fast_events() -> Vec<EventSpec> {
    vec![
        EventSpec::new(EventKind::UMid, EventDirection::Rising, false),
        EventSpec::new(EventKind::WZero, EventDirection::Falling, true),
        EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
    ]
}

/// Shot of the depression-frozen system at the equilibrium level q0,
/// classified as FastTurn or FastEscapeUp with the turn data recorded.
pub fn shoot_fast(
    c: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<(ShotOutcome, Trajectory)> {
    let params = params.with_c(c);
    let q = landscape.q0;
    let (_, dir3) = fast_unstable_direction_at(&params, firing, landscape.u0, q)?;
    let start = State4::new(
        landscape.u0 + opts.seed_offset * dir3[0],
        landscape.u0 + opts.seed_offset * dir3[1],
        opts.seed_offset * dir3[2],
        q,
    );
    let field = FastSystem::new(params, firing.clone(), q)?;
    let ctx = EventContext::new(&params, landscape, firing);
    let events = fast_events();
    let traj = integrate(&field, start, &events, &ctx, &opts.integrate)?;
    let outcome = classify_fast(&traj, &events);
    Ok((outcome, traj))
}

fn classify_fast(traj: &Trajectory, _events: &[EventSpec]) -> ShotOutcome {
    let mut out = ShotOutcome::unresolved("");
    out.unresolved_reason = None;
    out.graze = traj.has_graze();
    let t_um = traj
        .events
        .iter()
        .find(|e| e.kind == EventKind::UMid && e.crossing == Crossing::Sign)
        .map(|e| e.t);
    out.t_um_crossing = t_um;
    let shift = t_um.unwrap_or(0.0);

    match traj.termination {
        Termination::TerminalEvent(idx) => {
            let ev = &traj.events[idx];
            match ev.kind {
                EventKind::WZero => {
                    if out.graze {
                        out.class = ShotClass::Unresolved;
                        out.unresolved_reason = Some("graze before the turn".into());
                        return out;
                    }
                    out.class = ShotClass::FastTurn;
                    out.t_w_zero = Some(ev.t - shift);
                    out.v_at_w_zero = Some(ev.state.v);
                    out.u_at_w_zero = Some(ev.state.u);
                }
                EventKind::VOne => {
                    if out.graze {
                        out.class = ShotClass::Unresolved;
                        out.unresolved_reason = Some("graze before the escape".into());
                        return out;
                    }
                    out.class = ShotClass::FastEscapeUp;
                }
                other => {
                    out.class = ShotClass::Unresolved;
                    out.unresolved_reason = Some(format!("unexpected terminal event {other:?}"));
                }
            }
        }
        other => {
            out.class = ShotClass::Unresolved;
            out.unresolved_reason = Some(format!("no terminal event: {other:?}"));
        }
    }
    out
}

fn full_events(epsilon: f64, home_radius: f64) -> Vec<EventSpec> {
    let mut ev = vec![
        EventSpec::new(EventKind::UMid, EventDirection::Rising, false),
        EventSpec::new(EventKind::UPrimeZero, EventDirection::Any, false),
        EventSpec::new(EventKind::UEq, EventDirection::Any, false),
        EventSpec::new(EventKind::UZero, EventDirection::Falling, true),
        EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
        EventSpec::new(EventKind::WZero, EventDirection::Falling, false),
        EventSpec::new(EventKind::HomeBall(home_radius), EventDirection::Falling, true),
    ];
    if epsilon > 0.0 {
        ev.push(EventSpec::new(EventKind::QPrimeZero, EventDirection::Any, false));
        ev.push(EventSpec::new(EventKind::QEq, EventDirection::Rising, true));
    }
    ev
}

/// Full-system shot: locates the rise-fall-exit times of the fast-pulse
/// shooting set, the first q' zero of the slow-pulse sets, and the
/// homoclinic ball entry, and reports every membership verdict.
pub fn shoot_full(
    c: f64,
    epsilon: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<(ShotOutcome, Trajectory)> {
    let params = params.with_c(c).with_epsilon(epsilon);
    let dir = unstable_eigenvector(&params, landscape, firing)?;
    let start = crate::integrate::seed_unstable(landscape, &dir, opts.seed_offset);
    let field = FullSystem::new(params, firing.clone())?;
    let ctx = EventContext::new(&params, landscape, firing);
    let events = full_events(epsilon, opts.home_radius);
    let traj = integrate(&field, start, &events, &ctx, &opts.integrate)?;
    let outcome = classify_full(&params, landscape, firing, &dir, &traj, opts);
    Ok((outcome, traj))
}

fn classify_full(
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    _dir: &UnstableDirection,
    traj: &Trajectory,
    opts: &ShootOptions,
) -> ShotOutcome {
    let mut out = ShotOutcome::unresolved("");
    out.unresolved_reason = None;
    out.graze = traj.has_graze();
    let q0 = landscape.q0;
    let u0 = landscape.u0;
    let p0 = landscape.equilibrium();

    let sign_events = || traj.events.iter().filter(|e| e.crossing == Crossing::Sign);

    let t_um = sign_events().find(|e| e.kind == EventKind::UMid).map(|e| e.t);
    out.t_um_crossing = t_um;
    let Some(shift) = t_um else {
        return ShotOutcome {
            graze: out.graze,
            ..ShotOutcome::unresolved("u never reached um")
        };
    };

    // Monotone depression along the rising phase (eps > 0): while w > 0 from
    // the seed, q stays below q0 and q' stays negative. Checked on every
    // accepted step up to the first w zero.
    let t_first_wzero = sign_events().find(|e| e.kind == EventKind::WZero).map(|e| e.t);
    if params.epsilon > 0.0 {
        let t_cut = t_first_wzero.unwrap_or(traj.t_end);
        for (t, y) in traj.step_states() {
            if t > t_cut {
                break;
            }
            let qprime = 1.0 - y.q - params.beta * y.q * firing.value(y.u);
            if y.q >= q0 + 1e-9 || qprime >= 1e-9 {
                out.monotone_depression_violations += 1;
            }
        }
    }

    if let Some(t) = t_first_wzero {
        out.t_w_zero = Some(t - shift);
        let ev = sign_events().find(|e| e.kind == EventKind::WZero).unwrap();
        out.v_at_w_zero = Some(ev.state.v);
        out.u_at_w_zero = Some(ev.state.u);
    }

    // t1: first zero of u' after the um crossing, with u''(t1) < 0 checked
    // through u'' = w/c.
    let uprime_events: Vec<_> = sign_events()
        .filter(|e| e.kind == EventKind::UPrimeZero)
        .collect();
    let first_uprime = uprime_events.iter().find(|e| e.t > shift);
    let mut second_deriv_ok = false;
    if let Some(ev) = first_uprime {
        let udd = ev.state.w / params.c;
        out.t1 = Some(ev.t - shift);
        out.u_at_t1 = Some(ev.state.u);
        if udd < -opts.second_deriv_margin {
            second_deriv_ok = true;
        } else if udd.abs() <= opts.second_deriv_margin {
            out.graze = true;
            out.unresolved_reason = Some("u'' at t1 below margin".into());
        }
        out.tail_residual = Some(traj.min_distance_to(&p0, ev.t, 8).0);
    }

    // Terminal exit.
    let terminal = match traj.termination {
        Termination::TerminalEvent(idx) => Some(&traj.events[idx]),
        _ => None,
    };

    // Fast-pulse set: u' > 0 on [0, t1), u'(t1) = 0, u''(t1) < 0, u' < 0 on
    // (t1, t2], u(t2) = u0, u < u0 on (t2, t3], and exit u(t3) = 0 or
    // q(t3) = q0.
    if let (Some(ev1), true) = (first_uprime, second_deriv_ok) {
        let t1_raw = ev1.t;
        let next_uprime = uprime_events.iter().find(|e| e.t > t1_raw + 1e-12);
        let t_next_uprime = next_uprime.map(|e| e.t).unwrap_or(f64::INFINITY);
        let ueq_after: Vec<_> = sign_events()
            .filter(|e| e.kind == EventKind::UEq && e.t > t1_raw)
            .collect();
        if let Some(ev2) = ueq_after.first() {
            let falling = ev2.state.v - ev2.state.u < 0.0;
            if falling && ev2.t < t_next_uprime {
                out.t2 = Some(ev2.t - shift);
                if let Some(ev3) = terminal {
                    let exit_ok = match ev3.kind {
                        EventKind::UZero => true,
                        EventKind::QEq => ev3.state.u < u0,
                        _ => false,
                    };
                    let recross = ueq_after
                        .iter()
                        .any(|e| e.t > ev2.t + 1e-12 && e.t < ev3.t - 1e-12);
                    if exit_ok && ev3.t > ev2.t && !recross {
                        out.t3 = Some(ev3.t - shift);
                        out.in_lambda = true;
                    }
                }
            }
        }
    }

    // Slow-pulse sets: tau1 = first q' zero, requiring u'(tau1) < 0; then q'
    // must stay positive on intervals where u > 0 and q < q0.
    if params.epsilon > 0.0 {
        let qprime_events: Vec<_> = sign_events()
            .filter(|e| e.kind == EventKind::QPrimeZero)
            .collect();
        if let Some(ev) = qprime_events.first() {
            let uprime_here = ev.state.v - ev.state.u;
            if uprime_here < -1e-10 {
                out.tau1 = Some(ev.t - shift);
                out.in_sigma = true;
                let disqualifying = qprime_events.iter().any(|e| {
                    e.t > ev.t + 1e-12 && e.state.u > 0.0 && e.state.q < q0 - 1e-12
                });
                if disqualifying {
                    out.in_sigma1 = Some(false);
                } else {
                    // No disqualifying zero seen; decidable only if the run
                    // ended through an exit that closes the window.
                    out.in_sigma1 = match traj.termination {
                        Termination::TerminalEvent(_) => Some(true),
                        _ => None,
                    };
                }
            } else if uprime_here <= 1e-10 {
                out.graze = true;
                out.unresolved_reason = Some("u' at tau1 below margin".into());
            }
        }
    }

    // Primary class, most refined first.
    if let Some(ev) = terminal {
        if ev.kind == EventKind::HomeBall(opts.home_radius) {
            let st = ev.state;
            if st.q < q0 && st.v - st.u > 0.0 && confirm_home_decay(params, firing, landscape, st)
            {
                out.class = ShotClass::HomoclinicCandidate;
                return out;
            }
        }
    }
    out.class = if out.in_lambda {
        ShotClass::LambdaMember
    } else if out.in_sigma1 == Some(true) {
        ShotClass::Sigma1Member
    } else if out.in_sigma {
        ShotClass::SigmaMember
    } else if matches!(
        terminal.map(|e| e.kind),
        Some(EventKind::VOne)
    ) {
        ShotClass::FastEscapeUp
    } else if out.t_w_zero.is_some() {
        ShotClass::FastTurn
    } else if matches!(traj.termination, Termination::Overflow) {
        ShotClass::FastEscapeUp
    } else {
        out.unresolved_reason
            .get_or_insert_with(|| format!("termination {:?}", traj.termination));
        ShotClass::Unresolved
    };
    out
}

/// Monotone-decay confirmation for a homoclinic candidate: one extra time
/// unit from the ball-entry state must not increase the distance to p0.
fn confirm_home_decay(
    params: &ModelParams,
    firing: &FiringRate,
    landscape: &Landscape,
    entry: State4,
) -> bool {
    let Ok(field) = FullSystem::new(*params, firing.clone()) else {
        return false;
    };
    let ctx = EventContext::new(params, landscape, firing);
    let opts = IntegrateOptions {
        horizon: 1.0,
        ..Default::default()
    };
    let Ok(traj) = integrate(&field, entry, &[], &ctx, &opts) else {
        return false;
    };
    let p0 = landscape.equilibrium();
    let mut prev = entry.dist(&p0);
    for i in 1..=20 {
        let t = traj.t_end * i as f64 / 20.0;
        let d = traj.sample(t).dist(&p0);
        if d > prev + 1e-12 {
            return false;
        }
        prev = d;
    }
    true
}

/// Which flip the pre-scan should hand to the bisection when several exist:
/// the last one for a supremum-type boundary, the first for an infimum.
#[derive(Clone, Copy, Debug)]
pub enum FlipSide {
    First,
    Last,
}

/// Classify with nearby probes when the point itself is unresolved.
fn resolve(
    classify: &mut dyn FnMut(f64) -> Result<Option<bool>>,
    x: f64,
    probe: f64,
    lo: f64,
    hi: f64,
) -> Result<Option<(f64, bool)>> {
    if let Some(m) = classify(x)? {
        return Ok(Some((x, m)));
    }
    for k in [1.0, 2.0, 4.0] {
        for sgn in [1.0, -1.0] {
            let xp = x + sgn * k * probe;
            if xp <= lo || xp >= hi {
                continue;
            }
            if let Some(m) = classify(xp)? {
                return Ok(Some((xp, m)));
            }
        }
    }
    Ok(None)
}

/// Locate a classification boundary: optional pre-scan picking the outermost
/// flip, then bisection to machine-limited width. Unresolved midpoints are
/// probed; a persistent unresolved band stalls the refinement and is
/// reported on the bracket.
pub fn refine_boundary(
    context: &str,
    lo0: f64,
    hi0: f64,
    classify: &mut dyn FnMut(f64) -> Result<Option<bool>>,
    flip: FlipSide,
    scan_cells: usize,
) -> Result<Bracket> {
    let class_name = |m: bool| if m { "member" } else { "non-member" };
    let m_lo = classify(lo0)?.ok_or_else(|| {
        Error::bracket(context, format!("lower witness {lo0} unresolved"))
    })?;
    let m_hi = classify(hi0)?.ok_or_else(|| {
        Error::bracket(context, format!("upper witness {hi0} unresolved"))
    })?;
    if m_lo == m_hi {
        return Err(Error::bracket(
            context,
            format!("no classification flip on [{lo0}, {hi0}] (both {})", class_name(m_lo)),
        ));
    }

    let (mut lo, mut hi, mut m_lo, mut m_hi, mut flip_count) = (lo0, hi0, m_lo, m_hi, 1usize);
    if scan_cells > 1 {
        let mut nodes = vec![(lo0, m_lo)];
        for i in 1..scan_cells {
            let x = lo0 + (hi0 - lo0) * i as f64 / scan_cells as f64;
            if let Some(m) = classify(x)? {
                nodes.push((x, m));
            }
        }
        nodes.push((hi0, m_hi));
        let flips: Vec<usize> = (0..nodes.len() - 1)
            .filter(|&i| nodes[i].1 != nodes[i + 1].1)
            .collect();
        flip_count = flips.len();
        let pick = match flip {
            FlipSide::First => flips.first(),
            FlipSide::Last => flips.last(),
        }
        .copied()
        .ok_or_else(|| Error::bracket(context, "pre-scan lost the flip"))?;
        lo = nodes[pick].0;
        m_lo = nodes[pick].1;
        hi = nodes[pick + 1].0;
        m_hi = nodes[pick + 1].1;
    }

    let mut stalled = false;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let probe = (hi - lo) / 16.0;
        match resolve(classify, mid, probe, lo, hi)? {
            Some((x, m)) => {
                if m == m_lo {
                    lo = x;
                } else {
                    hi = x;
                    m_hi = m;
                }
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    Ok(Bracket {
        lo,
        hi,
        lo_class: class_name(m_lo).into(),
        hi_class: class_name(m_hi).into(),
        flip_count,
        stalled,
    })
}

/// Front speed result for the depression-frozen system.
#[derive(Clone, Debug, Serialize)]
pub struct FrontSpeed {
    pub c0_star: f64,
    pub bracket: Bracket,
    /// Closest approach of the midpoint trajectory to (uplus, uplus, 0).
    pub approach_distance: f64,
}

/// Find the unique front speed: bisection between a turning witness and an
/// upward-escape witness, refined until the bracket is machine-limited
/// (well below the 1e-10 contract).
pub fn find_c0_star(
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<FrontSpeed> {
    let q = landscape.q0;
    let mut classify = |c: f64| -> Result<Option<bool>> {
        let (outcome, _) = shoot_fast(c, params, landscape, firing, opts)?;
        Ok(match outcome.class {
            ShotClass::FastTurn => Some(true),
            ShotClass::FastEscapeUp => Some(false),
            _ => None,
        })
    };

    // Turn witness by geometric descent, escape witness by ascent, both
    // inside the contract window [1e-3, 50].
    let mut lo = 0.1;
    while classify(lo)? != Some(true) {
        lo *= 0.5;
        if lo < 1e-3 {
            return Err(Error::bracket(
                "front speed",
                "no turning witness found in [1e-3, 50]",
            ));
        }
    }
    let mut hi = 1.0;
    while classify(hi)? != Some(false) {
        hi *= 2.0;
        if hi > 50.0 {
            return Err(Error::bracket(
                "front speed",
                "no escape witness found in [1e-3, 50]",
            ));
        }
    }

    let bracket = refine_boundary(
        "front speed",
        lo,
        hi,
        &mut classify,
        FlipSide::Last,
        opts.scan_cells,
    )?;
    let c0 = bracket.midpoint();

    // Approach check at the returned speed: run without the turn/escape
    // terminals and measure the closest pass to the right equilibrium in the
    // fast variables.
    let params_c0 = params.with_c(c0);
    let (_, dir3) = fast_unstable_direction_at(&params_c0, firing, landscape.u0, q)?;
    let start = State4::new(
        landscape.u0 + opts.seed_offset * dir3[0],
        landscape.u0 + opts.seed_offset * dir3[1],
        opts.seed_offset * dir3[2],
        q,
    );
    let field = FastSystem::new(params_c0, firing.clone(), q)?;
    let ctx = EventContext::new(&params_c0, landscape, firing);
    let guards = [
        EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
        EventSpec::new(EventKind::VZero, EventDirection::Falling, true),
    ];
    let run = integrate(&field, start, &guards, &ctx, &opts.integrate)?;
    let target = State4::new(landscape.uplus, landscape.uplus, 0.0, q);
    let mut approach = f64::INFINITY;
    for step in &run.steps {
        for j in 0..=8 {
            let y = step.interpolate(j as f64 / 8.0);
            let d3 = ((y.u - target.u).powi(2) + (y.v - target.v).powi(2) + y.w.powi(2)).sqrt();
            approach = approach.min(d3);
        }
    }

    Ok(FrontSpeed {
        c0_star: c0,
        bracket,
        approach_distance: approach,
    })
}

/// Turning-point clearance of the fast system at speed c1: the value of v at
/// the first w zero must exceed q0 S(u_knee) for the fast-pulse argument.
#[derive(Clone, Debug, Serialize)]
pub struct TurnClearance {
    pub holds: bool,
    pub margin: f64,
    pub v_at_turn: f64,
    pub u_at_turn: f64,
    pub knee_level: f64,
    /// The conjectural alternative criterion: u at the turn above the knee.
    pub u_turn_above_knee: bool,
}

pub fn turn_clearance(
    c1: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<TurnClearance> {
    let (outcome, _) = shoot_fast(c1, params, landscape, firing, opts)?;
    if outcome.class != ShotClass::FastTurn {
        return Err(Error::numerical(
            "turn clearance",
            format!(
                "fast shot at c = {c1} is {:?}, not a turn",
                outcome.class
            ),
        ));
    }
    let v_at_turn = outcome.v_at_w_zero.unwrap();
    let u_at_turn = outcome.u_at_w_zero.unwrap();
    let knee_level = landscape.q0 * firing.value(landscape.u_knee);
    let margin = v_at_turn - knee_level;
    Ok(TurnClearance {
        holds: margin > 0.0,
        margin,
        v_at_turn,
        u_at_turn,
        knee_level,
        u_turn_above_knee: u_at_turn > landscape.u_knee,
    })
}

/// Single-hump profile check for the full system at (epsilon, c1): the shot
/// rises to one maximum (u'' < 0 there) and then falls monotonically to
/// u = 0.
#[derive(Clone, Debug, Serialize)]
pub struct HumpCheck {
    pub holds: bool,
    /// Seeded on the unstable manifold by construction.
    pub seeded_on_unstable_manifold: bool,
    pub t1: Option<f64>,
    pub t3: Option<f64>,
    pub u_max: Option<f64>,
    pub second_deriv_at_t1: Option<f64>,
    pub detail: String,
}

pub fn check_single_hump(
    epsilon: f64,
    c1: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<HumpCheck> {
    let (outcome, traj) = shoot_full(c1, epsilon, params, landscape, firing, opts)?;
    let terminal = match traj.termination {
        Termination::TerminalEvent(idx) => Some(traj.events[idx].kind),
        _ => None,
    };
    let exit_u_zero = matches!(terminal, Some(EventKind::UZero));
    let udd = outcome
        .t1
        .map(|_| outcome.u_at_t1.map(|_| ()))
        .and(Some(()))
        .and_then(|_| {
            traj.events
                .iter()
                .find(|e| e.kind == EventKind::UPrimeZero && e.crossing == Crossing::Sign)
                .map(|e| e.state.w / c1)
        });
    // Between t1 and the exit, u' must keep one sign: no second u' zero
    // before the terminal event.
    let uprime_zeros = traj
        .events
        .iter()
        .filter(|e| e.kind == EventKind::UPrimeZero && e.crossing == Crossing::Sign)
        .count();
    let holds = outcome.t1.is_some()
        && udd.map(|x| x < -opts.second_deriv_margin).unwrap_or(false)
        && exit_u_zero
        && uprime_zeros == 1;
    let detail = if holds {
        "single maximum, monotone fall to u = 0".to_string()
    } else {
        format!(
            "t1 = {:?}, u'' = {:?}, exit = {:?}, u' zeros = {}",
            outcome.t1, udd, terminal, uprime_zeros
        )
    };
    Ok(HumpCheck {
        holds,
        seeded_on_unstable_manifold: true,
        t1: outcome.t1,
        t3: outcome.t3,
        u_max: outcome.u_at_t1,
        second_deriv_at_t1: udd,
        detail,
    })
}

/// A bisected pulse speed with its certificate and the tail residual of the
/// midpoint run.
#[derive(Clone, Debug, Serialize)]
pub struct PulseSpeed {
    pub c: f64,
    pub bracket: Bracket,
    /// min over the tail of |p(t) - p0| at the returned speed, measured on a
    /// guard-only rerun. Limited by the transverse instability of the return
    /// leg, not by the bracket width.
    pub home_residual: f64,
    pub residual_time: f64,
}

/// Tail residual run: integrate at speed c with only escape guards and
/// report the closest return to the equilibrium after the pulse peak.
pub fn homoclinic_residual(
    c: f64,
    epsilon: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<(f64, f64)> {
    let params = params.with_c(c).with_epsilon(epsilon);
    let dir = unstable_eigenvector(&params, landscape, firing)?;
    let start = crate::integrate::seed_unstable(landscape, &dir, opts.seed_offset);
    let field = FullSystem::new(params, firing.clone())?;
    let ctx = EventContext::new(&params, landscape, firing);
    let events = [
        EventSpec::new(EventKind::UPrimeZero, EventDirection::Any, false),
        EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
        EventSpec::new(EventKind::VZero, EventDirection::Falling, true),
    ];
    let run_opts = IntegrateOptions {
        horizon: 2.0 * opts.integrate.horizon,
        ..opts.integrate
    };
    let traj = integrate(&field, start, &events, &ctx, &run_opts)?;
    let t_peak = traj
        .events
        .iter()
        .find(|e| e.kind == EventKind::UPrimeZero && e.crossing == Crossing::Sign)
        .map(|e| e.t)
        .unwrap_or(traj.t_end * 0.5);
    let (d, t) = traj.min_distance_to(&landscape.equilibrium(), t_peak, 16);
    Ok((d, t))
}

/// Fast pulse speed: supremum of the fast-pulse shooting set, bracketed
/// between c1 (a member by hypothesis) and c0* + 1 (escape).
pub fn find_c_star(
    epsilon: f64,
    c1: f64,
    c0_star: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<PulseSpeed> {
    let mut classify = |c: f64| -> Result<Option<bool>> {
        let (outcome, _) = shoot_full(c, epsilon, params, landscape, firing, opts)?;
        if outcome.class == ShotClass::Unresolved {
            return Ok(None);
        }
        Ok(Some(outcome.in_lambda))
    };
    if classify(c1)? != Some(true) {
        return Err(Error::bracket(
            "fast pulse speed",
            format!("c1 = {c1} is not in the fast-pulse shooting set"),
        ));
    }
    let bracket = refine_boundary(
        "fast pulse speed",
        c1,
        c0_star + 1.0,
        &mut classify,
        FlipSide::Last,
        opts.scan_cells,
    )?;
    let c = bracket.midpoint();
    let (home_residual, residual_time) =
        homoclinic_residual(c, epsilon, params, landscape, firing, opts)?;
    Ok(PulseSpeed {
        c,
        bracket,
        home_residual,
        residual_time,
    })
}

/// Slow pulse result: the lower boundary of the q'-sign set and the infimum
/// of its refined subset.
#[derive(Clone, Debug, Serialize)]
pub struct SlowPulse {
    pub c_sub_star: PulseSpeed,
    pub c3: f64,
    pub c3_bracket: Bracket,
    pub epsilon_over_c: f64,
}

/// Slow pulse speed: locate c3 (supremum of non-members of the q'-sign set
/// below c1), then the infimum of refined members above it.
pub fn find_c_sub_star(
    epsilon: f64,
    c1: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<SlowPulse> {
    let mut classify_sigma = |c: f64| -> Result<Option<bool>> {
        let (outcome, _) = shoot_full(c, epsilon, params, landscape, firing, opts)?;
        if outcome.class == ShotClass::Unresolved {
            return Ok(None);
        }
        Ok(Some(outcome.in_sigma))
    };

    if classify_sigma(c1)? != Some(true) {
        return Err(Error::bracket(
            "slow pulse speed",
            format!("c1 = {c1} is not in the q'-sign shooting set"),
        ));
    }

    // Non-membership witness hunt: escape behavior holds for eps/c large, so
    // start at c = 10 eps and descend.
    let mut witness = (10.0 * epsilon).min(0.5 * c1);
    loop {
        match classify_sigma(witness)? {
            Some(false) => break,
            _ => {
                witness *= 0.5;
                if witness < 1e-6 {
                    return Err(Error::bracket(
                        "slow pulse speed",
                        "no non-membership witness found above 1e-6",
                    ));
                }
            }
        }
    }

    let c3_bracket = refine_boundary(
        "q'-sign set lower boundary",
        witness,
        c1,
        &mut classify_sigma,
        FlipSide::Last,
        opts.scan_cells,
    )?;
    let c3 = c3_bracket.midpoint();

    // Members just above c3 fall back out of the refined set (the grazing
    // double zero of q'), so the member endpoint of the c3 bracket is the
    // natural non-member witness for the refined set.
    let mut classify_sigma1 = |c: f64| -> Result<Option<bool>> {
        let (outcome, _) = shoot_full(c, epsilon, params, landscape, firing, opts)?;
        if outcome.class == ShotClass::Unresolved {
            return Ok(None);
        }
        match outcome.in_sigma1 {
            Some(m) => Ok(Some(m && outcome.in_sigma)),
            None => Ok(None),
        }
    };
    let mut lo = c3_bracket.hi;
    if classify_sigma1(lo)? != Some(false) {
        // Walk slightly up until the verdict resolves to a non-member.
        let mut found = false;
        for k in 1..=8 {
            let x = c3_bracket.hi + k as f64 * (c1 - c3_bracket.hi) / 256.0;
            if classify_sigma1(x)? == Some(false) {
                lo = x;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::bracket(
                "slow pulse speed",
                "no refined-set non-member found above c3",
            ));
        }
    }
    if classify_sigma1(c1)? != Some(true) {
        return Err(Error::bracket(
            "slow pulse speed",
            format!("c1 = {c1} is not in the refined q'-sign set"),
        ));
    }

    let bracket = refine_boundary(
        "slow pulse speed",
        lo,
        c1,
        &mut classify_sigma1,
        FlipSide::First,
        opts.scan_cells,
    )?;
    let c = bracket.midpoint();
    let (home_residual, residual_time) =
        homoclinic_residual(c, epsilon, params, landscape, firing, opts)?;
    Ok(SlowPulse {
        c_sub_star: PulseSpeed {
            c,
            bracket,
            home_residual,
            residual_time,
        },
        c3,
        c3_bracket,
        epsilon_over_c: epsilon / c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_landscape;

    fn setup() -> (ModelParams, FiringRate, Landscape) {
        let params = ModelParams::reference(0.005, 0.3);
        let s = FiringRate::sigmoid(&params);
        let l = compute_landscape(&params, &s).unwrap();
        (params, s, l)
    }

    #[test]
    fn extreme_speeds_classify_as_expected() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let (big, _) = shoot_fast(10.0, &params, &l, &s, &opts).unwrap();
        assert_eq!(big.class, ShotClass::FastEscapeUp);
        let (small, _) = shoot_fast(0.01, &params, &l, &s, &opts).unwrap();
        assert_eq!(small.class, ShotClass::FastTurn);
        assert!(small.t_w_zero.is_some());
    }

    #[test]
    fn small_speed_turn_is_followed_by_v_collapse() {
        // After the turn at small c the trajectory stays in the annular
        // band and v eventually crosses zero.
        let (params, s, l) = setup();
        let params = params.with_c(0.01);
        let (_, dir3) = fast_unstable_direction_at(&params, &s, l.u0, l.q0).unwrap();
        let start = State4::new(
            l.u0 + 1e-7 * dir3[0],
            l.u0 + 1e-7 * dir3[1],
            1e-7 * dir3[2],
            l.q0,
        );
        let field = FastSystem::new(params, s.clone(), l.q0).unwrap();
        let ctx = EventContext::new(&params, &l, &s);
        let events = [
            EventSpec::new(EventKind::WZero, EventDirection::Falling, false),
            EventSpec::new(EventKind::VZero, EventDirection::Falling, true),
        ];
        let traj = integrate(&field, start, &events, &ctx, &IntegrateOptions::default()).unwrap();
        let t_turn = traj.events_of(0).next().map(|e| e.t).unwrap();
        match traj.termination {
            Termination::TerminalEvent(i) => {
                assert_eq!(traj.events[i].kind, EventKind::VZero);
                assert!(traj.events[i].t > t_turn);
            }
            other => panic!("expected v = 0 exit, got {other:?}"),
        }
    }

    #[test]
    fn front_speed_found_with_certificate() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let front = find_c0_star(&params, &l, &s, &opts).unwrap();
        assert!(front.bracket.width() < 1e-10);
        assert_eq!(front.bracket.lo_class, "member");
        assert_eq!(front.bracket.hi_class, "non-member");
        assert!(front.c0_star > 0.3 && front.c0_star < 0.4, "{}", front.c0_star);
        assert!(front.approach_distance < 1e-5, "{}", front.approach_distance);

        // Classifier is monotone across the bracket tails.
        for k in 1..=10 {
            let below = front.c0_star - k as f64 * 0.02;
            let (o, _) = shoot_fast(below, &params, &l, &s, &opts).unwrap();
            assert_eq!(o.class, ShotClass::FastTurn, "at {below}");
        }
        for k in 1..=10 {
            let above = front.c0_star + k as f64 * 0.02;
            let (o, _) = shoot_fast(above, &params, &l, &s, &opts).unwrap();
            assert_eq!(o.class, ShotClass::FastEscapeUp, "at {above}");
        }
    }

    #[test]
    fn turn_value_increases_with_speed() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let mut prev = -f64::INFINITY;
        for k in 0..10 {
            let c = 0.05 + 0.03 * k as f64;
            let (o, _) = shoot_fast(c, &params, &l, &s, &opts).unwrap();
            assert_eq!(o.class, ShotClass::FastTurn);
            let v = o.v_at_w_zero.unwrap();
            assert!(v > prev, "v at turn not increasing at c = {c}");
            prev = v;
        }
    }

    #[test]
    fn turn_clearance_at_working_speed() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let tc = turn_clearance(0.34, &params, &l, &s, &opts).unwrap();
        assert!(tc.holds);
        assert!(tc.margin > 0.0 && tc.margin < 0.1, "margin {}", tc.margin);
        // Frozen from the worked example at these parameters.
        assert!((tc.v_at_turn - 0.7923).abs() < 5e-3, "{}", tc.v_at_turn);
        assert!((tc.knee_level - 0.770711820911842).abs() < 1e-9);
        assert!(tc.u_turn_above_knee);
    }

    #[test]
    fn turn_clearance_fails_at_small_speed() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let tc = turn_clearance(0.01, &params, &l, &s, &opts).unwrap();
        assert!(!tc.holds, "margin {} unexpectedly positive", tc.margin);
    }

    #[test]
    fn single_hump_holds_at_reference_pair() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let hc = check_single_hump(0.005, 0.34, &params, &l, &s, &opts).unwrap();
        assert!(hc.holds, "{}", hc.detail);
        assert!(hc.u_max.unwrap() > l.u_knee);
        assert!(hc.second_deriv_at_t1.unwrap() < 0.0);
    }

    #[test]
    fn full_shot_memberships_at_reference_points() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();

        let (at_c1, _) = shoot_full(0.34, 0.005, &params, &l, &s, &opts).unwrap();
        assert!(at_c1.in_lambda, "{at_c1:?}");
        assert_eq!(at_c1.class, ShotClass::LambdaMember);
        assert_eq!(at_c1.monotone_depression_violations, 0);
        assert!(at_c1.in_sigma);

        // Above the front speed: escape, not a member.
        let (fastest, _) = shoot_full(0.36, 0.005, &params, &l, &s, &opts).unwrap();
        assert!(!fastest.in_lambda);
        assert_eq!(fastest.class, ShotClass::FastEscapeUp);

        // eps/c large: depression never turns, u runs away upward.
        let (runaway, _) = shoot_full(0.002, 0.005, &params, &l, &s, &opts).unwrap();
        assert!(!runaway.in_sigma);
        assert_eq!(runaway.class, ShotClass::FastEscapeUp);
    }

    #[test]
    fn lambda_membership_is_open_at_the_reference_speed() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        for c in [0.34 - 1e-6, 0.34, 0.34 + 1e-6] {
            let (o, _) = shoot_full(c, 0.005, &params, &l, &s, &opts).unwrap();
            assert_eq!(o.class, ShotClass::LambdaMember, "at c = {c}");
        }
    }

    #[test]
    fn depression_frozen_full_shot_reproduces_fast_shot() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        let (fast, fast_traj) = shoot_fast(0.3, &params, &l, &s, &opts).unwrap();
        let (full, full_traj) = shoot_full(0.3, 0.0, &params, &l, &s, &opts).unwrap();
        assert_eq!(fast.class, ShotClass::FastTurn);
        assert!(full.t_w_zero.is_some());
        let dt = (fast.t_w_zero.unwrap() - full.t_w_zero.unwrap()).abs();
        assert!(dt < 1e-9, "turn-time mismatch {dt}");
        let dv = (fast.v_at_w_zero.unwrap() - full.v_at_w_zero.unwrap()).abs();
        assert!(dv < 1e-9);
        let du = (fast_traj.sample(2.0).u - full_traj.sample(2.0).u).abs();
        assert!(du < 1e-9);
    }

    #[test]
    fn rising_phase_depression_is_monotone() {
        let (params, s, l) = setup();
        let opts = ShootOptions::default();
        for c in [0.05, 0.1, 0.2, 0.3, 0.34] {
            let (o, _) = shoot_full(c, 0.005, &params, &l, &s, &opts).unwrap();
            assert_eq!(
                o.monotone_depression_violations, 0,
                "violations at c = {c}"
            );
        }
    }
}
