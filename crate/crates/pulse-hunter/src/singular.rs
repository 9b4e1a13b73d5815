//! The frozen-depression singular skeleton: the speed map q -> c(q) of
//! heteroclinic connections at each depression level, the Maxwell point, the
//! four-piece singular solution, and the back-speed bound check.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{
    integrate, EventContext, EventDirection, EventKind, EventSpec, FastSystem, Termination,
    Trajectory,
};
use crate::model::{h_level_roots, maxwell_integral_between, FiringRate, Landscape, ModelParams,
    State4};
use crate::shoot::{refine_boundary, Bracket, FlipSide, ShootOptions};
use crate::spectral::fast_unstable_direction_at;

/// A Maxwell integral smaller than this in magnitude means a standing
/// connection (c = 0).
pub const STANDING_TOL: f64 = 1e-10;
/// Grid resolution of the q scan over (q_min, q0).
pub const DEFAULT_GRID: usize = 512;
/// A back whose speed comes within this of the front speed is a jump-down
/// candidate above the knee.
pub const JUMP_SPEED_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConnectionDirection {
    /// u increasing from the left root to the right root.
    Front,
    /// u decreasing from the right root to the left root.
    Back,
    /// Maxwell point: c = 0.
    Standing,
}

/// The heteroclinic connection of the level-q fast system.
#[derive(Clone, Debug, Serialize)]
pub struct BackResult {
    pub q: f64,
    pub c_of_q: f64,
    pub u_minus: f64,
    pub u_plus: f64,
    pub direction: ConnectionDirection,
    pub maxwell: f64,
    pub bracket: Option<Bracket>,
}

enum LevelShot {
    Turn,
    Escape,
    Unresolved,
}

/// One shot of the level-q fast system. Fronts seed at the left root going
/// up (escape: v crosses 1); backs seed at the right root going down
/// (escape: v crosses below the left root).
fn level_shot(
    c: f64,
    q: f64,
    u_minus: f64,
    u_plus: f64,
    back: bool,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<(LevelShot, Trajectory)> {
    let params = params.with_c(c);
    let (u_seed, sign) = if back { (u_plus, -1.0) } else { (u_minus, 1.0) };
    let (_, dir3) = fast_unstable_direction_at(&params, firing, u_seed, q)?;
    let start = State4::new(
        u_seed + sign * opts.seed_offset * dir3[0],
        u_seed + sign * opts.seed_offset * dir3[1],
        sign * opts.seed_offset * dir3[2],
        q,
    );
    let field = FastSystem::new(params, firing.clone(), q)?;
    let ctx = EventContext::new(&params, landscape, firing);
    let events = if back {
        [
            EventSpec::new(EventKind::WZero, EventDirection::Rising, true),
            EventSpec::new(EventKind::VLevel(u_minus), EventDirection::Falling, true),
        ]
    } else {
        [
            EventSpec::new(EventKind::WZero, EventDirection::Falling, true),
            EventSpec::new(EventKind::VOne, EventDirection::Rising, true),
        ]
    };
    let traj = integrate(&field, start, &events, &ctx, &opts.integrate)?;
    let class = match traj.termination {
        Termination::TerminalEvent(idx) => {
            if traj.has_graze() {
                LevelShot::Unresolved
            } else if traj.events[idx].spec_index == 0 {
                LevelShot::Turn
            } else {
                LevelShot::Escape
            }
        }
        _ => LevelShot::Unresolved,
    };
    Ok((class, traj))
}

/// The unique connection speed at depression level q: front when the area
/// integral is positive, back when negative, standing at the Maxwell point.
pub fn back_speed(
    q: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<BackResult> {
    if !(q > landscape.q_min && q <= landscape.q0 + 1e-12) {
        return Err(Error::numerical(
            "level connection",
            format!(
                "q = {q} outside the bistable window ({}, {}]",
                landscape.q_min, landscape.q0
            ),
        ));
    }
    let roots = h_level_roots(firing, q);
    if roots.len() < 2 {
        return Err(Error::numerical(
            "level connection",
            format!("h(u) = {q} has {} roots, need the outer pair", roots.len()),
        ));
    }
    let u_minus = roots[0];
    let u_plus = *roots.last().unwrap();
    let maxwell = maxwell_integral_between(firing, q, u_minus, u_plus);

    if maxwell.abs() < STANDING_TOL {
        return Ok(BackResult {
            q,
            c_of_q: 0.0,
            u_minus,
            u_plus,
            direction: ConnectionDirection::Standing,
            maxwell,
            bracket: None,
        });
    }
    let back = maxwell < 0.0;

    let mut classify = |c: f64| -> Result<Option<bool>> {
        let (class, _) = level_shot(c, q, u_minus, u_plus, back, params, landscape, firing, opts)?;
        Ok(match class {
            LevelShot::Turn => Some(true),
            LevelShot::Escape => Some(false),
            LevelShot::Unresolved => None,
        })
    };

    // Turn witness descends toward the Maxwell point where c(q) -> 0; a
    // failure below 1e-7 is reported as a standing connection.
    let mut lo = 0.1;
    let mut lo_ok = false;
    while lo >= 1e-7 {
        if classify(lo)? == Some(true) {
            lo_ok = true;
            break;
        }
        lo *= 0.25;
    }
    if !lo_ok {
        return Ok(BackResult {
            q,
            c_of_q: 0.0,
            u_minus,
            u_plus,
            direction: ConnectionDirection::Standing,
            maxwell,
            bracket: None,
        });
    }
    let mut hi = 1.0;
    while classify(hi)? != Some(false) {
        hi *= 2.0;
        if hi > 50.0 {
            return Err(Error::bracket(
                "level connection",
                format!("no escape witness for q = {q} below c = 50"),
            ));
        }
    }

    let bracket = refine_boundary(
        "level connection",
        lo,
        hi,
        &mut classify,
        FlipSide::Last,
        0,
    )?;
    Ok(BackResult {
        q,
        c_of_q: bracket.midpoint(),
        u_minus,
        u_plus,
        direction: if back {
            ConnectionDirection::Back
        } else {
            ConnectionDirection::Front
        },
        maxwell,
        bracket: Some(bracket),
    })
}

/// Locate the Maxwell point: the q where the area integral over the outer
/// roots changes sign.
pub fn maxwell_point(landscape: &Landscape, firing: &FiringRate) -> Result<f64> {
    let f = |q: f64| {
        let roots = h_level_roots(firing, q);
        let (lo, hi) = (roots[0], *roots.last().unwrap());
        maxwell_integral_between(firing, q, lo, hi)
    };
    let a = landscape.q_min + 1e-6;
    let b = landscape.q0;
    if f(a) >= 0.0 || f(b) <= 0.0 {
        return Err(Error::numerical(
            "maxwell point",
            "area integral does not change sign on the bistable window",
        ));
    }
    Ok(crate::model::bisect(f, a, b, 1e-14))
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularSolution {
    /// (u, q) samples of the front piece at level q0.
    pub front: Vec<(f64, f64)>,
    /// Right-branch nullcline arc from (uplus, q0) down to the jump level.
    pub slow_right: Vec<(f64, f64)>,
    /// The down-jump at the jump level.
    pub back: Vec<(f64, f64)>,
    /// Left-branch nullcline arc returning to (u0, q0).
    pub slow_left: Vec<(f64, f64)>,
    /// Level of the down-jump: the largest q in (q_min, q0) whose back runs
    /// at the front speed, or q_min when none exists.
    pub jump_down_q: f64,
    pub at_knee: bool,
    /// Front speed c(q0) used as the jump speed.
    pub front_speed: f64,
}

/// Speed map over the q grid plus the scan metadata.
#[derive(Clone, Debug, Serialize)]
pub struct SpeedCurve {
    pub points: Vec<BackResult>,
    pub front_speed: f64,
    /// Whether c(q) is monotone over the back region (reported, never
    /// assumed).
    pub monotone_on_backs: bool,
}

/// Scan c(q) over a grid of (q_min, q0). Grid points are independent and run
/// in parallel.
pub fn scan_speed_curve(
    grid: usize,
    front_speed: f64,
    params: &ModelParams,
    landscape: &Landscape,
    firing: &FiringRate,
    opts: &ShootOptions,
) -> Result<SpeedCurve> {
    let span = landscape.q0 - landscape.q_min;
    let qs: Vec<f64> = (0..grid)
        .map(|i| landscape.q_min + span * (i as f64 + 0.5) / grid as f64)
        .collect();
    let mut points: Vec<BackResult> = qs
        .par_iter()
        .map(|&q| back_speed(q, params, landscape, firing, opts))
        .collect::<Result<Vec<_>>>()?;

    // Local refinement near any back running close to the front speed; the
    // jump-above-the-knee verdict is a strict comparison there.
    let near: Vec<f64> = points
        .iter()
        .filter(|p| {
            p.direction == ConnectionDirection::Back
                && (p.c_of_q - front_speed).abs) < 1e-3
        })
        .map(|p| p.q)
        .collect();
    let cell = span / grid as f64;
    let refined: Vec<BackResult> = near
        .par_iter()
        .flat_map(|&q| {
            (1..8)
                .into_par_iter()
                .filter_map(move |k| {
                    let qq = q + cell * (k as f64 / 8.0 - 0.5);
                    (qq > landscape.q_min && qq < landscape.q0).then_some(qq)
                })
                .map(|qq| back_speed(qq, params, landscape, firing, opts))
        })
        .collect::<Result<Vec<_>>>()?;
    points.extend(refined);
    points.sort_by(|a, b| a.q.total_cmp(&b.q));

    let backs: Vec<&BackResult> = points
        .iter()
        .filter(|p| p.direction == ConnectionDirection::Back)
        .collect();
    let monotone_on_backs = backs.windows(2).all(|w| w[0].c_of_q >= w[1].c_of_q);
    Ok(SpeedCurve {
        points,
        front_speed,
        monotone_on_backs,
    })
}

/// Assemble the four-piece singular solution from the speed curve.
pub fn build_singular_solution(
    curve: &SpeedCurve,
    landscape: &Landscape,
    firing: &FiringRate,
) -> SingularSolution {
    let front_speed = curve.front_speed;
    let jump = curve
        .points
        .iter()
        .filter(|p| {
            p.direction == ConnectionDirection::Back
                && (p.c_of_q - front_speed).abs() < JUMP_SPEED_TOL
        })
        .map(|p| p.q)
        .fold(f64::NEG_INFINITY, f64::max);
    let at_knee = !jump.is_finite();
    let jump_down_q = if at_knee { landscape.q_min } else { jump };

    let n = 200;
    let roots = h_level_roots(firing, (jump_down_q + 1e-12).min(landscape.q0));
    let (u_lo_jump, u_hi_jump) = if at_knee {
        // Tangency at the knee: the right root collapses onto the knee.
        (roots[0], landscape.u_knee)
    } else {
        (roots[0], *roots.last().unwrap())
    };

    let sample = |a: f64, b: f64, f: &dyn Fn(f64) -> (f64, f64)| -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| f(a + (b - a) * i as f64 / n as f64))
            .collect()
    };
    let front = sample(landscape.u0, landscape.uplus, &|u| (u, landscape.q0));
    let slow_right = sample(landscape.uplus, u_hi_jump, &|u| (u, firing.h(u)));
    let back = sample(u_hi_jump, u_lo_jump, &|u| (u, jump_down_q));
    let slow_left = sample(u_lo_jump, landscape.u0, &|u| (u, firing.h(u)));

    SingularSolution {
        front,
        slow_right,
        back,
        slow_left,
        jump_down_q,
        at_knee,
        front_speed,
    }
}

/// Verdict of the back-speed bound: every back over the scan is slower than
/// the front.
#[derive(Clone, Debug, Serialize)]
pub struct BackSpeedBound {
    pub holds: bool,
    pub max_back_speed: f64,
    pub front_speed: f64,
    /// c(q) at the smallest scanned q, approaching the knee limit.
    pub speed_near_knee: f64,
    pub monotone_on_backs: bool,
}

pub fn check_back_speed_bound(curve: &SpeedCurve) -> BackSpeedBound {
    let backs: Vec<&BackResult> = curve
        .points
        .iter()
        .filter(|p| p.direction == ConnectionDirection::Back)
        .collect();
    let max_back_speed = backs.iter().map(|p| p.c_of_q).fold(0.0, f64::max);
    let speed_near_knee = backs.first().map(|p| p.c_of_q).unwrap_or(0.0);
    BackSpeedBound {
        holds: max_back_speed < curve.front_speed - 1e-8,
        max_back_speed,
        front_speed: curve.front_speed,
        speed_near_knee,
        monotone_on_backs: curve.monotone_on_backs,
    }
}
