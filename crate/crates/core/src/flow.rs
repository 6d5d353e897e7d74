//! Characteristic flows: fixed-step RK4 integration of velocity fields,
//! measure transport by particle push-forward, and hitting times.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Velocity;
use crate::measure::Measure;
use crate::region::Region;
use crate::scalar::{Coords, Real};

/// Integration controls. `guard` bounds the admissible state; leaving it
/// signals a field bug since admissible fields are uniformly bounded.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowParams<F> {
    pub dt: F,
    pub guard: F,
}

impl<F: Real> FlowParams<F> {
    pub fn new(dt: F) -> Self {
        assert!(dt > F::zero(), "dt must be positive");
        FlowParams {
            dt,
            guard: F::of(1e9),
        }
    }
}

impl<F: Real> Default for FlowParams<F> {
    fn default() -> Self {
        Self::new(F::of(1e-3))
    }
}

/// Time direction for hitting-time queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// A sampled integral curve.
#[derive(Debug, Clone)]
pub struct Trajectory<F> {
    pub dim: usize,
    pub times: Vec<F>,
    pub states: Vec<Coords<F>>,
}

impl<F: Real> Trajectory<F> {
    /// CSV with a schema comment line: `t,x1[,x2]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let cols: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        s.push_str(&format!("# schema: t,{}\n", cols.join(",")));
        for (t, x) in self.times.iter().zip(&self.states) {
            s.push_str(&format!("{t}"));
            for k in 0..self.dim {
                s.push_str(&format!(",{}", x[k]));
            }
            s.push('\n');
        }
        s
    }
}

#[inline]
fn rk4_step<F: Real>(f: &impl Fn(Coords<F>, F) -> Coords<F>, x: Coords<F>, t: F, h: F) -> Coords<F> {
    let half = F::of(0.5);
    let sixth = F::one() / F::of(6.0);
    let two = F::of(2.0);
    let k1 = f(x, t);
    let k2 = f([x[0] + half * h * k1[0], x[1] + half * h * k1[1]], t + half * h);
    let k3 = f([x[0] + half * h * k2[0], x[1] + half * h * k2[1]], t + half * h);
    let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]], t + h);
    [
        x[0] + h * sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]),
        x[1] + h * sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]),
    ]
}

#[inline]
fn check_state<F: Real>(x: Coords<F>, t: F, guard: F) -> Result<()> {
    if !x[0].is_finite() || !x[1].is_finite() || x[0].abs() > guard || x[1].abs() > guard {
        return Err(Error::NonFiniteState {
            t: t.as_f64(),
            x: [x[0].as_f64(), x[1].as_f64()],
        });
    }
    Ok(())
}

/// Integrate from `(x0, t0)` to `t1` and call `visit(t, x)` after every
/// accepted step (and once for the initial state). Backward targets are
/// handled by integrating the time-reversed field.
fn integrate<F: Real, W: Velocity<F> + ?Sized>(
    w: &W,
    x0: Coords<F>,
    t0: F,
    t1: F,
    params: FlowParams<F>,
    mut visit: impl FnMut(F, Coords<F>),
) -> Result<Coords<F>> {
    let span = (t1 - t0).abs();
    let forward = t1 >= t0;
    // time-reversed field for backward solves
    let f = |x: Coords<F>, s: F| -> Coords<F> {
        if forward {
            w.velocity(x, t0 + s)
        } else {
            let v = w.velocity(x, t0 - s);
            [-v[0], -v[1]]
        }
    };
    let physical = |s: F| if forward { t0 + s } else { t0 - s };
    let mut x = x0;
    let mut s = F::zero();
    visit(physical(s), x);
    check_state(x, t0, params.guard)?;
    let n_full = (span / params.dt).floor().as_f64() as usize;
    for _ in 0..n_full {
        x = rk4_step(&f, x, s, params.dt);
        s += params.dt;
        check_state(x, physical(s), params.guard)?;
        visit(physical(s), x);
    }
    let rem = span - F::of(n_full as f64) * params.dt;
    if rem > span * F::of(1e-12) {
        x = rk4_step(&f, x, s, rem);
        s += rem;
        check_state(x, physical(s), params.guard)?;
        visit(physical(s), x);
    }
    Ok(x)
}

/// Endpoint of the characteristic through `(x0, t0)` at time `t1`
/// (classical fixed-step RK4; `t1 < t0` integrates the reversed field).
pub fn flow_map<F: Real, W: Velocity<F> + ?Sized>(
    w: &W,
    x0: Coords<F>,
    t0: F,
    t1: F,
    params: FlowParams<F>,
) -> Result<Coords<F>> {
    integrate(w, x0, t0, t1, params, |_, _| {})
}

/// Full sampled trajectory from `t0` to `t1`.
pub fn flow_trajectory<F: Real, W: Velocity<F> + ?Sized>(
    w: &W,
    dim: usize,
    x0: Coords<F>,
    t0: F,
    t1: F,
    params: FlowParams<F>,
) -> Result<Trajectory<F>> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    integrate(w, x0, t0, t1, params, |t, x| {
        times.push(t);
        states.push(x);
    })?;
    Ok(Trajectory { dim, times, states })
}

/// Solve the continuity equation by pushing `mu0` forward along the flow,
/// sampling the solution at every time in `t_grid` (increasing from 0).
///
/// Per-particle integration is embarrassingly parallel and bit-identical
/// to the sequential order: each particle is an independent pure map and
/// results are collected by index.
pub fn solve_continuity<F: Real, W: Velocity<F> + ?Sized>(
    w: &W,
    mu0: &Measure<F>,
    t_grid: &[F],
    params: FlowParams<F>,
) -> Result<Vec<Measure<F>>> {
    assert!(!t_grid.is_empty(), "need at least one output time");
    assert!(
        t_grid.windows(2).all(|p| p[0] < p[1]),
        "t_grid must be increasing"
    );
    let paths: Vec<Result<Vec<Coords<F>>>> = mu0
        .positions
        .par_iter()
        .map(|&x0| {
            let mut snaps = Vec::with_capacity(t_grid.len());
            let mut x = x0;
            let mut t = F::zero();
            for &tk in t_grid {
                x = flow_map(w, x, t, tk, params)?;
                t = tk;
                snaps.push(x);
            }
            Ok(snaps)
        })
        .collect();
    let mut per_particle = Vec::with_capacity(paths.len());
    for p in paths {
        per_particle.push(p?);
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for (k, _) in t_grid.iter().enumerate() {
        let positions: Vec<Coords<F>> = per_particle.iter().map(|snaps| snaps[k]).collect();
        out.push(Measure {
            dim: mu0.dim,
            positions,
            weights: mu0.weights.clone(),
            density_1d: None,
        });
    }
    Ok(out)
}

/// First time in `[0, t_max]` at which the flow from `x0` enters `r`,
/// refined by bisection to `dt/100`; `None` if the region is never entered
/// on the integration grid. Backward queries return the positive backward
/// time.
pub fn hitting_time<F: Real, W: Velocity<F> + ?Sized>(
    w: &W,
    x0: Coords<F>,
    r: &Region<F>,
    t_max: F,
    direction: Direction,
    params: FlowParams<F>,
) -> Result<Option<F>> {
    if r.contains(x0) {
        return Ok(Some(F::zero()));
    }
    // signed endpoint for the underlying integrator
    let target = |s: F| match direction {
        Direction::Forward => s,
        Direction::Backward => -s,
    };
    let mut s_prev = F::zero();
    let mut x_prev = x0;
    let mut s = F::zero();
    while s < t_max {
        let step = params.dt.min(t_max - s);
        let x_next = flow_map(w, x_prev, target(s), target(s + step), params)?;
        s += step;
        if r.contains(x_next) {
            // bisect the entry time within the last step
            let mut lo = F::zero();
            let mut hi = step;
            let tol = params.dt / F::of(100.0);
            while hi - lo > tol {
                let mid = (lo + hi) * F::of(0.5);
                let xm = flow_map(w, x_prev, target(s_prev), target(s_prev + mid), params)?;
                if r.contains(xm) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(s_prev + hi));
        }
        s_prev = s;
        x_prev = x_next;
    }
    Ok(None)
}
