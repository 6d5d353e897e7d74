//! The 1-D corridor worked example: a uniform block drifting at unit
//! speed is cut into `n` slices of mass `1/n`, each rarefied to half
//! density by a linearly increasing velocity window sweeping through the
//! control interval `[2, 3]`, for a total horizon of `4 + 1/n`.

use serde::{Deserialize, Serialize};

use crate::control::{simulate_schedule, ControlSchedule};
use crate::error::{Error, Result};
use crate::field::{FieldSpec, VectorField};
use crate::flow::FlowParams;
use crate::measure::{DensityPiece, Measure};
use crate::region::Region;
use crate::scalar::Real;
use crate::wasserstein::w1_1d;

/// The scenario constants: block on `[0, 1]`, unit drift, control
/// interval `[2, 3]`, target of half density on `[4, 6]`.
pub const OMEGA_LO: f64 = 2.0;
pub const OMEGA_HI: f64 = 3.0;

/// One slice window: the control is active on `[t_start, t_start + 1/n)`
/// with window `[2 + s, 2 + 1/n + 2 s]` in local time `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct SliceWindow<F> {
    pub t_start: F,
    pub t_end: F,
    pub a0: F,
    pub b0: F,
}

/// Timing data of the n-slice rarefaction schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct RarefactionSchedule<F> {
    pub n: usize,
    pub w_m: F,
    pub windows: Vec<SliceWindow<F>>,
    pub total_time: F,
}

/// The time-frozen rarefaction field `psi(a, b)`: `(x - a)/(b - a)` on
/// `[a, b]`, zero outside (discontinuous at `b` before mollification).
pub fn psi_field<F: Real>(a: F, b: F) -> Result<VectorField<F>> {
    if !(b > a) {
        return Err(Error::DegenerateWindow {
            a: a.as_f64(),
            b: b.as_f64(),
        });
    }
    Ok(VectorField::new(
        FieldSpec::Psi {
            a,
            b,
            taper: F::zero(),
        },
        F::infinity(),
        F::one(),
    ))
}

/// Mollify a rarefaction field: linear taper from the right-limit value
/// to zero over `[b, b + w_m]`; unchanged on `[a, b]`.
pub fn mollify<F: Real>(field: &VectorField<F>, w_m: F) -> Result<VectorField<F>> {
    if !(w_m > F::zero()) {
        return Err(Error::InvalidParameter("taper width must be positive".into()));
    }
    match &field.spec {
        FieldSpec::Psi { a, b, .. } => {
            let lip = (F::one() / (*b - *a)).max(F::one() / w_m);
            Ok(VectorField::new(
                FieldSpec::Psi {
                    a: *a,
                    b: *b,
                    taper: w_m,
                },
                lip,
                F::one(),
            ))
        }
        FieldSpec::PsiWindow {
            t0,
            a0,
            a_rate,
            b0,
            b_rate,
            x_cap,
            ..
        } => {
            let lip = (F::one() / (*b0 - *a0)).max(F::one() / w_m);
            Ok(VectorField::new(
                FieldSpec::PsiWindow {
                    t0: *t0,
                    a0: *a0,
                    a_rate: *a_rate,
                    b0: *b0,
                    b_rate: *b_rate,
                    taper: w_m,
                    x_cap: *x_cap,
                },
                lip,
                F::one(),
            ))
        }
        _ => Err(Error::UnsupportedField(
            "mollification applies to rarefaction windows".into(),
        )),
    }
}

/// Build the n-slice schedule: slice `j` (rightmost first) is captured by
/// a window starting at `1 + (j+1)/n` when it exactly fills
/// `[2, 2 + 1/n]`; the window's left endpoint moves at the drift speed
/// and its right endpoint at twice that, doubling the slice width. Total
/// time `4 + 1/n`.
pub fn build_schedule<F: Real>(
    n: usize,
    w_m: F,
) -> Result<(RarefactionSchedule<F>, ControlSchedule<F>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one slice".into()));
    }
    let lo = F::of(OMEGA_LO);
    let hi = F::of(OMEGA_HI);
    let nf = F::of(n as f64);
    let slice_w = F::one() / nf;
    // window end: b = 2 + 1/n + 2/n must stay inside the control interval
    let b_end = lo + slice_w + F::of(2.0) * slice_w;
    if b_end > hi + F::of(1e-12) {
        return Err(Error::WindowOverflow {
            a: (lo + slice_w).as_f64(),
            b: b_end.as_f64(),
        });
    }
    let total_time = F::of(4.0) + slice_w;
    let omega = Region::interval(lo, hi);
    let mut windows = Vec::with_capacity(n);
    let mut control = ControlSchedule::new(omega);
    let first_start = F::one() + slice_w;
    control.push_phase("free", F::zero(), first_start, FieldSpec::Zero, F::zero());
    for j in 0..n {
        let t_start = first_start + slice_w * F::of(j as f64);
        let t_end = t_start + slice_w;
        let a0 = lo;
        let b0 = lo + slice_w;
        windows.push(SliceWindow {
            t_start,
            t_end,
            a0,
            b0,
        });
        let lip = (F::one() / slice_w).max(F::one() / w_m);
        control.push_phase(
            format!("window_{j}"),
            t_start,
            t_end,
            FieldSpec::PsiWindow {
                t0: t_start,
                a0,
                a_rate: F::one(),
                b0,
                b_rate: F::of(2.0),
                taper: w_m,
                x_cap: Some(hi),
            },
            lip,
        );
    }
    let last_end = first_start + slice_w * F::of(n as f64);
    control.push_phase("free", last_end, total_time, FieldSpec::Zero, F::zero());
    Ok((
        RarefactionSchedule {
            n,
            w_m,
            windows,
            total_time,
        },
        control,
    ))
}

/// Initial and target measures of the worked example.
pub fn example_measures<F: Real>(n_particles: usize) -> (Measure<F>, Measure<F>) {
    let mu0 = Measure::from_density_1d(
        vec![DensityPiece {
            lo: F::zero(),
            hi: F::one(),
            value: F::one(),
        }],
        n_particles,
    )
    .expect("valid uniform block");
    let mu1 = Measure::from_density_1d(
        vec![DensityPiece {
            lo: F::of(4.0),
            hi: F::of(6.0),
            value: F::of(0.5),
        }],
        n_particles,
    )
    .expect("valid half-density target");
    (mu0, mu1)
}

/// Result of a full example run.
#[derive(Debug)]
pub struct ExampleRun<F> {
    pub schedule: RarefactionSchedule<F>,
    pub control: ControlSchedule<F>,
    pub final_state: Measure<F>,
    pub w1_to_target: F,
    /// Density/control dump rows `(t, x, density, control_value)`.
    pub figure_rows: Vec<(F, F, F, F)>,
}

impl<F: Real> ExampleRun<F> {
    pub fn figure_csv(&self) -> String {
        let mut s = String::from("# schema: t,x,density,control_value\n");
        for (t, x, d, u) in &self.figure_rows {
            s.push_str(&format!("{t},{x},{d},{u}\n"));
        }
        s
    }
}

/// Simulate the n-slice schedule from the uniform block and report the
/// distance to the half-density target plus a density/control dump on a
/// uniform `(t, x)` grid.
pub fn run_example<F: Real>(
    n: usize,
    w_m: F,
    n_particles: usize,
    fp: FlowParams<F>,
) -> Result<ExampleRun<F>> {
    let (schedule, control) = build_schedule::<F>(n, w_m)?;
    let (mu0, mu1) = example_measures::<F>(n_particles);
    let v = VectorField::constant([F::one(), F::zero()]);
    let snap_step = F::of(0.05);
    let mut t_grid = Vec::new();
    let mut t = snap_step;
    while t < schedule.total_time - F::of(1e-9) {
        t_grid.push(t);
        t += snap_step;
    }
    t_grid.push(schedule.total_time);
    let states = simulate_schedule(&v.spec, &control, &mu0, &t_grid, fp)?;
    let final_state = states.last().unwrap().clone();
    let w1 = w1_1d(&final_state, &mu1)?;

    // density on a uniform x-grid per snapshot (histogram estimate)
    let x_lo = F::zero();
    let x_hi = F::of(7.0);
    let bins = 280usize;
    let bin_w = (x_hi - x_lo) / F::of(bins as f64);
    let mut rows = Vec::new();
    for (snap_idx, tk) in t_grid.iter().enumerate() {
        let state = &states[snap_idx];
        let mut hist = vec![F::zero(); bins];
        for (x, w) in state.positions.iter().zip(&state.weights) {
            let b = ((x[0] - x_lo) / bin_w).to_f64().unwrap_or(-1.0);
            if b >= 0.0 && (b as usize) < bins {
                hist[b as usize] += *w;
            }
        }
        for (bi, h) in hist.iter().enumerate() {
            let xc = x_lo + bin_w * (F::of(bi as f64) + F::of(0.5));
            let u = control.control_at([xc, F::zero()], *tk)[0];
            rows.push((*tk, xc, *h / bin_w, u));
        }
    }
    Ok(ExampleRun {
        schedule,
        control,
        final_state,
        w1_to_target: w1,
        figure_rows: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values_from_the_formula() {
        let f = psi_field(2.0f64, 3.0).unwrap();
        assert_eq!(f.eval([2.5, 0.0], 0.0)[0], 0.5);
        assert_eq!(f.eval([2.0, 0.0], 0.0)[0], 0.0);
        assert_eq!(f.eval([1.9, 0.0], 0.0)[0], 0.0);
    }

    #[test]
    fn degenerate_window_is_rejected() {
        assert!(matches!(
            psi_field(3.0f64, 3.0),
            Err(Error::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn mollified_field_tapers_to_zero() {
        let f = psi_field(2.0f64, 2.5).unwrap();
        let m = mollify(&f, 0.1).unwrap();
        assert_eq!(m.eval([2.6, 0.0], 0.0)[0], 0.0);
        assert!((m.eval([2.55, 0.0], 0.0)[0] - 0.5).abs() < 1e-12);
        // unchanged left of b
        assert_eq!(m.eval([2.25, 0.0], 0.0)[0], f.eval([2.25, 0.0], 0.0)[0]);
        assert!(m.lipschitz_est.is_finite());
    }

    #[test]
    fn schedule_breakpoints_for_three_slices() {
        let (sched, control) = build_schedule::<f64>(3, 0.02).unwrap();
        let expect = [4.0 / 3.0, 5.0 / 3.0, 2.0, 7.0 / 3.0];
        assert!((sched.windows[0].t_start - expect[0]).abs() < 1e-12);
        assert!((sched.windows[1].t_start - expect[1]).abs() < 1e-12);
        assert!((sched.windows[2].t_start - expect[2]).abs() < 1e-12);
        assert!((sched.windows[2].t_end - expect[3]).abs() < 1e-12);
        assert!((sched.total_time - 13.0 / 3.0).abs() < 1e-12);
        assert!((control.horizon() - 13.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_time_follows_slice_count() {
        let (s6, _) = build_schedule::<f64>(6, 0.02).unwrap();
        assert!((s6.total_time - (4.0 + 1.0 / 6.0)).abs() < 1e-12);
        let (s10, _) = build_schedule::<f64>(10, 0.02).unwrap();
        assert!((s10.total_time - 4.1).abs() < 1e-12);
    }

    #[test]
    fn window_overflow_for_tiny_slice_counts() {
        assert!(matches!(
            build_schedule::<f64>(1, 0.02),
            Err(Error::WindowOverflow { .. })
        ));
        assert!(matches!(
            build_schedule::<f64>(2, 0.02),
            Err(Error::WindowOverflow { .. })
        ));
    }

    #[test]
    fn control_stays_inside_the_interval() {
        let (_, control) = build_schedule::<f64>(3, 0.02).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(81);
        control.validate(2000, &mut rng).unwrap();
    }

    #[test]
    fn slice_masses_are_equal() {
        let n_particles = 9000;
        let (mu0, _) = example_measures::<f64>(n_particles);
        for j in 0..3 {
            let r = Region::interval(j as f64 / 3.0, (j + 1) as f64 / 3.0);
            let m = mu0.mass_in(&r);
            assert!(
                (m - 1.0 / 3.0).abs() <= 1.0 / n_particles as f64 + 1e-12,
                "slice {j} mass {m}"
            );
        }
    }
}
