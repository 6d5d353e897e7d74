//! Five-phase transfer synthesis: store the source mass in the control
//! region, gather it into an inner box, transport it onto a
//! backward-computed snapshot of the target, then run the target's
//! backward gathering and parking phases forward.
//!
//! The backward side parks the target's preimage with a partial slowdown
//! (conveyor) rather than a full freeze: a full freeze compresses the
//! whole exit schedule into an asymptotically thin shell, making the
//! forward replay exponentially sensitive to transport placement error,
//! while the conveyor keeps the replay Jacobian at 1/c.

use rayon::prelude::*;

use crate::control::cell_transport::{cell_transport_field, plan_from_grids};
use crate::control::confinement::EtaBarrier;
use crate::control::ControlSchedule;
use crate::error::{Error, Result, Side};
use crate::field::{ConveyorProfile, FieldSpec, VectorField};
use crate::flow::{flow_map, hitting_time, Direction, FlowParams};
use crate::grid::{inner_cell_margins, quantile_grid_decompose};
use crate::measure::Measure;
use crate::mintime::{condition2_extract, hitting_profile};
use crate::region::{BoxRegion, Region};
use crate::scalar::{Coords, Real};

#[derive(Debug, Clone)]
pub struct FullTransferParams<F> {
    /// Slack distributed over the three middle phases (delta/3 each).
    pub delta: F,
    /// Cell-transport grid size (capped by the particle budget).
    pub n: usize,
    /// Horizon for the geometric-condition checks.
    pub t_max: F,
    pub fp: FlowParams<F>,
}

impl<F: Real> Default for FullTransferParams<F> {
    fn default() -> Self {
        FullTransferParams {
            delta: F::of(0.6),
            n: 16,
            t_max: F::of(50.0),
            fp: FlowParams::default(),
        }
    }
}

#[derive(Debug)]
pub struct FullTransferOutcome<F> {
    pub schedule: ControlSchedule<F>,
    pub t0_star: F,
    pub t1_star: F,
    pub horizon: F,
    pub s_box: BoxRegion<F>,
    /// Backward-computed snapshot the transport phase aims at.
    pub phase3_target: Measure<F>,
    /// Source mass inside the control region at the end of storage.
    pub stored_mass: F,
    /// Final source cloud of the synthesis-time simulation.
    pub final_state: Measure<F>,
}

fn advance_cloud<F: Real>(
    positions: &mut [Coords<F>],
    field: &FieldSpec<F>,
    from: F,
    to: F,
    fp: FlowParams<F>,
) -> Result<()> {
    let moved: Vec<Result<Coords<F>>> = positions
        .par_iter()
        .map(|&x| flow_map(field, x, from, to, fp))
        .collect();
    for (slot, m) in positions.iter_mut().zip(moved) {
        *slot = m?;
    }
    Ok(())
}

fn fraction_inside<F: Real>(positions: &[Coords<F>], b: &BoxRegion<F>) -> F {
    if positions.is_empty() {
        return F::one();
    }
    let hits = positions.iter().filter(|&&x| b.contains(x)).count();
    F::of(hits as f64) / F::of(positions.len() as f64)
}

fn plus<F: Real>(a: &FieldSpec<F>, b: &FieldSpec<F>) -> FieldSpec<F> {
    FieldSpec::Sum {
        terms: vec![a.clone(), b.clone()],
    }
}

fn reversed<F: Real>(f: &FieldSpec<F>) -> FieldSpec<F> {
    FieldSpec::Scaled {
        factor: -F::one(),
        inner: Box::new(f.clone()),
    }
}

/// Size a conveyor for mass entering the control box near `entry_hint`:
/// the interior speed factor is budgeted so that the deepest-dwelling
/// particle (plus any un-conveyed drift) stays within the inner box.
fn design_conveyor<F: Real>(
    omega_box: &BoxRegion<F>,
    s_box: &BoxRegion<F>,
    entry_hint: Coords<F>,
    dwell_max: F,
    extra_drift: F,
    sup_v: F,
) -> Result<ConveyorProfile<F>> {
    let dim = omega_box.dim;
    let mut axis = 0usize;
    let mut enter_hi = true;
    let mut best = F::infinity();
    for ax in 0..dim {
        let d_lo = (entry_hint[ax] - omega_box.lo[ax]).abs();
        let d_hi = (entry_hint[ax] - omega_box.hi[ax]).abs();
        if d_lo < best {
            best = d_lo;
            axis = ax;
            enter_hi = false;
        }
        if d_hi < best {
            best = d_hi;
            axis = ax;
            enter_hi = true;
        }
    }
    let width = omega_box.width(axis);
    let ramp = width * F::of(0.02);
    let d_avail = if enter_hi {
        omega_box.hi[axis] - s_box.lo[axis]
    } else {
        s_box.hi[axis] - omega_box.lo[axis]
    };
    let budget = d_avail - extra_drift * sup_v - ramp * F::of(2.0);
    if !(budget > F::zero()) {
        return Err(Error::PlanDegenerate(
            "no parking depth available for the conveyor".into(),
        ));
    }
    let c = (F::of(0.9) * budget / (dwell_max * sup_v.max(F::of(1e-9))))
        .min(F::of(0.85))
        .max(F::of(0.1));
    Ok(ConveyorProfile {
        omega: omega_box.clone(),
        axis,
        c,
        entry_ramp: ramp,
        exit_ramp: ramp,
    })
}

/// Synthesize the five-phase transfer steering `mu0` onto `mu1` under the
/// ambient field `v` with controls supported in `omega`.
pub fn synthesize_full_transfer<F: Real>(
    mu0: &Measure<F>,
    mu1: &Measure<F>,
    v: &VectorField<F>,
    omega: &Region<F>,
    params: &FullTransferParams<F>,
) -> Result<FullTransferOutcome<F>> {
    let fp = params.fp;
    let dim = mu0.dim;
    if mu1.dim != dim {
        return Err(Error::UnsupportedDimension {
            required: dim,
            actual: mu1.dim,
        });
    }
    let omega_box = omega
        .as_single_box()
        .ok_or_else(|| Error::InvalidParameter("transfer needs a box control region".into()))?
        .clone();
    // geometric condition and storage horizons (fails with
    // Condition1Violation when a particle never reaches omega)
    let (t0_star, t1_star, _omega0) =
        condition2_extract(mu0, mu1, v, omega, params.t_max, fp)?;
    let profile = hitting_profile(mu0, mu1, v, omega, params.t_max, fp)?;
    let third = params.delta / F::of(3.0);
    let t1 = t0_star;
    let t2 = t1 + third;
    let t3 = t2 + third;
    let t4 = t3 + third;
    let horizon = t4 + t1_star;
    let s_box = omega_box.shrink(F::of(0.02));

    let mut schedule = ControlSchedule::new(omega.clone());
    let mut cloud = mu0.positions.clone();

    // phases 1-2: park the source mass inside S. When the source must
    // still reach omega this uses a conveyor (partial slowdown), keeping
    // the parked cloud wide; a full freeze would pile all of it onto the
    // holding boundary and leave the transport phase a point-like source.
    let (u1, u2): (VectorField<F>, VectorField<F>) = if t1 > F::zero() {
        let t0_min = profile.t0.iter().copied().fold(F::infinity(), F::min);
        let probe = mu0.positions[0];
        let hit_pos = flow_map(v, probe, F::zero(), profile.t0[0], fp)?;
        let conveyor = design_conveyor(
            &omega_box,
            &s_box,
            hit_pos,
            (t2 - t0_min).max(F::of(1e-9)),
            F::zero(),
            v.sup_bound,
        )?;
        let lip = v.lipschitz_est
            + v.sup_bound * F::of(1.875) * (F::one() - conveyor.c) / conveyor.entry_ramp;
        let u = VectorField::new(
            FieldSpec::Conveyor {
                profile: conveyor,
                ambient: Box::new(v.spec.clone()),
            },
            lip,
            v.sup_bound,
        );
        (u.clone(), u)
    } else {
        // source already inside: drift if S retains it, otherwise gather
        let drift_ok = {
            let mut probe = cloud.clone();
            advance_cloud(&mut probe, &v.spec, t1, t2, fp)?;
            fraction_inside(&probe, &s_box) >= F::of(0.995)
        };
        if drift_ok {
            (VectorField::zero(), VectorField::zero())
        } else {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9001);
            let barrier = EtaBarrier::new(omega, s_box.clone(), 4000, &mut rng)?;
            let k_fwd = barrier.min_admissible_k(v, 512, &mut rng);
            let kappa = barrier.kappa0.max(F::of(0.05));
            let mut wmax = F::zero();
            for ax in 0..dim {
                wmax = wmax.max(omega_box.width(ax));
            }
            let k_speed = (F::of(3.0) * wmax / params.delta + v.sup_bound) / kappa;
            let k_c = (k_fwd * F::of(1.2)).max(k_speed);
            let conf =
                crate::control::confinement::confinement_field(&barrier, v, k_c, &mut rng)?;
            (VectorField::zero(), conf)
        }
    };
    advance_cloud(&mut cloud, &plus(&v.spec, &u1.spec), F::zero(), t1, fp)?;
    schedule.push_phase("storage", F::zero(), t1, u1.spec.clone(), u1.lipschitz_est);
    let stored_mass = fraction_inside(&cloud, &omega_box) * mu0.total_mass();
    advance_cloud(&mut cloud, &plus(&v.spec, &u2.spec), t1, t2, fp)?;
    if fraction_inside(&cloud, &s_box) < F::of(0.98) {
        return Err(Error::PlanDegenerate(format!(
            "gathering left only {} of the source mass in S",
            fraction_inside(&cloud, &s_box)
        )));
    }

    // backward side: park the target's preimage on a conveyor
    let (u5, u4, phase3_target) = backward_side(
        mu1, v, &omega_box, &s_box, &profile.t1, t1_star, third, fp,
    )?;

    // phase 3: moving-cell transport from the gathered cloud onto the
    // backward snapshot
    let w_src = F::one() / F::of(cloud.len() as f64);
    let source_cloud = Measure::from_particles(dim, cloud.clone(), vec![w_src; cloud.len()]);
    let n_cells = params
        .n
        .min((source_cloud.len() as f64 / 12.0).powf(1.0 / (dim as f64 + 1.0)).floor() as usize)
        .max(3);
    let sg = inner_cell_margins(&source_cloud, &quantile_grid_decompose(&source_cloud, n_cells)?)?;
    let tg = inner_cell_margins(
        &phase3_target,
        &quantile_grid_decompose(&phase3_target, n_cells)?,
    )?;
    let mut plan = plan_from_grids(dim, &sg, &tg, t2, third)?;
    {
        let clearance = plan.boundary_clearance(&omega_box);
        if !(clearance > F::zero()) {
            return Err(Error::PlanDegenerate(
                "transport cells touch the control boundary".into(),
            ));
        }
        let floor = (F::of(8.0) * fp.dt * plan.sup_speed().max(v.sup_bound))
            .min(clearance * F::of(0.8));
        plan.raise_band_floor(floor);
    }
    // the blended correction must stay inside omega: the dilated sweep of
    // every moving box has to clear the boundary
    {
        let band = plan.band_src.max(plan.band_dst);
        for c in &plan.cells {
            for kx in 0..dim {
                let lo = c.src_lo[kx].min(c.dst_lo[kx]) - band;
                let hi = c.src_hi[kx].max(c.dst_hi[kx]) + band;
                if lo <= omega_box.lo[kx] || hi >= omega_box.hi[kx] {
                    return Err(Error::PlanDegenerate(
                        "transport cells touch the control boundary".into(),
                    ));
                }
            }
        }
    }
    let transport = cell_transport_field(plan.clone());
    let u3 = FieldSpec::CellControl {
        plan,
        ambient: Box::new(v.spec.clone()),
    };
    let lip3 = transport.lipschitz_est + v.lipschitz_est;

    schedule.push_phase("confinement", t1, t2, u2.spec.clone(), u2.lipschitz_est);
    schedule.push_phase("cell_transport", t2, t3, u3, lip3);
    schedule.push_phase(
        "reverse_confinement",
        t3,
        t4,
        u4.spec.clone(),
        u4.lipschitz_est,
    );
    schedule.push_phase("release", t4, horizon, u5.spec.clone(), u5.lipschitz_est);

    // canonical final state: replay the assembled schedule end to end so
    // callers and the CLI observe the exact same trajectory
    let final_state = crate::control::simulate_schedule(&v.spec, &schedule, mu0, &[horizon], fp)?
        .pop()
        .unwrap();

    Ok(FullTransferOutcome {
        schedule,
        t0_star,
        t1_star,
        horizon,
        s_box,
        phase3_target,
        stored_mass,
        final_state,
    })
}

/// Build the release (phase 5) and reverse-gathering (phase 4) controls by
/// integrating the target backward, and return the backward snapshot the
/// transport phase must reach.
#[allow(clippy::too_many_arguments)]
fn backward_side<F: Real>(
    mu1: &Measure<F>,
    v: &VectorField<F>,
    omega_box: &BoxRegion<F>,
    s_box: &BoxRegion<F>,
    t1_hits: &[F],
    t1_star: F,
    third: F,
    fp: FlowParams<F>,
) -> Result<(VectorField<F>, VectorField<F>, Measure<F>)> {
    let dim = mu1.dim;
    if t1_star == F::zero() {
        // target already inside the control region: nothing to park
        let mut back = mu1.positions.clone();
        let back_v = reversed(&v.spec);
        advance_cloud(&mut back, &back_v, F::zero(), third, fp)?;
        let snapshot = Measure::from_particles(dim, back.clone(), mu1.weights.clone());
        if fraction_inside(&back, s_box) >= F::of(0.995) {
            return Ok((VectorField::zero(), VectorField::zero(), snapshot));
        }
        return Err(Error::PlanDegenerate(
            "target drifts out of the inner box during the transport phase".into(),
        ));
    }
    // entry face: where the backward flow first crosses the boundary
    let omega = Region::from_box(omega_box.clone());
    let probe = mu1.positions[0];
    let t_hit = hitting_time(v, probe, &omega, t1_star * F::of(2.0), Direction::Backward, fp)?
        .ok_or(Error::Condition1Violation {
            point: [probe[0].as_f64(), probe[1].as_f64()],
            side: Side::Target,
            horizon: (t1_star * F::of(2.0)).as_f64(),
        })?;
    let hit_pos = flow_map(v, probe, F::zero(), -t_hit, fp)?;
    // the deepest-parked particle is the earliest backward entrant; it
    // drifts a further third under the reversed ambient field
    let t_min = t1_hits.iter().copied().fold(F::infinity(), F::min);
    let dwell = (t1_star - t_min).max(F::of(1e-9));
    let profile = design_conveyor(omega_box, s_box, hit_pos, dwell, third, v.sup_bound)?;
    let c = profile.c;
    let ramp = profile.entry_ramp;
    let width = omega_box.width(profile.axis);
    let u5_spec = FieldSpec::Conveyor {
        profile,
        ambient: Box::new(v.spec.clone()),
    };
    let lip5 = v.lipschitz_est + v.sup_bound * F::of(1.875) * (F::one() - c) / ramp;
    let u5 = VectorField::new(u5_spec, lip5, v.sup_bound);

    // backward park: mu1 under the reversed controlled field
    let mut back = mu1.positions.clone();
    let g5 = reversed(&plus(&v.spec, &u5.spec));
    advance_cloud(&mut back, &g5, F::zero(), t1_star, fp)?;
    if fraction_inside(&back, omega_box) < F::of(0.995) {
        return Err(Error::PlanDegenerate(
            "conveyor failed to park the target preimage inside omega".into(),
        ));
    }

    // phase 4 (backward): plain reversed drift if it stays in S, else
    // gather with a barrier driven by the reversed field
    let mut drift = back.clone();
    advance_cloud(&mut drift, &reversed(&v.spec), F::zero(), third, fp)?;
    if fraction_inside(&drift, s_box) >= F::of(0.99) {
        let snapshot = Measure::from_particles(dim, drift, mu1.weights.clone());
        return Ok((u5, VectorField::zero(), snapshot));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9002);
    let barrier = EtaBarrier::new(&omega, s_box.clone(), 4000, &mut rng)?;
    let v_rev = VectorField::new(reversed(&v.spec), v.lipschitz_est, v.sup_bound);
    let k_needed = barrier.min_admissible_k(&v_rev, 512, &mut rng);
    let kappa = barrier.kappa0.max(F::of(0.05));
    let k_speed = (F::of(3.0) * width / (third * F::of(3.0)) + v.sup_bound) / kappa;
    let k_c = (k_needed * F::of(1.2)).max(k_speed);
    let conf = crate::control::confinement::confinement_field(&barrier, &v_rev, k_c, &mut rng)?;
    // forward control is the negated barrier push
    let u4 = VectorField::new(reversed(&conf.spec), conf.lipschitz_est, conf.sup_bound);
    let g4 = plus(&reversed(&v.spec), &conf.spec);
    let mut gathered = back;
    advance_cloud(&mut gathered, &g4, F::zero(), third, fp)?;
    if fraction_inside(&gathered, s_box) < F::of(0.98) {
        return Err(Error::PlanDegenerate(
            "backward gathering failed to concentrate the target preimage in S".into(),
        ));
    }
    let snapshot = Measure::from_particles(dim, gathered, mu1.weights.clone());
    Ok((u5, u4, snapshot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::simulate_schedule;
    use crate::wasserstein::w1_1d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_case_reduces_to_transport() {
        // both supports already inside S and no ambient drift: storage,
        // gathering and release degenerate to the transport phase
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mu0 = Measure::uniform_box(1, [2.3, 0.0], [2.5, 0.0], 4000, 1.0, &mut rng);
        let mu1 = Measure::uniform_box(1, [2.5, 0.0], [2.7, 0.0], 4000, 1.0, &mut rng);
        let v = VectorField::zero();
        let omega = Region::interval(2.0, 3.0);
        let params = FullTransferParams {
            delta: 0.6,
            n: 10,
            t_max: 5.0,
            fp: FlowParams::new(1e-3),
        };
        let out = synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params).unwrap();
        assert_eq!(out.t0_star, 0.0);
        assert_eq!(out.t1_star, 0.0);
        let labels: Vec<&str> = out.schedule.phases.iter().map(|p| p.label.as_str()).collect();
        // nontrivial work only in the transport phase
        assert!(labels.contains(&"cell_transport"));
        for p in &out.schedule.phases {
            if p.label != "cell_transport" {
                assert!(matches!(p.control, FieldSpec::Zero));
            }
        }
        let final_w1 = w1_1d(&out.final_state, &mu1).unwrap();
        assert!(final_w1 < 0.05, "terminal W1 = {final_w1}");
    }

    #[test]
    fn corridor_transfer_reaches_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let n = 6000;
        let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng);
        let mu1 = Measure::uniform_box(1, [4.0, 0.0], [5.0, 0.0], n, 1.0, &mut rng);
        let v = VectorField::constant([1.0, 0.0]);
        let omega = Region::interval(2.0, 3.0);
        let params = FullTransferParams::<f64> {
            delta: 0.6,
            n: 16,
            t_max: 20.0,
            fp: FlowParams::new(1e-3),
        };
        let out = synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params).unwrap();
        assert!(out.stored_mass >= 0.99, "stored {}", out.stored_mass);
        let w1 = w1_1d(&out.final_state, &mu1).unwrap();
        assert!(w1 <= 0.1, "terminal W1 = {w1}");
        // replaying the schedule is deterministic and bit-identical
        let replay = simulate_schedule(
            &v.spec,
            &out.schedule,
            &mu0,
            &[out.horizon],
            params.fp,
        )
        .unwrap();
        assert_eq!(replay[0].positions, out.final_state.positions);
    }

    #[test]
    fn condition_violation_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], 100, 1.0, &mut rng);
        let mu1 = Measure::uniform_box(1, [4.0, 0.0], [5.0, 0.0], 100, 1.0, &mut rng);
        let v = VectorField::constant([-0.5, 0.0]);
        let omega = Region::interval(2.0, 3.0);
        let params = FullTransferParams {
            t_max: 4.0,
            ..FullTransferParams::default()
        };
        assert!(matches!(
            synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params),
            Err(Error::Condition1Violation { .. })
        ));
    }
}
