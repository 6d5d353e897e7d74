// Scratch probe for empirical values used to pin test tolerances.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transport_control::control::full_transfer::{synthesize_full_transfer, FullTransferParams};
use transport_control::field::VectorField;
use transport_control::flow::FlowParams;
use transport_control::measure::Measure;
use transport_control::mintime::{estimate_t0, flux_feasible};
use transport_control::rarefaction::{example_measures, run_example};
use transport_control::region::Region;
use transport_control::wasserstein::w1_1d;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let fp = FlowParams::new(1e-3);
    match which.as_str() {
        "rarefaction" => {
            for (n, w_m) in [(3usize, 0.02), (3, 0.05), (3, 0.1), (6, 0.02)] {
                let t = std::time::Instant::now();
                let run = run_example::<f64>(n, w_m, 10_000, fp).unwrap();
                println!(
                    "n={n} w_m={w_m}: W1 = {:.5}  ({:.1?})",
                    run.w1_to_target,
                    t.elapsed()
                );
            }
            // uncontrolled at t = 4
            let (mu0, mu1) = example_measures::<f64>(10_000);
            let v = VectorField::constant([1.0, 0.0]);
            let shifted = transport_control::flow::solve_continuity(&v, &mu0, &[4.0], fp).unwrap();
            println!("uncontrolled W1(mu(4), mu1) = {:.6}", w1_1d(&shifted[0], &mu1).unwrap());
        }
        "mintime" => {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], 10_000, 1.0, &mut rng);
            let mu1 = Measure::uniform_box(1, [4.0, 0.0], [6.0, 0.0], 10_000, 1.0, &mut rng);
            let v = VectorField::constant([1.0, 0.0]);
            let omega = Region::interval(2.0, 3.0);
            let t = std::time::Instant::now();
            for t_star in [3.0, 3.9, 3.95, 3.96, 3.98, 4.0, 10.0] {
                let (ok, ledger) =
                    flux_feasible(t_star, &mu0, &mu1, &v, &omega, 64, 0.02, fp).unwrap();
                println!(
                    "T*={t_star}: feasible={ok} max_violation={:.5}",
                    ledger.max_violation()
                );
            }
            println!("feasibility probes took {:.1?}", t.elapsed());
            let t = std::time::Instant::now();
            let (t0, _) = estimate_t0(&mu0, &mu1, &v, &omega, 64, 0.02, 12.0, fp).unwrap();
            println!("estimate_t0 = {t0:.4}  ({:.1?})", t.elapsed());
        }
        "transfer" => {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n = 20_000;
            let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng);
            let mu1 = Measure::uniform_box(1, [4.0, 0.0], [5.0, 0.0], n, 1.0, &mut rng);
            let v = VectorField::constant([1.0, 0.0]);
            let omega = Region::interval(2.0, 3.0);
            for nc in [8usize, 16, 32] {
                let params = FullTransferParams::<f64> {
                    delta: 0.6,
                    n: nc,
                    t_max: 20.0,
                    fp,
                };
                let t = std::time::Instant::now();
                match synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params) {
                    Ok(out) => {
                        let w1 = w1_1d(&out.final_state, &mu1).unwrap();
                        println!(
                            "n={nc}: W1 = {w1:.4} stored={:.4} T={:.3} ({:.1?})",
                            out.stored_mass,
                            out.horizon,
                            t.elapsed()
                        );
                    }
                    Err(e) => println!("n={nc}: ERROR {e}"),
                }
            }
        }
        "bucket" => {
            use transport_control::mintime::{synthesize_bucket_control, BucketControlParams};
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n = 10_000;
            let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng);
            let mu1 = Measure::uniform_box(1, [4.0, 0.0], [6.0, 0.0], n, 1.0, &mut rng);
            let v = VectorField::constant([1.0, 0.0]);
            let omega = Region::interval(2.0, 3.0);
            let params = BucketControlParams {
                slack: 1.0 / 3.0,
                n_buckets: 3,
                k: 64,
                eps: 0.02,
                n_cells: 16,
                fp,
            };
            let t = std::time::Instant::now();
            match synthesize_bucket_control(&mu0, &mu1, &v, &omega, 4.0, &params) {
                Ok(out) => {
                    println!("groups:");
                    for g in &out.groups {
                        println!(
                            "  bucket {} place at {:.3} window [{:.3}] count {} cells {}",
                            g.bucket, g.placement_time, g.window_start, g.count, g.n_cells
                        );
                    }
                    let fin = transport_control::control::simulate_schedule(
                        &v.spec,
                        &out.schedule,
                        &mu0,
                        &[out.horizon],
                        fp,
                    )
                    .unwrap();
                    let w1 = w1_1d(&fin[0], &mu1).unwrap();
                    println!("bucket schedule: final W1 = {w1:.4} T = {:.4} ({:.1?})", out.horizon, t.elapsed());
                    let leftover = fin[0].mass_in(&omega);
                    println!("mass still in omega at T: {leftover:.4}");
                    let times: Vec<f64> = out.groups.iter().map(|g| g.placement_time).collect();
                    let snaps = transport_control::control::simulate_schedule(
                        &v.spec,
                        &out.schedule,
                        &mu0,
                        &times,
                        fp,
                    )
                    .unwrap();
                    for (g, snap) in out.groups.iter().zip(&snaps) {
                        let m_corridor = snap.mass_in(&Region::interval(2.3, 3.0));
                        let m_strip = snap.mass_in(&Region::interval(2.0, 2.1));
                        let m_right = snap.mass_in(&Region::interval(3.0, 20.0));
                        println!(
                            "at t={:.3}: corridor {:.3} strip {:.3} right-of-omega {:.3}",
                            g.placement_time, m_corridor, m_strip, m_right
                        );
                    }
                    let mut xs: Vec<f64> = fin[0].positions.iter().map(|p| p[0]).collect();
                    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    for q in [0.01, 0.05, 0.1, 0.17, 0.25, 0.5, 0.75, 0.83, 0.9, 0.95, 0.99] {
                        let i = ((xs.len() as f64 * q) as usize).min(xs.len() - 1);
                        let want = 4.0 + 2.0 * q;
                        println!("  q={q:.2}: {:.4} vs {:.4} diff {:+.4}", xs[i], want, xs[i] - want);
                    }
                }
                Err(e) => println!("bucket synthesis failed: {e}"),
            }
        }
        "abandon" => {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n = 20_000;
            let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng);
            let mu1 = Measure::uniform_box(1, [4.0, 0.0], [5.0, 0.0], n, 1.0, &mut rng);
            let v = VectorField::constant([1.0, 0.0]);
            let omega = Region::interval(2.0, 3.0);
            for nc in [16usize, 32, 48] {
                let params = FullTransferParams::<f64> {
                    delta: 0.6,
                    n: nc,
                    t_max: 20.0,
                    fp,
                };
                let out = synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params).unwrap();
                let t3 = out.t0_star + 0.4;
                let snaps = transport_control::control::simulate_schedule(
                    &v.spec,
                    &out.schedule,
                    &mu0,
                    &[out.t0_star + 0.2, t3, out.horizon],
                    fp,
                )
                .unwrap();
                let a2 = &snaps[0];
                let (alo, ahi) = a2.support_bbox();
                // mass still within the (dilated) original cluster zone at t3
                let stuck = snaps[1]
                    .positions
                    .iter()
                    .filter(|p| p[0] >= alo[0] - 0.005 && p[0] <= ahi[0] + 0.005)
                    .count() as f64
                    / n as f64;
                let w1p = w1_1d(&snaps[1], &out.phase3_target).unwrap();
                let w1f = w1_1d(&snaps[2], &mu1).unwrap();
                println!(
                    "n={nc}: placement W1={w1p:.4} final W1={w1f:.4} stuck={stuck:.4} cluster=[{:.4},{:.4}]",
                    alo[0], ahi[0]
                );
            }
        }
        "diagnose" => {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n = 10_000;
            let mu0 = Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng);
            let mu1 = Measure::uniform_box(1, [4.0, 0.0], [5.0, 0.0], n, 1.0, &mut rng);
            let v = VectorField::constant([1.0, 0.0]);
            let omega = Region::interval(2.0, 3.0);
            let params = FullTransferParams::<f64> {
                delta: 0.6,
                n: 16,
                t_max: 20.0,
                fp,
            };
            let out = synthesize_full_transfer(&mu0, &mu1, &v, &omega, &params).unwrap();
            let t1 = out.t0_star;
            let t2 = t1 + 0.2;
            let t3 = t2 + 0.2;
            let t4 = t3 + 0.2;
            let snaps = transport_control::control::simulate_schedule(
                &v.spec,
                &out.schedule,
                &mu0,
                &[t1, t2, t3, t4, out.horizon],
                fp,
            )
            .unwrap();
            let tgt = &out.phase3_target;
            let (plo, phi) = tgt.support_bbox();
            println!("parked target spread [{:.4}, {:.4}]", plo[0], phi[0]);
            let (alo, ahi) = snaps[1].support_bbox();
            println!("A2 cloud [{:.4}, {:.4}]", alo[0], ahi[0]);
            println!("phase3 placement W1 = {:.5}", w1_1d(&snaps[2], tgt).unwrap());
            println!("final W1 = {:.5}", w1_1d(&snaps[4], &mu1).unwrap());
            // perfect placement: run phases 4..5 from the exact snapshot
            let mut tail_sched = transport_control::control::ControlSchedule::new(
                Region::interval(2.0, 3.0),
            );
            for p in &out.schedule.phases {
                if p.t_start >= t3 - 1e-9 {
                    tail_sched.push_phase(
                        p.label.clone(),
                        p.t_start,
                        p.t_end,
                        p.control.clone(),
                        p.lipschitz_est,
                    );
                }
            }
            // shift: simulate from t3 by reindexing time as t' = t - t3
            let shifted: Vec<_> = tail_sched
                .phases
                .iter()
                .map(|p| (p.t_start, p.t_end))
                .collect();
            println!("tail phases {:?}", shifted);
            let field = transport_control::control::ScheduledField {
                ambient: &v.spec,
                schedule: &tail_sched,
            };
            let perfect: Vec<_> = tgt
                .positions
                .iter()
                .map(|&x| {
                    transport_control::flow::flow_map(&field, x, t3, out.horizon, fp).unwrap()
                })
                .collect();
            let perfect_m = Measure::from_particles(1, perfect, tgt.weights.clone());
            println!(
                "perfect-placement final W1 = {:.5}",
                w1_1d(&perfect_m, &mu1).unwrap()
            );
            // quantile profile of the placement mismatch
            let mut placed: Vec<f64> = snaps[2].positions.iter().map(|p| p[0]).collect();
            let mut want: Vec<f64> = tgt.positions.iter().map(|p| p[0]).collect();
            placed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("placement quantile mismatch (q, placed, target, diff):");
            for q in [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99] {
                let i = ((placed.len() as f64 * q) as usize).min(placed.len() - 1);
                println!(
                    "  q={q:.2}: {:.4} vs {:.4} diff {:+.4}",
                    placed[i],
                    want[i],
                    placed[i] - want[i]
                );
            }
            let mut fin: Vec<f64> = snaps[4].positions.iter().map(|p| p[0]).collect();
            fin.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("final quantiles vs target:");
            for q in [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99] {
                let i = ((fin.len() as f64 * q) as usize).min(fin.len() - 1);
                let t_q = 4.0 + q;
                println!("  q={q:.2}: {:.4} vs {:.4} diff {:+.4}", fin[i], t_q, fin[i] - t_q);
            }
        }
        other => eprintln!("unknown probe '{other}'"),
    }
}
