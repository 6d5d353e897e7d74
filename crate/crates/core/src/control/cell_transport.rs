//! Moving-cell transport: map the inner boxes of a source quantile grid
//! onto those of a target grid with a time-dependent affine velocity.
//!
//! Each inner cell travels as a box whose corners interpolate linearly
//! between source and target corners. On a moving box the velocity is
//! affine per axis; outside the boxes it decays smoothly to zero within a
//! band of half the smallest grid margin, so neighbouring boxes never
//! interact and the field keeps a finite Lipschitz bound. Mass caught in
//! the margins is deliberately left uncontrolled; its Wasserstein cost is
//! bounded by the grid residual.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::field::{FieldSpec, VectorField};
use crate::grid::{inner_cell_margins, quantile_grid_decompose, GridDecomposition};
use crate::measure::Measure;
use crate::region::Region;
use crate::scalar::{smoothstep5, Coords, Real};

/// One moving cell: inner-box corners at the start and end of transport.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct PlanCell<F> {
    pub src_lo: Coords<F>,
    pub src_hi: Coords<F>,
    pub dst_lo: Coords<F>,
    pub dst_hi: Coords<F>,
}

impl<F: Real> PlanCell<F> {
    fn lo_at(&self, s: F, k: usize) -> F {
        self.src_lo[k] + (self.dst_lo[k] - self.src_lo[k]) * s
    }

    fn hi_at(&self, s: F, k: usize) -> F {
        self.src_hi[k] + (self.dst_hi[k] - self.src_hi[k]) * s
    }

    /// Exact flow of the affine cell velocity: the image at phase `s` of a
    /// point given by its coordinates relative to the source box.
    pub fn closed_form_flow(&self, x0: Coords<F>, s: F, dim: usize) -> Coords<F> {
        let mut x = [F::zero(); 2];
        for k in 0..dim {
            let w = self.src_hi[k] - self.src_lo[k];
            let rel = (x0[k] - self.src_lo[k]) / w;
            x[k] = self.lo_at(s, k) * (F::one() - rel) + self.hi_at(s, k) * rel;
        }
        x
    }
}

#[derive(Debug, Clone)]
struct BucketIndex {
    lo: [f64; 2],
    inv_step: [f64; 2],
    counts: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

/// Time-rescaled moving-cell transport plan on `[t_start, t_start + duration]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct CellTransportPlan<F> {
    pub dim: usize,
    pub t_start: F,
    pub duration: F,
    pub cells: Vec<PlanCell<F>>,
    /// Blend band width at the start: half the smallest source margin.
    pub band_src: F,
    /// Blend band width at the end: half the smallest target margin.
    pub band_dst: F,
    #[serde(skip)]
    index: OnceLock<BucketIndex>,
}

impl<F: Real> CellTransportPlan<F> {
    pub fn new(
        dim: usize,
        t_start: F,
        duration: F,
        cells: Vec<PlanCell<F>>,
        band_src: F,
        band_dst: F,
    ) -> Result<Self> {
        if duration <= F::zero() {
            return Err(Error::PlanDegenerate("non-positive duration".into()));
        }
        for band in [band_src, band_dst] {
            if !(band > F::zero()) || !band.is_finite() {
                return Err(Error::PlanDegenerate(format!(
                    "blend band must be positive, got {band}"
                )));
            }
        }
        for (idx, c) in cells.iter().enumerate() {
            for k in 0..dim {
                if !(c.src_hi[k] > c.src_lo[k]) || !(c.dst_hi[k] > c.dst_lo[k]) {
                    return Err(Error::PlanDegenerate(format!(
                        "cell {idx} axis {k} has a non-positive width"
                    )));
                }
            }
        }
        Ok(CellTransportPlan {
            dim,
            t_start,
            duration,
            cells,
            band_src,
            band_dst,
            index: OnceLock::new(),
        })
    }

    /// Blend band width at phase `s`: tracks the grid margins, which
    /// interpolate linearly with the moving boxes, so neighbouring blend
    /// zones stay disjoint at every time.
    fn band_at(&self, s: F) -> F {
        self.band_src + (self.band_dst - self.band_src) * s
    }

    /// Widen both bands to at least `floor`. Wide bands may overlap
    /// between neighbouring boxes (the nearest-center rule resolves the
    /// tie); callers use this to keep the band resolvable at the
    /// integration step so inter-cell mass is dragged rather than
    /// abandoned.
    pub fn raise_band_floor(&mut self, floor: F) {
        if floor > self.band_src || floor > self.band_dst {
            self.band_src = self.band_src.max(floor);
            self.band_dst = self.band_dst.max(floor);
            self.index = OnceLock::new();
        }
    }

    fn build_index(&self) -> BucketIndex {
        let band = self.band_src.max(self.band_dst).as_f64();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.cells {
            for k in 0..self.dim {
                lo[k] = lo[k]
                    .min(c.src_lo[k].as_f64())
                    .min(c.dst_lo[k].as_f64());
                hi[k] = hi[k]
                    .max(c.src_hi[k].as_f64())
                    .max(c.dst_hi[k].as_f64());
            }
        }
        for k in 0..2 {
            if !lo[k].is_finite() {
                lo[k] = 0.0;
                hi[k] = 1.0;
            }
            lo[k] -= band;
            hi[k] += band;
        }
        let per_axis = ((self.cells.len() as f64).sqrt().ceil() as usize * 4).max(8);
        let mut counts = [1usize; 2];
        let mut inv_step = [0.0f64; 2];
        for k in 0..self.dim {
            counts[k] = per_axis;
            inv_step[k] = per_axis as f64 / (hi[k] - lo[k]).max(1e-300);
        }
        let mut buckets = vec![Vec::new(); counts[0] * counts[1]];
        let clampi = |v: f64, n: usize| -> usize {
            if v < 0.0 {
                0
            } else if v as usize >= n {
                n - 1
            } else {
                v as usize
            }
        };
        for (ci, c) in self.cells.iter().enumerate() {
            // swept hull of the moving box, padded by the band
            let mut blo = [0usize; 2];
            let mut bhi = [0usize; 2];
            for k in 0..self.dim {
                let sweep_lo =
                    c.src_lo[k].as_f64().min(c.dst_lo[k].as_f64()) - band;
                let sweep_hi =
                    c.src_hi[k].as_f64().max(c.dst_hi[k].as_f64()) + band;
                blo[k] = clampi((sweep_lo - lo[k]) * inv_step[k], counts[k]);
                bhi[k] = clampi((sweep_hi - lo[k]) * inv_step[k], counts[k]);
            }
            for bx in blo[0]..=bhi[0] {
                for by in blo[1]..=bhi[1] {
                    buckets[bx * counts[1] + by].push(ci as u32);
                }
            }
        }
        BucketIndex {
            lo,
            inv_step,
            counts,
            buckets,
        }
    }

    fn candidates(&self, x: Coords<F>) -> &[u32] {
        let idx = self.index.get_or_init(|| self.build_index());
        let mut b = [0usize; 2];
        for k in 0..self.dim {
            let v = (x[k].as_f64() - idx.lo[k]) * idx.inv_step[k];
            if v < 0.0 || !v.is_finite() {
                return &[];
            }
            let vi = v as usize;
            if vi >= idx.counts[k] {
                return &[];
            }
            b[k] = vi;
        }
        &idx.buckets[b[0] * idx.counts[1] + b[1]]
    }

    /// Normalized phase in [0, 1] for a physical time.
    pub fn phase(&self, t: F) -> F {
        ((t - self.t_start) / self.duration).max(F::zero()).min(F::one())
    }

    /// Affine velocity of cell `ci` at phase `s` (physical units).
    pub fn cell_velocity_of(&self, ci: usize, x: Coords<F>, s: F) -> Coords<F> {
        self.cell_velocity(&self.cells[ci], x, s)
    }

    /// Affine in-cell velocity at phase `s` (physical units).
    fn cell_velocity(&self, cell: &PlanCell<F>, x: Coords<F>, s: F) -> Coords<F> {
        let mut v = [F::zero(); 2];
        for k in 0..self.dim {
            let c_lo = cell.lo_at(s, k);
            let c_hi = cell.hi_at(s, k);
            let alpha_num =
                (cell.dst_hi[k] - cell.dst_lo[k]) - (cell.src_hi[k] - cell.src_lo[k]);
            let beta_num = cell.src_hi[k] * cell.dst_lo[k] - cell.src_lo[k] * cell.dst_hi[k];
            v[k] = (alpha_num * x[k] + beta_num) / (c_hi - c_lo) / self.duration;
        }
        v
    }

    /// Locate the cell whose (band-dilated) moving box contains `x` at
    /// time `t`, returning the blend weight: 1 inside the box, decaying
    /// to 0 across the band, `None` outside all dilated boxes. Overlaps
    /// resolve to the nearest box center.
    pub fn blend(&self, x: Coords<F>, t: F) -> Option<(usize, F, F)> {
        let s = self.phase(t);
        let band = self.band_at(s);
        let mut best: Option<(F, u32, F)> = None;
        for &ci in self.candidates(x) {
            let cell = &self.cells[ci as usize];
            let mut dist2 = F::zero();
            let mut center_dist2 = F::zero();
            let mut reject = false;
            for k in 0..self.dim {
                let lo = cell.lo_at(s, k);
                let hi = cell.hi_at(s, k);
                let d = if x[k] < lo {
                    lo - x[k]
                } else if x[k] > hi {
                    x[k] - hi
                } else {
                    F::zero()
                };
                if d >= band {
                    reject = true;
                    break;
                }
                dist2 += d * d;
                let c = (lo + hi) * F::of(0.5) - x[k];
                center_dist2 += c * c;
            }
            if reject || dist2 >= band * band {
                continue;
            }
            if dist2 == F::zero() {
                return Some((ci as usize, F::one(), s));
            }
            match best {
                Some((d, _, _)) if center_dist2 >= d => {}
                _ => best = Some((center_dist2, ci, dist2)),
            }
        }
        best.map(|(_, ci, dist2)| {
            let w = F::one() - smoothstep5(dist2.sqrt() / band);
            (ci as usize, w, s)
        })
    }

    /// Transport velocity at `(x, t)`: affine inside the moving boxes,
    /// blended to zero across the band, zero elsewhere.
    pub fn velocity(&self, x: Coords<F>, t: F) -> Coords<F> {
        match self.blend(x, t) {
            None => [F::zero(); 2],
            Some((ci, w, s)) => {
                let v = self.cell_velocity(&self.cells[ci], x, s);
                [v[0] * w, v[1] * w]
            }
        }
    }

    /// Control that realizes the transport against an ambient drift: on
    /// the moving boxes it cancels the ambient velocity and applies the
    /// affine cell velocity; across the blend band the whole correction
    /// decays to zero, so mass away from the cells only feels the drift.
    pub fn control_velocity(
        &self,
        x: Coords<F>,
        t: F,
        ambient: impl Fn() -> Coords<F>,
    ) -> Coords<F> {
        match self.blend(x, t) {
            None => [F::zero(); 2],
            Some((ci, w, s)) => {
                let v = self.cell_velocity(&self.cells[ci], x, s);
                let amb = ambient();
                [(v[0] - amb[0]) * w, (v[1] - amb[1]) * w]
            }
        }
    }

    /// Smallest distance from any swept box (without bands) to the faces
    /// of a bounding region.
    pub fn boundary_clearance(&self, omega: &crate::region::BoxRegion<F>) -> F {
        let mut m = F::infinity();
        for c in &self.cells {
            for k in 0..self.dim {
                let lo = c.src_lo[k].min(c.dst_lo[k]);
                let hi = c.src_hi[k].max(c.dst_hi[k]);
                m = m.min(lo - omega.lo[k]).min(omega.hi[k] - hi);
            }
        }
        m
    }

    /// Largest corner speed over all cells (physical units).
    pub fn sup_speed(&self) -> F {
        let mut m = F::zero();
        for c in &self.cells {
            for k in 0..self.dim {
                m = m
                    .max((c.dst_lo[k] - c.src_lo[k]).abs())
                    .max((c.dst_hi[k] - c.src_hi[k]).abs());
            }
        }
        m / self.duration
    }

    /// Conservative Lipschitz estimate: in-cell affine slope plus the
    /// blend-band decay.
    pub fn lipschitz(&self) -> F {
        let mut alpha_max = F::zero();
        for c in &self.cells {
            for k in 0..self.dim {
                let dw = ((c.dst_hi[k] - c.dst_lo[k]) - (c.src_hi[k] - c.src_lo[k])).abs();
                let w_min = (c.src_hi[k] - c.src_lo[k]).min(c.dst_hi[k] - c.dst_lo[k]);
                alpha_max = alpha_max.max(dw / w_min);
            }
        }
        alpha_max / self.duration
            + self.sup_speed() * F::of(1.875) / self.band_src.min(self.band_dst)
    }
}

/// Inner boxes of a grid as plan corners.
fn grid_cells<F: Real>(g: &GridDecomposition<F>) -> Result<Vec<(Coords<F>, Coords<F>)>> {
    if !g.has_margins() {
        return Err(Error::PlanDegenerate(
            "grid decomposition is missing inner margins".into(),
        ));
    }
    let mut out = Vec::new();
    match g {
        GridDecomposition::OneD(g) => {
            for i in 0..g.n {
                out.push((
                    [g.margin_lo[i], F::zero()],
                    [g.margin_hi[i], F::zero()],
                ));
            }
        }
        GridDecomposition::TwoD(g) => {
            for i in 0..g.n {
                for j in 0..g.n {
                    out.push((
                        [g.col_lo[i][j], g.row_lo[i][j]],
                        [g.col_hi[i][j], g.row_hi[i][j]],
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Build the moving-cell plan between two matching grid decompositions.
pub fn plan_from_grids<F: Real>(
    dim: usize,
    source: &GridDecomposition<F>,
    target: &GridDecomposition<F>,
    t_start: F,
    duration: F,
) -> Result<CellTransportPlan<F>> {
    if source.n() != target.n() {
        return Err(Error::PlanDegenerate(format!(
            "grid sizes differ: {} vs {}",
            source.n(),
            target.n()
        )));
    }
    if source.n() < 3 {
        return Err(Error::PlanDegenerate(format!(
            "need n >= 3 for nonempty margins, got {}",
            source.n()
        )));
    }
    let src_cells = grid_cells(source)?;
    let dst_cells = grid_cells(target)?;
    let band_src = source.min_margin_width() * F::of(0.5);
    let band_dst = target.min_margin_width() * F::of(0.5);
    let cells = src_cells
        .into_iter()
        .zip(dst_cells)
        .map(|((slo, shi), (dlo, dhi))| PlanCell {
            src_lo: slo,
            src_hi: shi,
            dst_lo: dlo,
            dst_hi: dhi,
        })
        .collect();
    CellTransportPlan::new(dim, t_start, duration, cells, band_src, band_dst)
}

/// The transport velocity field of a plan, with declared bounds.
pub fn cell_transport_field<F: Real>(plan: CellTransportPlan<F>) -> VectorField<F> {
    let lip = plan.lipschitz();
    let sup = plan.sup_speed();
    VectorField::new(FieldSpec::CellTransport { plan }, lip, sup)
}

/// Error accounting of a transfer at grid size `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct TransferReport<F> {
    pub n: usize,
    /// Mass left uncontrolled in the margins: `1 - ((n-2)/n)^2` in 2-D,
    /// `2/n` in 1-D (fraction of total mass).
    pub residual_mass: F,
    /// Distance bound contributed by the residual: residual mass times the
    /// diameter of the control region.
    pub residual_bound: F,
    /// Sum of per-cell diameter terms for the controlled mass.
    pub cell_term: F,
}

/// Build the one-phase transport schedule steering `mu0` onto `mu1` inside
/// `omega` over `[0, T]`.
///
/// Both measures must be supported in `omega` and carry equal mass. The
/// ambient field is taken to be zero; callers embedding the transfer in a
/// nonzero ambient field wrap the plan in a compensating control.
pub fn transfer_inside_omega<F: Real>(
    mu0: &Measure<F>,
    mu1: &Measure<F>,
    omega: &Region<F>,
    t_total: F,
    n: usize,
) -> Result<(super::ControlSchedule<F>, TransferReport<F>)> {
    for (side, mu) in [(Side::Source, mu0), (Side::Target, mu1)] {
        if mu.positions.iter().any(|&x| !omega.contains(x)) {
            return Err(Error::SupportViolation { side });
        }
    }
    let ma = mu0.total_mass();
    let mb = mu1.total_mass();
    if (ma - mb).abs() > F::of(1e-9) {
        return Err(Error::MassMismatch {
            a: ma.as_f64(),
            b: mb.as_f64(),
        });
    }
    let src = inner_cell_margins(mu0, &quantile_grid_decompose(mu0, n)?)?;
    let dst = inner_cell_margins(mu1, &quantile_grid_decompose(mu1, n)?)?;
    let plan = plan_from_grids(mu0.dim, &src, &dst, F::zero(), t_total)?;
    let nf = F::of(n as f64);
    let residual_mass = match mu0.dim {
        1 => F::of(2.0) / nf,
        _ => F::one() - ((nf - F::of(2.0)) / nf).powi(2),
    };
    let diam = omega.bounding_box().diameter();
    let cell_term = {
        let mut s = F::zero();
        let cell_mass = match mu0.dim {
            1 => (F::one() - F::of(2.0) / nf) / nf,
            _ => ((nf - F::of(2.0)) * (nf - F::of(2.0))) / nf.powi(4),
        };
        for c in &plan.cells {
            let mut widths = F::zero();
            for k in 0..mu0.dim {
                widths += c.dst_hi[k] - c.dst_lo[k];
            }
            s += widths * cell_mass;
        }
        s
    };
    let report = TransferReport {
        n,
        residual_mass,
        residual_bound: residual_mass * diam,
        cell_term,
    };
    let field = cell_transport_field(plan);
    let mut schedule = super::ControlSchedule::new(omega.clone());
    schedule.push_phase(
        "cell_transport",
        F::zero(),
        t_total,
        field.spec,
        field.lipschitz_est,
    );
    Ok((schedule, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_map, FlowParams};
    use crate::region::BoxRegion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_square(n: usize, seed: u64) -> Measure<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Measure::uniform_box(2, [0.0, 0.0], [1.0, 1.0], n, 1.0, &mut rng)
    }

    fn grids_for(mu: &Measure<f64>, n: usize) -> GridDecomposition<f64> {
        inner_cell_margins(mu, &quantile_grid_decompose(mu, n).unwrap()).unwrap()
    }

    #[test]
    fn identity_transport_has_zero_field() {
        let mu = uniform_square(20_000, 31);
        let g = grids_for(&mu, 4);
        let plan = plan_from_grids(2, &g, &g, 0.0, 1.0).unwrap();
        // alpha and beta vanish cell-wise when target equals source
        for cell in &plan.cells {
            let mid = [
                0.5 * (cell.src_lo[0] + cell.src_hi[0]),
                0.5 * (cell.src_lo[1] + cell.src_hi[1]),
            ];
            let v = plan.velocity(mid, 0.3);
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        }
    }

    #[test]
    fn translation_transport_has_constant_field_on_cells() {
        let mu = uniform_square(20_000, 32);
        let shift = [0.13, -0.07];
        let nu = mu.push_forward(|x| [x[0] + shift[0], x[1] + shift[1]]);
        let g0 = grids_for(&mu, 4);
        let g1 = grids_for(&nu, 4);
        let plan = plan_from_grids(2, &g0, &g1, 0.0, 1.0).unwrap();
        for cell in &plan.cells {
            let mid = [
                0.5 * (cell.src_lo[0] + cell.src_hi[0]),
                0.5 * (cell.src_lo[1] + cell.src_hi[1]),
            ];
            let v = plan.velocity(mid, 0.0);
            // substituting b = a + c into the coefficients gives alpha = 0,
            // beta = c; quantile noise perturbs slightly
            assert!((v[0] - shift[0]).abs() < 0.02, "vx {} vs {}", v[0], shift[0]);
            assert!((v[1] - shift[1]).abs() < 0.02, "vy {} vs {}", v[1], shift[1]);
        }
    }

    #[test]
    fn corners_land_on_target_corners() {
        let mu = uniform_square(40_000, 33);
        let nu = uniform_square(40_000, 34).push_forward(|x| [0.6 * x[0] + 0.2, 0.8 * x[1] + 0.1]);
        let g0 = grids_for(&mu, 3);
        let g1 = grids_for(&nu, 3);
        let plan = plan_from_grids(2, &g0, &g1, 0.0, 1.0).unwrap();
        let field = cell_transport_field(plan.clone());
        let params = FlowParams::new(1e-3);
        for cell in &plan.cells {
            for corner in [
                [cell.src_lo[0], cell.src_lo[1]],
                [cell.src_lo[0], cell.src_hi[1]],
                [cell.src_hi[0], cell.src_lo[1]],
                [cell.src_hi[0], cell.src_hi[1]],
            ] {
                let end = flow_map(&field, corner, 0.0, 1.0, params).unwrap();
                let expect = cell.closed_form_flow(corner, 1.0, 2);
                let err = crate::scalar::dist(end, expect, 2);
                assert!(err < 1e-6, "corner error {err}");
            }
        }
    }

    #[test]
    fn rk4_matches_closed_form_on_centers() {
        let mu = uniform_square(40_000, 35);
        let nu = uniform_square(40_000, 36).push_forward(|x| [x[0] * 0.7 + 0.15, x[1] * 0.7 + 0.2]);
        let g0 = grids_for(&mu, 3);
        let g1 = grids_for(&nu, 3);
        let plan = plan_from_grids(2, &g0, &g1, 0.0, 1.0).unwrap();
        let field = cell_transport_field(plan.clone());
        let params = FlowParams::new(1e-3);
        for cell in &plan.cells {
            let center = [
                0.5 * (cell.src_lo[0] + cell.src_hi[0]),
                0.5 * (cell.src_lo[1] + cell.src_hi[1]),
            ];
            let end = flow_map(&field, center, 0.0, 1.0, params).unwrap();
            let expect = cell.closed_form_flow(center, 1.0, 2);
            assert!(crate::scalar::dist(end, expect, 2) < 1e-6);
        }
    }

    #[test]
    fn plan_rejects_missing_margins() {
        let mu = uniform_square(5_000, 37);
        let g = quantile_grid_decompose(&mu, 4).unwrap();
        assert!(matches!(
            plan_from_grids(2, &g, &g, 0.0, 1.0),
            Err(Error::PlanDegenerate(_))
        ));
    }

    #[test]
    fn transfer_requires_support_in_omega() {
        let mu = uniform_square(2_000, 38);
        let nu = uniform_square(2_000, 39);
        let omega = Region::from_box(BoxRegion::closed(2, [0.2, 0.2], [0.8, 0.8]));
        assert!(matches!(
            transfer_inside_omega(&mu, &nu, &omega, 1.0, 4),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn transfer_report_residual_values() {
        let mu = uniform_square(30_000, 40);
        let nu = uniform_square(30_000, 41);
        let omega = Region::from_box(BoxRegion::closed(2, [-0.01, -0.01], [1.01, 1.01]));
        let (schedule, report) = transfer_inside_omega(&mu, &nu, &omega, 1.0, 8).unwrap();
        assert_eq!(schedule.phases.len(), 1);
        // 1 - (6/8)^2 = 7/16
        assert!((report.residual_mass - 4.0 * 7.0 / 64.0).abs() < 1e-12);
        let diam = (2.0f64 * 1.02 * 1.02).sqrt();
        assert!((report.residual_bound - report.residual_mass * diam).abs() < 1e-12);
    }
}
