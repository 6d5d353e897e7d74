//! Mass-storage control: slow the ambient drift to a halt on an inner
//! region so that inflowing mass parks inside the control region instead
//! of crossing it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Cutoff, FieldSpec, VectorField};
use crate::region::{BoxRegion, Region};
use crate::scalar::Real;

/// Geometry of a storage control: a holding box `omega0` strictly inside
/// the control region, a boundary gap `alpha`, and a sharpness `k` that
/// shrinks the transition shell `S_k = {d(x, omega0) < alpha/2k}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct StorageParams<F> {
    pub omega: BoxRegion<F>,
    pub omega0: BoxRegion<F>,
    /// Distance from `omega0` to the complement of `omega`.
    pub alpha: F,
    pub k: usize,
}

impl<F: Real> StorageParams<F> {
    pub fn new(omega: &Region<F>, omega0: BoxRegion<F>, k: usize) -> Result<Self> {
        let omega_box = omega
            .as_single_box()
            .ok_or_else(|| {
                Error::InvalidParameter("storage needs a single-box control region".into())
            })?
            .clone();
        if k == 0 {
            return Err(Error::InvalidParameter("sharpness k must be positive".into()));
        }
        let mut alpha = F::infinity();
        for ax in 0..omega_box.dim {
            alpha = alpha
                .min(omega0.lo[ax] - omega_box.lo[ax])
                .min(omega_box.hi[ax] - omega0.hi[ax]);
        }
        if !(alpha > F::zero()) {
            return Err(Error::InvalidParameter(
                "omega0 must be strictly inside omega".into(),
            ));
        }
        Ok(StorageParams {
            omega: omega_box,
            omega0,
            alpha,
            k,
        })
    }

    /// Width of the transition shell: `alpha / 2k`.
    pub fn shell_width(&self) -> F {
        self.alpha / (F::of(2.0) * F::of(self.k as f64))
    }

    pub fn cutoff(&self) -> Cutoff<F> {
        Cutoff {
            omega0: self.omega0.clone(),
            width: self.shell_width(),
        }
    }

    /// Bounding box of the halfway neighborhood `omega1 = {d < alpha/2}`.
    pub fn omega1(&self) -> BoxRegion<F> {
        self.omega0.pad(self.alpha * F::of(0.5))
    }

    /// Bounding box of the transition shell `S_k`.
    pub fn shell(&self) -> BoxRegion<F> {
        self.omega0.pad(self.shell_width())
    }
}

/// The storage control `(theta_k - 1) v`: identically zero where
/// `theta_k = 1` (outside the shell), equal to `-v` on `omega0`, supported
/// inside the control region.
pub fn storage_field<F: Real>(v: &VectorField<F>, params: &StorageParams<F>) -> VectorField<F> {
    let cutoff = params.cutoff();
    // |d theta/dx| <= 1.875 / width for the quintic step
    let lip = v.lipschitz_est + v.sup_bound * F::of(1.875) / cutoff.width;
    let sup = v.sup_bound;
    VectorField::new(
        FieldSpec::Storage {
            cutoff,
            ambient: Box::new(v.spec.clone()),
        },
        lip,
        sup,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_map, flow_trajectory, FlowParams};
    use crate::scalar::dist;

    fn setup() -> (VectorField<f64>, StorageParams<f64>) {
        let v = VectorField::constant([1.0, 0.0]);
        let omega = Region::interval(2.0, 3.0);
        let omega0 = BoxRegion::interval(2.05, 2.95);
        let params = StorageParams::new(&omega, omega0, 64).unwrap();
        (v, params)
    }

    #[test]
    fn geometry_of_the_shell() {
        let (_, params) = setup();
        assert!((params.alpha - 0.05).abs() < 1e-12);
        assert!((params.shell_width() - 0.05 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn zero_outside_shell_and_minus_v_inside() {
        let (v, params) = setup();
        let u = storage_field(&v, &params);
        // far from the shell the cutoff is 1
        assert_eq!(u.eval([2.5, 0.0], 0.0), [-1.0, 0.0]); // on omega0: -v
        assert_eq!(u.eval([1.5, 0.0], 0.0), [0.0, 0.0]);
        assert_eq!(u.eval([4.0, 0.0], 0.0), [0.0, 0.0]);
        // support inside omega
        assert_eq!(u.eval([1.999, 0.0], 0.0), [0.0, 0.0]);
    }

    #[test]
    fn cutoff_invariants_pointwise() {
        let (_, params) = setup();
        let cutoff = params.cutoff();
        for i in 0..200 {
            let x = [1.8 + i as f64 * 0.007, 0.0];
            let th = cutoff.theta(x);
            assert!((0.0..=1.0).contains(&th));
            if params.omega0.contains(x) {
                assert_eq!(th, 0.0);
            }
            if params.omega0.distance(x) >= params.shell_width() {
                assert_eq!(th, 1.0);
            }
        }
    }

    #[test]
    fn controlled_path_is_reparametrized_uncontrolled_path() {
        // the controlled trajectory must trace a subset of the uncontrolled
        // path, with nondecreasing progress gamma(t) <= t
        let (v, params) = setup();
        let u = storage_field(&v, &params);
        let total = VectorField::new(
            FieldSpec::Sum {
                terms: vec![v.spec.clone(), u.spec.clone()],
            },
            u.lipschitz_est,
            1.0,
        );
        let fp = FlowParams::new(1e-3);
        let x0 = [0.3, 0.0];
        let horizon = 2.4;
        let free = flow_trajectory(&v, 1, x0, 0.0, horizon, fp).unwrap();
        let controlled = flow_trajectory(&total, 1, x0, 0.0, horizon, fp).unwrap();
        let mut prev_idx = 0usize;
        for state in controlled.states.iter().step_by(10) {
            // nearest uncontrolled sample
            let (best_idx, best_d) = free
                .states
                .iter()
                .enumerate()
                .map(|(i, y)| (i, dist(*state, *y, 1)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert!(best_d <= 10.0 * fp.dt, "off-path by {best_d}");
            assert!(
                best_idx + 2 >= prev_idx,
                "progress along the uncontrolled path went backward"
            );
            prev_idx = best_idx.max(prev_idx);
        }
        // gamma(t) <= t: progress index never exceeds the elapsed index
        let end = controlled.states.last().unwrap();
        let (end_idx, _) = free
            .states
            .iter()
            .enumerate()
            .map(|(i, y)| (i, dist(*end, *y, 1)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!(end_idx <= free.states.len() - 1);
    }

    #[test]
    fn trajectory_parks_inside_omega() {
        let (v, params) = setup();
        let u = storage_field(&v, &params);
        let total = VectorField::new(
            FieldSpec::Sum {
                terms: vec![v.spec.clone(), u.spec.clone()],
            },
            u.lipschitz_est,
            1.0,
        );
        let fp = FlowParams::new(1e-3);
        let end = flow_map(&total, [0.0, 0.0], 0.0, 2.4, fp).unwrap();
        assert!(
            end[0] >= 2.0 && end[0] <= 2.06,
            "parked at {} instead of the holding edge",
            end[0]
        );
    }

    #[test]
    fn omega0_must_be_strictly_inside() {
        let omega = Region::interval(2.0, 3.0);
        let bad = BoxRegion::interval(2.0, 2.9);
        assert!(StorageParams::<f64>::new(&omega, bad, 8).is_err());
    }
}
