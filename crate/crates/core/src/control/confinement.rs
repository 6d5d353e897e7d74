//! Confinement control: push mass toward an inner hypercube along the
//! gradient of a barrier that vanishes on the boundary of the control
//! region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSpec, SineBarrier, VectorField};
use crate::region::{BoxRegion, Region};
use crate::scalar::{Coords, Real};

/// A product-of-sines barrier on a box control region, together with the
/// inner hypercube `S` and sampled gradient bounds on `omega \ S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct EtaBarrier<F> {
    pub barrier: SineBarrier<F>,
    pub s_box: BoxRegion<F>,
    pub kappa0: F,
    pub kappa1: F,
}

impl<F: Real> EtaBarrier<F> {
    /// Build the barrier for `omega` with inner box `s_box`; `kappa0` and
    /// `kappa1` are estimated on `samples` points of `omega \ S`. The
    /// barrier's only interior critical point is the center of `omega`,
    /// which must lie in `S`.
    pub fn new<R: Rng>(
        omega: &Region<F>,
        s_box: BoxRegion<F>,
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let omega_box = omega
            .as_single_box()
            .ok_or_else(|| {
                Error::InvalidParameter("confinement needs a single-box control region".into())
            })?
            .clone();
        for ax in 0..omega_box.dim {
            if !(omega_box.lo[ax] < s_box.lo[ax] && s_box.hi[ax] < omega_box.hi[ax]) {
                return Err(Error::InvalidParameter(
                    "S must be strictly included in omega".into(),
                ));
            }
        }
        if !s_box.contains(omega_box.center()) {
            return Err(Error::InvalidParameter(
                "the barrier's critical point (the center of omega) must lie in S".into(),
            ));
        }
        let barrier = SineBarrier {
            omega: omega_box.clone(),
        };
        let mut kappa0 = F::infinity();
        let mut kappa1 = F::zero();
        let mut found = 0usize;
        while found < samples {
            let mut x = [F::zero(); 2];
            for k in 0..omega_box.dim {
                let u = F::of(rng.gen::<f64>());
                x[k] = omega_box.lo[k] + omega_box.width(k) * u;
            }
            if s_box.contains(x) {
                continue;
            }
            found += 1;
            let g = barrier.grad(x);
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            kappa0 = kappa0.min(norm);
            kappa1 = kappa1.max(norm);
        }
        Ok(EtaBarrier {
            barrier,
            s_box,
            kappa0,
            kappa1,
        })
    }

    pub fn eta(&self, x: Coords<F>) -> F {
        self.barrier.eta(x)
    }

    pub fn grad_eta(&self, x: Coords<F>) -> Coords<F> {
        self.barrier.grad(x)
    }

    /// Smallest gain that makes the outward flux of `v + k grad(eta)`
    /// negative on all sampled boundary points (face interiors).
    pub fn min_admissible_k<R: Rng>(
        &self,
        v: &VectorField<F>,
        samples_per_face: usize,
        rng: &mut R,
    ) -> F {
        let omega = &self.barrier.omega;
        let dim = omega.dim;
        let mut k_min = F::zero();
        for ax in 0..dim {
            for (side, normal_sign) in [(false, -F::one()), (true, F::one())] {
                for _ in 0..samples_per_face {
                    let mut x = [F::zero(); 2];
                    x[ax] = if side { omega.hi[ax] } else { omega.lo[ax] };
                    for k in 0..dim {
                        if k != ax {
                            // stay in the face interior; corners have a
                            // vanishing barrier gradient
                            let u = F::of(0.02) + F::of(0.96) * F::of(rng.gen::<f64>());
                            x[k] = omega.lo[k] + omega.width(k) * u;
                        }
                    }
                    // one-sided gradient on the face: evaluate just inside
                    let mut xin = x;
                    let eps = omega.width(ax) * F::of(1e-9);
                    xin[ax] = xin[ax] - normal_sign * eps;
                    let g = self.barrier.grad(xin);
                    let gn = g[ax] * normal_sign; // outward component, < 0
                    let vn = v.eval(x, F::zero())[ax] * normal_sign;
                    if gn < F::zero() && vn > F::zero() {
                        k_min = k_min.max(vn / (-gn));
                    }
                }
            }
        }
        k_min
    }
}

/// The confinement control `k grad(eta)`, zero outside the barrier box.
///
/// Fails with `KTooSmall` when the boundary sign condition
/// `n . (v + k grad eta) < 0` does not hold at the given gain on sampled
/// boundary points.
pub fn confinement_field<F: Real>(
    barrier: &EtaBarrier<F>,
    v: &VectorField<F>,
    k: F,
    rng: &mut impl Rng,
) -> Result<VectorField<F>> {
    if !(k > F::zero()) {
        return Err(Error::InvalidParameter("gain k must be positive".into()));
    }
    let required = barrier.min_admissible_k(v, 512, rng);
    if k <= required {
        return Err(Error::KTooSmall {
            k: k.as_f64(),
            required: required.as_f64(),
        });
    }
    let omega = &barrier.barrier.omega;
    let mut w_min = F::infinity();
    for ax in 0..omega.dim {
        w_min = w_min.min(omega.width(ax));
    }
    let dim_f = F::of(omega.dim as f64);
    let lip = k * dim_f * F::PI() * F::PI() / (w_min * w_min);
    let sup = k * barrier.kappa1.max(F::PI() / w_min);
    Ok(VectorField::new(
        FieldSpec::Confinement {
            barrier: barrier.barrier.clone(),
            k,
        },
        lip,
        sup,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn barrier_1d() -> EtaBarrier<f64> {
        let omega = Region::interval(0.0, 1.0);
        let s = BoxRegion::interval(0.3, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        EtaBarrier::new(&omega, s, 2000, &mut rng).unwrap()
    }

    #[test]
    fn field_matches_analytic_gradient() {
        // omega = (0,1), eta = sin(pi x): field at 0.25 is k pi cos(pi/4)
        let b = barrier_1d();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let v = VectorField::constant([0.1, 0.0]);
        let k = 2.0;
        let u = confinement_field(&b, &v, k, &mut rng).unwrap();
        let expect = k * std::f64::consts::PI / 2.0f64.sqrt();
        assert!((u.eval([0.25, 0.0], 0.0)[0] - expect).abs() < 1e-12);
        // zero outside omega, zero at the center (critical point)
        assert_eq!(u.eval([1.5, 0.0], 0.0), [0.0, 0.0]);
        assert!(u.eval([0.5, 0.0], 0.0)[0].abs() < 1e-12);
    }

    #[test]
    fn barrier_invariants_sampled() {
        let b = barrier_1d();
        assert!(b.kappa0 > 0.0);
        assert!(b.kappa1 >= b.kappa0);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..500 {
            let x = [rng.gen::<f64>(), 0.0];
            let eta = b.eta(x);
            assert!(eta > 0.0 || x[0] <= 0.0 || x[0] >= 1.0);
        }
        assert!(b.eta([0.0, 0.0]).abs() < 1e-12);
        assert!(b.eta([1.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn too_small_gain_is_rejected_with_requirement() {
        let b = barrier_1d();
        let v = VectorField::constant([1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        // v = 1 against grad eta = pi at the hi face: need k > 1/pi
        let err = confinement_field(&b, &v, 0.2, &mut rng).unwrap_err();
        match err {
            Error::KTooSmall { required, .. } => {
                assert!((required - 1.0 / std::f64::consts::PI).abs() < 1e-3);
            }
            other => panic!("expected KTooSmall, got {other:?}"),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        assert!(confinement_field(&b, &v, 0.4, &mut rng).is_ok());
    }

    #[test]
    fn center_must_lie_in_s() {
        let omega = Region::interval(0.0, 1.0);
        let s_off = BoxRegion::interval(0.6, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        assert!(EtaBarrier::<f64>::new(&omega, s_off, 100, &mut rng).is_err());
    }
}
