//! Velocity fields: a serializable constructor language plus evaluation.
//!
//! Control schedules must replay bit-identically after a JSON round trip,
//! so every synthesized field is described by a [`FieldSpec`] value — a
//! named constructor with parameters — rather than an opaque closure.
//! `Custom` exists for tests and embedding users; it is the one variant
//! that does not serialize.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::region::BoxRegion;
use crate::scalar::{smoothstep5, Coords, Real};

/// Anything that can be evaluated as a velocity field.
pub trait Velocity<F: Real>: Sync {
    fn velocity(&self, x: Coords<F>, t: F) -> Coords<F>;
}

/// Smooth cutoff vanishing on a box and reaching 1 at distance `width`.
///
/// `theta(x) = smoothstep5(d(x, omega0) / width)`, so `theta = 0` on the
/// box and `theta = 1` outside its `width`-neighborhood.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct Cutoff<F> {
    pub omega0: BoxRegion<F>,
    pub width: F,
}

impl<F: Real> Cutoff<F> {
    pub fn theta(&self, x: Coords<F>) -> F {
        // squared-distance early outs keep the sqrt off the hot path
        let mut d2 = F::zero();
        for k in 0..self.omega0.dim {
            let d = if x[k] < self.omega0.lo[k] {
                self.omega0.lo[k] - x[k]
            } else if x[k] > self.omega0.hi[k] {
                x[k] - self.omega0.hi[k]
            } else {
                F::zero()
            };
            d2 += d * d;
        }
        let w2 = self.width * self.width;
        if d2 >= w2 {
            F::one()
        } else if d2 == F::zero() {
            F::zero()
        } else {
            smoothstep5(d2.sqrt() / self.width)
        }
    }
}

/// Partial-slowdown profile along one axis of a box: factor 1 outside and
/// at both faces, ramping to `c` in the interior. Used to park mass moving
/// through the box at a reduced, strictly positive speed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct ConveyorProfile<F> {
    pub omega: BoxRegion<F>,
    pub axis: usize,
    /// Interior speed factor in (0, 1].
    pub c: F,
    pub entry_ramp: F,
    pub exit_ramp: F,
}

impl<F: Real> ConveyorProfile<F> {
    pub fn theta(&self, x: Coords<F>) -> F {
        if !self.omega.contains(x) {
            return F::one();
        }
        let a = self.axis;
        let d_hi = self.omega.hi[a] - x[a];
        let d_lo = x[a] - self.omega.lo[a];
        let s = smoothstep5(d_hi / self.entry_ramp).min(smoothstep5(d_lo / self.exit_ramp));
        F::one() - (F::one() - self.c) * s
    }
}

/// Product-of-sines barrier on a box: positive inside, zero on the
/// boundary, extended by zero outside. Its unique interior critical point
/// is the center of the box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct SineBarrier<F> {
    pub omega: BoxRegion<F>,
}

impl<F: Real> SineBarrier<F> {
    fn phase(&self, x: Coords<F>, k: usize) -> F {
        F::PI() * (x[k] - self.omega.lo[k]) / self.omega.width(k)
    }

    pub fn eta(&self, x: Coords<F>) -> F {
        if !self.omega.contains(x) {
            return F::zero();
        }
        let mut v = F::one();
        for k in 0..self.omega.dim {
            v *= self.phase(x, k).sin();
        }
        v
    }

    /// Gradient of the barrier; zero outside the box.
    pub fn grad(&self, x: Coords<F>) -> Coords<F> {
        let mut g = [F::zero(); 2];
        if !self.omega.contains(x) {
            return g;
        }
        let dim = self.omega.dim;
        let mut sines = [F::one(); 2];
        let mut coses = [F::one(); 2];
        for k in 0..dim {
            let p = self.phase(x, k);
            sines[k] = p.sin();
            coses[k] = p.cos();
        }
        for k in 0..dim {
            let mut v = F::PI() / self.omega.width(k) * coses[k];
            for j in 0..dim {
                if j != k {
                    v *= sines[j];
                }
            }
            g[k] = v;
        }
        g
    }
}

/// Smooth spatial weight: 1 on a core box, decaying to 0 over `band`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct SmoothMask<F> {
    pub core: BoxRegion<F>,
    pub band: F,
}

impl<F: Real> SmoothMask<F> {
    pub fn weight(&self, x: Coords<F>) -> F {
        F::one() - smoothstep5(self.core.distance(x) / self.band)
    }
}

/// Opaque evaluation-only field for tests and embedders.
#[derive(Clone)]
pub struct CustomField<F>(pub Arc<dyn Fn(Coords<F>, F) -> Coords<F> + Send + Sync>);

impl<F> fmt::Debug for CustomField<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomField")
    }
}

/// Named velocity-field constructors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec<F> {
    Zero,
    Constant {
        v: Coords<F>,
    },
    Affine {
        mat: [[F; 2]; 2],
        off: Coords<F>,
    },
    /// Lookup along the first axis with linear interpolation and constant
    /// extrapolation.
    Table1 {
        xs: Vec<F>,
        values: Vec<Coords<F>>,
    },
    Sum {
        terms: Vec<FieldSpec<F>>,
    },
    Scaled {
        factor: F,
        inner: Box<FieldSpec<F>>,
    },
    /// `mask(x) * inner` (or `(1 - mask(x)) * inner` when inverted).
    Masked {
        mask: SmoothMask<F>,
        invert: bool,
        inner: Box<FieldSpec<F>>,
    },
    /// Mass-storage control `(theta - 1) * ambient`: freezes the ambient
    /// drift on the cutoff box, leaves it untouched outside the cutoff
    /// neighborhood.
    Storage {
        cutoff: Cutoff<F>,
        ambient: Box<FieldSpec<F>>,
    },
    /// Partial slowdown `(theta - 1) * ambient` with a conveyor profile.
    Conveyor {
        profile: ConveyorProfile<F>,
        ambient: Box<FieldSpec<F>>,
    },
    /// Barrier control `k * grad(eta)`, zero outside the barrier box.
    Confinement {
        barrier: SineBarrier<F>,
        k: F,
    },
    /// Moving-cell transport field (the full transport velocity).
    CellTransport {
        plan: crate::control::cell_transport::CellTransportPlan<F>,
    },
    /// Moving-cell transport as a control against an ambient drift: the
    /// correction `(cell velocity - ambient)` is blended out across the
    /// plan's band, so only mass near the moving boxes is steered.
    CellControl {
        plan: crate::control::cell_transport::CellTransportPlan<F>,
        ambient: Box<FieldSpec<F>>,
    },
    /// Release window: moving-cell control against the ambient drift plus
    /// a holding control that is damped where the cells are active, so
    /// the cells keep custody of the mass they carry.
    CellRelease {
        plan: crate::control::cell_transport::CellTransportPlan<F>,
        ambient: Box<FieldSpec<F>>,
        hold: Box<FieldSpec<F>>,
    },
    /// 1-D rarefaction window, linearly increasing from 0 at `a` to 1 at
    /// `b`, with an optional linear taper of width `taper` past `b`.
    Psi {
        a: F,
        b: F,
        taper: F,
    },
    /// Rarefaction window whose endpoints move linearly in time starting
    /// at `t0`. When `x_cap` is set the taper is clamped so the support
    /// never crosses it.
    PsiWindow {
        t0: F,
        a0: F,
        a_rate: F,
        b0: F,
        b_rate: F,
        taper: F,
        x_cap: Option<F>,
    },
    #[serde(skip)]
    Custom(CustomField<F>),
}

fn psi_value<F: Real>(a: F, b: F, taper: F, x: F) -> F {
    if x >= a && x <= b {
        (x - a) / (b - a)
    } else if taper > F::zero() && x > b && x < b + taper {
        F::one() - (x - b) / taper
    } else {
        F::zero()
    }
}

impl<F: Real> FieldSpec<F> {
    pub fn eval(&self, x: Coords<F>, t: F) -> Coords<F> {
        match self {
            FieldSpec::Zero => [F::zero(); 2],
            FieldSpec::Constant { v } => *v,
            FieldSpec::Affine { mat, off } => [
                mat[0][0] * x[0] + mat[0][1] * x[1] + off[0],
                mat[1][0] * x[0] + mat[1][1] * x[1] + off[1],
            ],
            FieldSpec::Table1 { xs, values } => {
                if xs.is_empty() {
                    return [F::zero(); 2];
                }
                if x[0] <= xs[0] {
                    return values[0];
                }
                if x[0] >= *xs.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = xs.partition_point(|&v| v <= x[0]) - 1;
                let w = (x[0] - xs[i]) / (xs[i + 1] - xs[i]);
                [
                    values[i][0] + (values[i + 1][0] - values[i][0]) * w,
                    values[i][1] + (values[i + 1][1] - values[i][1]) * w,
                ]
            }
            FieldSpec::Sum { terms } => {
                let mut v = [F::zero(); 2];
                for term in terms {
                    let u = term.eval(x, t);
                    v[0] += u[0];
                    v[1] += u[1];
                }
                v
            }
            FieldSpec::Scaled { factor, inner } => {
                let u = inner.eval(x, t);
                [u[0] * *factor, u[1] * *factor]
            }
            FieldSpec::Masked {
                mask,
                invert,
                inner,
            } => {
                let mut w = mask.weight(x);
                if *invert {
                    w = F::one() - w;
                }
                if w == F::zero() {
                    return [F::zero(); 2];
                }
                let u = inner.eval(x, t);
                [u[0] * w, u[1] * w]
            }
            FieldSpec::Storage { cutoff, ambient } => {
                let theta = cutoff.theta(x);
                if theta == F::one() {
                    return [F::zero(); 2];
                }
                let v = ambient.eval(x, t);
                let f = theta - F::one();
                [v[0] * f, v[1] * f]
            }
            FieldSpec::Conveyor { profile, ambient } => {
                let theta = profile.theta(x);
                if theta == F::one() {
                    return [F::zero(); 2];
                }
                let v = ambient.eval(x, t);
                let f = theta - F::one();
                [v[0] * f, v[1] * f]
            }
            FieldSpec::Confinement { barrier, k } => {
                let g = barrier.grad(x);
                [g[0] * *k, g[1] * *k]
            }
            FieldSpec::CellTransport { plan } => plan.velocity(x, t),
            FieldSpec::CellControl { plan, ambient } => {
                plan.control_velocity(x, t, || ambient.eval(x, t))
            }
            FieldSpec::CellRelease {
                plan,
                ambient,
                hold,
            } => match plan.blend(x, t) {
                None => hold.eval(x, t),
                Some((ci, w, s)) => {
                    let cell_v = plan.cell_velocity_of(ci, x, s);
                    let amb = ambient.eval(x, t);
                    let h = hold.eval(x, t);
                    let cw = F::one() - w;
                    [
                        (cell_v[0] - amb[0]) * w + h[0] * cw,
                        (cell_v[1] - amb[1]) * w + h[1] * cw,
                    ]
                }
            },
            FieldSpec::Psi { a, b, taper } => [psi_value(*a, *b, *taper, x[0]), F::zero()],
            FieldSpec::PsiWindow {
                t0,
                a0,
                a_rate,
                b0,
                b_rate,
                taper,
                x_cap,
            } => {
                let dt = t - *t0;
                let a = *a0 + *a_rate * dt;
                let b = *b0 + *b_rate * dt;
                let taper = match x_cap {
                    Some(cap) => taper.min((*cap - b).max(F::zero())),
                    None => *taper,
                };
                [psi_value(a, b, taper, x[0]), F::zero()]
            }
            FieldSpec::Custom(f) => (f.0)(x, t),
        }
    }

    pub fn custom(f: impl Fn(Coords<F>, F) -> Coords<F> + Send + Sync + 'static) -> Self {
        FieldSpec::Custom(CustomField(Arc::new(f)))
    }
}

impl<F: Real> Velocity<F> for FieldSpec<F> {
    fn velocity(&self, x: Coords<F>, t: F) -> Coords<F> {
        self.eval(x, t)
    }
}

/// A velocity field with declared regularity data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct VectorField<F> {
    pub spec: FieldSpec<F>,
    /// Spatial Lipschitz estimate (declared or sampled).
    pub lipschitz_est: F,
    /// Uniform bound on |field|.
    pub sup_bound: F,
}

impl<F: Real> VectorField<F> {
    pub fn new(spec: FieldSpec<F>, lipschitz_est: F, sup_bound: F) -> Self {
        VectorField {
            spec,
            lipschitz_est,
            sup_bound,
        }
    }

    pub fn zero() -> Self {
        Self::new(FieldSpec::Zero, F::zero(), F::zero())
    }

    pub fn constant(v: Coords<F>) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        Self::new(FieldSpec::Constant { v }, F::zero(), norm)
    }

    pub fn eval(&self, x: Coords<F>, t: F) -> Coords<F> {
        self.spec.eval(x, t)
    }

    /// Estimate the spatial Lipschitz constant and sup bound by sampling
    /// point pairs in a box over a time range. The finite-difference ratio
    /// underestimates the true constant, so consumers typically inflate it
    /// (the Gronwall checks use 1.1x).
    pub fn estimate_bounds<R: rand::Rng>(
        spec: FieldSpec<F>,
        bbox: &BoxRegion<F>,
        t_range: (F, F),
        pairs: usize,
        rng: &mut R,
    ) -> Self {
        let dim = bbox.dim;
        let mut lip = F::zero();
        let mut sup = F::zero();
        let sample = |rng: &mut R| {
            let mut p = [F::zero(); 2];
            for k in 0..dim {
                let u = F::of(rng.gen::<f64>());
                p[k] = bbox.lo[k] + (bbox.hi[k] - bbox.lo[k]) * u;
            }
            p
        };
        for _ in 0..pairs {
            let a = sample(rng);
            let b = sample(rng);
            let t =
                t_range.0 + (t_range.1 - t_range.0) * F::of(rng.gen::<f64>());
            let va = spec.eval(a, t);
            let vb = spec.eval(b, t);
            let dx = crate::scalar::dist(a, b, dim);
            let dv = crate::scalar::dist(va, vb, dim);
            let na = (va[0] * va[0] + va[1] * va[1]).sqrt();
            sup = sup.max(na);
            if dx > F::of(1e-12) {
                lip = lip.max(dv / dx);
            }
        }
        Self::new(spec, lip, sup)
    }
}

impl<F: Real> Velocity<F> for VectorField<F> {
    fn velocity(&self, x: Coords<F>, t: F) -> Coords<F> {
        self.spec.eval(x, t)
    }
}
