//! Axis-aligned regions: boxes and finite unions of boxes.
//!
//! Regions carry explicit open/closed flags per face so that membership on
//! a boundary is deterministic.

use serde::{Deserialize, Serialize};

use crate::scalar::{Coords, Real};

/// A single axis-aligned box with per-face open/closed bounds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoxRegion<F> {
    pub dim: usize,
    pub lo: Coords<F>,
    pub hi: Coords<F>,
    /// `true` means the face is included in the set.
    pub lo_closed: [bool; 2],
    pub hi_closed: [bool; 2],
}

impl<F: Real> BoxRegion<F> {
    /// Closed box `[lo, hi]` in the given dimension.
    pub fn closed(dim: usize, lo: Coords<F>, hi: Coords<F>) -> Self {
        assert!(dim >= 1 && dim <= 2, "only dimensions 1 and 2 supported");
        for k in 0..dim {
            assert!(lo[k] < hi[k], "box must have positive volume");
        }
        BoxRegion {
            dim,
            lo,
            hi,
            lo_closed: [true; 2],
            hi_closed: [true; 2],
        }
    }

    /// Closed interval in one dimension.
    pub fn interval(lo: F, hi: F) -> Self {
        Self::closed(1, [lo, F::zero()], [hi, F::zero()])
    }

    /// Open box `(lo, hi)`.
    pub fn open(dim: usize, lo: Coords<F>, hi: Coords<F>) -> Self {
        let mut b = Self::closed(dim, lo, hi);
        b.lo_closed = [false; 2];
        b.hi_closed = [false; 2];
        b
    }

    pub fn contains(&self, x: Coords<F>) -> bool {
        for k in 0..self.dim {
            let lo_ok = if self.lo_closed[k] {
                x[k] >= self.lo[k]
            } else {
                x[k] > self.lo[k]
            };
            let hi_ok = if self.hi_closed[k] {
                x[k] <= self.hi[k]
            } else {
                x[k] < self.hi[k]
            };
            if !lo_ok || !hi_ok {
                return false;
            }
        }
        true
    }

    pub fn width(&self, axis: usize) -> F {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> Coords<F> {
        let half = F::of(0.5);
        let mut c = [F::zero(); 2];
        for k in 0..self.dim {
            c[k] = (self.lo[k] + self.hi[k]) * half;
        }
        c
    }

    /// Diameter of the box (length of its main diagonal).
    pub fn diameter(&self) -> F {
        let mut s = F::zero();
        for k in 0..self.dim {
            let w = self.width(k);
            s += w * w;
        }
        s.sqrt()
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn distance(&self, x: Coords<F>) -> F {
        let mut s = F::zero();
        for k in 0..self.dim {
            let d = if x[k] < self.lo[k] {
                self.lo[k] - x[k]
            } else if x[k] > self.hi[k] {
                x[k] - self.hi[k]
            } else {
                F::zero()
            };
            s += d * d;
        }
        s.sqrt()
    }

    /// Signed distance from `x` to the complement: positive inside, and the
    /// larger the deeper. Zero on the boundary and outside.
    pub fn depth(&self, x: Coords<F>) -> F {
        if !self.contains_closure(x) {
            return F::zero();
        }
        let mut m = F::infinity();
        for k in 0..self.dim {
            m = m.min(x[k] - self.lo[k]).min(self.hi[k] - x[k]);
        }
        m.max(F::zero())
    }

    fn contains_closure(&self, x: Coords<F>) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    /// Shrink the box by `frac` of its width on each side of each axis.
    pub fn shrink(&self, frac: F) -> Self {
        let mut b = self.clone();
        for k in 0..self.dim {
            let m = self.width(k) * frac;
            b.lo[k] = self.lo[k] + m;
            b.hi[k] = self.hi[k] - m;
            assert!(b.lo[k] < b.hi[k], "shrink collapsed the box");
        }
        b
    }

    /// Grow the box by an absolute margin on every side.
    pub fn pad(&self, m: F) -> Self {
        let mut b = self.clone();
        for k in 0..self.dim {
            b.lo[k] = self.lo[k] - m;
            b.hi[k] = self.hi[k] + m;
        }
        b
    }
}

/// A finite union of axis-aligned boxes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Region<F> {
    pub boxes: Vec<BoxRegion<F>>,
}

impl<F: Real> Region<F> {
    pub fn from_box(b: BoxRegion<F>) -> Self {
        Region { boxes: vec![b] }
    }

    pub fn interval(lo: F, hi: F) -> Self {
        Self::from_box(BoxRegion::interval(lo, hi))
    }

    pub fn dim(&self) -> usize {
        self.boxes.first().map_or(1, |b| b.dim)
    }

    pub fn contains(&self, x: Coords<F>) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    pub fn distance(&self, x: Coords<F>) -> F {
        self.boxes
            .iter()
            .map(|b| b.distance(x))
            .fold(F::infinity(), F::min)
    }

    /// The single box of a one-box region.
    pub fn as_single_box(&self) -> Option<&BoxRegion<F>> {
        if self.boxes.len() == 1 {
            self.boxes.first()
        } else {
            None
        }
    }

    /// Bounding box of the union.
    pub fn bounding_box(&self) -> BoxRegion<F> {
        let dim = self.dim();
        let mut lo = [F::infinity(); 2];
        let mut hi = [F::neg_infinity(); 2];
        for b in &self.boxes {
            for k in 0..dim {
                lo[k] = lo[k].min(b.lo[k]);
                hi[k] = hi[k].max(b.hi[k]);
            }
        }
        for k in dim..2 {
            lo[k] = F::zero();
            hi[k] = F::zero();
        }
        BoxRegion {
            dim,
            lo,
            hi,
            lo_closed: [true; 2],
            hi_closed: [true; 2],
        }
    }
}
