//! Compactly supported measures realized as weighted particle ensembles,
//! optionally backed by an exact 1-D piecewise-constant density.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::Region;
use crate::scalar::{Coords, Real};

/// One piece of a 1-D piecewise-constant density.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DensityPiece<F> {
    pub lo: F,
    pub hi: F,
    pub value: F,
}

/// A nonnegative measure on R^d (d = 1 or 2) stored as weighted particles.
///
/// Probability measures carry total mass 1; restrictions produce
/// sub-probability measures with the same per-particle weights. A 1-D
/// measure may additionally carry its exact density, which mass and
/// distance computations prefer when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Measure<F> {
    pub dim: usize,
    pub positions: Vec<Coords<F>>,
    pub weights: Vec<F>,
    pub density_1d: Option<Vec<DensityPiece<F>>>,
}

impl<F: Real> Measure<F> {
    pub fn from_particles(dim: usize, positions: Vec<Coords<F>>, weights: Vec<F>) -> Self {
        assert_eq!(positions.len(), weights.len());
        assert!(dim >= 1 && dim <= 2);
        Measure {
            dim,
            positions,
            weights,
            density_1d: None,
        }
    }

    /// i.i.d. sample of `n` particles uniform on a box, each of weight
    /// `mass / n`.
    pub fn uniform_box<R: Rng>(
        dim: usize,
        lo: Coords<F>,
        hi: Coords<F>,
        n: usize,
        mass: F,
        rng: &mut R,
    ) -> Self {
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = [F::zero(); 2];
            for k in 0..dim {
                let u = F::of(rng.gen::<f64>());
                p[k] = lo[k] + (hi[k] - lo[k]) * u;
            }
            positions.push(p);
        }
        let w = mass / F::of(n as f64);
        Measure {
            dim,
            positions,
            weights: vec![w; n],
            density_1d: None,
        }
    }

    /// Build a 1-D measure from a piecewise-constant density.
    ///
    /// Particles are placed at the `n` mass quantiles (midpoint rule), so
    /// the particle picture is a deterministic stand-in for the density;
    /// the exact density is kept alongside.
    pub fn from_density_1d(pieces: Vec<DensityPiece<F>>, n: usize) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::ZeroMass);
        }
        for p in &pieces {
            if p.hi <= p.lo || p.value < F::zero() {
                return Err(Error::InvalidParameter(format!(
                    "bad density piece [{}, {}] value {}",
                    p.lo, p.hi, p.value
                )));
            }
        }
        let total: F = pieces.iter().map(|p| (p.hi - p.lo) * p.value).sum();
        if total <= F::zero() {
            return Err(Error::ZeroMass);
        }
        let w = total / F::of(n as f64);
        let mut positions = Vec::with_capacity(n);
        // walk the pieces accumulating mass; place a particle at the center
        // of each mass sliver of size w
        let mut piece_iter = pieces.iter();
        let mut piece = piece_iter.next().unwrap();
        let mut consumed = F::zero(); // mass consumed within current piece
        for i in 0..n {
            let target = (F::of(i as f64) + F::of(0.5)) * w;
            loop {
                let piece_mass = (piece.hi - piece.lo) * piece.value;
                if target <= consumed + piece_mass || piece_iter.len() == 0 {
                    let within = target - consumed;
                    let x = if piece.value > F::zero() {
                        piece.lo + within / piece.value
                    } else {
                        piece.lo
                    };
                    positions.push([x.min(piece.hi).max(piece.lo), F::zero()]);
                    break;
                }
                consumed += piece_mass;
                piece = piece_iter.next().unwrap();
            }
        }
        Ok(Measure {
            dim: 1,
            positions,
            weights: vec![w; n],
            density_1d: Some(pieces),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> F {
        self.weights.iter().copied().sum()
    }

    /// Check the probability-measure invariant: weights sum to 1 within tol.
    pub fn is_probability(&self, tol: F) -> bool {
        (self.total_mass() - F::one()).abs() <= tol
    }

    /// Mass contained in a region. Uses the exact density when present
    /// (1-D), otherwise sums particle weights. Empty regions give 0.
    pub fn mass_in(&self, r: &Region<F>) -> F {
        if let (1, Some(pieces)) = (self.dim, self.density_1d.as_ref()) {
            let mut total = F::zero();
            for b in &r.boxes {
                for p in pieces {
                    let lo = p.lo.max(b.lo[0]);
                    let hi = p.hi.min(b.hi[0]);
                    if hi > lo {
                        total += (hi - lo) * p.value;
                    }
                }
            }
            return total;
        }
        let mut total = F::zero();
        for (x, w) in self.positions.iter().zip(&self.weights) {
            if r.contains(*x) {
                total += *w;
            }
        }
        total
    }

    /// Push the measure forward along a point map. Weights are untouched,
    /// so total mass is preserved exactly. Any attached density is dropped
    /// (the map need not be monotone).
    pub fn push_forward(&self, gamma: impl Fn(Coords<F>) -> Coords<F> + Sync) -> Self {
        Measure {
            dim: self.dim,
            positions: self.positions.iter().map(|&x| gamma(x)).collect(),
            weights: self.weights.clone(),
            density_1d: None,
        }
    }

    /// Restriction to a region: keeps exactly the particles inside `r`
    /// with their original weights.
    pub fn restrict(&self, r: &Region<F>) -> Self {
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for (x, w) in self.positions.iter().zip(&self.weights) {
            if r.contains(*x) {
                positions.push(*x);
                weights.push(*w);
            }
        }
        let density_1d = match (self.dim, self.density_1d.as_ref()) {
            (1, Some(pieces)) => {
                let mut out = Vec::new();
                for b in &r.boxes {
                    for p in pieces {
                        let lo = p.lo.max(b.lo[0]);
                        let hi = p.hi.min(b.hi[0]);
                        if hi > lo {
                            out.push(DensityPiece {
                                lo,
                                hi,
                                value: p.value,
                            });
                        }
                    }
                }
                out.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
                if out.is_empty() {
                    None
                } else {
                    Some(out)
                }
            }
            _ => None,
        };
        Measure {
            dim: self.dim,
            positions,
            weights,
            density_1d,
        }
    }

    /// Normalize to a probability measure.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.total_mass();
        if m <= F::zero() {
            return Err(Error::ZeroMass);
        }
        let mut out = self.clone();
        for w in &mut out.weights {
            *w = *w / m;
        }
        if let Some(pieces) = &mut out.density_1d {
            for p in pieces {
                p.value = p.value / m;
            }
        }
        Ok(out)
    }

    /// Support bounding box of the particle cloud.
    pub fn support_bbox(&self) -> (Coords<F>, Coords<F>) {
        let mut lo = [F::infinity(); 2];
        let mut hi = [F::neg_infinity(); 2];
        for x in &self.positions {
            for k in 0..self.dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        for k in self.dim..2 {
            lo[k] = F::zero();
            hi[k] = F::zero();
        }
        (lo, hi)
    }

    /// Positions sorted along one axis (for 1-D quantile work).
    pub fn sorted_axis(&self, axis: usize) -> Vec<F> {
        let mut xs: Vec<F> = self.positions.iter().map(|p| p[axis]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs
    }

    /// Serialize particles as CSV (one row per particle: x1..xd,weight),
    /// preceded by a schema comment line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let cols: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        s.push_str(&format!("# schema: {},weight\n", cols.join(",")));
        for (x, w) in self.positions.iter().zip(&self.weights) {
            for k in 0..self.dim {
                s.push_str(&format!("{},", x[k]));
            }
            s.push_str(&format!("{}\n", w));
        }
        s
    }

    /// Parse the CSV produced by [`Measure::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        let mut dim = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::InvalidParameter(format!(
                    "bad particle row: {line}"
                )));
            }
            let d = fields.len() - 1;
            if dim == 0 {
                dim = d;
            } else if dim != d {
                return Err(Error::InvalidParameter("inconsistent row widths".into()));
            }
            let parse = |s: &str| -> Result<F> {
                s.parse::<f64>()
                    .map(F::of)
                    .map_err(|_| Error::InvalidParameter(format!("bad number {s}")))
            };
            let mut p = [F::zero(); 2];
            for k in 0..d {
                p[k] = parse(fields[k])?;
            }
            positions.push(p);
            weights.push(parse(fields[d])?);
        }
        if positions.is_empty() {
            return Err(Error::ZeroMass);
        }
        Ok(Measure {
            dim,
            positions,
            weights,
            density_1d: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::BoxRegion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform01(n: usize) -> Measure<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Measure::uniform_box(1, [0.0, 0.0], [1.0, 0.0], n, 1.0, &mut rng)
    }

    #[test]
    fn mass_in_full_support() {
        let mu = uniform01(1000);
        let r = Region::interval(-10.0, 10.0);
        assert!((mu.mass_in(&r) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mass_in_disjoint_region() {
        let mu = uniform01(1000);
        let r = Region::interval(5.0, 6.0);
        assert_eq!(mu.mass_in(&r), 0.0);
    }

    #[test]
    fn mass_in_quarter() {
        // oracle: exact CDF of the uniform gives 0.25; allow 2/sqrt(N)
        let n = 10_000;
        let mu = uniform01(n);
        let r = Region::interval(0.0, 0.25);
        let tol = 2.0 / (n as f64).sqrt();
        assert!((mu.mass_in(&r) - 0.25).abs() < tol);
    }

    #[test]
    fn push_forward_identity_and_translation() {
        let mu = uniform01(500);
        let id = mu.push_forward(|x| x);
        assert_eq!(id.positions, mu.positions);
        let shifted = mu.push_forward(|x| [x[0] + 1.0, x[1]]);
        let r = Region::interval(1.0, 2.0);
        assert!((shifted.mass_in(&r) - 1.0).abs() < 1e-9);
        assert!((shifted.total_mass() - mu.total_mass()).abs() == 0.0);
    }

    #[test]
    fn push_forward_dilation_oracle() {
        // gamma(x) = 2x sends half the mass out of [0,1]; oracle counts
        // mapped sample points directly
        let mu = uniform01(10_000);
        let doubled = mu.push_forward(|x| [2.0 * x[0], x[1]]);
        let r = Region::interval(0.0, 1.0);
        let direct = mu
            .positions
            .iter()
            .zip(&mu.weights)
            .filter(|(x, _)| 2.0 * x[0] <= 1.0)
            .map(|(_, w)| w)
            .sum::<f64>();
        assert!((doubled.mass_in(&r) - direct).abs() < 1e-12);
        assert!((doubled.mass_in(&r) - 0.5).abs() < 2.0 / 100.0);
    }

    #[test]
    fn restrict_superset_and_disjoint() {
        let mu = uniform01(300);
        let all = mu.restrict(&Region::interval(-5.0, 5.0));
        assert_eq!(all.len(), mu.len());
        let none = mu.restrict(&Region::interval(2.0, 3.0));
        assert!(none.is_empty());
        assert_eq!(none.total_mass(), 0.0);
    }

    #[test]
    fn restrict_half_mass_scaling_consistency() {
        let mu = uniform01(10_000);
        let r = Region::interval(0.0, 0.5);
        let sub = mu.restrict(&r);
        assert!((sub.total_mass() - mu.mass_in(&r)).abs() < 1e-12);
        assert!((sub.total_mass() - 0.5).abs() < 2.0 / 100.0);
        assert!((sub.mass_in(&r) - mu.mass_in(&r)).abs() < 1e-12);
    }

    #[test]
    fn density_measure_integral_matches_particles() {
        let pieces = vec![DensityPiece {
            lo: 4.0,
            hi: 6.0,
            value: 0.5,
        }];
        let mu = Measure::<f64>::from_density_1d(pieces, 1000).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-9);
        let r = Region::interval(4.0, 5.0);
        // density path is exact
        assert!((mu.mass_in(&r) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partition_additivity() {
        let mu = uniform01(5000);
        let parts = [
            Region::from_box(BoxRegion {
                dim: 1,
                lo: [-1.0, 0.0],
                hi: [0.3, 0.0],
                lo_closed: [true; 2],
                hi_closed: [false; 2],
            }),
            Region::from_box(BoxRegion {
                dim: 1,
                lo: [0.3, 0.0],
                hi: [0.7, 0.0],
                lo_closed: [true; 2],
                hi_closed: [false; 2],
            }),
            Region::from_box(BoxRegion {
                dim: 1,
                lo: [0.7, 0.0],
                hi: [2.0, 0.0],
                lo_closed: [true; 2],
                hi_closed: [true; 2],
            }),
        ];
        let total: f64 = parts.iter().map(|r| mu.mass_in(r)).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let mu = uniform01(50);
        let text = mu.to_csv();
        let back = Measure::<f64>::from_csv(&text).unwrap();
        assert_eq!(back.len(), mu.len());
        assert!((back.total_mass() - mu.total_mass()).abs() < 1e-12);
    }
}
