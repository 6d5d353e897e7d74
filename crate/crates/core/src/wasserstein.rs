//! Wasserstein distances: exact 1-D computation via cumulative
//! distribution functions and exact small-instance computation via
//! min-cost assignment.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::scalar::Real;

/// Method used to evaluate a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Quantile1d,
    Assignment,
}

/// Order and method for W_p computations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Real", deserialize = "F: Real"))]
pub struct DistanceParams<F> {
    pub p: F,
    pub method: DistanceMethod,
    /// Largest point-cloud size fed to the assignment solver.
    pub cap: usize,
    /// Seed for the bootstrap resampling of unequal clouds.
    pub seed: u64,
}

impl<F: Real> DistanceParams<F> {
    pub fn w1_quantile() -> Self {
        DistanceParams {
            p: F::one(),
            method: DistanceMethod::Quantile1d,
            cap: 2000,
            seed: 42,
        }
    }

    pub fn assignment(p: F) -> Self {
        assert!(p >= F::one(), "order p must be >= 1");
        DistanceParams {
            p,
            method: DistanceMethod::Assignment,
            cap: 2000,
            seed: 42,
        }
    }
}

const MASS_TOL: f64 = 1e-9;

/// CDF of a 1-D measure evaluated with and without the atom at `x`.
struct Cdf1<'a, F> {
    sorted: Vec<(F, F)>, // (position, weight), sorted
    density: Option<&'a [crate::measure::DensityPiece<F>]>,
}

impl<'a, F: Real> Cdf1<'a, F> {
    fn new(mu: &'a Measure<F>) -> Self {
        if let Some(pieces) = mu.density_1d.as_deref() {
            let mut pieces_sorted: Vec<_> = pieces.to_vec();
            pieces_sorted.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
            // the density path ignores particles entirely
            return Cdf1 {
                sorted: Vec::new(),
                density: Some(pieces),
            };
        }
        let mut sorted: Vec<(F, F)> = mu
            .positions
            .iter()
            .zip(&mu.weights)
            .map(|(x, w)| (x[0], *w))
            .collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Cdf1 {
            sorted,
            density: None,
        }
    }

    fn breakpoints(&self) -> Vec<F> {
        match self.density {
            Some(pieces) => {
                let mut xs = Vec::with_capacity(pieces.len() * 2);
                for p in pieces {
                    xs.push(p.lo);
                    xs.push(p.hi);
                }
                xs
            }
            None => self.sorted.iter().map(|&(x, _)| x).collect(),
        }
    }

    /// F(x) = mass of (-inf, x]; `strict` gives the left limit F(x^-).
    fn eval(&self, x: F, strict: bool) -> F {
        match self.density {
            Some(pieces) => {
                let mut m = F::zero();
                for p in pieces {
                    if x <= p.lo {
                        continue;
                    }
                    m += (x.min(p.hi) - p.lo) * p.value;
                }
                m
            }
            None => {
                let mut m = F::zero();
                for &(pos, w) in &self.sorted {
                    let include = if strict { pos < x } else { pos <= x };
                    if include {
                        m += w;
                    } else if pos > x {
                        break;
                    }
                }
                m
            }
        }
    }
}

/// Exact L1 distance between the CDFs of two 1-D measures with equal
/// total mass.
pub fn w1_1d<F: Real>(mu: &Measure<F>, nu: &Measure<F>) -> Result<F> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::UnsupportedDimension {
            required: 1,
            actual: mu.dim.max(nu.dim),
        });
    }
    let ma = mu.total_mass();
    let mb = nu.total_mass();
    if (ma - mb).abs().as_f64() > MASS_TOL {
        return Err(Error::MassMismatch {
            a: ma.as_f64(),
            b: mb.as_f64(),
        });
    }
    let fa = Cdf1::new(mu);
    let fb = Cdf1::new(nu);
    let mut xs: Vec<F> = fa.breakpoints();
    xs.extend(fb.breakpoints());
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 2 {
        return Ok(F::zero());
    }
    let mut total = F::zero();
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        // both CDFs are linear on the open segment: take the right limit
        // at x0 and the left limit at x1
        let d0 = fa.eval(x0, false) - fb.eval(x0, false);
        let d1 = fa.eval(x1, true) - fb.eval(x1, true);
        let len = x1 - x0;
        let seg = if d0 * d1 >= F::zero() {
            len * (d0.abs() + d1.abs()) * F::of(0.5)
        } else {
            // sign change: split at the root of the linear difference
            len * (d0 * d0 + d1 * d1) / ((d1 - d0).abs() * F::of(2.0))
        };
        total += seg;
    }
    Ok(total)
}

/// Exact minimum-cost assignment via shortest augmenting paths
/// (Jonker-Volgenant style, O(n^3)). Returns `col4row`.
fn min_cost_assignment<F: Real>(n: usize, cost: &[F]) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![F::zero(); n];
    let mut v = vec![F::zero(); n];
    let mut path = vec![NONE; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut shortest = vec![F::infinity(); n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        for j in 0..n {
            shortest[j] = F::infinity();
            sc[j] = false;
            remaining[j] = n - 1 - j;
        }
        sr.iter_mut().for_each(|b| *b = false);
        let mut num_remaining = n;
        let mut min_val = F::zero();
        let mut i = cur_row;
        let mut sink = NONE;
        while sink == NONE {
            sr[i] = true;
            let mut lowest = F::infinity();
            let mut index = NONE;
            for it in 0..num_remaining {
                let j = remaining[it];
                let r = min_val + cost[i * n + j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest
                    || (shortest[j] == lowest && row4col[j] == NONE)
                {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            debug_assert!(min_val.is_finite(), "infeasible assignment");
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }
        u[cur_row] += min_val;
        for ii in 0..n {
            if sr[ii] && ii != cur_row {
                u[ii] += min_val - shortest[col4row[ii]];
            }
        }
        for j in 0..n {
            if sc[j] {
                v[j] -= min_val - shortest[j];
            }
        }
        let mut j = sink;
        loop {
            let ii = path[j];
            row4col[j] = ii;
            std::mem::swap(&mut col4row[ii], &mut j);
            if ii == cur_row {
                break;
            }
        }
    }
    col4row
}

fn uniform_equal_weights<F: Real>(mu: &Measure<F>) -> bool {
    match mu.weights.first() {
        None => true,
        Some(&w0) => mu
            .weights
            .iter()
            .all(|&w| (w - w0).abs() <= w0.abs() * F::of(1e-12)),
    }
}

/// Bootstrap-resample a measure to `n` equally weighted particles
/// (a Monte-Carlo approximation for unequal clouds).
pub fn resample<F: Real>(mu: &Measure<F>, n: usize, seed: u64) -> Measure<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = mu.total_mass();
    let mut cum = Vec::with_capacity(mu.len());
    let mut acc = F::zero();
    for &w in &mu.weights {
        acc += w;
        cum.push(acc);
    }
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let target = total * F::of(rng.gen::<f64>());
        let idx = cum.partition_point(|&c| c < target).min(mu.len() - 1);
        positions.push(mu.positions[idx]);
    }
    Measure {
        dim: mu.dim,
        positions,
        weights: vec![total / F::of(n as f64); n],
        density_1d: None,
    }
}

/// W_p via exact min-cost assignment on equally weighted clouds of equal
/// size. Unequal or non-uniform clouds are bootstrap-resampled to a common
/// size first; clouds larger than `params.cap` are rejected.
pub fn wp_assignment<F: Real>(
    mu: &Measure<F>,
    nu: &Measure<F>,
    params: &DistanceParams<F>,
) -> Result<F> {
    let ma = mu.total_mass();
    let mb = nu.total_mass();
    if (ma - mb).abs().as_f64() > MASS_TOL {
        return Err(Error::MassMismatch {
            a: ma.as_f64(),
            b: mb.as_f64(),
        });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::ZeroMass);
    }
    let equal_direct = mu.len() == nu.len()
        && uniform_equal_weights(mu)
        && uniform_equal_weights(nu);
    let (a, b);
    let (xs, ys) = if equal_direct {
        if mu.len() > params.cap {
            return Err(Error::SizeCap {
                len: mu.len(),
                cap: params.cap,
            });
        }
        (&mu.positions, &nu.positions)
    } else {
        let n = mu.len().max(nu.len()).min(params.cap);
        a = resample(mu, n, params.seed);
        b = resample(nu, n, params.seed.wrapping_add(1));
        (&a.positions, &b.positions)
    };
    let n = xs.len();
    let dim = mu.dim;
    let mut cost = vec![F::zero(); n * n];
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            let d = crate::scalar::dist(*x, *y, dim);
            cost[i * n + j] = d.powf(params.p);
        }
    }
    let col4row = min_cost_assignment(n, &cost);
    // sort selected costs before summing so the result is symmetric in
    // the argument order
    let mut picked: Vec<F> = (0..n).map(|i| cost[i * n + col4row[i]]).collect();
    picked.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean: F = picked.iter().copied().sum::<F>() / F::of(n as f64);
    Ok(mean.powf(F::one() / params.p))
}

/// W_p for matched-mass (not necessarily probability) measures via the
/// scalar rescaling `W_p(mu, nu) = |mu|^{1/p} W_p(mu/|mu|, nu/|nu|)`.
pub fn rescaled_distance<F: Real>(
    mu: &Measure<F>,
    nu: &Measure<F>,
    params: &DistanceParams<F>,
) -> Result<F> {
    let ma = mu.total_mass();
    let mb = nu.total_mass();
    if ma <= F::zero() || mb <= F::zero() {
        return Err(Error::ZeroMass);
    }
    if (ma - mb).abs().as_f64() > MASS_TOL {
        return Err(Error::MassMismatch {
            a: ma.as_f64(),
            b: mb.as_f64(),
        });
    }
    let pa = mu.normalized()?;
    let pb = nu.normalized()?;
    let base = match params.method {
        DistanceMethod::Quantile1d => w1_1d(&pa, &pb)?,
        DistanceMethod::Assignment => wp_assignment(&pa, &pb, params)?,
    };
    Ok(ma.powf(F::one() / params.p) * base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DensityPiece;
    use rand::Rng;

    fn cloud_1d(xs: &[f64]) -> Measure<f64> {
        let n = xs.len();
        Measure::from_particles(
            1,
            xs.iter().map(|&x| [x, 0.0]).collect(),
            vec![1.0 / n as f64; n],
        )
    }

    fn brute_force_wp(xs: &[[f64; 2]], ys: &[[f64; 2]], dim: usize, p: f64) -> f64 {
        // exhaustive minimum over all assignments (test oracle)
        fn go(
            xs: &[[f64; 2]],
            ys: &[[f64; 2]],
            dim: usize,
            p: f64,
            used: &mut Vec<bool>,
            i: usize,
            acc: f64,
            best: &mut f64,
        ) {
            if i == xs.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..ys.len() {
                if !used[j] {
                    used[j] = true;
                    let c = crate::scalar::dist(xs[i], ys[j], dim).powf(p);
                    go(xs, ys, dim, p, used, i + 1, acc + c, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut used = vec![false; ys.len()];
        go(xs, ys, dim, p, &mut used, 0, 0.0, &mut best);
        (best / xs.len() as f64).powf(1.0 / p)
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let mu = cloud_1d(&[0.1, 0.4, 0.9]);
        assert_eq!(w1_1d(&mu, &mu).unwrap(), 0.0);
        let params = DistanceParams::assignment(1.0);
        assert_eq!(wp_assignment(&mu, &mu, &params).unwrap(), 0.0);
    }

    #[test]
    fn unit_translation_has_distance_one() {
        let mu = cloud_1d(&[0.0, 0.25, 0.5, 0.75]);
        let nu = cloud_1d(&[1.0, 1.25, 1.5, 1.75]);
        assert!((w1_1d(&mu, &nu).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_vs_stretched_density_is_half() {
        // derived: int |F - G| = int_0^1 x/2 dx + int_1^2 (1 - x/2) dx = 1/2
        let mu = Measure::<f64>::from_density_1d(
            vec![DensityPiece {
                lo: 0.0,
                hi: 1.0,
                value: 1.0,
            }],
            100,
        )
        .unwrap();
        let nu = Measure::<f64>::from_density_1d(
            vec![DensityPiece {
                lo: 0.0,
                hi: 2.0,
                value: 0.5,
            }],
            100,
        )
        .unwrap();
        assert!((w1_1d(&mu, &nu).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let mu = cloud_1d(&[0.0, 1.0]);
        let mut nu = cloud_1d(&[0.0, 1.0]);
        nu.weights[0] = 0.8;
        assert!(matches!(
            w1_1d(&mu, &nu),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn point_masses_at_unit_separation() {
        let mu = cloud_1d(&[0.0]);
        let nu = cloud_1d(&[1.0]);
        let params = DistanceParams::assignment(1.0);
        assert_eq!(wp_assignment(&mu, &nu, &params).unwrap(), 1.0);
    }

    #[test]
    fn assignment_matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..40 {
            let n = 2 + (trial % 6);
            let dim = if trial % 2 == 0 { 1 } else { 2 };
            let mk = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
                (0..n)
                    .map(|_| {
                        [
                            rng.gen::<f64>() * 4.0 - 2.0,
                            if dim == 2 {
                                rng.gen::<f64>() * 4.0 - 2.0
                            } else {
                                0.0
                            },
                        ]
                    })
                    .collect()
            };
            let xs = mk(&mut rng);
            let ys = mk(&mut rng);
            let p = if trial % 3 == 0 { 2.0 } else { 1.0 };
            let mu = Measure::from_particles(dim, xs.clone(), vec![1.0 / n as f64; n]);
            let nu = Measure::from_particles(dim, ys.clone(), vec![1.0 / n as f64; n]);
            let params = DistanceParams::assignment(p);
            let got = wp_assignment(&mu, &nu, &params).unwrap();
            let want = brute_force_wp(&xs, &ys, dim, p);
            assert!(
                (got - want).abs() < 1e-12,
                "trial {trial}: got {got} want {want}"
            );
        }
    }

    #[test]
    fn quantile_matches_assignment_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let n = 30;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0 + 0.5).collect();
            let mu = cloud_1d(&xs);
            let nu = cloud_1d(&ys);
            let a = w1_1d(&mu, &nu).unwrap();
            let b = wp_assignment(&mu, &nu, &DistanceParams::assignment(1.0)).unwrap();
            assert!((a - b).abs() < 1e-9, "quantile {a} vs assignment {b}");
        }
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = DistanceParams::assignment(1.0);
        for _ in 0..15 {
            let n = 12;
            let mk = |rng: &mut ChaCha8Rng| {
                let pos: Vec<[f64; 2]> = (0..n)
                    .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
                    .collect();
                Measure::from_particles(2, pos, vec![1.0 / n as f64; n])
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            let dab = wp_assignment(&a, &b, &params).unwrap();
            let dba = wp_assignment(&b, &a, &params).unwrap();
            assert_eq!(dab, dba, "symmetry must be exact");
            let dac = wp_assignment(&a, &c, &params).unwrap();
            let dcb = wp_assignment(&c, &b, &params).unwrap();
            assert!(dab <= dac + dcb + 1e-9, "triangle inequality violated");
            assert_eq!(wp_assignment(&a, &a, &params).unwrap(), 0.0);
        }
    }

    #[test]
    fn rescaled_distance_on_probability_inputs_is_plain_wp() {
        let mu = cloud_1d(&[0.0, 0.5]);
        let nu = cloud_1d(&[1.0, 1.5]);
        let params = DistanceParams::w1_quantile();
        let plain = w1_1d(&mu, &nu).unwrap();
        let scaled = rescaled_distance(&mu, &nu, &params).unwrap();
        assert!((plain - scaled).abs() < 1e-12);
    }

    #[test]
    fn rescaled_distance_quarter_mass() {
        // both masses 0.25, supports translated by 1, p = 1: 0.25 * 1
        let mut mu = cloud_1d(&[0.0, 0.1]);
        let mut nu = cloud_1d(&[1.0, 1.1]);
        for w in mu.weights.iter_mut().chain(nu.weights.iter_mut()) {
            *w = 0.125;
        }
        let params = DistanceParams::w1_quantile();
        let d = rescaled_distance(&mu, &nu, &params).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rescaled_distance_p2_scaling() {
        // mass-4 pair at p = 2 doubles the normalized distance
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 10;
        let pos_a: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), 0.0]).collect();
        let pos_b: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>() + 2.0, 0.0]).collect();
        let mu4 = Measure::from_particles(1, pos_a.clone(), vec![0.4; n]);
        let nu4 = Measure::from_particles(1, pos_b.clone(), vec![0.4; n]);
        let params = DistanceParams::assignment(2.0);
        let normalized = wp_assignment(
            &mu4.normalized().unwrap(),
            &nu4.normalized().unwrap(),
            &params,
        )
        .unwrap();
        let scaled = rescaled_distance(&mu4, &nu4, &params).unwrap();
        assert!((scaled - 2.0 * normalized).abs() < 1e-9);
    }

    #[test]
    fn zero_mass_is_rejected() {
        let mu = Measure::<f64>::from_particles(1, vec![[0.0, 0.0]], vec![0.0]);
        let nu = mu.clone();
        assert!(matches!(
            rescaled_distance(&mu, &nu, &DistanceParams::w1_quantile()),
            Err(Error::ZeroMass)
        ));
    }

    #[test]
    fn size_cap_is_enforced() {
        let n = 50;
        let mu = cloud_1d(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
        let nu = cloud_1d(&(0..n).map(|i| i as f64 + 0.5).collect::<Vec<_>>());
        let mut params = DistanceParams::assignment(1.0);
        params.cap = 10;
        assert!(matches!(
            wp_assignment(&mu, &nu, &params),
            Err(Error::SizeCap { len: 50, cap: 10 })
        ));
    }
}
