//! Quantile grid decomposition of a measure with inner cell margins.
//!
//! A cloud of mass 1 is split into `n` strips of mass `1/n` along the
//! first axis and, in 2-D, each strip into `n` cells of mass `1/n²` along
//! the second axis. Break values are empirical quantiles with
//! smallest-value semantics, ties broken by the lower particle position.
//! Margins then carve an inner box out of every cell so that transport
//! maps built on the inner boxes do not shear across cell interfaces:
//! each horizontal margin strip carries mass `1/n³` and each vertical one
//! `(1/n)·(1/n² − 2/n³)`, leaving `(n−2)²/n⁴` in the inner box (masses
//! quoted relative to a unit-mass cloud; sub-probability clouds scale).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::scalar::Real;

/// 1-D decomposition: strips of mass `total/n` with per-cell margins of
/// mass `total/n²` on each side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid1<F> {
    pub n: usize,
    /// Strip breakpoints, length `n + 1`.
    pub breaks: Vec<F>,
    /// Inner interval `[margin_lo[i], margin_hi[i]]` per cell, once margins
    /// are computed.
    pub margin_lo: Vec<F>,
    pub margin_hi: Vec<F>,
}

/// 2-D decomposition with per-column row breaks and per-cell margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid2<F> {
    pub n: usize,
    /// Column breakpoints `a_i`, length `n + 1`.
    pub cols: Vec<F>,
    /// Row breakpoints per column, `n` rows of length `n + 1`.
    pub rows: Vec<Vec<F>>,
    /// Per-cell margins, `n x n`, filled by [`inner_cell_margins`].
    pub col_lo: Vec<Vec<F>>,
    pub col_hi: Vec<Vec<F>>,
    pub row_lo: Vec<Vec<F>>,
    pub row_hi: Vec<Vec<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum GridDecomposition<F> {
    OneD(Grid1<F>),
    TwoD(Grid2<F>),
}

impl<F: Real> GridDecomposition<F> {
    pub fn n(&self) -> usize {
        match self {
            GridDecomposition::OneD(g) => g.n,
            GridDecomposition::TwoD(g) => g.n,
        }
    }

    pub fn has_margins(&self) -> bool {
        match self {
            GridDecomposition::OneD(g) => !g.margin_lo.is_empty(),
            GridDecomposition::TwoD(g) => !g.col_lo.is_empty(),
        }
    }

    /// Smallest margin strip width over all cells and sides.
    pub fn min_margin_width(&self) -> F {
        let mut m = F::infinity();
        match self {
            GridDecomposition::OneD(g) => {
                for i in 0..g.n {
                    m = m
                        .min(g.margin_lo[i] - g.breaks[i])
                        .min(g.breaks[i + 1] - g.margin_hi[i]);
                }
            }
            GridDecomposition::TwoD(g) => {
                for i in 0..g.n {
                    for j in 0..g.n {
                        m = m
                            .min(g.col_lo[i][j] - g.cols[i])
                            .min(g.cols[i + 1] - g.col_hi[i][j])
                            .min(g.row_lo[i][j] - g.rows[i][j])
                            .min(g.rows[i][j + 1] - g.row_hi[i][j]);
                    }
                }
            }
        }
        m
    }
}

/// Indices of a cloud, sorted by weight-cumulative split into `n` groups
/// along `axis`. Returns the sorted index list plus group boundaries.
fn weighted_split<F: Real>(
    positions: &[[F; 2]],
    weights: &[F],
    indices: &[usize],
    axis: usize,
    n: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_by(|&a, &b| {
        positions[a][axis]
            .partial_cmp(&positions[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let total: F = sorted.iter().map(|&i| weights[i]).sum();
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(0usize);
    let mut cum = F::zero();
    let mut next_target = total / F::of(n as f64);
    let mut group = 1usize;
    for (pos, &idx) in sorted.iter().enumerate() {
        cum += weights[idx];
        while group < n && cum >= next_target - total * F::of(1e-12) {
            bounds.push(pos + 1);
            group += 1;
            next_target = total * F::of(group as f64) / F::of(n as f64);
        }
    }
    while bounds.len() < n + 1 {
        bounds.push(sorted.len());
    }
    bounds[n] = sorted.len();
    (sorted, bounds)
}

fn strictly_increasing<F: Real>(xs: &[F]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Build the one-sided quantile grid for `mu` with `n` subdivisions.
///
/// Works for dimension 1 and 2. Fails with `DegenerateMeasure` when a
/// required quantile is not strictly increasing (atomic concentration).
pub fn quantile_grid_decompose<F: Real>(mu: &Measure<F>, n: usize) -> Result<GridDecomposition<F>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if mu.is_empty() {
        return Err(Error::ZeroMass);
    }
    let all: Vec<usize> = (0..mu.len()).collect();
    match mu.dim {
        1 => {
            let (sorted, bounds) = weighted_split(&mu.positions, &mu.weights, &all, 0, n);
            let mut breaks = Vec::with_capacity(n + 1);
            breaks.push(mu.positions[sorted[0]][0]);
            for b in bounds.iter().take(n).skip(1) {
                if *b >= sorted.len() {
                    return Err(Error::DegenerateMeasure(
                        "not enough distinct particles for quantile grid".into(),
                    ));
                }
                breaks.push(mu.positions[sorted[*b]][0]);
            }
            breaks.push(mu.positions[*sorted.last().unwrap()][0]);
            if !strictly_increasing(&breaks) {
                return Err(Error::DegenerateMeasure(
                    "1-D quantile breakpoints not strictly increasing".into(),
                ));
            }
            Ok(GridDecomposition::OneD(Grid1 {
                n,
                breaks,
                margin_lo: Vec::new(),
                margin_hi: Vec::new(),
            }))
        }
        2 => {
            let (sorted, bounds) = weighted_split(&mu.positions, &mu.weights, &all, 0, n);
            let mut cols = Vec::with_capacity(n + 1);
            cols.push(mu.positions[sorted[0]][0]);
            for b in bounds.iter().take(n).skip(1) {
                cols.push(mu.positions[sorted[*b]][0]);
            }
            cols.push(mu.positions[*sorted.last().unwrap()][0]);
            if !strictly_increasing(&cols) {
                return Err(Error::DegenerateMeasure(
                    "column breakpoints not strictly increasing".into(),
                ));
            }
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let col_idx = &sorted[bounds[i]..bounds[i + 1]];
                if col_idx.is_empty() {
                    return Err(Error::DegenerateMeasure(format!("empty column {i}")));
                }
                let (csorted, cbounds) =
                    weighted_split(&mu.positions, &mu.weights, col_idx, 1, n);
                let mut r = Vec::with_capacity(n + 1);
                r.push(mu.positions[csorted[0]][1]);
                for b in cbounds.iter().take(n).skip(1) {
                    if *b >= csorted.len() {
                        return Err(Error::DegenerateMeasure(format!(
                            "not enough particles in column {i}"
                        )));
                    }
                    r.push(mu.positions[csorted[*b]][1]);
                }
                r.push(mu.positions[*csorted.last().unwrap()][1]);
                if !strictly_increasing(&r) {
                    return Err(Error::DegenerateMeasure(format!(
                        "row breakpoints in column {i} not strictly increasing"
                    )));
                }
                rows.push(r);
            }
            Ok(GridDecomposition::TwoD(Grid2 {
                n,
                cols,
                rows,
                col_lo: Vec::new(),
                col_hi: Vec::new(),
                row_lo: Vec::new(),
                row_hi: Vec::new(),
            }))
        }
        d => Err(Error::UnsupportedDimension {
            required: 2,
            actual: d,
        }),
    }
}

/// Quantile position within `slice` (already sorted by `axis`) such that at
/// least `count` particles lie strictly before it.
fn nth_position<F: Real>(positions: &[[F; 2]], sorted: &[usize], axis: usize, count: usize) -> F {
    let k = count.min(sorted.len() - 1);
    positions[sorted[k]][axis]
}

/// Fill per-cell inner margins on a grid produced by
/// [`quantile_grid_decompose`] over the same measure.
pub fn inner_cell_margins<F: Real>(
    mu: &Measure<F>,
    grid: &GridDecomposition<F>,
) -> Result<GridDecomposition<F>> {
    let n = grid.n();
    if n < 3 {
        return Err(Error::MarginCollapse { n });
    }
    let all: Vec<usize> = (0..mu.len()).collect();
    match grid {
        GridDecomposition::OneD(g) => {
            let (sorted, bounds) = weighted_split(&mu.positions, &mu.weights, &all, 0, n);
            let mut margin_lo = Vec::with_capacity(n);
            let mut margin_hi = Vec::with_capacity(n);
            for i in 0..n {
                let cell = &sorted[bounds[i]..bounds[i + 1]];
                let cnt = cell.len();
                // margin fraction 1/n of the cell on each side, mirroring
                // the 2-D margin-to-cell mass ratio
                let m = (cnt as f64 / n as f64).round().max(1.0) as usize;
                if 2 * m + 1 >= cnt {
                    return Err(Error::DegenerateMeasure(format!(
                        "cell {i} too sparse for margins ({cnt} particles)"
                    )));
                }
                let lo = nth_position(&mu.positions, cell, 0, m);
                let hi = nth_position(&mu.positions, cell, 0, cnt - 1 - m);
                if !(g.breaks[i] < lo && lo < hi && hi < g.breaks[i + 1]) {
                    return Err(Error::DegenerateMeasure(format!(
                        "margins of cell {i} not strictly ordered"
                    )));
                }
                margin_lo.push(lo);
                margin_hi.push(hi);
            }
            Ok(GridDecomposition::OneD(Grid1 {
                n,
                breaks: g.breaks.clone(),
                margin_lo,
                margin_hi,
            }))
        }
        GridDecomposition::TwoD(g) => {
            let (sorted, bounds) = weighted_split(&mu.positions, &mu.weights, &all, 0, n);
            let mut col_lo = vec![Vec::with_capacity(n); n];
            let mut col_hi = vec![Vec::with_capacity(n); n];
            let mut row_lo = vec![Vec::with_capacity(n); n];
            let mut row_hi = vec![Vec::with_capacity(n); n];
            for i in 0..n {
                let col_idx = &sorted[bounds[i]..bounds[i + 1]];
                let (csorted, cbounds) =
                    weighted_split(&mu.positions, &mu.weights, col_idx, 1, n);
                for j in 0..n {
                    let cell: Vec<usize> = csorted[cbounds[j]..cbounds[j + 1]].to_vec();
                    let cnt = cell.len();
                    let m = (cnt as f64 / n as f64).round().max(1.0) as usize;
                    if 2 * m + 1 >= cnt {
                        return Err(Error::DegenerateMeasure(format!(
                            "cell ({i},{j}) too sparse for margins ({cnt} particles)"
                        )));
                    }
                    // horizontal margins: 1/n of the cell mass off each x1 side
                    let mut by_x1 = cell.clone();
                    by_x1.sort_by(|&a, &b| {
                        mu.positions[a][0]
                            .partial_cmp(&mu.positions[b][0])
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                    let a_lo = nth_position(&mu.positions, &by_x1, 0, m);
                    let a_hi = nth_position(&mu.positions, &by_x1, 0, cnt - 1 - m);
                    if !(g.cols[i] < a_lo && a_lo < a_hi && a_hi < g.cols[i + 1]) {
                        return Err(Error::DegenerateMeasure(format!(
                            "column margins of cell ({i},{j}) not strictly ordered"
                        )));
                    }
                    // vertical margins: 1/n of the remaining inner-column mass
                    let inner: Vec<usize> = by_x1[m..cnt - m].to_vec();
                    let mut by_x2 = inner.clone();
                    by_x2.sort_by(|&a, &b| {
                        mu.positions[a][1]
                            .partial_cmp(&mu.positions[b][1])
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                    let icnt = by_x2.len();
                    let mv = (icnt as f64 / n as f64).round().max(1.0) as usize;
                    if 2 * mv + 1 >= icnt {
                        return Err(Error::DegenerateMeasure(format!(
                            "cell ({i},{j}) too sparse for vertical margins"
                        )));
                    }
                    let b_lo = nth_position(&mu.positions, &by_x2, 1, mv);
                    let b_hi = nth_position(&mu.positions, &by_x2, 1, icnt - 1 - mv);
                    if !(g.rows[i][j] < b_lo && b_lo < b_hi && b_hi < g.rows[i][j + 1]) {
                        return Err(Error::DegenerateMeasure(format!(
                            "row margins of cell ({i},{j}) not strictly ordered"
                        )));
                    }
                    col_lo[i].push(a_lo);
                    col_hi[i].push(a_hi);
                    row_lo[i].push(b_lo);
                    row_hi[i].push(b_hi);
                }
            }
            Ok(GridDecomposition::TwoD(Grid2 {
                n,
                cols: g.cols.clone(),
                rows: g.rows.clone(),
                col_lo,
                col_hi,
                row_lo,
                row_hi,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{BoxRegion, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_square(n_particles: usize, seed: u64) -> Measure<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Measure::uniform_box(2, [0.0, 0.0], [1.0, 1.0], n_particles, 1.0, &mut rng)
    }

    fn cell_mass(mu: &Measure<f64>, g: &Grid2<f64>, i: usize, j: usize) -> f64 {
        let r = Region::from_box(BoxRegion {
            dim: 2,
            lo: [g.cols[i], g.rows[i][j]],
            hi: [g.cols[i + 1], g.rows[i][j + 1]],
            lo_closed: [i == 0, j == 0],
            hi_closed: [true, true],
        });
        mu.mass_in(&r)
    }

    #[test]
    fn single_cell_trivial() {
        let mu = uniform_square(2000, 1);
        let g = quantile_grid_decompose(&mu, 1).unwrap();
        match g {
            GridDecomposition::TwoD(g) => {
                assert_eq!(g.cols.len(), 2);
                assert!(g.cols[0] < 0.01 && g.cols[1] > 0.99);
            }
            _ => panic!("expected 2-D grid"),
        }
    }

    #[test]
    fn uniform_n2_breaks_match_cdf_inversion() {
        // oracle: exact CDF inversion of the uniform law puts breaks at 0.5
        let mu = uniform_square(40_000, 2);
        let g = quantile_grid_decompose(&mu, 2).unwrap();
        if let GridDecomposition::TwoD(g) = g {
            assert!((g.cols[1] - 0.5).abs() < 0.02);
            for rows in &g.rows {
                assert!((rows[1] - 0.5).abs() < 0.02);
            }
        } else {
            panic!("expected 2-D grid");
        }
    }

    #[test]
    fn every_cell_carries_equal_mass() {
        let n = 5;
        let n_particles = 50_000;
        let mu = uniform_square(n_particles, 3);
        let g = quantile_grid_decompose(&mu, n).unwrap();
        if let GridDecomposition::TwoD(g) = g {
            let target = 1.0 / (n * n) as f64;
            let tol = 4.0 / n_particles as f64 + 1e-12;
            for i in 0..n {
                for j in 0..n {
                    // mass by particle count in the half-open cell
                    let m = cell_mass(&mu, &g, i, j);
                    assert!(
                        (m - target).abs() < tol * (n as f64),
                        "cell ({i},{j}) mass {m} vs {target}"
                    );
                }
            }
            let sum: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| cell_mass(&mu, &g, i, j))
                .sum();
            assert!((sum - 1.0).abs() < (n * n) as f64 * tol);
        }
    }

    #[test]
    fn margin_strip_mass_and_positions() {
        let n = 4;
        let n_particles = 80_000;
        let mu = uniform_square(n_particles, 4);
        let g = quantile_grid_decompose(&mu, n).unwrap();
        let g = inner_cell_margins(&mu, &g).unwrap();
        let g = match g {
            GridDecomposition::TwoD(g) => g,
            _ => panic!(),
        };
        let n3 = 1.0 / (n as f64).powi(3);
        for i in 0..n {
            for j in 0..n {
                // analytic margins of the uniform: a_i^- = i/n + 1/n^2
                let expect_lo = i as f64 / n as f64 + 1.0 / (n as f64).powi(2);
                assert!(
                    (g.col_lo[i][j] - expect_lo).abs() < 0.012,
                    "cell ({i},{j}) col_lo {} vs {}",
                    g.col_lo[i][j],
                    expect_lo
                );
                // horizontal margin strip carries 1/n^3
                let strip = Region::from_box(BoxRegion {
                    dim: 2,
                    lo: [g.cols[i], g.rows[i][j]],
                    hi: [g.col_lo[i][j], g.rows[i][j + 1]],
                    lo_closed: [true, true],
                    hi_closed: [false, false],
                });
                let m = mu.mass_in(&strip);
                assert!(
                    (m - n3).abs() < 0.3 * n3,
                    "margin strip mass {m} vs {n3} at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn inner_box_mass_matches_formula() {
        let n = 4;
        let mu = uniform_square(80_000, 5);
        let g = quantile_grid_decompose(&mu, n).unwrap();
        let g = inner_cell_margins(&mu, &g).unwrap();
        let g = match g {
            GridDecomposition::TwoD(g) => g,
            _ => panic!(),
        };
        let expect = ((n - 2) * (n - 2)) as f64 / (n as f64).powi(4);
        for i in 0..n {
            for j in 0..n {
                let inner = Region::from_box(BoxRegion::closed(
                    2,
                    [g.col_lo[i][j], g.row_lo[i][j]],
                    [g.col_hi[i][j], g.row_hi[i][j]],
                ));
                let m = mu.mass_in(&inner);
                assert!(
                    (m - expect).abs() < 0.15 * expect,
                    "inner box mass {m} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn margins_strictly_inside_cells() {
        let mu = uniform_square(30_000, 6);
        let g = quantile_grid_decompose(&mu, 3).unwrap();
        let g = inner_cell_margins(&mu, &g).unwrap();
        if let GridDecomposition::TwoD(g) = &g {
            for i in 0..3 {
                for j in 0..3 {
                    assert!(g.cols[i] < g.col_lo[i][j]);
                    assert!(g.col_lo[i][j] < g.col_hi[i][j]);
                    assert!(g.col_hi[i][j] < g.cols[i + 1]);
                    assert!(g.rows[i][j] < g.row_lo[i][j]);
                    assert!(g.row_hi[i][j] < g.rows[i][j + 1]);
                }
            }
        }
        assert!(g.min_margin_width() > 0.0);
    }

    #[test]
    fn margin_collapse_below_three() {
        let mu = uniform_square(5_000, 7);
        let g = quantile_grid_decompose(&mu, 2).unwrap();
        match inner_cell_margins(&mu, &g) {
            Err(Error::MarginCollapse { n: 2 }) => {}
            other => panic!("expected MarginCollapse, got {other:?}"),
        }
    }

    #[test]
    fn atomic_measure_degenerates() {
        let positions = vec![[0.5f64, 0.5]; 100];
        let weights = vec![0.01; 100];
        let mu = Measure::from_particles(2, positions, weights);
        assert!(matches!(
            quantile_grid_decompose(&mu, 2),
            Err(Error::DegenerateMeasure(_))
        ));
    }

    #[test]
    fn one_dimensional_grid_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu = Measure::<f64>::uniform_box(1, [0.0, 0.0], [1.0, 0.0], 40_000, 1.0, &mut rng);
        let g = quantile_grid_decompose(&mu, 4).unwrap();
        let g = inner_cell_margins(&mu, &g).unwrap();
        if let GridDecomposition::OneD(g) = g {
            for i in 0..4 {
                assert!(g.breaks[i] < g.margin_lo[i]);
                assert!(g.margin_lo[i] < g.margin_hi[i]);
                assert!(g.margin_hi[i] < g.breaks[i + 1]);
                // margin carries 1/n of the cell: width 1/n^2 for uniform
                let w = g.margin_lo[i] - g.breaks[i];
                assert!((w - 1.0 / 16.0).abs() < 0.015, "margin width {w}");
            }
        } else {
            panic!("expected 1-D grid");
        }
    }
}
