//! Simulation and control synthesis for the controlled continuity
//! equation on measures.
//!
//! The crate solves the transport PDE by pushing weighted particle
//! ensembles along characteristic flows, computes Wasserstein distances
//! exactly (1-D quantile formula, small-instance assignment), synthesizes
//! steering controls supported in a fixed control region (moving-cell
//! transport, mass storage, barrier confinement, rarefaction windows, and
//! their five-phase concatenation), and estimates minimal steering
//! horizons from the mass-flux balance.
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! concrete `f64` aliases are exported below.

pub mod control;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod measure;
pub mod mintime;
pub mod rarefaction;
pub mod region;
pub mod scalar;
pub mod wasserstein;

pub use error::{Error, Result, Side};
pub use scalar::{Coords, Real};

/// Concrete `f64` instantiations of the core types.
pub type Measure64 = measure::Measure<f64>;
pub type Region64 = region::Region<f64>;
pub type BoxRegion64 = region::BoxRegion<f64>;
pub type VectorField64 = field::VectorField<f64>;
pub type FieldSpec64 = field::FieldSpec<f64>;
pub type FlowParams64 = flow::FlowParams<f64>;
pub type ControlSchedule64 = control::ControlSchedule<f64>;
pub type GridDecomposition64 = grid::GridDecomposition<f64>;
pub type DistanceParams64 = wasserstein::DistanceParams<f64>;

#[cfg(test)]
mod scalar_generic_tests {
    use super::*;
    use crate::field::VectorField;
    use crate::flow::{flow_map, FlowParams};

    // the numerical core must compile and run at f32 as well
    #[test]
    fn flow_runs_at_single_precision() {
        let w = VectorField::<f32>::constant([1.0, 0.0]);
        let p = FlowParams::new(1e-3f32);
        let x = flow_map(&w, [0.0, 0.0], 0.0, 2.0, p).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn wasserstein_runs_at_single_precision() {
        let mu = measure::Measure::<f32>::from_particles(
            1,
            vec![[0.0, 0.0], [0.5, 0.0]],
            vec![0.5, 0.5],
        );
        let nu = measure::Measure::<f32>::from_particles(
            1,
            vec![[1.0, 0.0], [1.5, 0.0]],
            vec![0.5, 0.5],
        );
        let d = wasserstein::w1_1d(&mu, &nu).unwrap();
        assert!((d - 1.0).abs() < 1e-5);
    }
}
