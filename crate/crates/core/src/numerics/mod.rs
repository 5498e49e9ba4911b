//! Torus grids, grid densities and the deterministic PDE engines.

pub mod fokker_planck;
pub mod gauge;
pub mod grid;
pub mod tridiag;

pub use fokker_planck::{
    fokker_planck_step, Direction, FokkerPlanckPropagator, NodeCoefficients, Scheme, StepTelemetry,
};
pub use gauge::{gauge_coefficients, solve_gauge_pde, GaugeFields, GaugeGeometry};
pub use grid::{density_from_samples, project_to_torus, GridDensity, GridField, TorusGrid};
pub use tridiag::{CyclicFactor, CyclicTridiagonal};
