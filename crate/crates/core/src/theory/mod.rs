//! Probes of the theoretical claims behind the method.
//!
//! * Best-of-N gain: Monte-Carlo estimates of `E[max_i Q(a_i)] − V` and
//!   checks that it is zero for one candidate, non-negative and
//!   non-decreasing in N.
//! * Multiplicity: the mean-flow identity alone admits every
//!   `u* + C/(r − t)`; [`multiplicity_probe`] fits a model's deviation from
//!   the exact field to that family.
//! * Boundary: [`boundary_error`] measures `u(a, t, t) − v(a, t)`, the term
//!   the boundary loss drives to zero and that fixes `C = 0`.

mod gain;
mod probes;

use serde::{Deserialize, Serialize};

pub use gain::{
    check_gain_properties, estimate_gain, expected_max_of_two_normals, GainEstimate, GainReport,
    MIN_GAIN_SAMPLES,
};
pub use probes::{
    boundary_error, fitting_error_diagnostics, grid_mse, identity_residual, monte_carlo_q,
    multiplicity_probe, FitDiagnostics, InjectedField, MultiplicityFit, MultiplicityGrid,
    OffsetField, OracleGrid, SliceFit, NORMAL_DECILES,
};

/// A probe outcome as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub inputs: serde_json::Value,
    pub estimates: serde_json::Value,
    pub pass: bool,
}
