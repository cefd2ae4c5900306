//! Two-tissue compartment model: input functions, tissue curves and frame
//! integration.
//!
//! Times are in minutes throughout. Rate constants are per minute and `K1`
//! is in mL/min/g.

mod compartment;
mod curve;
mod frames;
mod input;
mod params;
mod schedule;

pub use compartment::{
    beta_roots, compartment_ode_solve, ct_analytic, ct_on_grid, CompartmentCurves, MAX_ODE_STEP,
};
pub use curve::{cumulative_trapezoid, uniform_grid, TimeActivityCurve, DEFAULT_STEPS_PER_MIN};
pub(crate) use curve::{interpolate, running_integral};
pub use frames::{frame_activity, FrameModel};
pub use input::{feng_input, feng_input_raw, FengCoefficients, InputCurve, InputFunction};
pub use params::{KineticParams, Tracer};
pub use schedule::FrameSchedule;
