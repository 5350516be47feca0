//! Dissipation-optimal motion planning for slender elastic bodies.
//!
//! A body is modeled as a polygonal curve in the plane or in space. Moving
//! the curve through a viscous medium costs energy through an anisotropic
//! drag law (cheap to slide along the body axis, expensive to push sideways)
//! plus an internal cost for bending and stretching the shape itself. A
//! motion is a sequence of curve frames; its total cost is a discrete
//! dissipation energy summed over time intervals.
//!
//! Self-propulsion enters through per-interval momentum balance: a free
//! swimmer cannot apply net force or torque on itself, so admissible motions
//! satisfy one linear-momentum and one angular-momentum condition per time
//! step. Energy-optimal strokes are minimizers of the dissipation energy
//! subject to these momentum constraints and to boundary conditions (fixed
//! end shapes, a prescribed rigid displacement per cycle, or a prescribed
//! net displacement with free end shape).
//!
//! Module map:
//! - [`geometry`]: polygonal curves, rigid motions, registration.
//! - [`dissipation`]: drag tensors, energies, analytic gradient and Hessian.
//! - [`constraints`]: momentum, boundary, anchoring, and length constraints.
//! - [`solver`]: constrained minimization, time refinement, horizontal lift.
//! - [`problems`]: ready-made problem setups (swimmer presets, wave gaits).

pub mod constraints;
pub mod dissipation;
pub mod geometry;
pub mod problems;
pub mod solver;
pub mod sparse;

pub(crate) mod vecmath;
pub(crate) mod window;

pub use geometry::{GeometryError, MotionPath, Polyline, Registration, RigidMotion};
