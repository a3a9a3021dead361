//! Calculus of variations and optimal control on finite time scales.
//!
//! * [`timescale`]: jump operators, Δ-derivatives and Δ-integrals.
//! * [`expr`]: Lagrangian expressions with exact first partials.
//! * [`variational`]: the basic problem, its solver and Euler-Lagrange checks.
//! * [`control`]: Lagrange problems, costates and the weak maximum principle.
//! * [`higher_order`]: problems with higher Δ-derivatives.
//! * [`oracle`]: independent brute-force, KKT and finite-difference checks.
//! * [`refine`]: convergence studies on uniform scales.
//! * [`io`]: versioned JSON problem and report schemas.

pub mod control;
pub mod error;
pub mod expr;
pub mod higher_order;
pub mod io;
pub mod linalg;
pub mod optimize;
pub mod oracle;
pub mod parallel;
pub mod refine;
pub mod report;
pub mod timescale;
pub mod variational;

pub use control::{Boundary, ControlProblem, ControlSolution, CostateTrajectory, WmpReport};
pub use error::{Error, Result};
pub use expr::{Arity, EvalPoint, LagrangianExpr};
pub use higher_order::{HigherOrderProblem, HoSolution};
pub use io::{ProblemFile, ProblemSpec, ReportFile, SCHEMA};
pub use oracle::{GridAxis, GridSearchSpec, OracleProblem};
pub use report::Check;
pub use timescale::{GridFunction, Jumps, TimeScale};
pub use variational::{BasicProblem, End, ExtremalReport, Form};
