//! Structural analysis and index reduction for differential-algebraic
//! equations whose system Jacobian is singular on the solution set.
//!
//! The pieces, in pipeline order:
//!
//! - [`model_io`]: model language, initial points, CSV and JSON output;
//! - [`expr`]: expression trees over jet variables, total derivatives;
//! - [`structural`]: signature matrix, offsets, prolongation;
//! - [`witness`]: real points on each component of the constraints;
//! - [`ire`]: rank test at a point and the embedding loop;
//! - [`solver`]: projected RK4 and the per-component driver;
//! - [`cli`]: the `ire-dae` binary.
//!
//! ```
//! use ire_dae::model_io::parse_model;
//! use ire_dae::structural::{signature_matrix, solve_assignment};
//!
//! let sys = parse_model("var x, y; x'' + y = 0; x^2 + y - 1 = 0;").unwrap();
//! let sol = solve_assignment(&signature_matrix(&sys.equations, sys.n())).unwrap();
//! assert_eq!(sol.delta, 2);
//! ```
//!
//! The guide in `book/` walks through each stage; its snippets run as
//! doctests.

pub mod cli;
pub mod expr;
pub mod ire;
pub mod model_io;
pub mod numkernel;
pub mod solver;
pub mod structural;
pub mod witness;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/structural.md")]
    mod structural {}
    #[doc = include_str!("../../../book/src/degeneration.md")]
    mod degeneration {}
    #[doc = include_str!("../../../book/src/reduction.md")]
    mod reduction {}
    #[doc = include_str!("../../../book/src/integration.md")]
    mod integration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
