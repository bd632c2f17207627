//! Linear programming: a revised simplex core, general finite LPs, and the
//! constraint-exchange solver for the joint dual problem.

pub mod basis;
pub mod exchange;
pub mod finite;
pub mod simplex;

pub use basis::{DegreeBound, MonomialBasisY, MonomialBasisZ};
pub use exchange::{
    certificate_diagnostics, constraint_row, hamiltonian_argmin, solve_dual_exchange, CertificateDiagnostics,
    ConstraintRow, DualSolution, ExchangeConfig,
};
pub use finite::{solve_finite_lp, FiniteLp, LpSolution, LpStatus, RowKind, Sense};
