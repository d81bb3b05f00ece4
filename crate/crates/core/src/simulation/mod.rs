//! Simulation design with known truth, Monte Carlo harness, confounding
//! audit and a numerical orthogonality check.

pub mod audit;
pub mod dgp;
pub mod montecarlo;
pub mod oracle;
pub mod orthogonality;

pub use audit::{confounding_audit, AuditReport};
pub use dgp::{simulate_dgp, DgpConfig};
pub use montecarlo::{
    run_monte_carlo, Cell, Estimator, MonteCarloConfig, MonteCarloOutput, MonteCarloReport,
    NuisanceSource,
};
pub use oracle::{oracle_nuisance_fits, OracleNuisances};
pub use orthogonality::{check_orthogonality, Direction, PerturbationSpec, ScoreKind};
