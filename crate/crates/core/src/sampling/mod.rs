//! Hamiltonian Monte Carlo for training ensembles and the independence
//! Metropolis–Hastings corrector driven by a trained flow.

mod hmc;
mod imh;

pub use hmc::{hmc_run, hmc_sample, leapfrog, HmcConfig, HmcRun};
pub use imh::{imh_accept_prob, run_imh, ImhChain, ImhRun};
