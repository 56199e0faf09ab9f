//! Reconciliation runtime and the built-in controllers.

mod deployment;
mod host;
mod nginx;
mod runtime;

pub use deployment::*;
pub use host::*;
pub use nginx::*;
pub use runtime::*;

#[cfg(test)]
mod tests;
