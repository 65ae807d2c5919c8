//! Discrete-event simulation of a grid-aware EV charging facility.
//!
//! Vehicles arrive, connect to multi-port charging columns and are served
//! one at a time per column, while a facility-wide Energy Sandbox caps the
//! aggregate power it hands out.

pub mod export;
pub mod facility;
pub mod kernel;
pub mod metrics;
pub mod oracle;
pub mod plot;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod signals;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/facility.md")]
    mod facility {}
    #[doc = include_str!("../../../book/src/sandbox.md")]
    mod sandbox {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
