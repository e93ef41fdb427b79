//! Decentralised Grid scheduling on subscribed load.
//!
//! Nodes describe themselves with a [`profiles::ComputerProfile`] and jobs with an
//! [`profiles::ApplicationProfile`]. A job is placed by filtering nodes on their
//! non-volatile facts ([`matcher`]), querying the survivors over a small-world
//! overlay ([`sord`]) and admitting the job at the best bidder, whose
//! [`ledger::LoadLedger`] only accepts commitments it can finish by their due time.
//! Demand bookings come from each application's run history ([`demand`]).
//! [`monitor`] holds the accounting log, state beacons and the integrity check, and
//! [`simkernel`] ties everything together in a deterministic discrete-event simulator.

pub mod demand;
pub mod ledger;
pub mod matcher;
pub mod monitor;
pub mod profiles;
pub mod simkernel;
pub mod sord;

pub use demand::{DemandConfig, DemandEstimate, DemandSource};
pub use ledger::{Bid, Commitment, LedgerError, LoadLedger};
pub use matcher::NonVolatileRequirements;
pub use profiles::{
    ApplicationProfile, ComputerProfile, IpcLevel, NonVolatileFacts, ProfileError, RunRecord,
    VolatileSample,
};
