//! Collaborative-filtering-aware scheduling of content transfers over
//! intermittent device-to-device contacts.
//!
//! Devices carry a local item-based recommender ([`cf`]) whose rating matrix
//! they exchange on every contact. When contact time is short, each device
//! orders its transfer queue by a utility ([`utility`]) combining expected
//! positive ratings, a bound on rating gain and a deadline-based delivery
//! estimate. The trace-driven engine ([`sim`]) replays contacts and compares
//! that policy against baselines ([`sched`]) using recommender metrics
//! ([`metrics`]).

pub mod cf;
pub mod config;
pub mod experiment;
pub mod ids;
pub mod metrics;
pub mod sched;
pub mod sim;
pub mod trace_io;
pub mod utility;

pub use cf::{CfError, Label, PredictionResult, RatingEntry, RatingMatrix, Status};
pub use ids::{ItemId, NodeId, UserId};
pub use sched::SchedulerKind;
