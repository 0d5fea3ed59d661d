//! Locally differentially private aggregation of sparse ternary vectors.
//!
//! Each user holds a `d`-dimensional vector with exactly `s` entries in
//! `{-1, +1}` and the rest zero. The crate provides
//!
//! - the Collision randomizer for frequency estimation over the `2d`
//!   sign-specific events ([`collision`]),
//! - the CoCo randomizer, which pairs the two sign buckets of each dimension
//!   to lower mean-estimation error ([`coco`]),
//! - PrivKV / PCKV style baselines ([`baseline`]),
//! - exact small-instance enumeration for privacy and moment checks
//!   ([`oracle`]),
//! - a shuffle-model amplification accountant ([`accountant`]),
//! - server-side aggregation, simplex projection and error metrics
//!   ([`aggregate`]),
//! - a seeded experiment harness ([`harness`]).

pub mod accountant;
pub mod aggregate;
pub mod baseline;
pub mod coco;
pub mod collision;
mod error;
pub mod harness;
pub mod oracle;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{
    draw_user_hash, event_set, EventHash, EventId, HashKind, MechanismParams, PairedHash,
    PrivateView, Sign, TernaryVector, UserHash,
};
