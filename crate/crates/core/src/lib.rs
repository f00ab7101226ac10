//! Group-fair K-means and K-median clustering by optimal-transport alignment.
//!
//! Points of the two protected groups are coupled by a transport plan, each
//! coupled pair is mapped to a single aligned point, and centers are fitted in
//! that aligned space, so every pair lands in one cluster and cluster
//! proportions match the population. An exception set of pairs clustered
//! without alignment trades fairness for cost.

pub mod clustering;
pub mod data;
pub mod error;
pub mod fca;
pub mod fcac;
pub mod metrics;
pub mod oracle;
pub mod transport;

pub use error::{Error, Result};
