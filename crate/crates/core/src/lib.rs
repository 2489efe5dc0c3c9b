//! Navigation structures over data lakes.
//!
//! A lake's attributes are embedded as topic vectors and arranged in a rooted
//! DAG whose states hold attribute sets. Users descend from the root by
//! picking the child whose topic best matches what they look for; the
//! optimizer reshapes the DAG to make every table likely to be found.

pub mod approx;
pub mod benchgen;
pub mod embedding;
pub mod enrich;
pub mod error;
pub mod fixtures;
pub mod kmedoids;
pub mod lake;
pub mod navmodel;
pub mod optimizer;
pub mod organization;
pub mod vector;

pub use error::{Error, Result};
