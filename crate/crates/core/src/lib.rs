//! Direct and model-based small area estimation of prevalence from
//! stratified two-stage cluster samples.

pub mod aggregate;
pub mod augment;
pub mod direct;
pub mod error;
pub mod fay_herriot;
pub mod interval;
pub mod simulate;
pub mod survey_data;
pub mod table;

pub use error::{Result, SaeError};
