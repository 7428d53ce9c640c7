#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod phantom;
pub mod operator;
pub mod robot;
pub mod sim;

pub use error::{Error, Result};
