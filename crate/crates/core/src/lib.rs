pub mod certify;
pub mod dimension;
pub mod error;
pub mod expr;
pub mod interval;
pub mod map1d;
pub mod map2d;
pub mod sparse;
pub mod ulam1d;
pub mod ulam2d;

pub use error::{Error, Result};
pub use interval::{Interval, Rational};
