pub mod align;
pub mod data;
pub mod energy_space;
pub mod error;
pub mod gauge;
pub mod grid;
pub mod heat_flow;
pub mod hyperbolic;
pub mod io;
pub mod wave_map;

pub use error::{Error, Result};
