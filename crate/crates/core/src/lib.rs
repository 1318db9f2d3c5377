pub mod error;
pub mod model;
pub mod stable;
pub mod timegrid;
pub mod accel;
pub mod unstable;
pub mod oracle;
pub mod tracking;
pub mod cli;
