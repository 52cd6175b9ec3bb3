pub mod belief;
pub mod config;
pub mod dynamics;
pub mod experiments;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod spikes;
pub mod stats;
