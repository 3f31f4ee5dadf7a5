//! Tournament entry as a signaling game with social image concerns.

pub mod analysis;
pub mod cli;
pub mod closed_form;
pub mod model;
pub mod oracle;
pub mod simulator;

#[cfg(test)]
mod testutil;
