//! Library surface of the CLI crate, split out so integration tests can call
//! the subcommand implementations without spawning processes.

pub mod cidr;
pub mod commands;
