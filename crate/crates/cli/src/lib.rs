//! Library half of the command-line tool: configuration parsing and the
//! audio/text codecs. Exposed separately so the fuzz harnesses can drive
//! the untrusted-input parsers directly.

pub mod config;
pub mod error;
pub mod io;

pub use config::{config_hash, load_config, parse_config, RunConfig};
pub use error::{CliError, Result};
