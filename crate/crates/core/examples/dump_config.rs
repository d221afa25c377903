//! Print a built-in profile as TOML: `desk` (default) or `paper`.
//!
//! `cargo run -p mec-offload --example dump_config -- paper > configs/paper.cfg`

use mec_offload::config::ExperimentConfig;

fn main() {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("paper") => ExperimentConfig::paper(),
        _ => ExperimentConfig::desk(),
    };
    print!("{}", cfg.to_toml_string().expect("profile serializes"));
}
