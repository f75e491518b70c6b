//! Validate and run a scenario file without the binary.
//!
//! `cargo run --example run_scenario -- scenarios/scan_piecewise.toml`

use bornlab::cli::{run, validate};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/jensen_power2.toml").to_string());
    let text = std::fs::read_to_string(&path).expect("readable scenario");
    match validate(&text) {
        Ok((config, warnings)) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let out = run(&config);
            print!("{}", String::from_utf8_lossy(&out.artifact));
            println!("{} (exit {})", out.summary, out.exit_code);
        }
        Err(errors) => {
            for e in errors {
                eprintln!("error: {e}");
            }
        }
    }
}
