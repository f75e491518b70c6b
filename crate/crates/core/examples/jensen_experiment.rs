//! Split versus direct preparation of the same qubit state, for several rules.

use bornlab::phi_rules::builtin_rules;
use bornlab::signaling::{build_two_level_scenario, run_steering_experiment};

fn main() -> bornlab::Result<()> {
    let scenario = build_two_level_scenario(0.1, 0.8, 0.5)?;
    println!("{:<36} {:>12} {:>12} {:>12}", "rule", "split", "direct", "gap");
    for rule in builtin_rules() {
        let r = run_steering_experiment(&rule, &scenario)?;
        println!("{:<36} {:>12.9} {:>12.9} {:>12.3e}", rule.to_string(), r.prob_split, r.prob_direct, r.gap);
    }
    Ok(())
}
