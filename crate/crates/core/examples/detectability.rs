//! Finite-sample detection of a nonzero gap.

use bornlab::phi_rules::PhiRule;
use bornlab::signaling::{build_two_level_scenario, rejection_rate, repeat_detectability};

fn main() -> bornlab::Result<()> {
    let scenario = build_two_level_scenario(0.2, 0.7, 0.5)?;
    for rule in [PhiRule::identity(), PhiRule::power(1.5)?] {
        for n in [100, 1_000, 10_000] {
            let reports = repeat_detectability(&rule, &scenario, n, 200, 99, 0.05)?;
            let n_star = reports[0].n_star.map_or("-".to_string(), |x| format!("{x:.0}"));
            println!("{rule:<10} n={n:<6} rejection rate {:.3}  n* {n_star}", rejection_rate(&reports));
        }
    }
    Ok(())
}
