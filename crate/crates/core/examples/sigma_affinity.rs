//! Ensemble probabilities of a truncated thermal ensemble converge within
//! the dropped weight.

use bornlab::fock::{coherent_vector, sigma_affinity_convergence, CoherentSpec};
use bornlab::linalg::c64;
use bornlab::phi_rules::builtin_rules;

fn main() -> bornlab::Result<()> {
    let phi = coherent_vector(&CoherentSpec::new(c64(1.2, 0.0), 20)?)?.state;
    for rule in builtin_rules() {
        println!("{rule}");
        for p in sigma_affinity_convergence(&rule, 0.5, &phi, &[2, 5, 10, 20])? {
            println!("  N={:<3} deviation {:.3e} <= {:.3e}: {}", p.truncation, p.deviation, p.tail_bound, p.within_bound);
        }
    }
    Ok(())
}
