//! Truncated coherent states against the analytic overlap.

use bornlab::fock::{coherent_vector, tau_coherent_analytic, truncation_convergence, CoherentSpec};
use bornlab::linalg::c64;

fn main() -> bornlab::Result<()> {
    let (alpha, beta) = (c64(1.5, 0.5), c64(-0.5, 1.0));
    println!("exact overlap {:.15}", tau_coherent_analytic(alpha, beta));
    for p in truncation_convergence(alpha, beta, &[2, 5, 10, 20, 40])? {
        println!("N={:<3} error {:.3e}", p.truncation, p.error);
    }
    let s = coherent_vector(&CoherentSpec::new(alpha, 40)?)?;
    println!("tail deficit at N=40: {:.3e}", s.tail_deficit);
    Ok(())
}
