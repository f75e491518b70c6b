//! Closed-form transition probability against the effect optimizer.

use bornlab::linalg::{haar_random_state_with, seeded_rng};
use bornlab::transition::{tau_closed, tau_optimized, OptimizerConfig};

fn main() -> bornlab::Result<()> {
    let mut rng = seeded_rng(11);
    let config = OptimizerConfig::default();
    println!("dim  closed               optimized            iters");
    for dim in 2..=6 {
        let psi = haar_random_state_with(dim, &mut rng);
        let phi = haar_random_state_with(dim, &mut rng);
        let closed = tau_closed(&psi, &phi)?;
        let opt = tau_optimized(&psi, &phi, &config)?;
        println!("{dim:>3}  {:<20.15} {:<20.15} {}", closed.value, opt.value, opt.iterations);
    }
    Ok(())
}
