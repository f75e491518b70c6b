//! Steer a purified state into a chosen decomposition of its marginal.

use bornlab::linalg::{purify, seeded_rng, Povm};
use bornlab::steering::{hjw_povm, random_ensemble, steer, steering_fidelity, verify_marginal_invariance};

fn main() -> bornlab::Result<()> {
    let mut rng = seeded_rng(3);
    let ensemble = random_ensemble(4, 3, 5, &mut rng);
    let omega = ensemble.barycenter().density_matrix()?;
    let state = purify(&omega);

    let povm = hjw_povm(&state, &ensemble)?;
    let outcomes = steer(&state, &povm)?;
    for out in &outcomes {
        let target = ensemble.members().get(out.outcome_index).map_or(0.0, |m| m.0);
        println!("outcome {}: probability {:.12} (target {:.12})", out.outcome_index, out.probability, target);
    }
    let (weight_error, min_fidelity) = steering_fidelity(&outcomes, &ensemble)?;
    println!("weight error {weight_error:.2e}, min fidelity {min_fidelity:.15}");

    // Measuring on A, or not, leaves B's average state alone.
    let shift = verify_marginal_invariance(&state, &povm, &Povm::trivial(4))?;
    println!("marginal shift vs no measurement: {shift:.2e}");
    Ok(())
}
