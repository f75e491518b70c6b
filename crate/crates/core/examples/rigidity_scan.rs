//! Grid scan for Jensen gaps and the identity certificate.

use bornlab::phi_rules::PhiRule;
use bornlab::rigidity::certify_identity;

fn main() -> bornlab::Result<()> {
    let rules = [
        PhiRule::identity(),
        PhiRule::power(1.05)?,
        PhiRule::power(2.0)?,
        PhiRule::piecewise_affine(vec![(0.0, 0.0), (0.5, 0.7), (1.0, 1.0)])?,
    ];
    for rule in rules {
        let c = certify_identity(&rule, 1e-10, 0.01)?;
        println!("{rule}: certified={} max_gap={:.3e}", c.certified, c.report.max_gap);
        if let Some(w) = c.witness {
            println!("  witness {}", serde_json::to_string(&w).expect("serializable"));
        }
        for i in &c.report.convexity_intervals {
            println!("  curvature {:?} on [{}, {}]", i.sign, i.lo, i.hi);
        }
    }
    println!("bound for gap 1e-10 on a 0.01 grid: {:.3e}", bornlab::rigidity::derived_bound(1e-10, 0.01)?);
    Ok(())
}
