//! Finite-difference audit of every op the training graph uses, in f64.
//!
//! Each op builds a tiny graph, perturbs every input component by 1e-5, and
//! compares central differences against the backward pass. Interpolating ops
//! get the coarser tolerance because their FD error is larger near tap
//! boundaries.

use auxmatte::autodiff::{check_named_op, checked_op_names};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut all_ok = true;
    for name in checked_op_names() {
        let mut worst = 0.0f64;
        let mut tol = 0.0f64;
        for seed in [0u64, 1, 2] {
            let r = check_named_op(name, seed)?;
            worst = worst.max(r.max_rel_err);
            tol = r.tol;
        }
        let ok = worst <= tol;
        all_ok &= ok;
        println!(
            "{name:<12} max rel err {worst:.3e}  tol {tol:.0e}  {}",
            if ok { "ok" } else { "FAIL" }
        );
    }
    if !all_ok {
        return Err("some operators failed the finite-difference check".into());
    }
    Ok(())
}
