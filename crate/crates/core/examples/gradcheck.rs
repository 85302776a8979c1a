//! Central finite-difference checks of the autodiff primitives, one full
//! trioformer layer and the trajectory-balance loss.
//!
//! cargo run --release --example gradcheck

use pocketgfn::verify::{primitive_gradients, tb_log_z_gradient, trioformer_layer_gradient};

fn main() -> pocketgfn::Result<()> {
    for (name, r) in primitive_gradients(0)? {
        println!("{name:18} {:3} entries  max rel err {:.2e}  {}", r.checked, r.max_rel_err, if r.passed { "ok" } else { "FAIL" });
    }
    for (name, r) in [("trioformer layer", trioformer_layer_gradient(0)?), ("TB loss", tb_log_z_gradient(0)?)] {
        println!(
            "{name:18} {:3} entries  max rel err {:.2e} at {}  {}",
            r.checked,
            r.max_rel_err,
            r.worst,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
