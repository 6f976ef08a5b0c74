//! Finite-difference checks of every operator and of a tiny model end to end.

use gatenet::gradcheck::{model_gradcheck, op_suite, FdConfig};
use gatenet::model::ModelConfig;

fn main() -> gatenet::Result<()> {
    let fd = FdConfig::default();
    for r in op_suite(10, 0, &fd)? {
        println!("{:<20} {:>5} coords  max abs err {:.2e}  {}", r.op, r.cmp.checked, r.cmp.max_abs_err, if r.passed() { "ok" } else { "FAILED" });
    }
    let model_fd = FdConfig { rel_tol: 1e-3, ..fd };
    let checks = model_gradcheck(&ModelConfig::tiny(), 2, 4, 0, &model_fd)?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.cmp.passed()).map(|c| c.name.as_str()).collect();
    let worst = checks.iter().map(|c| c.cmp.max_rel_err).fold(0.0, f64::max);
    println!("model: {} parameter tensors, worst relative error {worst:.2e}, failed {failed:?}", checks.len());
    Ok(())
}
