//! Measures DataInf fidelity against the exact damped Gauss-Newton oracle on
//! the frozen instance. Run with `--nocapture` to see the measured value.

mod common;

use automixer::influence::{score_all, validation_gradient, LayerContext, DEFAULT_LAMBDA_MULTIPLIER};
use automixer::oracle::ExactOracle;
use automixer::par::Exec;
use automixer::stats::spearman;

#[test]
fn datainf_vs_exact_oracle_rank_correlation() {
    let inst = common::fidelity_instance();
    let exec = Exec::default();
    let v = validation_gradient(&inst.params, &inst.probe.samples, exec).unwrap();
    let grads = inst.params.batch_layer_gradients(inst.corpus.samples(), exec).unwrap();
    let ctx = LayerContext::build(&v, &grads, DEFAULT_LAMBDA_MULTIPLIER, exec).unwrap();
    let datainf = score_all(&ctx, &grads, exec).unwrap();
    let oracle = ExactOracle::build(&v, &grads, DEFAULT_LAMBDA_MULTIPLIER).unwrap();
    let exact: Vec<f64> = grads.iter().map(|g| oracle.score(g).unwrap()).collect();
    let rho = spearman(&datainf, &exact);
    println!("spearman(datainf, exact) = {rho:.6}");
    assert!(rho >= common::FIDELITY_SPEARMAN_FLOOR, "fidelity regressed: {rho}");
}
