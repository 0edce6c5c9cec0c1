use super::loss::task_loss;
use super::optimum::{optimal_lambda_closed, uniform_on};
use super::world::LinearWorldSpec;

/// Closed-form consistency `B R (sqrt(n_0 / k_0) - sqrt(n_C / k_C))`.
pub fn consistency_kappa(spec: &LinearWorldSpec) -> f64 {
    let n_0 = spec.n_0() as f64;
    let k_0 = spec.k_0() as f64;
    let n_c = spec.n_c() as f64;
    let k_c = spec.k_c() as f64;
    spec.head_norm_bound() * spec.rep_norm_bound() * ((n_0 / k_0).sqrt() - (n_c / k_c).sqrt())
}

/// Consistency by direct evaluation: target loss under the finetuning
/// optimum minus target loss under the optimum for the target classes.
pub fn kappa_oracle(spec: &LinearWorldSpec) -> f64 {
    let b = spec.head_norm_bound();
    let finetune_opt = optimal_lambda_closed(spec);
    let target_opt = uniform_on(spec.d(), spec.target_features(), spec.rep_norm_bound());
    // the target family holds a single pair, so the supremum is one term
    let target = spec.target_task();
    task_loss(&finetune_opt, &target, b) - task_loss(&target_opt, &target, b)
}
