//! Computes the group-fairness metrics on a hand-built prediction table
//! and shows the soft differentiable penalty tracking its hard counterpart.

use fairsynth::fairness::{
    di_loss_hard, di_loss_soft, disparate_impact, f1_score, worst_tpr,
};
use fairsynth::nn::tape::Tensor;
use ndarray::Array2;

fn main() -> anyhow::Result<()> {
    env_logger::init();

    // Two groups: 0 is selected at 0.8, 1 at 0.4; positives recalled
    // unevenly.
    let decisions: Vec<u8> = vec![1, 1, 1, 1, 0, 1, 0, 0, 1, 0];
    let labels: Vec<u8> = vec![1, 1, 0, 1, 0, 1, 1, 0, 1, 0];
    let groups: Vec<usize> = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];

    let (di, rates, reference) = disparate_impact(&decisions, &groups, 2, None);
    println!("selection rates per group: {rates:?} (reference group {reference})");
    println!("disparate impact: {di:.3} (1 is parity)");

    let (wtpr, tprs, excluded) = worst_tpr(&decisions, &labels, &groups, 2, 1)?;
    println!("per-group recall: {tprs:?}, worst {wtpr:.3}, excluded groups {excluded:?}");
    println!("overall f1: {:.3}", f1_score(&decisions, &labels));

    // The differentiable penalty sees probabilities instead of decisions.
    let probs = Array2::from_shape_vec(
        (10, 1),
        vec![0.9, 0.8, 0.7, 0.9, 0.2, 0.8, 0.3, 0.2, 0.7, 0.1],
    )?;
    let hard = di_loss_hard(&probs, &groups, 2, None);
    for temperature in [0.2, 0.05, 0.01] {
        let soft = di_loss_soft(&Tensor::constant(probs.clone()), &groups, 2, temperature, None);
        let v = soft.value()[[0, 0]];
        println!("soft penalty at temperature {temperature}: {v:.4} (hard {hard:.4})");
    }
    println!("as the temperature falls the soft penalty approaches the hard one");
    Ok(())
}
