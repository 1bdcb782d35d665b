//! Information-theoretic diagnostics: the cross-entropy decomposition for a
//! hand-made joint, relative mutual information under a mismatched model,
//! and implicit weights of choice points.

use mtp::diagnostics::{
    conditional_entropy, decomposition_residual, entropy, example_sequence, implicit_weights,
    mutual_information, relative_mutual_information, verify_lemma, weights_report, Direction,
    DiscreteJoint, DistPair,
};

fn main() -> mtp::Result<()> {
    // Two tokens that usually agree.
    let p = DiscreteJoint::new(vec![vec![0.4, 0.1], vec![0.1, 0.4]])?;
    println!(
        "H(X) = {:.4}, H(X|Y) = {:.4}, I(X;Y) = {:.4}, decomposition residual {:.1e}",
        entropy(&p.marginal_x()),
        conditional_entropy(&p, Direction::XGivenY),
        mutual_information(&p),
        decomposition_residual(&p)
    );

    // A model that has the marginals right but believes the tokens disagree.
    let q = DiscreteJoint::new(vec![vec![0.1, 0.4], vec![0.4, 0.1]])?;
    let pair = DistPair::new(p.clone(), q)?;
    let rel = relative_mutual_information(&pair)?;
    let res = verify_lemma(&pair)?;
    println!(
        "I_p||q = {:.4} (two routes differ by {:.1e}); lemma residuals {:.1e} / {:.1e}",
        rel.value(),
        rel.discrepancy(),
        res.lemma,
        res.symmetrized
    );

    for n in 1..=4 {
        let seq = example_sequence(n);
        let w = implicit_weights(&seq)?;
        let (text, _) = weights_report(&seq, &w);
        println!("\nn = {n}\n{text}");
    }
    Ok(())
}
