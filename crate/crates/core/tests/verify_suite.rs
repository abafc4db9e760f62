//! The release-gate property suite must pass in both modes, and must catch
//! a deliberately corrupted gradient (mutation smoke test).

use amdyn_core::model;
use amdyn_core::verify::{self, VerifyOptions};
use amdyn_core::{EmbeddingSet, TaskSpec, Weights};

#[test]
fn suite_passes_default_mode() {
    let report = verify::run(&VerifyOptions::default());
    for r in &report.results {
        println!(
            "{}: {} (err {:.3e} vs tol {:.1e}, {:.1} ms)",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.error,
            r.tolerance,
            r.millis
        );
    }
    assert!(report.passed());
}

#[test]
fn suite_passes_strict_mode() {
    let report = verify::run(&VerifyOptions {
        strict: true,
        seed: 7,
    });
    for r in &report.results {
        println!(
            "{}: {} (err {:.3e} vs tol {:.1e})",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.error,
            r.tolerance
        );
    }
    assert!(report.passed());
}

#[test]
fn gradient_check_rejects_corrupted_gradient() {
    let emb = EmbeddingSet::orthonormal(3, 3, 4).unwrap();
    let task = TaskSpec::zipf_identity(3).unwrap();
    let mut w = Weights::zeros(4);
    w.0[(0, 1)] = 0.3;
    w.0[(2, 0)] = -0.7;

    let honest = verify::gradient_check_with(&w, &emb, &task, model::grad).unwrap();
    assert!(honest <= 1e-6, "honest gradient flagged: {honest}");

    // Scale mutation.
    let scaled = verify::gradient_check_with(&w, &emb, &task, |w, emb, task| {
        let mut g = model::grad(w, emb, task)?;
        g.0 *= 1.001;
        Ok(g)
    })
    .unwrap();
    assert!(scaled > 1e-6, "scaled gradient not flagged: {scaled}");

    // Transpose mutation.
    let transposed = verify::gradient_check_with(&w, &emb, &task, |w, emb, task| {
        let g = model::grad(w, emb, task)?;
        Ok(Weights(g.0.transpose()))
    })
    .unwrap();
    assert!(transposed > 1e-6, "transposed gradient not flagged: {transposed}");
}
