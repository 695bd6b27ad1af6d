use splab::theory::*;

// Runs that stall above the convergence threshold are inconclusive and skipped;
// every converged one must satisfy the bound.
#[test]
fn full_rank_d8_specializes_within_bound() {
    let trainer = BenchTrainer { max_epochs: 20_000, ..Default::default() };
    let mut converged = 0;
    for seed in 0..4 {
        let cfg = InstanceConfig { ambient_dim: 8, subspace_dim: 8, seed, ..InstanceConfig::full_rank() };
        let (inst, out) = TheoryInstance::trained(&cfg, &trainer).unwrap();
        if out.g1_sup > CONVERGED_G1 {
            continue;
        }
        converged += 1;
        let rep = verify_theorem2(&inst, &inst.basis, &VerifyOptions::default()).unwrap();
        assert_eq!(rep.teachers.len(), 3, "seed {seed}: {:?}", rep.warnings);
        for t in &rep.teachers {
            assert!(t.bound_satisfied, "seed {seed} node {}: {} > {}", t.node, t.best_in_plane_sin, t.bound);
            assert!(t.best_in_plane_sin < 0.05, "seed {seed} node {}: {}", t.node, t.best_in_plane_sin);
        }
    }
    assert!(converged > 0);
}

#[test]
fn low_rank_student_aligns_and_freezes_out_of_plane() {
    let (inst, out) = TheoryInstance::trained(&InstanceConfig::low_rank(), &BenchTrainer::default()).unwrap();
    assert!(out.g1_sup <= CONVERGED_G1);
    let rep = verify_theorem1_lowrank(&inst, &VerifyOptions::default()).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass);
    for n in &rep.nodes {
        assert!(n.observed && n.cosine > COSINE_PASS && n.lambda > 0.0);
    }
    assert!(rep.drift.iter().all(|d| *d < DRIFT_PASS));
}
