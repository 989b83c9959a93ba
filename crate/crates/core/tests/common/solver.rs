use seqassign::assignment::{assignment_objective, relative_gap, Method, Objective, Solver};
use seqassign::data;
use seqassign::network::FlowState;

/// The MSA iterate equals the running mean of all-or-nothing targets on OW.
pub fn check_msa_running_mean(iterations: usize) {
    let (net, demand) = data::ow().unwrap();
    for obj in [Objective::Ue, Objective::So] {
        let mut solver = Solver::new(&net, &demand, obj, Method::Msa).unwrap();
        let mut sum = solver.last_target().volumes().to_vec();
        for i in 2..=iterations {
            solver.advance().unwrap();
            for (s, y) in sum.iter_mut().zip(solver.last_target().volumes()) {
                *s += y;
            }
            for (x, s) in solver.flows().volumes().iter().zip(&sum) {
                let mean = s / i as f64;
                assert!(
                    (x - mean).abs() <= 1e-9 * mean.abs().max(1.0),
                    "iteration {i}: {x} vs {mean}"
                );
            }
        }
    }
}

/// Relative gap is exactly zero at the hand-derived Braess equilibria.
pub fn check_gap_zero_at_equilibria() {
    let (net, demand) = data::braess().unwrap();
    // UE: two travelers on each of ACB, ADB, ACDB, all routes cost 92.
    let ue = FlowState::from_volumes(vec![4.0, 2.0, 2.0, 4.0, 2.0]).unwrap();
    assert_eq!(
        relative_gap(&net, &ue, &demand, Objective::Ue).unwrap(),
        0.0
    );
    // SO: three on each outer route, marginal route costs 116 vs 130 on ACDB.
    let so = FlowState::from_volumes(vec![3.0, 3.0, 3.0, 3.0, 0.0]).unwrap();
    assert_eq!(
        relative_gap(&net, &so, &demand, Objective::So).unwrap(),
        0.0
    );
    assert!(relative_gap(&net, &so, &demand, Objective::Ue).unwrap() > 0.0);
}

pub fn check_frank_wolfe_monotone(iterations: usize) {
    let (net, demand) = data::ow().unwrap();
    for obj in [Objective::Ue, Objective::So] {
        let mut solver = Solver::new(&net, &demand, obj, Method::FrankWolfe).unwrap();
        let mut prev = assignment_objective(&net, solver.flows(), obj);
        for _ in 0..iterations {
            solver.advance().unwrap();
            let now = assignment_objective(&net, solver.flows(), obj);
            assert!(now <= prev + 1e-9 * prev.abs(), "{now} > {prev}");
            prev = now;
        }
    }
}
