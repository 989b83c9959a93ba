use seqassign::data;
use seqassign::env::{route_marginal_time, Environment, EpisodeSpec, MarginalEval, DEFAULT_K_MAX};
use seqassign::network::{total_system_travel_time, FlowState};
use seqassign::paths::k_shortest_paths;

pub fn braess(eval: MarginalEval) -> EpisodeSpec {
    let (net, demand) = data::braess().unwrap();
    let (a, b) = (net.node_id("A").unwrap(), net.node_id("B").unwrap());
    let routes = k_shortest_paths(&net, &net.free_flow_times(), a, b, 3).unwrap();
    EpisodeSpec::new(net, demand, vec![routes], DEFAULT_K_MAX, eval).unwrap()
}

/// Link volumes implied by route counts, built without the environment.
pub fn volumes_from_counts(spec: &EpisodeSpec, counts: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; spec.net().num_links()];
    for (route, &c) in spec.route_sets()[0].iter().zip(counts) {
        for &l in &route.links {
            v[l] += c as f64;
        }
    }
    v
}

/// All 3^6 Braess action sequences under both marginal conventions: flows,
/// counts and rewards at every step, and terminal TSTT against the core.
pub fn check_exhaustive_braess() {
    for eval in [MarginalEval::Post, MarginalEval::Pre] {
        let spec = braess(eval);
        let mut terminal_tstts = Vec::new();
        for code in 0..729usize {
            let actions: Vec<usize> = (0..6).map(|i| (code / 3usize.pow(i)) % 3).collect();
            let mut env = Environment::new(&spec);
            env.reset().unwrap();
            let mut counts = [0usize; 3];
            let mut reward_sum = 0.0;
            for (t, &a) in actions.iter().enumerate() {
                let expected =
                    -route_marginal_time(spec.net(), env.flows(), &spec.route_sets()[0][a], eval);
                let out = env.step(a).unwrap();
                assert_eq!(out.reward, expected);
                reward_sum += out.reward;
                counts[a] += 1;
                assert_eq!(
                    env.flows().volumes(),
                    &volumes_from_counts(&spec, &counts)[..]
                );
                assert_eq!(env.route_counts()[0], counts.to_vec());
                assert_eq!(counts.iter().sum::<usize>(), t + 1);
                assert_eq!(out.is_terminal(), t == 5);
            }
            let independent = FlowState::from_volumes(volumes_from_counts(&spec, &counts)).unwrap();
            let core = total_system_travel_time(spec.net(), &independent).unwrap();
            assert_eq!(env.tstt(), core);
            match eval {
                MarginalEval::Post => assert!(-reward_sum >= core - 1e-9),
                MarginalEval::Pre => assert!(-reward_sum <= core + 1e-9),
            }
            terminal_tstts.push(core);
        }
        let best = terminal_tstts.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best, 498.0);
    }
}
