use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqassign::dqn::{argmax_masked, td_target, Architecture, QNetwork, TargetKind};
use seqassign::env::StateVector;
use seqassign::trainer::{build_spec, train, TrainMode, TrainerConfig};

pub struct Problem {
    pub net: QNetwork,
    pub states: Vec<f64>,
    pub masks: Vec<bool>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Small network with random heads, a random batch and random TD targets.
pub fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = vec![rng.gen_range(3..8), rng.gen_range(2..6)];
    let k = rng.gen_range(2..5);
    let arch = Architecture {
        input_dim: 6,
        hidden,
        num_actions: k,
    };
    let mut net = QNetwork::new(arch, &mut rng).unwrap();
    net.randomize_heads(&mut rng);
    let batch = rng.gen_range(1..6);
    let states: Vec<f64> = (0..batch * 6).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut masks = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..batch {
        let mut m: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.7)).collect();
        let forced = rng.gen_range(0..k);
        m[forced] = true;
        let valid: Vec<usize> = (0..k).filter(|&j| m[j]).collect();
        actions.push(valid[rng.gen_range(0..valid.len())]);
        masks.extend(m);
    }
    let targets = (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect();
    Problem {
        net,
        states,
        masks,
        actions,
        targets,
    }
}

/// Analytic TD-loss gradients against central differences with step `1e-4`,
/// relative tolerance `1e-4`. Returns (parameters checked, worst error).
pub fn check_gradients(seeds: u64) -> (usize, f64) {
    let h = 1e-4;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let p = random_problem(seed);
        let batch = p.actions.len();
        let (_, grad) = p
            .net
            .td_loss_and_grad(&p.states, &p.masks, &p.actions, &p.targets);
        let pattern = p.net.activation_pattern(&p.states, &p.masks, batch);
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = p.net.clone();
            plus.params_mut()[i] += h;
            let mut minus = p.net.clone();
            minus.params_mut()[i] -= h;
            // A rectifier switching inside the stencil makes the loss non-smooth there.
            if plus.activation_pattern(&p.states, &p.masks, batch) != pattern
                || minus.activation_pattern(&p.states, &p.masks, batch) != pattern
            {
                continue;
            }
            let fd = (plus.td_loss(&p.states, &p.masks, &p.actions, &p.targets)
                - minus.td_loss(&p.states, &p.masks, &p.actions, &p.targets))
                / (2.0 * h);
            let scale = g.abs().max(fd.abs());
            let err = if scale < 1e-7 {
                0.0
            } else {
                (g - fd).abs() / scale
            };
            worst = worst.max(err);
            checked += 1;
            assert!(err <= 1e-4, "seed {seed} param {i}: analytic {g} fd {fd}");
        }
    }
    (checked, worst)
}

/// Adding `shift` to every advantage bias moves the raw advantages but not Q.
pub fn check_advantage_shift(seed: u64, shift: f64) {
    let p = random_problem(seed);
    let k = p.net.num_actions();
    let s = StateVector {
        features: p.states[..6].to_vec(),
        mask: p.masks[..k].to_vec(),
        od: 0,
    };
    let q = p.net.q_values(&s);
    let mut shifted = p.net.clone();
    let n = shifted.num_params();
    // Advantage biases are the last k parameters.
    for b in &mut shifted.params_mut()[n - k..] {
        *b += shift;
    }
    let q2 = shifted.q_values(&s);
    for j in 0..k {
        if s.mask[j] {
            assert!(
                (q[j] - q2[j]).abs() <= 1e-9 * (1.0 + q[j].abs()),
                "slot {j}: {} vs {}",
                q[j],
                q2[j]
            );
        } else {
            assert_eq!(q2[j], f64::NEG_INFINITY);
        }
    }
    let (_, adv) = p.net.heads(&s);
    let (_, adv2) = shifted.heads(&s);
    assert!((adv2[0] - adv[0] - shift).abs() < 1e-9);
}

/// Double targets pick the action with the online network and value it with
/// the target network; vanilla targets use the target network for both.
/// Returns how many trials separated the two argmaxes.
pub fn check_double_decoupling(trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arch = Architecture {
        input_dim: 4,
        hidden: vec![6, 5],
        num_actions: 3,
    };
    let mut online = QNetwork::new(arch.clone(), &mut rng).unwrap();
    online.randomize_heads(&mut rng);
    let mut target = QNetwork::new(arch, &mut rng).unwrap();
    target.randomize_heads(&mut rng);
    let mut found = 0;
    for trial in 0..trials {
        let s = StateVector {
            features: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            mask: vec![true, true, trial % 2 == 0],
            od: 0,
        };
        let qo = online.q_values(&s);
        let qt = target.q_values(&s);
        let a_online = argmax_masked(&qo, &s.mask).unwrap();
        let a_target = argmax_masked(&qt, &s.mask).unwrap();
        let double = td_target(-1.0, Some(&s), &online, &target, 0.9, TargetKind::Double);
        let vanilla = td_target(-1.0, Some(&s), &online, &target, 0.9, TargetKind::Vanilla);
        assert_eq!(double, -1.0 + 0.9 * qt[a_online]);
        assert_eq!(vanilla, -1.0 + 0.9 * qt[a_target]);
        if a_online != a_target {
            assert!(double < vanilla);
            found += 1;
        }
    }
    assert!(found > 0, "no state separated the two argmaxes");
    found
}

/// Two Braess training runs with the same seed produce byte-identical
/// checkpoints and curves. Returns the number of gradient updates per run.
pub fn check_braess_reproducible(episodes: usize, seed: u64) -> u64 {
    let (net, demand) = seqassign::data::braess().unwrap();
    let mode = TrainMode::Ksp(3);
    let mut config = TrainerConfig::for_mode(mode);
    config.episodes = episodes;
    config.seed = seed;
    config.eval_every = 5;
    // Six steps per episode; learning must start inside the run.
    config.dqn.warmup = 64;
    config.dqn.batch_size = 32;
    config.dqn.target_sync = 50;
    let run = || {
        let spec = build_spec(&net, &demand, mode, &config).unwrap();
        let out = train(spec, mode, &config, None).unwrap();
        let mut curve = Vec::new();
        out.log.write_curve(&mut curve).unwrap();
        (
            out.checkpoint.encode().unwrap(),
            curve,
            out.checkpoint.header.agent.updates,
        )
    };
    let (a_bytes, a_curve, updates) = run();
    let (b_bytes, b_curve, _) = run();
    assert!(updates > 0, "no gradient updates happened");
    assert_eq!(a_curve, b_curve, "training curves differ");
    assert!(a_bytes == b_bytes, "checkpoints differ");
    updates
}
