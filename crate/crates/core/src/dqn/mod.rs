//! Deep Q-learning with dueling heads, double-Q targets and experience replay.

mod network;
mod replay;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use network::{argmax_masked, Adam, Architecture, ForwardCache, QNetwork};
pub use replay::{ReplayBuffer, Transition};

use crate::env::StateVector;
use crate::error::{Error, Result};

/// How bootstrap targets pick the successor action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// `max_a Q̄(s′, a)`.
    Vanilla,
    /// `Q̄(s′, argmax_a Q(s′, a))`.
    #[default]
    Double,
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(TargetKind::Vanilla),
            "double" => Ok(TargetKind::Double),
            other => Err(Error::Config(format!(
                "unknown target {other:?} (expected vanilla|double)"
            ))),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Vanilla => "vanilla",
            TargetKind::Double => "double",
        })
    }
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    /// Gradient steps between target synchronisations.
    pub target_sync: usize,
    /// Transitions stored before the first update.
    pub warmup: usize,
    /// Environment steps per gradient step.
    pub train_every: usize,
    pub target: TargetKind,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![512, 256],
            gamma: 0.95,
            batch_size: 128,
            learning_rate: 2e-5,
            buffer_capacity: 100_000,
            target_sync: 1000,
            warmup: 2000,
            train_every: 1,
            target: TargetKind::Double,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch size must be in 1..=buffer capacity");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return bad("target_sync and train_every must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Bootstrap target for one transition.
pub fn td_target(
    reward: f64,
    next: Option<&StateVector>,
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
    kind: TargetKind,
) -> f64 {
    match next {
        None => reward,
        Some(s) => {
            reward + gamma * bootstrap_values(&s.features, &s.mask, 1, online, target, kind)[0]
        }
    }
}

/// Successor values for a batch of non-terminal states.
fn bootstrap_values(
    states: &[f64],
    masks: &[bool],
    batch: usize,
    online: &QNetwork,
    target: &QNetwork,
    kind: TargetKind,
) -> Vec<f64> {
    let k = target.num_actions();
    let qt = target.forward(states, masks, batch);
    let qo = match kind {
        TargetKind::Double => Some(online.forward(states, masks, batch)),
        TargetKind::Vanilla => None,
    };
    (0..batch)
        .map(|i| {
            let m = &masks[i * k..(i + 1) * k];
            let chooser = qo.as_ref().unwrap_or(&qt);
            match argmax_masked(&chooser[i * k..(i + 1) * k], m) {
                Some(a) => qt[i * k + a],
                None => 0.0,
            }
        })
        .collect()
}

/// Greedy slot over the unmasked actions, lowest index on ties.
pub fn act_greedy(q: &QNetwork, s: &StateVector) -> Result<usize> {
    if s.mask.len() != q.num_actions() {
        return Err(Error::Structural(format!(
            "state has {} action slots, approximator has {}",
            s.mask.len(),
            q.num_actions()
        )));
    }
    argmax_masked(&q.q_values(s), &s.mask)
        .ok_or_else(|| Error::Structural("every action slot is masked".into()))
}

/// Online and target approximators, optimiser and replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: DqnConfig,
    online: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    updates: u64,
    observed: u64,
}

/// Serializable learner state apart from the parameter vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub updates: u64,
    pub observed: u64,
    pub rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, input_dim: usize, num_actions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture {
            input_dim,
            hidden: config.hidden.clone(),
            num_actions,
        };
        let online = QNetwork::new(arch, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(DqnAgent {
            optimizer: Adam::new(online.num_params(), config.learning_rate),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            target: online.clone(),
            online,
            config,
            rng,
            updates: 0,
            observed: 0,
        })
    }

    /// Rebuilds an agent for inference from stored parameters.
    pub fn from_parts(
        config: DqnConfig,
        online: QNetwork,
        target: QNetwork,
        state: AgentState,
    ) -> Result<Self> {
        config.validate()?;
        if online.architecture() != target.architecture() {
            return Err(Error::Checkpoint("online and target shapes differ".into()));
        }
        Ok(DqnAgent {
            optimizer: Adam::new(online.num_params(), config.learning_rate),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            online,
            target,
            config,
            rng: state.rng,
            updates: state.updates,
            observed: state.observed,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn state(&self) -> AgentState {
        AgentState {
            updates: self.updates,
            observed: self.observed,
            rng: self.rng.clone(),
        }
    }

    pub fn act_greedy(&self, s: &StateVector) -> Result<usize> {
        act_greedy(&self.online, s)
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    /// Stores a transition and, once warm, takes a gradient step every
    /// `train_every` observations. Returns the loss when a step was taken.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.buffer.push(t);
        self.observed += 1;
        let warm = self.buffer.len() >= self.config.warmup.max(self.config.batch_size);
        if warm && self.observed.is_multiple_of(self.config.train_every as u64) {
            let batch: Vec<Transition> = self
                .buffer
                .sample(&mut self.rng, self.config.batch_size)
                .expect("buffer holds at least one batch")
                .into_iter()
                .cloned()
                .collect();
            self.update(&batch).map(Some)
        } else {
            Ok(None)
        }
    }

    /// One optimiser step on `batch`; returns the pre-step loss.
    pub fn update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let dim = self.online.architecture().input_dim;
        let k = self.online.num_actions();
        let b = batch.len();
        let mut states = Vec::with_capacity(b * dim);
        let mut masks = Vec::with_capacity(b * k);
        let mut actions = Vec::with_capacity(b);
        let mut next_states = Vec::new();
        let mut next_masks = Vec::new();
        let mut live = Vec::new();
        for (i, t) in batch.iter().enumerate() {
            if t.state.len() != dim || t.mask.len() != k || t.action >= k || !t.mask[t.action] {
                return Err(Error::Structural(format!("malformed transition #{i}")));
            }
            states.extend_from_slice(&t.state);
            masks.extend_from_slice(&t.mask);
            actions.push(t.action);
            if let Some((s, m)) = &t.next {
                if s.len() != dim || m.len() != k {
                    return Err(Error::Structural(format!(
                        "malformed successor in transition #{i}"
                    )));
                }
                next_states.extend_from_slice(s);
                next_masks.extend_from_slice(m);
                live.push(i);
            }
        }
        let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if !live.is_empty() {
            let boot = bootstrap_values(
                &next_states,
                &next_masks,
                live.len(),
                &self.online,
                &self.target,
                self.config.target,
            );
            for (&i, v) in live.iter().zip(boot) {
                targets[i] += self.config.gamma * v;
            }
        }
        let (loss, grad) = self
            .online
            .td_loss_and_grad(&states, &masks, &actions, &targets);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at update {}; target range [{}, {}]",
                self.updates,
                targets.iter().copied().fold(f64::INFINITY, f64::min),
                targets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )));
        }
        self.optimizer.apply(self.online.params_mut(), &grad);
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_sync as u64) {
            self.sync_target();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DqnConfig {
        DqnConfig {
            hidden: vec![8, 6],
            batch_size: 4,
            buffer_capacity: 16,
            warmup: 4,
            target_sync: 3,
            ..DqnConfig::default()
        }
    }

    fn state(features: Vec<f64>, mask: Vec<bool>) -> StateVector {
        StateVector {
            features,
            mask,
            od: 0,
        }
    }

    #[test]
    fn terminal_and_myopic_targets() {
        let agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        let (q, qt) = (agent.online(), agent.target());
        assert_eq!(
            td_target(-72.0, None, q, qt, 0.95, TargetKind::Double),
            -72.0
        );
        let s = state(vec![1.0, 2.0, 3.0], vec![true, true]);
        assert_eq!(
            td_target(-3.0, Some(&s), q, qt, 0.0, TargetKind::Double),
            -3.0
        );
    }

    #[test]
    fn single_action_bootstrap() {
        let mut agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        // Zero every weight and set the value bias so Q ≡ 10.
        let p = agent.online.params_mut();
        p.iter_mut().for_each(|x| *x = 0.0);
        let n = p.len();
        let value_bias = n - 2 - 6 * 2 - 1;
        p[value_bias] = 10.0;
        agent.sync_target();
        let s = state(vec![0.3, 0.1, 0.2], vec![false, true]);
        assert_eq!(agent.online().q_values(&s)[1], 10.0);
        let y = td_target(
            -5.0,
            Some(&s),
            agent.online(),
            agent.target(),
            0.95,
            TargetKind::Double,
        );
        assert!((y - 4.5).abs() < 1e-12);
    }

    #[test]
    fn act_greedy_rules() {
        let agent = DqnAgent::new(small_config(), 3, 3, 0).unwrap();
        let s = state(vec![0.0; 3], vec![false, true, false]);
        assert_eq!(agent.act_greedy(&s).unwrap(), 1);
        let s = state(vec![0.0; 3], vec![true, true, true]);
        assert_eq!(agent.act_greedy(&s).unwrap(), 0);
        let s = state(vec![0.0; 3], vec![false; 3]);
        assert!(matches!(agent.act_greedy(&s), Err(Error::Structural(_))));
    }

    #[test]
    fn fixed_point_batch_has_zero_loss() {
        let mut agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        let before = agent.online().params().to_vec();
        let t = Transition {
            state: vec![0.5, 0.5, 0.5],
            mask: vec![true, true],
            action: 0,
            reward: 0.0,
            next: None,
        };
        let loss = agent.update(&[t]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.online().params(), &before[..]);
    }

    #[test]
    fn single_transition_loss_is_squared_error() {
        let mut agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        let t = Transition {
            state: vec![0.5, 0.5, 0.5],
            mask: vec![true, true],
            action: 1,
            reward: -3.0,
            next: None,
        };
        assert_eq!(agent.update(&[t]).unwrap(), 9.0);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        let t = Transition {
            state: vec![0.5, 0.5, 0.5],
            mask: vec![true, true],
            action: 1,
            reward: f64::NAN,
            next: None,
        };
        assert!(matches!(agent.update(&[t]), Err(Error::Numerical(_))));
    }

    #[test]
    fn target_syncs_every_c_updates() {
        let mut agent = DqnAgent::new(small_config(), 3, 2, 0).unwrap();
        let t = Transition {
            state: vec![0.5, -0.5, 1.5],
            mask: vec![true, true],
            action: 1,
            reward: -1.0,
            next: Some((vec![0.1, 0.2, 0.3], vec![true, false])),
        };
        for i in 1..=6 {
            agent.update(std::slice::from_ref(&t)).unwrap();
            let synced = agent.online().params() == agent.target().params();
            assert_eq!(synced, i % 3 == 0, "update {i}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(DqnConfig::default().validate().is_ok());
        assert!(DqnConfig {
            gamma: 1.5,
            ..DqnConfig::default()
        }
        .validate()
        .is_err());
        assert!(DqnConfig {
            batch_size: 0,
            ..DqnConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(
            "vanilla".parse::<TargetKind>().unwrap(),
            TargetKind::Vanilla
        );
        assert!("triple".parse::<TargetKind>().is_err());
    }
}
