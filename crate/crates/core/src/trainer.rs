//! Training loop in which exploratory actions are drawn from an
//! assignment distribution that is re-averaged against an all-or-nothing
//! solution after every episode, with action sets growing as new
//! shortest routes appear.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{extract_so_route_set, solve_msa, Objective, DEFAULT_FLOW_FLOOR};
use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::dqn::{act_greedy, DqnAgent, DqnConfig, QNetwork, Transition};
use crate::env::{Environment, EpisodeSpec, MarginalEval, StateVector, DEFAULT_K_MAX};
use crate::error::{Error, Result};
use crate::network::{DemandTable, FlowState, Network};
use crate::paths::{k_shortest_paths, shortest_path, Route};

/// Where each OD's candidate routes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TrainMode {
    /// Free-flow shortest path per OD, grown from all-or-nothing solutions.
    MsaGuided,
    /// Fixed set of K free-flow shortest routes.
    Ksp(usize),
    /// Fixed set of routes used by the classical SO solution.
    SoRoutes,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msa-guided" => Ok(TrainMode::MsaGuided),
            "so-routes" => Ok(TrainMode::SoRoutes),
            _ => match s.strip_prefix("ksp:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(TrainMode::Ksp(k)),
                _ => Err(Error::Config(format!(
                    "unknown mode {s:?} (expected msa-guided|ksp:K|so-routes)"
                ))),
            },
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::MsaGuided => f.write_str("msa-guided"),
            TrainMode::Ksp(k) => write!(f, "ksp:{k}"),
            TrainMode::SoRoutes => f.write_str("so-routes"),
        }
    }
}

impl From<TrainMode> for String {
    fn from(m: TrainMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for TrainMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Link costs under which the per-episode all-or-nothing target is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuideCosts {
    #[default]
    So,
    Ue,
}

impl FromStr for GuideCosts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "so" => Ok(GuideCosts::So),
            "ue" => Ok(GuideCosts::Ue),
            other => Err(Error::Config(format!(
                "unknown guide_costs {other:?} (expected so|ue)"
            ))),
        }
    }
}

/// Distribution of exploratory actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exploration {
    /// Sample from the assignment distribution.
    Guided,
    /// Uniform over the valid slots.
    Uniform,
}

impl FromStr for Exploration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Exploration::Guided),
            "uniform" => Ok(Exploration::Uniform),
            other => Err(Error::Config(format!(
                "unknown exploration {other:?} (expected guided|uniform)"
            ))),
        }
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// the episodes, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.6,
        }
    }
}

impl EpsilonSchedule {
    /// Exploration rate for 1-based `episode` out of `total`.
    pub fn value(&self, episode: usize, total: usize) -> f64 {
        let horizon = self.decay_fraction * total as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let progress = ((episode.saturating_sub(1)) as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * progress
    }
}

/// Constant removed from learning rewards. Every episode has the same
/// number of steps, so a constant offset leaves greedy policies unchanged
/// while keeping bootstrapped values near zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardBaseline {
    None,
    Fixed(f64),
    /// Mean of all raw rewards seen so far, the current one included.
    #[default]
    RunningMean,
}

impl RewardBaseline {
    fn validate(&self) -> Result<()> {
        match self {
            RewardBaseline::Fixed(b) if !b.is_finite() => Err(Error::Config(format!(
                "reward baseline must be finite, got {b}"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromStr for RewardBaseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RewardBaseline::None),
            "mean" | "running-mean" => Ok(RewardBaseline::RunningMean),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|b| b.is_finite())
                .map(RewardBaseline::Fixed)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "reward baseline must be none, mean or a number, got {other:?}"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub dqn: DqnConfig,
    pub episodes: usize,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
    pub k_max: usize,
    pub marginal_eval: MarginalEval,
    pub guide_costs: GuideCosts,
    pub exploration: Exploration,
    /// Append newly found all-or-nothing routes to the action sets.
    pub grow_routes: bool,
    /// Greedy evaluation period in episodes (0 disables).
    pub eval_every: usize,
    /// Rewards are divided by this before learning; `None` uses the
    /// environment's time scale.
    pub reward_scale: Option<f64>,
    /// Subtracted from every reward before scaling.
    #[serde(default)]
    pub reward_baseline: RewardBaseline,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            dqn: DqnConfig::default(),
            episodes: 3000,
            epsilon: EpsilonSchedule::default(),
            seed: 0,
            k_max: DEFAULT_K_MAX,
            marginal_eval: MarginalEval::Post,
            guide_costs: GuideCosts::So,
            exploration: Exploration::Guided,
            grow_routes: true,
            eval_every: 0,
            reward_scale: None,
            reward_baseline: RewardBaseline::RunningMean,
        }
    }
}

impl TrainerConfig {
    /// Mode-specific defaults: fixed route sets explore uniformly and never grow.
    pub fn for_mode(mode: TrainMode) -> Self {
        let base = TrainerConfig::default();
        match mode {
            TrainMode::MsaGuided => base,
            TrainMode::Ksp(_) | TrainMode::SoRoutes => TrainerConfig {
                exploration: Exploration::Uniform,
                grow_routes: false,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dqn.validate()?;
        let e = &self.epsilon;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(e.start) && unit(e.end) && unit(e.decay_fraction)) {
            return Err(Error::Config(
                "epsilon schedule values must lie in [0, 1]".into(),
            ));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        self.reward_baseline.validate()?;
        if let Some(s) = self.reward_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!(
                    "reward scale must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-OD probabilities over route slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDistribution {
    probs: Vec<Vec<f64>>,
}

impl AssignmentDistribution {
    pub fn uniform(route_sets: &[Vec<Route>]) -> Self {
        AssignmentDistribution {
            probs: route_sets
                .iter()
                .map(|s| vec![1.0 / s.len().max(1) as f64; s.len()])
                .collect(),
        }
    }

    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (od, p) in probs.iter().enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                || (!p.is_empty() && (sum - 1.0).abs() > 1e-12)
            {
                return Err(Error::Validation(format!(
                    "OD #{od} probabilities are not a distribution"
                )));
            }
        }
        Ok(AssignmentDistribution { probs })
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn od(&self, od: usize) -> &[f64] {
        &self.probs[od]
    }
}

/// With probability `epsilon` an exploratory draw, otherwise the greedy slot.
pub fn msa_guided_select<R: Rng>(
    q: &QNetwork,
    s: &StateVector,
    epsilon: f64,
    m: &AssignmentDistribution,
    exploration: Exploration,
    rng: &mut R,
) -> Result<usize> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        match exploration {
            Exploration::Guided => {
                let w = WeightedIndex::new(m.od(s.od)).map_err(|e| {
                    Error::Structural(format!("assignment distribution of OD #{}: {e}", s.od))
                })?;
                return Ok(w.sample(rng));
            }
            Exploration::Uniform => {
                let valid: Vec<usize> = (0..s.mask.len()).filter(|&j| s.mask[j]).collect();
                if valid.is_empty() {
                    return Err(Error::Structural("every action slot is masked".into()));
                }
                return Ok(valid[rng.gen_range(0..valid.len())]);
            }
        }
    }
    act_greedy(q, s)
}

/// Re-averages `m` towards the all-or-nothing solution at `episode_flows`,
/// appending newly discovered routes when `grow` is set.
///
/// Returns the number of routes appended.
pub fn update_distribution(
    m: &mut AssignmentDistribution,
    episode_flows: &FlowState,
    spec: &mut EpisodeSpec,
    episode: usize,
    guide_costs: GuideCosts,
    grow: bool,
) -> Result<usize> {
    if episode == 0 {
        return Err(Error::Config("episode index is 1-based".into()));
    }
    let net = spec.net();
    let costs = match guide_costs {
        GuideCosts::So => net.marginal_times(episode_flows),
        GuideCosts::Ue => net.link_times(episode_flows),
    };
    let mut targets = Vec::with_capacity(spec.num_ods());
    for e in spec.demand().entries() {
        targets.push(shortest_path(net, &costs, e.origin, e.destination)?);
    }
    let mut added = 0;
    let step = 1.0 / episode as f64;
    for (od, route) in targets.into_iter().enumerate() {
        let slot = match spec.route_sets()[od].iter().position(|r| *r == route) {
            Some(slot) => slot,
            None if grow && spec.route_sets()[od].len() < spec.k_max() => {
                spec.push_route(od, route)?;
                m.probs[od].push(0.0);
                added += 1;
                spec.route_sets()[od].len() - 1
            }
            None => {
                if grow {
                    warn!(
                        "OD #{od}: action set full at k_max = {}, route discarded",
                        spec.k_max()
                    );
                }
                let existing = &spec.route_sets()[od];
                (0..existing.len())
                    .min_by(|&a, &b| {
                        existing[a]
                            .cost(&costs)
                            .total_cmp(&existing[b].cost(&costs))
                    })
                    .expect("nonempty route set")
            }
        };
        let p = &mut m.probs[od];
        for (j, x) in p.iter_mut().enumerate() {
            let target = if j == slot { 1.0 } else { 0.0 };
            *x = if episode == 1 {
                target
            } else {
                (1.0 - step) * *x + step * target
            };
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(added)
}

/// Initial candidate routes for `mode`.
pub fn initial_route_sets(
    net: &Network,
    demand: &DemandTable,
    mode: TrainMode,
    k_max: usize,
) -> Result<Vec<Vec<Route>>> {
    let ff = net.free_flow_times();
    match mode {
        TrainMode::MsaGuided => demand
            .entries()
            .iter()
            .map(|e| Ok(vec![shortest_path(net, &ff, e.origin, e.destination)?]))
            .collect(),
        TrainMode::Ksp(k) => {
            if k > k_max {
                return Err(Error::Config(format!("ksp:{k} exceeds k_max = {k_max}")));
            }
            demand
                .entries()
                .iter()
                .map(|e| {
                    let routes = k_shortest_paths(net, &ff, e.origin, e.destination, k)?;
                    if routes.is_empty() {
                        return Err(Error::NoPath {
                            origin: net.node_name(e.origin).to_string(),
                            destination: net.node_name(e.destination).to_string(),
                        });
                    }
                    Ok(routes)
                })
                .collect()
        }
        TrainMode::SoRoutes => {
            let so = solve_msa(
                net,
                demand,
                Objective::So,
                BASELINE_MAX_ITERS,
                BASELINE_GAP_TOL,
            )?;
            let mut sets = extract_so_route_set(&so, DEFAULT_FLOW_FLOOR)?;
            for (od, s) in sets.iter_mut().enumerate() {
                if s.len() > k_max {
                    info!(
                        "OD #{od}: keeping the {k_max} highest-flow of {} SO routes",
                        s.len()
                    );
                    s.truncate(k_max);
                }
            }
            Ok(sets)
        }
    }
}

pub const BASELINE_MAX_ITERS: usize = 10_000;
pub const BASELINE_GAP_TOL: f64 = 1e-4;

/// UE and SO total travel times used as reference points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub ue_tstt: f64,
    pub so_tstt: f64,
}

impl Baselines {
    /// MSA solutions at the standard iteration budget and gap tolerance.
    pub fn compute(net: &Network, demand: &DemandTable) -> Result<Self> {
        Self::compute_with(net, demand, BASELINE_MAX_ITERS, BASELINE_GAP_TOL)
    }

    pub fn compute_with(
        net: &Network,
        demand: &DemandTable,
        max_iters: usize,
        gap_tol: f64,
    ) -> Result<Self> {
        Ok(Baselines {
            ue_tstt: solve_msa(net, demand, Objective::Ue, max_iters, gap_tol)?.tstt,
            so_tstt: solve_msa(net, demand, Objective::So, max_iters, gap_tol)?.tstt,
        })
    }

    /// `((UE − x)/UE, (x − SO)/SO)`.
    pub fn metrics(&self, x: f64) -> (f64, f64) {
        (
            (self.ue_tstt - x) / self.ue_tstt,
            (x - self.so_tstt) / self.so_tstt,
        )
    }
}

/// Outcome of one greedy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tstt: f64,
    pub route_counts: Vec<Vec<usize>>,
    pub flows: FlowState,
}

/// Plays one episode with `ε = 0` in the template's current arrival order.
pub fn greedy_rollout(q: &QNetwork, spec: &EpisodeSpec) -> Result<Rollout> {
    let mut env = Environment::new(spec);
    let mut s = env.reset()?;
    loop {
        let a = act_greedy(q, &s)?;
        match env.step(a)?.next_state {
            Some(next) => s = next,
            None => break,
        }
    }
    Ok(Rollout {
        tstt: env.tstt(),
        route_counts: env.route_counts().to_vec(),
        flows: env.flows().clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub total_travel_time: f64,
    /// `None` before the first gradient step.
    pub mean_loss: Option<f64>,
    pub epsilon: f64,
    pub routes_per_od: Vec<usize>,
    /// Greedy-policy TSTT when an evaluation ran after this episode.
    pub greedy_tstt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpisodeRecord>,
}

impl TrainLog {
    /// `episode,tstt,loss,epsilon` rows; the loss is blank before learning starts.
    pub fn write_curve<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "tstt", "loss", "epsilon"])?;
        for r in &self.records {
            w.write_record([
                r.episode.to_string(),
                r.total_travel_time.to_string(),
                r.mean_loss.map(|l| l.to_string()).unwrap_or_default(),
                r.epsilon.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    /// First episode after which every greedy evaluation equals `target`.
    pub fn settled_at(&self, target: f64) -> Option<usize> {
        let evals: Vec<(usize, f64)> = self
            .records
            .iter()
            .filter_map(|r| r.greedy_tstt.map(|g| (r.episode, g)))
            .collect();
        let last_miss = evals.iter().rposition(|&(_, g)| g != target);
        match last_miss {
            None => evals.first().map(|e| e.0),
            Some(i) => evals.get(i + 1).map(|e| e.0),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Greedy episode at the evaluation arrival order after training.
    pub final_rollout: Rollout,
    pub spec: EpisodeSpec,
}

/// Arrival seed of training episode `episode` (1-based).
pub fn arrival_seed(base_seed: u64, episode: usize) -> u64 {
    base_seed.wrapping_add(episode as u64)
}

/// Builds the episode template for `mode`.
pub fn build_spec(
    net: &Network,
    demand: &DemandTable,
    mode: TrainMode,
    config: &TrainerConfig,
) -> Result<EpisodeSpec> {
    let sets = initial_route_sets(net, demand, mode, config.k_max)?;
    EpisodeSpec::new(
        net.clone(),
        demand.clone(),
        sets,
        config.k_max,
        config.marginal_eval,
    )
}

/// Runs `config.episodes` training episodes on `spec`.
///
/// Greedy evaluations and the final rollout use arrival seed `config.seed`;
/// training episode `i` uses `config.seed + i`.
pub fn train(
    mut spec: EpisodeSpec,
    mode: TrainMode,
    config: &TrainerConfig,
    baselines: Option<Baselines>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut agent = DqnAgent::new(
        config.dqn.clone(),
        spec.state_dim(),
        spec.k_max(),
        config.seed,
    )?;
    let mut explore_rng = ChaCha8Rng::seed_from_u64(config.seed);
    explore_rng.set_stream(2);
    let reward_scale = config.reward_scale.unwrap_or(spec.time_scale());
    let mut m = AssignmentDistribution::uniform(spec.route_sets());
    let mut log = TrainLog::default();
    let (mut reward_sum, mut reward_count) = (0.0, 0usize);

    for episode in 1..=config.episodes {
        let epsilon = config.epsilon.value(episode, config.episodes);
        spec.shuffle_arrivals(arrival_seed(config.seed, episode));
        let (tstt, flows, loss_sum, n_updates) = {
            let mut env = Environment::new(&spec);
            let mut s = env.reset()?;
            let (mut loss_sum, mut n_updates) = (0.0, 0usize);
            loop {
                let a = msa_guided_select(
                    agent.online(),
                    &s,
                    epsilon,
                    &m,
                    config.exploration,
                    &mut explore_rng,
                )?;
                let out = env.step(a)?;
                reward_sum += out.reward;
                reward_count += 1;
                let baseline = match config.reward_baseline {
                    RewardBaseline::None => 0.0,
                    RewardBaseline::Fixed(b) => b,
                    RewardBaseline::RunningMean => reward_sum / reward_count as f64,
                };
                let next = out.next_state.clone();
                let t = Transition {
                    state: s.features,
                    mask: s.mask,
                    action: a,
                    reward: (out.reward - baseline) / reward_scale,
                    next: next.as_ref().map(|n| (n.features.clone(), n.mask.clone())),
                };
                if let Some(loss) = agent.observe(t)? {
                    loss_sum += loss;
                    n_updates += 1;
                }
                match next {
                    Some(n) => s = n,
                    None => break,
                }
            }
            (env.tstt(), env.flows().clone(), loss_sum, n_updates)
        };
        let added = update_distribution(
            &mut m,
            &flows,
            &mut spec,
            episode,
            config.guide_costs,
            config.grow_routes,
        )?;
        if added > 0 {
            debug!("episode {episode}: {added} new routes");
        }
        let greedy_tstt = if config.eval_every > 0 && episode % config.eval_every == 0 {
            Some(evaluation_rollout(agent.online(), &spec, config.seed)?.tstt)
        } else {
            None
        };
        let record = EpisodeRecord {
            episode,
            total_travel_time: tstt,
            mean_loss: (n_updates > 0).then(|| loss_sum / n_updates as f64),
            epsilon,
            routes_per_od: spec.route_sets().iter().map(Vec::len).collect(),
            greedy_tstt,
        };
        if episode % 100 == 0 || episode == config.episodes {
            info!(
                "episode {episode}/{}: tstt {tstt:.1} eps {epsilon:.3} loss {:?} greedy {greedy_tstt:?}",
                config.episodes, record.mean_loss
            );
        }
        log.records.push(record);
    }

    let final_rollout = evaluation_rollout(agent.online(), &spec, config.seed)?;
    let header = CheckpointHeader::new(
        &spec,
        mode,
        config,
        &agent,
        &m,
        baselines,
        final_rollout.tstt,
    );
    let checkpoint = Checkpoint {
        header,
        online: agent.online().params().to_vec(),
        target: agent.target().params().to_vec(),
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        final_rollout,
        spec,
    })
}

/// Greedy episode with arrivals shuffled by `seed`.
pub fn evaluation_rollout(q: &QNetwork, spec: &EpisodeSpec, seed: u64) -> Result<Rollout> {
    let mut eval_spec = spec.clone();
    eval_spec.shuffle_arrivals(seed);
    greedy_rollout(q, &eval_spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteShare {
    pub route: String,
    pub travelers: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdShares {
    pub origin: String,
    pub destination: String,
    pub routes: Vec<RouteShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: TrainMode,
    pub tstt: f64,
    pub ue_tstt: Option<f64>,
    pub so_tstt: Option<f64>,
    /// `(UE − x)/UE`.
    pub improvement_over_ue: Option<f64>,
    /// `(x − SO)/SO`.
    pub gap_to_so: Option<f64>,
    pub arrival_seed: u64,
    pub route_shares: Vec<OdShares>,
}

pub fn report(
    spec: &EpisodeSpec,
    mode: TrainMode,
    rollout: &Rollout,
    baselines: Option<Baselines>,
    seed: u64,
) -> EvaluationReport {
    let net = spec.net();
    let route_shares = spec
        .demand()
        .entries()
        .iter()
        .zip(spec.route_sets())
        .zip(&rollout.route_counts)
        .map(|((e, routes), counts)| {
            let total: usize = counts.iter().sum();
            OdShares {
                origin: net.node_name(e.origin).to_string(),
                destination: net.node_name(e.destination).to_string(),
                routes: routes
                    .iter()
                    .zip(counts)
                    .map(|(r, &c)| RouteShare {
                        route: r.label(net),
                        travelers: c,
                        share: if total > 0 {
                            c as f64 / total as f64
                        } else {
                            0.0
                        },
                    })
                    .collect(),
            }
        })
        .collect();
    let metrics = baselines.map(|b| b.metrics(rollout.tstt));
    EvaluationReport {
        mode,
        tstt: rollout.tstt,
        ue_tstt: baselines.map(|b| b.ue_tstt),
        so_tstt: baselines.map(|b| b.so_tstt),
        improvement_over_ue: metrics.map(|m| m.0),
        gap_to_so: metrics.map(|m| m.1),
        arrival_seed: seed,
        route_shares,
    }
}

/// Greedy rollout of a stored policy on `net`/`demand`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    net: &Network,
    demand: &DemandTable,
) -> Result<EvaluationReport> {
    let h = &checkpoint.header;
    let spec = h.episode_spec(net, demand)?;
    let q = checkpoint.online_network()?;
    if q.architecture().input_dim != spec.state_dim() || q.num_actions() != spec.k_max() {
        return Err(Error::Structural(format!(
            "checkpoint expects state dim {} and {} actions, data gives {} and {}",
            q.architecture().input_dim,
            q.num_actions(),
            spec.state_dim(),
            spec.k_max()
        )));
    }
    let rollout = evaluation_rollout(&q, &spec, h.config.seed)?;
    Ok(report(&spec, h.mode, &rollout, h.baselines, h.config.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn braess_spec(k: usize) -> EpisodeSpec {
        let (net, demand) = data::braess().unwrap();
        let config = TrainerConfig::default();
        build_spec(&net, &demand, TrainMode::Ksp(k), &config).unwrap()
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "msa-guided".parse::<TrainMode>().unwrap(),
            TrainMode::MsaGuided
        );
        assert_eq!("ksp:15".parse::<TrainMode>().unwrap(), TrainMode::Ksp(15));
        assert_eq!(
            "so-routes".parse::<TrainMode>().unwrap(),
            TrainMode::SoRoutes
        );
        for bad in ["ksp:0", "ksp:x", "ksp", "sp"] {
            assert!(bad.parse::<TrainMode>().is_err(), "{bad}");
        }
        assert_eq!(TrainMode::Ksp(10).to_string(), "ksp:10");
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(1, 100), 1.0);
        assert!((e.value(31, 100) - 0.525).abs() < 1e-12);
        assert!((e.value(61, 100) - 0.05).abs() < 1e-12);
        assert!((e.value(100, 100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn first_update_overwrites() {
        let mut spec = braess_spec(3);
        let mut m = AssignmentDistribution::from_probs(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        // All six on ACB: CB is congested, ADB becomes the SO-shortest route.
        let flows = FlowState::from_volumes(vec![6.0, 6.0, 0.0, 0.0, 0.0]).unwrap();
        update_distribution(&mut m, &flows, &mut spec, 1, GuideCosts::So, false).unwrap();
        let adb = spec.route_sets()[0]
            .iter()
            .position(|r| r.label(spec.net()) == "ADB")
            .unwrap();
        let expect: Vec<f64> = (0..3).map(|j| if j == adb { 1.0 } else { 0.0 }).collect();
        assert_eq!(m.od(0), &expect[..]);
    }

    #[test]
    fn averaging_halves_at_second_episode() {
        let mut spec = braess_spec(3);
        let adb = spec.route_sets()[0]
            .iter()
            .position(|r| r.label(spec.net()) == "ADB")
            .unwrap();
        let mut probs = vec![0.0; 3];
        probs[(adb + 1) % 3] = 1.0;
        let mut m = AssignmentDistribution::from_probs(vec![probs.clone()]).unwrap();
        let flows = FlowState::from_volumes(vec![6.0, 6.0, 0.0, 0.0, 0.0]).unwrap();
        update_distribution(&mut m, &flows, &mut spec, 2, GuideCosts::So, false).unwrap();
        assert_eq!(m.od(0)[adb], 0.5);
        assert_eq!(m.od(0)[(adb + 1) % 3], 0.5);
    }

    #[test]
    fn routes_grow_from_single_path() {
        let (net, demand) = data::braess().unwrap();
        let config = TrainerConfig::default();
        let mut spec = build_spec(&net, &demand, TrainMode::MsaGuided, &config).unwrap();
        assert_eq!(spec.route_sets()[0].len(), 1);
        assert_eq!(spec.route_sets()[0][0].label(&net), "ACDB");
        let mut m = AssignmentDistribution::uniform(spec.route_sets());
        assert_eq!(m.od(0), &[1.0]);
        let flows = FlowState::from_volumes(vec![6.0, 0.0, 0.0, 6.0, 6.0]).unwrap();
        let added =
            update_distribution(&mut m, &flows, &mut spec, 1, GuideCosts::So, true).unwrap();
        assert_eq!(added, 1);
        assert_eq!(spec.route_sets()[0].len(), 2);
        assert_eq!(m.od(0), &[0.0, 1.0]);
        let again =
            update_distribution(&mut m, &flows, &mut spec, 2, GuideCosts::So, true).unwrap();
        assert_eq!(again, 0);
        assert_eq!(m.od(0), &[0.0, 1.0]);
    }

    #[test]
    fn full_action_set_falls_back_to_best_slot() {
        let (net, demand) = data::braess().unwrap();
        let config = TrainerConfig {
            k_max: 1,
            ..TrainerConfig::default()
        };
        let mut spec = build_spec(&net, &demand, TrainMode::MsaGuided, &config).unwrap();
        let mut m = AssignmentDistribution::uniform(spec.route_sets());
        let flows = FlowState::from_volumes(vec![6.0, 0.0, 0.0, 6.0, 6.0]).unwrap();
        assert_eq!(
            update_distribution(&mut m, &flows, &mut spec, 1, GuideCosts::So, true).unwrap(),
            0
        );
        assert_eq!(m.od(0), &[1.0]);
    }

    #[test]
    fn select_degenerate_epsilons() {
        let spec = braess_spec(3);
        let agent = DqnAgent::new(
            DqnConfig {
                hidden: vec![8, 8],
                ..DqnConfig::default()
            },
            spec.state_dim(),
            20,
            0,
        )
        .unwrap();
        let s = Environment::new(&spec).reset().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = AssignmentDistribution::from_probs(vec![vec![0.0, 0.0, 1.0]]).unwrap();
        for _ in 0..100 {
            assert_eq!(
                msa_guided_select(agent.online(), &s, 0.0, &m, Exploration::Guided, &mut rng)
                    .unwrap(),
                0
            );
            assert_eq!(
                msa_guided_select(agent.online(), &s, 1.0, &m, Exploration::Guided, &mut rng)
                    .unwrap(),
                2
            );
        }
    }

    #[test]
    fn guided_uniform_frequencies() {
        let spec = braess_spec(3);
        let agent = DqnAgent::new(
            DqnConfig {
                hidden: vec![8, 8],
                ..DqnConfig::default()
            },
            spec.state_dim(),
            20,
            0,
        )
        .unwrap();
        let s = Environment::new(&spec).reset().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let m = AssignmentDistribution::uniform(spec.route_sets());
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[msa_guided_select(
                agent.online(),
                &s,
                1.0,
                &m,
                Exploration::Guided,
                &mut rng,
            )
            .unwrap()] += 1;
        }
        for c in counts {
            assert!(
                (c as f64 / 30_000.0 - 1.0 / 3.0).abs() <= 0.01,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn uniform_exploration_ignores_distribution() {
        let spec = braess_spec(3);
        let agent = DqnAgent::new(
            DqnConfig {
                hidden: vec![8, 8],
                ..DqnConfig::default()
            },
            spec.state_dim(),
            20,
            0,
        )
        .unwrap();
        let s = Environment::new(&spec).reset().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = AssignmentDistribution::from_probs(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let mut seen = [false; 3];
        for _ in 0..200 {
            seen[msa_guided_select(agent.online(), &s, 1.0, &m, Exploration::Uniform, &mut rng)
                .unwrap()] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn metrics_definitions() {
        let b = Baselines {
            ue_tstt: 57052.1,
            so_tstt: 54809.8,
        };
        let (imp, _) = b.metrics(55000.0);
        assert!((imp * 100.0 - 3.60).abs() < 0.005);
        let (_, gap) = b.metrics(54950.0);
        assert!((gap * 100.0 - 0.26).abs() < 0.005);
        assert_eq!(b.metrics(54809.8).1, 0.0);
    }

    #[test]
    fn zero_episodes_gives_empty_log() {
        let spec = braess_spec(3);
        let config = TrainerConfig {
            episodes: 0,
            dqn: DqnConfig {
                hidden: vec![8, 8],
                ..DqnConfig::default()
            },
            ..TrainerConfig::default()
        };
        let out = train(spec, TrainMode::Ksp(3), &config, None).unwrap();
        assert!(out.log.records.is_empty());
        // Untrained heads are zero, so every traveler takes slot 0 (ACDB).
        assert_eq!(out.final_rollout.route_counts[0], vec![6, 0, 0]);
    }

    #[test]
    fn settled_detection() {
        let rec = |episode, g| EpisodeRecord {
            episode,
            total_travel_time: 0.0,
            mean_loss: None,
            epsilon: 0.0,
            routes_per_od: vec![],
            greedy_tstt: g,
        };
        let log = TrainLog {
            records: vec![
                rec(1, Some(552.0)),
                rec(2, None),
                rec(3, Some(498.0)),
                rec(4, Some(498.0)),
            ],
        };
        assert_eq!(log.settled_at(498.0), Some(3));
        let log = TrainLog {
            records: vec![rec(1, Some(498.0)), rec(2, Some(552.0))],
        };
        assert_eq!(log.settled_at(498.0), None);
    }

    #[test]
    fn reward_baseline_parsing() {
        assert_eq!(
            "none".parse::<RewardBaseline>().unwrap(),
            RewardBaseline::None
        );
        assert_eq!(
            "mean".parse::<RewardBaseline>().unwrap(),
            RewardBaseline::RunningMean
        );
        assert_eq!(
            "-40.5".parse::<RewardBaseline>().unwrap(),
            RewardBaseline::Fixed(-40.5)
        );
        for bad in ["nan", "inf", "median", ""] {
            assert!(bad.parse::<RewardBaseline>().is_err(), "{bad}");
        }
        let mut c = TrainerConfig::default();
        c.reward_baseline = RewardBaseline::Fixed(f64::NAN);
        assert!(c.validate().is_err());
    }
}
