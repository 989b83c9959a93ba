//! Experiment orchestration: classical baseline tables, RL arm comparisons
//! and the Braess study.

use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve, Method, Objective};
use crate::error::{Error, Result};
use crate::network::{DemandTable, Network};
use crate::trainer::{
    build_spec, report, train, Baselines, EvaluationReport, TrainLog, TrainMode, TrainOutcome,
    TrainerConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub method: String,
    pub tstt: f64,
    pub iterations: usize,
    pub relative_gap: f64,
}

/// UE-MSA, SO-MSA, UE-FW and SO-FW.
pub fn run_table3(
    net: &Network,
    demand: &DemandTable,
    max_iters: usize,
    gap_tol: f64,
) -> Result<Vec<Table3Row>> {
    let mut rows = Vec::with_capacity(4);
    for method in [Method::Msa, Method::FrankWolfe] {
        for obj in [Objective::Ue, Objective::So] {
            let r = solve(net, demand, obj, method, max_iters, gap_tol)?;
            info!(
                "{obj}-{method}: tstt {:.4} after {} iterations, gap {:.2e}",
                r.tstt, r.iterations, r.relative_gap
            );
            rows.push(Table3Row {
                method: format!("{obj}-{method}"),
                tstt: r.tstt,
                iterations: r.iterations,
                relative_gap: r.relative_gap,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One trained configuration of the RL comparison.
#[derive(Debug, Clone)]
pub struct Arm {
    pub name: String,
    pub mode: TrainMode,
    pub config: TrainerConfig,
}

impl Arm {
    pub fn new(name: impl Into<String>, mode: TrainMode, config: TrainerConfig) -> Self {
        Arm {
            name: name.into(),
            mode,
            config,
        }
    }

    /// File-name friendly form of the arm name.
    pub fn slug(&self) -> String {
        self.name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '_'
                }
            })
            .collect()
    }
}

/// MSA-guided, SO route set, 10 and 15 shortest paths, each with its
/// mode defaults and `episodes`/`seed` applied.
pub fn default_arms(episodes: usize, seed: u64) -> Vec<Arm> {
    [
        ("MSA-guided RL", TrainMode::MsaGuided),
        ("RL-SO", TrainMode::SoRoutes),
        ("RL-10-SP", TrainMode::Ksp(10)),
        ("RL-15-SP", TrainMode::Ksp(15)),
    ]
    .into_iter()
    .map(|(name, mode)| {
        let config = TrainerConfig {
            episodes,
            seed,
            ..TrainerConfig::for_mode(mode)
        };
        Arm::new(name, mode, config)
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Row {
    pub method: String,
    pub mode: String,
    pub episodes: usize,
    pub tstt: f64,
    pub improvement_over_ue: f64,
    pub gap_to_so: f64,
}

/// Summary written next to each run's checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub seed: u64,
    pub episodes: usize,
    pub final_tstt: f64,
    pub report: &'a EvaluationReport,
    pub route_sets: Vec<Vec<String>>,
    pub config: &'a TrainerConfig,
}

/// Trains one arm and, with `out_dir`, writes `curve.csv`,
/// `checkpoint.bin` and `summary.json` there.
pub fn run_arm(
    net: &Network,
    demand: &DemandTable,
    arm: &Arm,
    baselines: Option<Baselines>,
    out_dir: Option<&Path>,
) -> Result<(TrainOutcome, EvaluationReport)> {
    let spec = build_spec(net, demand, arm.mode, &arm.config)?;
    let outcome = train(spec, arm.mode, &arm.config, baselines)?;
    let rep = report(
        &outcome.spec,
        arm.mode,
        &outcome.final_rollout,
        baselines,
        arm.config.seed,
    );
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut curve = Vec::new();
        outcome.log.write_curve(&mut curve)?;
        write_file(&dir.join("curve.csv"), &curve)?;
        outcome.checkpoint.save(dir.join("checkpoint.bin"))?;
        let spec = &outcome.spec;
        let summary = RunSummary {
            seed: arm.config.seed,
            episodes: arm.config.episodes,
            final_tstt: outcome.final_rollout.tstt,
            report: &rep,
            route_sets: spec
                .route_sets()
                .iter()
                .map(|s| s.iter().map(|r| r.label(spec.net())).collect())
                .collect(),
            config: &arm.config,
        };
        write_file(
            &dir.join("summary.json"),
            &serde_json::to_vec_pretty(&summary)?,
        )?;
    }
    Ok((outcome, rep))
}

pub struct Table4Output {
    pub rows: Vec<Table4Row>,
    pub logs: Vec<TrainLog>,
    pub baselines: Baselines,
}

/// Trains every arm against this network's own UE/SO baselines. With
/// `out_dir`, writes `table4.csv` and one subdirectory per arm.
pub fn run_table4(
    net: &Network,
    demand: &DemandTable,
    arms: &[Arm],
    out_dir: Option<&Path>,
) -> Result<Table4Output> {
    let baselines = Baselines::compute(net, demand)?;
    info!(
        "baselines: UE {:.2}, SO {:.2}",
        baselines.ue_tstt, baselines.so_tstt
    );
    let mut rows = Vec::with_capacity(arms.len());
    let mut logs = Vec::with_capacity(arms.len());
    for arm in arms {
        let dir = out_dir.map(|d| d.join(arm.slug()));
        let (outcome, _) = run_arm(net, demand, arm, Some(baselines), dir.as_deref())?;
        let (imp, gap) = baselines.metrics(outcome.final_rollout.tstt);
        info!(
            "{}: tstt {:.2} ({:+.3}% vs SO)",
            arm.name,
            outcome.final_rollout.tstt,
            100.0 * gap
        );
        rows.push(Table4Row {
            method: arm.name.clone(),
            mode: arm.mode.to_string(),
            episodes: arm.config.episodes,
            tstt: outcome.final_rollout.tstt,
            improvement_over_ue: imp,
            gap_to_so: gap,
        });
        logs.push(outcome.log);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        write_file(&dir.join("table4.csv"), &buf)?;
    }
    Ok(Table4Output {
        rows,
        logs,
        baselines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BraessStudy {
    /// Travelers per route label at the final greedy rollout.
    pub route_counts: Vec<(String, usize)>,
    pub tstt: f64,
    pub so_tstt: f64,
    pub ue_tstt: f64,
    pub ue_route_cost: f64,
    /// UE cost per traveler once the C→D link is removed.
    pub ue_route_cost_without_cd: f64,
    /// First greedy evaluation after which the policy stayed at the SO value.
    pub settled_episode: Option<usize>,
    pub episodes: usize,
}

impl BraessStudy {
    pub fn count(&self, label: &str) -> Option<usize> {
        self.route_counts
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, c)| c)
    }

    /// Route `ACDB` is unused and the total matches the system optimum.
    pub fn converged(&self) -> bool {
        self.count("ACDB") == Some(0) && self.tstt == self.so_tstt.round()
    }
}

/// MSA iterations for the Braess SO reference; the initial all-or-nothing
/// load on ACDB decays as `1/i`.
pub const BRAESS_SO_ITERS: usize = 200_000;

/// Trains on Braess with all three routes as actions and compares against
/// the classical solutions.
pub fn run_braess_study(
    net: &Network,
    demand: &DemandTable,
    config: &TrainerConfig,
    out_dir: Option<&Path>,
) -> Result<BraessStudy> {
    let (c, d) = match (net.node_id("C"), net.node_id("D")) {
        (Some(c), Some(d)) => (c, d),
        _ => return Err(Error::Config("Braess network needs nodes C and D".into())),
    };
    let cd = net
        .find_link(c, d)
        .ok_or_else(|| Error::Config("Braess network has no C->D link".into()))?;
    let travelers = demand.total();
    let ue = solve(
        net,
        demand,
        Objective::Ue,
        Method::Msa,
        crate::trainer::BASELINE_MAX_ITERS,
        0.0,
    )?;
    let so = solve(
        net,
        demand,
        Objective::So,
        Method::Msa,
        BRAESS_SO_ITERS,
        0.0,
    )?;
    let reduced = net.without_links(&[cd])?;
    let reduced_demand = DemandTable::new(&reduced, demand.entries().to_vec())?;
    let ue4 = solve(
        &reduced,
        &reduced_demand,
        Objective::Ue,
        Method::Msa,
        crate::trainer::BASELINE_MAX_ITERS,
        0.0,
    )?;

    let mut config = config.clone();
    if config.eval_every == 0 {
        config.eval_every = 10;
    }
    let arm = Arm::new("Braess", TrainMode::Ksp(3), config.clone());
    let baselines = Baselines {
        ue_tstt: ue.tstt,
        so_tstt: so.tstt,
    };
    let (outcome, rep) = run_arm(net, demand, &arm, Some(baselines), out_dir)?;
    let route_counts = rep
        .route_shares
        .iter()
        .flat_map(|od| od.routes.iter().map(|r| (r.route.clone(), r.travelers)))
        .collect();
    let study = BraessStudy {
        route_counts,
        tstt: outcome.final_rollout.tstt,
        so_tstt: so.tstt,
        ue_tstt: ue.tstt,
        ue_route_cost: ue.tstt / travelers,
        ue_route_cost_without_cd: ue4.tstt / travelers,
        settled_episode: outcome.log.settled_at(so.tstt.round()),
        episodes: config.episodes,
    };
    if let Some(dir) = out_dir {
        write_file(
            &dir.join("braess.json"),
            &serde_json::to_vec_pretty(&study)?,
        )?;
    }
    Ok(study)
}
