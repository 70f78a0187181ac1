//! Population-based training over self-tuning agents.
//!
//! Agents train independently between step barriers. At each barrier the
//! scheduler ranks live agents by validation accuracy, copies a top agent's
//! full state into every bottom agent and perturbs the copied distribution.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MaskKind;
use crate::hyper::PERTURB_FACTORS;
use crate::rng::Stream;
use crate::trainer::{Dataset, EpochRecord, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentStatus {
    Running,
    Ready,
    Dead,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub id: usize,
    pub state: TrainState,
    pub step_count: u64,
    pub last_val_acc: f64,
    pub status: AgentStatus,
    pub diagnostic: Option<String>,
    pub history: Vec<EpochRecord>,
}

impl Agent {
    pub fn new(id: usize, state: TrainState) -> Self {
        Self {
            id,
            state,
            step_count: 0,
            last_val_acc: 0.0,
            status: AgentStatus::Running,
            diagnostic: None,
            history: Vec::new(),
        }
    }

    pub fn is_live(&self) -> bool {
        self.status != AgentStatus::Dead
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Top,
    Middle,
    Bottom,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Top => "top",
            Tier::Middle => "middle",
            Tier::Bottom => "bottom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    None,
    ExploitedFrom(usize),
    Explored,
    Dead,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::None => write!(f, "none"),
            Action::ExploitedFrom(id) => write!(f, "exploited_from:{id}"),
            Action::Explored => write!(f, "explored"),
            Action::Dead => write!(f, "dead"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbtConfig {
    pub warmup_epochs: u64,
    pub step_epochs: u64,
    /// Epochs each agent consumes in total, warmup included.
    pub total_epochs: u64,
    pub exploit: bool,
    pub explore: bool,
    /// Write every agent's state every this many steps (0: final step only).
    pub checkpoint_every: u64,
}

impl Default for PbtConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 200,
            step_epochs: 1,
            total_epochs: 400,
            exploit: true,
            explore: true,
            checkpoint_every: 0,
        }
    }
}

impl PbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_epochs == 0 {
            return Err(Error::Config("step_epochs must be positive".into()));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// `(top, bottom)` tier sizes for `k` live agents: `⌈k/3⌉` and `⌊k/3⌋`.
pub fn tier_sizes(k: usize) -> (usize, usize) {
    (k.div_ceil(3), k / 3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub step: u64,
    pub agent_id: usize,
    pub val_acc: f64,
    pub tier: Option<Tier>,
    pub action: Action,
}

pub fn write_leaderboard_csv<W: Write>(mut w: W, rows: &[LeaderRow]) -> std::io::Result<()> {
    writeln!(w, "step,agent_id,val_acc,tier,action")?;
    for r in rows {
        let tier = r.tier.map_or("none", Tier::name);
        writeln!(w, "{},{},{},{},{}", r.step, r.agent_id, r.val_acc, tier, r.action)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct Population {
    pub agents: Vec<Agent>,
    pub config: PbtConfig,
    /// Barrier counter, also used to key exploit/explore randomness.
    pub step: u64,
}

/// Outcome of `run_population`.
#[derive(Debug)]
pub struct PbtOutcome {
    pub best: usize,
    pub leaderboard: Vec<LeaderRow>,
}

impl Population {
    pub fn new(states: Vec<TrainState>, config: PbtConfig) -> Result<Self> {
        config.validate()?;
        if states.is_empty() {
            return Err(Error::Config("population needs at least one agent".into()));
        }
        let agents = states.into_iter().enumerate().map(|(id, s)| Agent::new(id, s)).collect();
        Ok(Self { agents, config, step: 0 })
    }

    /// Ranked ids of live agents: accuracy descending, then id ascending.
    pub fn ranking(&self) -> Vec<usize> {
        let mut live: Vec<&Agent> = self.agents.iter().filter(|a| a.is_live()).collect();
        live.sort_by(|a, b| b.last_val_acc.total_cmp(&a.last_val_acc).then(a.id.cmp(&b.id)));
        live.iter().map(|a| a.id).collect()
    }

    pub fn tiers(&self) -> Vec<Option<Tier>> {
        let ranking = self.ranking();
        let (top, bottom) = tier_sizes(ranking.len());
        let mut out = vec![None; self.agents.len()];
        for (pos, &id) in ranking.iter().enumerate() {
            out[id] = Some(if pos < top {
                Tier::Top
            } else if pos >= ranking.len() - bottom {
                Tier::Bottom
            } else {
                Tier::Middle
            });
        }
        out
    }

    /// Copies a uniformly chosen top agent into every bottom agent.
    /// Returns `(bottom id, source id)` pairs.
    pub fn exploit(&mut self) -> Vec<(usize, usize)> {
        if let Some(a) = self.agents.iter().find(|a| a.status == AgentStatus::Running) {
            log::warn!("exploit at step {} with agent {} not ready; skipped", self.step, a.id);
            return Vec::new();
        }
        let ranking = self.ranking();
        if ranking.len() < 3 {
            if self.agents.len() >= 3 {
                log::warn!("only {} live agents at step {}; exploitation skipped", ranking.len(), self.step);
            }
            return Vec::new();
        }
        let (top, bottom) = tier_sizes(ranking.len());
        let tops = &ranking[..top];
        let mut copies = Vec::new();
        for &target in &ranking[ranking.len() - bottom..] {
            let seeds = self.agents[target].state.seeds;
            let mut rng = seeds.rng(Stream::Pbt, &[self.step, 0]);
            let source = tops[rng.gen_range(0..tops.len())];
            let src = self.agents[source].state.clone();
            let acc = self.agents[source].last_val_acc;
            let t = &mut self.agents[target];
            t.state.copy_from(&src);
            t.last_val_acc = acc;
            copies.push((target, source));
        }
        copies
    }

    /// Perturbs the distribution of `id` and re-evaluates it.
    pub fn explore(&mut self, id: usize, data: &Dataset) -> Result<()> {
        let step = self.step;
        let a = &mut self.agents[id];
        let seed = a.state.seeds.derive(Stream::Pbt, &[step, 1]);
        a.state.dist = a.state.dist.perturb(&PERTURB_FACTORS, seed);
        a.last_val_acc = a.state.evaluate(data, MaskKind::Val)?;
        Ok(())
    }

    /// Trains every live agent for `epochs` epochs, in parallel.
    pub fn train_all(&mut self, data: &Dataset, epochs: u64) {
        self.agents.par_iter_mut().filter(|a| a.is_live()).for_each(|a| training_step(a, data, epochs));
    }

    /// Warmup, then step / exploit / explore barriers until every agent
    /// has consumed `total_epochs`.
    pub fn run(&mut self, data: &Dataset, checkpoint_dir: Option<&Path>) -> Result<PbtOutcome> {
        let cfg = self.config;
        let mut leaderboard = Vec::new();
        if cfg.warmup_epochs > 0 {
            self.train_all(data, cfg.warmup_epochs);
            self.check_alive()?;
        }
        let mut consumed = cfg.warmup_epochs;
        while consumed < cfg.total_epochs {
            let epochs = cfg.step_epochs.min(cfg.total_epochs - consumed);
            self.train_all(data, epochs);
            consumed += epochs;
            self.step += 1;
            self.check_alive()?;
            let tiers = self.tiers();
            let mut actions: Vec<Action> = self
                .agents
                .iter()
                .map(|a| if a.is_live() { Action::None } else { Action::Dead })
                .collect();
            if cfg.exploit {
                for (target, source) in self.exploit() {
                    actions[target] = Action::ExploitedFrom(source);
                    if cfg.explore {
                        self.explore(target, data)?;
                    }
                }
            } else if cfg.explore {
                // without exploitation every agent explores at each barrier
                for (id, action) in actions.iter_mut().enumerate() {
                    if self.agents[id].is_live() {
                        self.explore(id, data)?;
                        *action = Action::Explored;
                    }
                }
            }
            for a in &self.agents {
                leaderboard.push(LeaderRow {
                    step: self.step,
                    agent_id: a.id,
                    val_acc: a.last_val_acc,
                    tier: tiers[a.id],
                    action: actions[a.id],
                });
            }
            let last = consumed >= cfg.total_epochs;
            if let Some(dir) = checkpoint_dir {
                if last || (cfg.checkpoint_every > 0 && self.step.is_multiple_of(cfg.checkpoint_every)) {
                    self.write_checkpoints(dir)?;
                }
            }
        }
        if self.step == 0 {
            if let Some(dir) = checkpoint_dir {
                self.write_checkpoints(dir)?;
            }
        }
        let best = self.ranking()[0];
        Ok(PbtOutcome { best, leaderboard })
    }

    fn check_alive(&self) -> Result<()> {
        if self.agents.iter().all(|a| !a.is_live()) {
            let diag: Vec<String> = self
                .agents
                .iter()
                .map(|a| format!("agent {}: {}", a.id, a.diagnostic.as_deref().unwrap_or("?")))
                .collect();
            return Err(Error::PopulationDead(diag.join("; ")));
        }
        Ok(())
    }

    /// `agents/<id>/step_<n>/state.ckpt` for every live agent.
    pub fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        for a in self.agents.iter().filter(|a| a.is_live()) {
            let path = dir
                .join("agents")
                .join(a.id.to_string())
                .join(format!("step_{}", self.step))
                .join("state.ckpt");
            a.state.to_checkpoint().write(&path)?;
        }
        Ok(())
    }

    /// `(params, distribution)` checksums per agent.
    pub fn checksum(&self) -> Vec<(u64, u64)> {
        self.agents
            .iter()
            .map(|a| (a.state.params.checksum(), a.state.dist_checksum()))
            .collect()
    }
}

/// Runs `epochs` epochs of the alternate loop, then refreshes `last_val_acc`.
pub fn training_step(agent: &mut Agent, data: &Dataset, epochs: u64) {
    agent.status = AgentStatus::Running;
    let result = agent
        .state
        .run_epochs(data, epochs)
        .and_then(|h| agent.state.evaluate(data, MaskKind::Val).map(|acc| (h, acc)));
    match result {
        Ok((history, acc)) => {
            agent.history.extend(history);
            agent.last_val_acc = acc;
            agent.step_count += 1;
            agent.status = AgentStatus::Ready;
        }
        Err(e) => {
            log::warn!("agent {} died: {e}", agent.id);
            agent.status = AgentStatus::Dead;
            agent.diagnostic = Some(e.to_string());
        }
    }
}
