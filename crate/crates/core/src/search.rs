//! Fixed-configuration baselines: random search, Hyperband and plain PBT.
//!
//! Every trial is a plain GCN + DropEdge: the same layers as the self-tuning
//! model with embeddings at zero and frozen, trained at a fixed `λ`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{HyperSpace, SigmaBounds};
use crate::nn::ModelParams;
use crate::pbt::{PbtConfig, PbtOutcome, Population};
use crate::rng::{Seeds, Stream};
use crate::trainer::{Dataset, HyperInit, TrainConfig, TrainState};

/// Half-width kept on plain trials; never sampled, it only scales the
/// explore moves of plain PBT.
pub const EXPLORE_SIGMA: f64 = 0.5;

/// Model shape and learning rate shared by every trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub bracket: Option<usize>,
    /// Unconstrained point.
    pub u: Vec<f64>,
    /// Constrained hyperparameters.
    pub lambda: Vec<f64>,
    /// Epochs trained so far.
    pub budget_epochs: u64,
    pub best_val_acc: f64,
    /// Test accuracy at the best validation epoch.
    pub test_acc: f64,
    pub final_val_acc: f64,
    pub dead: bool,
    /// `(epoch, val_acc, val_loss)` per trained epoch.
    #[serde(skip)]
    pub series: Vec<(u64, f64, f64)>,
}

/// A trial plus its live training state, for resumable training.
struct Runner {
    trial: Trial,
    state: Option<TrainState>,
}

impl Runner {
    fn new(id: usize, bracket: Option<usize>, setup: &TrialSetup, data: &Dataset, root: &Seeds) -> Result<Self> {
        let space = HyperSpace::for_layers(setup.layers);
        let seeds = root.child(id as u64);
        let u = space.uniform_point(&mut root.rng(Stream::Search, &[id as u64]));
        let lambda = space.constrain(&u);
        let dims = ModelParams::dims(data.graph.num_features(), setup.hidden, data.graph.num_classes(), setup.layers);
        let mut state = TrainState::new(
            &dims,
            TrainConfig::plain(setup.lr),
            seeds,
            &HyperInit::Uniform,
            EXPLORE_SIGMA,
            SigmaBounds::default(),
        )?;
        state.dist.mu = u.clone();
        state.params.zero_embeddings();
        Ok(Self {
            trial: Trial {
                id,
                bracket,
                u,
                lambda,
                budget_epochs: 0,
                best_val_acc: 0.0,
                test_acc: 0.0,
                final_val_acc: 0.0,
                dead: false,
                series: Vec::new(),
            },
            state: Some(state),
        })
    }

    /// Trains up to `target` total epochs, tracking the best validation epoch.
    fn advance(&mut self, data: &Dataset, target: u64) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        while state.epoch < target {
            let metrics = state.step_epoch(data).and_then(|_| state.metrics(data));
            self.trial.budget_epochs += 1;
            match metrics {
                Ok(m) => {
                    self.trial.series.push((state.epoch - 1, m.val_acc, m.val_loss));
                    self.trial.final_val_acc = m.val_acc;
                    if m.val_acc > self.trial.best_val_acc || self.trial.budget_epochs == 1 {
                        self.trial.best_val_acc = m.val_acc;
                        self.trial.test_acc = m.test_acc.unwrap_or(0.0);
                    }
                }
                Err(e) => {
                    log::warn!("trial {} diverged: {e}", self.trial.id);
                    self.trial.dead = true;
                    self.trial.best_val_acc = 0.0;
                    self.trial.test_acc = 0.0;
                    self.trial.final_val_acc = 0.0;
                    self.state = None;
                    return;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Trial,
    pub trials: Vec<Trial>,
    /// Epochs actually trained across all trials.
    pub total_epochs: u64,
    pub rungs: Vec<RungLog>,
}

/// Highest best-epoch validation accuracy, ties to the lower id.
fn winner(trials: &[Trial]) -> Trial {
    trials
        .iter()
        .max_by(|a, b| a.best_val_acc.total_cmp(&b.best_val_acc).then(b.id.cmp(&a.id)))
        .cloned()
        .expect("at least one trial")
}

pub fn random_search(setup: &TrialSetup, data: &Dataset, n_trials: usize, budget_epochs: u64, seed: u64) -> Result<SearchOutcome> {
    if n_trials == 0 {
        return Err(Error::Config("random search needs at least one trial".into()));
    }
    let root = Seeds::new(seed);
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|id| {
            let mut r = Runner::new(id, None, setup, data, &root)?;
            r.advance(data, budget_epochs);
            Ok(r.trial)
        })
        .collect::<Result<Vec<_>>>()?;
    let total_epochs = trials.iter().map(|t| t.budget_epochs).sum();
    Ok(SearchOutcome {
        best: winner(&trials),
        trials,
        total_epochs,
        rungs: Vec::new(),
    })
}

/// One successive-halving bracket: `(configurations, budget)` per rung.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub rungs: Vec<(usize, u64)>,
}

impl Bracket {
    pub fn initial(&self) -> usize {
        self.rungs[0].0
    }
}

/// Largest `s` with `η^s ≤ max_budget`.
pub fn s_max(max_budget: u64, eta: u64) -> usize {
    let mut s = 0;
    let mut p = eta;
    while p <= max_budget {
        s += 1;
        p *= eta;
    }
    s
}

/// Brackets `s = s_max … 0` of one Hyperband iteration.
pub fn hyperband_schedule(max_budget: u64, eta: u64) -> Result<Vec<Bracket>> {
    if eta < 2 || max_budget < eta {
        return Err(Error::Config(format!("hyperband needs eta >= 2 and max_budget >= eta, got ({max_budget}, {eta})")));
    }
    let sm = s_max(max_budget, eta);
    let mut out = Vec::new();
    for s in (0..=sm).rev() {
        let pow = eta.pow(s as u32);
        // ⌈(s_max + 1) η^s / (s + 1)⌉ in integers
        let mut n = (((sm + 1) as u64 * pow).div_ceil(s as u64 + 1)) as usize;
        let mut rungs = Vec::new();
        for i in 0..=s {
            let budget = (max_budget / eta.pow((s - i) as u32)).max(1);
            rungs.push((n, budget));
            n = n.div_ceil(eta as usize);
        }
        out.push(Bracket { s, rungs });
    }
    Ok(out)
}

/// Number of schedule iterations whose trial count is nearest `target`.
pub fn iterations_for_target(brackets: &[Bracket], target: usize) -> usize {
    let per: usize = brackets.iter().map(Bracket::initial).sum();
    let lo = (target / per).max(1);
    if target.abs_diff(lo * per) <= target.abs_diff((lo + 1) * per) {
        lo
    } else {
        lo + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungLog {
    pub bracket: usize,
    pub s: usize,
    pub rung: usize,
    pub budget: u64,
    pub trials: Vec<usize>,
    pub survivors: Vec<usize>,
}

/// Ids of the top `keep` runners by best validation accuracy, ties by id.
pub fn select_top(trials: &[Trial], keep: usize) -> Vec<usize> {
    let mut order: Vec<&Trial> = trials.iter().collect();
    order.sort_by(|a, b| b.best_val_acc.total_cmp(&a.best_val_acc).then(a.id.cmp(&b.id)));
    order.iter().take(keep).map(|t| t.id).collect()
}

pub fn hyperband(
    setup: &TrialSetup,
    data: &Dataset,
    max_budget: u64,
    eta: u64,
    target_trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    let schedule = hyperband_schedule(max_budget, eta)?;
    let iterations = iterations_for_target(&schedule, target_trials);
    let root = Seeds::new(seed);
    let mut finished: Vec<Trial> = Vec::new();
    let mut rungs = Vec::new();
    let mut next_id = 0;
    for it in 0..iterations {
        for (b, bracket) in schedule.iter().enumerate() {
            let bracket_index = it * schedule.len() + b;
            let mut live = (next_id..next_id + bracket.initial())
                .map(|id| Runner::new(id, Some(bracket_index), setup, data, &root))
                .collect::<Result<Vec<_>>>()?;
            next_id += bracket.initial();
            for (i, &(_, budget)) in bracket.rungs.iter().enumerate() {
                live.par_iter_mut().for_each(|r| r.advance(data, budget));
                let trials: Vec<Trial> = live.iter().map(|r| r.trial.clone()).collect();
                let keep = if i + 1 < bracket.rungs.len() {
                    bracket.rungs[i + 1].0
                } else {
                    0
                };
                let survivors = select_top(&trials, keep);
                rungs.push(RungLog {
                    bracket: bracket_index,
                    s: bracket.s,
                    rung: i,
                    budget,
                    trials: trials.iter().map(|t| t.id).collect(),
                    survivors: survivors.clone(),
                });
                let (stay, done): (Vec<Runner>, Vec<Runner>) =
                    live.into_iter().partition(|r| survivors.contains(&r.trial.id));
                finished.extend(done.into_iter().map(|r| r.trial));
                live = stay;
            }
        }
    }
    finished.sort_by_key(|t| t.id);
    log::info!("hyperband: {} iterations, {} trials (target {target_trials})", iterations, finished.len());
    let total_epochs = finished.iter().map(|t| t.budget_epochs).sum();
    Ok(SearchOutcome {
        best: winner(&finished),
        trials: finished,
        total_epochs,
        rungs,
    })
}

/// PBT over plain GCNs: each agent holds a point `λ` that only explore moves.
pub fn pbt_baseline(setup: &TrialSetup, data: &Dataset, k: usize, config: PbtConfig, seed: u64) -> Result<(Population, PbtOutcome)> {
    if k < 3 {
        return Err(Error::Config(format!("plain PBT needs at least 3 agents, got {k}")));
    }
    let root = Seeds::new(seed);
    let states = (0..k)
        .map(|id| Runner::new(id, None, setup, data, &root).map(|r| r.state.expect("fresh runner")))
        .collect::<Result<Vec<_>>>()?;
    let mut pop = Population::new(states, config)?;
    let out = pop.run(data, None)?;
    Ok((pop, out))
}

/// `trial_id,bracket,budget,<λ columns>,best_val_acc,test_acc`.
pub fn write_trials_csv<W: Write>(mut w: W, space: &HyperSpace, trials: &[Trial]) -> std::io::Result<()> {
    write!(w, "trial_id,bracket,budget")?;
    for name in space.names() {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",best_val_acc,test_acc")?;
    for t in trials {
        let bracket = t.bracket.map(|b| b.to_string()).unwrap_or_default();
        write!(w, "{},{},{}", t.id, bracket, t.budget_epochs)?;
        for v in &t.lambda {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", t.best_val_acc, t.test_acc)?;
    }
    Ok(())
}

pub fn write_rungs_csv(path: &Path, rungs: &[RungLog]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "bracket,s,rung,budget,trials,survivors")?;
    for r in rungs {
        let ids = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        writeln!(w, "{},{},{},{},{},{}", r.bracket, r.s, r.rung, r.budget, ids(&r.trials), ids(&r.survivors))?;
    }
    w.flush()
}
