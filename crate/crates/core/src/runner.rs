//! Experiment execution, run directories and result tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::hyper::HyperSpace;
use crate::nn::ModelParams;
use crate::pbt::{write_leaderboard_csv, Agent, Population};
use crate::rng::Seeds;
use crate::search::{self, SearchOutcome, TrialSetup};
use crate::synth;
use crate::trainer::{write_history_csv, Dataset, EpochRecord, TrainState};

/// Environment variable naming the default parent of run directories.
pub const OUTPUT_ROOT_ENV: &str = "AUTOGCN_OUTPUT_ROOT";

/// Published test accuracies (percent) on the citation benchmarks.
pub fn reference_accuracy(dataset: &str, layers: usize, method: Method) -> Option<f64> {
    let row: [f64; 5] = match (dataset.to_ascii_lowercase().as_str(), layers) {
        ("cora", 4) => [85.3, 84.5, 82.9, 86.2, 86.9],
        ("cora", 8) => [83.5, 82.9, 84.4, 85.6, 87.0],
        ("citeseer", 4) => [76.3, 76.5, 74.3, 79.3, 79.0],
        ("citeseer", 8) => [74.9, 74.8, 73.8, 78.1, 78.6],
        ("pubmed", 4) => [90.0, 89.3, 88.4, 89.6, 89.8],
        ("pubmed", 8) => [87.4, 86.5, 88.2, 89.4, 90.4],
        _ => return None,
    };
    Some(row[Method::ALL.iter().position(|&m| m == method)?])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub dataset: String,
    /// FNV checksum of the graph (ids, edges, features, labels, masks).
    pub dataset_fingerprint: String,
    #[serde(rename = "L")]
    pub layers: usize,
    pub hidden: usize,
    pub seed: u64,
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    pub test_acc: Option<f64>,
    pub wall_time: f64,
    /// Epochs trained, summed over trials or agents.
    pub epoch_budget: u64,
    pub trials: Option<usize>,
    /// Constrained hyperparameters of the returned model.
    pub lambda: BTreeMap<String, f64>,
    pub oracle_accuracy: Option<f64>,
    pub reference_accuracy: Option<f64>,
}

impl Summary {
    /// Everything except wall time, for reproducibility comparisons.
    pub fn without_timing(&self) -> Summary {
        Summary {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

pub struct LoadedData {
    pub dataset: Dataset,
    pub oracle: Option<synth::OracleEstimate>,
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<LoadedData> {
    let d = &cfg.dataset;
    let (graph, oracle) = match (&d.content, &d.cites, &d.synthetic) {
        (Some(content), Some(cites), None) => {
            let (g, stats) = Graph::load_citation_raw(content, cites)?;
            log::info!(
                "loaded {}: {} nodes, {} edges ({} unresolved, {} self, {} duplicate citations)",
                d.name,
                g.num_nodes(),
                g.num_edges(),
                stats.unresolved,
                stats.self_citations,
                stats.duplicates
            );
            (g, None)
        }
        (None, None, Some(spec)) => {
            let s = synth::generate(spec, d.generator_seed)?;
            (s.graph, Some(s.oracle))
        }
        _ => return Err(Error::Config("dataset needs either content + cites or a synthetic block".into())),
    };
    let graph = graph.split_nodes(&d.split, seed)?;
    Ok(LoadedData {
        dataset: Dataset::new(d.name.clone(), graph),
        oracle,
    })
}

pub fn fingerprint(g: &Graph) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for id in &g.node_ids {
        eat(id.as_bytes());
    }
    for &(a, b) in &g.edges {
        eat(&(a as u64).to_le_bytes());
        eat(&(b as u64).to_le_bytes());
    }
    for v in &g.features.data {
        eat(&v.to_bits().to_le_bytes());
    }
    for &l in &g.labels {
        eat(&(l as u64).to_le_bytes());
    }
    for m in [&g.masks.train, &g.masks.val, &g.masks.test] {
        eat(&m.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
    }
    format!("{h:016x}")
}

/// Chooses a fresh run directory under `root`.
pub fn run_dir_for(cfg: &ExperimentConfig, seed: u64, root: &Path) -> PathBuf {
    let base = format!("{}-L{}-{}-seed{}", cfg.dataset.name, cfg.model.layers, cfg.method.name(), seed);
    let mut dir = root.join(&base);
    let mut k = 2;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    dir
}

/// Default parent directory: config `output_dir`, else the environment, else `runs`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_series(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,val_acc,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.metrics.val_acc, r.metrics.val_loss)?;
    }
    w.flush()?;
    Ok(())
}

fn write_history(path: &Path, space: &HyperSpace, history: &[EpochRecord]) -> Result<()> {
    let mut w = create(path)?;
    write_history_csv(&mut w, space, history)?;
    w.flush()?;
    Ok(())
}

fn lambda_map(space: &HyperSpace, lambda: &[f64]) -> BTreeMap<String, f64> {
    space.names().into_iter().map(String::from).zip(lambda.iter().copied()).collect()
}

struct MethodResult {
    best_val_acc: f64,
    final_val_acc: f64,
    test_acc: Option<f64>,
    epoch_budget: u64,
    trials: Option<usize>,
    lambda: BTreeMap<String, f64>,
}

/// Executes a validated config into `dir` and returns the summary.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    let seed = cfg.seed.expect("validated config has a seed");
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let start = Instant::now();
    let loaded = load_dataset(cfg, seed)?;
    let data = &loaded.dataset;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let result = pool.install(|| dispatch(cfg, seed, data, dir))?;
    let summary = Summary {
        method: cfg.method,
        dataset: cfg.dataset.name.clone(),
        dataset_fingerprint: fingerprint(&data.graph),
        layers: cfg.model.layers,
        hidden: cfg.model.hidden,
        seed,
        best_val_acc: result.best_val_acc,
        final_val_acc: result.final_val_acc,
        test_acc: result.test_acc,
        wall_time: start.elapsed().as_secs_f64(),
        epoch_budget: result.epoch_budget,
        trials: result.trials,
        lambda: result.lambda,
        oracle_accuracy: loaded.oracle.map(|o| o.oracle_accuracy),
        reference_accuracy: reference_accuracy(&cfg.dataset.name, cfg.model.layers, cfg.method),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

fn dispatch(cfg: &ExperimentConfig, seed: u64, data: &Dataset, dir: &Path) -> Result<MethodResult> {
    let layers = cfg.model.layers;
    let space = HyperSpace::for_layers(layers);
    let dims = ModelParams::dims(data.graph.num_features(), cfg.model.hidden, data.graph.num_classes(), layers);
    match cfg.method {
        Method::St => {
            let st = cfg.st.as_ref().expect("validated");
            let mut state = TrainState::new(&dims, st.train_config(), Seeds::new(seed), &st.init, st.sigma_init, st.bounds())?;
            let history = state.alternate_loop(data, st.epochs)?;
            write_history(&dir.join("history.csv"), &space, &history)?;
            write_series(&dir.join("series.csv"), &history)?;
            state.to_checkpoint().write(&dir.join("model.ckpt"))?;
            let last = history.last().map(|r| r.metrics);
            Ok(MethodResult {
                best_val_acc: history.iter().map(|r| r.metrics.val_acc).fold(0.0, f64::max),
                final_val_acc: last.map_or(0.0, |m| m.val_acc),
                test_acc: last.and_then(|m| m.test_acc),
                epoch_budget: state.epoch,
                trials: None,
                lambda: lambda_map(&space, &space.constrain(&state.dist.mu)),
            })
        }
        Method::Pst => {
            let pst = cfg.pst.as_ref().expect("validated");
            let st = &pst.train;
            let root = Seeds::new(seed);
            let states = (0..pst.population)
                .map(|k| TrainState::new(&dims, st.train_config(), root.child(k as u64), &st.init, st.sigma_init, st.bounds()))
                .collect::<Result<Vec<_>>>()?;
            let mut pop = Population::new(states, cfg.pst_config()?)?;
            let out = pop.run(data, Some(dir))?;
            population_result(&pop, out.best, &out.leaderboard, &space, data, dir)
        }
        Method::Pbt => {
            let p = cfg.pbt.as_ref().expect("validated");
            let setup = TrialSetup {
                layers,
                hidden: cfg.model.hidden,
                lr: p.lr,
            };
            let (pop, out) = search::pbt_baseline(&setup, data, p.population, cfg.plain_pbt_config()?, seed)?;
            population_result(&pop, out.best, &out.leaderboard, &space, data, dir)
        }
        Method::Rs => {
            let rs = cfg.rs.as_ref().expect("validated");
            let setup = TrialSetup {
                layers,
                hidden: cfg.model.hidden,
                lr: rs.lr,
            };
            let out = search::random_search(&setup, data, rs.trials, rs.epochs, seed)?;
            search_result(&out, &space, dir)
        }
        Method::Hb => {
            let hb = cfg.hb.as_ref().expect("validated");
            let setup = TrialSetup {
                layers,
                hidden: cfg.model.hidden,
                lr: hb.lr,
            };
            let out = search::hyperband(&setup, data, hb.max_budget, hb.eta, hb.target_trials, seed)?;
            search::write_rungs_csv(&dir.join("rungs.csv"), &out.rungs)?;
            search_result(&out, &space, dir)
        }
    }
}

fn population_result(
    pop: &Population,
    best: usize,
    leaderboard: &[crate::pbt::LeaderRow],
    space: &HyperSpace,
    data: &Dataset,
    dir: &Path,
) -> Result<MethodResult> {
    let mut w = create(&dir.join("leaderboard.csv"))?;
    write_leaderboard_csv(&mut w, leaderboard)?;
    w.flush()?;
    for a in &pop.agents {
        write_history(&dir.join("agents").join(a.id.to_string()).join("history.csv"), space, &a.history)?;
    }
    let agent: &Agent = &pop.agents[best];
    write_series(&dir.join("series.csv"), &agent.history)?;
    let metrics = agent.state.metrics(data)?;
    Ok(MethodResult {
        best_val_acc: agent.history.iter().map(|r| r.metrics.val_acc).fold(agent.last_val_acc, f64::max),
        final_val_acc: agent.last_val_acc,
        test_acc: metrics.test_acc,
        epoch_budget: pop.agents.iter().map(|a| a.state.epoch).sum(),
        trials: Some(pop.agents.len()),
        lambda: lambda_map(space, &space.constrain(&agent.state.dist.mu)),
    })
}

fn search_result(out: &SearchOutcome, space: &HyperSpace, dir: &Path) -> Result<MethodResult> {
    let mut w = create(&dir.join("trials.csv"))?;
    search::write_trials_csv(&mut w, space, &out.trials)?;
    w.flush()?;
    let mut w = create(&dir.join("series.csv"))?;
    writeln!(w, "epoch,val_acc,val_loss")?;
    for (epoch, acc, loss) in &out.best.series {
        writeln!(w, "{epoch},{acc},{loss}")?;
    }
    w.flush()?;
    Ok(MethodResult {
        best_val_acc: out.best.best_val_acc,
        final_val_acc: out.best.final_val_acc,
        test_acc: Some(out.best.test_acc),
        epoch_budget: out.total_epochs,
        trials: Some(out.trials.len()),
        lambda: lambda_map(space, &out.best.lambda),
    })
}

/// A run directory as seen by `report`.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub summary: Summary,
    /// `(epoch, val_acc, val_loss)`; empty when the series file is empty or absent.
    pub series: Vec<(u64, f64, f64)>,
}

pub fn read_run(dir: &Path) -> Result<RunRecord> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let series_path = dir.join("series.csv");
    let mut series = Vec::new();
    if let Ok(text) = fs::read_to_string(&series_path) {
        for (i, line) in text.lines().enumerate().skip(1) {
            let parse = || -> Option<(u64, f64, f64)> {
                let mut it = line.split(',');
                Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?, it.next()?.parse().ok()?))
            };
            series.push(parse().ok_or_else(|| Error::Parse {
                path: series_path.clone(),
                line: i + 1,
                msg: "expected epoch,val_acc,val_loss".into(),
            })?);
        }
    }
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        summary,
        series,
    })
}

/// `(dataset, layers)`.
pub type RowKey = (String, usize);

/// Dataset × layers × method accuracy matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub methods: Vec<Method>,
    /// `(dataset, layers)` rows with one cell per method; `None` is missing.
    pub rows: Vec<(RowKey, Vec<Option<f64>>)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Builds the table from runs. Runs sharing a dataset name must share its
/// fingerprint unless `allow_mixed`. Multiple seeds per cell take the median.
pub fn build_table(runs: &[RunRecord], allow_mixed: bool) -> Result<ResultTable> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no run directories".into()));
    }
    let mut prints: BTreeMap<&str, (&str, &Path)> = BTreeMap::new();
    for r in runs {
        let s = &r.summary;
        if let Some((fp, first)) = prints.insert(&s.dataset, (&s.dataset_fingerprint, &r.dir)) {
            if fp != s.dataset_fingerprint && !allow_mixed {
                return Err(Error::Config(format!(
                    "dataset `{}` differs between {} and {}; pass --allow-mixed to combine",
                    s.dataset,
                    first.display(),
                    r.dir.display()
                )));
            }
        }
    }
    let mut cells: BTreeMap<RowKey, BTreeMap<Method, Vec<Option<f64>>>> = BTreeMap::new();
    for r in runs {
        let s = &r.summary;
        let value = if r.series.is_empty() { None } else { s.test_acc };
        cells
            .entry((s.dataset.clone(), s.layers))
            .or_default()
            .entry(s.method)
            .or_default()
            .push(value);
    }
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.summary.method == *m))
        .collect();
    let rows = cells
        .into_iter()
        .map(|(key, by_method)| {
            let row = methods
                .iter()
                .map(|m| {
                    let vals: Vec<f64> = by_method.get(m)?.iter().flatten().copied().collect();
                    (!vals.is_empty()).then(|| median(vals))
                })
                .collect();
            (key, row)
        })
        .collect();
    Ok(ResultTable { methods, rows })
}

impl ResultTable {
    fn cell(v: Option<f64>) -> String {
        v.map_or_else(|| "missing".to_string(), |a| format!("{:.1}", a * 100.0))
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["dataset".to_string(), "L".to_string()];
        header.extend(self.methods.iter().map(|m| m.name().to_uppercase()));
        let mut lines = vec![header];
        for ((d, l), row) in &self.rows {
            let mut line = vec![d.clone(), l.to_string()];
            line.extend(row.iter().map(|&v| Self::cell(v)));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,L");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        for ((d, l), row) in &self.rows {
            out.push_str(&format!("{d},{l}"));
            for &v in row {
                out.push(',');
                out.push_str(&Self::cell(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes `<out>` (text), `<out stem>.csv` and one series file per run
/// under `<out stem>_series/`.
pub fn report(dirs: &[PathBuf], out: &Path, allow_mixed: bool) -> Result<ResultTable> {
    let runs = dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>>>()?;
    let table = build_table(&runs, allow_mixed)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, table.to_text())?;
    fs::write(out.with_extension("csv"), table.to_csv())?;
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    let series_dir = out.with_file_name(format!("{stem}_series"));
    fs::create_dir_all(&series_dir)?;
    for r in &runs {
        let name = r.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        let mut w = create(&series_dir.join(format!("{name}.csv")))?;
        writeln!(w, "epoch,val_acc,val_loss")?;
        for (e, a, l) in &r.series {
            writeln!(w, "{e},{a},{l}")?;
        }
        w.flush()?;
    }
    Ok(table)
}
