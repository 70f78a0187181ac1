//! C ABI over the autogcn engine.
//!
//! Objects cross the boundary as opaque handles created by `agcn_*_new`/
//! `agcn_*_load` functions and released by the matching `agcn_*_free`.
//! Every fallible call returns an [`AgcnStatus`]; on failure the message is
//! available from [`agcn_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use autogcn::config::ExperimentConfig;
use autogcn::graph::{Graph, MaskKind, SplitPolicy};
use autogcn::hyper::SigmaBounds;
use autogcn::nn::checkpoint::Checkpoint;
use autogcn::nn::ModelParams;
use autogcn::rng::Seeds;
use autogcn::synth::{self, SyntheticSpec};
use autogcn::trainer::{Dataset, HyperInit, Schedule, TrainConfig, TrainState};
use autogcn::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Config = 4,
    Shape = 5,
    NonFinite = 6,
    Checkpoint = 7,
    Diverged = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for AgcnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::DuplicateNode(_) | Error::Label { .. } => AgcnStatus::Parse,
            Error::Config(_) | Error::ClassTooSmall { .. } | Error::EmptyInput(_) | Error::EmptyMask(_) => {
                AgcnStatus::Config
            }
            Error::OutOfRange { .. } => AgcnStatus::InvalidArgument,
            Error::Shape(_) => AgcnStatus::Shape,
            Error::NonFinite(_) => AgcnStatus::NonFinite,
            Error::Checkpoint(_) => AgcnStatus::Checkpoint,
            Error::Diverged(_) | Error::PopulationDead(_) => AgcnStatus::Diverged,
            Error::Io(_) => AgcnStatus::Io,
        }
    }
}

/// Split selector for [`agcn_trainer_evaluate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgcnSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Trainer settings; obtain defaults from [`agcn_train_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AgcnTrainOptions {
    pub lr_model: f64,
    pub lr_hyper: f64,
    pub lr_scale: f64,
    pub tau: f64,
    pub model_epochs: u64,
    pub hyper_epochs: u64,
    pub sigma_init: f64,
    /// False trains a plain GCN at fixed hyperparameters.
    pub self_tuning: bool,
}

/// Graph with splits and its normalized adjacency.
pub struct AgcnDataset {
    inner: Dataset,
}

/// One model, its hyperparameter distribution and optimizer state.
pub struct AgcnTrainer {
    state: TrainState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AgcnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(AgcnStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AgcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgcnStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            AgcnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AgcnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AgcnStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn agcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn agcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn agcn_train_options_default() -> AgcnTrainOptions {
    let t = TrainConfig::default();
    AgcnTrainOptions {
        lr_model: t.lr_model,
        lr_hyper: t.lr_hyper,
        lr_scale: t.lr_scale,
        tau: t.tau,
        model_epochs: t.schedule.model_epochs,
        hyper_epochs: t.schedule.hyper_epochs,
        sigma_init: 0.5,
        self_tuning: true,
    }
}

fn split_dataset(name: &str, graph: Graph, split_seed: u64) -> Result<*mut AgcnDataset, Fail> {
    let graph = graph.split_nodes(&SplitPolicy::default(), split_seed)?;
    Ok(Box::into_raw(Box::new(AgcnDataset {
        inner: Dataset::new(name, graph),
    })))
}

/// Loads raw citation files and applies a stratified 60/20/20 split.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_dataset_load(
    content: *const c_char,
    cites: *const c_char,
    split_seed: u64,
    out: *mut *mut AgcnDataset,
) -> AgcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let content = path_arg(content, "content")?;
        let cites = path_arg(cites, "cites")?;
        let (g, _) = Graph::load_citation_raw(&content, &cites)?;
        let name = content.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        *out = split_dataset(&name, g, split_seed)?;
        Ok(())
    })
}

/// Generates a planted-partition dataset in memory. `oracle`, if non-null,
/// receives the generator's held-out oracle accuracy.
///
/// # Safety
/// `out` must be writable; `oracle` may be null.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn agcn_dataset_synthetic(
    nodes: usize,
    classes: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    noise: f64,
    generator_seed: u64,
    split_seed: u64,
    oracle: *mut f64,
    out: *mut *mut AgcnDataset,
) -> AgcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = SyntheticSpec {
            nodes,
            classes,
            communities,
            p_in,
            p_out,
            feature_dim,
            noise,
        };
        let s = synth::generate(&spec, generator_seed)?;
        if let Some(o) = oracle.as_mut() {
            *o = s.oracle.oracle_accuracy;
        }
        *out = split_dataset("synthetic", s.graph, split_seed)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn agcn_dataset_num_nodes(ds: *const AgcnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.graph.num_nodes())
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn agcn_dataset_num_edges(ds: *const AgcnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.graph.num_edges())
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn agcn_dataset_num_classes(ds: *const AgcnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.graph.num_classes())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agcn_dataset_free(ds: *mut AgcnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn train_config(o: &AgcnTrainOptions) -> TrainConfig {
    let schedule = Schedule {
        model_epochs: o.model_epochs,
        hyper_epochs: o.hyper_epochs,
    };
    if o.self_tuning {
        TrainConfig {
            lr_model: o.lr_model,
            lr_hyper: o.lr_hyper,
            lr_scale: o.lr_scale,
            tau: o.tau,
            schedule,
            ..TrainConfig::default()
        }
    } else {
        TrainConfig {
            schedule,
            ..TrainConfig::plain(o.lr_model)
        }
    }
}

/// Creates a trainer shaped for `ds` with `layers` layers of width `hidden`.
/// `options` may be null for defaults.
///
/// # Safety
/// `ds` must be a live dataset handle, `options` null or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_new(
    ds: *const AgcnDataset,
    layers: usize,
    hidden: usize,
    seed: u64,
    options: *const AgcnTrainOptions,
    out: *mut *mut AgcnTrainer,
) -> AgcnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let opts = options.as_ref().copied().unwrap_or_else(|| agcn_train_options_default());
        if hidden == 0 {
            return Err(Fail(AgcnStatus::InvalidArgument, "hidden width must be positive".into()));
        }
        let g = &ds.inner.graph;
        let dims = ModelParams::dims(g.num_features(), hidden, g.num_classes(), layers);
        let mut state = TrainState::new(
            &dims,
            train_config(&opts),
            Seeds::new(seed),
            &HyperInit::Uniform,
            opts.sigma_init,
            SigmaBounds::default(),
        )?;
        if !opts.self_tuning {
            state.params.zero_embeddings();
        }
        *out = Box::into_raw(Box::new(AgcnTrainer { state }));
        Ok(())
    })
}

fn check_shape(t: &AgcnTrainer, ds: &AgcnDataset) -> Result<(), Fail> {
    let layers = &t.state.params.layers;
    let g = &ds.inner.graph;
    let (f, c) = (layers[0].fan_in(), layers[layers.len() - 1].fan_out());
    if f != g.num_features() || c != g.num_classes() {
        return Err(Fail(
            AgcnStatus::Shape,
            format!(
                "trainer expects {f} features / {c} classes, dataset has {} / {}",
                g.num_features(),
                g.num_classes()
            ),
        ));
    }
    Ok(())
}

/// Runs `epochs` epochs of the alternating schedule. `val_acc`, if non-null,
/// receives the validation accuracy afterwards.
///
/// # Safety
/// Handles must be live; `val_acc` null or writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_run(
    t: *mut AgcnTrainer,
    ds: *const AgcnDataset,
    epochs: u64,
    val_acc: *mut f64,
) -> AgcnStatus {
    guard(|| {
        let t = t.as_mut().ok_or_else(|| null("trainer"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        check_shape(t, ds)?;
        t.state.run_epochs(&ds.inner, epochs)?;
        if let Some(v) = val_acc.as_mut() {
            *v = t.state.evaluate(&ds.inner, MaskKind::Val)?;
        }
        Ok(())
    })
}

/// Accuracy on one split at the distribution center, without dropout.
///
/// # Safety
/// Handles must be live; `acc` writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_evaluate(
    t: *const AgcnTrainer,
    ds: *const AgcnDataset,
    split: AgcnSplit,
    acc: *mut f64,
) -> AgcnStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trainer"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let acc = out_ptr(acc, "acc")?;
        check_shape(t, ds)?;
        let kind = match split {
            AgcnSplit::Train => MaskKind::Train,
            AgcnSplit::Val => MaskKind::Val,
            AgcnSplit::Test => MaskKind::Test,
        };
        *acc = t.state.evaluate(&ds.inner, kind)?;
        Ok(())
    })
}

/// Epochs completed so far; 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live trainer handle.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_epoch(t: *const AgcnTrainer) -> u64 {
    t.as_ref().map_or(0, |t| t.state.epoch)
}

/// Copies the constrained hyperparameters (dropout per hidden layer, edge
/// drop, weight decay) into `buf`. `count` receives the number available;
/// at most `len` values are written.
///
/// # Safety
/// `t` must be live, `buf` writable for `len` values (or null when `len` is 0),
/// `count` writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_hyperparameters(
    t: *const AgcnTrainer,
    buf: *mut f64,
    len: usize,
    count: *mut usize,
) -> AgcnStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trainer"))?;
        let count = out_ptr(count, "count")?;
        let lambda = t.state.space().constrain(&t.state.dist.mu);
        *count = lambda.len();
        let n = len.min(lambda.len());
        if n > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&lambda[..n]);
        }
        Ok(())
    })
}

/// Writes the full trainer state to a checkpoint file.
///
/// # Safety
/// `t` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_save(t: *const AgcnTrainer, path: *const c_char) -> AgcnStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("trainer"))?;
        let path = path_arg(path, "path")?;
        t.state.to_checkpoint().write(&path)?;
        Ok(())
    })
}

/// Restores a checkpoint written by [`agcn_trainer_save`] into a trainer of
/// the same shape.
///
/// # Safety
/// `t` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_restore(t: *mut AgcnTrainer, path: *const c_char) -> AgcnStatus {
    guard(|| {
        let t = t.as_mut().ok_or_else(|| null("trainer"))?;
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::read(&path)?;
        // restore into a copy so a bad file leaves the trainer untouched
        let mut state = t.state.clone();
        state.restore(&ckpt)?;
        t.state = state;
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agcn_trainer_free(t: *mut AgcnTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Runs a complete experiment from a config file into `out_dir`.
/// `test_acc`, if non-null, receives the summary's test accuracy (NaN if none).
///
/// # Safety
/// Paths must be NUL-terminated strings; `test_acc` null or writable.
#[no_mangle]
pub unsafe extern "C" fn agcn_run_config(config: *const c_char, out_dir: *const c_char, test_acc: *mut f64) -> AgcnStatus {
    guard(|| {
        let config = path_arg(config, "config")?;
        let out_dir = path_arg(out_dir, "out_dir")?;
        let cfg = ExperimentConfig::load(Path::new(&config))?;
        let summary = autogcn::runner::run(&cfg, &out_dir)?;
        if let Some(v) = test_acc.as_mut() {
            *v = summary.test_acc.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}
