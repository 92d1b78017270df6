//! C ABI over the particle environment and the trainer.
//!
//! Every function returns an [`MbaeStatus`]; on failure a message is kept
//! per thread and can be copied out with [`mbae_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mbae_core::envs::{EnvConfig, ParticleEnv};
use mbae_core::trainer::{RunRecord, TrainConfig, Trainer};
use mbae_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes of every `mbae_*` call.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MbaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

/// A particle environment with its own seeded generator.
pub struct MbaeEnv {
    env: ParticleEnv,
    rng: ChaCha8Rng,
}

/// A training run.
pub struct MbaeTrainer {
    trainer: Trainer,
}

/// One learning-curve point.
#[repr(C)]
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct MbaeRecord {
    pub episode: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub reward_loss: f64,
    pub mbae_steps: u64,
    pub mean_delta_norm: f64,
    pub dyna_loss: f64,
}

impl From<&RunRecord> for MbaeRecord {
    fn from(r: &RunRecord) -> Self {
        MbaeRecord {
            episode: r.episode as u64,
            env_steps: r.env_steps,
            mean_return: r.mean_return,
            std_return: r.std_return,
            value_loss: r.value_loss,
            policy_loss: r.policy_loss,
            gen_loss: r.gen_loss,
            disc_loss: r.disc_loss,
            reward_loss: r.reward_loss,
            mbae_steps: r.mbae_steps,
            mean_delta_norm: r.mean_delta_norm,
            dyna_loss: r.dyna_loss,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(MbaeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_numeric() {
            MbaeStatus::Numeric
        } else if e.is_config() {
            MbaeStatus::Config
        } else {
            match e {
                Error::Io(_) => MbaeStatus::Io,
                _ => MbaeStatus::Format,
            }
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MbaeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MbaeStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MbaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MbaeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MbaeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(invalid(format!("{what} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mbae_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an obstacle-free environment of dimension `dim` with default
/// settings and a generator seeded with `seed`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_new(dim: usize, seed: u64, out: *mut *mut MbaeEnv) -> MbaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let env = ParticleEnv::new(EnvConfig::with_dim(dim))?;
        *out = Box::into_raw(Box::new(MbaeEnv {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// Creates an environment from a TOML environment table.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_from_toml(config_toml: *const c_char, seed: u64, out: *mut *mut MbaeEnv) -> MbaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_toml, "config_toml")?;
        let cfg: EnvConfig = toml::from_str(text).map_err(|e| Failure(MbaeStatus::Config, e.to_string()))?;
        let env = ParticleEnv::new(cfg)?;
        *out = Box::into_raw(Box::new(MbaeEnv {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// Releases an environment; null is ignored.
///
/// # Safety
/// `env` must be null or a handle from `mbae_env_new`/`mbae_env_from_toml`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_free(env: *mut MbaeEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation width (twice the dimension); 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_observation_width(env: *const MbaeEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.observation_width())
}

/// Places agent and target at random and writes the observation.
///
/// # Safety
/// `env` must be a live handle and `obs` point to `obs_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_reset(env: *mut MbaeEnv, obs: *mut f64, obs_len: usize) -> MbaeStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let out = out_slice(obs, obs_len, e.env.observation_width(), "obs")?;
        let o = e.env.reset(&mut e.rng)?;
        out[..o.len()].copy_from_slice(&o);
        Ok(())
    })
}

/// Applies `action` and writes the next observation, reward and terminal
/// flag (1 when the episode ended).
///
/// # Safety
/// `env` must be a live handle, `action` point to `action_len` values,
/// `obs` to `obs_len` writable values, `reward` and `terminal` be valid.
#[no_mangle]
pub unsafe extern "C" fn mbae_env_step(
    env: *mut MbaeEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    terminal: *mut u8,
) -> MbaeStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let a = slice_arg(action, action_len, "action")?;
        let out = out_slice(obs, obs_len, e.env.observation_width(), "obs")?;
        if reward.is_null() || terminal.is_null() {
            return Err(null("reward/terminal"));
        }
        if a.len() != e.env.dim() {
            return Err(invalid(format!("action holds {} values, env has {}", a.len(), e.env.dim())));
        }
        let step = e.env.step(a)?;
        out[..step.next_state.len()].copy_from_slice(&step.next_state);
        *reward = step.reward;
        *terminal = u8::from(step.terminal);
        Ok(())
    })
}

/// Creates a trainer from a TOML training configuration (the `[train]`
/// table of an experiment file). An empty string selects the defaults.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_new(config_toml: *const c_char, out: *mut *mut MbaeTrainer) -> MbaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_toml, "config_toml")?;
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Failure(MbaeStatus::Config, e.to_string()))?;
        let trainer = Trainer::new(cfg)?;
        *out = Box::into_raw(Box::new(MbaeTrainer { trainer }));
        Ok(())
    })
}

/// Releases a trainer; null is ignored.
///
/// # Safety
/// `trainer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_free(trainer: *mut MbaeTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs up to `episodes` more training episodes.
///
/// # Safety
/// `trainer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_train(trainer: *mut MbaeTrainer, episodes: usize) -> MbaeStatus {
    guard(|| {
        handle(trainer, "trainer")?.trainer.train_for(episodes)?;
        Ok(())
    })
}

/// Episodes completed so far; 0 for a null handle.
///
/// # Safety
/// `trainer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_episode(trainer: *const MbaeTrainer) -> usize {
    trainer.as_ref().map_or(0, |t| t.trainer.episode())
}

/// Number of learning-curve records; 0 for a null handle.
///
/// # Safety
/// `trainer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_record_count(trainer: *const MbaeTrainer) -> usize {
    trainer.as_ref().map_or(0, |t| t.trainer.records().len())
}

/// Copies record `index` into `out`.
///
/// # Safety
/// `trainer` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_record(trainer: *const MbaeTrainer, index: usize, out: *mut MbaeRecord) -> MbaeStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = t
            .trainer
            .records()
            .get(index)
            .ok_or_else(|| invalid(format!("record {index} out of range")))?;
        *out = MbaeRecord::from(r);
        Ok(())
    })
}

/// Greedy evaluation over `episodes` episodes; `optimize` non-zero refines
/// the policy mean by action optimization.
///
/// # Safety
/// `trainer` must be a live handle; `mean` and `std` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_evaluate(
    trainer: *mut MbaeTrainer,
    episodes: usize,
    optimize: u8,
    mean: *mut f64,
    std: *mut f64,
) -> MbaeStatus {
    guard(|| {
        let t = handle(trainer, "trainer")?;
        if mean.is_null() || std.is_null() {
            return Err(null("mean/std"));
        }
        if episodes == 0 {
            return Err(invalid("episodes must be at least 1"));
        }
        let (m, s) = t.trainer.evaluate_episodes(episodes, optimize != 0)?;
        *mean = m;
        *std = s;
        Ok(())
    })
}

/// Writes a checkpoint of the full trainer state.
///
/// # Safety
/// `trainer` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_save(trainer: *const MbaeTrainer, path: *const c_char) -> MbaeStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        t.trainer.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Restores a trainer from a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbae_trainer_load(path: *const c_char, out: *mut *mut MbaeTrainer) -> MbaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let trainer = Trainer::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MbaeTrainer { trainer }));
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mbae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
