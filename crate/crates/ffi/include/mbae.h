#ifndef MBAE_H
#define MBAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every `mbae_*` call.
typedef enum MbaeStatus {
  MBAE_STATUS_OK = 0,
  MBAE_STATUS_NULL_POINTER = 1,
  MBAE_STATUS_INVALID_ARGUMENT = 2,
  MBAE_STATUS_CONFIG = 3,
  MBAE_STATUS_NUMERIC = 4,
  MBAE_STATUS_IO = 5,
  MBAE_STATUS_FORMAT = 6,
  MBAE_STATUS_PANIC = 7,
} MbaeStatus;

// A particle environment with its own seeded generator.
typedef struct MbaeEnv MbaeEnv;

// A training run.
typedef struct MbaeTrainer MbaeTrainer;

// One learning-curve point.
typedef struct MbaeRecord {
  uint64_t episode;
  uint64_t env_steps;
  double mean_return;
  double std_return;
  double value_loss;
  double policy_loss;
  double gen_loss;
  double disc_loss;
  double reward_loss;
  uint64_t mbae_steps;
  double mean_delta_norm;
  double dyna_loss;
} MbaeRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len - 1` bytes) and returns the full message
// length in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t mbae_last_error_message(char *buf, size_t len);

// Creates an obstacle-free environment of dimension `dim` with default
// settings and a generator seeded with `seed`.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum MbaeStatus mbae_env_new(size_t dim, uint64_t seed, struct MbaeEnv **out);

// Creates an environment from a TOML environment table.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum MbaeStatus mbae_env_from_toml(const char *config_toml, uint64_t seed, struct MbaeEnv **out);

// Releases an environment; null is ignored.
//
// # Safety
// `env` must be null or a handle from `mbae_env_new`/`mbae_env_from_toml`
// that has not been freed.
void mbae_env_free(struct MbaeEnv *env);

// Observation width (twice the dimension); 0 for a null handle.
//
// # Safety
// `env` must be null or a live handle.
size_t mbae_env_observation_width(const struct MbaeEnv *env);

// Places agent and target at random and writes the observation.
//
// # Safety
// `env` must be a live handle and `obs` point to `obs_len` writable values.
enum MbaeStatus mbae_env_reset(struct MbaeEnv *env, double *obs, size_t obs_len);

// Applies `action` and writes the next observation, reward and terminal
// flag (1 when the episode ended).
//
// # Safety
// `env` must be a live handle, `action` point to `action_len` values,
// `obs` to `obs_len` writable values, `reward` and `terminal` be valid.
enum MbaeStatus mbae_env_step(struct MbaeEnv *env,
                              const double *action,
                              size_t action_len,
                              double *obs,
                              size_t obs_len,
                              double *reward,
                              uint8_t *terminal);

// Creates a trainer from a TOML training configuration (the `[train]`
// table of an experiment file). An empty string selects the defaults.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum MbaeStatus mbae_trainer_new(const char *config_toml, struct MbaeTrainer **out);

// Releases a trainer; null is ignored.
//
// # Safety
// `trainer` must be null or a live handle.
void mbae_trainer_free(struct MbaeTrainer *trainer);

// Runs up to `episodes` more training episodes.
//
// # Safety
// `trainer` must be a live handle.
enum MbaeStatus mbae_trainer_train(struct MbaeTrainer *trainer, size_t episodes);

// Episodes completed so far; 0 for a null handle.
//
// # Safety
// `trainer` must be null or a live handle.
size_t mbae_trainer_episode(const struct MbaeTrainer *trainer);

// Number of learning-curve records; 0 for a null handle.
//
// # Safety
// `trainer` must be null or a live handle.
size_t mbae_trainer_record_count(const struct MbaeTrainer *trainer);

// Copies record `index` into `out`.
//
// # Safety
// `trainer` must be a live handle and `out` a valid pointer.
enum MbaeStatus mbae_trainer_record(const struct MbaeTrainer *trainer,
                                    size_t index,
                                    struct MbaeRecord *out);

// Greedy evaluation over `episodes` episodes; `optimize` non-zero refines
// the policy mean by action optimization.
//
// # Safety
// `trainer` must be a live handle; `mean` and `std` valid pointers.
enum MbaeStatus mbae_trainer_evaluate(struct MbaeTrainer *trainer,
                                      size_t episodes,
                                      uint8_t optimize,
                                      double *mean,
                                      double *std);

// Writes a checkpoint of the full trainer state.
//
// # Safety
// `trainer` must be a live handle and `path` a NUL-terminated string.
enum MbaeStatus mbae_trainer_save(const struct MbaeTrainer *trainer, const char *path);

// Restores a trainer from a checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MbaeStatus mbae_trainer_load(const char *path, struct MbaeTrainer **out);

// Library version as a static NUL-terminated string.
const char *mbae_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MBAE_H */
