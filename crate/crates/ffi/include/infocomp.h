#ifndef INFOCOMP_H
#define INFOCOMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum IcStatus {
  IC_STATUS_OK = 0,
  IC_STATUS_NULL_POINTER = 1,
  IC_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON or a document of the wrong shape.
   */
  IC_STATUS_PARSE = 3,
  /**
   * Invalid distribution, instance, protocol or parameter.
   */
  IC_STATUS_INVALID = 4,
  IC_STATUS_PROTOCOL = 5,
  IC_STATUS_TRANSPORT = 6,
  /**
   * The sampler gave up scanning the shared tape.
   */
  IC_STATUS_SCAN_CAP = 7,
  IC_STATUS_PANIC = 8,
} IcStatus;

/**
 * Final state of a sampler run, mirroring the engine's outcome.
 */
typedef enum IcOutcome {
  IC_OUTCOME_MATCH = 0,
  IC_OUTCOME_MISMATCH = 1,
  IC_OUTCOME_ABORT_K_OVERFLOW = 2,
  IC_OUTCOME_ABORT_T_MAX = 3,
} IcOutcome;

/**
 * Correlated pointer jumping instance handle.
 */
typedef struct IcCpj IcCpj;

/**
 * Finite distribution handle.
 */
typedef struct IcDist IcDist;

/**
 * Protocol tree bundled with its input prior.
 */
typedef struct IcProtocol IcProtocol;

/**
 * 128-bit shared seed, big-endian.
 */
typedef struct IcSeed {
  uint8_t bytes[16];
} IcSeed;

typedef struct IcSampleResult {
  uint64_t a;
  /**
   * B's output, meaningful only when `has_b` is nonzero.
   */
  uint64_t b;
  uint8_t has_b;
  uint64_t bits_a;
  uint64_t bits_b;
  uint32_t rounds_t;
  uint64_t k;
  uint32_t outcome;
} IcSampleResult;

typedef struct IcInfo {
  double internal_ic;
  double external_ic;
  uint64_t cc;
} IcInfo;

typedef struct IcPathResult {
  uint8_t matched;
  /**
   * Leaf output of A's path, meaningful only when `has_output` is nonzero.
   */
  int64_t output;
  uint8_t has_output;
  uint64_t bits_a;
  uint64_t bits_b;
  uint32_t outcome;
  double divergence_cost;
  double bound;
} IcPathResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated, into
 * `buf` (truncating to `len - 1` bytes). Returns the full message length
 * excluding the terminator, or 0 when there is no error.
 */
size_t ic_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ic_version(void);

/**
 * Parses 32 hex characters.
 */
enum IcStatus ic_seed_parse(const char *hex, struct IcSeed *seed);

/**
 * Child seed, e.g. one per trial.
 */
enum IcStatus ic_seed_derive(const struct IcSeed *seed,
                             uint64_t tag,
                             uint64_t index,
                             struct IcSeed *child);

/**
 * Distribution from `len` probabilities summing to 1.
 */
enum IcStatus ic_dist_new(const double *probs, size_t len, struct IcDist **dist);

void ic_dist_free(struct IcDist *dist);

/**
 * `D(P‖Q)` in bits; infinite when P is not absolutely continuous to Q.
 */
enum IcStatus ic_kl_divergence(const struct IcDist *p, const struct IcDist *q, double *bits);

/**
 * One run of the one-shot sampler with the default `t_max` for the pair.
 */
enum IcStatus ic_sample(const struct IcDist *p,
                        const struct IcDist *q,
                        const struct IcSeed *seed,
                        double eps,
                        struct IcSampleResult *result);

/**
 * Protocol from a JSON bundle `{"protocol": ..., "mu": ...}`.
 */
enum IcStatus ic_protocol_from_json(const char *json, struct IcProtocol **protocol);

void ic_protocol_free(struct IcProtocol *protocol);

/**
 * Exact internal and external information cost and communication.
 */
enum IcStatus ic_protocol_info(const struct IcProtocol *protocol, struct IcInfo *info);

/**
 * Compresses one run with inputs drawn from the prior.
 */
enum IcStatus ic_compress(const struct IcProtocol *protocol,
                          const struct IcSeed *seed,
                          double eps,
                          struct IcPathResult *result);

/**
 * CPJ instance from JSON.
 */
enum IcStatus ic_cpj_from_json(const char *json, struct IcCpj **instance);

void ic_cpj_free(struct IcCpj *instance);

/**
 * Expected divergence cost of the instance.
 */
enum IcStatus ic_cpj_divergence(const struct IcCpj *instance, double *bits);

/**
 * Samples one root-to-leaf path.
 */
enum IcStatus ic_cpj_sample(const struct IcCpj *instance,
                            const struct IcSeed *seed,
                            double eps,
                            struct IcPathResult *result);

/**
 * Runs the selftest; `passed` is set to 1 when every check passes.
 */
enum IcStatus ic_selftest(const struct IcSeed *seed, uint8_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFOCOMP_H */
