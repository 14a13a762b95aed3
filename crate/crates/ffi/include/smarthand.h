#ifndef SMARTHAND_H
#define SMARTHAND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SH_TAXELS 1024

#define SH_CLASS_COUNT 17

typedef enum ShPacketKind {
  SH_PACKET_KIND_FRAME = 0,
  SH_PACKET_KIND_IMU = 1,
  SH_PACKET_KIND_INFERENCE = 2,
  SH_PACKET_KIND_ACK = 3,
  SH_PACKET_KIND_DUMP = 4,
} ShPacketKind;

typedef enum ShStatus {
  SH_STATUS_OK = 0,
  SH_STATUS_NULL_ARGUMENT = 1,
  SH_STATUS_INVALID_ARGUMENT = 2,
  SH_STATUS_IO = 3,
  /**
   * Malformed weight or graph file.
   */
  SH_STATUS_FORMAT = 4,
  /**
   * Weights and graph disagree, or the model cannot run.
   */
  SH_STATUS_MODEL = 5,
  SH_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * The decoder has no complete packet queued.
   */
  SH_STATUS_EMPTY = 7,
  SH_STATUS_PANIC = 8,
} ShStatus;

/**
 * Incremental decoder for the device byte stream.
 */
typedef struct ShDecoder ShDecoder;

/**
 * A compiled model and its preallocated activation arena.
 */
typedef struct ShEngine ShEngine;

/**
 * A decoded packet, flattened. Only the fields of `kind` are meaningful;
 * the rest are zero.
 */
typedef struct ShPacket {
  enum ShPacketKind kind;
  uint32_t seq;
  /**
   * Frame, Dump, Imu.
   */
  uint64_t timestamp_us;
  /**
   * Frame, Dump: row-major 12-bit codes.
   */
  uint16_t codes[SH_TAXELS];
  /**
   * Imu: raw counts.
   */
  int16_t accel[3];
  int16_t gyro[3];
  /**
   * Inference.
   */
  uint8_t class_id;
  uint8_t top3[3];
  float probabilities[SH_CLASS_COUNT];
  /**
   * Ack: the command byte and the state entered.
   */
  uint8_t command;
  uint8_t state;
  /**
   * Dump: position in the collection buffer.
   */
  uint16_t dump_index;
  uint16_t dump_total;
} ShPacket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *sh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sh_version(void);

/**
 * Loads an SHW1 weight file. `graph` is NULL (pick the reference graph the
 * weights fit), `"reference"`, `"reference-imu"`, or graph text.
 *
 * # Safety
 * `weights_path` must be a NUL-terminated string, `graph` NULL or one, and
 * `out` a valid pointer.
 */
enum ShStatus sh_engine_open(const char *weights_path, const char *graph, struct ShEngine **out);

/**
 * As [`sh_engine_open`], from an in-memory SHW1 image.
 *
 * # Safety
 * `data` must point to `len` readable bytes; see [`sh_engine_open`].
 */
enum ShStatus sh_engine_from_bytes(const uint8_t *data,
                                   size_t len,
                                   const char *graph,
                                   struct ShEngine **out);

/**
 * # Safety
 * `engine` must be NULL or a handle from `sh_engine_open`/`_from_bytes`
 * not already freed.
 */
void sh_engine_free(struct ShEngine *engine);

/**
 * Number of output classes, or 0 for a NULL handle.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
size_t sh_engine_class_count(const struct ShEngine *engine);

/**
 * Whether [`sh_engine_infer`] needs the `imu` argument.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
bool sh_engine_uses_imu(const struct ShEngine *engine);

/**
 * Multiply-accumulates per inference.
 *
 * # Safety
 * `engine` must be NULL or a live handle.
 */
uint64_t sh_engine_macc(const struct ShEngine *engine);

/**
 * Classifies one frame of `SH_TAXELS` codes. `imu` is three floats for
 * fusion models, else NULL. `probabilities` (may be NULL when
 * `probabilities_len` is 0) receives the softmax output; `class_out`, if not
 * NULL, the winning class.
 *
 * # Safety
 * `engine` must be a live handle used by one thread at a time; `codes` must
 * point to `SH_TAXELS` values, `imu` to 3, `probabilities` to
 * `probabilities_len`.
 */
enum ShStatus sh_engine_infer(struct ShEngine *engine,
                              const uint16_t *codes,
                              const float *imu,
                              float *probabilities,
                              size_t probabilities_len,
                              uint32_t *class_out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum ShStatus sh_decoder_new(struct ShDecoder **out);

/**
 * # Safety
 * `decoder` must be NULL or a live handle.
 */
void sh_decoder_free(struct ShDecoder *decoder);

/**
 * Appends bytes in any chunking. `ready_out`, if not NULL, receives the
 * number of packets waiting for [`sh_decoder_next`].
 *
 * # Safety
 * `decoder` must be a live handle; `data` must point to `len` bytes (it may
 * be NULL when `len` is 0).
 */
enum ShStatus sh_decoder_feed(struct ShDecoder *decoder,
                              const uint8_t *data,
                              size_t len,
                              size_t *ready_out);

/**
 * Pops the oldest decoded packet into `out`, or returns `SH_STATUS_EMPTY`.
 *
 * # Safety
 * `decoder` must be a live handle and `out` a valid pointer.
 */
enum ShStatus sh_decoder_next(struct ShDecoder *decoder, struct ShPacket *out);

/**
 * Corrupt packets rejected (bad CRC, kind or payload) and bytes skipped.
 *
 * # Safety
 * `decoder` must be a live handle; either output may be NULL.
 */
enum ShStatus sh_decoder_stats(const struct ShDecoder *decoder,
                               size_t *rejected_out,
                               size_t *dropped_bytes_out);

/**
 * Wire size of a Frame packet.
 */
size_t sh_frame_packet_len(void);

/**
 * Encodes a Frame packet. `written_out` receives the byte count, also when
 * `out` is too small.
 *
 * # Safety
 * `codes` must point to `SH_TAXELS` values and `out` to `cap` bytes.
 */
enum ShStatus sh_encode_frame(uint32_t seq,
                              uint64_t timestamp_us,
                              const uint16_t *codes,
                              uint8_t *out,
                              size_t cap,
                              size_t *written_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMARTHAND_H */
