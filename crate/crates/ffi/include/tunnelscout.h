#ifndef TUNNELSCOUT_H
#define TUNNELSCOUT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_OUT_OF_BOUNDS = 3,
  TS_STATUS_NO_PATH_FOUND = 4,
  TS_STATUS_START_IN_COLLISION = 5,
  TS_STATUS_PARSE_ERROR = 6,
  TS_STATUS_SCENARIO_INVALID = 7,
  TS_STATUS_PANIC = 8,
} TsStatus;

typedef enum TsOccupancy {
  TS_OCCUPANCY_FREE = 0,
  TS_OCCUPANCY_OCCUPIED = 1,
  TS_OCCUPANCY_UNKNOWN = 2,
} TsOccupancy;

/**
 * Opaque occupancy map.
 */
typedef struct TsMap TsMap;

/**
 * Opaque planned path.
 */
typedef struct TsPath TsPath;

/**
 * Opaque validated scenario.
 */
typedef struct TsScenario TsScenario;

typedef struct TsVec3 {
  double x;
  double y;
  double z;
} TsVec3;

typedef struct TsRunReport {
  uint64_t seed;
  /**
   * 1 when the mission ended in Stop, 0 on timeout.
   */
  int32_t stopped;
  int32_t reached_end;
  double min_dead_end_distance;
  double coverage_fraction;
  double returned_to_start_error;
  uint32_t collision_count;
  double sim_duration;
  double tick_ms_mean;
  double tick_ms_p99;
} TsRunReport;

typedef struct TsThrustCheck {
  int32_t pass;
  double total_weight;
  double required_thrust;
  double available_thrust;
} TsThrustCheck;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *ts_last_error_message(void);

/**
 * Creates an all-Unknown map with default log-odds parameters.
 */
enum TsStatus ts_map_new(struct TsVec3 origin,
                         size_t nx,
                         size_t ny,
                         size_t nz,
                         double resolution,
                         struct TsMap **out);

void ts_map_free(struct TsMap *map);

enum TsStatus ts_map_set_state(struct TsMap *map,
                               size_t ix,
                               size_t iy,
                               size_t iz,
                               enum TsOccupancy state);

/**
 * Occupancy at a world point; points outside the map read as Unknown.
 */
enum TsStatus ts_map_query(const struct TsMap *map, struct TsVec3 p, enum TsOccupancy *out);

/**
 * Writes 1 to `out` when the inflated segment avoids Occupied and Unknown space.
 */
enum TsStatus ts_map_segment_free(const struct TsMap *map,
                                  struct TsVec3 a,
                                  struct TsVec3 b,
                                  double inflate,
                                  int32_t *out);

/**
 * Text export of every known voxel. Release with `ts_string_free`.
 */
enum TsStatus ts_map_export_text(const struct TsMap *map, char **out);

void ts_string_free(char *s);

/**
 * RRT from `start` to `goal`, shortcut when `shortcut` is non-zero.
 */
enum TsStatus ts_plan_rrt(const struct TsMap *map,
                          struct TsVec3 start,
                          struct TsVec3 goal,
                          uint64_t seed,
                          int32_t shortcut,
                          struct TsPath **out);

size_t ts_path_len(const struct TsPath *path);

double ts_path_length(const struct TsPath *path);

enum TsStatus ts_path_waypoint(const struct TsPath *path, size_t i, struct TsVec3 *out);

void ts_path_free(struct TsPath *path);

/**
 * Parses and validates a TOML scenario.
 */
enum TsStatus ts_scenario_parse(const char *text, struct TsScenario **out);

enum TsStatus ts_scenario_set_seed(struct TsScenario *sc, uint64_t seed);

void ts_scenario_free(struct TsScenario *sc);

/**
 * Runs the mission to completion and fills `out`.
 */
enum TsStatus ts_scenario_run(const struct TsScenario *sc, struct TsRunReport *out);

/**
 * Thrust margin rule over `n` component weights in grams.
 */
enum TsStatus ts_thrust_check(const double *weights,
                              size_t n,
                              double available_thrust,
                              struct TsThrustCheck *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUNNELSCOUT_H */
