#ifndef RIGIDGRAPH_H
#define RIGIDGRAPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome; anything other than `RG_OK` sets the thread's last error.
 */
typedef enum RgStatus {
  RG_OK = 0,
  RG_NULL_POINTER = 1,
  RG_INVALID_INPUT = 2,
  RG_NUMERICAL_FAILURE = 3,
  RG_IO = 4,
  RG_FORMAT = 5,
  RG_PANIC = 6,
} RgStatus;

/**
 * Learned simulator loaded from a checkpoint.
 */
typedef struct RgModel RgModel;

/**
 * Bodies, gravity and time step.
 */
typedef struct RgScene RgScene;

/**
 * Poses of every body over time.
 */
typedef struct RgTrajectory RgTrajectory;

/**
 * Result of a push optimization.
 */
typedef struct RgPushResult {
  double final_loss;
  double v_x;
  double v_y;
  /**
   * Descent iterations taken.
   */
  uint32_t iterations;
  bool converged;
} RgPushResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. Valid
 * until the next failing call on the same thread.
 */
const char *rg_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *rg_version(void);

/**
 * Load a model checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum RgStatus rg_model_load(const char *path, struct RgModel **out);

/**
 * # Safety
 * `model` must come from [`rg_model_load`] and not be used afterwards; null is ignored.
 */
void rg_model_free(struct RgModel *model);

/**
 * Ten cubes in a triangle struck by an eleventh, on a ground slab.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum RgStatus rg_scene_bowling(struct RgScene **out);

/**
 * The canonical two-cube push scene at its default launch velocity.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum RgStatus rg_scene_push_task(struct RgScene **out);

/**
 * Scene at the first frame of a trajectory file, velocities reconstructed from its poses.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum RgStatus rg_scene_from_trajectory(const char *path, struct RgScene **out);

/**
 * # Safety
 * `scene` must be a live scene handle and `out` writable.
 */
enum RgStatus rg_scene_num_bodies(const struct RgScene *scene, uintptr_t *out);

/**
 * Signed distance between two bodies of a scene (negative when penetrating).
 *
 * # Safety
 * `scene` must be a live scene handle and `out` writable.
 */
enum RgStatus rg_scene_body_distance(const struct RgScene *scene,
                                     uintptr_t a,
                                     uintptr_t b,
                                     double *out);

/**
 * # Safety
 * `scene` must come from an `rg_scene_*` constructor and not be used afterwards; null is ignored.
 */
void rg_scene_free(struct RgScene *scene);

/**
 * Roll the learned simulator forward `steps` steps.
 *
 * # Safety
 * `model` and `scene` must be live handles and `out` writable.
 */
enum RgStatus rg_rollout(const struct RgModel *model,
                         const struct RgScene *scene,
                         uintptr_t steps,
                         struct RgTrajectory **out);

/**
 * Roll the analytic contact simulator forward with the eight contact
 * parameters `d0, d_width, width, midpoint, power, time_constant, damping_ratio, mu`.
 *
 * # Safety
 * `scene` must be a live handle, `params` must point to 8 doubles and `out` be writable.
 */
enum RgStatus rg_teacher_rollout(const struct RgScene *scene,
                                 const double *params,
                                 uintptr_t steps,
                                 struct RgTrajectory **out);

/**
 * # Safety
 * `traj` must be a live handle; output pointers must be writable.
 */
enum RgStatus rg_trajectory_shape(const struct RgTrajectory *traj,
                                  uintptr_t *frames,
                                  uintptr_t *bodies);

/**
 * Pose of one body at one frame as `x y z qw qx qy qz`.
 *
 * # Safety
 * `traj` must be a live handle and `out` must point to 7 writable doubles.
 */
enum RgStatus rg_trajectory_pose(const struct RgTrajectory *traj,
                                 uintptr_t frame,
                                 uintptr_t body,
                                 double *out);

/**
 * # Safety
 * `traj` must come from a rollout call and not be used afterwards; null is ignored.
 */
void rg_trajectory_free(struct RgTrajectory *traj);

/**
 * Optimize the pusher's launch velocity on the canonical push task.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RgStatus rg_optimize_push(const struct RgModel *model,
                               uintptr_t iters,
                               double step_size,
                               uint64_t seed,
                               struct RgPushResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIGIDGRAPH_H */
