// Object-centric point-cloud policy: a shared per-point encoder with max
// pooling feeds two output heads (object trajectory + relative head motion)
// and a termination score. Heads are deterministic regression by default,
// with a minimal conditional denoiser variant. Training is Adam on analytic
// gradients; every gradient path is finite-difference checked in the tests.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeglasses/cloud.hpp"
#include "activeglasses/geometry.hpp"
#include "activeglasses/traj.hpp"

namespace ag {

enum class HeadType { regression, denoising };
enum class ObjectRep { absolute, relative };

struct PolicyConfig {
  int horizon = 16;       // T_h
  double voxel = 0.01;
  int max_points = 1024;  // N_max, deterministic subsample above this
  int enc1 = 64, enc2 = 128, trunk = 128;
  HeadType head_type = HeadType::regression;
  ObjectRep object_rep = ObjectRep::absolute;
  bool condition_on_current_pose = false;
  int denoise_steps = 25;
  double denoise_noise_scale = 1.0;
  int denoise_hidden = 128;
  Box3 norm_box = default_workspace();  // translation normalization frame
  uint64_t seed = 0;

  void validate() const;  // horizon >= 1, max_points >= 64
  int pose_dim() const { return 9; }  // 3 translation + 6D rotation
  int out_dim() const { return horizon * pose_dim(); }
  int cond_dim() const { return condition_on_current_pose ? pose_dim() : 0; }
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

// named parameter blocks (empty when unused by the configured head type)
enum BlockId : int {
  kEnc1W, kEnc1B, kEnc2W, kEnc2B,
  kTrunkW, kTrunkB,
  kObjW, kObjB, kHeadW, kHeadB,
  kTermW, kTermB,
  kObjDnW1, kObjDnB1, kObjDnW2, kObjDnB2,
  kHeadDnW1, kHeadDnB1, kHeadDnW2, kHeadDnB2,
  kNumBlocks
};
const char* block_name(BlockId id);

struct PolicyParams {
  PolicyConfig cfg;
  std::array<std::vector<double>, kNumBlocks> blocks;
};

using PolicyGrads = std::array<std::vector<double>, kNumBlocks>;

PolicyParams init_params(const PolicyConfig& cfg);

struct PolicyOutput {
  std::vector<Pose> obj_traj;   // absolute or relative object poses, per config
  std::vector<Pose> head_traj;  // relative head deltas
  double terminal_score = 0;    // in [0,1]
};

// Deterministic observation pre-processing: voxel downsample, subsample to
// max_points at the config seed, normalize by norm_box. Returns [3][n]
// row-major points. Throws on an empty cloud or a camera-tagged cloud.
std::vector<double> preprocess_points(const LabeledCloud& world_cloud, const PolicyConfig& cfg,
                                      size_t* n_out);

// The pooled feature vector (permutation-invariant, size enc2).
std::vector<double> encode(const PolicyParams& params, const LabeledCloud& world_cloud);

// Regression heads: deterministic. Denoising heads: runs the sampler at the
// config seed. current_obj_pose is required iff the config conditions on it;
// when unconditioned it is ignored entirely.
PolicyOutput predict(const PolicyParams& params, const LabeledCloud& world_cloud,
                     const std::optional<Pose>& current_obj_pose);

// Ancestral sampling of the denoising heads (head_type must be denoising).
PolicyOutput sample_denoising(const PolicyParams& params, const LabeledCloud& world_cloud,
                              const std::optional<Pose>& current_obj_pose, uint64_t seed);

// A training sample after deterministic preprocessing. Targets are encoded
// in the representation the config asks for.
struct EncodedSample {
  std::vector<double> points;  // [3][n]
  size_t n = 0;
  std::vector<double> cond;         // pose embedding when conditioned, else empty
  std::vector<double> target_vec_obj;   // [H*9] encoded target (network space)
  std::vector<double> target_vec_head;  // [H*9]
  std::vector<double> tgt_obj_trans;    // [H][3] meters in the loss frame
  std::vector<double> tgt_obj_rot;      // [H][9] rotation matrices
  std::vector<double> tgt_head_trans;   // [H][3]
  std::vector<double> tgt_head_rot;     // [H][9]
  double terminal = 0;
};

EncodedSample encode_sample(const TrainingSample& s, const LabeledCloud& world_cloud,
                            const PolicyConfig& cfg);

struct LossResult {
  double total = 0;
  double obj_term = 0, head_term = 0, bce_term = 0;
};

// Mean over the batch of (object pose error) + (head pose error) + (terminal
// BCE); pose error is translation squared error plus squared geodesic angle,
// averaged over the horizon. For denoising heads the pose terms become the
// conditional denoiser MSE with noise drawn deterministically from
// noise_seed. Gradients (when requested) cover every active block.
LossResult loss_and_grad(const PolicyParams& params,
                         const std::vector<const EncodedSample*>& batch, uint64_t noise_seed,
                         PolicyGrads* grads);

struct TrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-3;
  double lr_min = 2e-4;   // cosine decay floor
  double clip_norm = 50;  // global gradient-norm clip
  uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean loss per epoch (dataset-size/batch steps)
  double final_loss = 0;
};

// Deterministic per seed. Throws on divergence (non-finite loss).
PolicyParams train(const std::vector<EncodedSample>& dataset, const PolicyConfig& cfg,
                   const TrainConfig& tc, TrainHistory* history = nullptr);

// versioned checkpoint: JSON header (config + block table) + float32 blocks
void save_params(const PolicyParams& params, const std::filesystem::path& p);
PolicyParams load_params(const std::filesystem::path& p);

// target encoding helpers shared with the executor
std::vector<double> encode_pose_vec(const Pose& p, const PolicyConfig& cfg, bool absolute);
Pose decode_pose_vec(const double* v, const PolicyConfig& cfg, bool absolute);

// orthonormalized rotation matrix from a raw 6D block (row-major output)
void decode_rotation6(const double* v6, double r[9]);

// the pose-trajectory loss component used by loss_and_grad: translation
// squared error + squared geodesic angle, averaged over the horizon;
// accumulates d/d(out) into dout when given
double pose_trajectory_loss(const PolicyConfig& cfg, const std::vector<double>& out,
                            const std::vector<double>& tgt_trans,
                            const std::vector<double>& tgt_rot, bool absolute,
                            std::vector<double>* dout);

}  // namespace ag
