#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "activeglasses/policy.hpp"
#include "activeglasses/rng.hpp"
#include "oracles.hpp"

using namespace ag;

namespace {

PolicyConfig small_cfg() {
  PolicyConfig c;
  c.horizon = 3;
  c.voxel = 0.01;
  c.max_points = 64;
  c.enc1 = 16;
  c.enc2 = 24;
  c.trunk = 24;
  c.seed = 5;
  return c;
}

LabeledCloud random_world_cloud(Rng& rng, int n) {
  LabeledCloud c;
  c.tag = FrameTag::world;
  for (int i = 0; i < n; ++i)
    c.push_point({rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.4)});
  return c;
}

// pose with rotation angle bounded away from pi, keeping the geodesic loss
// well-conditioned for finite differences
Pose bounded_pose(Rng& rng) {
  const Vec3 axis = oracle::random_unit_vec(rng);
  const double angle = rng.uniform(-2.2, 2.2);
  return Pose(quat_from_axis_angle(axis, angle),
              {rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.4)});
}

TrainingSample random_training_sample(Rng& rng, const PolicyConfig& cfg) {
  TrainingSample s;
  s.cloud_ref = "";
  for (int k = 0; k < cfg.horizon; ++k) {
    s.obj_abs.push_back(bounded_pose(rng));
    Pose delta = bounded_pose(rng);
    delta.t = 0.1 * delta.t;
    s.head_rel.push_back(delta);
  }
  s.terminal = rng.uniform() < 0.3 ? 1 : 0;
  s.current_obj_pose = bounded_pose(rng);
  return s;
}

double loss_at(const PolicyParams& params, const std::vector<const EncodedSample*>& batch,
               uint64_t noise_seed) {
  return loss_and_grad(params, batch, noise_seed, nullptr).total;
}

// directional + coordinate finite-difference check over every active block
double max_grad_rel_error(const PolicyConfig& cfg, uint64_t data_seed, uint64_t noise_seed) {
  Rng rng(data_seed);
  std::vector<EncodedSample> samples;
  for (int i = 0; i < 4; ++i) {
    const LabeledCloud cloud = random_world_cloud(rng, 40);
    samples.push_back(encode_sample(random_training_sample(rng, cfg), cloud, cfg));
  }
  std::vector<const EncodedSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);

  PolicyParams params = init_params(cfg);
  // nudge params off the init so biases are not exactly zero
  Rng prng(data_seed ^ 0x99);
  for (auto& blk : params.blocks)
    for (double& w : blk) w += 0.01 * prng.normal();

  PolicyGrads grads;
  loss_and_grad(params, batch, noise_seed, &grads);

  const double h = 1e-5;
  double worst = 0;
  for (int id = 0; id < kNumBlocks; ++id) {
    auto& blk = params.blocks[id];
    if (blk.empty()) continue;

    // random direction within the block
    std::vector<double> dir(blk.size());
    double dn = 0;
    for (auto& d : dir) {
      d = prng.normal();
      dn += d * d;
    }
    dn = std::sqrt(dn);
    for (auto& d : dir) d /= dn;

    double analytic = 0;
    for (size_t i = 0; i < blk.size(); ++i) analytic += grads[id][i] * dir[i];
    for (size_t i = 0; i < blk.size(); ++i) blk[i] += h * dir[i];
    const double lp = loss_at(params, batch, noise_seed);
    for (size_t i = 0; i < blk.size(); ++i) blk[i] -= 2 * h * dir[i];
    const double lm = loss_at(params, batch, noise_seed);
    for (size_t i = 0; i < blk.size(); ++i) blk[i] += h * dir[i];
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6}));

    // a few individual coordinates
    for (int rep = 0; rep < 4; ++rep) {
      const size_t i = prng.uniform_index(blk.size());
      const double keep = blk[i];
      blk[i] = keep + h;
      const double cp = loss_at(params, batch, noise_seed);
      blk[i] = keep - h;
      const double cm = loss_at(params, batch, noise_seed);
      blk[i] = keep;
      const double cfd = (cp - cm) / (2 * h);
      worst = std::max(worst,
                       std::abs(grads[id][i] - cfd) / std::max({std::abs(grads[id][i]), std::abs(cfd), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("encode: permutation invariance is bitwise") {
  const PolicyConfig cfg = small_cfg();
  const PolicyParams params = init_params(cfg);
  Rng rng(81);
  const LabeledCloud cloud = random_world_cloud(rng, 300);

  LabeledCloud shuffled;
  shuffled.tag = FrameTag::world;
  std::vector<size_t> idx(cloud.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  for (size_t i : idx) shuffled.push_point(cloud.point(i));

  const auto fa = encode(params, cloud);
  const auto fb = encode(params, shuffled);
  REQUIRE(fa.size() == fb.size());
  for (size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == fb[i]);
}

TEST_CASE("encode: single point equals the per-point map; duplicates are no-ops") {
  const PolicyConfig cfg = small_cfg();
  const PolicyParams params = init_params(cfg);

  LabeledCloud one;
  one.tag = FrameTag::world;
  one.push_point({0.3, 0.4, 0.2});
  const auto feat = encode(params, one);
  REQUIRE(static_cast<int>(feat.size()) == cfg.enc2);

  // hand-computed per-point map of the single normalized point
  const Vec3 center = 0.5 * (cfg.norm_box.min + cfg.norm_box.max);
  const Vec3 half = 0.5 * (cfg.norm_box.max - cfg.norm_box.min);
  const double x[3] = {(0.3 - center.x) / half.x, (0.4 - center.y) / half.y,
                       (0.2 - center.z) / half.z};
  std::vector<double> a1(cfg.enc1);
  for (int j = 0; j < cfg.enc1; ++j) {
    double s = params.blocks[kEnc1B][j];
    for (int k = 0; k < 3; ++k) s += params.blocks[kEnc1W][j * 3 + k] * x[k];
    a1[j] = std::tanh(s);
  }
  for (int j = 0; j < cfg.enc2; ++j) {
    double s = params.blocks[kEnc2B][j];
    for (int k = 0; k < cfg.enc1; ++k) s += params.blocks[kEnc2W][j * cfg.enc1 + k] * a1[k];
    CHECK(feat[j] == doctest::Approx(std::tanh(s)).epsilon(1e-12));
  }

  // duplicated points collapse in the voxel grid: identical feature
  Rng rng(82);
  LabeledCloud base = random_world_cloud(rng, 100);
  LabeledCloud dup = base;
  for (int i = 0; i < 40; ++i) dup.push_point(base.point(i % base.size()));
  const auto f1 = encode(params, base);
  const auto f2 = encode(params, dup);
  for (size_t i = 0; i < f1.size(); ++i) CHECK(f1[i] == f2[i]);

  LabeledCloud empty;
  empty.tag = FrameTag::world;
  CHECK_THROWS(encode(params, empty));
}

TEST_CASE("preprocess: deterministic subsample to max_points") {
  PolicyConfig cfg = small_cfg();
  cfg.voxel = 1e-4;  // keep all distinct points
  Rng rng(83);
  const LabeledCloud big = random_world_cloud(rng, 500);
  size_t n = 0;
  const auto a = preprocess_points(big, cfg, &n);
  CHECK(n == static_cast<size_t>(cfg.max_points));
  const auto b = preprocess_points(big, cfg, &n);
  CHECK(a == b);
}

TEST_CASE("predict: shape check, conditioning errors and isolation") {
  PolicyConfig cfg = small_cfg();
  Rng rng(84);
  const LabeledCloud cloud = random_world_cloud(rng, 120);

  SUBCASE("untrained params produce a valid-shape, finite output") {
    const PolicyParams params = init_params(cfg);
    const PolicyOutput out = predict(params, cloud, std::nullopt);
    REQUIRE(static_cast<int>(out.obj_traj.size()) == cfg.horizon);
    REQUIRE(static_cast<int>(out.head_traj.size()) == cfg.horizon);
    CHECK(out.terminal_score >= 0.0);
    CHECK(out.terminal_score <= 1.0);
    for (const Pose& p : out.obj_traj) {
      CHECK(finite(p.t));
      CHECK(std::isfinite(p.q.w));
    }
  }

  SUBCASE("conditioned config requires the pose argument") {
    cfg.condition_on_current_pose = true;
    const PolicyParams params = init_params(cfg);
    CHECK_THROWS(predict(params, cloud, std::nullopt));
    const PolicyOutput out = predict(params, cloud, bounded_pose(rng));
    CHECK(static_cast<int>(out.obj_traj.size()) == cfg.horizon);
  }

  SUBCASE("unconditioned predictions are bit-invariant to the pose argument") {
    const PolicyParams params = init_params(cfg);
    const PolicyOutput a = predict(params, cloud, std::nullopt);
    const PolicyOutput b = predict(params, cloud, bounded_pose(rng));
    const PolicyOutput c = predict(params, cloud, bounded_pose(rng));
    CHECK(a.terminal_score == b.terminal_score);
    for (int k = 0; k < cfg.horizon; ++k) {
      CHECK(a.obj_traj[k].q.w == b.obj_traj[k].q.w);
      CHECK(a.obj_traj[k].t.x == c.obj_traj[k].t.x);
      CHECK(a.head_traj[k].q.z == c.head_traj[k].q.z);
    }
  }
}

TEST_CASE("pose_trajectory_loss: exact zero on equal predictions, BCE analytic value") {
  const PolicyConfig cfg = small_cfg();
  Rng rng(85);

  // out vector decoded, then used as its own target: loss exactly zero
  std::vector<double> out(cfg.out_dim());
  for (auto& v : out) v = rng.uniform(-1, 1);
  std::vector<double> tgt_trans, tgt_rot;
  for (int k = 0; k < cfg.horizon; ++k) {
    const Pose p = decode_pose_vec(out.data() + k * 9, cfg, true);
    tgt_trans.insert(tgt_trans.end(), {p.t.x, p.t.y, p.t.z});
    double r[9];
    decode_rotation6(out.data() + k * 9 + 3, r);
    tgt_rot.insert(tgt_rot.end(), r, r + 9);
  }
  CHECK(pose_trajectory_loss(cfg, out, tgt_trans, tgt_rot, true, nullptr) == 0.0);

  // terminal target 1 at logit 0 -> BCE = ln 2
  PolicyParams params = init_params(cfg);
  std::fill(params.blocks[kTermW].begin(), params.blocks[kTermW].end(), 0.0);
  params.blocks[kTermB][0] = 0.0;
  const LabeledCloud cloud = random_world_cloud(rng, 60);
  TrainingSample ts = random_training_sample(rng, cfg);
  ts.terminal = 1;
  const EncodedSample es = encode_sample(ts, cloud, cfg);
  const LossResult lr = loss_and_grad(params, {&es}, 0, nullptr);
  CHECK(lr.bce_term == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("gradient check: regression config, 10 random batches, max rel err < 1e-4") {
  PolicyConfig cfg = small_cfg();
  double worst = 0;
  for (int rep = 0; rep < 5; ++rep)
    worst = std::max(worst, max_grad_rel_error(cfg, 900 + rep, 17 + rep));
  cfg.condition_on_current_pose = true;
  for (int rep = 0; rep < 3; ++rep)
    worst = std::max(worst, max_grad_rel_error(cfg, 950 + rep, 23 + rep));
  cfg.condition_on_current_pose = false;
  cfg.object_rep = ObjectRep::relative;
  for (int rep = 0; rep < 2; ++rep)
    worst = std::max(worst, max_grad_rel_error(cfg, 970 + rep, 29 + rep));
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient check: denoising config") {
  PolicyConfig cfg = small_cfg();
  cfg.head_type = HeadType::denoising;
  cfg.denoise_steps = 8;
  cfg.denoise_hidden = 32;
  double worst = 0;
  for (int rep = 0; rep < 3; ++rep)
    worst = std::max(worst, max_grad_rel_error(cfg, 990 + rep, 31 + rep));
  CHECK(worst < 1e-4);
}

TEST_CASE("train: single-sample overfit reaches loss < 1e-4 in 2000 steps") {
  PolicyConfig cfg = small_cfg();
  Rng rng(86);
  const LabeledCloud cloud = random_world_cloud(rng, 80);
  TrainingSample ts = random_training_sample(rng, cfg);
  ts.terminal = 0;
  std::vector<EncodedSample> dataset;
  dataset.push_back(encode_sample(ts, cloud, cfg));

  TrainConfig tc;
  tc.steps = 2000;
  tc.batch = 1;
  tc.lr = 1.2e-2;
  tc.lr_min = 1e-4;
  tc.seed = 3;
  TrainHistory hist;
  const PolicyParams params = train(dataset, cfg, tc, &hist);
  CHECK(hist.final_loss < 1e-4);
  CHECK(hist.epoch_loss.size() > 100);
  CHECK(hist.epoch_loss.front() > hist.final_loss);
}

TEST_CASE("train: fixed seed reruns with a bit-identical history") {
  PolicyConfig cfg = small_cfg();
  Rng rng(87);
  std::vector<EncodedSample> dataset;
  for (int i = 0; i < 6; ++i) {
    const LabeledCloud cloud = random_world_cloud(rng, 60);
    dataset.push_back(encode_sample(random_training_sample(rng, cfg), cloud, cfg));
  }
  TrainConfig tc;
  tc.steps = 60;
  tc.batch = 4;
  tc.seed = 11;
  TrainHistory h1, h2;
  const PolicyParams p1 = train(dataset, cfg, tc, &h1);
  const PolicyParams p2 = train(dataset, cfg, tc, &h2);
  REQUIRE(h1.epoch_loss.size() == h2.epoch_loss.size());
  for (size_t i = 0; i < h1.epoch_loss.size(); ++i) CHECK(h1.epoch_loss[i] == h2.epoch_loss[i]);
  for (int id = 0; id < kNumBlocks; ++id)
    for (size_t i = 0; i < p1.blocks[id].size(); ++i)
      CHECK(p1.blocks[id][i] == p2.blocks[id][i]);
}

TEST_CASE("memorization: fitted single sample reproduced within 1e-3; rel/abs consistency") {
  // one repeated sample; after training, predict() reproduces its targets
  PolicyConfig cfg = small_cfg();
  Rng rng(88);
  const LabeledCloud cloud = random_world_cloud(rng, 80);
  TrainingSample ts = random_training_sample(rng, cfg);
  ts.terminal = 0;

  std::vector<EncodedSample> dataset;
  dataset.push_back(encode_sample(ts, cloud, cfg));
  TrainConfig tc;
  tc.steps = 4000;
  tc.batch = 1;
  tc.lr = 1.2e-2;
  tc.lr_min = 1e-4;
  tc.seed = 4;
  const PolicyParams params = train(dataset, cfg, tc, nullptr);
  const PolicyOutput out = predict(params, cloud, std::nullopt);
  for (int k = 0; k < cfg.horizon; ++k) {
    CHECK(norm(out.obj_traj[k].t - ts.obj_abs[k].t) < 1e-3);
    CHECK(quat_angle(quat_mul(quat_conj(out.obj_traj[k].q), ts.obj_abs[k].q)) < 1e-3);
    CHECK(norm(out.head_traj[k].t - ts.head_rel[k].t) < 1e-3);
  }
  CHECK(out.terminal_score < 0.05);

  // relative-config output converted by rel_to_abs matches the absolute target
  PolicyConfig rel_cfg = cfg;
  rel_cfg.object_rep = ObjectRep::relative;
  std::vector<EncodedSample> rel_dataset;
  rel_dataset.push_back(encode_sample(ts, cloud, rel_cfg));
  const PolicyParams rel_params = train(rel_dataset, rel_cfg, tc, nullptr);
  const PolicyOutput rel_out = predict(rel_params, cloud, std::nullopt);
  const auto abs_from_rel = rel_to_abs(ts.current_obj_pose, HeadTrajRel{rel_out.obj_traj});
  for (int k = 0; k < cfg.horizon; ++k) {
    CHECK(norm(abs_from_rel[k].t - ts.obj_abs[k].t) < 2e-3);
    CHECK(quat_angle(quat_mul(quat_conj(abs_from_rel[k].q), ts.obj_abs[k].q)) < 2e-3);
  }
}

TEST_CASE("denoising sampler: zero noise degenerates, seeds reproduce, bimodal toy") {
  PolicyConfig cfg;
  cfg.horizon = 2;
  cfg.voxel = 0.01;
  cfg.max_points = 64;
  cfg.enc1 = 12;
  cfg.enc2 = 16;
  cfg.trunk = 16;
  cfg.head_type = HeadType::denoising;
  cfg.denoise_steps = 30;
  cfg.denoise_hidden = 64;
  cfg.seed = 9;

  Rng rng(89);
  LabeledCloud cloud;
  cloud.tag = FrameTag::world;
  for (int i = 0; i < 20; ++i)
    cloud.push_point({rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.0, 0.1)});

  SUBCASE("zero noise scale is deterministic across seeds and equals predict") {
    PolicyConfig zc = cfg;
    zc.denoise_noise_scale = 0.0;
    const PolicyParams params = init_params(zc);
    const PolicyOutput a = sample_denoising(params, cloud, std::nullopt, 1);
    const PolicyOutput b = sample_denoising(params, cloud, std::nullopt, 2);
    const PolicyOutput c = predict(params, cloud, std::nullopt);
    for (int k = 0; k < zc.horizon; ++k) {
      CHECK(a.obj_traj[k].t.x == b.obj_traj[k].t.x);
      CHECK(a.obj_traj[k].q.w == b.obj_traj[k].q.w);
      CHECK(a.obj_traj[k].t.x == c.obj_traj[k].t.x);
    }
  }

  SUBCASE("fixed seed gives the identical sample") {
    const PolicyParams params = init_params(cfg);
    const PolicyOutput a = sample_denoising(params, cloud, std::nullopt, 42);
    const PolicyOutput b = sample_denoising(params, cloud, std::nullopt, 42);
    for (int k = 0; k < cfg.horizon; ++k) {
      CHECK(a.obj_traj[k].t.x == b.obj_traj[k].t.x);
      CHECK(a.head_traj[k].t.y == b.head_traj[k].t.y);
    }
  }

  SUBCASE("bimodal 1-D endpoints recover both modes within 10% frequency") {
    // two trajectories sharing one observation, endpoints at x=0.1 and x=0.7
    const auto make_sample = [&](double x_end) {
      TrainingSample s;
      for (int k = 0; k < cfg.horizon; ++k) {
        s.obj_abs.push_back(Pose(Quat{}, {x_end, 0.4, 0.1}));
        s.head_rel.push_back(Pose());
      }
      s.terminal = 0;
      s.current_obj_pose = Pose(Quat{}, {0.4, 0.4, 0.1});
      return s;
    };
    std::vector<EncodedSample> dataset;
    dataset.push_back(encode_sample(make_sample(0.1), cloud, cfg));
    dataset.push_back(encode_sample(make_sample(0.7), cloud, cfg));

    TrainConfig tc;
    tc.steps = 4000;
    tc.batch = 8;
    tc.lr = 3e-3;
    tc.lr_min = 5e-4;
    tc.seed = 12;
    const PolicyParams params = train(dataset, cfg, tc, nullptr);

    int lo = 0, hi = 0, off = 0;
    for (int i = 0; i < 1000; ++i) {
      const PolicyOutput out = sample_denoising(params, cloud, std::nullopt, 10000 + i);
      const double x = out.obj_traj.back().t.x;
      if (std::abs(x - 0.1) < 0.12) ++lo;
      else if (std::abs(x - 0.7) < 0.12) ++hi;
      else ++off;
    }
    CHECK(off < 100);           // samples cluster into the two modes
    CHECK(lo > 400);            // each mode within 10% of the true 50%
    CHECK(lo < 600);
    CHECK(hi > 400);
    CHECK(hi < 600);
  }
}

TEST_CASE("checkpoint: save/load round trip preserves config and float32 weights") {
  const auto p = std::filesystem::temp_directory_path() / "ag_policy.ckpt";
  PolicyConfig cfg = small_cfg();
  cfg.condition_on_current_pose = true;
  const PolicyParams params = init_params(cfg);
  save_params(params, p);
  const PolicyParams back = load_params(p);
  CHECK(back.cfg.horizon == cfg.horizon);
  CHECK(back.cfg.condition_on_current_pose);
  for (int id = 0; id < kNumBlocks; ++id) {
    REQUIRE(back.blocks[id].size() == params.blocks[id].size());
    for (size_t i = 0; i < params.blocks[id].size(); ++i)
      CHECK(back.blocks[id][i] == static_cast<double>(static_cast<float>(params.blocks[id][i])));
  }
  // saved-then-loaded params predict identically to themselves on reload
  Rng rng(90);
  const LabeledCloud cloud = random_world_cloud(rng, 60);
  const Pose cond_pose = bounded_pose(rng);
  const PolicyOutput a = predict(back, cloud, cond_pose);
  const PolicyParams back2 = load_params(p);
  const PolicyOutput b = predict(back2, cloud, cond_pose);
  CHECK(a.terminal_score == b.terminal_score);
  CHECK(a.obj_traj[0].t.x == b.obj_traj[0].t.x);
  std::filesystem::remove(p);
}
