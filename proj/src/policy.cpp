#include "activeglasses/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "activeglasses/kernels.hpp"
#include "activeglasses/rng.hpp"

namespace ag {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct GramSchmidtCache {
  Vec3 a1, a2, b1, b2, b3;
  double n1 = 1, n2 = 1;
};

// 6D rotation representation: two raw columns, orthonormalized
void gram_schmidt(const double* v6, double r[9], GramSchmidtCache* cache) {
  const Vec3 a1{v6[0], v6[1], v6[2]};
  const Vec3 a2{v6[3], v6[4], v6[5]};
  const double n1 = std::max(norm(a1), 1e-12);
  const Vec3 b1 = (1.0 / n1) * a1;
  const Vec3 u2 = a2 - dot(b1, a2) * b1;
  const double n2 = std::max(norm(u2), 1e-12);
  const Vec3 b2 = (1.0 / n2) * u2;
  const Vec3 b3 = cross(b1, b2);
  r[0] = b1.x; r[1] = b2.x; r[2] = b3.x;
  r[3] = b1.y; r[4] = b2.y; r[5] = b3.y;
  r[6] = b1.z; r[7] = b2.z; r[8] = b3.z;
  if (cache) *cache = {a1, a2, b1, b2, b3, n1, n2};
}

// backward of gram_schmidt: dr (3x3, same layout) -> gradients on the 6 inputs
void gram_schmidt_backward(const GramSchmidtCache& c, const double dr[9], double dv6[6]) {
  Vec3 db1{dr[0], dr[3], dr[6]};
  Vec3 db2{dr[1], dr[4], dr[7]};
  const Vec3 db3{dr[2], dr[5], dr[8]};
  // b3 = b1 x b2
  db1 = db1 + cross(c.b2, db3);
  db2 = db2 + cross(db3, c.b1);
  // b2 = u2 / n2, u2 = a2 - (b1.a2) b1
  const Vec3 gu2 = (1.0 / c.n2) * (db2 - dot(c.b2, db2) * c.b2);
  const Vec3 ga2 = gu2 - dot(c.b1, gu2) * c.b1;
  db1 = db1 - dot(gu2, c.b1) * c.a2 - dot(c.b1, c.a2) * gu2;
  // b1 = a1 / n1
  const Vec3 ga1 = (1.0 / c.n1) * (db1 - dot(c.b1, db1) * c.b1);
  dv6[0] = ga1.x; dv6[1] = ga1.y; dv6[2] = ga1.z;
  dv6[3] = ga2.x; dv6[4] = ga2.y; dv6[5] = ga2.z;
}

// d(theta^2)/dc for theta = acos(c); finite at c -> 1, large near c -> -1
double dtheta2_dc(double c) {
  if (c > 1.0 - 1e-10) return -2.0;
  const double theta = std::acos(c);
  return -2.0 * theta / std::sqrt(std::max(1.0 - c * c, 1e-18));
}

struct DenoiseSchedule {
  std::vector<double> beta, alpha, abar;
  explicit DenoiseSchedule(int steps) {
    beta.resize(steps + 1);
    alpha.resize(steps + 1);
    abar.resize(steps + 1);
    abar[0] = 1.0;
    for (int k = 1; k <= steps; ++k) {
      beta[k] = steps == 1 ? 1e-2 : 1e-4 + (2e-2 - 1e-4) * (k - 1) / (steps - 1);
      alpha[k] = 1.0 - beta[k];
      abar[k] = abar[k - 1] * alpha[k];
    }
  }
};

size_t block_expected_size(const PolicyConfig& c, BlockId id) {
  const size_t d = static_cast<size_t>(c.out_dim());
  const size_t tin = static_cast<size_t>(c.enc2 + c.cond_dim());
  const size_t din = static_cast<size_t>(c.trunk) + d + 2;
  const bool reg = c.head_type == HeadType::regression;
  switch (id) {
    case kEnc1W: return static_cast<size_t>(c.enc1) * 3;
    case kEnc1B: return static_cast<size_t>(c.enc1);
    case kEnc2W: return static_cast<size_t>(c.enc2) * c.enc1;
    case kEnc2B: return static_cast<size_t>(c.enc2);
    case kTrunkW: return static_cast<size_t>(c.trunk) * tin;
    case kTrunkB: return static_cast<size_t>(c.trunk);
    case kObjW: return reg ? d * c.trunk : 0;
    case kObjB: return reg ? d : 0;
    case kHeadW: return reg ? d * c.trunk : 0;
    case kHeadB: return reg ? d : 0;
    case kTermW: return static_cast<size_t>(c.trunk);
    case kTermB: return 1;
    case kObjDnW1: return reg ? 0 : static_cast<size_t>(c.denoise_hidden) * din;
    case kObjDnB1: return reg ? 0 : static_cast<size_t>(c.denoise_hidden);
    case kObjDnW2: return reg ? 0 : d * c.denoise_hidden;
    case kObjDnB2: return reg ? 0 : d;
    case kHeadDnW1: return reg ? 0 : static_cast<size_t>(c.denoise_hidden) * din;
    case kHeadDnB1: return reg ? 0 : static_cast<size_t>(c.denoise_hidden);
    case kHeadDnW2: return reg ? 0 : d * c.denoise_hidden;
    case kHeadDnB2: return reg ? 0 : d;
    default: return 0;
  }
}

void xavier_fill(std::vector<double>& w, size_t fan_in, size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w) v = rng.uniform(-s, s);
}

// bias toward the identity rotation in 6D blocks shaped [H][9]
void identity_rotation_bias(std::vector<double>& b, int horizon) {
  for (int k = 0; k < horizon; ++k) {
    b[k * 9 + 3] = 1.0;
    b[k * 9 + 7] = 1.0;
  }
}

}  // namespace

void PolicyConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("policy config: horizon must be >= 1");
  if (max_points < 64) throw std::invalid_argument("policy config: max_points must be >= 64");
  if (enc1 < 1 || enc2 < 1 || trunk < 1)
    throw std::invalid_argument("policy config: encoder widths must be >= 1");
  if (head_type == HeadType::denoising && denoise_steps < 1)
    throw std::invalid_argument("policy config: denoise_steps must be >= 1");
  if (!(voxel > 0)) throw std::invalid_argument("policy config: voxel must be > 0");
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
  j = nlohmann::json{{"horizon", c.horizon},
                     {"voxel", c.voxel},
                     {"max_points", c.max_points},
                     {"enc1", c.enc1},
                     {"enc2", c.enc2},
                     {"trunk", c.trunk},
                     {"head_type", c.head_type == HeadType::regression ? "regression" : "denoising"},
                     {"object_rep", c.object_rep == ObjectRep::absolute ? "absolute" : "relative"},
                     {"condition_on_current_pose", c.condition_on_current_pose},
                     {"denoise_steps", c.denoise_steps},
                     {"denoise_noise_scale", c.denoise_noise_scale},
                     {"denoise_hidden", c.denoise_hidden},
                     {"norm_box", c.norm_box},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
  c.horizon = j.at("horizon").get<int>();
  c.voxel = j.at("voxel").get<double>();
  c.max_points = j.at("max_points").get<int>();
  c.enc1 = j.at("enc1").get<int>();
  c.enc2 = j.at("enc2").get<int>();
  c.trunk = j.at("trunk").get<int>();
  const std::string ht = j.at("head_type").get<std::string>();
  if (ht == "regression") c.head_type = HeadType::regression;
  else if (ht == "denoising") c.head_type = HeadType::denoising;
  else throw std::invalid_argument("unknown head_type: " + ht);
  const std::string rep = j.at("object_rep").get<std::string>();
  if (rep == "absolute") c.object_rep = ObjectRep::absolute;
  else if (rep == "relative") c.object_rep = ObjectRep::relative;
  else throw std::invalid_argument("unknown object_rep: " + rep);
  c.condition_on_current_pose = j.at("condition_on_current_pose").get<bool>();
  c.denoise_steps = j.at("denoise_steps").get<int>();
  c.denoise_noise_scale = j.at("denoise_noise_scale").get<double>();
  c.denoise_hidden = j.at("denoise_hidden").get<int>();
  j.at("norm_box").get_to(c.norm_box);
  c.seed = j.at("seed").get<uint64_t>();
}

const char* block_name(BlockId id) {
  static const char* names[kNumBlocks] = {
      "enc1_w", "enc1_b", "enc2_w", "enc2_b", "trunk_w", "trunk_b",
      "obj_w",  "obj_b",  "head_w", "head_b", "term_w",  "term_b",
      "obj_dn_w1", "obj_dn_b1", "obj_dn_w2", "obj_dn_b2",
      "head_dn_w1", "head_dn_b1", "head_dn_w2", "head_dn_b2"};
  return names[id];
}

PolicyParams init_params(const PolicyConfig& cfg) {
  cfg.validate();
  PolicyParams p;
  p.cfg = cfg;
  Rng rng(Rng::derive_seed(cfg.seed, 0xb10c));
  for (int id = 0; id < kNumBlocks; ++id)
    p.blocks[id].assign(block_expected_size(cfg, static_cast<BlockId>(id)), 0.0);

  xavier_fill(p.blocks[kEnc1W], 3, cfg.enc1, rng);
  xavier_fill(p.blocks[kEnc2W], cfg.enc1, cfg.enc2, rng);
  xavier_fill(p.blocks[kTrunkW], cfg.enc2 + cfg.cond_dim(), cfg.trunk, rng);
  if (cfg.head_type == HeadType::regression) {
    // small head weights + identity-rotation bias keep initial poses sane
    xavier_fill(p.blocks[kObjW], cfg.trunk, cfg.out_dim(), rng);
    for (double& v : p.blocks[kObjW]) v *= 0.1;
    xavier_fill(p.blocks[kHeadW], cfg.trunk, cfg.out_dim(), rng);
    for (double& v : p.blocks[kHeadW]) v *= 0.1;
    identity_rotation_bias(p.blocks[kObjB], cfg.horizon);
    identity_rotation_bias(p.blocks[kHeadB], cfg.horizon);
  } else {
    const size_t din = static_cast<size_t>(cfg.trunk) + cfg.out_dim() + 2;
    xavier_fill(p.blocks[kObjDnW1], din, cfg.denoise_hidden, rng);
    xavier_fill(p.blocks[kObjDnW2], cfg.denoise_hidden, cfg.out_dim(), rng);
    for (double& v : p.blocks[kObjDnW2]) v *= 0.1;
    xavier_fill(p.blocks[kHeadDnW1], din, cfg.denoise_hidden, rng);
    xavier_fill(p.blocks[kHeadDnW2], cfg.denoise_hidden, cfg.out_dim(), rng);
    for (double& v : p.blocks[kHeadDnW2]) v *= 0.1;
    identity_rotation_bias(p.blocks[kObjDnB2], cfg.horizon);
    identity_rotation_bias(p.blocks[kHeadDnB2], cfg.horizon);
  }
  xavier_fill(p.blocks[kTermW], cfg.trunk, 1, rng);
  for (double& v : p.blocks[kTermW]) v *= 0.1;
  return p;
}

std::vector<double> preprocess_points(const LabeledCloud& world_cloud, const PolicyConfig& cfg,
                                      size_t* n_out) {
  if (world_cloud.tag != FrameTag::world)
    throw std::invalid_argument("policy: cloud must be world-tagged");
  if (world_cloud.size() == 0) throw std::invalid_argument("policy: empty cloud");
  const LabeledCloud down = voxel_downsample(world_cloud, cfg.voxel);

  std::vector<size_t> keep(down.size());
  for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  if (down.size() > static_cast<size_t>(cfg.max_points)) {
    // deterministic partial Fisher-Yates at the config seed, then re-sorted
    // so the canonical point order survives subsampling
    Rng rng(Rng::derive_seed(cfg.seed, 0x5ab5));
    for (size_t i = 0; i < static_cast<size_t>(cfg.max_points); ++i) {
      const size_t j = i + rng.uniform_index(keep.size() - i);
      std::swap(keep[i], keep[j]);
    }
    keep.resize(cfg.max_points);
    std::sort(keep.begin(), keep.end());
  }

  const size_t n = keep.size();
  const Vec3 center = 0.5 * (cfg.norm_box.min + cfg.norm_box.max);
  const Vec3 half = 0.5 * (cfg.norm_box.max - cfg.norm_box.min);
  std::vector<double> x(3 * n);
  for (size_t i = 0; i < n; ++i) {
    const Vec3 p = down.point(keep[i]);
    x[0 * n + i] = (p.x - center.x) / half.x;
    x[1 * n + i] = (p.y - center.y) / half.y;
    x[2 * n + i] = (p.z - center.z) / half.z;
  }
  if (n_out) *n_out = n;
  return x;
}

std::vector<double> encode_pose_vec(const Pose& p, const PolicyConfig& cfg, bool absolute) {
  const Vec3 center = 0.5 * (cfg.norm_box.min + cfg.norm_box.max);
  const Vec3 half = 0.5 * (cfg.norm_box.max - cfg.norm_box.min);
  std::vector<double> v(9);
  if (absolute) {
    v[0] = (p.t.x - center.x) / half.x;
    v[1] = (p.t.y - center.y) / half.y;
    v[2] = (p.t.z - center.z) / half.z;
  } else {
    v[0] = p.t.x / half.x;
    v[1] = p.t.y / half.y;
    v[2] = p.t.z / half.z;
  }
  double r[9];
  quat_to_matrix(p.q, r);
  // first two rotation columns
  v[3] = r[0]; v[4] = r[3]; v[5] = r[6];
  v[6] = r[1]; v[7] = r[4]; v[8] = r[7];
  return v;
}

Pose decode_pose_vec(const double* v, const PolicyConfig& cfg, bool absolute) {
  const Vec3 center = 0.5 * (cfg.norm_box.min + cfg.norm_box.max);
  const Vec3 half = 0.5 * (cfg.norm_box.max - cfg.norm_box.min);
  Vec3 t;
  if (absolute) {
    t = {center.x + half.x * v[0], center.y + half.y * v[1], center.z + half.z * v[2]};
  } else {
    t = {half.x * v[0], half.y * v[1], half.z * v[2]};
  }
  double r[9];
  gram_schmidt(v + 3, r, nullptr);
  return Pose(quat_from_matrix(r), t);
}

namespace {

struct ForwardCache {
  size_t n = 0;
  std::vector<double> x;         // [3][n] input view (copied)
  std::vector<double> a1, a2;    // activations
  std::vector<double> feat;      // pooled [enc2]
  std::vector<uint32_t> argmax;  // [enc2]
  std::vector<double> trunk_in;  // [enc2 + cond]
  std::vector<double> trunk_out; // [trunk]
  std::vector<double> obj_out, head_out;  // regression [H*9]
  double term_logit = 0;
};

// small dense helpers (per-sample vectors; sizes are tens to hundreds)
void dense(const std::vector<double>& w, const std::vector<double>& b, int out_dim, int in_dim,
           const double* in, double* out, bool tanh_act) {
  for (int j = 0; j < out_dim; ++j) {
    double s = b[j];
    const double* wj = w.data() + static_cast<size_t>(j) * in_dim;
    for (int k = 0; k < in_dim; ++k) s += wj[k] * in[k];
    out[j] = tanh_act ? std::tanh(s) : s;
  }
}

void encoder_forward(const PolicyParams& p, const double* x, size_t n, ForwardCache& fc) {
  const PolicyConfig& c = p.cfg;
  fc.n = n;
  fc.x.assign(x, x + 3 * n);
  fc.a1.resize(static_cast<size_t>(c.enc1) * n);
  fc.a2.resize(static_cast<size_t>(c.enc2) * n);
  kern::affine_forward(p.blocks[kEnc1W].data(), p.blocks[kEnc1B].data(), c.enc1, 3, x,
                       fc.a1.data(), n, true);
  kern::affine_forward(p.blocks[kEnc2W].data(), p.blocks[kEnc2B].data(), c.enc2, c.enc1,
                       fc.a1.data(), fc.a2.data(), n, true);
  fc.feat.resize(c.enc2);
  fc.argmax.resize(c.enc2);
  kern::colwise_max(fc.a2.data(), c.enc2, n, fc.feat.data(), fc.argmax.data());
}

void trunk_forward(const PolicyParams& p, const std::vector<double>& cond, ForwardCache& fc) {
  const PolicyConfig& c = p.cfg;
  fc.trunk_in = fc.feat;
  fc.trunk_in.insert(fc.trunk_in.end(), cond.begin(), cond.end());
  if (static_cast<int>(fc.trunk_in.size()) != c.enc2 + c.cond_dim())
    throw std::invalid_argument("policy: conditioning mismatch");
  fc.trunk_out.resize(c.trunk);
  dense(p.blocks[kTrunkW], p.blocks[kTrunkB], c.trunk, c.enc2 + c.cond_dim(),
        fc.trunk_in.data(), fc.trunk_out.data(), true);
}

void heads_forward(const PolicyParams& p, ForwardCache& fc) {
  const PolicyConfig& c = p.cfg;
  if (c.head_type == HeadType::regression) {
    fc.obj_out.resize(c.out_dim());
    fc.head_out.resize(c.out_dim());
    dense(p.blocks[kObjW], p.blocks[kObjB], c.out_dim(), c.trunk, fc.trunk_out.data(),
          fc.obj_out.data(), false);
    dense(p.blocks[kHeadW], p.blocks[kHeadB], c.out_dim(), c.trunk, fc.trunk_out.data(),
          fc.head_out.data(), false);
  }
  double z = p.blocks[kTermB][0];
  for (int i = 0; i < c.trunk; ++i) z += p.blocks[kTermW][i] * fc.trunk_out[i];
  fc.term_logit = z;
}

// denoiser net: x0hat = W2 tanh(W1 [trunk; x_k; embed] + b1) + b2
struct DenoiseCache {
  std::vector<double> in;   // [trunk + D + 2]
  std::vector<double> h;    // [dnh]
  std::vector<double> out;  // [D]
};

void denoise_forward(const PolicyParams& p, BlockId w1, BlockId b1, BlockId w2, BlockId b2,
                     const std::vector<double>& trunk_out, const double* xk, double k_frac,
                     double noise_level, DenoiseCache& dc) {
  const PolicyConfig& c = p.cfg;
  const int d = c.out_dim();
  const int din = c.trunk + d + 2;
  dc.in.resize(din);
  std::copy(trunk_out.begin(), trunk_out.end(), dc.in.begin());
  std::copy(xk, xk + d, dc.in.begin() + c.trunk);
  dc.in[c.trunk + d] = k_frac;
  dc.in[c.trunk + d + 1] = noise_level;
  dc.h.resize(c.denoise_hidden);
  dense(p.blocks[w1], p.blocks[b1], c.denoise_hidden, din, dc.in.data(), dc.h.data(), true);
  dc.out.resize(d);
  dense(p.blocks[w2], p.blocks[b2], d, c.denoise_hidden, dc.h.data(), dc.out.data(), false);
}

// backward through the denoiser; returns gradient on the trunk part of the input
void denoise_backward(const PolicyParams& p, BlockId w1id, BlockId b1id, BlockId w2id,
                      BlockId b2id, const DenoiseCache& dc, const std::vector<double>& dout,
                      PolicyGrads& g, std::vector<double>& dtrunk) {
  const PolicyConfig& c = p.cfg;
  const int d = c.out_dim();
  const int din = c.trunk + d + 2;
  const int nh = c.denoise_hidden;
  std::vector<double> dh(nh, 0.0);
  for (int j = 0; j < d; ++j) {
    g[b2id][j] += dout[j];
    const double* w2j = p.blocks[w2id].data() + static_cast<size_t>(j) * nh;
    double* gw2j = g[w2id].data() + static_cast<size_t>(j) * nh;
    for (int i = 0; i < nh; ++i) {
      gw2j[i] += dout[j] * dc.h[i];
      dh[i] += w2j[i] * dout[j];
    }
  }
  for (int i = 0; i < nh; ++i) dh[i] *= 1.0 - dc.h[i] * dc.h[i];
  for (int i = 0; i < nh; ++i) {
    g[b1id][i] += dh[i];
    const double* w1i = p.blocks[w1id].data() + static_cast<size_t>(i) * din;
    double* gw1i = g[w1id].data() + static_cast<size_t>(i) * din;
    for (int k = 0; k < din; ++k) gw1i[k] += dh[i] * dc.in[k];
    for (int k = 0; k < c.trunk; ++k) dtrunk[k] += w1i[k] * dh[i];
  }
}

}  // namespace

void decode_rotation6(const double* v6, double r[9]) { gram_schmidt(v6, r, nullptr); }

double pose_trajectory_loss(const PolicyConfig& cfg, const std::vector<double>& out,
                            const std::vector<double>& tgt_trans,
                            const std::vector<double>& tgt_rot, bool absolute,
                            std::vector<double>* dout) {
  const Vec3 half = 0.5 * (cfg.norm_box.max - cfg.norm_box.min);
  const Vec3 center = 0.5 * (cfg.norm_box.min + cfg.norm_box.max);
  const int h = cfg.horizon;
  const double inv_h = 1.0 / h;
  double loss = 0;
  for (int k = 0; k < h; ++k) {
    const double* v = out.data() + k * 9;
    Vec3 t_pred;
    if (absolute)
      t_pred = {center.x + half.x * v[0], center.y + half.y * v[1], center.z + half.z * v[2]};
    else
      t_pred = {half.x * v[0], half.y * v[1], half.z * v[2]};
    const Vec3 t_tgt{tgt_trans[k * 3 + 0], tgt_trans[k * 3 + 1], tgt_trans[k * 3 + 2]};
    const Vec3 dt = t_pred - t_tgt;
    loss += inv_h * norm2(dt);

    GramSchmidtCache gs;
    double r_pred[9];
    gram_schmidt(v + 3, r_pred, &gs);
    const double* r_tgt = tgt_rot.data() + k * 9;
    double tr = 0;
    for (int i = 0; i < 9; ++i) tr += r_pred[i] * r_tgt[i];
    const double cang = std::clamp((tr - 1.0) / 2.0, -1.0 + 1e-9, 1.0);
    // within orthonormalization round-off of a perfect match: exact zero
    const double theta = cang >= 1.0 - 2e-15 ? 0.0 : std::acos(cang);
    loss += inv_h * theta * theta;

    if (dout) {
      double* dv = dout->data() + k * 9;
      dv[0] += inv_h * 2.0 * dt.x * half.x;
      dv[1] += inv_h * 2.0 * dt.y * half.y;
      dv[2] += inv_h * 2.0 * dt.z * half.z;
      const double g_c = inv_h * dtheta2_dc(cang);
      double dr[9];
      for (int i = 0; i < 9; ++i) dr[i] = g_c * 0.5 * r_tgt[i];
      double dv6[6];
      gram_schmidt_backward(gs, dr, dv6);
      for (int i = 0; i < 6; ++i) dv[3 + i] += dv6[i];
    }
  }
  return loss;
}

namespace {

// encoder + trunk backward from (dtrunk_out, dterm accumulated upstream)
void backbone_backward(const PolicyParams& p, const ForwardCache& fc,
                       const std::vector<double>& dtrunk_out, PolicyGrads& g) {
  const PolicyConfig& c = p.cfg;
  const int tin = c.enc2 + c.cond_dim();
  // trunk tanh
  std::vector<double> du(c.trunk);
  for (int i = 0; i < c.trunk; ++i)
    du[i] = dtrunk_out[i] * (1.0 - fc.trunk_out[i] * fc.trunk_out[i]);
  std::vector<double> dfeat(c.enc2, 0.0);
  for (int i = 0; i < c.trunk; ++i) {
    g[kTrunkB][i] += du[i];
    const double* wi = p.blocks[kTrunkW].data() + static_cast<size_t>(i) * tin;
    double* gwi = g[kTrunkW].data() + static_cast<size_t>(i) * tin;
    for (int k = 0; k < tin; ++k) gwi[k] += du[i] * fc.trunk_in[k];
    for (int k = 0; k < c.enc2; ++k) dfeat[k] += wi[k] * du[i];
  }

  // pool backward: only the winning points carry gradient
  std::vector<uint32_t> winners(fc.argmax.begin(), fc.argmax.end());
  std::sort(winners.begin(), winners.end());
  winners.erase(std::unique(winners.begin(), winners.end()), winners.end());
  const size_t m = winners.size();
  std::vector<uint32_t> pos(fc.n, 0);
  for (size_t i = 0; i < m; ++i) pos[winners[i]] = static_cast<uint32_t>(i);

  std::vector<double> x_c(3 * m), a1_c(static_cast<size_t>(c.enc1) * m),
      a2_c(static_cast<size_t>(c.enc2) * m), da2(static_cast<size_t>(c.enc2) * m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const size_t src = winners[i];
    for (int r = 0; r < 3; ++r) x_c[r * m + i] = fc.x[r * fc.n + src];
    for (int r = 0; r < c.enc1; ++r) a1_c[static_cast<size_t>(r) * m + i] = fc.a1[static_cast<size_t>(r) * fc.n + src];
    for (int r = 0; r < c.enc2; ++r) a2_c[static_cast<size_t>(r) * m + i] = fc.a2[static_cast<size_t>(r) * fc.n + src];
  }
  for (int j = 0; j < c.enc2; ++j) da2[static_cast<size_t>(j) * m + pos[fc.argmax[j]]] += dfeat[j];

  std::vector<double> dz2(static_cast<size_t>(c.enc2) * m);
  kern::tanh_backward(a2_c.data(), da2.data(), dz2.data(), dz2.size());
  // weight grads stay scalar: fixed accumulation order
  for (int j = 0; j < c.enc2; ++j) {
    const double* dzj = dz2.data() + static_cast<size_t>(j) * m;
    double* gw = g[kEnc2W].data() + static_cast<size_t>(j) * c.enc1;
    double bsum = 0;
    for (size_t i = 0; i < m; ++i) bsum += dzj[i];
    g[kEnc2B][j] += bsum;
    for (int k = 0; k < c.enc1; ++k) {
      const double* a1k = a1_c.data() + static_cast<size_t>(k) * m;
      double s = 0;
      for (size_t i = 0; i < m; ++i) s += dzj[i] * a1k[i];
      gw[k] += s;
    }
  }
  std::vector<double> da1(static_cast<size_t>(c.enc1) * m);
  kern::affine_backward_data(p.blocks[kEnc2W].data(), c.enc2, c.enc1, dz2.data(), da1.data(), m);
  std::vector<double> dz1(static_cast<size_t>(c.enc1) * m);
  kern::tanh_backward(a1_c.data(), da1.data(), dz1.data(), dz1.size());
  for (int j = 0; j < c.enc1; ++j) {
    const double* dzj = dz1.data() + static_cast<size_t>(j) * m;
    double* gw = g[kEnc1W].data() + static_cast<size_t>(j) * 3;
    double bsum = 0;
    for (size_t i = 0; i < m; ++i) bsum += dzj[i];
    g[kEnc1B][j] += bsum;
    for (int k = 0; k < 3; ++k) {
      const double* xk = x_c.data() + static_cast<size_t>(k) * m;
      double s = 0;
      for (size_t i = 0; i < m; ++i) s += dzj[i] * xk[i];
      gw[k] += s;
    }
  }
}

PolicyOutput decode_output(const PolicyConfig& cfg, const std::vector<double>& obj_out,
                           const std::vector<double>& head_out, double term_logit) {
  PolicyOutput out;
  const bool abs_obj = cfg.object_rep == ObjectRep::absolute;
  for (int k = 0; k < cfg.horizon; ++k) {
    out.obj_traj.push_back(decode_pose_vec(obj_out.data() + k * 9, cfg, abs_obj));
    out.head_traj.push_back(decode_pose_vec(head_out.data() + k * 9, cfg, false));
  }
  out.terminal_score = sigmoid(term_logit);
  return out;
}

std::vector<double> sample_head(const PolicyParams& p, BlockId w1, BlockId b1, BlockId w2,
                                BlockId b2, const std::vector<double>& trunk_out, Rng& rng) {
  const PolicyConfig& c = p.cfg;
  const int d = c.out_dim();
  const int steps = c.denoise_steps;
  const DenoiseSchedule sched(steps);
  std::vector<double> x(d);
  for (double& v : x) v = c.denoise_noise_scale * rng.normal();
  DenoiseCache dc;
  for (int k = steps; k >= 1; --k) {
    const double k_frac = static_cast<double>(k) / steps;
    const double noise_level = std::sqrt(1.0 - sched.abar[k]);
    denoise_forward(p, w1, b1, w2, b2, trunk_out, x.data(), k_frac, noise_level, dc);
    if (k == 1) {
      x = dc.out;
      break;
    }
    const double ab_k = sched.abar[k], ab_p = sched.abar[k - 1];
    const double beta = sched.beta[k], alpha = sched.alpha[k];
    const double c0 = std::sqrt(ab_p) * beta / (1.0 - ab_k);
    const double c1 = std::sqrt(alpha) * (1.0 - ab_p) / (1.0 - ab_k);
    const double sig = std::sqrt((1.0 - ab_p) / (1.0 - ab_k) * beta);
    for (int i = 0; i < d; ++i)
      x[i] = c0 * dc.out[i] + c1 * x[i] + sig * c.denoise_noise_scale * rng.normal();
  }
  return x;
}

}  // namespace

std::vector<double> encode(const PolicyParams& params, const LabeledCloud& world_cloud) {
  size_t n = 0;
  const std::vector<double> x = preprocess_points(world_cloud, params.cfg, &n);
  ForwardCache fc;
  encoder_forward(params, x.data(), n, fc);
  return fc.feat;
}

PolicyOutput predict(const PolicyParams& params, const LabeledCloud& world_cloud,
                     const std::optional<Pose>& current_obj_pose) {
  const PolicyConfig& c = params.cfg;
  if (c.condition_on_current_pose && !current_obj_pose)
    throw std::invalid_argument("predict: config conditions on the current pose but none given");
  if (c.head_type == HeadType::denoising)
    return sample_denoising(params, world_cloud, current_obj_pose, c.seed);

  size_t n = 0;
  const std::vector<double> x = preprocess_points(world_cloud, c, &n);
  ForwardCache fc;
  encoder_forward(params, x.data(), n, fc);
  const std::vector<double> cond =
      c.condition_on_current_pose ? encode_pose_vec(*current_obj_pose, c, true)
                                  : std::vector<double>{};
  trunk_forward(params, cond, fc);
  heads_forward(params, fc);
  return decode_output(c, fc.obj_out, fc.head_out, fc.term_logit);
}

PolicyOutput sample_denoising(const PolicyParams& params, const LabeledCloud& world_cloud,
                              const std::optional<Pose>& current_obj_pose, uint64_t seed) {
  const PolicyConfig& c = params.cfg;
  if (c.head_type != HeadType::denoising)
    throw std::invalid_argument("sample_denoising: head type is not denoising");
  if (c.condition_on_current_pose && !current_obj_pose)
    throw std::invalid_argument("sample_denoising: missing current pose condition");

  size_t n = 0;
  const std::vector<double> x = preprocess_points(world_cloud, c, &n);
  ForwardCache fc;
  encoder_forward(params, x.data(), n, fc);
  const std::vector<double> cond =
      c.condition_on_current_pose ? encode_pose_vec(*current_obj_pose, c, true)
                                  : std::vector<double>{};
  trunk_forward(params, cond, fc);
  heads_forward(params, fc);  // terminal head

  Rng rng_obj(Rng::derive_seed(seed, 0xde01));
  Rng rng_head(Rng::derive_seed(seed, 0xde02));
  const std::vector<double> obj_out =
      sample_head(params, kObjDnW1, kObjDnB1, kObjDnW2, kObjDnB2, fc.trunk_out, rng_obj);
  const std::vector<double> head_out =
      sample_head(params, kHeadDnW1, kHeadDnB1, kHeadDnW2, kHeadDnB2, fc.trunk_out, rng_head);
  return decode_output(c, obj_out, head_out, fc.term_logit);
}

EncodedSample encode_sample(const TrainingSample& s, const LabeledCloud& world_cloud,
                            const PolicyConfig& cfg) {
  if (static_cast<int>(s.obj_abs.size()) != cfg.horizon ||
      static_cast<int>(s.head_rel.size()) != cfg.horizon)
    throw std::invalid_argument("encode_sample: horizon mismatch");
  EncodedSample e;
  e.points = preprocess_points(world_cloud, cfg, &e.n);
  if (cfg.condition_on_current_pose) e.cond = encode_pose_vec(s.current_obj_pose, cfg, true);
  e.terminal = s.terminal;

  const bool abs_obj = cfg.object_rep == ObjectRep::absolute;
  for (int k = 0; k < cfg.horizon; ++k) {
    const Pose obj_k =
        abs_obj ? s.obj_abs[k] : relative(s.current_obj_pose, s.obj_abs[k]);
    const auto v = encode_pose_vec(obj_k, cfg, abs_obj);
    e.target_vec_obj.insert(e.target_vec_obj.end(), v.begin(), v.end());
    e.tgt_obj_trans.insert(e.tgt_obj_trans.end(), {obj_k.t.x, obj_k.t.y, obj_k.t.z});
    double r[9];
    quat_to_matrix(obj_k.q, r);
    e.tgt_obj_rot.insert(e.tgt_obj_rot.end(), r, r + 9);

    const Pose head_k = s.head_rel[k];
    const auto vh = encode_pose_vec(head_k, cfg, false);
    e.target_vec_head.insert(e.target_vec_head.end(), vh.begin(), vh.end());
    e.tgt_head_trans.insert(e.tgt_head_trans.end(), {head_k.t.x, head_k.t.y, head_k.t.z});
    double rh[9];
    quat_to_matrix(head_k.q, rh);
    e.tgt_head_rot.insert(e.tgt_head_rot.end(), rh, rh + 9);
  }
  return e;
}

LossResult loss_and_grad(const PolicyParams& params,
                         const std::vector<const EncodedSample*>& batch, uint64_t noise_seed,
                         PolicyGrads* grads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const PolicyConfig& c = params.cfg;
  const int d = c.out_dim();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  if (grads)
    for (int id = 0; id < kNumBlocks; ++id)
      (*grads)[id].assign(params.blocks[id].size(), 0.0);

  LossResult res;
  ForwardCache fc;
  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const EncodedSample& s = *batch[bi];
    encoder_forward(params, s.points.data(), s.n, fc);
    trunk_forward(params, s.cond, fc);
    heads_forward(params, fc);

    std::vector<double> dtrunk(c.trunk, 0.0);
    double sample_loss = 0;

    if (c.head_type == HeadType::regression) {
      std::vector<double> dobj(d, 0.0), dhead(d, 0.0);
      const double lo = pose_trajectory_loss(c, fc.obj_out, s.tgt_obj_trans, s.tgt_obj_rot,
                                           c.object_rep == ObjectRep::absolute,
                                           grads ? &dobj : nullptr);
      const double lh = pose_trajectory_loss(c, fc.head_out, s.tgt_head_trans, s.tgt_head_rot,
                                           false, grads ? &dhead : nullptr);
      res.obj_term += inv_b * lo;
      res.head_term += inv_b * lh;
      sample_loss += lo + lh;
      if (grads) {
        for (int j = 0; j < d; ++j) {
          (*grads)[kObjB][j] += inv_b * dobj[j];
          (*grads)[kHeadB][j] += inv_b * dhead[j];
          const double* woj = params.blocks[kObjW].data() + static_cast<size_t>(j) * c.trunk;
          const double* whj = params.blocks[kHeadW].data() + static_cast<size_t>(j) * c.trunk;
          double* gwo = (*grads)[kObjW].data() + static_cast<size_t>(j) * c.trunk;
          double* gwh = (*grads)[kHeadW].data() + static_cast<size_t>(j) * c.trunk;
          for (int i = 0; i < c.trunk; ++i) {
            gwo[i] += inv_b * dobj[j] * fc.trunk_out[i];
            gwh[i] += inv_b * dhead[j] * fc.trunk_out[i];
            dtrunk[i] += inv_b * (woj[i] * dobj[j] + whj[i] * dhead[j]);
          }
        }
      }
    } else {
      // conditional denoiser MSE at a deterministic (k, eps) draw per item
      const DenoiseSchedule sched(c.denoise_steps);
      Rng rng(Rng::derive_seed(noise_seed, 0xd1f0 + bi));
      const int k = 1 + static_cast<int>(rng.uniform_index(c.denoise_steps));
      const double sab = std::sqrt(sched.abar[k]);
      const double snb = std::sqrt(1.0 - sched.abar[k]);
      for (const auto& head : {std::array<BlockId, 4>{kObjDnW1, kObjDnB1, kObjDnW2, kObjDnB2},
                               std::array<BlockId, 4>{kHeadDnW1, kHeadDnB1, kHeadDnW2, kHeadDnB2}}) {
        const bool is_obj = head[0] == kObjDnW1;
        const std::vector<double>& x0 = is_obj ? s.target_vec_obj : s.target_vec_head;
        std::vector<double> xk(d);
        for (int i = 0; i < d; ++i) xk[i] = sab * x0[i] + snb * rng.normal();
        DenoiseCache dc;
        denoise_forward(params, head[0], head[1], head[2], head[3], fc.trunk_out, xk.data(),
                        static_cast<double>(k) / c.denoise_steps, snb, dc);
        double mse = 0;
        std::vector<double> dout(d);
        for (int i = 0; i < d; ++i) {
          const double diff = dc.out[i] - x0[i];
          mse += diff * diff / d;
          dout[i] = inv_b * 2.0 * diff / d;
        }
        (is_obj ? res.obj_term : res.head_term) += inv_b * mse;
        sample_loss += mse;
        if (grads) {
          std::vector<double> dtr(c.trunk, 0.0);
          denoise_backward(params, head[0], head[1], head[2], head[3], dc, dout, *grads, dtr);
          for (int i = 0; i < c.trunk; ++i) dtrunk[i] += dtr[i];
        }
      }
    }

    // terminal BCE
    const double z = fc.term_logit;
    const double bce = softplus(z) - s.terminal * z;
    res.bce_term += inv_b * bce;
    sample_loss += bce;
    if (grads) {
      const double dz = inv_b * (sigmoid(z) - s.terminal);
      (*grads)[kTermB][0] += dz;
      for (int i = 0; i < c.trunk; ++i) {
        (*grads)[kTermW][i] += dz * fc.trunk_out[i];
        dtrunk[i] += params.blocks[kTermW][i] * dz;
      }
      backbone_backward(params, fc, dtrunk, *grads);
    }
    res.total += inv_b * sample_loss;
  }
  return res;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},   {"batch", c.batch},         {"lr", c.lr},
                     {"lr_min", c.lr_min}, {"clip_norm", c.clip_norm}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
}

PolicyParams train(const std::vector<EncodedSample>& dataset, const PolicyConfig& cfg,
                   const TrainConfig& tc, TrainHistory* history) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  PolicyParams params = init_params(cfg);
  PolicyGrads grads;
  PolicyGrads m, v;
  for (int id = 0; id < kNumBlocks; ++id) {
    m[id].assign(params.blocks[id].size(), 0.0);
    v[id].assign(params.blocks[id].size(), 0.0);
  }
  Rng rng(Rng::derive_seed(tc.seed, 0x7ea1));
  const int epoch_steps = std::max<int>(1, static_cast<int>(dataset.size()) / tc.batch);
  double epoch_accum = 0;
  int epoch_count = 0;
  double last_loss = 0;

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<const EncodedSample*> batch;
    const int bsz = std::min<int>(tc.batch, static_cast<int>(dataset.size()));
    for (int i = 0; i < bsz; ++i)
      batch.push_back(&dataset[rng.uniform_index(dataset.size())]);

    const LossResult lr = loss_and_grad(params, batch, Rng::derive_seed(tc.seed, step), &grads);
    if (!std::isfinite(lr.total))
      throw std::runtime_error("train: diverged (non-finite loss) at step " +
                               std::to_string(step));
    last_loss = lr.total;
    epoch_accum += lr.total;

    // global gradient-norm clip
    double gn2 = 0;
    for (int id = 0; id < kNumBlocks; ++id)
      for (double g : grads[id]) gn2 += g * g;
    const double gn = std::sqrt(gn2);
    const double scale = (tc.clip_norm > 0 && gn > tc.clip_norm) ? tc.clip_norm / gn : 1.0;

    const double t_frac = tc.steps > 1 ? static_cast<double>(step) / (tc.steps - 1) : 0.0;
    const double lr_t = tc.lr_min + 0.5 * (tc.lr - tc.lr_min) * (1.0 + std::cos(M_PI * t_frac));
    b1t *= b1;
    b2t *= b2;
    for (int id = 0; id < kNumBlocks; ++id) {
      auto& w = params.blocks[id];
      for (size_t i = 0; i < w.size(); ++i) {
        const double g = grads[id][i] * scale;
        m[id][i] = b1 * m[id][i] + (1.0 - b1) * g;
        v[id][i] = b2 * v[id][i] + (1.0 - b2) * g * g;
        const double mh = m[id][i] / (1.0 - b1t);
        const double vh = v[id][i] / (1.0 - b2t);
        w[i] -= lr_t * mh / (std::sqrt(vh) + eps);
      }
    }

    if ((step + 1) % epoch_steps == 0 && history) {
      history->epoch_loss.push_back(epoch_accum / epoch_steps);
      epoch_accum = 0;
      ++epoch_count;
    }
  }
  if (history) history->final_loss = last_loss;
  return params;
}

namespace {
constexpr char kCkptMagic[9] = "AGPOLICY";
constexpr uint32_t kCkptVersion = 1;
static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");
}  // namespace

void save_params(const PolicyParams& params, const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  nlohmann::json header{{"cfg", params.cfg}, {"blocks", nlohmann::json::array()}};
  for (int id = 0; id < kNumBlocks; ++id)
    header["blocks"].push_back(
        {{"name", block_name(static_cast<BlockId>(id))}, {"size", params.blocks[id].size()}});
  const std::string hs = header.dump();
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  f.write(kCkptMagic, 8);
  f.write(reinterpret_cast<const char*>(&kCkptVersion), 4);
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), hlen);
  for (int id = 0; id < kNumBlocks; ++id) {
    std::vector<float> fp(params.blocks[id].begin(), params.blocks[id].end());
    f.write(reinterpret_cast<const char*>(fp.data()),
            static_cast<std::streamsize>(fp.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

PolicyParams load_params(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  char magic[8];
  uint32_t version = 0, hlen = 0;
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("not a policy checkpoint: " + p.string());
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  f.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw std::runtime_error("truncated checkpoint header: " + p.string());
  const nlohmann::json header = nlohmann::json::parse(hs);

  PolicyParams params;
  header.at("cfg").get_to(params.cfg);
  const auto& blocks = header.at("blocks");
  for (int id = 0; id < kNumBlocks; ++id) {
    const size_t size = blocks.at(id).at("size").get<size_t>();
    if (size != block_expected_size(params.cfg, static_cast<BlockId>(id)))
      throw std::runtime_error("checkpoint block size mismatch: " +
                               std::string(block_name(static_cast<BlockId>(id))));
    std::vector<float> fp(size);
    f.read(reinterpret_cast<char*>(fp.data()), static_cast<std::streamsize>(size * sizeof(float)));
    if (!f) throw std::runtime_error("truncated checkpoint data: " + p.string());
    params.blocks[id].assign(fp.begin(), fp.end());
  }
  return params;
}

}  // namespace ag
