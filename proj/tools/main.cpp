// Command-line surface: generate / process / train / rollout / benchmark /
// export-scene / validate. Config precedence: flags > config file > defaults.
// Exit codes: 0 success, 1 task failure, 2 usage or I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "activeglasses/executor.hpp"
#include "activeglasses/pipeline.hpp"
#include "activeglasses/policy.hpp"

using namespace ag;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct TaskFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Settings {
  PolicyConfig policy;
  TrainConfig train;
  RolloutConfig rollout;
  GenerateConfig generate;
  int benchmark_n = 20;
  std::string task = "slot";
  std::string arm = "arm-A";

  json to_json() const {
    json j;
    j["policy"] = policy;
    j["train"] = train;
    j["rollout"] = rollout;
    j["generate"] = {{"n", generate.n},
                     {"frame_hz", generate.rates.frame_hz},
                     {"pose_hz", generate.rates.pose_hz},
                     {"pose_time_jitter", generate.rates.pose_time_jitter},
                     {"randomize", generate.randomize}};
    j["benchmark"] = {{"n", benchmark_n}};
    j["task"] = task;
    j["arm"] = arm;
    return j;
  }

  void overlay(const json& j) {
    if (j.contains("policy")) j.at("policy").get_to(policy);
    if (j.contains("train")) j.at("train").get_to(train);
    if (j.contains("rollout")) j.at("rollout").get_to(rollout);
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      if (g.contains("n")) generate.n = g.at("n").get<int>();
      if (g.contains("frame_hz")) generate.rates.frame_hz = g.at("frame_hz").get<double>();
      if (g.contains("pose_hz")) generate.rates.pose_hz = g.at("pose_hz").get<double>();
      if (g.contains("pose_time_jitter"))
        generate.rates.pose_time_jitter = g.at("pose_time_jitter").get<double>();
      if (g.contains("randomize")) generate.randomize = g.at("randomize").get<bool>();
    }
    if (j.contains("benchmark") && j.at("benchmark").contains("n"))
      benchmark_n = j.at("benchmark").at("n").get<int>();
    if (j.contains("task")) task = j.at("task").get<std::string>();
    if (j.contains("arm")) arm = j.at("arm").get<std::string>();
  }
};

uint64_t require_seed(const std::optional<uint64_t>& flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("ACTIVEGLASSES_SEED")) return std::strtoull(env, nullptr, 10);
  throw CLI::ValidationError("--seed is required (or set ACTIVEGLASSES_SEED)");
}

SceneSpec load_scene(const std::string& task, const std::string& scene_file) {
  if (!scene_file.empty()) {
    std::ifstream f(scene_file);
    if (!f) throw std::runtime_error("cannot open scene file: " + scene_file);
    json j;
    f >> j;
    SceneSpec s = j.get<SceneSpec>();
    s.validate();
    return s;
  }
  return make_task_scene(task);
}

void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        uint64_t seed, const Settings& s) {
  std::filesystem::create_directories(dir);
  json j{{"tool", "activeglasses"},
         {"version", kVersion},
         {"command", command},
         {"seed", seed},
         {"config", s.to_json()}};
  std::ofstream f(dir / "run_manifest.json");
  f << j.dump(2) << "\n";
}

PolicyFactory make_policy_factory(const std::string& policy_name, const std::string& model_path,
                                  const Settings& s, const SceneSpec& nominal) {
  if (!model_path.empty()) {
    auto params = std::make_shared<PolicyParams>(load_params(model_path));
    return [params](const SceneSpec&) { return std::make_unique<LearnedPolicy>(*params); };
  }
  if (policy_name == "oracle") {
    const int h = s.policy.horizon;
    const int exec = s.rollout.executed_steps;
    return [h, exec](const SceneSpec& scene) {
      return std::make_unique<ScriptedOraclePolicy>(scene, make_demo_script(scene), h, exec);
    };
  }
  if (policy_name == "frozen") {
    const int h = s.policy.horizon;
    const int exec = s.rollout.executed_steps;
    const SceneSpec base = nominal;
    return [base, h, exec](const SceneSpec&) {
      return std::make_unique<FrozenPolicy>(base, make_demo_script(base), h, exec);
    };
  }
  throw CLI::ValidationError("--policy must be oracle or frozen, or pass --model");
}

int cmd_generate(const Settings& s, uint64_t seed, const std::string& scene_file,
                 const std::string& out) {
  const SceneSpec base = load_scene(s.task, scene_file);
  GenerateConfig gc = s.generate;
  gc.seed = seed;
  const auto dirs =
      generate_episodes(base, default_randomization(base), gc, s.rollout.intr, out);
  for (const auto& d : dirs) {
    const Episode ep = load_episode(d);
    const auto report = validate(ep);
    std::cout << d.filename().string() << ": " << ep.frames.size() << " frames, "
              << (report.all_pass() ? "valid" : "INVALID") << "\n";
    if (!report.all_pass()) {
      std::cerr << report.summary();
      throw TaskFailure("generated episode failed validation: " + d.string());
    }
  }
  write_run_manifest(out, "generate", seed, s);
  std::cout << "generated " << dirs.size() << " episodes -> " << out << "\n";
  return 0;
}

int cmd_process(const Settings& s, const std::string& in, const std::string& out) {
  const ProcessReport rep = process_episodes(in, out, s.policy);
  std::cout << "episodes " << rep.episodes << ", samples " << rep.samples << ", gap-filled "
            << rep.gap_filled_frames << ", dropped " << rep.dropped_frames << "\n";
  for (const auto& f : rep.failed_episodes) std::cerr << "failed: " << f << "\n";
  write_run_manifest(out, "process", 0, s);
  if (rep.episodes == 0) throw TaskFailure("no episode processed successfully");
  return rep.failed_episodes.empty() ? 0 : 1;
}

int cmd_train(Settings s, uint64_t seed, const std::string& samples, const std::string& out) {
  s.train.seed = seed;
  s.policy.seed = seed;
  const auto dataset = load_dataset(samples, s.policy);
  std::cout << "dataset: " << dataset.size() << " samples\n";
  TrainHistory hist;
  const PolicyParams params = train(dataset, s.policy, s.train, &hist);
  save_params(params, out);
  std::cout << "final loss " << hist.final_loss << " after " << s.train.steps << " steps ("
            << hist.epoch_loss.size() << " epochs) -> " << out << "\n";
  const auto manifest_dir = std::filesystem::path(out).parent_path();
  write_run_manifest(manifest_dir.empty() ? "." : manifest_dir, "train", seed, s);
  return 0;
}

int cmd_rollout(Settings s, uint64_t seed, const std::string& scene_file,
                const std::string& policy_name, const std::string& model, bool randomize,
                const std::string& out) {
  const SceneSpec base = load_scene(s.task, scene_file);
  const SceneSpec scene =
      randomize ? randomize_scene(base, default_randomization(base), seed) : base;
  s.rollout.seed = seed;
  const PolicyFactory factory = make_policy_factory(policy_name, model, s, base);
  const auto policy = factory(scene);
  const ArmRig rig = default_arm_rig(s.arm);
  const RolloutResult r = run_rollout(scene, *policy, s.rollout, rig);
  std::cout << "reason " << termination_reason_name(r.reason) << ", stages " << r.stage1
            << r.stage2 << r.stage3;
  if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
  std::cout << "\n";
  if (!out.empty()) {
    save_rollout(r, out);
    write_run_manifest(out, "rollout", seed, s);
  }
  if (r.reason == TerminationReason::ik_failure ||
      r.reason == TerminationReason::calibration_failure)
    throw TaskFailure("rollout failed: " + r.detail);
  return 0;
}

int cmd_benchmark(Settings s, uint64_t seed, const std::string& scene_file,
                  const std::string& policy_name, const std::string& model,
                  const std::string& out) {
  const SceneSpec base = load_scene(s.task, scene_file);
  s.rollout.seed = seed;
  const PolicyFactory factory = make_policy_factory(policy_name, model, s, base);
  const BenchmarkResult res =
      benchmark(base, default_randomization(base), factory, s.benchmark_n, s.rollout, s.arm);
  std::cout << "task: " << s.task << "\narm: " << s.arm << "\n" << res.table();
  if (!out.empty()) {
    std::filesystem::create_directories(std::filesystem::path(out).parent_path().empty()
                                            ? "."
                                            : std::filesystem::path(out).parent_path());
    std::ofstream f(out);
    f << "task: " << s.task << "\narm: " << s.arm << "\n" << res.table();
  }
  return 0;
}

int cmd_export_scene(const Settings& s, const std::string& scene_file, const std::string& out,
                     double spacing) {
  const SceneSpec scene = load_scene(s.task, scene_file);
  const LabeledCloud cloud = sample_scene_surface(scene, spacing);
  write_ply(out, cloud);
  // self-test: the exported file must read back with the same vertex count
  const LabeledCloud back = read_ply(out);
  if (back.size() != cloud.size()) throw std::runtime_error("ply self-test failed: " + out);
  std::cout << "exported " << cloud.size() << " points -> " << out << "\n";
  return 0;
}

int cmd_validate(const std::string& in) {
  const Episode ep = load_episode(in);
  const ValidationReport rep = validate(ep);
  std::cout << rep.summary();
  if (!rep.all_pass()) throw TaskFailure("validation failed: " + in);
  std::cout << "ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egocentric-demonstration manipulation stack"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough(true);  // global --seed/--config may follow the subcommand

  Settings settings;
  std::string config_file;
  std::optional<uint64_t> seed_flag;
  app.add_option("--config", config_file, "JSON config file (flags override it)");
  app.add_option("--seed", seed_flag, "RNG seed (or env ACTIVEGLASSES_SEED)");

  std::string scene_file, in_path, out_path, model_path, policy_name, samples_path;
  bool randomize = false;
  double spacing = 0.01;

  // flag overrides applied after the config file
  std::optional<std::string> task_flag, arm_flag, object_rep_flag, head_type_flag;
  std::optional<int> n_flag, steps_flag, horizon_flag, max_steps_flag, executed_flag;
  std::optional<double> lr_flag, voxel_flag, threshold_flag;
  std::optional<bool> condition_flag, freeze_flag;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--task", task_flag, "task kind: slot | pour");
    cmd->add_option("--scene", scene_file, "scene JSON file (overrides --task)");
  };

  auto* gen = app.add_subcommand("generate", "synthesize demonstration episodes");
  add_common(gen);
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--n", n_flag, "number of episodes");

  auto* proc = app.add_subcommand("process", "episodes -> world-frame training samples");
  proc->add_option("--in", in_path, "directory of episode directories")->required();
  proc->add_option("--out", out_path, "output directory")->required();
  proc->add_option("--voxel", voxel_flag, "downsample voxel size, meters");
  proc->add_option("--horizon", horizon_flag, "action horizon T_h");

  auto* tr = app.add_subcommand("train", "train the policy on processed samples");
  tr->add_option("--samples", samples_path, "samples.jsonl from process")->required();
  tr->add_option("--out", out_path, "checkpoint path")->required();
  tr->add_option("--steps", steps_flag, "gradient steps");
  tr->add_option("--lr", lr_flag, "learning rate");
  tr->add_option("--horizon", horizon_flag, "action horizon T_h");
  tr->add_option("--object-rep", object_rep_flag, "absolute | relative");
  tr->add_option("--head-type", head_type_flag, "regression | denoising");
  tr->add_option("--condition-on-pose", condition_flag,
                 "condition the heads on the current object pose");

  auto* roll = app.add_subcommand("rollout", "run one closed-loop rollout");
  add_common(roll);
  roll->add_option("--model", model_path, "policy checkpoint");
  roll->add_option("--policy", policy_name, "built-in policy: oracle | frozen");
  roll->add_option("--out", out_path, "rollout log directory");
  roll->add_option("--arm", arm_flag, "manipulation arm: arm-A | arm-B");
  roll->add_flag("--randomize", randomize, "randomize the scene first");
  roll->add_option("--max-steps", max_steps_flag, "decision-step budget");
  roll->add_option("--executed-steps", executed_flag, "chunk prefix executed per step");
  roll->add_option("--threshold", threshold_flag, "termination threshold");
  roll->add_flag("--freeze-perception", freeze_flag, "fixed-camera ablation");

  auto* bench = app.add_subcommand("benchmark", "randomized rollout benchmark");
  add_common(bench);
  bench->add_option("--model", model_path, "policy checkpoint");
  bench->add_option("--policy", policy_name, "built-in policy: oracle | frozen");
  bench->add_option("--n", n_flag, "rollouts");
  bench->add_option("--arm", arm_flag, "manipulation arm: arm-A | arm-B");
  bench->add_option("--out", out_path, "table file");
  bench->add_flag("--freeze-perception", freeze_flag, "fixed-camera ablation");

  auto* exp = app.add_subcommand("export-scene", "sample the scene surface to PLY");
  add_common(exp);
  exp->add_option("--out", out_path, "output PLY")->required();
  exp->add_option("--spacing", spacing, "surface sample spacing, meters");

  auto* val = app.add_subcommand("validate", "validate an episode directory");
  val->add_option("--in", in_path, "episode directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      if (!f) throw std::runtime_error("cannot open config file: " + config_file);
      json j;
      f >> j;
      settings.overlay(j);
    }
    if (task_flag) settings.task = *task_flag;
    if (arm_flag) settings.arm = *arm_flag;
    if (n_flag) {
      settings.generate.n = *n_flag;
      settings.benchmark_n = *n_flag;
    }
    if (steps_flag) settings.train.steps = *steps_flag;
    if (lr_flag) settings.train.lr = *lr_flag;
    if (horizon_flag) settings.policy.horizon = *horizon_flag;
    if (voxel_flag) settings.policy.voxel = *voxel_flag;
    if (object_rep_flag)
      settings.policy.object_rep =
          *object_rep_flag == "relative" ? ObjectRep::relative : ObjectRep::absolute;
    if (head_type_flag)
      settings.policy.head_type =
          *head_type_flag == "denoising" ? HeadType::denoising : HeadType::regression;
    if (condition_flag) settings.policy.condition_on_current_pose = *condition_flag;
    if (max_steps_flag) settings.rollout.max_steps = *max_steps_flag;
    if (executed_flag) settings.rollout.executed_steps = *executed_flag;
    if (threshold_flag) settings.rollout.termination_threshold = *threshold_flag;
    if (freeze_flag) settings.rollout.freeze_perception = *freeze_flag;
    settings.policy.validate();

    std::cerr << "effective config: " << settings.to_json().dump() << "\n";

    if (gen->parsed())
      return cmd_generate(settings, require_seed(seed_flag), scene_file, out_path);
    if (proc->parsed()) return cmd_process(settings, in_path, out_path);
    if (tr->parsed())
      return cmd_train(settings, require_seed(seed_flag), samples_path, out_path);
    if (roll->parsed())
      return cmd_rollout(settings, require_seed(seed_flag), scene_file, policy_name, model_path,
                         randomize, out_path);
    if (bench->parsed())
      return cmd_benchmark(settings, require_seed(seed_flag), scene_file, policy_name,
                           model_path, out_path);
    if (exp->parsed()) return cmd_export_scene(settings, scene_file, out_path, spacing);
    if (val->parsed()) return cmd_validate(in_path);
    return 2;
  } catch (const TaskFailure& e) {
    std::cerr << "task failure: " << e.what() << "\n";
    return 1;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
