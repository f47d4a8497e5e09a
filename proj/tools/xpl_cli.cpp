// xpl command-line tool: generate, train, evaluate, ablate.
//
// Exit codes: 0 success, 2 usage error (bad flags or config), 1 runtime error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xpl/ablation.hpp"
#include "xpl/checkpoint.hpp"
#include "xpl/reporting.hpp"
#include "xpl/text_io.hpp"
#include "xpl/trainer.hpp"

namespace fs = std::filesystem;
using namespace xpl;

namespace {

constexpr const char* kToolVersion = "xpl 1.0.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Seed for every random draw of this command")->required();
  cmd->add_option("--config", o.config_file, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "key=value override, applied after --config (repeatable)");
}

std::set<std::string> known_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : GenConfig{}.to_kv()) keys.insert(k);
  for (const auto& [k, v] : TrainConfig{}.to_kv()) keys.insert(k);
  return keys;
}

// Config file first, then --set overrides. Keys must belong to the dataset
// or the training config; seed always comes from --seed.
std::map<std::string, std::string> collect_kv(const CommonOptions& o) {
  std::map<std::string, std::string> kv;
  if (!o.config_file.empty()) kv = parse_kv(read_file(o.config_file));
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[std::string(trim(s.substr(0, eq)))] = std::string(trim(s.substr(eq + 1)));
  }
  const auto keys = known_keys();
  for (const auto& [k, v] : kv) {
    if (!keys.count(k)) throw UsageError("unknown config key '" + k + "'");
  }
  kv.erase("seed");
  return kv;
}

template <class Config>
Config build_config(const CommonOptions& o) {
  Config c;
  try {
    c.apply_kv(collect_kv(o));
    c.seed = o.seed;
    c.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return c;
}

nlohmann::ordered_json kv_json(const std::map<std::string, std::string>& kv) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& path, const std::string& command, int argc, char** argv,
                    nlohmann::ordered_json config, nlohmann::ordered_json artifacts, double seconds) {
  nlohmann::ordered_json m;
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  std::vector<std::string> args(argv, argv + argc);
  m["argv"] = args;
  m["config"] = std::move(config);
  m["artifacts"] = std::move(artifacts);
  m["finished_at"] = now_utc();
  m["wall_clock_seconds"] = seconds;
  write_file_atomic(path, m.dump(2) + "\n");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return Dataset::read(in);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross pseudo-labeling for semi-supervised audio-visual source localization"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, abl_o;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  add_common(gen, gen_o);
  std::string gen_out;
  gen->add_option("--out", gen_out, "Dataset file")->required();

  auto* train = app.add_subcommand("train", "Train models A and B");
  add_common(train, train_o);
  std::string train_data, train_dir, train_mode;
  train->add_option("--data", train_data, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", train_dir, "Output directory")->required();
  train->add_option("--mode", train_mode, "xpl | sup_only | vanilla_hard_pl (overrides config)");
  bool quiet = false;
  train->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* eval = app.add_subcommand("evaluate", "Evaluate checkpoints on the test and open-set splits");
  add_common(eval, eval_o);
  std::string eval_data, ckpt_a, ckpt_b, eval_out;
  eval->add_option("--data", eval_data, "Dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint-a", ckpt_a, "Model A checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint-b", ckpt_b, "Model B checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Report CSV")->required();

  auto* abl = app.add_subcommand("ablate", "Component ablations and beta sweep over several seeds");
  add_common(abl, abl_o);
  std::string abl_data, abl_out;
  std::size_t n_seeds = 5;
  abl->add_option("--data", abl_data, "Dataset file")->required()->check(CLI::ExistingFile);
  abl->add_option("--out", abl_out, "Combined CSV")->required();
  abl->add_option("--n-seeds", n_seeds, "Training seeds seed, seed+1, ...")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (*gen) {
      const auto cfg = build_config<GenConfig>(gen_o);
      const auto data = generate_dataset(cfg);
      write_file_atomic(gen_out, data.serialize());
      write_manifest(gen_out + ".manifest.json", "generate", argc, argv, {{"dataset", kv_json(cfg.to_kv())}},
                     {{"dataset", gen_out}}, elapsed(t0));
      std::printf("wrote %s (%zu samples)\n", gen_out.c_str(), data.samples.size());
    } else if (*train) {
      auto cfg = build_config<TrainConfig>(train_o);
      if (!train_mode.empty()) {
        try {
          cfg.mode = parse_mode(train_mode);
          cfg.validate();
        } catch (const std::exception& e) {
          throw UsageError(e.what());
        }
      }
      const auto data = load_dataset(train_data);
      Trainer trainer(data, cfg);
      while (trainer.next_epoch() < cfg.total_epochs) {
        const auto& r = trainer.run_epoch();
        if (!quiet) {
          std::printf("epoch %zu%s ciou_A %.1f ciou_B %.1f loss %.4f selected %zu\n", r.epoch,
                      r.warmup ? " (warmup)" : "", r.ciou_a, r.ciou_b, r.loss.total, r.n_selected);
          std::fflush(stdout);
        }
      }
      const auto& h = trainer.history();
      const fs::path dir(train_dir);
      const auto csv = dir / "metrics.csv", svg = dir / "ciou.svg";
      const auto ca = dir / "model_A.ckpt", cb = dir / "model_B.ckpt";
      write_file_atomic(csv, history_csv(h));
      save_checkpoint(ca, trainer.model(ModelTag::A));
      save_checkpoint(cb, trainer.model(ModelTag::B));
      std::vector<Series> series(3);
      const std::string mode(mode_name(cfg.mode));
      series[0].name = mode + " A";
      series[1].name = mode + " B";
      series[2].name = mode + " A+B";
      for (const auto& r : h.records) {
        series[0].values.push_back(r.ciou_a);
        series[1].values.push_back(r.ciou_b);
        series[2].values.push_back(r.ciou_avg);
      }
      write_file_atomic(svg, svg_line_chart("test CIoU per epoch (" + mode + ")", series));
      write_manifest(dir / "manifest.json", "train", argc, argv,
                     {{"dataset", kv_json(data.config.to_kv())}, {"train", kv_json(cfg.to_kv())}},
                     {{"dataset", train_data},
                      {"metrics_csv", csv.string()},
                      {"checkpoint_a", ca.string()},
                      {"checkpoint_b", cb.string()},
                      {"ciou_svg", svg.string()}},
                     elapsed(t0));
      std::printf("final ciou_A %.1f auc_A %.1f; wrote %s\n", h.records.back().ciou_a, h.records.back().auc_a,
                  dir.string().c_str());
    } else if (*eval) {
      const auto data = load_dataset(eval_data);
      const auto a = load_checkpoint(ckpt_a);
      const auto b = load_checkpoint(ckpt_b);
      for (const auto* m : {&a, &b}) {
        if (m->spec.visual_dim != data.config.visual_dim || m->spec.audio_dim != data.config.audio_dim) {
          throw std::runtime_error(std::string("checkpoint of model ") + tag_char(m->tag) +
                                   " does not match the dataset feature dimensions");
        }
      }
      std::vector<EvalRow> rows;
      for (auto split : {Split::Test, Split::OpensetTest}) {
        if (!data.has_split(split)) continue;
        const auto r = evaluate_split(a.params, b.params, data, split);
        const std::string name(split_name(split));
        rows.push_back({name, "A", r.a});
        rows.push_back({name, "B", r.b});
        rows.push_back({name, "avg", r.avg});
      }
      write_file_atomic(eval_out, eval_csv(rows));
      write_manifest(eval_out + ".manifest.json", "evaluate", argc, argv,
                     {{"dataset", kv_json(data.config.to_kv())}, {"seed", eval_o.seed}},
                     {{"dataset", eval_data}, {"checkpoint_a", ckpt_a}, {"checkpoint_b", ckpt_b}, {"report_csv", eval_out}},
                     elapsed(t0));
      std::cout << eval_csv(rows);
    } else if (*abl) {
      const auto cfg = build_config<TrainConfig>(abl_o);
      const auto data = load_dataset(abl_data);
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(abl_o.seed + i);
      const auto rows = run_ablation(data, cfg, seeds, [](const AblationRow& r) {
        std::fprintf(stderr, "%s seed %llu: ciou_A %.1f\n", r.config.c_str(),
                     static_cast<unsigned long long>(r.seed), r.ciou_a);
      });
      write_file_atomic(abl_out, ablation_csv(rows));
      nlohmann::ordered_json seeds_json = seeds;
      write_manifest(abl_out + ".manifest.json", "ablate", argc, argv,
                     {{"dataset", kv_json(data.config.to_kv())}, {"train", kv_json(cfg.to_kv())}, {"seeds", seeds_json}},
                     {{"dataset", abl_data}, {"ablation_csv", abl_out}}, elapsed(t0));
      for (const auto& s : summarize(rows)) {
        std::printf("%-18s median ciou_A %.1f auc_A %.1f\n", s.config.c_str(), s.ciou_a, s.auc_a);
      }
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
