#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

namespace pan::cli {

namespace fs = std::filesystem;

struct GenOptions {
  fs::path spec;  // optional; defaults when empty
  fs::path out;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  fs::path corpus;
  fs::path out;
  fs::path config;  // optional PanConfig JSON
  fs::path init;    // stage-1 checkpoint, required for --stage 2
  std::string stage = "both";
  std::optional<int> epochs;
  std::optional<int> decay_epoch;
  std::optional<double> lr;
  std::optional<double> lr_theta;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct EmbedOptions {
  fs::path ckpt;
  fs::path corpus;
  std::string split;
  fs::path out;
  std::size_t threads = 1;
};

struct RankOptions {
  fs::path query;
  fs::path gallery;
  fs::path out;
  double alpha = 0.5;
  bool rerank = false;
  std::size_t k = 20;
  double lambda = 1.0;
  bool all_cameras = false;
  std::size_t threads = 1;
  std::size_t list_length = 50;
};

struct EvalOptions {
  fs::path ranks;
  fs::path out;
  std::string alpha_sweep;  // "lo:hi:step", empty for none
  std::string use = "auto";
  std::size_t threads = 1;
};

struct VisualizeOptions {
  fs::path ckpt;
  fs::path images;
  fs::path out;
  std::size_t limit = 0;
};

void cmd_gen(const GenOptions& o);
void cmd_train(const TrainOptions& o);
void cmd_embed(const EmbedOptions& o);
void cmd_rank(const RankOptions& o);
void cmd_eval(const EvalOptions& o);
void cmd_visualize(const VisualizeOptions& o);

// Writes run_config.json (settings plus tool version) into dir.
void write_run_config(const fs::path& dir, const std::string& command,
                      const nlohmann::json& settings);

}  // namespace pan::cli
