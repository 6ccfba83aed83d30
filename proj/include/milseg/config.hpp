#ifndef MILSEG_CONFIG_HPP
#define MILSEG_CONFIG_HPP

#include "milseg/aggregation.hpp"
#include "milseg/densepriors.hpp"
#include "milseg/optimizer.hpp"
#include "milseg/segnet.hpp"
#include "milseg/synthgen.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace milseg {

/// Every knob of a run. Text form is `key = value` per line with `#`
/// comments; unknown keys are errors.
struct RunConfig {
  // data
  std::string dataset = "data/train";
  std::string val_dataset = "data/val";
  Index class_count = 4;  // labels including background
  Index per_class = 100;
  Index image_size = 64;
  Index crop_size = 48;

  // network
  std::vector<Index> stem_channels = {16, 32, 32};
  std::vector<Index> head_channels = {64, 64, 32};
  Index pools = 1;
  Index frozen_layers = 0;  // leading conv layers excluded from updates
  double dropout_rate = 0.2;

  // training
  AggregatorKind aggregator = AggregatorKind::lse(5.0);
  OptimizerConfig optimizer{0.01, 0.9, 0.00005, 0.5, 32000};
  JitterSpec jitter;
  Index batch_size = 16;
  Index steps = 6000;

  // inference
  PriorSelection prior = PriorSelection::IlpSppxl;
  double felzenszwalb_k = 500.0;
  Index felzenszwalb_min_size = 50;
  std::vector<double> threshold_grid = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45,
                                        0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  Index naive_proposals = 200;
  bool upsample = false;

  // run
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "run";

  void validate() const;
  NetworkSpec network_spec() const;
  InferenceOptions inference_options() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Sets one key from its text value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace milseg

#endif  // MILSEG_CONFIG_HPP
