#ifndef MILSEG_COMMANDS_HPP
#define MILSEG_COMMANDS_HPP

#include "milseg/checkpoint.hpp"
#include "milseg/config.hpp"
#include "milseg/densepriors.hpp"
#include "milseg/evalmetrics.hpp"
#include "milseg/synthgen.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace milseg {

// ---- training -----------------------------------------------------------------

struct LossRecord {
  Index step = 0;
  std::int64_t examples_seen = 0;
  double learning_rate = 0.0;
  double mean_loss = 0.0;
};

struct TrainedModel {
  NetworkSpec spec;
  NetworkParams params;
  std::vector<LossRecord> log;
};

/// Raised when training produces a non-finite loss; carries the last
/// parameters that were still finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, NetworkParams last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const NetworkParams& last_good() const { return last_good_; }

 private:
  NetworkParams last_good_;
};

/// Jitter, crop and normalize one training image; the jitter stream is keyed
/// by the global example counter.
LabeledImage prepare_training_image(const LabeledImage& raw, const RunConfig& cfg, std::uint64_t example);

/// Runs `cfg.steps` SGD steps over `data`, visiting it in per-epoch shuffled
/// order. Fully determined by the config and the data.
TrainedModel train_model(const RunConfig& cfg, const std::vector<LabeledImage>& data,
                         const std::function<void(const LossRecord&)>& on_step = {});

/// Label with the highest aggregated score on the centre crop.
int classify_image(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec,
                   const AggregatorKind& aggregator, Index crop_size);

// ---- evaluation ---------------------------------------------------------------

std::string format_real(double v);
std::string loss_log_csv(const std::vector<LossRecord>& log);

nlohmann::json thresholds_to_json(const ThresholdSet& t);
ThresholdSet thresholds_from_json(const nlohmann::json& j, Index class_count);
ThresholdSet load_thresholds(const std::filesystem::path& path, Index class_count);

nlohmann::json metrics_report(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count,
                              const std::optional<ThresholdSet>& thresholds);

// ---- command entry points -------------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out);
TrainedModel cmd_train(const RunConfig& cfg, const std::filesystem::path& out, std::ostream* progress = nullptr);

struct InferRequest {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> images;
  std::filesystem::path out;
  std::optional<std::filesystem::path> thresholds;
  std::optional<std::filesystem::path> proposals;      // one file for every image
  std::optional<std::filesystem::path> proposals_dir;  // <stem>.txt per image
  std::optional<Index> naive_proposals;
  bool dump_probs = false;
};

/// Writes one <stem>.pgm (and optionally <stem>.probs) per input image.
void cmd_infer(const RunConfig& cfg, const InferRequest& request);
/// Expands a dataset directory or a list of .ppm files to image paths.
std::vector<std::filesystem::path> collect_images(const std::vector<std::filesystem::path>& inputs);

nlohmann::json cmd_eval(const RunConfig& cfg, const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        const std::optional<std::filesystem::path>& thresholds,
                        const std::filesystem::path& report_path);

ThresholdSet cmd_gridsearch(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                            const std::filesystem::path& val_dir,
                            const std::optional<std::filesystem::path>& proposals_dir,
                            const std::filesystem::path& out_path);

// ---- gradient checks ------------------------------------------------------------

struct GradcheckSuite {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  Index instances = 0;
  Index checked = 0;
  Index skipped = 0;
  bool passed() const { return max_relative_error < tolerance && checked > 0; }
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  Index instances = 100;
  /// Scales every analytic gradient by 1.1 to prove the oracle notices.
  bool inject_fault = false;
};

std::vector<GradcheckSuite> run_gradcheck(const GradcheckOptions& options);

}  // namespace milseg

#endif  // MILSEG_COMMANDS_HPP
