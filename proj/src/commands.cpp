#include "milseg/commands.hpp"

#include "milseg/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace milseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Checkpoint load_matching_checkpoint(const RunConfig& cfg, const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.spec.class_count != cfg.class_count) {
    throw ConfigError("checkpoint " + path.string() + " has " + std::to_string(ck.spec.class_count) +
                      " classes but the config says class_count = " + std::to_string(cfg.class_count));
  }
  return ck;
}

}  // namespace

// ---- training -----------------------------------------------------------------

LabeledImage prepare_training_image(const LabeledImage& raw, const RunConfig& cfg, std::uint64_t example) {
  RngStream rng(cfg.seed, "jitter", example);
  LabeledImage out = apply_jitter(raw, cfg.jitter, rng);
  out.image = normalize_image(training_crop(out.image, cfg.crop_size));
  return out;
}

TrainedModel train_model(const RunConfig& cfg, const std::vector<LabeledImage>& data,
                         const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  TrainedModel model{cfg.network_spec(), {}, {}};
  model.params = build_network(model.spec);
  for (const auto& s : data) {
    if (s.label < 0 || s.label >= cfg.class_count) {
      throw ConfigError("training label " + std::to_string(s.label) + " outside [0, class_count)");
    }
  }

  TrainerState state{cfg.optimizer, 0, cfg.seed, cfg.threads};
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  std::vector<LabeledImage> batch(batch_size);
  for (Index step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> picked(batch_size);
    for (auto& p : picked) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngStream shuffle(cfg.seed, "shuffle", epoch++);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
        cursor = 0;
      }
      p = order[cursor++];
    }
    const auto seen = static_cast<std::uint64_t>(state.examples_seen);
    parallel_for(batch_size, cfg.threads,
                 [&](std::size_t i) { batch[i] = prepare_training_image(data[picked[i]], cfg, seen + i); });

    auto r = train_step(batch, model.params, model.spec, cfg.aggregator, state);
    bool finite = std::isfinite(r.mean_loss);
    for (const auto& l : r.params) finite = finite && l.weights.all_finite() && l.bias.all_finite();
    if (!finite) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + " (mean loss " +
                                 format_real(r.mean_loss) + "); lower learning_rate",
                             model.params);
    }
    model.params = std::move(r.params);
    LossRecord rec{step, state.examples_seen, r.learning_rate, r.mean_loss};
    model.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return model;
}

int classify_image(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec,
                   const AggregatorKind& aggregator, Index crop_size) {
  const Tensord x = normalize_image(training_crop(image, crop_size));
  const auto scores = aggregate_forward(forward(x, params, spec, Mode::Eval), aggregator);
  Index best = 0;
  for (Index k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return static_cast<int>(best);
}

// ---- evaluation ---------------------------------------------------------------

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::string s = "step,examples_seen,lr,mean_loss\n";
  for (const auto& r : log) {
    s += std::to_string(r.step) + ',' + std::to_string(r.examples_seen) + ',' + format_real(r.learning_rate) + ',' +
         format_real(r.mean_loss) + '\n';
  }
  return s;
}

json thresholds_to_json(const ThresholdSet& t) {
  json j = json::object();
  for (std::size_t k = 0; k < t.delta.size(); ++k) j[std::to_string(k)] = t.delta[k];
  return j;
}

ThresholdSet thresholds_from_json(const json& j, Index class_count) {
  const json& obj = j.contains("thresholds") ? j.at("thresholds") : j;
  if (!obj.is_object()) throw ConfigError("thresholds must be a JSON object keyed by class index");
  ThresholdSet t = ThresholdSet::uniform(class_count, 0.0);
  for (const auto& [key, value] : obj.items()) {
    Index k = -1;
    const auto r = std::from_chars(key.data(), key.data() + key.size(), k);
    if (r.ec != std::errc() || r.ptr != key.data() + key.size() || k < 0 || k >= class_count) {
      throw ConfigError("threshold key '" + key + "' is not a class index below " + std::to_string(class_count));
    }
    if (!value.is_number()) throw ConfigError("threshold for class " + key + " is not a number");
    t.delta[static_cast<std::size_t>(k)] = value.get<double>();
  }
  for (Index k = 1; k < class_count; ++k) {
    if (!obj.contains(std::to_string(k))) throw ConfigError("thresholds lack class " + std::to_string(k));
  }
  t.validate();
  return t;
}

ThresholdSet load_thresholds(const fs::path& path, Index class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read thresholds " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return thresholds_from_json(j, class_count);
}

json metrics_report(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count,
                    const std::optional<ThresholdSet>& thresholds) {
  const ClassConfusion counts = confusion(preds, gts, class_count);
  const AccuracyReport acc = per_class_accuracy(preds, gts, class_count);
  json j;
  j["per_class_accuracy"] = json::object();
  j["ap"] = json::object();
  for (Index k = 0; k < class_count; ++k) {
    const auto key = std::to_string(k);
    const auto& a = acc.per_class[static_cast<std::size_t>(k)];
    j["per_class_accuracy"][key] = a ? json(*a) : json(nullptr);
    const auto ap = voc_ap(counts, k);
    j["ap"][key] = ap ? json(*ap) : json(nullptr);
  }
  j["mean_per_class_accuracy"] = acc.mean;
  j["mAP"] = mean_ap(counts);
  j["thresholds"] = thresholds ? thresholds_to_json(*thresholds) : json::object();
  return j;
}

// ---- commands -------------------------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto samples = generate_dataset(cfg.class_count, cfg.per_class, cfg.image_size, cfg.seed);
  write_dataset(out, samples, cfg.seed, cfg.class_count);
}

TrainedModel cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream* progress) {
  cfg.validate();
  if (!fs::is_directory(cfg.dataset)) throw IoError("training dataset not found: " + cfg.dataset);
  const auto data = load_training_set(cfg.dataset);
  ensure_dir(out);
  write_text(out / "config.txt", to_text(cfg));

  const Index report_every = std::max<Index>(1, cfg.steps / 20);
  auto on_step = [&](const LossRecord& r) {
    if (progress && (r.step % report_every == 0 || r.step + 1 == cfg.steps)) {
      *progress << "step " << r.step << "  seen " << r.examples_seen << "  lr " << r.learning_rate << "  loss "
                << r.mean_loss << '\n';
    }
  };
  try {
    TrainedModel model = train_model(cfg, data, on_step);
    save_checkpoint(out / "checkpoint.bin", model.spec, model.params);
    write_text(out / "loss_log.csv", loss_log_csv(model.log));
    return model;
  } catch (const TrainingDiverged& e) {
    save_checkpoint(out / "checkpoint.bin", cfg.network_spec(), e.last_good());
    throw;
  }
}

std::vector<fs::path> collect_images(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      const auto dir = fs::is_directory(p / "images") ? p / "images" : p;
      const auto found = files_with_extension(dir, ".ppm");
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw IoError("no such image or directory: " + p.string());
    }
  }
  if (out.empty()) throw IoError("no input images found");
  return out;
}

void cmd_infer(const RunConfig& cfg, const InferRequest& request) {
  cfg.validate();
  const Checkpoint ck = load_matching_checkpoint(cfg, request.checkpoint);
  InferenceOptions options = cfg.inference_options();
  if (request.thresholds) options.thresholds = load_thresholds(*request.thresholds, cfg.class_count);

  const bool wants_proposals = needs_proposals(options.prior);
  if (wants_proposals && !request.proposals && !request.proposals_dir && !request.naive_proposals) {
    throw ConfigError("prior " + to_string(options.prior) +
                      " needs proposals: pass --proposals, --proposals-dir or --naive-proposals");
  }
  std::optional<ProposalSet> shared;
  if (wants_proposals && request.proposals) shared = load_proposals(*request.proposals);

  const auto images = collect_images(request.images);
  ensure_dir(request.out);
  parallel_for(images.size(), cfg.threads, [&](std::size_t i) {
    const auto& path = images[i];
    const auto stem = path.stem().string();
    const Tensord image = read_ppm(path);
    std::optional<ProposalSet> proposals;
    if (wants_proposals) {
      if (shared) {
        proposals = shared;
      } else if (request.proposals_dir) {
        proposals = load_proposals(*request.proposals_dir / (stem + ".txt"));
      } else {
        proposals = naive_proposals(image, *request.naive_proposals);
      }
    }
    const auto result = infer(image, ck.params, ck.spec, options, proposals ? &*proposals : nullptr);
    write_pgm(request.out / (stem + ".pgm"), result.mask);
    if (request.dump_probs) write_prob_maps(request.out / (stem + ".probs"), result.probs);
  });
}

json cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir,
              const std::optional<fs::path>& thresholds, const fs::path& report_path) {
  cfg.validate();
  const auto gt_masks = fs::is_directory(gt_dir / "masks") ? gt_dir / "masks" : gt_dir;
  std::map<std::string, fs::path> preds, gts;
  for (const auto& p : files_with_extension(pred_dir, ".pgm")) preds[p.stem().string()] = p;
  for (const auto& p : files_with_extension(gt_masks, ".pgm")) gts[p.stem().string()] = p;

  std::string missing_pred, missing_gt;
  for (const auto& [stem, _] : gts) {
    if (!preds.count(stem)) missing_pred += (missing_pred.empty() ? "" : ", ") + stem;
  }
  for (const auto& [stem, _] : preds) {
    if (!gts.count(stem)) missing_gt += (missing_gt.empty() ? "" : ", ") + stem;
  }
  if (!missing_pred.empty() || !missing_gt.empty()) {
    std::string msg = "unpaired masks:";
    if (!missing_pred.empty()) msg += " no prediction for [" + missing_pred + "]";
    if (!missing_gt.empty()) msg += " no ground truth for [" + missing_gt + "]";
    throw ConfigError(msg);
  }
  if (gts.empty()) throw IoError("no masks found in " + gt_masks.string());

  std::vector<LabelMask> p, g;
  for (const auto& [stem, path] : gts) {
    g.push_back(read_pgm(path));
    p.push_back(read_pgm(preds.at(stem)));
  }
  std::optional<ThresholdSet> t;
  if (thresholds) t = load_thresholds(*thresholds, cfg.class_count);
  json report = metrics_report(p, g, cfg.class_count, t);
  if (!report_path.empty()) {
    if (report_path.has_parent_path()) ensure_dir(report_path.parent_path());
    write_text(report_path, report.dump(2) + '\n');
  }
  return report;
}

ThresholdSet cmd_gridsearch(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& val_dir,
                            const std::optional<fs::path>& proposals_dir, const fs::path& out_path) {
  cfg.validate();
  const Checkpoint ck = load_matching_checkpoint(cfg, checkpoint);
  const auto samples = load_evaluation_set(val_dir);
  if (samples.empty()) throw IoError("validation set " + val_dir.string() + " is empty");
  InferenceOptions options = cfg.inference_options();
  options.prior = PriorSelection::Ilp;

  std::vector<ThresholdSearchItem> items(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto proposals = proposals_dir ? load_proposals(*proposals_dir / (sample_stem(i) + ".txt"))
                                         : naive_proposals(s.image, cfg.naive_proposals);
    auto result = infer(s.image, ck.params, ck.spec, options);
    items[i] = {std::move(result.weighted), objectness_map(proposals, s.image.dim(1), s.image.dim(2)), s.gt_mask};
  });
  const ThresholdSet t = grid_search_thresholds(items, cfg.threshold_grid, cfg.class_count);
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    write_text(out_path, json{{"thresholds", thresholds_to_json(t)}}.dump(2) + '\n');
  }
  return t;
}

}  // namespace milseg
