// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// the number of failures.
//
//   milseg_acceptance [work_dir]

#include "milseg/commands.hpp"
#include "milseg/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace milseg;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " " << id << " " << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

template <class Fn>
void criterion(int id, const std::string& name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensord random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---- 1 ------------------------------------------------------------------------

void gradient_oracle() {
  const double t0 = cpu_seconds();
  GradcheckOptions o;
  o.instances = 100;
  const auto suites = run_gradcheck(o);
  const double secs = cpu_seconds() - t0;
  bool ok = secs < 120.0;
  double worst = 0.0;
  std::string failed;
  for (const auto& s : suites) {
    worst = std::max(worst, s.max_relative_error);
    if (!s.passed() || s.instances < 100) {
      ok = false;
      failed += " " + s.name;
    }
  }
  report(1, "gradient oracle", ok,
         std::to_string(suites.size()) + " suites x 100 instances, max rel err " + fmt(worst, 3) + ", " + fmt(secs, 3) +
             " CPU s (limit 120)" + (failed.empty() ? "" : ", failed:" + failed));
}

// ---- 2 ------------------------------------------------------------------------

void aggregation_invariants() {
  RngStream rng(2024, "acceptance-planes");
  const std::vector<double> rs{0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
  int bad_bounds = 0, bad_monotone = 0, bad_shift = 0, bad_weights = 0;
  for (int n = 0; n < 1000; ++n) {
    const Index h = 1 + static_cast<Index>(rng.below(12)), w = 1 + static_cast<Index>(rng.below(12));
    RowMatrix<double> plane(h, w);
    for (Index i = 0; i < plane.size(); ++i) plane.data()[i] = rng.uniform(-10.0, 10.0);
    double mean = 0.0, mx = -INFINITY;
    for (Index i = 0; i < plane.size(); ++i) {
      mean += plane.data()[i];
      mx = std::max(mx, plane.data()[i]);
    }
    mean /= static_cast<double>(plane.size());
    double prev = -INFINITY;
    for (double r : rs) {
      const double s = aggregate_plane(plane, AggregatorKind::lse(r));
      bad_bounds += !(s >= mean - 1e-9 && s <= mx + 1e-9);
      bad_monotone += !(s >= prev - 1e-9);
      prev = s;
    }
    const double c = rng.uniform(-20.0, 20.0);
    RowMatrix<double> shifted = plane;
    for (Index i = 0; i < shifted.size(); ++i) shifted.data()[i] += c;
    const double r = rs[static_cast<std::size_t>(rng.below(rs.size()))];
    bad_shift += std::abs(aggregate_plane(shifted, AggregatorKind::lse(r)) - aggregate_plane(plane, AggregatorKind::lse(r)) - c) > 1e-9;
    const auto g = aggregate_plane_backward(plane, AggregatorKind::lse(r), 1.0);
    double sum = 0.0;
    for (Index i = 0; i < g.size(); ++i) sum += g.data()[i];
    bad_weights += std::abs(sum - 1.0) > 1e-9;
  }
  report(2, "aggregation invariants", bad_bounds + bad_monotone + bad_shift + bad_weights == 0,
         "1000 planes; violations: bounds " + std::to_string(bad_bounds) + ", monotone " + std::to_string(bad_monotone) +
             ", shift " + std::to_string(bad_shift) + ", weights " + std::to_string(bad_weights));
}

// ---- 3 ------------------------------------------------------------------------

void shift_and_stitch() {
  RngStream rng(77, "acceptance-dense");
  double worst = 0.0;
  int pairs = 0;
  std::string ds;
  for (Index pools : {0, 1, 2}) {
    for (int n = 0; n < 10; ++n) {
      std::vector<Index> stem(static_cast<std::size_t>(std::max<Index>(pools, 1)), 3);
      NetworkSpec spec = NetworkSpec::standard(3, stem, {3, 2}, pools);
      spec.seed = rng.next();
      auto params = build_network(spec);
      for (auto& l : params) l.bias = random_tensor(l.bias.shape(), rng, -0.2, 0.2);
      const Tensord img = random_tensor({3, 5 + static_cast<Index>(rng.below(10)), 5 + static_cast<Index>(rng.below(10))}, rng);
      const auto fast = dense_scores(img, params, spec);

      // naive oracle: one forward pass per pixel on its own receptive field
      const Index rf = spec.receptive_field(), before = (rf - 1) / 2;
      const Tensord padded = reflect_pad(img, before, rf, before, rf);
      for (Index i = 0; i < img.dim(1); ++i) {
        for (Index j = 0; j < img.dim(2); ++j) {
          Tensord patch({3, rf, rf});
          for (Index c = 0; c < 3; ++c) patch.plane(c) = padded.plane(c).block(i, j, rf, rf);
          const auto y = forward(patch, params, spec, Mode::Eval);
          for (Index k = 0; k < 3; ++k) worst = std::max(worst, std::abs(y[k] - fast(k, i, j)));
        }
      }
      ++pairs;
    }
    ds += " " + std::to_string(Index{1} << pools);
  }
  report(3, "shift-and-stitch equivalence", worst <= 1e-9,
         std::to_string(pairs) + " pairs over d in {" + ds + " }, max abs diff " + fmt(worst, 3));
}

// ---- 4, 5, 6 ------------------------------------------------------------------

struct RunResult {
  double cpu_seconds = 0.0;
  double classification_accuracy = 0.0;
  double foreground_iou = 0.0;   // base+ILP+SP-sppxl
  double mean_class_accuracy = 0.0;  // base+ILP+SP-sppxl
  std::map<PriorSelection, double> map;
};

RunConfig benchmark_config(const fs::path& work) {
  RunConfig cfg;
  cfg.class_count = 4;
  cfg.image_size = 64;
  cfg.dataset = (work / "train").string();
  cfg.val_dataset = (work / "val").string();
  return cfg;
}

void make_benchmark(const fs::path& work) {
  RunConfig cfg = benchmark_config(work);
  if (!fs::exists(work / "train" / "manifest.json")) {
    cfg.per_class = 500;
    cfg.seed = 101;
    cmd_gen_data(cfg, work / "train");
    // training must never see ground-truth masks
    fs::remove_all(work / "train" / "masks");
  }
  if (!fs::exists(work / "val" / "manifest.json")) {
    cfg.per_class = 50;
    cfg.seed = 202;
    cmd_gen_data(cfg, work / "val");
  }
}

RunResult run_benchmark(const fs::path& work, AggregatorVariant agg, std::uint64_t seed) {
  RunConfig cfg = benchmark_config(work);
  cfg.aggregator.variant = agg;
  cfg.seed = seed;
  const auto out = work / ("run_" + to_string(agg) + "_" + std::to_string(seed));
  RunResult r;
  const double t0 = cpu_seconds();
  const auto model = cmd_train(cfg, out);
  r.cpu_seconds = cpu_seconds() - t0;

  const auto val = load_evaluation_set(cfg.val_dataset);
  int correct = 0;
  for (const auto& s : val) correct += classify_image(s.image, model.params, model.spec, cfg.aggregator, cfg.crop_size) == s.label;
  r.classification_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());

  std::vector<LabelMask> gts;
  for (const auto& s : val) gts.push_back(s.gt_mask);
  for (auto prior : {PriorSelection::None, PriorSelection::Ilp, PriorSelection::IlpSppxl}) {
    auto options = cfg.inference_options();
    options.prior = prior;
    std::vector<LabelMask> preds;
    for (const auto& s : val) preds.push_back(infer(s.image, model.params, model.spec, options).mask);
    const auto counts = confusion(preds, gts, cfg.class_count);
    r.map[prior] = mean_ap(counts);
    if (prior == PriorSelection::IlpSppxl) {
      double fg = 0.0;
      for (Index k = 1; k < cfg.class_count; ++k) fg += voc_ap(counts, k).value_or(0.0);
      r.foreground_iou = fg / static_cast<double>(cfg.class_count - 1);
      r.mean_class_accuracy = per_class_accuracy(preds, gts, cfg.class_count).mean;
    }
  }
  std::cout << "  run " << to_string(agg) << " seed " << seed << ": " << fmt(r.cpu_seconds, 4) << " CPU s, cls acc "
            << fmt(r.classification_accuracy) << ", fg IoU " << fmt(r.foreground_iou) << ", mean class acc "
            << fmt(r.mean_class_accuracy) << ", mAP none/ilp/sppxl " << fmt(r.map[PriorSelection::None]) << "/"
            << fmt(r.map[PriorSelection::Ilp]) << "/" << fmt(r.map[PriorSelection::IlpSppxl]) << std::endl;
  return r;
}

void training_criteria(const fs::path& work) {
  make_benchmark(work);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::map<AggregatorVariant, std::vector<RunResult>> runs;
  for (auto agg : {AggregatorVariant::Lse, AggregatorVariant::Sum, AggregatorVariant::Max}) {
    for (auto seed : seeds) {
      try {
        runs[agg].push_back(run_benchmark(work, agg, seed));
      } catch (const TrainingDiverged& e) {
        std::cout << "  run " << to_string(agg) << " seed " << seed << " diverged: " << e.what() << std::endl;
        runs[agg].push_back(RunResult{});
      }
    }
  }

  const auto& first = runs[AggregatorVariant::Lse].front();
  report(4, "MIL emergence", first.cpu_seconds <= 1800.0 && first.classification_accuracy >= 0.95 && first.foreground_iou >= 0.5,
         "LSE r=5 seed 1: " + fmt(first.cpu_seconds, 4) + " CPU s (limit 1800), val classification accuracy " +
             fmt(first.classification_accuracy) + " (>= 0.95), base+ILP+SP-sppxl mean foreground IoU " +
             fmt(first.foreground_iou) + " (>= 0.5)");

  auto median_of = [&](AggregatorVariant agg, auto field) {
    std::vector<double> v;
    for (const auto& r : runs[agg]) v.push_back(field(r));
    return median3(v);
  };
  auto mca = [](const RunResult& r) { return r.mean_class_accuracy; };
  const double lse = median_of(AggregatorVariant::Lse, mca), sum = median_of(AggregatorVariant::Sum, mca),
               max = median_of(AggregatorVariant::Max, mca);
  report(5, "aggregator ordering", lse > sum && lse > max,
         "median mean per-class accuracy over 3 seeds: lse " + fmt(lse) + ", sum " + fmt(sum) + ", max " + fmt(max));

  auto prior_median = [&](PriorSelection p) {
    return median_of(AggregatorVariant::Lse, [p](const RunResult& r) { return r.map.count(p) ? r.map.at(p) : 0.0; });
  };
  const double base = prior_median(PriorSelection::None), ilp = prior_median(PriorSelection::Ilp),
               sppxl = prior_median(PriorSelection::IlpSppxl);
  report(6, "prior ablation ordering", base < ilp && ilp < sppxl,
         "LSE median mAP over 3 seeds: base " + fmt(base) + ", base+ILP " + fmt(ilp) + ", base+ILP+SP-sppxl " + fmt(sppxl));
}

// ---- 7 ------------------------------------------------------------------------

void felzenszwalb_invariants(const fs::path& work) {
  RngStream rng(5, "acceptance-felzenszwalb");
  int bad_cover = 0, bad_size = 0, bad_repeat = 0, cases = 0;
  for (int n = 0; n < 50; ++n) {
    const Index h = 4 + static_cast<Index>(rng.below(40)), w = 4 + static_cast<Index>(rng.below(40));
    Tensord img = random_tensor({3, h, w}, rng, 0.0, 255.0);
    const double k = rng.uniform(1.0, 800.0);
    const Index min_size = 1 + static_cast<Index>(rng.below(30));
    const auto p = felzenszwalb_segment(img, k, min_size);
    std::vector<Index> sizes(static_cast<std::size_t>(p.count), 0);
    bool cover = p.ids.rows() == h && p.ids.cols() == w;
    for (Index i = 0; cover && i < p.ids.size(); ++i) {
      const auto id = p.ids.data()[i];
      if (id < 0 || id >= p.count) {
        cover = false;
      } else {
        ++sizes[static_cast<std::size_t>(id)];
      }
    }
    bad_cover += !cover || std::count(sizes.begin(), sizes.end(), 0) > 0;
    for (Index s : sizes) bad_size += s < std::min<Index>(min_size, h * w);
    bad_repeat += !(felzenszwalb_segment(img, k, min_size).ids == p.ids);
    ++cases;
  }
  const auto constant = felzenszwalb_segment(Tensord({3, 30, 40}, 128.0), 200.0, 20);

  // thread count must not change superpixel-smoothed output
  RunConfig cfg = benchmark_config(work);
  cfg.class_count = 3;
  cfg.per_class = 3;
  cfg.seed = 9;
  cmd_gen_data(cfg, work / "felz_data");
  cfg.dataset = (work / "felz_data").string();
  cfg.steps = 2;
  cmd_train(cfg, work / "felz_run");
  cfg.prior = PriorSelection::IlpSppxl;
  std::string masks[2];
  for (int t : {1, 3}) {
    cfg.threads = t;
    const auto out = work / ("felz_out_" + std::to_string(t));
    InferRequest req;
    req.checkpoint = work / "felz_run" / "checkpoint.bin";
    req.images = {work / "felz_data"};
    req.out = out;
    cmd_infer(cfg, req);
    for (const auto& img : collect_images({work / "felz_data"})) masks[t == 3] += file_bytes(out / (img.stem().string() + ".pgm"));
  }
  const bool threads_ok = !masks[0].empty() && masks[0] == masks[1];
  report(7, "felzenszwalb invariants",
         bad_cover + bad_size + bad_repeat == 0 && constant.count == 1 && threads_ok,
         std::to_string(cases) + " random images; violations: cover " + std::to_string(bad_cover) + ", min_size " +
             std::to_string(bad_size) + ", repeat " + std::to_string(bad_repeat) + "; constant image -> " +
             std::to_string(constant.count) + " component(s); 1 vs 3 threads " + (threads_ok ? "identical" : "differ"));
}

// ---- 8 ------------------------------------------------------------------------

void reproducibility(const fs::path& work) {
  RunConfig cfg = benchmark_config(work);
  cfg.per_class = 8;
  cfg.seed = 31;
  cmd_gen_data(cfg, work / "repro_data");
  cfg.dataset = (work / "repro_data").string();
  cfg.steps = 25;
  cfg.batch_size = 8;
  cmd_train(cfg, work / "repro_a");
  cmd_train(cfg, work / "repro_b");
  const bool ck = file_bytes(work / "repro_a" / "checkpoint.bin") == file_bytes(work / "repro_b" / "checkpoint.bin");
  const bool log = file_bytes(work / "repro_a" / "loss_log.csv") == file_bytes(work / "repro_b" / "loss_log.csv");
  report(8, "reproducibility", ck && log && fs::file_size(work / "repro_a" / "checkpoint.bin") > 0,
         std::string("two 25-step train runs: checkpoints ") + (ck ? "bit-identical" : "differ") + ", loss logs " +
             (log ? "bit-identical" : "differ"));
}

// ---- 9 ------------------------------------------------------------------------

LabelMask toy(Index h, Index w, std::initializer_list<int> v) {
  LabelMask m(h, w);
  Index i = 0;
  for (int x : v) m.data()[i++] = x;
  return m;
}

void metric_correctness() {
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, std::optional<double> got, double want) {
    if (!got || *got != want) bad.push_back(what);
  };
  {
    const std::vector<LabelMask> g{toy(2, 2, {1, 1, 0, 0})}, p{toy(2, 2, {1, 0, 0, 0})};
    const auto a = per_class_accuracy(p, g, 2);
    expect("toy1 acc class 1", a.per_class[1], 0.5);
    expect("toy1 acc class 0", a.per_class[0], 1.0);
    expect("toy1 mean acc", a.mean, 0.75);
    expect("toy1 ap class 1", voc_ap(p, g, 1, 2), 0.5);
    expect("toy1 ap class 0", voc_ap(p, g, 0, 2), 2.0 / 3.0);
  }
  {
    ClassConfusion c(2);
    c.tp[1] = 5;
    c.fp[1] = 5;
    c.fn[1] = 0;
    expect("TP=5 FP=5 FN=0", voc_ap(c, 1), 0.5);
    c.fn[1] = 10;
    expect("TP=5 FP=5 FN=10", voc_ap(c, 1), 0.25);
  }
  {
    const std::vector<LabelMask> g{toy(1, 4, {1, 0, 2, 2})}, p{toy(1, 4, {1, 0, 2, 1})};
    expect("toy3 ap class 1", voc_ap(p, g, 1, 3), 0.5);
    expect("toy3 ap class 2", voc_ap(p, g, 2, 3), 0.5);
    expect("toy3 ap class 0", voc_ap(p, g, 0, 3), 1.0);
    expect("toy3 mAP", mean_ap(p, g, 3), 2.0 / 3.0);
    expect("toy3 acc class 2", per_class_accuracy(p, g, 3).per_class[2], 0.5);
  }
  {
    const std::vector<LabelMask> g{toy(1, 2, {0, 0}), toy(1, 2, {3, 3})}, p{toy(1, 2, {0, 3}), toy(1, 2, {3, 3})};
    expect("toy4 ap class 3", voc_ap(p, g, 3, 4), 2.0 / 3.0);
    expect("toy4 ap class 0", voc_ap(p, g, 0, 4), 0.5);
    expect("toy4 acc class 0", per_class_accuracy(p, g, 4).per_class[0], 0.5);
    if (voc_ap(p, g, 1, 4).has_value()) bad.push_back("toy4 absent class 1 should be n/a");
  }
  {
    const std::vector<LabelMask> g{toy(2, 2, {2, 2, 2, 2})}, p{toy(2, 2, {0, 0, 0, 0})};
    expect("toy5 ap class 2", voc_ap(p, g, 2, 3), 0.0);
    expect("toy5 acc class 2", per_class_accuracy(p, g, 3).per_class[2], 0.0);
    expect("toy5 mAP", mean_ap(p, g, 3), 0.0);
  }
  {
    // two classes with AP 0.4 and 0.6
    ClassConfusion c(2);
    c.tp = {2, 3};
    c.fp = {3, 1};
    c.fn = {0, 1};
    expect("mAP of 0.4 and 0.6", mean_ap(c), 0.5);
  }
  std::string detail = "6 toy cases, hand counts";
  for (const auto& b : bad) detail += "; mismatch " + b;
  report(9, "metric correctness", bad.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "milseg_acceptance";
  fs::create_directories(work);
  std::cout << "work directory " << work.string() << std::endl;

  criterion(1, "gradient oracle", gradient_oracle);
  criterion(2, "aggregation invariants", aggregation_invariants);
  criterion(3, "shift-and-stitch equivalence", shift_and_stitch);
  criterion(7, "felzenszwalb invariants", [&] { felzenszwalb_invariants(work); });
  criterion(8, "reproducibility", [&] { reproducibility(work); });
  criterion(9, "metric correctness", metric_correctness);
  try {
    training_criteria(work);
  } catch (const std::exception& e) {
    for (int id : {4, 5, 6}) report(id, "training benchmark", false, std::string("exception: ") + e.what());
  }
  std::cout << failures << " criteria failed" << std::endl;
  return failures;
}
