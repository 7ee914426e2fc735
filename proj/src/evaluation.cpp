#include "clustercam/evaluation.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "clustercam/imaging.hpp"

namespace clustercam {

double confidence_drop(double original, double masked) {
  if (!std::isfinite(original) || !std::isfinite(masked)) {
    throw Error(ErrorCode::kNonFiniteValue, "scores must be finite");
  }
  if (original <= 0.0) throw Error(ErrorCode::kZeroOriginalScore, "original score is zero; drop is undefined");
  return 100.0 * (original - masked) / original;
}

ImageTensor explanation_input(const ImageTensor& image, const Heatmap& heatmap) {
  if (heatmap.height() == image.height() && heatmap.width() == image.width()) {
    return apply_mask(image, heatmap.data());
  }
  return apply_mask(image, resize_bilinear(heatmap.data(), image.height(), image.width()));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace

std::vector<CorpusEntry> read_corpus_manifest(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + csv_path);
  const std::filesystem::path dir = std::filesystem::path(csv_path).parent_path();
  std::vector<CorpusEntry> out;
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto comma = text.rfind(',');
    std::string path = trim(comma == std::string::npos ? text : text.substr(0, comma));
    const std::string cls = comma == std::string::npos ? std::string() : trim(text.substr(comma + 1));
    const bool was_first = first;
    first = false;
    CorpusEntry entry;
    if (!cls.empty()) {
      const auto v = parse_int(cls);
      if (!v) {
        if (was_first) continue;  // header row
        throw Error(ErrorCode::kParseError,
                    csv_path + ":" + std::to_string(line_no) + ": class index '" + cls + "' is not an integer");
      }
      if (*v < 0) {
        throw Error(ErrorCode::kParseError, csv_path + ":" + std::to_string(line_no) + ": negative class index");
      }
      entry.target_class = *v;
    }
    if (path.empty()) throw Error(ErrorCode::kParseError, csv_path + ":" + std::to_string(line_no) + ": empty path");
    const std::filesystem::path p(path);
    entry.path = p.is_absolute() || dir.empty() ? path : (dir / p).string();
    out.push_back(std::move(entry));
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyInput, "manifest " + csv_path + " lists no images");
  return out;
}

ImageTensor default_image_loader(const std::string& path, const InputSpec& spec) {
  PreprocessConfig config;
  config.target_h = spec.height;
  config.target_w = spec.width;
  return load_and_preprocess(path, config);
}

namespace {

struct Outcome {
  std::optional<ImageMetrics> metrics;
  std::optional<ImageFailure> failure;
};

Outcome evaluate_one(ModelRunner& runner, const CorpusEntry& entry, const CamSettings& settings,
                     const ImageLoader& loader) {
  try {
    const ImageTensor image = loader(entry.path, runner.input_spec());
    const ScoreVector original = runner.infer_scores(image);
    const int c = entry.target_class.value_or(original.top1());
    if (c >= original.class_count()) {
      throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(c) + " outside [0, " +
                                                   std::to_string(original.class_count()) + ")");
    }
    const CamResult cam = run_cam(runner, image, c, settings);
    const double masked = runner.infer_scores(explanation_input(image, cam.heatmap)).at(c);
    ImageMetrics m;
    m.path = entry.path;
    m.target_class = c;
    m.score_original = original.at(c);
    m.score_masked = masked;
    m.confidence_drop_pct = confidence_drop(m.score_original, masked);
    m.increased = m.confidence_drop_pct < 0.0;
    m.fp_masked = cam.diagnostics.fp_masked;
    m.fp_total = cam.diagnostics.fp_total;
    m.wall_ms = cam.diagnostics.wall_ms;
    return {m, std::nullopt};
  } catch (const Error& e) {
    return {std::nullopt, ImageFailure{entry.path, std::string(to_string(e.code())) + ": " + e.what()}};
  } catch (const std::exception& e) {
    return {std::nullopt, ImageFailure{entry.path, e.what()}};
  }
}

}  // namespace

MetricsReport evaluate_corpus(const RunnerFactory& factory, const std::vector<CorpusEntry>& corpus,
                              const EvaluationOptions& options, const ImageLoader& loader) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyInput, "empty corpus");
  if (options.jobs < 1) throw Error(ErrorCode::kInvalidArgument, "jobs must be >= 1");
  if (options.cam.method == CamMethod::kCluster) options.cam.cluster.validate();

  const int workers = std::min<int>(options.jobs, static_cast<int>(corpus.size()));
  std::vector<ModelRunner> runners;
  runners.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) runners.push_back(factory());

  std::vector<Outcome> outcomes(corpus.size());
  std::atomic<std::size_t> next{0};
  auto work = [&](ModelRunner& runner) {
    for (std::size_t i = next++; i < corpus.size(); i = next++) {
      outcomes[i] = evaluate_one(runner, corpus[i], options.cam, loader);
    }
  };
  if (workers == 1) {
    work(runners.front());
  } else {
    std::vector<std::thread> threads;
    for (auto& r : runners) threads.emplace_back(work, std::ref(r));
    for (auto& t : threads) t.join();
  }

  MetricsReport report;
  report.method = to_string(options.cam.method);
  report.model = options.model_label;
  report.layer = runners.front().layer_name();
  report.config = cam_settings_json(options.cam);
  double drop = 0.0, wall = 0.0, fp = 0.0;
  int increased = 0;
  for (auto& o : outcomes) {
    if (o.metrics) {
      drop += o.metrics->confidence_drop_pct;
      wall += o.metrics->wall_ms;
      fp += static_cast<double>(o.metrics->fp_masked);
      increased += o.metrics->increased ? 1 : 0;
      report.per_image.push_back(std::move(*o.metrics));
    } else {
      report.failures.push_back(std::move(*o.failure));
    }
  }
  report.n_images = static_cast<int>(report.per_image.size());
  const double n = report.n_images;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.avg_confidence_drop_pct = n > 0 ? drop / n : nan;
  report.increase_number_pct = n > 0 ? 100.0 * increased / n : nan;
  report.avg_wall_ms = n > 0 ? wall / n : nan;
  report.avg_fp = n > 0 ? fp / n : nan;
  return report;
}

nlohmann::ordered_json cam_settings_json(const CamSettings& settings) {
  nlohmann::ordered_json j;
  j["method"] = to_string(settings.method);
  if (settings.method == CamMethod::kCluster) {
    const ClusterCamConfig& c = settings.cluster;
    j["q"] = c.q;
    if (c.method == ClusterMethod::kSpectral) {
      j["k"] = c.cluster_config().effective_k();
    } else {
      j["k"] = nullptr;
    }
    j["beta"] = c.beta;
    j["cluster_method"] = to_string(c.method);
    j["theta"] = c.theta;
    j["sigma"] = c.sigma;
    j["seed"] = c.seed;
    j["mask_normalization"] = to_string(c.mask_normalization);
  } else if (settings.method == CamMethod::kScore) {
    j["baseline"] = to_string(settings.baseline);
  }
  return j;
}

nlohmann::ordered_json report_json(const MetricsReport& report, bool include_timing) {
  nlohmann::ordered_json j;
  j["avg_confidence_drop_pct"] = report.avg_confidence_drop_pct;
  j["increase_number_pct"] = report.increase_number_pct;
  j["avg_wall_ms"] = include_timing || report.n_images == 0 ? report.avg_wall_ms : 0.0;
  j["avg_fp"] = report.avg_fp;
  j["n_images"] = report.n_images;
  j["method"] = report.method;
  j["model"] = report.model;
  j["layer"] = report.layer;
  j["config"] = report.config;
  auto& per = j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& m : report.per_image) {
    nlohmann::ordered_json e;
    e["path"] = m.path;
    e["class"] = m.target_class;
    e["score_original"] = m.score_original;
    e["score_masked"] = m.score_masked;
    e["confidence_drop_pct"] = m.confidence_drop_pct;
    e["increased"] = m.increased;
    e["fp_masked"] = m.fp_masked;
    e["fp_total"] = m.fp_total;
    e["wall_ms"] = include_timing ? m.wall_ms : 0.0;
    per.push_back(std::move(e));
  }
  auto& fails = j["failures"] = nlohmann::ordered_json::array();
  for (const auto& f : report.failures) fails.push_back({{"path", f.path}, {"reason", f.reason}});
  return j;
}

}  // namespace clustercam
