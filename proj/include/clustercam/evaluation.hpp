#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clustercam/cam.hpp"
#include "clustercam/core_types.hpp"
#include "clustercam/model_runner.hpp"

namespace clustercam {

/// Percentage drop of the target-class score, 100·(o − m)/o. Negative when
/// the masked input scores higher. Throws kZeroOriginalScore when o ≤ 0.
double confidence_drop(double original, double masked);

/// X ∘ H: the input restricted to what the heatmap highlights. The heatmap
/// is resized to the image if needed.
ImageTensor explanation_input(const ImageTensor& image, const Heatmap& heatmap);

struct CorpusEntry {
  std::string path;
  /// Unset means "explain the model's top-1 class".
  std::optional<int> target_class;
};

/// Parses a `path,class_index` CSV. A first line whose class field is not an
/// integer is treated as a header. Relative paths resolve against the
/// manifest's directory.
std::vector<CorpusEntry> read_corpus_manifest(const std::string& csv_path);

struct ImageMetrics {
  std::string path;
  int target_class = 0;
  double score_original = 0.0;
  double score_masked = 0.0;
  double confidence_drop_pct = 0.0;
  bool increased = false;
  std::uint64_t fp_masked = 0;
  std::uint64_t fp_total = 0;
  double wall_ms = 0.0;
};

struct ImageFailure {
  std::string path;
  std::string reason;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  std::vector<ImageFailure> failures;
  int n_images = 0;
  /// Mean over successful images; NaN when none succeeded.
  double avg_confidence_drop_pct = 0.0;
  double increase_number_pct = 0.0;
  double avg_wall_ms = 0.0;
  double avg_fp = 0.0;
  std::string method;
  std::string model;
  std::string layer;
  nlohmann::ordered_json config;
};

using RunnerFactory = std::function<ModelRunner()>;
using ImageLoader = std::function<ImageTensor(const std::string& path, const InputSpec& spec)>;

/// Decodes and preprocesses with the runner's input size and ImageNet
/// statistics.
ImageTensor default_image_loader(const std::string& path, const InputSpec& spec);

struct EvaluationOptions {
  CamSettings cam;
  /// Worker threads; each builds its own runner from the factory.
  int jobs = 1;
  std::string model_label;
};

/// Images that fail to load or explain are recorded in failures and left
/// out of the aggregates. per_image keeps corpus order regardless of jobs.
MetricsReport evaluate_corpus(const RunnerFactory& factory, const std::vector<CorpusEntry>& corpus,
                              const EvaluationOptions& options, const ImageLoader& loader = default_image_loader);

nlohmann::ordered_json cam_settings_json(const CamSettings& settings);
nlohmann::ordered_json report_json(const MetricsReport& report, bool include_timing = true);

}  // namespace clustercam
