#include "clustercam/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>

#include "clustercam/cam.hpp"
#include "clustercam/evaluation.hpp"
#include "clustercam/imaging.hpp"
#include "clustercam/model_runner.hpp"

namespace clustercam::cli {

namespace {

/// Raised for bad user input detected by the CLI itself.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string model;
  std::string layer;
  std::string image;
  std::string manifest;
  std::string out;
  std::string diag;
  std::string report;
  std::string out_dir;
  std::string method = "cluster";
  std::string cls = "auto";
  int q = 6;
  int k = 0;
  double beta = 0.5;
  std::string cluster_method = "kmeans";
  double theta = 0.1;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  std::string metric = "euclidean";
  std::string adjacency = "similarity";
  bool unnormalized_laplacian = false;
  std::string mask_normalization = "minmax";
  std::string baseline = "zero_image";
  std::string softmax = "auto";
  double alpha = 0.5;
  int jobs = 1;
  bool no_timing = false;
  std::string param;
  std::vector<std::string> values;
};

/// Resolved settings shared by every subcommand.
struct Resolved {
  CamSettings cam;
  std::optional<int> target_class;
  RunnerOptions runner;
};

void add_model_flags(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON file with flag values; flags given here win");
  app->add_option("--model", o.model, "ONNX file, export manifest (.json) or fixture:<seed>");
  app->add_option("--layer", o.layer, "Target layer (exact node output name)");
  app->add_option("--softmax", o.softmax, "auto|always|never");
}

void add_method_flags(CLI::App* app, Options& o) {
  app->add_option("--method", o.method, "cluster|score|ablation");
  app->add_option("--class", o.cls, "Target class index or 'auto' for top-1");
  app->add_option("--q", o.q, "Number of clusters");
  app->add_option("--k", o.k, "Spectral embedding dimension (default q-1)");
  app->add_option("--beta", o.beta, "Base weight in [0, 1]");
  app->add_option("--cluster-method", o.cluster_method, "kmeans|spectral");
  app->add_option("--theta", o.theta, "Adjacency cutoff in [0, 1)");
  app->add_option("--sigma", o.sigma, "Adjacency bandwidth");
  app->add_option("--seed", o.seed, "Clustering seed");
  app->add_option("--metric", o.metric, "euclidean|ssim");
  app->add_option("--adjacency", o.adjacency, "similarity|distance");
  app->add_flag("--unnormalized-laplacian", o.unnormalized_laplacian, "Use D - A instead of the normalized Laplacian");
  app->add_option("--mask-normalization", o.mask_normalization, "minmax|none");
  app->add_option("--baseline", o.baseline, "Score-CAM reference input: zero_image|input_image");
  app->add_flag("--no-timing", o.no_timing, "Write wall_ms as 0 so outputs are byte-identical across runs");
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

template <typename F>
auto parse_enum(F&& f, const std::string& text) {
  try {
    return f(text);
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
}

Resolved resolve(const Options& o) {
  Resolved r;
  r.cam.method = parse_enum(parse_cam_method, o.method);
  ClusterCamConfig& c = r.cam.cluster;
  c.q = o.q;
  if (o.k != 0) c.k = o.k;
  c.beta = o.beta;
  c.method = parse_enum(parse_cluster_method, o.cluster_method);
  c.theta = o.theta;
  c.sigma = o.sigma;
  c.seed = o.seed;
  if (o.metric == "euclidean" || o.metric == "euclidean_exp") {
    c.metric = SimilarityMetric::kEuclideanExp;
  } else if (o.metric == "ssim") {
    c.metric = SimilarityMetric::kSsim;
  } else {
    throw ValidationError("unknown metric '" + o.metric + "' (euclidean|ssim)");
  }
  if (o.adjacency == "similarity") {
    c.adjacency_mode = AdjacencyMode::kSimilarityForm;
  } else if (o.adjacency == "distance") {
    c.adjacency_mode = AdjacencyMode::kDistanceForm;
  } else {
    throw ValidationError("unknown adjacency '" + o.adjacency + "' (similarity|distance)");
  }
  if (c.adjacency_mode == AdjacencyMode::kDistanceForm && c.metric != SimilarityMetric::kEuclideanExp) {
    throw ValidationError("--adjacency distance needs --metric euclidean");
  }
  c.normalized_laplacian = !o.unnormalized_laplacian;
  c.mask_normalization = parse_enum(parse_mask_normalization, o.mask_normalization);
  r.cam.baseline = parse_enum(parse_score_baseline, o.baseline);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  if (o.k < 0) throw ValidationError("--k must be >= 1");

  if (o.cls != "auto") {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(o.cls, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != o.cls.size() || v < 0) throw ValidationError("--class must be a non-negative integer or 'auto'");
    r.target_class = v;
  }
  if (o.softmax == "auto") {
    r.runner.softmax = SoftmaxMode::kAuto;
  } else if (o.softmax == "always") {
    r.runner.softmax = SoftmaxMode::kAlways;
  } else if (o.softmax == "never") {
    r.runner.softmax = SoftmaxMode::kNever;
  } else {
    throw ValidationError("unknown softmax mode '" + o.softmax + "' (auto|always|never)");
  }
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) throw ValidationError("--alpha must lie in [0, 1]");
  if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
  return r;
}

/// Turns config-file entries into extra arguments for options that were not
/// given on the command line.
std::vector<std::string> config_arguments(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config file " + path + " must hold a JSON object");
  std::vector<std::string> extra;
  for (const auto& [raw_key, value] : j.items()) {
    std::string key = raw_key;
    for (char& ch : key) {
      if (ch == '_') ch = '-';
    }
    if (key == "config") throw ValidationError("config files cannot nest");
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw ValidationError("config file " + path + ": unknown key '" + raw_key + "'");
    if (opt->count() > 0) continue;
    const std::string flag = "--" + key;
    auto scalar = [&](const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number() || v.is_boolean()) return v.dump();
      if (v.is_null()) return "auto";
      throw ValidationError("config key '" + raw_key + "' has an unsupported value");
    };
    if (opt->get_type_size() == 0) {
      if (!value.is_boolean()) throw ValidationError("config key '" + raw_key + "' must be true or false");
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        extra.push_back(flag);
        extra.push_back(scalar(v));
      }
    } else {
      extra.push_back(flag);
      extra.push_back(scalar(value));
    }
  }
  return extra;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::kIoError, "failed writing " + path);
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

ImageTensor load_for(const ModelRunner& runner, const std::string& path) {
  PreprocessConfig pre;
  pre.target_h = runner.input_spec().height;
  pre.target_w = runner.input_spec().width;
  return load_and_preprocess(path, pre);
}

std::string file_token(const std::string& value) {
  std::string s = value;
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
  }
  return s;
}

int cmd_list_layers(const std::string& model, const Options& o, std::ostream& out) {
  Options copy = o;
  const Resolved r = resolve(copy);
  for (const LayerInfo& info : list_layers(model, r.runner)) {
    out << info.name << '\t' << info.op_type << '\t';
    for (std::size_t i = 0; i < info.shape.size(); ++i) out << (i ? "x" : "") << info.shape[i];
    out << '\n';
  }
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.image, "--image");
  require(o.out, "--out");
  const Resolved r = resolve(o);
  ModelRunner runner = load_model(o.model, o.layer, r.runner);
  const ImageTensor image = load_for(runner, o.image);
  const CamResult result = run_cam(runner, image, r.target_class, r.cam);
  write_png(o.out, render_overlay(decode_image(o.image), result.heatmap, o.alpha));
  if (!o.diag.empty()) write_text(o.diag, dump(diagnostics_json(result.diagnostics, !o.no_timing)));
  const CamDiagnostics& d = result.diagnostics;
  out << to_string(d.cam) << " class " << d.target_class << " score " << d.original_score << " forwards "
      << d.fp_total << " -> " << o.out << '\n';
  for (const auto& w : d.warnings) out << "warning: " << w << '\n';
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.model, "--model");
  require(o.manifest, "--manifest");
  const Resolved r = resolve(o);
  const std::vector<CorpusEntry> corpus = read_corpus_manifest(o.manifest);
  EvaluationOptions eval;
  eval.cam = r.cam;
  eval.jobs = o.jobs;
  eval.model_label = o.model;
  const RunnerOptions runner_options = r.runner;
  const std::string model = o.model;
  const std::string layer = o.layer;
  const MetricsReport report = evaluate_corpus(
      [&] { return load_model(model, layer, runner_options); }, corpus, eval);
  const std::string text = dump(report_json(report, !o.no_timing));
  if (o.report.empty()) {
    out << text;
  } else {
    write_text(o.report, text);
    out << report.n_images << " images, avg drop " << report.avg_confidence_drop_pct << "%, increase "
        << report.increase_number_pct << "% -> " << o.report << '\n';
  }
  for (const auto& f : report.failures) err << "failed: " << f.path << ": " << f.reason << '\n';
  return report.n_images > 0 ? kExitOk : kExitRuntime;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.image, "--image");
  require(o.out_dir, "--out-dir");
  const Resolved r = resolve(o);
  const ClusterCamConfig& config = r.cam.cluster;
  ModelRunner runner = load_model(o.model, o.layer, r.runner);
  const ImageTensor image = load_for(runner, o.image);
  const RgbImage original = resize_rgb(decode_image(o.image), image.height(), image.width());
  std::filesystem::create_directories(o.out_dir);
  const std::filesystem::path dir(o.out_dir);

  const Inference inf = runner.infer(image);
  const int c = r.target_class.value_or(inf.scores.top1());
  if (c >= runner.class_count()) throw ValidationError("--class outside the model's class range");
  const FeatureClusterAssignment assignment = cluster_feature_maps(inf.features, config.cluster_config());
  const RepresentativeMaps reps = representative_maps(inf.features, assignment);
  const Eigen::VectorXd y = cluster_scores(runner, image, reps, c, config.mask_normalization);
  const auto [base, scissors] = select_base_scissors(y);

  std::vector<RgbImage> panel{original};
  nlohmann::ordered_json clusters = nlohmann::ordered_json::array();
  for (int i = 0; i < reps.q(); ++i) {
    const GridD mask = activation_mask(reps.maps[static_cast<std::size_t>(i)], image.height(), image.width(),
                                       MaskNormalization::kMinMax);
    const std::string stem = "cluster_" + std::to_string(i);
    const RgbImage masked = render_masked(original, mask);
    write_png((dir / (stem + "_mask.png")).string(), render_gray(mask));
    write_png((dir / (stem + "_masked.png")).string(), masked);
    panel.push_back(masked);
    nlohmann::ordered_json e;
    e["cluster"] = i;
    e["size"] = reps.cluster_sizes[static_cast<std::size_t>(i)];
    e["score"] = y(i);
    e["role"] = i == base ? "base" : (i == scissors ? "scissors" : "");
    e["mask"] = stem + "_mask.png";
    e["masked"] = stem + "_masked.png";
    clusters.push_back(std::move(e));
  }
  const GridD base_up = resize_bilinear(reps.maps[static_cast<std::size_t>(base)], image.height(), image.width());
  const GridD scissors_up =
      resize_bilinear(reps.maps[static_cast<std::size_t>(scissors)], image.height(), image.width());
  const Heatmap heatmap = merge_heatmap(base_up, scissors_up, config.beta);
  const RgbImage overlay = render_overlay(original, heatmap, o.alpha);
  panel.push_back(overlay);
  write_png((dir / "heatmap.png").string(), overlay);
  write_png((dir / "panel.png").string(), tile_images(panel, static_cast<int>(panel.size())));

  nlohmann::ordered_json j;
  j["target_class"] = c;
  j["class_auto"] = !r.target_class.has_value();
  j["original_score"] = inf.scores.at(c);
  j["q"] = config.q;
  j["method"] = to_string(config.method);
  j["labels"] = assignment.labels;
  j["base"] = base;
  j["scissors"] = scissors;
  j["beta"] = config.beta;
  j["clusters"] = std::move(clusters);
  write_text((dir / "clusters.json").string(), dump(j));
  out << reps.q() << " clusters, base " << base << ", scissors " << scissors << " -> " << o.out_dir << '\n';
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  require(o.model, "--model");
  require(o.image, "--image");
  require(o.out_dir, "--out-dir");
  require(o.param, "--param");
  const Resolved r = resolve(o);
  std::vector<std::string> values = o.values;
  if (values.empty()) {
    if (o.param == "beta") {
      values = {"0", "0.25", "0.5", "0.75", "1"};
    } else if (o.param == "q") {
      values = {"2", "4", "6", "8"};
    } else if (o.param == "k") {
      values = {"1", "2", "4", "8"};
    } else {
      throw ValidationError("--values is required for --param " + o.param);
    }
  }
  if (o.param != "q" && o.param != "k" && o.param != "beta" && o.param != "layer") {
    throw ValidationError("--param must be q, k, beta or layer");
  }
  if (o.param != "layer" && r.cam.method != CamMethod::kCluster) {
    throw ValidationError("--param " + o.param + " applies to --method cluster only");
  }
  if (o.param == "k" && r.cam.cluster.method != ClusterMethod::kSpectral) {
    throw ValidationError("--param k needs --cluster-method spectral");
  }
  std::vector<CamSettings> settings;
  for (const std::string& v : values) {
    CamSettings s = r.cam;
    try {
      std::size_t used = 0;
      if (o.param == "q") {
        s.cluster.q = std::stoi(v, &used);
      } else if (o.param == "k") {
        s.cluster.k = std::stoi(v, &used);
      } else if (o.param == "beta") {
        s.cluster.beta = std::stod(v, &used);
      } else {
        used = v.size();
      }
      if (used != v.size()) throw std::invalid_argument(v);
      s.cluster.validate();
    } catch (const std::exception&) {
      throw ValidationError("bad --values entry '" + v + "' for --param " + o.param);
    }
    settings.push_back(s);
  }

  std::filesystem::create_directories(o.out_dir);
  const std::filesystem::path dir(o.out_dir);
  const RgbImage source = decode_image(o.image);
  std::optional<ModelRunner> shared;
  if (o.param != "layer") shared.emplace(load_model(o.model, o.layer, r.runner));
  std::vector<RgbImage> tiles;
  nlohmann::ordered_json results = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::optional<ModelRunner> own;
    if (!shared) own.emplace(load_model(o.model, values[i], r.runner));
    ModelRunner& runner = shared ? *shared : *own;
    const ImageTensor image = load_for(runner, o.image);
    const CamResult result = run_cam(runner, image, r.target_class, settings[i]);
    const std::string file = o.param + "_" + file_token(values[i]) + ".png";
    RgbImage overlay = render_overlay(source, result.heatmap, o.alpha);
    write_png((dir / file).string(), overlay);
    tiles.push_back(std::move(overlay));
    nlohmann::ordered_json e;
    e["value"] = values[i];
    e["file"] = file;
    e["diagnostics"] = diagnostics_json(result.diagnostics, !o.no_timing);
    results.push_back(std::move(e));
  }
  write_png((dir / "grid.png").string(), tile_images(tiles, static_cast<int>(tiles.size())));
  nlohmann::ordered_json j;
  j["param"] = o.param;
  j["values"] = values;
  j["results"] = std::move(results);
  write_text((dir / "sweep.json").string(), dump(j));
  out << values.size() << " heatmaps -> " << o.out_dir << '\n';
  return kExitOk;
}

bool is_validation(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kQTooLarge:
    case ErrorCode::kUnknownLayer:
      return true;
    default:
      return false;
  }
}

struct Parsed {
  std::unique_ptr<CLI::App> app;
  Options options;
  std::string list_layers;
  CLI::App* explain = nullptr;
  CLI::App* evaluate = nullptr;
  CLI::App* inspect = nullptr;
  CLI::App* sweep = nullptr;
};

std::unique_ptr<Parsed> build() {
  auto p = std::make_unique<Parsed>();
  p->app = std::make_unique<CLI::App>("Cluster-CAM saliency maps for CNN classifiers", "clustercam");
  CLI::App& app = *p->app;
  Options& o = p->options;
  app.add_option("--list-layers", p->list_layers, "Print the convolution-like layers of a model and exit");
  app.add_option("--softmax", o.softmax, "auto|always|never (with --list-layers)");

  p->explain = app.add_subcommand("explain", "Heatmap for one image");
  add_model_flags(p->explain, o);
  add_method_flags(p->explain, o);
  p->explain->add_option("--image", o.image, "Input PNG or JPEG");
  p->explain->add_option("--out", o.out, "Overlay PNG to write");
  p->explain->add_option("--diag", o.diag, "Diagnostics JSON to write");
  p->explain->add_option("--alpha", o.alpha, "Heatmap opacity in the overlay");

  p->evaluate = app.add_subcommand("evaluate", "Faithfulness metrics over an image corpus");
  add_model_flags(p->evaluate, o);
  add_method_flags(p->evaluate, o);
  p->evaluate->add_option("--manifest", o.manifest, "CSV of path,class_index");
  p->evaluate->add_option("--report", o.report, "Report JSON to write (default: stdout)");
  p->evaluate->add_option("--jobs", o.jobs, "Parallel workers, one model session each");

  p->inspect = app.add_subcommand("inspect-clusters", "Per-cluster masks, masked inputs and scores");
  add_model_flags(p->inspect, o);
  add_method_flags(p->inspect, o);
  p->inspect->add_option("--image", o.image, "Input PNG or JPEG");
  p->inspect->add_option("--out-dir", o.out_dir, "Directory for the panel files");
  p->inspect->add_option("--alpha", o.alpha, "Heatmap opacity in the overlay");

  p->sweep = app.add_subcommand("sweep", "Heatmaps for a range of one parameter");
  add_model_flags(p->sweep, o);
  add_method_flags(p->sweep, o);
  p->sweep->add_option("--image", o.image, "Input PNG or JPEG");
  p->sweep->add_option("--out-dir", o.out_dir, "Directory for the heatmaps");
  p->sweep->add_option("--param", o.param, "q|k|beta|layer");
  p->sweep->add_option("--values", o.values, "Values to try")->delimiter(',');
  p->sweep->add_option("--alpha", o.alpha, "Heatmap opacity in the overlay");

  app.require_subcommand(0, 1);
  return p;
}

void parse(Parsed& p, const std::vector<std::string>& args) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  p.app->parse(reversed);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto p = build();
  try {
    parse(*p, args);
    CLI::App* sub = nullptr;
    for (CLI::App* s : {p->explain, p->evaluate, p->inspect, p->sweep}) {
      if (s->parsed()) sub = s;
    }
    if (sub != nullptr && !p->options.config.empty()) {
      const std::vector<std::string> extra = config_arguments(sub, p->options.config);
      if (!extra.empty()) {
        std::vector<std::string> merged = args;
        merged.insert(merged.end(), extra.begin(), extra.end());
        p = build();
        parse(*p, merged);
      }
    }
  } catch (const CLI::CallForHelp& e) {
    out << p->app->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << p->app->help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << p->app->help();
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  const Options& o = p->options;
  try {
    if (!p->list_layers.empty()) return cmd_list_layers(p->list_layers, o, out);
    if (p->explain->parsed()) return cmd_explain(o, out);
    if (p->evaluate->parsed()) return cmd_evaluate(o, out, err);
    if (p->inspect->parsed()) return cmd_inspect(o, out);
    if (p->sweep->parsed()) return cmd_sweep(o, out);
    err << p->app->help();
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return is_validation(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace clustercam::cli
