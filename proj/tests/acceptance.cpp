// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails; criteria that cannot run here are reported as BLOCKED.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "clustercam/cam.hpp"
#include "clustercam/cluster.hpp"
#include "clustercam/eigen_sym.hpp"
#include "clustercam/evaluation.hpp"
#include "clustercam/graph.hpp"
#include "clustercam/imaging.hpp"
#include "clustercam/kmeans.hpp"
#include "oracle/fixture_oracle.hpp"

using namespace clustercam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool condition, const std::string& what) {
    if (!condition && ok) {
      ok = false;
      detail.str("");
      detail << what;
    } else if (!condition) {
      detail << "; " << what;
    }
  }
};

ImageTensor to_tensor(const oracle::Image& img) {
  GridStack<double> data(3, oracle::kPixels);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < oracle::kPixels; ++p) data(c, p) = img[static_cast<std::size_t>(c * oracle::kPixels + p)];
  return ImageTensor(std::move(data), oracle::kSide, oracle::kSide);
}

double max_abs_diff(const GridD& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < got.rows(); ++r)
    for (Eigen::Index c = 0; c < got.cols(); ++c)
      worst = std::max(worst, std::abs(got(r, c) - want[static_cast<std::size_t>(r * got.cols() + c)]));
  return worst;
}

SquareMatrix<double> random_symmetric(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  SquareMatrix<double> a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = g(rng);
  return a;
}

// ------------------------------------------------------------ criteria

void eigensolver(Check& c) {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const SquareMatrix<double> a = random_symmetric(n, rng);
    const auto eig = eig_sym(a);
    const double residual =
        (a * eig.eigenvectors - eig.eigenvectors * eig.eigenvalues.asDiagonal()).norm() / a.norm();
    worst = std::max(worst, residual);
    c.require(residual <= 1e-8, "residual " + std::to_string(residual) + " at n=" + std::to_string(n));
    for (int i = 1; i < n; ++i) c.require(eig.eigenvalues(i - 1) <= eig.eigenvalues(i), "eigenvalues not ascending");
  }
  SquareMatrix<double> p3(3, 3);
  p3 << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  const auto eig = eig_sym(p3);
  const double want[3] = {0, 1, 3};
  for (int i = 0; i < 3; ++i) c.require(std::abs(eig.eigenvalues(i) - want[i]) <= 1e-10, "P3 spectrum off");
  const double elapsed = seconds_since(start);
  c.require(elapsed < 10.0, "took " + std::to_string(elapsed) + " s");
  if (c.ok) c.detail << "100 matrices, worst relative residual " << worst << ", P3 = {0,1,3}, " << elapsed << " s";
}

void laplacian_criterion(Check& c) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  double worst_row = 0.0, lowest = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 63);
    PointMatrix<double> p(n, 6);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 6; ++d) p(i, d) = u(rng);
    const auto adj = adjacency(pairwise_similarity(p, SimilarityMetric::kEuclideanExp), 0.1, 1.0);
    const auto unnormalized = laplacian(adj, false);
    worst_row = std::max(worst_row, unnormalized.l.rowwise().sum().cwiseAbs().maxCoeff());
    for (bool normalized : {false, true}) {
      const auto lap = normalized ? laplacian(adj, true) : unnormalized;
      lowest = std::min(lowest, eig_sym(lap.l).eigenvalues.minCoeff());
    }
  }
  c.require(worst_row <= 1e-9, "row sum " + std::to_string(worst_row));
  c.require(lowest >= -1e-8, "eigenvalue " + std::to_string(lowest));
  // Two disjoint 4-cliques.
  SimilarityMatrix<double> sim;
  sim.s = SquareMatrix<double>::Zero(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (i / 4 == j / 4) sim.s(i, j) = i == j ? 1.0 : 0.9;
  ClusterConfig config;
  config.method = ClusterMethod::kSpectral;
  config.q = 2;
  config.k = 1;
  const auto a = spectral_cluster(sim, config);
  c.require(a.labels == std::vector<int>({0, 0, 0, 0, 1, 1, 1, 1}), "two cliques not separated");
  if (c.ok) c.detail << "max |row sum| " << worst_row << ", min eigenvalue " << lowest << ", cliques split";
}

void kmeans_criterion(Check& c) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 40);
    const int dim = 1 + static_cast<int>(rng() % 4);
    PointMatrix<double> p(n, dim);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d) p(i, d) = g(rng) + 3.0 * static_cast<double>(i % 3);
    const int q = 1 + static_cast<int>(rng() % std::min(n, 5));
    const auto a = kmeans(p, q, rng(), KMeansOptions{KMeansInit::kRandomPartition, 300, 1});
    for (std::size_t i = 1; i < a.wcss_history.size(); ++i) {
      c.require(a.wcss_history[i] <= a.wcss_history[i - 1], "WCSS rose in trial " + std::to_string(trial));
    }
  }
  PointMatrix<double> line(4, 1);
  line << 0, 0.1, 10, 10.1;
  c.require(kmeans(line, 2, 0).labels == std::vector<int>({0, 0, 1, 1}), "{0,0.1,10,10.1} not split in two");
  PointMatrix<double> p(60, 3);
  for (int i = 0; i < 60; ++i)
    for (int d = 0; d < 3; ++d) p(i, d) = g(rng);
  c.require(kmeans(p, 5, 31).labels == kmeans(p, 5, 31).labels, "same seed gave different labels");
  if (c.ok) c.detail << "1000 instances monotone, 1-D split correct, seed-deterministic";
}

void fixture_end_to_end(Check& c) {
  const auto start = Clock::now();
  const oracle::Fixture f = oracle::fixture_weights(42);
  double worst = 0.0;
  for (int variant = 0; variant < 3; ++variant) {
    const oracle::Image img = oracle::test_image(variant);
    const int target = oracle::argmax(oracle::probabilities(f, img));
    ModelRunner runner = fixture_runner(42);
    ClusterCamConfig config;
    config.q = 2;
    const CamResult cl = cluster_cam(runner, to_tensor(img), std::nullopt, config);
    const auto best = oracle::best_partition(oracle::features(f, img), 2);
    c.require(cl.diagnostics.labels == best.labels, "cluster labels differ from exhaustive optimum");
    const auto want_cl = oracle::cluster_cam(f, img, target, best.labels, 2, 0.5);
    worst = std::max(worst, max_abs_diff(cl.raw, want_cl.raw));
    worst = std::max(worst, max_abs_diff(score_cam(runner, to_tensor(img), target).raw,
                                         oracle::score_cam(f, img, target).raw));
    worst = std::max(worst, max_abs_diff(ablation_cam(runner, to_tensor(img), target).raw,
                                         oracle::ablation_cam(f, img, target).raw));
  }
  c.require(worst <= 1e-6, "max pixel error " + std::to_string(worst));
  const double elapsed = seconds_since(start);
  c.require(elapsed < 5.0, "took " + std::to_string(elapsed) + " s");
  if (c.ok) c.detail << "3 CAMs x 3 images, max pixel error " << worst << ", " << elapsed << " s";
}

void forward_economy(Check& c) {
  ModelRunner runner = load_model(std::string(CLUSTERCAM_TEST_DATA) + "/mini_vgg_manifest.json", "");
  GridStack<double> data(3, 256);
  for (int ch = 0; ch < 3; ++ch)
    for (int p = 0; p < 256; ++p) data(ch, p) = std::sin(0.37 * p + ch);
  const ImageTensor img(std::move(data), 16, 16);
  ClusterCamConfig config;
  config.q = 6;
  const auto cl = cluster_cam(runner, img, std::nullopt, config).diagnostics;
  const auto sc = score_cam(runner, img, std::nullopt).diagnostics;
  const auto ab = ablation_cam(runner, img, std::nullopt).diagnostics;
  const std::uint64_t n = 16;
  c.require(cl.fp_masked == 6, "cluster fp_masked " + std::to_string(cl.fp_masked));
  c.require(sc.fp_masked == n, "score fp_masked " + std::to_string(sc.fp_masked));
  c.require(ab.fp_masked == n, "ablation fp_masked " + std::to_string(ab.fp_masked));
  if (c.ok) {
    c.detail << "N=16: cluster " << cl.fp_masked << " (total " << cl.fp_total << "), score " << sc.fp_masked
             << ", ablation " << ab.fp_masked;
  }
}

void metrics_criterion(Check& c) {
  c.require(std::abs(confidence_drop(0.8, 0.6) - 25.0) <= 1e-12, "0.8 -> 0.6 is not 25%");
  const oracle::Fixture f = oracle::fixture_weights(42);
  const std::vector<CorpusEntry> corpus{{"img0", std::nullopt}, {"img1", 2}, {"img2", std::nullopt}};
  EvaluationOptions options;
  options.cam.method = CamMethod::kScore;
  const auto loader = [](const std::string& path, const InputSpec&) {
    return to_tensor(oracle::test_image(path.back() - '0'));
  };
  const MetricsReport report = evaluate_corpus([] { return fixture_runner(42); }, corpus, options, loader);
  double drop = 0.0;
  int increased = 0;
  for (int i = 0; i < 3; ++i) {
    const oracle::Image img = oracle::test_image(i);
    const auto probs = oracle::probabilities(f, img);
    const int t = corpus[static_cast<std::size_t>(i)].target_class.value_or(oracle::argmax(probs));
    const auto heat = oracle::postprocess(oracle::score_cam(f, img, t).raw);
    const double m = oracle::probabilities(f, oracle::masked(img, heat))[t];
    const double d = 100.0 * (probs[t] - m) / probs[t];
    drop += d / 3.0;
    increased += d < 0;
    const auto& got = report.per_image[static_cast<std::size_t>(i)];
    c.require(got.increased == (got.confidence_drop_pct < 0), "increase flag disagrees with drop sign");
  }
  c.require(report.n_images == 3, "corpus did not evaluate fully");
  c.require(std::abs(report.avg_confidence_drop_pct - drop) <= 1e-9, "mean drop differs from hand mean");
  c.require(std::abs(report.increase_number_pct - 100.0 * increased / 3.0) <= 1e-12, "increase % differs");
  if (c.ok) {
    c.detail << "drop 25%, corpus mean drop " << report.avg_confidence_drop_pct << "%, increase "
             << report.increase_number_pct << "%";
  }
}

void merge_boundaries(Check& c) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    GridD base(7, 9), scissors(7, 9);
    for (int r = 0; r < 7; ++r)
      for (int col = 0; col < 9; ++col) base(r, col) = u(rng), scissors(r, col) = u(rng);
    c.require(merge_heatmap(base, scissors, 1.0).data() == clamp_normalize(base).data(), "beta=1 differs from base");
    c.require(merge_heatmap(base, scissors, 0.0).data() == GridD::Zero(7, 9), "beta=0 not all zeros");
  }
  if (c.ok) c.detail << "100 random pairs bit-exact at both ends";
}

void cli_determinism(Check& c) {
  const fs::path dir = fs::temp_directory_path() / "clustercam_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RgbImage img(24, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<std::uint8_t>((y * 9 + x * 5 + ch * 70) % 256);
  write_png((dir / "in.png").string(), img);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  for (const char* tag : {"a", "b"}) {
    // wall_ms is a measured duration, so byte-identical output needs --no-timing.
    const std::string cmd = std::string(CLUSTERCAM_CLI) + " explain --model fixture:42 --q 3 --seed 7 --no-timing" +
                            " --image " + (dir / "in.png").string() + " --out " +
                            (dir / (std::string(tag) + ".png")).string() + " --diag " +
                            (dir / (std::string(tag) + ".json")).string() + " > /dev/null";
    c.require(std::system(cmd.c_str()) == 0, "CLI run failed");
  }
  const std::string png_a = slurp(dir / "a.png"), json_a = slurp(dir / "a.json");
  c.require(!png_a.empty() && png_a == slurp(dir / "b.png"), "PNG bytes differ");
  c.require(!json_a.empty() && json_a == slurp(dir / "b.json"), "JSON bytes differ");
  if (c.ok) c.detail << "PNG " << png_a.size() << " bytes, JSON " << json_a.size() << " bytes, identical";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"1 eigensolver correctness", eigensolver},
      {"2 Laplacian properties", laplacian_criterion},
      {"3 K-means", kmeans_criterion},
      {"4 fixture end-to-end", fixture_end_to_end},
      {"5 forward-pass economy", forward_economy},
      {"6 metrics", metrics_criterion},
      {"7 merge boundaries", merge_boundaries},
      {"8 CLI determinism", cli_determinism},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Check c;
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail.str("");
      c.detail << "exception: " << e.what();
    }
    if (!c.ok) ++failures;
    std::cout << (c.ok ? "PASS " : "FAIL ") << name << ": " << c.detail.str() << '\n';
  }
  std::cout << "BLOCKED 9 VGG-16 desk-scale check: needs pretrained VGG-16 weights and ILSVRC validation images, "
               "neither reachable offline; see the desk_scale_vgg16 test\n";
  return failures == 0 ? 0 : 1;
}
