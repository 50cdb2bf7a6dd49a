#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fadv/adversary.hpp"
#include "fadv/analysis.hpp"
#include "fadv/corpus.hpp"
#include "fadv/network.hpp"

namespace fadv {

enum class Generator { feature_opt, feature_linear, feat_fgrad, label_fgrad, label_opt };
std::string to_string(Generator g);
Generator parse_generator(const std::string& s);

struct AnalysisToggles {
  bool distances = true;
  bool ranks = true;
  bool manifold = true;
  bool angular = true;
  bool sparsity = true;
};

struct ExperimentSettings {
  std::size_t pair_count = 100;
  std::uint64_t seed = 0;  // pair sampling and neighbor-set sampling
  std::vector<std::string> layers{"fc2"};
  std::vector<double> deltas{10.0};
  Generator generator = Generator::feature_opt;
  AnalysisToggles analyses;
  std::size_t k = 3;
  std::size_t ppca_q = 10;
  std::size_t max_iterations = 500;
  std::size_t threads = 1;

  void validate() const;
};

struct ExperimentPlan {
  std::filesystem::path network_file;
  std::optional<std::filesystem::path> corpus_file;
  std::uint64_t corpus_seed = 1;  // used when corpus_file is absent
  std::filesystem::path output_dir;
  ExperimentSettings settings;
};

struct PairSample {
  std::size_t source_id;
  std::size_t guide_id;
};

/// Seeded (source, guide) pairs whose labels differ.
std::vector<PairSample> sample_pairs(const Corpus& corpus, std::size_t count, std::uint64_t seed);

/// One (pair, layer, delta) result. Optional fields are empty when the
/// analysis is disabled, does not apply, or the row failed.
struct PairResult {
  std::size_t pair_id = 0;
  std::size_t source_id = 0;
  std::size_t guide_id = 0;
  std::string layer;
  double delta = 0.0;
  Generator generator = Generator::feature_opt;
  std::optional<std::size_t> iterations_used;
  std::optional<double> final_objective;
  std::optional<DistanceReport> distances;
  std::optional<RankReport> ranks;
  std::optional<bool> guide_is_nn1;  // guide among the candidates
  std::optional<ManifoldReport> manifold;
  std::optional<AngularReport> angular;
  std::optional<LayerSparsity> sparsity;
  std::optional<std::size_t> label_source, label_alpha, label_guide;
  std::string error;
};

struct ExperimentReport {
  ExperimentSettings settings;
  std::vector<PairSample> pairs;
  std::vector<PairResult> rows;  // pair-major, then layer, then delta
};

/// Runs every (pair, layer, delta) combination. Per-row failures land in
/// PairResult::error; the output does not depend on the thread count.
ExperimentReport run_pairs(const Network& net, const Corpus& corpus, const ExperimentSettings& settings);

/// Fixed CSV column order.
const std::vector<std::string>& csv_columns();
std::string format_csv(const ExperimentReport& report);
/// Median, min and max of each statistic per (layer, delta).
std::string format_summary_json(const ExperimentReport& report);

/// Loads the network and corpus, runs the plan and writes pairs.csv and
/// summary.json into the output directory.
ExperimentReport run_experiment(const ExperimentPlan& plan);

}  // namespace fadv
