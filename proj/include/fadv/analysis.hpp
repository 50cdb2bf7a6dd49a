#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fadv/corpus.hpp"
#include "fadv/network.hpp"

namespace fadv {

enum class Metric { euclidean, cosine };
std::string to_string(Metric m);

/// Distance under `metric`. Cosine distance is 1 - cos, with cos taken as 0
/// when either vector is zero.
double metric_distance(Metric metric, std::span<const double> a, std::span<const double> b);

/// Exact neighbor index over cached representations. Neighbor lists are
/// ordered by (distance, row index).
class NeighborIndex {
 public:
  NeighborIndex(std::string layer, Metric metric, std::vector<Tensor> rows,
                std::vector<std::size_t> labels);

  const std::string& layer() const { return layer_; }
  Metric metric() const { return metric_; }
  std::size_t size() const { return rows_.size(); }
  const Tensor& row(std::size_t i) const { return rows_.at(i); }
  std::size_t label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::vector<std::size_t> class_members(std::size_t label) const;

  /// Cached metric distance between two rows.
  double pair_distance(std::size_t i, std::size_t j) const { return pairwise_[i * size() + j]; }

  /// k nearest rows to query, skipping `exclusions`.
  std::vector<std::size_t> nearest(std::span<const double> query, std::size_t k,
                                   std::span<const std::size_t> exclusions = {}) const;
  /// k nearest rows to row i, excluding i itself.
  std::vector<std::size_t> nearest_to_row(std::size_t i, std::size_t k) const;

  /// Mean distance from query to its k nearest rows (skipping exclusions).
  double knn_score(std::span<const double> query, std::size_t k,
                   std::span<const std::size_t> exclusions = {}) const;
  /// Same for a stored row, excluding itself.
  double row_score(std::size_t i, std::size_t k) const;

 private:
  std::string layer_;
  Metric metric_;
  std::vector<Tensor> rows_;
  std::vector<std::size_t> labels_;
  std::vector<double> pairwise_;
};

NeighborIndex build_index(const Network& net, const Corpus& corpus, const std::string& layer,
                          Metric metric);

struct DistanceReport {
  double r_guide = 0.0;     // d(a, g) / d(s, g)
  double r_guide_nn = 0.0;  // d(a, g) / mean 1-NN distance within g's class
  double r_source = 0.0;    // d(a, s) / mean pairwise distance within s's class
};

/// Euclidean distance ratios. Throws DegenerateError when d(s, g) == 0.
DistanceReport distance_ratios(const NeighborIndex& index, std::span<const double> alpha_rep,
                               std::size_t source_id, std::size_t guide_id);

/// Mean Euclidean distance over all unordered pairs of a class.
double mean_pairwise_distance(const NeighborIndex& index, std::size_t label);
/// Mean over class members of the Euclidean distance to their nearest
/// other class member.
double mean_nn_distance(const NeighborIndex& index, std::size_t label);

/// 100 * (#class members with a strictly smaller k-NN score) / class size.
/// 0 is the densest region. Excluded ids are removed from both the neighbor
/// candidates and the ranked class; a member never counts as its own neighbor.
double rank_percentile(const NeighborIndex& index, std::span<const double> query_rep,
                       std::size_t class_id, std::size_t k,
                       std::span<const std::size_t> exclusions = {});

struct RankReport {
  double rank_alpha = 0.0;
  double rank_guide = 0.0;
  double rank_diff = 0.0;
  std::size_t nn_intersection = 0;
  double rank_nn1_alpha = 0.0;
};

/// Rank statistics of alpha against the guide's class; the guide is never a
/// neighbor candidate for alpha.
RankReport rank_report(const NeighborIndex& index, std::span<const double> alpha_rep,
                       std::size_t guide_id, std::size_t k = 3);

struct NeighborSets {
  std::vector<std::size_t> n_ref;  // 15 sampled from the 20 nearest
  std::vector<std::size_t> n_c;    // the other 5 of the 20 nearest
  std::vector<std::size_t> n_f;    // ranks 41-50
};

/// Cosine neighbors of the guide (itself excluded).
NeighborSets neighbor_sets(const NeighborIndex& index, std::size_t guide_id, std::uint64_t seed);

/// Maximum-likelihood PPCA fitted to reference points, with the mean moved
/// to an anchor point.
class PpcaModel {
 public:
  PpcaModel(const std::vector<Tensor>& reference, const Tensor& anchor, std::size_t q);

  /// log p(x) - log p(anchor); never positive.
  double delta_loglik(std::span<const double> x) const;

  std::size_t latent_dim() const { return q_; }
  double noise_variance() const { return noise_; }
  /// Principal directions (unit norm) and their sample-covariance eigenvalues.
  const std::vector<Tensor>& axes() const { return axes_; }
  const std::vector<double>& eigenvalues() const { return eigenvalues_; }

 private:
  Tensor anchor_;
  std::size_t q_;
  double noise_;
  std::vector<Tensor> axes_;
  std::vector<double> eigenvalues_;
};

struct ManifoldReport {
  double delta_loglik_alpha = 0.0;
  std::vector<double> delta_loglik_nc;
  std::vector<double> delta_loglik_nf;
  std::size_t ppca_dim = 0;
  double noise_variance = 0.0;
};

/// Delta log-likelihood of each query under the PPCA model of `reference`
/// re-centred on `guide_rep`.
std::vector<double> ppca_delta_loglik(const std::vector<Tensor>& reference, const Tensor& guide_rep,
                                      const std::vector<Tensor>& queries, std::size_t q);

ManifoldReport manifold_report(const NeighborIndex& index, const NeighborSets& sets,
                               std::size_t guide_id, const Tensor& alpha_rep, std::size_t q = 10);

/// Mean cosine between (x_i - z) and (x_i - g) over the reference points.
double angular_consistency(std::span<const double> z, std::span<const double> g,
                           const std::vector<Tensor>& reference);

struct AngularReport {
  double omega_alpha = 0.0;
  std::vector<double> omega_nc;
  std::vector<double> omega_nf;
};

AngularReport angular_report(const NeighborIndex& index, const NeighborSets& sets,
                             std::size_t guide_id, const Tensor& alpha_rep);

struct LayerSparsity {
  std::string layer;
  double delta_s = 0.0;  // percentage points
  double iou = 0.0;      // percent
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;
};

/// Active units are activations > 0.
LayerSparsity sparsity_of(std::span<const double> source_act, std::span<const double> alpha_act);
SparsityReport sparsity_stats(const ActivationTrace& source, const ActivationTrace& alpha,
                              const std::vector<std::string>& layers);

}  // namespace fadv
