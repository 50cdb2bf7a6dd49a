#include "fadv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "fadv/error.hpp"
#include "fadv/rng.hpp"

namespace fadv {

std::string to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

double metric_distance(Metric metric, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("metric_distance: length mismatch");
  if (metric == Metric::euclidean) return distance(a, b);
  const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot(a, b) / (na * nb);
}

namespace {

bool excluded(std::span<const std::size_t> ex, std::size_t i) {
  return std::find(ex.begin(), ex.end(), i) != ex.end();
}

// Indices of the k smallest entries of dist, ties to the lower index.
std::vector<std::size_t> smallest(const std::vector<double>& dist, std::size_t k,
                                  const std::vector<char>& skip) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (!skip[i]) idx.push_back(i);
  if (idx.size() < k) throw PreconditionError("not enough candidate points for the neighbor query");
  const auto less = [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), less);
  idx.resize(k);
  return idx;
}

double mean_of(const std::vector<double>& dist, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (auto i : idx) s += dist[i];
  return idx.empty() ? 0.0 : s / static_cast<double>(idx.size());
}

}  // namespace

NeighborIndex::NeighborIndex(std::string layer, Metric metric, std::vector<Tensor> rows,
                             std::vector<std::size_t> labels)
    : layer_(std::move(layer)), metric_(metric), rows_(std::move(rows)), labels_(std::move(labels)) {
  if (rows_.size() != labels_.size()) throw PreconditionError("index rows and labels differ in count");
  const std::size_t n = rows_.size();
  for (std::size_t i = 1; i < n; ++i)
    if (rows_[i].size() != rows_[0].size()) throw ShapeError("index rows differ in length");
  pairwise_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      pairwise_[i * n + j] = pairwise_[j * n + i] =
          metric_distance(metric_, rows_[i].data(), rows_[j].data());
}

std::vector<std::size_t> NeighborIndex::class_members(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) out.push_back(i);
  return out;
}

std::vector<std::size_t> NeighborIndex::nearest(std::span<const double> query, std::size_t k,
                                                std::span<const std::size_t> exclusions) const {
  std::vector<double> dist(size());
  std::vector<char> skip(size(), 0);
  for (std::size_t i = 0; i < size(); ++i) {
    skip[i] = excluded(exclusions, i);
    if (!skip[i]) dist[i] = metric_distance(metric_, query, rows_[i].data());
  }
  return smallest(dist, k, skip);
}

std::vector<std::size_t> NeighborIndex::nearest_to_row(std::size_t i, std::size_t k) const {
  if (i >= size()) throw PreconditionError("row index out of range");
  std::vector<double> dist(pairwise_.begin() + static_cast<std::ptrdiff_t>(i * size()),
                           pairwise_.begin() + static_cast<std::ptrdiff_t>((i + 1) * size()));
  std::vector<char> skip(size(), 0);
  skip[i] = 1;
  return smallest(dist, k, skip);
}

double NeighborIndex::knn_score(std::span<const double> query, std::size_t k,
                                std::span<const std::size_t> exclusions) const {
  std::vector<double> dist(size());
  for (std::size_t i = 0; i < size(); ++i) dist[i] = metric_distance(metric_, query, rows_[i].data());
  std::vector<char> skip(size(), 0);
  for (std::size_t i = 0; i < size(); ++i) skip[i] = excluded(exclusions, i);
  return mean_of(dist, smallest(dist, k, skip));
}

double NeighborIndex::row_score(std::size_t i, std::size_t k) const {
  std::vector<double> dist(pairwise_.begin() + static_cast<std::ptrdiff_t>(i * size()),
                           pairwise_.begin() + static_cast<std::ptrdiff_t>((i + 1) * size()));
  return mean_of(dist, nearest_to_row(i, k));
}

NeighborIndex build_index(const Network& net, const Corpus& corpus, const std::string& layer,
                          Metric metric) {
  if (corpus.images.empty()) throw PreconditionError("cannot index an empty corpus");
  std::vector<Tensor> rows;
  rows.reserve(corpus.size());
  for (const auto& img : corpus.images) rows.push_back(representation(net, img, layer));
  return NeighborIndex(layer, metric, std::move(rows), corpus.labels);
}

double mean_pairwise_distance(const NeighborIndex& index, std::size_t label) {
  const auto m = index.class_members(label);
  if (m.size() < 2) throw PreconditionError("class " + std::to_string(label) + " has fewer than 2 members");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t b = a + 1; b < m.size(); ++b, ++count)
      s += distance(index.row(m[a]).data(), index.row(m[b]).data());
  return s / static_cast<double>(count);
}

double mean_nn_distance(const NeighborIndex& index, std::size_t label) {
  const auto m = index.class_members(label);
  if (m.size() < 2) throw PreconditionError("class " + std::to_string(label) + " has fewer than 2 members");
  double s = 0.0;
  for (auto a : m) {
    double best = INFINITY;
    for (auto b : m)
      if (a != b) best = std::min(best, distance(index.row(a).data(), index.row(b).data()));
    s += best;
  }
  return s / static_cast<double>(m.size());
}

DistanceReport distance_ratios(const NeighborIndex& index, std::span<const double> alpha_rep,
                               std::size_t source_id, std::size_t guide_id) {
  const auto s = index.row(source_id).data();
  const auto g = index.row(guide_id).data();
  const double dsg = distance(s, g);
  if (dsg == 0.0) throw DegenerateError("source and guide have identical representations");
  const double nn = mean_nn_distance(index, index.label(guide_id));
  const double pair = mean_pairwise_distance(index, index.label(source_id));
  if (nn == 0.0 || pair == 0.0) throw DegenerateError("class has zero spread");
  const double dag = distance(alpha_rep, g);
  return {dag / dsg, dag / nn, distance(alpha_rep, s) / pair};
}

double rank_percentile(const NeighborIndex& index, std::span<const double> query_rep,
                       std::size_t class_id, std::size_t k,
                       std::span<const std::size_t> exclusions) {
  if (k == 0) throw PreconditionError("K must be positive");
  std::vector<std::size_t> members;
  for (auto m : index.class_members(class_id))
    if (!excluded(exclusions, m)) members.push_back(m);
  if (members.size() <= k)
    throw PreconditionError("class " + std::to_string(class_id) + " is too small for K=" + std::to_string(k));
  const std::size_t n = index.size();
  std::vector<char> skip(n, 0);
  for (std::size_t i = 0; i < n; ++i) skip[i] = excluded(exclusions, i);

  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!skip[i]) dist[i] = metric_distance(index.metric(), query_rep, index.row(i).data());
  const double score = mean_of(dist, smallest(dist, k, skip));

  std::size_t below = 0;
  for (auto m : members) {
    for (std::size_t i = 0; i < n; ++i) dist[i] = index.pair_distance(m, i);
    skip[m] = 1;
    below += mean_of(dist, smallest(dist, k, skip)) < score;
    skip[m] = 0;
  }
  return 100.0 * static_cast<double>(below) / static_cast<double>(members.size());
}

RankReport rank_report(const NeighborIndex& index, std::span<const double> alpha_rep,
                       std::size_t guide_id, std::size_t k) {
  RankReport r;
  const std::size_t cls = index.label(guide_id);
  const std::size_t ex[] = {guide_id};
  r.rank_alpha = rank_percentile(index, alpha_rep, cls, k, ex);
  r.rank_guide = rank_percentile(index, index.row(guide_id).data(), cls, k, ex);
  r.rank_diff = r.rank_alpha - r.rank_guide;
  const auto na = index.nearest(alpha_rep, k, ex);
  const auto ng = index.nearest_to_row(guide_id, k);
  for (auto a : na) r.nn_intersection += std::count(ng.begin(), ng.end(), a);
  const std::size_t nn1 = na.front();
  const std::size_t ex1[] = {nn1};
  r.rank_nn1_alpha = rank_percentile(index, index.row(nn1).data(), index.label(nn1), k, ex1);
  return r;
}

NeighborSets neighbor_sets(const NeighborIndex& index, std::size_t guide_id, std::uint64_t seed) {
  if (index.size() < 51) throw PreconditionError("neighbor sets need at least 51 indexed points");
  const auto g = index.row(guide_id).data();
  std::vector<double> dist(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    dist[i] = metric_distance(Metric::cosine, g, index.row(i).data());
  std::vector<char> skip(index.size(), 0);
  skip[guide_id] = 1;
  const auto order = smallest(dist, 50, skip);
  std::vector<std::size_t> top(order.begin(), order.begin() + 20);
  Rng rng(seed);
  for (std::size_t i = top.size(); i > 1; --i) std::swap(top[i - 1], top[rng.below(i)]);
  NeighborSets s;
  s.n_ref.assign(top.begin(), top.begin() + 15);
  s.n_c.assign(top.begin() + 15, top.end());
  std::sort(s.n_ref.begin(), s.n_ref.end());
  std::sort(s.n_c.begin(), s.n_c.end());
  s.n_f.assign(order.begin() + 40, order.end());
  return s;
}

PpcaModel::PpcaModel(const std::vector<Tensor>& reference, const Tensor& anchor, std::size_t q)
    : anchor_(anchor.flattened()), q_(q) {
  const std::size_t n = reference.size();
  const std::size_t dim = anchor_.size();
  if (n < 2) throw PreconditionError("PPCA needs at least 2 reference points");
  if (q == 0 || q >= n || q >= dim)
    throw PreconditionError("PPCA latent dimension must be below both point count and dimension");
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (reference[i].size() != dim) throw ShapeError("PPCA reference point has wrong length");
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = reference[i][j];
  }
  if ((x.rowwise() - x.row(0)).cwiseAbs().maxCoeff() == 0.0)
    throw DegenerateError("PPCA reference points are all identical");
  x.rowwise() -= x.colwise().mean();
  // Sample covariance X^T X / n shares its nonzero spectrum with the Gram matrix X X^T / n.
  const Eigen::MatrixXd gram = x * x.transpose() / static_cast<double>(n);
  const double trace = gram.trace();
  if (!(trace > 0.0)) throw DegenerateError("PPCA reference points are all identical");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("PPCA eigendecomposition failed");
  double top = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    eigenvalues_.push_back(std::max(eig.eigenvalues()(static_cast<Eigen::Index>(n - 1 - i)), 0.0));
    top += eigenvalues_.back();
  }
  noise_ = std::max((trace - top) / static_cast<double>(dim - q), 1e-12);
  for (std::size_t i = 0; i < q; ++i) {
    Tensor axis(Shape{dim});
    // Directions with eigenvalue at or below the noise level carry no weight.
    if (eigenvalues_[i] > noise_) {
      Eigen::VectorXd u = x.transpose() * eig.eigenvectors().col(static_cast<Eigen::Index>(n - 1 - i));
      u /= u.norm();
      for (std::size_t j = 0; j < dim; ++j) axis[j] = u(static_cast<Eigen::Index>(j));
    }
    axes_.push_back(std::move(axis));
  }
}

double PpcaModel::delta_loglik(std::span<const double> x) const {
  if (x.size() != anchor_.size()) throw ShapeError("PPCA query has wrong length");
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] - anchor_[i];
  double quad = dot(r, r);
  for (std::size_t i = 0; i < q_; ++i) {
    const double lam = std::max(eigenvalues_[i], noise_);
    const double p = dot(axes_[i].data(), r);
    quad -= (1.0 - noise_ / lam) * p * p;
  }
  return -0.5 * std::max(quad, 0.0) / noise_;
}

std::vector<double> ppca_delta_loglik(const std::vector<Tensor>& reference, const Tensor& guide_rep,
                                      const std::vector<Tensor>& queries, std::size_t q) {
  const PpcaModel model(reference, guide_rep, q);
  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& x : queries) out.push_back(model.delta_loglik(x.data()));
  return out;
}

ManifoldReport manifold_report(const NeighborIndex& index, const NeighborSets& sets,
                               std::size_t guide_id, const Tensor& alpha_rep, std::size_t q) {
  std::vector<Tensor> ref;
  for (auto i : sets.n_ref) ref.push_back(index.row(i));
  const PpcaModel model(ref, index.row(guide_id), q);
  ManifoldReport r;
  r.delta_loglik_alpha = model.delta_loglik(alpha_rep.data());
  for (auto i : sets.n_c) r.delta_loglik_nc.push_back(model.delta_loglik(index.row(i).data()));
  for (auto i : sets.n_f) r.delta_loglik_nf.push_back(model.delta_loglik(index.row(i).data()));
  r.ppca_dim = q;
  r.noise_variance = model.noise_variance();
  return r;
}

double angular_consistency(std::span<const double> z, std::span<const double> g,
                           const std::vector<Tensor>& reference) {
  if (reference.empty()) throw PreconditionError("angular consistency needs reference points");
  if (z.size() != g.size()) throw ShapeError("angular consistency: length mismatch");
  double sum = 0.0;
  std::vector<double> a(z.size()), b(z.size());
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const auto x = reference[k].data();
    if (x.size() != z.size()) throw ShapeError("angular consistency: reference length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      a[i] = x[i] - z[i];
      b[i] = x[i] - g[i];
    }
    const double den = std::sqrt(dot(a, a)) * std::sqrt(dot(b, b));
    if (den == 0.0)
      throw DegenerateError("angular consistency: reference point " + std::to_string(k) +
                            " coincides with the query or the guide");
    sum += dot(a, b) / den;
  }
  return sum / static_cast<double>(reference.size());
}

AngularReport angular_report(const NeighborIndex& index, const NeighborSets& sets,
                             std::size_t guide_id, const Tensor& alpha_rep) {
  std::vector<Tensor> ref;
  for (auto i : sets.n_ref) ref.push_back(index.row(i));
  const auto g = index.row(guide_id).data();
  AngularReport r;
  r.omega_alpha = angular_consistency(alpha_rep.data(), g, ref);
  for (auto i : sets.n_c) r.omega_nc.push_back(angular_consistency(index.row(i).data(), g, ref));
  for (auto i : sets.n_f) r.omega_nf.push_back(angular_consistency(index.row(i).data(), g, ref));
  return r;
}

LayerSparsity sparsity_of(std::span<const double> source_act, std::span<const double> alpha_act) {
  if (source_act.size() != alpha_act.size()) throw ShapeError("sparsity: activation length mismatch");
  if (source_act.empty()) throw PreconditionError("sparsity: empty activation");
  std::size_t ns = 0, na = 0, both = 0, either = 0;
  for (std::size_t i = 0; i < source_act.size(); ++i) {
    const bool s = source_act[i] > 0.0, a = alpha_act[i] > 0.0;
    ns += s;
    na += a;
    both += s && a;
    either += s || a;
  }
  LayerSparsity out;
  out.delta_s = 100.0 * (static_cast<double>(na) - static_cast<double>(ns)) /
                static_cast<double>(source_act.size());
  out.iou = either == 0 ? 100.0 : 100.0 * static_cast<double>(both) / static_cast<double>(either);
  return out;
}

SparsityReport sparsity_stats(const ActivationTrace& source, const ActivationTrace& alpha,
                              const std::vector<std::string>& layers) {
  SparsityReport r;
  for (const auto& name : layers) {
    LayerSparsity l = sparsity_of(source.at(name).data(), alpha.at(name).data());
    l.layer = name;
    r.layers.push_back(std::move(l));
  }
  return r;
}

}  // namespace fadv
