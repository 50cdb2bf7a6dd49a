#include "fadv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "binary.hpp"
#include "fadv/error.hpp"
#include "fadv/rng.hpp"

namespace fadv {

namespace {

const std::vector<std::pair<Generator, std::string>>& generator_names() {
  static const std::vector<std::pair<Generator, std::string>> names{
      {Generator::feature_opt, "feature-opt"},   {Generator::feature_linear, "feature-linear"},
      {Generator::feat_fgrad, "feat-fgrad"},     {Generator::label_fgrad, "label-fgrad"},
      {Generator::label_opt, "label-opt"}};
  return names;
}

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Label pursued by the label generators: the guide's predicted class, or its
// runner-up when the source already carries that class.
std::size_t label_target(const Classification& source, const Classification& guide) {
  if (guide.label != source.label) return guide.label;
  std::size_t best = source.label == 0 ? 1 : 0;
  for (std::size_t i = 0; i < guide.scores.size(); ++i)
    if (i != source.label && guide.scores[i] > guide.scores[best]) best = i;
  return best;
}

struct Task {
  std::size_t pair_id;
  std::size_t layer;
  double delta;
};

PairResult run_one(const Network& net, const Corpus& corpus, const ExperimentSettings& st,
                   const std::vector<NeighborIndex>& indices, const PairSample& pair, const Task& task) {
  PairResult row;
  row.pair_id = task.pair_id;
  row.source_id = pair.source_id;
  row.guide_id = pair.guide_id;
  row.layer = st.layers[task.layer];
  row.delta = task.delta;
  row.generator = st.generator;
  try {
    const Tensor& source = corpus.images.at(pair.source_id);
    const Tensor& guide = corpus.images.at(pair.guide_id);
    const bool has_head = net.spec().head_classes.has_value();
    std::optional<Classification> cs, cg;
    if (has_head) {
      cs = classify(net, source);
      cg = classify(net, guide);
      row.label_source = cs->label;
      row.label_guide = cg->label;
    }

    AdvConfig cfg;
    cfg.delta = task.delta;
    cfg.layer = row.layer;
    cfg.max_iterations = st.max_iterations;
    cfg.validate();
    Tensor alpha;
    switch (st.generator) {
      case Generator::feature_opt:
      case Generator::feature_linear: {
        const AdvResult r = st.generator == Generator::feature_opt ? feature_opt(net, source, guide, cfg)
                                                                   : feature_linear(net, source, guide, cfg);
        alpha = r.adversarial_image;
        row.iterations_used = r.iterations;
        row.final_objective = r.final_objective;
        break;
      }
      case Generator::feat_fgrad: {
        alpha = feat_fgrad(net, source, guide, row.layer, task.delta);
        row.iterations_used = 1;
        row.final_objective = squared_distance(representation(net, alpha, row.layer).data(),
                                               representation(net, guide, row.layer).data());
        break;
      }
      case Generator::label_fgrad:
      case Generator::label_opt: {
        if (!has_head) throw SpecError("label generators need a classification head");
        const std::size_t target = label_target(*cs, *cg);
        if (st.generator == Generator::label_fgrad) {
          alpha = label_fgrad(net, source, target, task.delta);
          row.iterations_used = 1;
          row.final_objective = cross_entropy(classify(net, alpha).scores, target);
        } else {
          const LabelOptResult r = label_opt(net, source, target, cfg);
          alpha = r.adv.adversarial_image;
          row.iterations_used = r.adv.iterations;
          row.final_objective = r.adv.final_objective;
        }
        break;
      }
    }
    if (has_head) row.label_alpha = classify(net, alpha).label;

    const NeighborIndex& index = indices[task.layer];
    const Tensor alpha_rep = representation(net, alpha, row.layer);
    if (st.analyses.distances) row.distances = distance_ratios(index, alpha_rep.data(), pair.source_id, pair.guide_id);
    if (st.analyses.ranks) {
      row.ranks = rank_report(index, alpha_rep.data(), pair.guide_id, st.k);
      row.guide_is_nn1 = index.nearest(alpha_rep.data(), 1).front() == pair.guide_id;
    }
    if (st.analyses.manifold || st.analyses.angular) {
      const std::uint64_t seed = Rng(st.seed).split(1'000'003 + task.pair_id).next_u64();
      const NeighborSets sets = neighbor_sets(index, pair.guide_id, seed);
      if (st.analyses.manifold) row.manifold = manifold_report(index, sets, pair.guide_id, alpha_rep, st.ppca_q);
      if (st.analyses.angular) row.angular = angular_report(index, sets, pair.guide_id, alpha_rep);
    }
    if (st.analyses.sparsity) {
      const Tensor s_act = representation(net, source, row.layer);
      row.sparsity = sparsity_of(s_act.data(), alpha_rep.data());
      row.sparsity->layer = row.layer;
    }
  } catch (const std::exception& e) {
    PairResult failed;
    failed.pair_id = row.pair_id;
    failed.source_id = row.source_id;
    failed.guide_id = row.guide_id;
    failed.layer = row.layer;
    failed.delta = row.delta;
    failed.generator = row.generator;
    failed.error = e.what();
    return failed;
  }
  return row;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string to_string(Generator g) {
  for (const auto& [k, name] : generator_names())
    if (k == g) return name;
  return "unknown";
}

Generator parse_generator(const std::string& s) {
  for (const auto& [k, name] : generator_names())
    if (name == s) return k;
  throw PreconditionError("unknown generator '" + s + "'");
}

void ExperimentSettings::validate() const {
  if (pair_count == 0) throw PreconditionError("pair count must be at least 1");
  if (layers.empty()) throw PreconditionError("at least one layer is required");
  if (deltas.empty()) throw PreconditionError("at least one delta is required");
  for (double d : deltas)
    if (!(d > 0.0 && d <= 255.0)) throw PreconditionError("delta " + num(d) + " is outside (0, 255]");
  if (k == 0) throw PreconditionError("K must be positive");
  if (max_iterations == 0) throw PreconditionError("iterations must be positive");
  if (threads == 0) throw PreconditionError("thread count must be positive");
}

std::vector<PairSample> sample_pairs(const Corpus& corpus, std::size_t count, std::uint64_t seed) {
  if (corpus.size() < 2) throw PreconditionError("pair sampling needs at least two images");
  const auto first = corpus.labels.front();
  if (std::all_of(corpus.labels.begin(), corpus.labels.end(), [&](auto l) { return l == first; }))
    throw PreconditionError("pair sampling needs at least two classes");
  Rng rng(seed);
  std::vector<PairSample> out;
  while (out.size() < count) {
    const std::size_t s = rng.below(corpus.size()), g = rng.below(corpus.size());
    if (corpus.labels[s] != corpus.labels[g]) out.push_back({s, g});
  }
  return out;
}

ExperimentReport run_pairs(const Network& net, const Corpus& corpus, const ExperimentSettings& settings) {
  settings.validate();
  if (corpus.image_shape != net.spec().input_shape)
    throw ShapeError("corpus images are " + shape_string(corpus.image_shape) + " but the network expects " +
                     shape_string(net.spec().input_shape));
  for (const auto& l : settings.layers) net.spec().index_of(l);
  if (settings.generator == Generator::label_fgrad || settings.generator == Generator::label_opt)
    if (!net.spec().head_classes) throw SpecError("label generators need a classification head");

  ExperimentReport report;
  report.settings = settings;
  report.pairs = sample_pairs(corpus, settings.pair_count, settings.seed);

  std::vector<NeighborIndex> indices;
  for (const auto& l : settings.layers) indices.push_back(build_index(net, corpus, l, Metric::euclidean));

  std::vector<Task> tasks;
  for (std::size_t p = 0; p < report.pairs.size(); ++p)
    for (std::size_t l = 0; l < settings.layers.size(); ++l)
      for (double d : settings.deltas) tasks.push_back({p, l, d});
  report.rows.resize(tasks.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();)
      report.rows[i] = run_one(net, corpus, settings, indices, report.pairs[tasks[i].pair_id], tasks[i]);
  };
  const std::size_t n_threads = std::min(settings.threads, tasks.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return report;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "pair_id",     "source_id",     "guide_id",          "layer",        "delta",
      "generator",   "iterations_used", "final_objective", "r_guide",      "r_guide_nn",
      "r_source",    "rank_alpha",    "rank_guide",        "rank_diff",    "nn_intersection",
      "rank_nn1_alpha", "delta_loglik_alpha", "omega_alpha", "label_source", "label_alpha",
      "label_guide", "error"};
  return cols;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <class T>
std::string opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) return num(*v);
  else return std::to_string(*v);
}

}  // namespace

std::string format_csv(const ExperimentReport& report) {
  std::ostringstream out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& r : report.rows) {
    const auto d = r.distances;
    const auto k = r.ranks;
    std::vector<std::string> f{
        std::to_string(r.pair_id),
        std::to_string(r.source_id),
        std::to_string(r.guide_id),
        csv_escape(r.layer),
        num(r.delta),
        to_string(r.generator),
        opt(r.iterations_used),
        opt(r.final_objective),
        d ? num(d->r_guide) : "",
        d ? num(d->r_guide_nn) : "",
        d ? num(d->r_source) : "",
        k ? num(k->rank_alpha) : "",
        k ? num(k->rank_guide) : "",
        k ? num(k->rank_diff) : "",
        k ? std::to_string(k->nn_intersection) : "",
        k ? num(k->rank_nn1_alpha) : "",
        r.manifold ? num(r.manifold->delta_loglik_alpha) : "",
        r.angular ? num(r.angular->omega_alpha) : "",
        opt(r.label_source),
        opt(r.label_alpha),
        opt(r.label_guide),
        csv_escape(r.error)};
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
    out << "\n";
  }
  return out.str();
}

std::string format_summary_json(const ExperimentReport& report) {
  using json = nlohmann::ordered_json;
  const auto& st = report.settings;
  json root;
  root["generator"] = to_string(st.generator);
  root["pair_count"] = st.pair_count;
  root["seed"] = st.seed;
  root["layers"] = st.layers;
  root["deltas"] = st.deltas;
  root["k"] = st.k;
  root["ppca_q"] = st.ppca_q;
  root["max_iterations"] = st.max_iterations;
  root["rows"] = report.rows.size();
  std::size_t errors = 0;
  for (const auto& r : report.rows) errors += !r.error.empty();
  root["errors"] = errors;

  using Getter = std::function<void(const PairResult&, std::vector<double>&)>;
  const auto one = [](auto f) -> Getter {
    return [f](const PairResult& r, std::vector<double>& out) {
      if (auto v = f(r)) out.push_back(*v);
    };
  };
  const auto many = [](auto f) -> Getter {
    return [f](const PairResult& r, std::vector<double>& out) {
      if (const std::vector<double>* v = f(r)) out.insert(out.end(), v->begin(), v->end());
    };
  };
  using OD = std::optional<double>;
  const std::vector<std::pair<std::string, Getter>> metrics{
      {"iterations_used", one([](const PairResult& r) { return r.iterations_used ? OD(double(*r.iterations_used)) : OD(); })},
      {"final_objective", one([](const PairResult& r) { return r.final_objective; })},
      {"r_guide", one([](const PairResult& r) { return r.distances ? OD(r.distances->r_guide) : OD(); })},
      {"r_guide_nn", one([](const PairResult& r) { return r.distances ? OD(r.distances->r_guide_nn) : OD(); })},
      {"r_source", one([](const PairResult& r) { return r.distances ? OD(r.distances->r_source) : OD(); })},
      {"rank_alpha", one([](const PairResult& r) { return r.ranks ? OD(r.ranks->rank_alpha) : OD(); })},
      {"rank_guide", one([](const PairResult& r) { return r.ranks ? OD(r.ranks->rank_guide) : OD(); })},
      {"rank_diff", one([](const PairResult& r) { return r.ranks ? OD(r.ranks->rank_diff) : OD(); })},
      {"nn_intersection", one([](const PairResult& r) { return r.ranks ? OD(double(r.ranks->nn_intersection)) : OD(); })},
      {"rank_nn1_alpha", one([](const PairResult& r) { return r.ranks ? OD(r.ranks->rank_nn1_alpha) : OD(); })},
      {"delta_loglik_alpha", one([](const PairResult& r) { return r.manifold ? OD(r.manifold->delta_loglik_alpha) : OD(); })},
      {"delta_loglik_nc", many([](const PairResult& r) { return r.manifold ? &r.manifold->delta_loglik_nc : nullptr; })},
      {"delta_loglik_nf", many([](const PairResult& r) { return r.manifold ? &r.manifold->delta_loglik_nf : nullptr; })},
      {"omega_alpha", one([](const PairResult& r) { return r.angular ? OD(r.angular->omega_alpha) : OD(); })},
      {"omega_nc", many([](const PairResult& r) { return r.angular ? &r.angular->omega_nc : nullptr; })},
      {"omega_nf", many([](const PairResult& r) { return r.angular ? &r.angular->omega_nf : nullptr; })},
      {"sparsity_delta_s", one([](const PairResult& r) { return r.sparsity ? OD(r.sparsity->delta_s) : OD(); })},
      {"sparsity_iou", one([](const PairResult& r) { return r.sparsity ? OD(r.sparsity->iou) : OD(); })},
  };

  json groups = json::array();
  for (const auto& layer : st.layers)
    for (double delta : st.deltas) {
      std::vector<const PairResult*> rows;
      for (const auto& r : report.rows)
        if (r.layer == layer && r.delta == delta && r.error.empty()) rows.push_back(&r);
      json g;
      g["layer"] = layer;
      g["delta"] = delta;
      g["pairs"] = rows.size();
      json m;
      for (const auto& [name, get] : metrics) {
        std::vector<double> v;
        for (const auto* r : rows) get(*r, v);
        if (v.empty()) {
          m[name] = nullptr;
          continue;
        }
        m[name] = {{"median", median(v)},
                   {"min", *std::min_element(v.begin(), v.end())},
                   {"max", *std::max_element(v.begin(), v.end())}};
      }
      g["stats"] = m;
      const auto fraction = [&](auto pred) -> json {
        std::size_t hit = 0, total = 0;
        for (const auto* r : rows)
          if (auto v = pred(*r)) total += 1, hit += *v;
        return total ? json(double(hit) / double(total)) : json(nullptr);
      };
      g["fraction_r_guide_below_0_8"] = fraction([](const PairResult& r) {
        return r.distances ? std::optional<bool>(r.distances->r_guide < 0.8) : std::nullopt;
      });
      g["fraction_guide_is_nn1"] = fraction([](const PairResult& r) { return r.guide_is_nn1; });
      g["fraction_nn_intersection_full"] = fraction([&](const PairResult& r) {
        return r.ranks ? std::optional<bool>(r.ranks->nn_intersection == st.k) : std::nullopt;
      });
      g["fraction_label_alpha_is_guide"] = fraction([](const PairResult& r) {
        return r.label_alpha && r.label_guide ? std::optional<bool>(*r.label_alpha == *r.label_guide) : std::nullopt;
      });
      groups.push_back(std::move(g));
    }
  root["groups"] = std::move(groups);
  return root.dump(2) + "\n";
}

ExperimentReport run_experiment(const ExperimentPlan& plan) {
  plan.settings.validate();
  const Network net = load_network(plan.network_file);
  const Corpus corpus = plan.corpus_file ? load_corpus(*plan.corpus_file) : generate_corpus(plan.corpus_seed);
  ExperimentReport report = run_pairs(net, corpus, plan.settings);
  std::error_code ec;
  std::filesystem::create_directories(plan.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + plan.output_dir.string() + ": " + ec.message());
  detail::write_file(plan.output_dir / "pairs.csv", format_csv(report));
  detail::write_file(plan.output_dir / "summary.json", format_summary_json(report));
  return report;
}

}  // namespace fadv
