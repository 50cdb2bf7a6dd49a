// Acceptance run: one PASS/FAIL line per criterion A1-A10, followed by
// supplementary checks that do not affect the exit status.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "fadv/adversary.hpp"
#include "fadv/analysis.hpp"
#include "fadv/corpus.hpp"
#include "fadv/error.hpp"
#include "fadv/experiment.hpp"
#include "fadv/formats.hpp"
#include "fadv/inversion.hpp"
#include "fadv/optimizer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fadv;
namespace fs = std::filesystem;

namespace {

// A1
constexpr std::size_t kGradImages = 20;
constexpr std::size_t kGradCoords = 16;
constexpr std::size_t kGradDirections = 2;
constexpr double kFdStep = 1e-4;
constexpr double kGradTol = 1e-4;
constexpr double kAdjointTol = 1e-8;
// A2
constexpr std::size_t kQuadratics = 50;
constexpr int kQuadMaxDim = 50;
constexpr double kQuadTol = 1e-6;
// A3, A5, A6, A7, A9
constexpr std::size_t kPairs = 100;
constexpr double kDelta = 10.0;
constexpr double kA3Median = 0.5;
constexpr double kA3Below = 0.8;
constexpr double kA3Fraction = 0.9;
constexpr double kA5LinearMedian = 0.75;
constexpr double kA5OptMedian = 0.5;
constexpr std::size_t kA5Wins = 90;
constexpr double kA6Nn1 = 0.7;
constexpr double kA6Intersection = 0.5;
// A4
constexpr std::size_t kSweepPairs = 50;
constexpr double kSweepSlack = 0.02;
constexpr std::size_t kSweepInversions = 1;
// A8
constexpr std::size_t kOracleCorpusPerClass = 20;
constexpr double kPpcaTol = 1e-8;
// Supplementary
constexpr std::size_t kLabelOptTrials = 100;
constexpr std::size_t kLabelOptSuccesses = 80;
constexpr double kInversionDataTerm = 0.1;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n == 0 ? NAN : n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const Network& refnet() {
  static const Network net = init_network(refnet32_spec(), 7, InitScheme::orthonormal);
  return net;
}

const Corpus& corpus() {
  static const Corpus c = generate_corpus(1);
  return c;
}

std::size_t threads() { return std::max(1u, std::thread::hardware_concurrency()); }

ExperimentSettings base_settings(Generator g, std::size_t pairs) {
  ExperimentSettings s;
  s.pair_count = pairs;
  s.seed = 0;
  s.layers = {"fc2"};
  s.deltas = {kDelta};
  s.generator = g;
  s.threads = threads();
  return s;
}

AnalysisToggles only_distances() { return {true, false, false, false, false}; }

std::vector<double> ratios(const ExperimentReport& r, const std::string& layer, double delta) {
  std::vector<double> out;
  for (const auto& row : r.rows)
    if (row.layer == layer && row.delta == delta && row.distances) out.push_back(row.distances->r_guide);
  return out;
}

std::size_t errors(const ExperimentReport& r) {
  std::size_t n = 0;
  for (const auto& row : r.rows) n += !row.error.empty();
  return n;
}

// The A3 run is shared by A3, A6, A7 and A9.
const ExperimentReport& a3_run() {
  static const ExperimentReport r = run_pairs(refnet(), corpus(), base_settings(Generator::feature_opt, kPairs));
  return r;
}

Outcome a1() {
  const Network& net = refnet();
  Rng rng(101);
  std::size_t checks = 0, failures = 0;
  double worst_grad = 0.0, worst_adj = 0.0;
  std::string worst_where;
  for (std::size_t img = 0; img < kGradImages; ++img) {
    const Tensor x = test::random_image(rng, net.spec().input_shape);
    const Tensor other = test::random_image(rng, net.spec().input_shape);
    for (const auto& layer : net.spec().layers) {
      const Tensor r0 = representation(net, other, layer.name);
      const auto f = [&](const Tensor& t) {
        return squared_distance(representation(net, t, layer.name).data(), r0.data());
      };
      const Tensor grad = representation_vjp(net, x, layer.name, 2.0 * (representation(net, x, layer.name) - r0));

      std::vector<double> g_s, fd_s;
      for (std::size_t c = 0; c < kGradCoords; ++c) {
        const std::size_t i = rng.below(x.size());
        Tensor xp = x, xm = x;
        xp[i] += kFdStep;
        xm[i] -= kFdStep;
        g_s.push_back(grad[i]);
        fd_s.push_back((f(xp) - f(xm)) / (2 * kFdStep));
      }
      for (std::size_t d = 0; d < kGradDirections; ++d) {
        Tensor v = test::random_tensor(rng, x.shape());
        v = (1.0 / norm2(v)) * v;
        g_s.push_back(dot(grad, v));
        fd_s.push_back((f(x + kFdStep * v) - f(x - kFdStep * v)) / (2 * kFdStep));
      }
      const double e = test::rel_error(Tensor(Shape{g_s.size()}, g_s), Tensor(Shape{fd_s.size()}, fd_s));

      const Tensor u = test::random_tensor(rng, x.shape());
      const Tensor w = test::random_tensor(rng, {net.representation_size(layer.name)});
      const double lhs = dot(w, representation_jvp(net, x, layer.name, u));
      const double rhs = dot(representation_vjp(net, x, layer.name, w), u);
      const double adj = test::rel_error(lhs, rhs);

      ++checks;
      if (e > kGradTol || adj > kAdjointTol) ++failures;
      if (e > worst_grad) worst_grad = e, worst_where = layer.name;
      worst_adj = std::max(worst_adj, adj);
    }
  }
  return {failures == 0, std::to_string(checks) + " image/layer checks, worst gradient rel. error " + fmt(worst_grad) +
                             " (" + worst_where + "), worst adjointness " + fmt(worst_adj)};
}

Outcome a2() {
  Rng rng(202);
  double worst = 0.0;
  bool feasible = true;
  for (std::size_t k = 0; k < kQuadratics; ++k) {
    const int n = 2 + static_cast<int>(rng.below(kQuadMaxDim - 1));
    const oracle::Quadratic qd = oracle::random_quadratic(rng, n);
    BoxConstraint box{Tensor(Shape{std::size_t(n)}), Tensor(Shape{std::size_t(n)})};
    for (int i = 0; i < n; ++i) {
      box.lower[i] = rng.uniform(-3.0, 0.0);
      box.upper[i] = box.lower[i] + rng.uniform(0.5, 4.0);
    }
    Tensor start(Shape{std::size_t(n)});
    for (int i = 0; i < n; ++i) start[i] = rng.uniform(box.lower[i], box.upper[i]);
    const auto objective = [&](const Tensor& x, Tensor& g) {
      const Eigen::Map<const Eigen::VectorXd> xv(x.data().data(), n);
      const Eigen::VectorXd gv = qd.a * xv - qd.b;
      g = Tensor(x.shape(), std::vector<double>(gv.data(), gv.data() + n));
      return qd.value(xv);
    };
    const auto observe = [&](std::size_t, const Tensor& x, double) { feasible &= box.contains(x); };
    OptimizerOptions opts;
    opts.max_iterations = 2000;
    const MinimizeResult r = lbfgsb_minimize(objective, start, box, opts, observe);
    const double want = oracle::projected_gradient_reference(qd, box);
    worst = std::max(worst, std::abs(r.objective - want) / std::max(1.0, std::abs(want)));
  }
  return {worst <= kQuadTol && feasible, std::to_string(kQuadratics) + " quadratics, worst objective gap " + fmt(worst) +
                                             (feasible ? ", all iterates feasible" : ", INFEASIBLE iterate")};
}

Outcome a3() {
  const auto& r = a3_run();
  const auto v = ratios(r, "fc2", kDelta);
  const double med = median(v);
  const double below = v.empty() ? 0.0
                                  : double(std::count_if(v.begin(), v.end(), [](double x) { return x < kA3Below; })) /
                                        double(v.size());
  return {errors(r) == 0 && v.size() == kPairs && med <= kA3Median && below >= kA3Fraction,
          "median ratio " + fmt(med) + ", fraction below 0.8 " + fmt(below) + ", errors " + std::to_string(errors(r))};
}

Outcome a4() {
  ExperimentSettings s = base_settings(Generator::feature_opt, kSweepPairs);
  s.deltas = {5, 10, 15, 20, 25};
  s.analyses = only_distances();
  const ExperimentReport sweep = run_pairs(refnet(), corpus(), s);
  std::vector<double> meds;
  std::string detail = "fc2 medians over delta 5..25:";
  for (double d : s.deltas) {
    meds.push_back(median(ratios(sweep, "fc2", d)));
    detail += " " + fmt(meds.back());
  }
  std::size_t inversions = 0;
  bool within = true;
  for (std::size_t i = 1; i < meds.size(); ++i)
    if (meds[i] > meds[i - 1]) {
      ++inversions;
      within &= meds[i] - meds[i - 1] <= kSweepSlack;
    }
  s.deltas = {kDelta};
  s.layers = {"conv1"};
  const ExperimentReport shallow = run_pairs(refnet(), corpus(), s);
  const double deep = median(ratios(sweep, "fc2", kDelta));
  const double low = median(ratios(shallow, "conv1", kDelta));
  detail += "; delta 10: fc2 " + fmt(deep) + " vs conv1 " + fmt(low);
  return {errors(sweep) == 0 && errors(shallow) == 0 && inversions <= kSweepInversions && within && deep <= low, detail};
}

Outcome a5() {
  ExperimentSettings s = base_settings(Generator::feature_linear, kPairs);
  s.analyses = only_distances();
  const ExperimentReport lin = run_pairs(refnet(), corpus(), s);
  const auto& opt = a3_run();
  const auto lv = ratios(lin, "fc2", kDelta), ov = ratios(opt, "fc2", kDelta);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < std::min(lv.size(), ov.size()); ++i) wins += ov[i] < lv[i];
  const double lm = median(lv), om = median(ov);
  return {errors(lin) == 0 && lv.size() == kPairs && lm >= kA5LinearMedian && om <= kA5OptMedian && wins >= kA5Wins,
          "feature-linear median " + fmt(lm) + " (need >= 0.75), feature-opt median " + fmt(om) +
              ", feature-opt closer on " + std::to_string(wins) + "/" + std::to_string(lv.size())};
}

Outcome a6() {
  const auto& r = a3_run();
  std::size_t nn1 = 0, full = 0, n = 0;
  std::vector<double> diffs;
  for (const auto& row : r.rows) {
    if (!row.ranks) continue;
    ++n;
    nn1 += row.guide_is_nn1.value_or(false);
    full += row.ranks->nn_intersection == 3;
    diffs.push_back(row.ranks->rank_diff);
  }
  const double f1 = n ? double(nn1) / double(n) : 0.0, f3 = n ? double(full) / double(n) : 0.0;
  const double md = median(diffs);
  return {n == kPairs && f1 >= kA6Nn1 && f3 >= kA6Intersection && md <= 0.0,
          "guide is 1-NN in " + fmt(100 * f1) + "%, 3NN intersection = 3 in " + fmt(100 * f3) +
              "%, median rank_diff " + fmt(md)};
}

Outcome a7() {
  const auto& r = a3_run();
  std::vector<double> la, lf, oa, of;
  std::size_t evaluated = 0, positive = 0;
  for (const auto& row : r.rows) {
    if (!row.manifold || !row.angular) continue;
    const auto& m = *row.manifold;
    la.push_back(m.delta_loglik_alpha);
    lf.insert(lf.end(), m.delta_loglik_nf.begin(), m.delta_loglik_nf.end());
    for (double v : m.delta_loglik_nc) evaluated += 1, positive += v > 0.0;
    for (double v : m.delta_loglik_nf) evaluated += 1, positive += v > 0.0;
    evaluated += 1, positive += m.delta_loglik_alpha > 0.0;
    oa.push_back(row.angular->omega_alpha);
    of.insert(of.end(), row.angular->omega_nf.begin(), row.angular->omega_nf.end());
  }
  const double mla = median(la), mlf = median(lf), moa = median(oa), mof = median(of);
  return {la.size() == kPairs && positive == 0 && mla >= mlf && moa >= mof,
          std::to_string(evaluated) + " points, " + std::to_string(positive) + " with dL > 0; median dL alpha " +
              fmt(mla) + " vs N_f " + fmt(mlf) + "; median Omega alpha " + fmt(moa) + " vs N_f " + fmt(mof)};
}

Outcome a8() {
  const Corpus c = generate_corpus(5, 10, kOracleCorpusPerClass);
  const NeighborIndex ix = build_index(refnet(), c, "fc2", Metric::euclidean);
  const NeighborIndex cos = build_index(refnet(), c, "fc2", Metric::cosine);
  std::size_t knn_bad = 0, rank_bad = 0, inter_bad = 0, sets_bad = 0;
  double ppca_worst = 0.0;
  Rng rng(808);
  for (std::size_t i = 0; i < ix.size(); ++i) {
    for (const NeighborIndex* index : {&ix, &cos})
      knn_bad += index->nearest_to_row(i, 3) != oracle::naive_knn(*index, index->row(i), 3, {i});
    const std::size_t ex[] = {i};
    rank_bad += rank_percentile(ix, ix.row(i).data(), ix.label(i), 3, ex) !=
                oracle::naive_percentile(ix, ix.row(i), ix.label(i), 3, {i});
    // An alpha near the guide: the representation of another image.
    const std::size_t j = rng.below(ix.size());
    const RankReport rr = rank_report(ix, ix.row(j).data(), i, 3);
    const auto na = oracle::naive_knn(ix, ix.row(j), 3, {i}), ng = oracle::naive_knn(ix, ix.row(i), 3, {i});
    std::size_t shared = 0;
    for (auto a : na) shared += std::count(ng.begin(), ng.end(), a);
    inter_bad += rr.nn_intersection != shared;
    rank_bad += rr.rank_alpha != oracle::naive_percentile(ix, ix.row(j), ix.label(i), 3, {i});
  }
  for (std::size_t t = 0; t < 20; ++t) {
    const std::size_t g = rng.below(ix.size());
    const NeighborSets sets = neighbor_sets(ix, g, t);
    const auto top = oracle::naive_knn(cos, cos.row(g), 50, {g});
    std::set<std::size_t> near(sets.n_ref.begin(), sets.n_ref.end());
    near.insert(sets.n_c.begin(), sets.n_c.end());
    sets_bad += near != std::set<std::size_t>(top.begin(), top.begin() + 20);
    sets_bad += std::set<std::size_t>(sets.n_f.begin(), sets.n_f.end()) != std::set<std::size_t>(top.begin() + 40, top.end());
    std::vector<Tensor> ref, queries;
    for (auto i : sets.n_ref) ref.push_back(ix.row(i));
    for (auto i : sets.n_c) queries.push_back(ix.row(i));
    for (auto i : sets.n_f) queries.push_back(ix.row(i));
    const auto got = ppca_delta_loglik(ref, ix.row(g), queries, 10);
    const auto want = oracle::dense_ppca(ref, ix.row(g), queries, 10);
    for (std::size_t k = 0; k < got.size(); ++k)
      ppca_worst = std::max(ppca_worst, std::abs(got[k] - want[k]) / std::max(1.0, std::abs(want[k])));
  }
  return {knn_bad == 0 && rank_bad == 0 && inter_bad == 0 && sets_bad == 0 && ppca_worst <= kPpcaTol,
          "200-point corpus: kNN mismatches " + std::to_string(knn_bad) + ", rank mismatches " +
              std::to_string(rank_bad) + ", 3NN mismatches " + std::to_string(inter_bad) + ", neighbor-set mismatches " +
              std::to_string(sets_bad) + ", worst PPCA dL rel. error " + fmt(ppca_worst)};
}

Outcome a9() {
  ExperimentSettings s = base_settings(Generator::label_fgrad, kPairs);
  s.analyses = {false, false, false, false, true};
  const ExperimentReport label = run_pairs(refnet(), corpus(), s);
  std::vector<double> fi, li;
  for (const auto& row : a3_run().rows)
    if (row.sparsity) fi.push_back(row.sparsity->iou);
  for (const auto& row : label.rows)
    if (row.sparsity) li.push_back(row.sparsity->iou);
  const double mf = median(fi), ml = median(li);
  return {fi.size() == kPairs && li.size() == kPairs && mf < ml,
          "median fc2 I/U with the source: feature-opt " + fmt(mf) + "%, label-fgrad " + fmt(ml) + "%"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome a10() {
  std::vector<std::string> problems;
  // CLI reproducibility.
  const fs::path root = fs::temp_directory_path() / "fadv_acceptance_a10";
  fs::remove_all(root);
  const std::vector<std::string> commands{
      "net init --out {d}/net.fadv --seed 7",
      "net init --out {d}/gauss.fadv --seed 3 --scheme gaussian --head-classes 0",
      "corpus gen --out {d}/c.fcrp --seed 9 --classes 10 --per-class 10",
      "adv feature-opt --net {d}/net.fadv --corpus {d}/c.fcrp --source-id 2 --guide-id 55 --iterations 40 "
      "--out {d}/fo.ftns --trajectory {d}/fo.csv",
      "adv feature-linear --net {d}/net.fadv --corpus {d}/c.fcrp --source-id 2 --guide-id 55 --iterations 40 "
      "--out {d}/fl.ppm",
      "adv feat-fgrad --net {d}/net.fadv --corpus {d}/c.fcrp --source-id 2 --guide-id 55 --out {d}/ff.ftns",
      "adv label-fgrad --net {d}/net.fadv --corpus {d}/c.fcrp --source-id 2 --label 3 --out {d}/lf.ftns",
      "invert --net {d}/net.fadv --target {d}/fo.ftns --iterations 30 --seed 4 --out {d}/inv.ftns",
      "experiment run --net {d}/net.fadv --corpus {d}/c.fcrp --pairs 3 --iterations 30 --deltas 5,10 --threads 2 "
      "--out {d}/exp",
  };
  for (const char* run_dir : {"a", "b"}) {
    const fs::path d = root / run_dir;
    fs::create_directories(d);
    for (std::string cmd : commands) {
      for (std::size_t p; (p = cmd.find("{d}")) != std::string::npos;) cmd.replace(p, 3, d.string());
      const int status = std::system((std::string(FADV_CLI_PATH) + " " + cmd + " > /dev/null 2>&1").c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) problems.push_back("command failed: " + cmd);
    }
  }
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), root / "a");
    if (slurp(e.path()) != slurp(root / "b" / rel)) problems.push_back("not reproducible: " + rel.string());
  }
  // Round-trips.
  const std::string net_bytes = encode_network(refnet());
  if (!(decode_network(net_bytes) == refnet()) || encode_network(decode_network(net_bytes)) != net_bytes)
    problems.push_back("FADVNET1 round-trip");
  const Corpus& c = corpus();
  const std::string corpus_bytes = encode_corpus(c);
  if (!(decode_corpus(corpus_bytes) == c) || encode_corpus(decode_corpus(corpus_bytes)) != corpus_bytes)
    problems.push_back("FCRP1 round-trip");
  Rng rng(1010);
  for (int i = 0; i < 20; ++i) {
    const Tensor t = test::random_tensor(rng, {3, 1 + rng.below(9), 1 + rng.below(9)}, -1e9, 1e9);
    if (!test::bit_equal(decode_tensor(encode_tensor(t)), t)) problems.push_back("FTNS1 round-trip");
  }
  const std::string header =
      "pair_id,source_id,guide_id,layer,delta,generator,iterations_used,final_objective,r_guide,r_guide_nn,"
      "r_source,rank_alpha,rank_guide,rank_diff,nn_intersection,rank_nn1_alpha,delta_loglik_alpha,omega_alpha,"
      "label_source,label_alpha,label_guide,error\n";
  if (format_csv(ExperimentReport{}) != header) problems.push_back("CSV header");
  const std::string csv = slurp(root / "a" / "exp" / "pairs.csv");
  if (csv.compare(0, header.size(), header) != 0) problems.push_back("CLI CSV header");
  std::string detail = std::to_string(commands.size()) + " CLI commands x2, " + std::to_string(files) +
                       " output files compared; network, corpus and tensor round-trips; CSV header";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty() && files >= commands.size(), detail};
}

Outcome s1() {
  Rng rng(6);
  std::size_t success = 0;
  for (std::size_t k = 0; k < kLabelOptTrials; ++k) {
    const Tensor& img = corpus().images[rng.below(corpus().size())];
    const std::size_t own = classify(refnet(), img).label;
    std::size_t target = rng.below(9);
    if (target >= own) ++target;
    try {
      label_opt(refnet(), img, target, AdvConfig{});
      ++success;
    } catch (const NoAdversaryError&) {
    }
  }
  return {success >= kLabelOptSuccesses,
          "label-opt reached the target on " + std::to_string(success) + "/" + std::to_string(kLabelOptTrials) +
              " (image, wrong label) pairs"};
}

Outcome s2() {
  const InversionResult r =
      invert_representation(refnet(), representation(refnet(), corpus().images[0], "fc2"), InversionConfig{});
  return {r.data_term < kInversionDataTerm,
          "fc2 inversion normalized data term " + fmt(r.data_term_initial) + " -> " + fmt(r.data_term)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    std::function<Outcome()> run;
    bool counts;
  };
  const std::vector<Criterion> criteria{
      {"A1", "gradient correctness", a1, true},
      {"A2", "optimizer correctness", a2, true},
      {"A3", "feature-opt efficacy", a3, true},
      {"A4", "delta and depth trends", a4, true},
      {"A5", "linearized adversary contrast", a5, true},
      {"A6", "nearest-neighbor proximity", a6, true},
      {"A7", "manifold and angular inliers", a7, true},
      {"A8", "statistics oracles", a8, true},
      {"A9", "sparsity direction", a9, true},
      {"A10", "determinism and formats", a10, true},
      {"S1", "label-opt flip rate (supplementary)", s1, false},
      {"S2", "fc2 inversion (supplementary)", s2, false},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-4s %s  %s: %s [%.1fs]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass && c.counts) ++failed;
  }
  std::printf("%d of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
