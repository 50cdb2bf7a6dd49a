#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "fadv/adversary.hpp"
#include "fadv/analysis.hpp"
#include "fadv/corpus.hpp"
#include "fadv/error.hpp"
#include "fadv/experiment.hpp"
#include "fadv/formats.hpp"
#include "fadv/inversion.hpp"
#include "fadv/network.hpp"

using json = nlohmann::ordered_json;
using namespace fadv;

namespace {

constexpr int kSetupError = 1;
constexpr int kArgError = 2;

// Where an image comes from: a file, or an id into the corpus.
struct ImageArg {
  std::string path;
  std::optional<std::size_t> id;
};

struct CorpusArg {
  std::string path;
  std::uint64_t seed = 1;

  Corpus load() const { return path.empty() ? generate_corpus(seed) : load_corpus(path); }
};

void add_corpus_flags(CLI::App* cmd, CorpusArg& c) {
  cmd->add_option("--corpus", c.path, "Corpus file (FCRP1); generated from --corpus-seed when omitted");
  cmd->add_option("--corpus-seed", c.seed, "Seed of the generated default corpus")->capture_default_str();
}

Tensor load_image(const ImageArg& a, const std::optional<Corpus>& corpus, const char* what) {
  if (!a.path.empty() && a.id) throw PreconditionError(std::string("give either a file or an id for the ") + what);
  if (!a.path.empty()) return read_image(a.path);
  if (!a.id) throw PreconditionError(std::string("missing ") + what + " image");
  if (*a.id >= corpus->size()) throw PreconditionError(std::string(what) + " id out of range");
  return corpus->images[*a.id];
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

json trajectory_json(const AdvResult& r) {
  json t = json::array();
  for (const auto& p : r.trajectory) t.push_back({{"iteration", p.iteration}, {"objective", p.objective}, {"ratio", p.ratio}});
  return t;
}

std::string csv_number(double v) {
  char buf[64];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

void write_trajectory(const AdvResult& r, const std::string& path) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "iteration,objective,ratio\n";
  for (const auto& p : r.trajectory) f << p.iteration << "," << csv_number(p.objective) << "," << csv_number(p.ratio) << "\n";
}

template <class T>
std::vector<T> split_list(const std::string& s, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    const std::string item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(parse(item));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::string identity(const std::string& s) { return s; }
double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw PreconditionError("not a number: '" + s + "'");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature adversaries: generation, analysis and inversion on small random networks"};
  app.require_subcommand(1);
  std::function<void()> action;

  // net
  auto* net_cmd = app.add_subcommand("net", "Create or inspect networks")->require_subcommand(1);
  struct {
    std::string out, net;
    std::uint64_t seed = 7;
    std::string scheme = "orthonormal";
    std::size_t head = 10;
  } net_opts;
  auto* net_init = net_cmd->add_subcommand("init", "Initialize refnet-32 and save it (FADVNET1)");
  net_init->add_option("--out", net_opts.out, "Output network file")->required();
  net_init->add_option("--seed", net_opts.seed, "Initialization seed")->capture_default_str();
  net_init->add_option("--scheme", net_opts.scheme, "orthonormal | gaussian")->capture_default_str();
  net_init->add_option("--head-classes", net_opts.head, "Classes of the scoring head; 0 for none")->capture_default_str();
  net_init->callback([&] {
    action = [&] {
      const auto spec = refnet32_spec(net_opts.head ? std::optional<std::size_t>(net_opts.head) : std::nullopt);
      save_network(init_network(spec, net_opts.seed, parse_init_scheme(net_opts.scheme)), net_opts.out);
    };
  });
  auto* net_desc = net_cmd->add_subcommand("describe", "Print the architecture of a network file");
  net_desc->add_option("--net", net_opts.net, "Network file")->required();
  net_desc->callback([&] {
    action = [&] {
      const Network net = load_network(net_opts.net);
      const auto& spec = net.spec();
      const auto shapes = spec.layer_shapes();
      json layers = json::array();
      std::size_t params = 0;
      for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        std::size_t n = 0;
        if (const auto* p = net.params(spec.layers[i].name)) n = p->weight.size() + p->bias.size();
        params += n;
        layers.push_back({{"name", spec.layers[i].name},
                          {"kind", to_string(spec.layers[i].layer.kind)},
                          {"output_shape", shapes[i]},
                          {"parameters", n}});
      }
      print({{"input_shape", spec.input_shape},
             {"head_classes", spec.head_classes ? json(*spec.head_classes) : json(nullptr)},
             {"init_seed", net.init_record().seed},
             {"init_scheme", to_string(net.init_record().scheme)},
             {"parameters", params},
             {"layers", layers}});
    };
  });

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "Generate or inspect synthetic corpora")->require_subcommand(1);
  struct {
    std::string out, path;
    std::uint64_t seed = 1;
    std::size_t classes = 10, per_class = 40, size = 32, channels = 3;
  } corpus_opts;
  auto* corpus_gen = corpus_cmd->add_subcommand("gen", "Generate a labeled synthetic corpus (FCRP1)");
  corpus_gen->add_option("--out", corpus_opts.out, "Output corpus file")->required();
  corpus_gen->add_option("--seed", corpus_opts.seed, "Generator seed")->capture_default_str();
  corpus_gen->add_option("--classes", corpus_opts.classes, "Number of classes")->capture_default_str();
  corpus_gen->add_option("--per-class", corpus_opts.per_class, "Images per class")->capture_default_str();
  corpus_gen->add_option("--size", corpus_opts.size, "Image height and width")->capture_default_str();
  corpus_gen->add_option("--channels", corpus_opts.channels, "Image channels")->capture_default_str();
  corpus_gen->callback([&] {
    action = [&] {
      save_corpus(generate_corpus(corpus_opts.seed, corpus_opts.classes, corpus_opts.per_class,
                                  {corpus_opts.channels, corpus_opts.size, corpus_opts.size}),
                  corpus_opts.out);
    };
  });
  auto* corpus_desc = corpus_cmd->add_subcommand("describe", "Summarize a corpus file");
  corpus_desc->add_option("--corpus", corpus_opts.path, "Corpus file")->required();
  corpus_desc->callback([&] {
    action = [&] {
      const Corpus c = load_corpus(corpus_opts.path);
      json classes = json::array();
      for (std::size_t k = 0; k < c.provenance.classes; ++k) {
        double mean = 0;
        const auto m = c.members(k);
        for (auto i : m)
          for (double v : c.images[i].data()) mean += v;
        mean /= static_cast<double>(m.size() * shape_size(c.image_shape));
        classes.push_back({{"class", k}, {"family", family_names()[k % family_names().size()]},
                           {"images", m.size()}, {"mean_pixel", mean}});
      }
      print({{"seed", c.provenance.seed}, {"classes", c.provenance.classes}, {"per_class", c.provenance.per_class},
             {"image_shape", c.image_shape}, {"images", c.size()}, {"class_summary", classes}});
    };
  });

  // adv
  auto* adv_cmd = app.add_subcommand("adv", "Generate one adversarial image")->require_subcommand(1);
  struct {
    std::string net, out, trajectory;
    CorpusArg corpus;
    ImageArg source, guide;
    std::string layer = "fc2";
    double delta = 10.0;
    std::size_t iterations = 500;
    std::size_t label = 0;
  } adv;
  const auto common_adv = [&](CLI::App* c, bool needs_guide, bool needs_label) {
    c->add_option("--net", adv.net, "Network file")->required();
    c->add_option("--out", adv.out, "Output image (.ppm for 8-bit PPM, otherwise FTNS1)")->required();
    c->add_option("--source", adv.source.path, "Source image file");
    c->add_option("--source-id", adv.source.id, "Source image index into the corpus");
    if (needs_guide) {
      c->add_option("--guide", adv.guide.path, "Guide image file");
      c->add_option("--guide-id", adv.guide.id, "Guide image index into the corpus");
      c->add_option("--layer", adv.layer, "Layer whose representation is matched")->capture_default_str();
    }
    if (needs_label) c->add_option("--label", adv.label, "Target label")->required();
    c->add_option("--delta", adv.delta, "L-infinity budget in pixel units")->capture_default_str();
    add_corpus_flags(c, adv.corpus);
  };
  const auto needs_corpus = [&] { return adv.source.id.has_value() || adv.guide.id.has_value(); };
  for (const std::string gen : {"feature-opt", "feature-linear"}) {
    auto* c = adv_cmd->add_subcommand(gen, gen == "feature-opt"
                                               ? "Match the guide representation inside the delta box"
                                               : "Same, against the first-order expansion at the source");
    common_adv(c, true, false);
    c->add_option("--iterations", adv.iterations, "Optimizer iteration limit")->capture_default_str();
    c->add_option("--trajectory", adv.trajectory, "Write the per-iteration trajectory as CSV");
    c->callback([&, gen] {
      action = [&, gen] {
        const Network net = load_network(adv.net);
        std::optional<Corpus> corpus;
        if (needs_corpus()) corpus = adv.corpus.load();
        const Tensor s = load_image(adv.source, corpus, "source"), g = load_image(adv.guide, corpus, "guide");
        AdvConfig cfg;
        cfg.delta = adv.delta;
        cfg.layer = adv.layer;
        cfg.max_iterations = adv.iterations;
        const AdvResult r = gen == "feature-opt" ? feature_opt(net, s, g, cfg) : feature_linear(net, s, g, cfg);
        write_image(r.adversarial_image, adv.out);
        write_trajectory(r, adv.trajectory);
        print({{"generator", gen}, {"layer", adv.layer}, {"delta", adv.delta}, {"iterations", r.iterations},
               {"termination", to_string(r.termination)}, {"final_objective", r.final_objective},
               {"final_ratio", r.final_ratio}, {"perturbation_linf", norm_inf(r.perturbation)}});
      };
    });
  }
  {
    auto* c = adv_cmd->add_subcommand("feat-fgrad", "One signed step toward the guide representation");
    common_adv(c, true, false);
    c->callback([&] {
      action = [&] {
        const Network net = load_network(adv.net);
        std::optional<Corpus> corpus;
        if (needs_corpus()) corpus = adv.corpus.load();
        const Tensor s = load_image(adv.source, corpus, "source"), g = load_image(adv.guide, corpus, "guide");
        const Tensor a = feat_fgrad(net, s, g, adv.layer, adv.delta);
        write_image(a, adv.out);
        const Tensor rg = representation(net, g, adv.layer);
        print({{"generator", "feat-fgrad"}, {"layer", adv.layer}, {"delta", adv.delta},
               {"final_ratio", distance(representation(net, a, adv.layer).data(), rg.data()) /
                                   distance(representation(net, s, adv.layer).data(), rg.data())}});
      };
    });
  }
  {
    auto* c = adv_cmd->add_subcommand("label-fgrad", "One signed step toward a target label");
    common_adv(c, false, true);
    c->callback([&] {
      action = [&] {
        const Network net = load_network(adv.net);
        std::optional<Corpus> corpus;
        if (needs_corpus()) corpus = adv.corpus.load();
        const Tensor s = load_image(adv.source, corpus, "source");
        const Tensor a = label_fgrad(net, s, adv.label, adv.delta);
        write_image(a, adv.out);
        const Classification cs = classify(net, s), ca = classify(net, a);
        print({{"generator", "label-fgrad"}, {"delta", adv.delta}, {"target", adv.label},
               {"label_source", cs.label}, {"label_alpha", ca.label},
               {"cross_entropy_source", cross_entropy(cs.scores, adv.label)},
               {"cross_entropy_alpha", cross_entropy(ca.scores, adv.label)}});
      };
    });
  }
  {
    auto* c = adv_cmd->add_subcommand("label-opt", "Penalized misclassification with a search over the penalty");
    common_adv(c, false, true);
    c->add_option("--iterations", adv.iterations, "Optimizer iteration limit per penalty")->capture_default_str();
    c->add_option("--trajectory", adv.trajectory, "Write the trajectory of the selected run as CSV");
    c->callback([&] {
      action = [&] {
        const Network net = load_network(adv.net);
        std::optional<Corpus> corpus;
        if (needs_corpus()) corpus = adv.corpus.load();
        const Tensor s = load_image(adv.source, corpus, "source");
        AdvConfig cfg;
        cfg.max_iterations = adv.iterations;
        const LabelOptResult r = label_opt(net, s, adv.label, cfg);
        write_image(r.adv.adversarial_image, adv.out);
        write_trajectory(r.adv, adv.trajectory);
        print({{"generator", "label-opt"}, {"target", adv.label}, {"penalty", r.penalty}, {"runs", r.runs},
               {"successes", r.successes}, {"iterations", r.adv.iterations},
               {"perturbation_l2", norm2(r.adv.perturbation)}, {"perturbation_linf", norm_inf(r.adv.perturbation)}});
      };
    });
  }

  // analyze
  auto* an_cmd = app.add_subcommand("analyze", "Statistics of an adversarial image against the corpus")
                     ->require_subcommand(1);
  struct {
    std::string net, alpha, layer = "fc2", layers = "conv1,conv2,fc1,fc2";
    CorpusArg corpus;
    std::size_t source_id = 0, guide_id = 0, k = 3, q = 10;
    std::uint64_t seed = 0;
    std::string metric = "euclidean";
  } an;
  const auto common_an = [&](CLI::App* c, bool source, bool guide) {
    c->add_option("--net", an.net, "Network file")->required();
    c->add_option("--alpha", an.alpha, "Adversarial image file")->required();
    if (source) c->add_option("--source-id", an.source_id, "Source image index")->required();
    if (guide) c->add_option("--guide-id", an.guide_id, "Guide image index")->required();
    add_corpus_flags(c, an.corpus);
  };
  const auto index_for = [&](const Network& net, const Corpus& c, Metric m) {
    return build_index(net, c, an.layer, m);
  };
  {
    auto* c = an_cmd->add_subcommand("distances", "Euclidean distance ratios");
    common_an(c, true, true);
    c->add_option("--layer", an.layer, "Representation layer")->capture_default_str();
    c->callback([&] {
      action = [&] {
        const Network net = load_network(an.net);
        const Corpus corpus = an.corpus.load();
        const auto ix = index_for(net, corpus, Metric::euclidean);
        const auto r = distance_ratios(ix, representation(net, read_image(an.alpha), an.layer).data(), an.source_id, an.guide_id);
        print({{"layer", an.layer}, {"r_guide", r.r_guide}, {"r_guide_nn", r.r_guide_nn}, {"r_source", r.r_source}});
      };
    });
  }
  {
    auto* c = an_cmd->add_subcommand("ranks", "kNN rank percentiles and neighbor overlap");
    common_an(c, false, true);
    c->add_option("--layer", an.layer, "Representation layer")->capture_default_str();
    c->add_option("--k", an.k, "Neighbors per score")->capture_default_str();
    c->add_option("--metric", an.metric, "euclidean | cosine")->capture_default_str();
    c->callback([&] {
      action = [&] {
        if (an.metric != "euclidean" && an.metric != "cosine") throw PreconditionError("unknown metric " + an.metric);
        const Network net = load_network(an.net);
        const Corpus corpus = an.corpus.load();
        const auto ix = index_for(net, corpus, an.metric == "cosine" ? Metric::cosine : Metric::euclidean);
        const Tensor a = representation(net, read_image(an.alpha), an.layer);
        const auto r = rank_report(ix, a.data(), an.guide_id, an.k);
        print({{"layer", an.layer}, {"k", an.k}, {"metric", an.metric}, {"rank_alpha", r.rank_alpha},
               {"rank_guide", r.rank_guide}, {"rank_diff", r.rank_diff}, {"nn_intersection", r.nn_intersection},
               {"rank_nn1_alpha", r.rank_nn1_alpha},
               {"nearest_with_guide", ix.nearest(a.data(), an.k)}});
      };
    });
  }
  {
    auto* c = an_cmd->add_subcommand("manifold", "PPCA log-likelihood relative to the guide");
    common_an(c, false, true);
    c->add_option("--layer", an.layer, "Representation layer")->capture_default_str();
    c->add_option("--q", an.q, "PPCA latent dimension")->capture_default_str();
    c->add_option("--seed", an.seed, "Reference-set sampling seed")->capture_default_str();
    c->callback([&] {
      action = [&] {
        const Network net = load_network(an.net);
        const Corpus corpus = an.corpus.load();
        const auto ix = index_for(net, corpus, Metric::euclidean);
        const auto sets = neighbor_sets(ix, an.guide_id, an.seed);
        const auto r = manifold_report(ix, sets, an.guide_id, representation(net, read_image(an.alpha), an.layer), an.q);
        print({{"layer", an.layer}, {"q", r.ppca_dim}, {"noise_variance", r.noise_variance},
               {"delta_loglik_alpha", r.delta_loglik_alpha}, {"delta_loglik_nc", r.delta_loglik_nc},
               {"delta_loglik_nf", r.delta_loglik_nf}, {"n_ref", sets.n_ref}, {"n_c", sets.n_c}, {"n_f", sets.n_f}});
      };
    });
  }
  {
    auto* c = an_cmd->add_subcommand("angular", "Angular consistency with the guide's neighborhood");
    common_an(c, false, true);
    c->add_option("--layer", an.layer, "Representation layer")->capture_default_str();
    c->add_option("--seed", an.seed, "Reference-set sampling seed")->capture_default_str();
    c->callback([&] {
      action = [&] {
        const Network net = load_network(an.net);
        const Corpus corpus = an.corpus.load();
        const auto ix = index_for(net, corpus, Metric::euclidean);
        const auto sets = neighbor_sets(ix, an.guide_id, an.seed);
        const auto r = angular_report(ix, sets, an.guide_id, representation(net, read_image(an.alpha), an.layer));
        print({{"layer", an.layer}, {"omega_alpha", r.omega_alpha}, {"omega_nc", r.omega_nc}, {"omega_nf", r.omega_nf}});
      };
    });
  }
  {
    auto* c = an_cmd->add_subcommand("sparsity", "Active-unit change and overlap between source and adversary");
    common_an(c, true, false);
    c->add_option("--layers", an.layers, "Comma-separated layers")->capture_default_str();
    c->callback([&] {
      action = [&] {
        const Network net = load_network(an.net);
        const Corpus corpus = an.corpus.load();
        if (an.source_id >= corpus.size()) throw PreconditionError("source id out of range");
        const auto r = sparsity_stats(forward_trace(net, corpus.images[an.source_id]),
                                      forward_trace(net, read_image(an.alpha)), split_list(an.layers, identity));
        json layers = json::array();
        for (const auto& l : r.layers) layers.push_back({{"layer", l.layer}, {"delta_s", l.delta_s}, {"iou", l.iou}});
        print({{"layers", layers}});
      };
    });
  }

  // invert
  struct {
    std::string net, target, target_rep, out;
    InversionConfig cfg;
    double sigma = 0;
  } inv;
  auto* inv_cmd = app.add_subcommand("invert", "Reconstruct an image from a layer representation");
  inv_cmd->add_option("--net", inv.net, "Network file")->required();
  inv_cmd->add_option("--out", inv.out, "Output image (.ppm or FTNS1)")->required();
  inv_cmd->add_option("--target", inv.target, "Image whose representation is inverted");
  inv_cmd->add_option("--target-rep", inv.target_rep, "Representation tensor (FTNS1) to invert");
  inv_cmd->add_option("--layer", inv.cfg.layer, "Representation layer")->capture_default_str();
  inv_cmd->add_option("--iterations", inv.cfg.iterations, "Gradient steps")->capture_default_str();
  inv_cmd->add_option("--lambda-alpha", inv.cfg.lambda_alpha, "Weight of the alpha-norm term")->capture_default_str();
  inv_cmd->add_option("--lambda-tv", inv.cfg.lambda_tv, "Weight of the total-variation term")->capture_default_str();
  inv_cmd->add_option("--alpha-exp", inv.cfg.alpha_exp, "Exponent of the alpha-norm term")->capture_default_str();
  inv_cmd->add_option("--beta-exp", inv.cfg.beta_exp, "Exponent of the total-variation term")->capture_default_str();
  inv_cmd->add_option("--sigma", inv.sigma, "Image scale; 0 means 255 * sqrt(element count)")->capture_default_str();
  inv_cmd->add_option("--step", inv.cfg.step_size, "Largest step size")->capture_default_str();
  inv_cmd->add_option("--momentum", inv.cfg.momentum, "Momentum")->capture_default_str();
  inv_cmd->add_option("--seed", inv.cfg.seed, "Initialization seed")->capture_default_str();
  inv_cmd->callback([&] {
    action = [&] {
      if (inv.target.empty() == inv.target_rep.empty())
        throw PreconditionError("give exactly one of --target and --target-rep");
      if (inv.sigma != 0) inv.cfg.sigma = inv.sigma;
      const Network net = load_network(inv.net);
      const Tensor rep = inv.target.empty() ? read_tensor(inv.target_rep)
                                            : representation(net, read_image(inv.target), inv.cfg.layer);
      const InversionResult r = invert_representation(net, rep, inv.cfg);
      write_image(r.image, inv.out);
      print({{"layer", inv.cfg.layer}, {"data_term_initial", r.data_term_initial}, {"data_term", r.data_term},
             {"objective", r.objective.back()}, {"accepted_steps", r.accepted_steps}});
    };
  });

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Batch experiments")->require_subcommand(1);
  struct {
    std::string net, out, layers = "fc2", deltas = "10", generator = "feature-opt";
    CorpusArg corpus;
    ExperimentSettings st;
    bool no_distances = false, no_ranks = false, no_manifold = false, no_angular = false, no_sparsity = false;
  } ex;
  auto* exp_run = exp_cmd->add_subcommand("run", "Run a generator over sampled pairs and write pairs.csv and summary.json");
  exp_run->add_option("--net", ex.net, "Network file")->required();
  exp_run->add_option("--out", ex.out, "Output directory")->required();
  add_corpus_flags(exp_run, ex.corpus);
  exp_run->add_option("--pairs", ex.st.pair_count, "Number of source/guide pairs")->capture_default_str();
  exp_run->add_option("--seed", ex.st.seed, "Pair sampling seed")->capture_default_str();
  exp_run->add_option("--layers", ex.layers, "Comma-separated layers")->capture_default_str();
  exp_run->add_option("--deltas", ex.deltas, "Comma-separated L-infinity budgets")->capture_default_str();
  exp_run->add_option("--generator", ex.generator,
                      "feature-opt | feature-linear | feat-fgrad | label-fgrad | label-opt")->capture_default_str();
  exp_run->add_option("--iterations", ex.st.max_iterations, "Optimizer iteration limit")->capture_default_str();
  exp_run->add_option("--k", ex.st.k, "Neighbors for rank statistics")->capture_default_str();
  exp_run->add_option("--q", ex.st.ppca_q, "PPCA latent dimension")->capture_default_str();
  exp_run->add_option("--threads", ex.st.threads, "Worker threads")->capture_default_str();
  exp_run->add_flag("--no-distances", ex.no_distances, "Skip distance ratios");
  exp_run->add_flag("--no-ranks", ex.no_ranks, "Skip rank statistics");
  exp_run->add_flag("--no-manifold", ex.no_manifold, "Skip PPCA log-likelihoods");
  exp_run->add_flag("--no-angular", ex.no_angular, "Skip angular consistency");
  exp_run->add_flag("--no-sparsity", ex.no_sparsity, "Skip sparsity statistics");
  exp_run->callback([&] {
    action = [&] {
      ExperimentPlan plan;
      plan.network_file = ex.net;
      if (!ex.corpus.path.empty()) plan.corpus_file = ex.corpus.path;
      plan.corpus_seed = ex.corpus.seed;
      plan.output_dir = ex.out;
      plan.settings = ex.st;
      plan.settings.layers = split_list(ex.layers, identity);
      plan.settings.deltas = split_list(ex.deltas, parse_double);
      plan.settings.generator = parse_generator(ex.generator);
      plan.settings.analyses = {!ex.no_distances, !ex.no_ranks, !ex.no_manifold, !ex.no_angular, !ex.no_sparsity};
      plan.settings.validate();
      const ExperimentReport r = run_experiment(plan);
      std::size_t errors = 0;
      for (const auto& row : r.rows) errors += !row.error.empty();
      print({{"rows", r.rows.size()}, {"errors", errors}, {"csv", (plan.output_dir / "pairs.csv").string()},
             {"summary", (plan.output_dir / "summary.json").string()}});
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kArgError;
  }
  try {
    action();
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kArgError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSetupError;
  }
  return 0;
}
