#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fadv/layers.hpp"
#include "fadv/tensor.hpp"

namespace fadv {

struct NamedLayer {
  std::string name;
  LayerPrimitive layer;

  friend bool operator==(const NamedLayer&, const NamedLayer&) = default;
};

struct NetworkSpec {
  Shape input_shape;  // channels x height x width
  std::vector<NamedLayer> layers;
  std::optional<std::size_t> head_classes;

  /// Throws SpecError on duplicate/reserved names, failed shape inference or
  /// a head whose width does not match the last layer.
  void validate() const;
  /// Output shape of every layer, in order.
  std::vector<Shape> layer_shapes() const;
  /// Index of the named layer; throws SpecError if absent.
  std::size_t index_of(const std::string& name) const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Desk-scale conv/norm/pool/fc reference network on 3x32x32 images.
/// Linear layers are named `<name>_pre`; the post-ReLU activation carries the
/// plain name (conv1, conv2, fc1, fc2). With a head, `fc3` produces the class
/// scores.
NetworkSpec refnet32_spec(std::optional<std::size_t> head_classes = 10);

enum class InitScheme { gaussian, orthonormal };

std::string to_string(InitScheme scheme);
InitScheme parse_init_scheme(const std::string& name);

struct InitRecord {
  std::uint64_t seed = 0;
  InitScheme scheme = InitScheme::gaussian;

  friend bool operator==(const InitRecord&, const InitRecord&) = default;
};

/// Per-layer activations in layer order.
class ActivationTrace {
 public:
  void add(std::string name, Tensor activation);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& activations() const { return activations_; }

  /// Class scores (the last activation) when the network has a head.
  std::optional<Tensor> scores;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> activations_;
};

/// Immutable after construction; every query is const and reentrant.
class Network {
 public:
  Network(NetworkSpec spec, std::map<std::string, LayerParams> params, InitRecord init);

  const NetworkSpec& spec() const { return spec_; }
  const InitRecord& init_record() const { return init_; }
  const std::map<std::string, LayerParams>& all_params() const { return params_; }
  /// nullptr for parameter-free layers.
  const LayerParams* params(const std::string& layer) const;

  std::size_t representation_size(const std::string& layer) const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  NetworkSpec spec_;
  std::map<std::string, LayerParams> params_;
  InitRecord init_;
};

Network init_network(const NetworkSpec& spec, std::uint64_t seed, InitScheme scheme);

/// Shape must equal the spec input and pixels must lie in [0, 255].
void validate_image(const Network& net, const Tensor& image);

ActivationTrace forward_trace(const Network& net, const Tensor& image);
/// Flattened activation of `layer`.
Tensor representation(const Network& net, const Tensor& image, const std::string& layer);
/// Gradient of <cotangent, representation(image)> with respect to the image.
Tensor representation_vjp(const Network& net, const Tensor& image, const std::string& layer,
                          const Tensor& cotangent);
/// Directional derivative of the representation along `tangent`.
Tensor representation_jvp(const Network& net, const Tensor& image, const std::string& layer,
                          const Tensor& tangent);

/// Forward pass up to one layer with every layer input cached, so that
/// repeated VJPs/JVPs at the same point cost one backward/forward sweep each.
/// Performs no pixel-range check (the inversion evaluates scaled images).
class Linearization {
 public:
  Linearization(const Network& net, const Tensor& image, const std::string& layer);

  /// Flattened representation at the linearization point.
  const Tensor& value() const { return value_; }
  Tensor vjp(const Tensor& cotangent) const;
  Tensor jvp(const Tensor& tangent) const;

 private:
  const Network* net_;
  std::size_t last_;
  std::vector<Tensor> inputs_;  // input of layer i
  Tensor value_;
};

struct Classification {
  std::size_t label = 0;
  Tensor scores;
};

/// Index of the largest score, lowest index on ties.
std::size_t argmax(std::span<const double> scores);
Classification classify(const Network& net, const Tensor& image);

/// Softmax cross-entropy of `scores` toward `label`, optionally with its
/// gradient with respect to the scores.
double cross_entropy(const Tensor& scores, std::size_t label, Tensor* grad = nullptr);

/// Canonical text form of the spec plus init record (one layer per line).
std::string spec_text(const NetworkSpec& spec, const InitRecord& init);
NetworkSpec parse_spec_text(const std::string& text, InitRecord* init = nullptr);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);
std::string encode_network(const Network& net);
Network decode_network(const std::string& bytes);

}  // namespace fadv
