// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/params.hpp"
#include "dlab/tape.hpp"

namespace dlab {

enum class LayerKind { kDense, kConv2d, kRelu, kFlatten };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in = 0;      // dense inputs, conv input channels
  std::size_t out = 0;     // dense outputs, conv output channels
  std::size_t kernel = 0;  // conv only

  bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
  Shape input;  // per-sample shape, e.g. {1, 16, 16} or {8}
  std::vector<LayerSpec> layers;
  std::size_t class_count = 0;
  std::size_t feature_tap = 0;  // layer whose output is the intermediate feature

  // Per-sample output shape of every layer; throws kValidation if the layers
  // do not compose or the head does not produce class_count values.
  std::vector<Shape> layer_shapes() const;
  std::size_t feature_size() const;

  // "conv2d(1,8,3),relu,flatten,dense(1568,64),relu,dense(64,4)"
  std::string layer_string() const;
  // Self-contained descriptor stored in checkpoints.
  std::string describe() const;
  static Architecture from_description(std::string_view text);

  bool operator==(const Architecture&) const = default;
};

// Parses a whitespace- or comma-separated layer list such as
// "conv2d(1,8,3) relu flatten dense(*,64) relu dense(64,4)". "*" infers the
// width from the preceding layer. The names "teacher", "surrogate" and
// "student" expand to the stock architectures.
Architecture parse_architecture(std::string_view text, const Shape& input, std::size_t class_count);

Architecture teacher_architecture(const Shape& input, std::size_t class_count);
Architecture surrogate_architecture(const Shape& input, std::size_t class_count);
Architecture student_architecture(const Shape& input, std::size_t class_count);

std::shared_ptr<const ParamLayout> make_layout(const Architecture& arch);

struct NetworkVars {
  Var logits;
  Var features;
};

class Network {
 public:
  Network(Architecture arch, ParamVector params);

  // Glorot-uniform weights, zero biases.
  static Network init(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  std::size_t class_count() const noexcept { return arch_.class_count; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& params() noexcept { return params_; }
  void set_params(ParamVector params);

  // Records the forward pass; `params` are the per-entry leaves from bind().
  template <class S>
  NetworkVars build(Tape<S>& tape, std::span<const Var> params, Var input) const;

  struct Output {
    Tensor logits;
    Tensor features;
  };
  Output forward(const Tensor& batch) const;
  Tensor logits(const Tensor& batch) const;

 private:
  Architecture arch_;
  ParamVector params_;
};

extern template NetworkVars Network::build(Tape<double>&, std::span<const Var>, Var) const;
extern template NetworkVars Network::build(Tape<Dual>&, std::span<const Var>, Var) const;

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace dlab
