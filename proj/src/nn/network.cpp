// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/network.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

#include "dlab/checkpoint.hpp"
#include "dlab/rng.hpp"

namespace dlab {

namespace {

[[noreturn]] void arch_fail(const std::string& msg) { fail(ErrorCode::kValidation, "architecture: " + msg); }

std::vector<std::string> split_layers(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  int depth = 0;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth < 0) arch_fail("unbalanced parentheses in '" + std::string(text) + "'");
    const bool sep = std::isspace(static_cast<unsigned char>(ch)) || ch == ';' || (ch == ',' && depth == 0);
    if (sep) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (depth != 0) arch_fail("unbalanced parentheses in '" + std::string(text) + "'");
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Parses "name(a,b,c)"; "*" arguments come back as 0.
std::vector<std::size_t> parse_args(const std::string& token, std::string& name) {
  const auto open = token.find('(');
  name = token.substr(0, open);
  std::vector<std::size_t> args;
  if (open == std::string::npos) return args;
  if (token.back() != ')') arch_fail("malformed layer '" + token + "'");
  std::string inner = token.substr(open + 1, token.size() - open - 2);
  std::size_t start = 0;
  while (start <= inner.size()) {
    auto end = inner.find(',', start);
    if (end == std::string::npos) end = inner.size();
    std::string part = inner.substr(start, end - start);
    while (!part.empty() && std::isspace(static_cast<unsigned char>(part.front()))) part.erase(part.begin());
    while (!part.empty() && std::isspace(static_cast<unsigned char>(part.back()))) part.pop_back();
    if (part == "*" || part == "\xc2\xb7") {
      args.push_back(0);
    } else {
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || p != part.data() + part.size() || v == 0)
        arch_fail("bad argument '" + part + "' in layer '" + token + "'");
      args.push_back(v);
    }
    start = end + 1;
  }
  return args;
}

Shape parse_dims(std::string_view text) {
  Shape s;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('x', start);
    if (end == std::string_view::npos) end = text.size();
    std::size_t v = 0;
    auto part = text.substr(start, end - start);
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size() || v == 0)
      arch_fail("bad dimension list '" + std::string(text) + "'");
    s.push_back(v);
    start = end + 1;
  }
  return s;
}

std::string dims_string(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::size_t default_tap(const std::vector<LayerSpec>& layers) {
  return layers.size() >= 2 ? layers.size() - 2 : 0;
}

}  // namespace

std::vector<Shape> Architecture::layer_shapes() const {
  if (input.empty()) arch_fail("empty input shape");
  if (layers.empty()) arch_fail("no layers");
  std::vector<Shape> shapes;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::kConv2d:
        if (cur.size() != 3 || cur[0] != l.in || l.kernel == 0 || l.kernel > cur[1] || l.kernel > cur[2])
          arch_fail(where + ": conv2d(" + std::to_string(l.in) + "," + std::to_string(l.out) + "," +
                    std::to_string(l.kernel) + ") cannot take " + shape_string(cur));
        cur = {l.out, cur[1] - l.kernel + 1, cur[2] - l.kernel + 1};
        break;
      case LayerKind::kDense:
        if (cur.size() != 1 || cur[0] != l.in)
          arch_fail(where + ": dense(" + std::to_string(l.in) + "," + std::to_string(l.out) +
                    ") cannot take " + shape_string(cur));
        cur = {l.out};
        break;
      case LayerKind::kFlatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::kRelu:
        break;
    }
    shapes.push_back(cur);
  }
  if (cur != Shape{class_count})
    arch_fail("final output " + shape_string(cur) + " does not match class count " + std::to_string(class_count));
  if (feature_tap >= layers.size()) arch_fail("feature tap " + std::to_string(feature_tap) + " out of range");
  return shapes;
}

std::size_t Architecture::feature_size() const { return shape_size(layer_shapes()[feature_tap]); }

std::string Architecture::layer_string() const {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (i) out += ",";
    switch (l.kind) {
      case LayerKind::kConv2d:
        out += "conv2d(" + std::to_string(l.in) + "," + std::to_string(l.out) + "," + std::to_string(l.kernel) + ")";
        break;
      case LayerKind::kDense:
        out += "dense(" + std::to_string(l.in) + "," + std::to_string(l.out) + ")";
        break;
      case LayerKind::kFlatten: out += "flatten"; break;
      case LayerKind::kRelu: out += "relu"; break;
    }
  }
  return out;
}

std::string Architecture::describe() const {
  return "input=" + dims_string(input) + ";classes=" + std::to_string(class_count) +
         ";tap=" + std::to_string(feature_tap) + ";layers=" + layer_string();
}

Architecture Architecture::from_description(std::string_view text) {
  Shape input;
  std::size_t classes = 0, tap = 0;
  bool have_tap = false;
  std::string layers;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(';', start);
    if (end == std::string_view::npos) end = text.size();
    auto field = text.substr(start, end - start);
    auto eq = field.find('=');
    if (eq == std::string_view::npos) arch_fail("malformed descriptor field '" + std::string(field) + "'");
    auto key = field.substr(0, eq);
    auto value = field.substr(eq + 1);
    if (key == "input") {
      input = parse_dims(value);
    } else if (key == "classes" || key == "tap") {
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) arch_fail("bad number in '" + std::string(field) + "'");
      if (key == "classes") classes = v;
      else { tap = v; have_tap = true; }
    } else if (key == "layers") {
      layers = std::string(value);
    } else {
      arch_fail("unknown descriptor key '" + std::string(key) + "'");
    }
    start = end + 1;
  }
  Architecture arch = parse_architecture(layers, input, classes);
  if (have_tap) arch.feature_tap = tap;
  arch.layer_shapes();
  return arch;
}

Architecture parse_architecture(std::string_view text, const Shape& input, std::size_t class_count) {
  if (text == "teacher") return teacher_architecture(input, class_count);
  if (text == "surrogate") return surrogate_architecture(input, class_count);
  if (text == "student") return student_architecture(input, class_count);

  Architecture arch;
  arch.input = input;
  arch.class_count = class_count;
  Shape cur = input;
  for (const std::string& token : split_layers(text)) {
    std::string name;
    auto args = parse_args(token, name);
    LayerSpec l;
    if (name == "relu" || name == "flatten") {
      if (!args.empty()) arch_fail("'" + name + "' takes no arguments");
      l.kind = name == "relu" ? LayerKind::kRelu : LayerKind::kFlatten;
      if (l.kind == LayerKind::kFlatten) cur = {shape_size(cur)};
    } else if (name == "dense") {
      if (args.size() != 2 || args[1] == 0) arch_fail("dense needs (in,out), got '" + token + "'");
      l.kind = LayerKind::kDense;
      l.in = args[0] ? args[0] : (cur.size() == 1 ? cur[0] : 0);
      if (l.in == 0) arch_fail("cannot infer input width of '" + token + "'");
      l.out = args[1];
      cur = {l.out};
    } else if (name == "conv2d") {
      if (args.size() != 3 || args[1] == 0 || args[2] == 0) arch_fail("conv2d needs (cin,cout,k), got '" + token + "'");
      l.kind = LayerKind::kConv2d;
      l.in = args[0] ? args[0] : (cur.size() == 3 ? cur[0] : 0);
      l.out = args[1];
      l.kernel = args[2];
      if (cur.size() == 3 && cur[1] >= l.kernel && cur[2] >= l.kernel)
        cur = {l.out, cur[1] - l.kernel + 1, cur[2] - l.kernel + 1};
    } else {
      arch_fail("unknown layer '" + token + "'");
    }
    arch.layers.push_back(l);
  }
  arch.feature_tap = default_tap(arch.layers);
  arch.layer_shapes();
  return arch;
}

Architecture teacher_architecture(const Shape& input, std::size_t class_count) {
  return parse_architecture("conv2d(*,8,3) relu flatten dense(*,64) relu dense(64," + std::to_string(class_count) + ")",
                            input, class_count);
}

Architecture surrogate_architecture(const Shape& input, std::size_t class_count) {
  return parse_architecture("flatten dense(*,32) relu dense(32," + std::to_string(class_count) + ")", input,
                            class_count);
}

Architecture student_architecture(const Shape& input, std::size_t class_count) {
  return parse_architecture("flatten dense(*,24) relu dense(24," + std::to_string(class_count) + ")", input,
                            class_count);
}

std::shared_ptr<const ParamLayout> make_layout(const Architecture& arch) {
  auto layout = std::make_shared<ParamLayout>();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    const std::string prefix = "l" + std::to_string(i);
    if (l.kind == LayerKind::kDense) {
      layout->add(prefix + ".weight", {l.in, l.out});
      layout->add(prefix + ".bias", {l.out});
    } else if (l.kind == LayerKind::kConv2d) {
      layout->add(prefix + ".weight", {l.out, l.in, l.kernel, l.kernel});
      layout->add(prefix + ".bias", {l.out});
    }
  }
  return layout;
}

Network::Network(Architecture arch, ParamVector params) : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.layer_shapes();
  require(params_.layout() == *make_layout(arch_), ErrorCode::kValidation,
          "parameters do not match the architecture layout");
}

void Network::set_params(ParamVector params) {
  require(params.same_layout(params_), ErrorCode::kShape, "set_params: layout differs");
  params_ = std::move(params);
}

Network Network::init(const Architecture& arch, std::uint64_t seed) {
  arch.layer_shapes();
  ParamVector params(make_layout(arch));
  Rng rng(seed);
  std::size_t entry = 0;
  for (const LayerSpec& l : arch.layers) {
    if (l.kind != LayerKind::kDense && l.kind != LayerKind::kConv2d) continue;
    const double k2 = l.kind == LayerKind::kConv2d ? static_cast<double>(l.kernel * l.kernel) : 1.0;
    const double fan_in = static_cast<double>(l.in) * k2;
    const double fan_out = static_cast<double>(l.out) * k2;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : params.slot(entry)) w = rng.uniform(-a, a);
    entry += 2;  // bias slot stays zero
  }
  return Network(arch, std::move(params));
}

template <class S>
NetworkVars Network::build(Tape<S>& tape, std::span<const Var> params, Var input) const {
  require(params.size() == params_.layout().count(), ErrorCode::kShape, "build: parameter count mismatch");
  const Shape& in_shape = tape.value(input).shape();
  Shape expected = arch_.input;
  expected.insert(expected.begin(), in_shape.empty() ? 0 : in_shape[0]);
  require(in_shape == expected, ErrorCode::kShape,
          "network input " + shape_string(in_shape) + " does not match architecture input " +
              shape_string(arch_.input));
  const std::size_t n = in_shape[0];

  Var x = input;
  Var features = input;
  std::size_t p = 0;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const LayerSpec& l = arch_.layers[i];
    switch (l.kind) {
      case LayerKind::kDense:
        x = tape.add_bias(tape.matmul(x, params[p]), params[p + 1]);
        p += 2;
        break;
      case LayerKind::kConv2d:
        x = tape.conv2d(x, params[p], params[p + 1]);
        p += 2;
        break;
      case LayerKind::kRelu:
        x = tape.relu(x);
        break;
      case LayerKind::kFlatten:
        x = tape.reshape(x, {n, tape.value(x).size() / n});
        break;
    }
    if (i == arch_.feature_tap) features = x;
  }
  if (tape.value(features).rank() != 2)
    features = tape.reshape(features, {n, tape.value(features).size() / n});
  return NetworkVars{x, features};
}

template NetworkVars Network::build(Tape<double>&, std::span<const Var>, Var) const;
template NetworkVars Network::build(Tape<Dual>&, std::span<const Var>, Var) const;

Network::Output Network::forward(const Tensor& batch) const {
  Tape<double> tape;
  auto vars = bind(tape, params_, false);
  const Var in = tape.constant(batch);
  const NetworkVars out = build(tape, vars, in);
  return Output{tape.value(out.logits), tape.value(out.features)};
}

Tensor Network::logits(const Tensor& batch) const { return forward(batch).logits; }

void save_network(const Network& net, const std::filesystem::path& path) {
  Container c;
  c.class_count = static_cast<std::uint32_t>(net.class_count());
  c.descriptor = "network;" + net.architecture().describe();
  c.payload.assign(net.params().values().begin(), net.params().values().end());
  write_container(path, c);
}

Network load_network(const std::filesystem::path& path) {
  Container c = read_container(path);
  constexpr std::string_view prefix = "network;";
  if (c.descriptor.rfind(prefix, 0) != 0)
    fail(ErrorCode::kValidation, path.string() + ": checkpoint does not hold a network");
  Architecture arch = Architecture::from_description(std::string_view(c.descriptor).substr(prefix.size()));
  require(arch.class_count == c.class_count, ErrorCode::kValidation,
          path.string() + ": class count disagrees with the layout descriptor");
  auto layout = make_layout(arch);
  require(layout->total() == c.payload.size(), ErrorCode::kValidation,
          path.string() + ": payload size disagrees with the layout descriptor");
  return Network(std::move(arch), ParamVector(layout, std::move(c.payload)));
}

}  // namespace dlab
