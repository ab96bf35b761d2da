// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/tensor.hpp"

#include <cmath>

namespace dlab {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShape: return "shape mismatch";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kDivergence: return "numeric divergence";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kChecksum: return "checksum mismatch";
    case ErrorCode::kMagic: return "bad magic";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown error";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

std::size_t shape_size(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor tensor_from_external(Shape shape, std::vector<double> data) {
  for (std::size_t i = 0; i < data.size(); ++i)
    require(std::isfinite(data[i]), ErrorCode::kValidation,
            "non-finite value at position " + std::to_string(i));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace dlab
