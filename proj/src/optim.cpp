// Copyright 2026 The t2l Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "t2l/autodiff.hpp"

T2L_NN_BEGIN
namespace ad {

void adam_step(std::span<Real> param, std::span<const Real> grad, AdamMoments& m, long step,
               const AdamConfig& cfg) {
  if (m.first.size() != param.size()) m.first.assign(param.size(), Real(0));
  if (m.second.size() != param.size()) m.second.assign(param.size(), Real(0));
  if (!grad.empty() && grad.size() != param.size()) {
    throw ShapeError("adam_step: gradient size differs from parameter size");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
    const double mk = cfg.beta1 * m.first[k] + (1.0 - cfg.beta1) * g;
    const double vk = cfg.beta2 * m.second[k] + (1.0 - cfg.beta2) * g * g;
    m.first[k] = static_cast<Real>(mk);
    m.second[k] = static_cast<Real>(vk);
    param[k] -= static_cast<Real>(cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), moments_(params_.size()) {}

void Adam::step() {
  ++steps_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    adam_step(params_[k].data(), params_[k].grad(), moments_[k], steps_, cfg_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[7] = {'T', '2', 'L', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  for (const auto& a : arrays) {
    std::size_t n = 1;
    for (auto d : a.dims) n *= d;
    if (n != a.values.size()) {
      throw ShapeError("checkpoint: record '" + a.name + "' dims disagree with value count");
    }
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) put_u32(out, d);
    for (float v : a.values) put_f32(out, v);
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw ParseError("checkpoint: bad magic", 0);
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), 7);
  }
  std::vector<NamedArray> out;
  while (!in.done()) {
    NamedArray a;
    const std::uint32_t len = in.u32("name length");
    a.name = in.bytes(len, "name");
    const std::uint32_t nd = in.u32("dim count");
    if (nd > 8) throw ParseError("checkpoint: implausible rank for '" + a.name + "'", in.offset());
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < nd; ++k) {
      a.dims.push_back(in.u32("dims"));
      n *= a.dims.back();
    }
    if (n > (bytes.size() - in.offset()) / 4) {
      throw ParseError("checkpoint: truncated values of '" + a.name + "'", in.offset());
    }
    a.values.resize(n);
    for (auto& v : a.values) v = in.f32("values");
    out.push_back(std::move(a));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays) {
  const auto bytes = encode_checkpoint(arrays);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// --- ParamStore ----------------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<Real> init) {
  if (contains(name)) throw DomainError("ParamStore: duplicate parameter '" + name + "'");
  auto t = Tensor::from(std::move(shape), std::move(init), true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw DomainError("ParamStore: no parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  for (const auto& item : items_) out.push_back(item.second);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.second.numel();
  return n;
}

std::vector<NamedArray> ParamStore::to_arrays() const {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : items_) {
    NamedArray a;
    a.name = name;
    for (int d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
    a.values.assign(t.data().begin(), t.data().end());
    out.push_back(std::move(a));
  }
  return out;
}

void ParamStore::load_arrays(std::span<const NamedArray> arrays) {
  for (auto& [name, t] : items_) {
    const NamedArray* found = nullptr;
    for (const auto& a : arrays) {
      if (a.name == name) found = &a;
    }
    if (!found) throw ParseError("checkpoint: missing parameter '" + name + "'", 0);
    Shape s(found->dims.begin(), found->dims.end());
    if (s != t.shape()) {
      throw ShapeError("checkpoint: parameter '" + name + "' has shape " + shape_str(s) +
                       ", model expects " + shape_str(t.shape()));
    }
    auto dst = t.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<Real>(found->values[k]);
  }
}

void ParamStore::save(const std::filesystem::path& path) const {
  save_checkpoint(path, to_arrays());
}

void ParamStore::load(const std::filesystem::path& path) { load_arrays(load_checkpoint(path)); }

}  // namespace ad
T2L_NN_END
