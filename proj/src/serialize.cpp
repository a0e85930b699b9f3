// Copyright 2026 The gadft Authors
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

#include "gadft/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gadft/error.hpp"

namespace gadft {
namespace {

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void count(Index v) {
    if (v < 0 || v > static_cast<Index>(UINT32_MAX)) throw FormatError("value does not fit the format");
    u32(static_cast<std::uint32_t>(v));
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  bool at_end() const { return pos_ == in_.size(); }
  bool peek(std::string_view tag) const { return in_.compare(pos_, tag.size(), tag) == 0; }
  void expect(std::string_view tag) {
    need(tag.size());
    if (in_.compare(pos_, tag.size(), tag) != 0) throw FormatError("expected block '" + std::string(tag) + "'");
    pos_ += tag.size();
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  /// A count whose payload of `unit` bytes per element must still fit.
  Index count(std::size_t unit) {
    const std::uint32_t v = u32();
    need(static_cast<std::size_t>(v) * unit);
    return static_cast<Index>(v);
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("weight file is truncated");
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ExtractorConfig& c, bool frozen) {
  w.count(c.in_channels);
  w.count(static_cast<Index>(c.channels.size()));
  for (Index ch : c.channels) w.count(ch);
  w.count(c.kernel_size);
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.count(static_cast<Index>(c.taps.size()));
  for (int t : c.taps) w.count(t);
  w.f64(c.norm_eps);
  w.u8(frozen ? 1 : 0);
}

ExtractorConfig read_config(Reader& r, bool& frozen) {
  ExtractorConfig c;
  c.in_channels = r.u32();
  const Index levels = r.count(4);
  c.channels.clear();
  for (Index i = 0; i < levels; ++i) c.channels.push_back(r.u32());
  c.kernel_size = r.u32();
  const std::uint8_t act = r.u8();
  if (act > 1) throw FormatError("unknown activation id " + std::to_string(act));
  c.activation = static_cast<Activation>(act);
  const Index taps = r.count(4);
  for (Index i = 0; i < taps; ++i) c.taps.push_back(static_cast<int>(r.u32()));
  c.norm_eps = r.f64();
  frozen = r.u8() != 0;
  if (c.in_channels < 1 || c.kernel_size < 1 || c.channels.empty()) throw FormatError("invalid extractor config");
  // Bounds keep a corrupted header from triggering huge allocations.
  if (c.in_channels > 4096 || c.kernel_size > 64 || c.channels.size() > 64) throw FormatError("invalid extractor config");
  for (Index ch : c.channels)
    if (ch < 1 || ch > 65536) throw FormatError("invalid channel count");
  for (int t : c.taps)
    if (t < 1 || t > static_cast<int>(c.channels.size())) throw FormatError("tap level out of range");
  return c;
}

void write_gaussians(Writer& w, const GaussianModel& g) {
  w.bytes("GADG");
  w.u8(static_cast<std::uint8_t>(g.mode));
  w.count(static_cast<Index>(g.levels.size()));
  for (std::size_t l = 0; l < g.levels.size(); ++l) {
    const auto& lv = g.levels[l];
    w.count(g.level_ids[l]);
    w.count(lv.channels);
    w.count(lv.height);
    w.count(lv.width);
    w.count(lv.means.rows());
    for (Index r = 0; r < lv.means.rows(); ++r)
      for (Index c = 0; c < lv.channels; ++c) w.f64(lv.means(r, c));
    w.count(static_cast<Index>(lv.factors.size()));
    for (const auto& f : lv.factors)
      for (Index r = 0; r < lv.channels; ++r)
        for (Index c = 0; c < lv.channels; ++c) w.f64(f(r, c));
  }
}

GaussianModel read_gaussians(Reader& r) {
  r.expect("GADG");
  GaussianModel g;
  const std::uint8_t mode = r.u8();
  if (mode > 2) throw FormatError("unknown Gaussian mode id " + std::to_string(mode));
  g.mode = static_cast<GaussianMode>(mode);
  const Index levels = r.count(20);
  for (Index l = 0; l < levels; ++l) {
    g.level_ids.push_back(static_cast<int>(r.u32()));
    LevelGaussian lv;
    lv.mode = g.mode;
    lv.channels = r.u32();
    lv.height = r.u32();
    lv.width = r.u32();
    const Index rows = r.count(8 * static_cast<std::size_t>(lv.channels));
    const Index expected_rows = g.mode == GaussianMode::global ? 1 : lv.locations();
    if (rows != expected_rows) throw FormatError("Gaussian mean count does not match its mode");
    lv.means.resize(rows, lv.channels);
    for (Index i = 0; i < rows; ++i)
      for (Index c = 0; c < lv.channels; ++c) lv.means(i, c) = r.f64();
    const Index factors = r.count(8 * static_cast<std::size_t>(lv.channels * lv.channels));
    const Index expected_factors = g.mode == GaussianMode::local ? lv.locations() : 1;
    if (factors != expected_factors) throw FormatError("Gaussian factor count does not match its mode");
    for (Index k = 0; k < factors; ++k) {
      Eigen::MatrixXd f(lv.channels, lv.channels);
      for (Index i = 0; i < lv.channels; ++i)
        for (Index c = 0; c < lv.channels; ++c) f(i, c) = r.f64();
      lv.covariances.push_back(f * f.transpose());
      lv.factors.push_back(std::move(f));
      lv.shrinkage.push_back(0.0);
    }
    g.levels.push_back(std::move(lv));
  }
  return g;
}

void write_centers(Writer& w, const LevelCenters& c) {
  w.bytes("GADS");
  w.count(static_cast<Index>(c.centers.size()));
  for (std::size_t l = 0; l < c.centers.size(); ++l) {
    w.count(c.level_ids[l]);
    w.count(c.centers[l].size());
    for (double v : c.centers[l]) w.f64(v);
  }
}

LevelCenters read_centers(Reader& r) {
  r.expect("GADS");
  LevelCenters c;
  const Index levels = r.count(8);
  for (Index l = 0; l < levels; ++l) {
    c.level_ids.push_back(static_cast<int>(r.u32()));
    const Index dim = r.count(8);
    Eigen::VectorXd v(dim);
    for (Index i = 0; i < dim; ++i) v(i) = r.f64();
    c.centers.push_back(std::move(v));
  }
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_weights(const FeatureExtractor<float>& model, const GaussianModel* gaussians,
                           const LevelCenters* centers) {
  Writer w;
  w.bytes("GADW");
  w.u8(kWeightFormatVersion);
  write_config(w, model.config(), model.statistics_frozen());
  for (const auto& t : model.state())
    for (float v : t.data()) w.f32(v);
  if (gaussians != nullptr && gaussians->fitted()) write_gaussians(w, *gaussians);
  if (centers != nullptr && !centers->empty()) write_centers(w, *centers);
  return w.take();
}

WeightFile decode_weights(const std::string& bytes) {
  Reader r(bytes);
  r.expect("GADW");
  const std::uint8_t version = r.u8();
  if (version != kWeightFormatVersion) throw FormatError("unsupported weight format version " + std::to_string(version));
  bool frozen = false;
  const ExtractorConfig config = read_config(r, frozen);
  WeightFile out{FeatureExtractor<float>(config), std::nullopt, std::nullopt};
  for (auto& t : out.model.state())
    for (float& v : t.mutable_data()) v = r.f32();
  if (frozen) out.model.freeze_statistics();
  if (r.peek("GADG")) out.gaussians = read_gaussians(r);
  if (r.peek("GADS")) out.centers = read_centers(r);
  if (!r.at_end()) throw FormatError("unexpected trailing bytes in weight file");
  return out;
}

void save_weights(const std::filesystem::path& path, const FeatureExtractor<float>& model,
                  const GaussianModel* gaussians, const LevelCenters* centers) {
  const std::string bytes = encode_weights(model, gaussians, centers);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write weight file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing weight file " + path.string());
}

WeightFile load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

WeightFile load_weights(const std::filesystem::path& path, const ExtractorConfig& expected) {
  auto file = load_weights(path);
  if (!(file.model.config() == expected)) {
    throw DimensionError("weight file " + path.string() + " was saved for a different extractor configuration");
  }
  return file;
}

}  // namespace gadft
