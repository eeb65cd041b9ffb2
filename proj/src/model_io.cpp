#include "curvlink/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "curvlink/errors.hpp"

namespace curvlink {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ConfigError("truncated model file");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_model(const Model& model) {
  Writer w;
  for (char c : std::string("CRVL")) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.spec.layer_dims.size()));
  for (int d : model.spec.layer_dims) w.u32(static_cast<std::uint32_t>(d));
  w.u8(static_cast<std::uint8_t>(model.spec.activation));
  w.u8(static_cast<std::uint8_t>(model.spec.loss));
  w.f64(model.spec.clamp_bound);
  w.u64(model.provenance.seed);
  w.u8(model.provenance.mask_id.has_value() ? 1 : 0);
  w.u64(static_cast<std::uint64_t>(model.provenance.mask_id.value_or(0)));
  w.str(model.provenance.train_config_digest);
  for (const auto& L : model.layers) {
    for (int r = 0; r < L.weight.rows(); ++r)
      for (int c = 0; c < L.weight.cols(); ++c) w.f64(L.weight(r, c));
    for (int r = 0; r < L.bias.size(); ++r) w.f64(L.bias(r));
  }
  return w.take();
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  std::string magic;
  for (int i = 0; i < 4; ++i) magic.push_back(static_cast<char>(r.u8()));
  if (magic != "CRVL") throw ConfigError("not a CRVL model file");
  const auto version = r.u32();
  if (version != kModelFormatVersion)
    throw ConfigError("unsupported model format version " + std::to_string(version));
  Model m;
  const auto n = r.u32();
  if (n < 2 || n > 1024) throw ConfigError("corrupt layer count in model file");
  for (std::uint32_t i = 0; i < n; ++i) m.spec.layer_dims.push_back(static_cast<int>(r.u32()));
  const auto act = r.u8();
  const auto loss = r.u8();
  if (act > 1 || loss > 2) throw ConfigError("corrupt spec enum in model file");
  m.spec.activation = static_cast<Activation>(act);
  m.spec.loss = static_cast<LossKind>(loss);
  m.spec.clamp_bound = r.f64();
  m.spec.validate();
  m.provenance.seed = r.u64();
  const bool has_mask = r.u8() != 0;
  const auto mask = static_cast<std::int64_t>(r.u64());
  if (has_mask) m.provenance.mask_id = mask;
  m.provenance.train_config_digest = r.str();
  for (int l = 0; l < m.spec.num_layers(); ++l) {
    Layer L{Matrix(m.spec.layer_dims[l + 1], m.spec.layer_dims[l]), Vector(m.spec.layer_dims[l + 1])};
    for (int row = 0; row < L.weight.rows(); ++row)
      for (int c = 0; c < L.weight.cols(); ++c) L.weight(row, c) = r.f64();
    for (int row = 0; row < L.bias.size(); ++row) L.bias(row) = r.f64();
    m.layers.push_back(std::move(L));
  }
  if (!r.done()) throw ConfigError("trailing bytes in model file");
  m.validate();
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

std::string model_debug_json(const Model& model) {
  nlohmann::json j;
  j["spec"] = {{"layer_dims", model.spec.layer_dims},
               {"activation", to_string(model.spec.activation)},
               {"loss", to_string(model.spec.loss)},
               {"clamp_bound", model.spec.clamp_bound}};
  j["provenance"] = {{"seed", model.provenance.seed},
                     {"train_config_digest", model.provenance.train_config_digest}};
  if (model.provenance.mask_id) j["provenance"]["mask_id"] = *model.provenance.mask_id;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& L : model.layers) {
    nlohmann::json jl;
    for (int r = 0; r < L.weight.rows(); ++r) {
      std::vector<double> row(L.weight.cols());
      for (int c = 0; c < L.weight.cols(); ++c) row[c] = L.weight(r, c);
      jl["weight"].push_back(row);
    }
    jl["bias"] = std::vector<double>(L.bias.data(), L.bias.data() + L.bias.size());
    layers.push_back(jl);
  }
  return j.dump(2);
}

}  // namespace curvlink
