#include "tpn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace tpn {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'N', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 8, uint64_t,
                                    std::conditional_t<sizeof(U) == 4, uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, uint16_t, uint8_t>>>;
    auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }
  std::vector<uint8_t>& data() { return out_; }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  Reader(const uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw IntegrityError("checkpoint truncated");
  }
  template <class U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 8, uint64_t,
                                    std::conditional_t<sizeof(U) == 4, uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, uint16_t, uint8_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(p_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string str(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

uint32_t crc_of(const uint8_t* p, std::size_t n) {
  return static_cast<uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace

std::vector<uint8_t> encode_checkpoint(const TensorEntries& entries) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<uint16_t>(kCheckpointVersion);
  w.le<uint32_t>(static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.le<uint32_t>(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<uint8_t>(0);
    w.le<uint32_t>(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) w.le<int64_t>(d);
    for (float v : t.data()) w.le<float>(v);
  }
  const uint32_t crc = crc_of(w.data().data(), w.data().size());
  w.le<uint32_t>(crc);
  return std::move(w.data());
}

TensorEntries decode_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw IntegrityError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != tail.le<uint32_t>()) throw IntegrityError("checkpoint CRC mismatch");
  Reader r(bytes.data() + 4, body - 4);
  const auto version = r.le<uint16_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.le<uint32_t>();
  TensorEntries out;
  for (uint32_t e = 0; e < count; ++e) {
    const auto len = r.le<uint32_t>();
    std::string name = r.str(len);
    if (r.le<uint8_t>() != 0) throw FormatError("checkpoint entry " + name + ": unsupported dtype");
    const auto rank = r.le<uint32_t>();
    if (rank > 8) throw IntegrityError("checkpoint entry " + name + ": implausible rank");
    Shape shape(rank);
    int64_t n = 1;
    for (auto& d : shape) {
      d = r.le<int64_t>();
      if (d <= 0 || d > (int64_t(1) << 32)) throw IntegrityError("checkpoint entry " + name + ": bad dimension");
      n *= d;
    }
    r.need(static_cast<std::size_t>(n) * 4);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = r.le<float>();
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(v)));
  }
  if (r.remaining() != 0) throw IntegrityError("checkpoint has trailing bytes");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const TensorEntries& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IntegrityError("write failed: " + path.string());
}

TensorEntries read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open checkpoint " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

namespace {

Tensor vec(std::initializer_list<double> v) {
  std::vector<float> f(v.begin(), v.end());
  const auto n = static_cast<int64_t>(f.size());
  return Tensor::from({n}, std::move(f));
}

void add_params(TensorEntries& out, const ParamList& params) {
  for (const auto& p : params) out.emplace_back(p.name, p.tensor->detach());
}

class EntryMap {
 public:
  explicit EntryMap(const TensorEntries& e) {
    for (const auto& [name, t] : e) map_.emplace(name, t);
  }
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  const Tensor& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw IntegrityError("checkpoint is missing entry " + name);
    return it->second;
  }
  int64_t integer(const std::string& name, std::size_t i) const {
    const auto& t = at(name);
    if (i >= static_cast<std::size_t>(t.numel())) throw IntegrityError("checkpoint entry " + name + " too short");
    return static_cast<int64_t>(t.data()[i]);
  }
  void fill(const ParamList& params) const {
    for (const auto& p : params) {
      const Tensor& src = at(p.name);
      if (src.shape() != p.tensor->shape()) {
        throw IntegrityError("checkpoint entry " + p.name + " has shape " + to_string(src.shape()) + ", expected " +
                             to_string(p.tensor->shape()));
      }
      auto d = p.tensor->mutable_data();
      std::copy(src.data().begin(), src.data().end(), d.begin());
    }
  }

 private:
  std::map<std::string, Tensor> map_;
};

}  // namespace

TensorEntries bundle_entries(const ModelBundle& b) {
  TensorEntries out;
  const auto& g = b.state.gen.cfg;
  const auto& r = b.state.render_cfg;
  out.emplace_back("config.generator", vec({double(g.z_dim), double(g.w_rows), double(g.w_dim), double(g.map_hidden),
                                            double(g.channels), double(g.planes.channels),
                                            double(g.planes.resolution), g.planes.bound}));
  out.emplace_back("config.render", vec({double(r.n_samples), double(r.low_res), double(r.final_res), r.bound,
                                         double(r.mlp_hidden), double(r.feature_channels), double(r.sr_hidden)}));
  GeneratorState s = b.state;
  add_params(out, s.params());
  out.emplace_back("w_bar", s.w_bar.detach());
  out.emplace_back("latents", s.latents.detach());
  const EncoderConfig* enc = b.phi ? &b.phi->cfg : b.psi ? &b.psi->cfg : nullptr;
  if (enc) {
    std::vector<float> e{static_cast<float>(enc->image_res), static_cast<float>(enc->head_channels)};
    for (int64_t c : enc->stages) e.push_back(static_cast<float>(c));
    const auto n = static_cast<int64_t>(e.size());
    out.emplace_back("config.encoder", Tensor::from({n}, std::move(e)));
  }
  if (b.phi) {
    LatentEncoder phi = *b.phi;
    add_params(out, phi.params("phi"));
  }
  if (b.psi) {
    OffsetNet psi = *b.psi;
    add_params(out, psi.params("psi"));
  }
  return out;
}

ModelBundle bundle_from_entries(const TensorEntries& entries) {
  const EntryMap m(entries);
  GeneratorConfig g;
  g.z_dim = m.integer("config.generator", 0);
  g.w_rows = m.integer("config.generator", 1);
  g.w_dim = m.integer("config.generator", 2);
  g.map_hidden = m.integer("config.generator", 3);
  g.channels = m.integer("config.generator", 4);
  g.planes.channels = m.integer("config.generator", 5);
  g.planes.resolution = m.integer("config.generator", 6);
  g.planes.bound = m.at("config.generator").data()[7];
  RenderConfig r;
  r.n_samples = static_cast<int>(m.integer("config.render", 0));
  r.low_res = static_cast<int>(m.integer("config.render", 1));
  r.final_res = static_cast<int>(m.integer("config.render", 2));
  r.bound = m.at("config.render").data()[3];
  r.mlp_hidden = static_cast<int>(m.integer("config.render", 4));
  r.feature_channels = static_cast<int>(m.integer("config.render", 5));
  r.sr_hidden = static_cast<int>(m.integer("config.render", 6));
  try {
    g.validate();
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw IntegrityError(std::string("checkpoint configuration invalid: ") + e.what());
  }

  ModelBundle b;
  Rng rng(0);
  b.state.gen = GeneratorParams::init(g, rng);
  b.state.render = RenderParams::init(r, g.planes.channels, rng);
  b.state.render_cfg = r;
  m.fill(b.state.params());
  b.state.w_bar = m.at("w_bar").detach();
  b.state.latents = m.at("latents").clone();
  b.state.latents.set_requires_grad(true);
  if (b.state.w_bar.shape() != Shape{g.w_rows, g.w_dim}) throw IntegrityError("checkpoint w_bar has wrong shape");

  if (m.has("config.encoder")) {
    EncoderConfig enc;
    const Tensor& e = m.at("config.encoder");
    enc.image_res = m.integer("config.encoder", 0);
    enc.head_channels = m.integer("config.encoder", 1);
    enc.stages.clear();
    for (int64_t i = 2; i < e.numel(); ++i) enc.stages.push_back(m.integer("config.encoder", static_cast<std::size_t>(i)));
    if (m.has("phi.head0.w")) {
      b.phi = LatentEncoder::init(enc, g.w_rows, g.w_dim, rng);
      m.fill(b.phi->params("phi"));
    }
    if (m.has("psi.out.w")) {
      b.psi = OffsetNet::init(enc, g.planes, rng);
      m.fill(b.psi->params("psi"));
    }
  }
  return b;
}

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_checkpoint(path, bundle_entries(bundle));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) { return bundle_from_entries(read_checkpoint(path)); }

}  // namespace tpn
