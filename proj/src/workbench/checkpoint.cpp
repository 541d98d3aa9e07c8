#include "malab/workbench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include "malab/errors.hpp"

namespace malab::workbench {

namespace {

class Writer {
 public:
  template <class T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <class T>
  T get(const std::string& what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::string text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) throw TruncatedError("checkpoint truncated while reading " + what);
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void put_config(Writer& w, const dit::DiTConfig& c) {
  for (std::size_t v : {c.num_blocks, c.hidden_size, c.num_heads, c.grid_h, c.grid_w, c.data_dim,
                        c.num_classes, c.t_embed_dim}) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw IoError("config value too large for checkpoint");
    w.put(static_cast<std::uint32_t>(v));
  }
  w.put(c.sigma_max);
}

dit::DiTConfig get_config(Reader& r) {
  dit::DiTConfig c;
  for (std::size_t* field : {&c.num_blocks, &c.hidden_size, &c.num_heads, &c.grid_h, &c.grid_w,
                             &c.data_dim, &c.num_classes, &c.t_embed_dim}) {
    *field = r.get<std::uint32_t>("config");
  }
  c.sigma_max = r.get<double>("config");
  return c;
}

}  // namespace

void save_checkpoint(const dit::DiTWeights& weights, const std::string& path) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  put_config(w, weights.config);
  const auto params = weights.named_parameters();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(tensor->rank()));
    for (auto e : tensor->shape()) w.put(static_cast<std::uint32_t>(e));
    for (double v : tensor->data()) w.put(static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

dit::DiTWeights load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  const std::string magic = r.text(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw BadMagicError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  dit::DiTConfig config = get_config(r);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  // Shapes and order come from a fresh model of the stored config.
  dit::DiTWeights weights = dit::init_weights(config, 0);
  auto params = weights.named_parameters();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                  std::to_string(params.size()));
  }
  for (auto& [expected, tensor] : params) {
    const auto len = r.get<std::uint16_t>("tensor name");
    const std::string name = r.text(len, "tensor name");
    if (name != expected) throw IoError("checkpoint tensor '" + name + "' where '" + expected + "' expected");
    const auto rank = r.get<std::uint8_t>("tensor " + name);
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint32_t>("tensor " + name));
    if (shape != tensor->shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                    shape_str(tensor->shape()));
    }
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = r.get<float>("tensor " + name);
    *tensor = Tensor(shape, std::move(values));
  }
  if (!r.done()) throw IoError("trailing bytes after the last checkpoint tensor");
  return weights;
}

dit::DiTWeights stored_precision(const dit::DiTWeights& weights) {
  dit::DiTWeights out = weights.clone();
  for (auto& [name, tensor] : out.named_parameters()) {
    std::vector<double> v(tensor->data().begin(), tensor->data().end());
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
    *tensor = Tensor(tensor->shape(), std::move(v));
  }
  return out;
}

}  // namespace malab::workbench
