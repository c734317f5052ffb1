#include "dmse/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace dmse {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint64_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("dimension too large");
    put_le(static_cast<std::uint32_t>(v));
  }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(s.size());
    buf_ += s;
  }
  void raw(std::string_view s) { buf_ += s; }
  template <typename Derived>
  void tensor(const Eigen::DenseBase<Derived>& m) {
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }
  std::string& bytes() { return buf_; }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : data_(bytes) {}
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(data_.substr(pos_, len));
    pos_ += len;
    return s;
  }
  std::string_view raw(std::size_t len) {
    need(len);
    auto s = data_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  void tensor(Matrix& m, Index rows, Index cols) {
    need(static_cast<std::size_t>(rows * cols) * 8);
    m.resize(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) m(i, j) = f64();
    }
  }
  void tensor(Vector& v, Index size) {
    need(static_cast<std::size_t>(size) * 8);
    v.resize(size);
    for (Index i = 0; i < size; ++i) v(i) = f64();
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t len) const {
    if (data_.size() - pos_ < len) throw CorruptCheckpoint("checkpoint is truncated");
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& p) {
  p.validate();
  Writer w;
  w.raw("DMSE");
  w.u16(kCheckpointVersion);
  w.u32(p.n_species());
  w.u32(p.n_features());
  w.u32(p.d1());
  w.u32(p.d2());
  w.u32(p.mlp.layer_dims.size());
  for (Index d : p.mlp.layer_dims) w.u32(d);
  for (const auto& s : p.species_names) w.str(s);
  for (const auto& f : p.feature_names) w.str(f);
  w.tensor(p.feature_mean);
  w.tensor(p.feature_scale);
  w.tensor(p.S);
  w.tensor(p.lambda_raw);
  w.tensor(p.W);
  for (std::size_t k = 0; k < p.mlp.num_layers(); ++k) {
    w.tensor(p.mlp.weights[k]);
    w.tensor(p.mlp.biases[k]);
  }
  const std::uint32_t crc = crc_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

ModelParams parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 10) throw CorruptCheckpoint("checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  if (Reader(bytes.substr(bytes.size() - 4)).u32() != crc_of(body)) {
    throw CorruptCheckpoint("checkpoint CRC mismatch");
  }
  Reader r(body);
  if (r.raw(4) != "DMSE") throw CorruptCheckpoint("not a DMSE checkpoint");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
  }
  const Index n = r.u32();
  const Index m = r.u32();
  const Index d1 = r.u32();
  const Index d2 = r.u32();
  const std::uint32_t layers = r.u32();
  if (layers < 1 || layers > r.remaining() / 4) throw CorruptCheckpoint("bad layer count");
  std::vector<Index> dims(layers);
  for (auto& d : dims) d = r.u32();
  if (dims.front() != m) throw CorruptCheckpoint("network input does not match feature count");

  ModelParams p;
  try {
    p.mlp = MlpParams::zeros(dims);
  } catch (const InvalidArgument&) {
    throw CorruptCheckpoint("bad layer dimensions");
  }
  for (Index j = 0; j < n; ++j) p.species_names.push_back(r.str());
  for (Index k = 0; k < m; ++k) p.feature_names.push_back(r.str());
  r.tensor(p.feature_mean, m);
  r.tensor(p.feature_scale, m);
  r.tensor(p.S, d1, n);
  r.tensor(p.lambda_raw, d2, n);
  r.tensor(p.W, d1, p.mlp.output_dim());
  for (std::size_t k = 0; k < p.mlp.num_layers(); ++k) {
    r.tensor(p.mlp.weights[k], dims[k + 1], dims[k]);
    r.tensor(p.mlp.biases[k], dims[k + 1]);
  }
  if (r.remaining() != 0) throw CorruptCheckpoint("trailing bytes in checkpoint");
  try {
    p.validate();
  } catch (const DimMismatch& e) {
    throw CorruptCheckpoint(e.what());
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace dmse
