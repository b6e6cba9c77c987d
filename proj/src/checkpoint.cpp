#include "rflab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace rflab {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) throw CheckpointError(std::string("truncated ") + what, pos);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double x;
    std::memcpy(&x, &bits, sizeof(x));
    return x;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& metadata) {
  std::string out;
  out += "RFL1";
  put_u32(out, std::uint32_t(params.size()));
  for (const auto& [name, arr] : params) {
    put_u32(out, std::uint32_t(name.size()));
    out += name;
    put_u32(out, std::uint32_t(arr.shape.size()));
    for (std::size_t d : arr.shape) put_u64(out, d);
    for (double x : arr.data) put_f64(out, x);
  }
  std::string meta = metadata.dump();
  put_u32(out, std::uint32_t(meta.size()));
  out += meta;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  std::string magic = r.bytes(4, "magic");
  if (magic != "RFL1") throw CheckpointError("bad magic", 0);

  Checkpoint ckpt;
  std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.bytes(name_len, "tensor name");
    std::size_t rank_at = r.pos;
    std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw CheckpointError("implausible rank", rank_at);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::size_t dim_at = r.pos;
      std::uint64_t dim = r.u64("tensor dim");
      if (dim == 0 || dim > (std::uint64_t(1) << 32)) throw CheckpointError("implausible dim", dim_at);
      shape[d] = std::size_t(dim);
      numel *= shape[d];
    }
    DenseArray arr = DenseArray::zeros(shape);
    for (std::size_t i = 0; i < numel; ++i) arr.data[i] = r.f64("tensor data");
    if (ckpt.params.count(name)) throw CheckpointError("duplicate tensor name " + name, rank_at);
    ckpt.params[name] = std::move(arr);
  }
  std::uint32_t meta_len = r.u32("metadata length");
  std::size_t meta_at = r.pos;
  std::string meta = r.bytes(meta_len, "metadata");
  if (r.pos != buf.size()) throw CheckpointError("trailing bytes", r.pos);
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error&) {
    throw CheckpointError("metadata is not valid JSON", meta_at);
  }
  return ckpt;
}

}  // namespace rflab
