#include "parnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "parnet/error.hpp"

namespace parnet {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source, std::size_t start)
      : bytes_(bytes), source_(std::move(source)), pos_(start) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& message) const {
    throw DataError(source_ + ": byte " + std::to_string(pos_) + ": " + message);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated checkpoint while reading ") + what);
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensorf* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_string(out, to_kv(checkpoint.config));
  put_u32(out, checkpoint.epochs_completed);
  put_f32(out, checkpoint.data_mean);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(tensor.extent(d)));
    for (float v : tensor.values()) put_f32(out, v);
  }
  put_string(out, checkpoint.rng_state);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw DataError(source + ": not a PAR-Net checkpoint (missing PARN magic)");
  }
  Reader in(bytes, source, 4);
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError(source + ": checkpoint format version " + std::to_string(version) + ", this build reads version " +
                    std::to_string(kCheckpointVersion) + "; retrain or use a matching build");
  }
  Checkpoint out;
  out.config = from_kv(in.string("config"), source + " (embedded config)");
  out.epochs_completed = in.u32("epoch count");
  out.data_mean = in.f32("data mean");
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.string("tensor name");
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank == 0 || rank > 8) in.fail("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(in.u32("tensor extent")));
    Tensorf tensor(shape);
    for (float& v : tensor.values()) v = in.f32("tensor data");
    out.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  out.rng_state = in.string("rng state");
  if (!in.done()) in.fail("trailing bytes after the rng state");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace parnet
