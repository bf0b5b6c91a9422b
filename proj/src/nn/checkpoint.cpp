#include "reason/nn/checkpoint.hpp"
#include "reason/core/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace reason::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'S', 'N', 'C', 'K', 'P', 'T', '\0'};

template <typename T> void put(std::vector<std::uint8_t> &out, T v) {
  const auto *p = reinterpret_cast<const std::uint8_t *>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t> &b) : b_(b) {}
  template <typename T> T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char *>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw ValidationError("checkpoint truncated");
  }
  const std::vector<std::uint8_t> &b_;
  std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> serialize(const Checkpoint &ck) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.kind.size()));
  out.insert(out.end(), ck.kind.begin(), ck.kind.end());
  const std::string cfg = ck.config.dump();
  put<std::uint64_t>(out, cfg.size());
  out.insert(out.end(), cfg.begin(), cfg.end());
  put<std::uint64_t>(out, ck.seed);
  put<std::uint64_t>(out, ck.iteration);
  put<std::uint64_t>(out, ck.params.size());
  for (double v : ck.params)
    put<double>(out, v);
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t> &bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw ValidationError("not a checkpoint file (bad magic)");
  std::vector<std::uint8_t> body(bytes.begin() + 8, bytes.end());
  Reader r(body);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = r.str(r.get<std::uint32_t>());
  try {
    ck.config = nlohmann::json::parse(r.str(r.get<std::uint64_t>()));
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ck.seed = r.get<std::uint64_t>();
  ck.iteration = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  ck.params.resize(n);
  for (auto &v : ck.params)
    v = r.get<double>();
  if (!r.done())
    throw ValidationError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ValidationError("cannot write checkpoint " + path.string());
  const auto bytes = serialize(ck);
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

} // namespace reason::nn
