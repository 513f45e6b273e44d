#include "ace/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ace/errors.hpp"

namespace ace {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'E', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out.insert(out.end(), c, c + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& in) : in_(in) {}
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > in_.size()) {
      throw FormatError(std::string("checkpoint truncated reading ") + what + " at offset " + std::to_string(pos_));
    }
  }
  template <class U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>("payload")); }
  std::string str(std::size_t n) {
    need(n, "name");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<unsigned char>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ParamStore& params) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.tensor_count()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    w.uint<std::uint64_t>(offset);
    offset += t.size();
  }
  for (const auto& [name, t] : params.entries()) {
    for (double v : t.data()) w.f64(v);
  }
  return std::move(w.out);
}

ParamStore decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic, "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("bad checkpoint magic at offset 0");
  r.str(sizeof kMagic);
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 8");
  }
  const auto count = r.uint<std::uint32_t>("tensor count");
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> table;
  std::uint64_t expected = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.uint<std::uint32_t>("name length"));
    const auto rank = r.uint<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.uint<std::uint64_t>("dimension"));
    const std::size_t at = r.pos();
    e.offset = r.uint<std::uint64_t>("offset");
    if (e.offset != expected) throw FormatError("non-contiguous tensor offset at offset " + std::to_string(at));
    expected += shape_size(e.shape);
    table.push_back(std::move(e));
  }
  if (r.remaining() != expected * 8) {
    throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes, table expects " +
                      std::to_string(expected * 8) + " at offset " + std::to_string(r.pos()));
  }
  ParamStore out;
  for (auto& e : table) {
    std::vector<double> values(shape_size(e.shape));
    for (auto& v : values) v = r.f64();
    out.add(std::move(e.name), Tensor(std::move(e.shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ace
