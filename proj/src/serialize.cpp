#include "staf/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "staf/prng.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace staf {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'F', 'T', 'E', 'N', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("tensor stream truncated");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()), t.size() * 8);
  if (!out) throw std::runtime_error("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("bad tensor magic (expected STAFTEN1)");
  std::uint32_t rank = get_u32(in);
  if (rank > 8) throw std::runtime_error("tensor rank out of range");
  std::vector<std::int64_t> dims(rank);
  for (auto& d : dims) d = get_u32(in);
  std::vector<double> data(static_cast<std::size_t>(Tensor::count(dims)));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
  if (!in) throw std::runtime_error("tensor stream truncated");
  return Tensor(std::move(dims), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_tensor(f, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_tensor(f);
}

const Tensor& Bundle::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("bundle has no tensor named " + name);
}

void write_bundle(std::ostream& out, const Bundle& bundle) {
  nlohmann::ordered_json manifest = bundle.manifest;
  auto names = nlohmann::ordered_json::array();
  for (const auto& [n, t] : bundle.tensors) names.push_back(n);
  manifest["tensors"] = names;
  const std::string text = manifest.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [n, t] : bundle.tensors) write_tensor(out, t);
  if (!out) throw std::runtime_error("bundle write failed");
}

Bundle read_bundle(std::istream& in) {
  std::uint32_t len = get_u32(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw std::runtime_error("bundle manifest truncated");
  Bundle b;
  b.manifest = nlohmann::ordered_json::parse(text);
  if (!b.manifest.contains("tensors"))
    throw std::runtime_error("bundle manifest lacks a tensors list");
  for (const auto& name : b.manifest["tensors"])
    b.tensors.emplace_back(name.get<std::string>(), read_tensor(in));
  return b;
}

void save_bundle(const std::string& path, const Bundle& bundle) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_bundle(f, bundle);
}

Bundle load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_bundle(f);
}

std::uint64_t content_hash(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ostringstream buf(std::ios::binary);
  for (const auto& [n, t] : tensors) {
    buf.write(n.data(), static_cast<std::streamsize>(n.size()));
    write_tensor(buf, t);
  }
  const std::string s = buf.str();
  return Prng::fnv1a64(s.data(), s.size());
}

}  // namespace staf
