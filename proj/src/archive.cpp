#include "feddis/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "archive payload assumes a little-endian host");

namespace feddis::archive {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'A', 'R'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T)) throw std::runtime_error("archive truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& Archive::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw std::out_of_range("archive has no tensor '" + name + "'");
  return *t;
}

std::string serialize(const Archive& archive) {
  nlohmann::json manifest;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : archive.tensors) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"role", role_name(t.role)},
                                   {"shape", {t.value.rows(), t.value.cols()}},
                                   {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size()) * sizeof(double);
  }
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : archive.tensors) {
    out.append(reinterpret_cast<const char*>(t.value.data()), static_cast<std::size_t>(t.value.size()) * sizeof(double));
  }
  return out;
}

Archive deserialize(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw std::runtime_error("not a tensor archive");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw std::runtime_error("unsupported archive version " + std::to_string(version));
  const auto manifest_len = take<std::uint64_t>(bytes, pos);
  if (bytes.size() - pos < manifest_len) throw std::runtime_error("archive truncated in manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(pos, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("archive manifest: ") + e.what());
  }
  pos += manifest_len;
  const std::string_view payload = bytes.substr(pos);

  Archive archive;
  archive.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    Tensor t;
    t.name = entry.at("name").get<std::string>();
    t.role = parse_role(entry.at("role").get<std::string>());
    const auto rows = entry.at("shape").at(0).get<Index>();
    const auto cols = entry.at("shape").at(1).get<Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t len = static_cast<std::uint64_t>(rows * cols) * sizeof(double);
    if (rows < 0 || cols < 0 || offset > payload.size() || payload.size() - offset < len) {
      throw std::runtime_error("archive tensor '" + t.name + "' out of bounds");
    }
    t.value.resize(rows, cols);
    if (len > 0) std::memcpy(t.value.data(), payload.data() + offset, len);
    archive.tensors.push_back(std::move(t));
  }
  return archive;
}

void write_file(const Archive& archive, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize(archive);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Archive read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

Archive from_store(const ParamStore& store) {
  Archive archive;
  for (const auto& [name, entry] : store.entries()) archive.tensors.push_back({name, entry.role, entry.param.value});
  return archive;
}

void load_into(const Archive& archive, ParamStore& store) {
  for (const auto& t : archive.tensors) {
    Parameter& p = store.at(t.name);
    if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
      throw std::runtime_error("archive tensor '" + t.name + "' has a different shape than the model");
    }
    p.value = t.value;
  }
}

}  // namespace feddis::archive
