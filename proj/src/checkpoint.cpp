#include "gdpl/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gdpl {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return json::object();
  std::ifstream in(path);
  if (!in) throw CheckpointIoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointIoError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_group(const fs::path& dir, const std::string& group, const std::vector<Tensor>& tensors,
                const std::string& note) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CheckpointIoError("cannot create " + dir.string() + ": " + ec.message());

  json entries = json::array();
  std::set<std::string> names;
  const fs::path bin = dir / (group + ".bin");
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointIoError("cannot write " + bin.string());
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    if (!names.insert(t.name()).second) throw std::invalid_argument("duplicate tensor name '" + t.name() + "'");
    const auto& v = t.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    entries.push_back({{"name", t.name()},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", v.size()},
                       {"fnv1a", hex(fnv1a(v.data(), v.size() * sizeof(double)))}});
    offset += v.size();
  }
  out.close();
  if (!out) throw CheckpointIoError("write failed for " + bin.string());

  json manifest = read_manifest(dir);
  manifest[group] = {{"file", bin.filename().string()}, {"note", note}, {"tensors", entries}};
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw CheckpointIoError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
  if (!mf) throw CheckpointIoError("write failed for manifest in " + dir.string());
}

void load_group(const fs::path& dir, const std::string& group, const std::vector<Tensor>& tensors) {
  json manifest = read_manifest(dir);
  if (!manifest.contains(group)) throw CheckpointIoError("no group '" + group + "' in " + dir.string());
  const json& entry = manifest[group];
  const json& listed = entry["tensors"];
  if (listed.size() != tensors.size()) {
    throw CheckpointMismatch("group '" + group + "' holds " + std::to_string(listed.size()) + " tensors, model has " +
                             std::to_string(tensors.size()));
  }
  const fs::path bin = dir / entry["file"].get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw CheckpointIoError("cannot read " + bin.string());
  std::vector<double> payload;
  in.seekg(0, std::ios::end);
  payload.resize(static_cast<std::size_t>(in.tellg()) / sizeof(double));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!in) throw CheckpointIoError("short read from " + bin.string());

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const json& e = listed[i];
    Tensor t = tensors[i];
    const auto name = e["name"].get<std::string>();
    const auto shape = e["shape"].get<Shape>();
    if (name != t.name() || shape != t.shape()) {
      throw CheckpointMismatch("entry " + std::to_string(i) + " is '" + name + "' " + shape_string(shape) +
                               ", model expects '" + t.name() + "' " + shape_string(t.shape()));
    }
    const auto offset = e["offset"].get<std::size_t>(), count = e["count"].get<std::size_t>();
    if (offset + count > payload.size()) throw CheckpointMismatch("'" + name + "' runs past the end of " + bin.string());
    const double* src = payload.data() + offset;
    if (hex(fnv1a(src, count * sizeof(double))) != e["fnv1a"].get<std::string>()) {
      throw CheckpointMismatch("hash mismatch for '" + name + "' in " + bin.string());
    }
    std::copy(src, src + count, t.mutable_values().begin());
  }
}

bool has_group(const fs::path& dir, const std::string& group) { return read_manifest(dir).contains(group); }

std::string group_note(const fs::path& dir, const std::string& group) {
  json manifest = read_manifest(dir);
  if (!manifest.contains(group)) return "";
  return manifest[group].value("note", "");
}

}  // namespace gdpl
