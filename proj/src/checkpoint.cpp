#include "msafeb/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "msafeb/errors.hpp"
#include "msafeb/feature_file.hpp"

namespace msafeb {

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& p : params.entries()) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_tensor_block(out, p.value);
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string what = path.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError(what + ": bad magic");
  }
  const std::uint32_t version = read_u32(in, what);
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32(in, what);
  NamedTensors stages;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(in, what + ": stage " + std::to_string(i));
    if (len == 0 || len > 4096) {
      throw FormatError(what + ": stage " + std::to_string(i) + " has bad name length " +
                        std::to_string(len));
    }
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) {
      throw FormatError(what + ": stage " + std::to_string(i) + " name truncated");
    }
    Tensor t = read_tensor_block(in, "stage '" + name + "'");
    stages.emplace_back(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(what + ": trailing bytes after " + std::to_string(count) + " stages");
  }
  return stages;
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  const NamedTensors stages = read_checkpoint(path);
  auto& entries = params.entries();
  const std::size_t common = std::min(stages.size(), entries.size());
  for (std::size_t i = 0; i < common; ++i) {
    const auto& [name, t] = stages[i];
    if (name != entries[i].name) {
      throw FormatError("checkpoint stage " + std::to_string(i) + " mismatch: file has '" + name +
                       "', model expects '" + entries[i].name + "'");
    }
    if (t.dims() != entries[i].value.dims()) {
      throw FormatError("checkpoint stage '" + name + "': shape " + to_string(t.dims()) +
                       " does not match model shape " + to_string(entries[i].value.dims()));
    }
  }
  if (stages.size() != entries.size()) {
    const std::string which = stages.size() > entries.size()
                                  ? "unexpected stage '" + stages[common].first + "'"
                                  : "missing stage '" + entries[common].name + "'";
    throw FormatError("checkpoint stage mismatch: " + which + " (file has " +
                     std::to_string(stages.size()) + " stages, model " +
                     std::to_string(entries.size()) + ")");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto src = stages[i].second.data();
    std::copy(src.begin(), src.end(), entries[i].value.mutable_data().begin());
  }
}

}  // namespace msafeb
