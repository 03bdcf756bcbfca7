#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fusionboost/booster.hpp"

namespace fb {
namespace {

constexpr char kMagic[4] = {'F', 'B', 'S', 'T'};
constexpr const char* kModelNames[] = {"probe_a", "probe_b", "ase"};

// --- Writing ----------------------------------------------------------------

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back((v >> (8 * i)) & 0xff);
}

void put_f32(std::vector<unsigned char>& buf, float v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

void put_block(std::vector<unsigned char>& buf, const std::string& name,
               const std::uint32_t shape[4], const float* data, std::size_t count) {
  put_u32(buf, std::uint32_t(name.size()));
  buf.insert(buf.end(), name.begin(), name.end());
  for (int i = 0; i < 4; ++i) put_u32(buf, shape[i]);
  for (std::size_t i = 0; i < count; ++i) put_f32(buf, data[i]);
}

std::string fmt_float(float v) {
  char tmp[32];
  std::snprintf(tmp, sizeof(tmp), "%.9g", double(v));
  return tmp;
}

std::string fmt_trace(const std::vector<float>& trace) {
  std::string s;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i) s += ',';
    s += fmt_float(trace[i]);
  }
  return s;
}

const ConvNet& model_net(const TrainedBooster& tb, int model) {
  switch (model) {
    case 0: return tb.probe_a.net;
    case 1: return tb.probe_b.net;
    default: return tb.ase.net;
  }
}

ConvNet& model_net(TrainedBooster& tb, int model) {
  return const_cast<ConvNet&>(model_net(const_cast<const TrainedBooster&>(tb), model));
}

// --- Reading ----------------------------------------------------------------

struct Cursor {
  const unsigned char* p;
  std::size_t size;
  std::size_t off = 0;

  const unsigned char* take(std::size_t n, const std::string& what) {
    if (off + n > size)
      throw FormatError("checkpoint: truncated reading " + what + " at offset " +
                        std::to_string(off));
    const unsigned char* at = p + off;
    off += n;
    return at;
  }

  std::uint32_t u32(const std::string& what) {
    const unsigned char* b = take(4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  }

  std::uint64_t u64(const std::string& what) {
    std::uint64_t v = 0;
    const unsigned char* b = take(8, what);
    for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
    return v;
  }
};

struct Block {
  std::uint32_t shape[4];
  std::vector<float> data;
};

float parse_float(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (end != s.c_str() + s.size() || s.empty())
    throw FormatError("checkpoint: bad value for trailer key '" + key + "'");
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || s.empty())
    throw FormatError("checkpoint: bad value for trailer key '" + key + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || s.empty())
    throw FormatError("checkpoint: bad value for trailer key '" + key + "'");
  return v;
}

std::vector<float> parse_trace(const std::string& s, const std::string& key) {
  std::vector<float> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    out.push_back(parse_float(s.substr(start, comma - start), key));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void apply_trailer(TrainedBooster& tb, const std::string& text) {
  std::map<std::string, std::string> kv;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("checkpoint: malformed trailer line '" + line + "'");
    if (!kv.emplace(line.substr(0, eq), line.substr(eq + 1)).second)
      throw FormatError("checkpoint: duplicate trailer key '" + line.substr(0, eq) + "'");
  }

  const auto get = [&kv](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end())
      throw FormatError(std::string("checkpoint: trailer missing key '") + key + "'");
    return it->second;
  };

  BoosterConfig& cfg = tb.cfg;
  cfg.k = int(parse_int(get("k"), "k"));
  cfg.epochs = int(parse_int(get("epochs"), "epochs"));
  cfg.batch = int(parse_int(get("batch"), "batch"));
  cfg.lr = parse_float(get("lr"), "lr");
  cfg.patch = int(parse_int(get("patch"), "patch"));
  cfg.patches_per_pair = int(parse_int(get("patches_per_pair"), "patches_per_pair"));
  cfg.seed = parse_u64(get("seed"), "seed");
  cfg.beta1 = parse_float(get("beta1"), "beta1");
  cfg.beta2 = parse_float(get("beta2"), "beta2");
  cfg.eps = parse_float(get("eps"), "eps");
  tb.traces.per_a = parse_trace(get("trace_per_a"), "trace_per_a");
  tb.traces.per_b = parse_trace(get("trace_per_b"), "trace_per_b");
  tb.traces.rec = parse_trace(get("trace_rec"), "trace_rec");

  static const char* known[] = {"k",     "epochs", "batch", "lr",          "patch",
                                "patches_per_pair", "seed",  "beta1",       "beta2",
                                "eps",   "trace_per_a",      "trace_per_b", "trace_rec"};
  for (const auto& [key, value] : kv) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw FormatError("checkpoint: unknown trailer key '" + key + "'");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedBooster& tb) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);

  std::uint32_t blocks = 0;
  for (int m = 0; m < 3; ++m) blocks += 2 * std::uint32_t(model_net(tb, m).layers.size());
  put_u32(buf, blocks);

  for (int m = 0; m < 3; ++m) {
    const ConvNet& net = model_net(tb, m);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const ConvLayer& layer = net.layers[i];
      const std::string stem = std::string(kModelNames[m]) + "." + std::to_string(i);
      const std::uint32_t wshape[4] = {std::uint32_t(layer.out_channels),
                                       std::uint32_t(layer.in_channels), 3, 3};
      put_block(buf, stem + ".weight", wshape, layer.weight.data.data(),
                layer.weight.data.size());
      const std::uint32_t bshape[4] = {std::uint32_t(layer.out_channels), 1, 1, 1};
      put_block(buf, stem + ".bias", bshape, layer.bias.data(), layer.bias.size());
    }
  }

  std::string trailer;
  trailer += "k=" + std::to_string(tb.cfg.k) + "\n";
  trailer += "epochs=" + std::to_string(tb.cfg.epochs) + "\n";
  trailer += "batch=" + std::to_string(tb.cfg.batch) + "\n";
  trailer += "lr=" + fmt_float(tb.cfg.lr) + "\n";
  trailer += "patch=" + std::to_string(tb.cfg.patch) + "\n";
  trailer += "patches_per_pair=" + std::to_string(tb.cfg.patches_per_pair) + "\n";
  trailer += "seed=" + std::to_string(tb.cfg.seed) + "\n";
  trailer += "beta1=" + fmt_float(tb.cfg.beta1) + "\n";
  trailer += "beta2=" + fmt_float(tb.cfg.beta2) + "\n";
  trailer += "eps=" + fmt_float(tb.cfg.eps) + "\n";
  trailer += "trace_per_a=" + fmt_trace(tb.traces.per_a) + "\n";
  trailer += "trace_per_b=" + fmt_trace(tb.traces.per_b) + "\n";
  trailer += "trace_rec=" + fmt_trace(tb.traces.rec) + "\n";
  put_u32(buf, std::uint32_t(trailer.size()));
  buf.insert(buf.end(), trailer.begin(), trailer.end());

  std::uint64_t sum = 0;
  for (unsigned char b : buf) sum += b;
  put_u64(buf, sum);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw IoError("checkpoint: write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("checkpoint: cannot move '" + tmp.string() + "' to '" + path.string() +
                  "': " + ec.message());
}

TrainedBooster load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  Cursor cur{buf.data(), buf.size()};

  const unsigned char* magic = cur.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic at offset 0");
  const std::uint32_t version = cur.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t block_count = cur.u32("block count");
  if (block_count > 1024)
    throw FormatError("checkpoint: implausible block count " + std::to_string(block_count));

  std::map<std::string, Block> blocks;
  for (std::uint32_t b = 0; b < block_count; ++b) {
    const std::uint32_t name_len = cur.u32("block name length");
    if (name_len == 0 || name_len > 256)
      throw FormatError("checkpoint: implausible block name length at offset " +
                        std::to_string(cur.off - 4));
    const unsigned char* name_bytes = cur.take(name_len, "block name");
    const std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    Block block;
    std::uint64_t count = 1;
    for (int i = 0; i < 4; ++i) {
      block.shape[i] = cur.u32("shape of parameter block '" + name + "'");
      count *= block.shape[i];
    }
    if (count == 0 || count > (1u << 24))
      throw FormatError("checkpoint: implausible size for parameter block '" + name + "'");
    const unsigned char* data = cur.take(std::size_t(count) * 4, "parameter block '" + name + "'");
    block.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t bits = std::uint32_t(data[4 * i]) | std::uint32_t(data[4 * i + 1]) << 8 |
                           std::uint32_t(data[4 * i + 2]) << 16 |
                           std::uint32_t(data[4 * i + 3]) << 24;
      block.data[i] = std::bit_cast<float>(bits);
    }
    if (!blocks.emplace(name, std::move(block)).second)
      throw FormatError("checkpoint: duplicate parameter block '" + name + "'");
  }

  const std::uint32_t trailer_len = cur.u32("trailer length");
  const unsigned char* trailer_bytes = cur.take(trailer_len, "trailer");
  const std::string trailer(reinterpret_cast<const char*>(trailer_bytes), trailer_len);

  const std::size_t body_end = cur.off;
  const std::uint64_t stored = cur.u64("checksum");
  if (cur.off != buf.size())
    throw FormatError("checkpoint: " + std::to_string(buf.size() - cur.off) +
                      " trailing bytes after checksum");
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < body_end; ++i) sum += buf[i];
  if (sum != stored)
    throw FormatError("checkpoint: checksum mismatch (stored " + std::to_string(stored) +
                      ", computed " + std::to_string(sum) + ")");

  TrainedBooster tb;
  Rng scratch(0);
  tb.probe_a = make_probe_unit(scratch);
  tb.probe_b = make_probe_unit(scratch);
  tb.ase = make_ase_module(scratch);

  std::size_t used = 0;
  for (int m = 0; m < 3; ++m) {
    ConvNet& net = model_net(tb, m);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      ConvLayer& layer = net.layers[i];
      const std::string stem = std::string(kModelNames[m]) + "." + std::to_string(i);
      const auto fetch = [&](const std::string& name, const std::uint32_t want[4],
                             std::vector<float>& dst) {
        const auto it = blocks.find(name);
        if (it == blocks.end())
          throw FormatError("checkpoint: missing parameter block '" + name + "'");
        for (int s = 0; s < 4; ++s)
          if (it->second.shape[s] != want[s])
            throw FormatError("checkpoint: parameter block '" + name +
                              "' has an unexpected shape");
        dst = std::move(it->second.data);
        ++used;
      };
      const std::uint32_t wshape[4] = {std::uint32_t(layer.out_channels),
                                       std::uint32_t(layer.in_channels), 3, 3};
      fetch(stem + ".weight", wshape, layer.weight.data);
      const std::uint32_t bshape[4] = {std::uint32_t(layer.out_channels), 1, 1, 1};
      fetch(stem + ".bias", bshape, layer.bias);
    }
  }
  if (used != blocks.size())
    throw FormatError("checkpoint: " + std::to_string(blocks.size() - used) +
                      " unrecognized parameter blocks");

  apply_trailer(tb, trailer);
  try {
    tb.cfg.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: invalid stored config: ") + e.what());
  }
  return tb;
}

}  // namespace fb
