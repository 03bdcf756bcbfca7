#include "fusionboost/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace fb {
namespace fs = std::filesystem;

GrayImage clamp01(GrayImage img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

namespace {

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

// --- PGM (P5, maxval 255) ---------------------------------------------------

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(char(ch));
    ch = in.get();
  }
  if (tok.empty())
    throw FormatError("pgm: truncated header at offset " + std::to_string(in.tellg() == -1 ? 0 : long(in.tellg())) + ": " + path.string());
  return tok;
}

int pgm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pgm_token(in, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError("pgm: bad header token '" + tok + "': " + path.string());
  }
}

GrayImage load_pgm(std::istream& in, const fs::path& path) {
  if (pgm_token(in, path) != "P5") throw FormatError("pgm: not a P5 file: " + path.string());
  const int w = pgm_int(in, path);
  const int h = pgm_int(in, path);
  const int maxval = pgm_int(in, path);
  if (w <= 0 || h <= 0) throw FormatError("pgm: bad dimensions: " + path.string());
  if (maxval != 255)
    throw FormatError("pgm: unsupported maxval " + std::to_string(maxval) + " (only 255): " +
                      path.string());
  // The single whitespace byte after maxval was already consumed by pgm_token.
  std::vector<unsigned char> bytes(std::size_t(h) * w);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (std::size_t(in.gcount()) != bytes.size())
    throw FormatError("pgm: truncated pixel data at offset " +
                      std::to_string(long(in.gcount())) + " of " +
                      std::to_string(bytes.size()) + ": " + path.string());
  GrayImage img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

void save_pgm(const GrayImage& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(std::size_t(img.h) * img.w);
  for (std::int64_t i = 0; i < img.size(); ++i) bytes[i] = quantize(img.data[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// --- PNG --------------------------------------------------------------------

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReadGuard() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

GrayImage load_png(const fs::path& path) {
  PngReadGuard g;
  g.fp = std::fopen(path.string().c_str(), "rb");
  if (!g.fp) throw IoError("cannot open: " + path.string());
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  g.info = png_create_info_struct(g.png);
  if (!g.png || !g.info) throw IoError("png: allocation failure: " + path.string());
  if (setjmp(png_jmpbuf(g.png))) throw FormatError("png: corrupt file: " + path.string());

  png_init_io(g.png, g.fp);
  png_read_info(g.png, g.info);

  const int depth = png_get_bit_depth(g.png, g.info);
  if (depth == 16)
    throw FormatError("png: unsupported 16-bit depth (only 8-bit gray / 24-bit RGB): " +
                      path.string());
  const int color = png_get_color_type(g.png, g.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);

  const int w = int(png_get_image_width(g.png, g.info));
  const int h = int(png_get_image_height(g.png, g.info));
  const int channels = png_get_channels(g.png, g.info);
  if (channels != 1 && channels != 3)
    throw FormatError("png: unsupported channel count " + std::to_string(channels) + ": " +
                      path.string());

  std::vector<unsigned char> rowbuf(std::size_t(w) * channels);
  GrayImage img(h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(g.png, rowbuf.data(), nullptr);
    if (channels == 1) {
      for (int x = 0; x < w; ++x) img.at(y, x) = rowbuf[x] / 255.0f;
    } else {
      for (int x = 0; x < w; ++x) {
        const float lum = 0.299f * rowbuf[3 * x] + 0.587f * rowbuf[3 * x + 1] +
                          0.114f * rowbuf[3 * x + 2];
        img.at(y, x) = lum / 255.0f;
      }
    }
  }
  png_read_end(g.png, nullptr);
  return img;
}

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriteGuard() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

void save_png(const GrayImage& img, const fs::path& path) {
  PngWriteGuard g;
  g.fp = std::fopen(path.string().c_str(), "wb");
  if (!g.fp) throw IoError("cannot open for writing: " + path.string());
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  g.info = png_create_info_struct(g.png);
  if (!g.png || !g.info) throw IoError("png: allocation failure: " + path.string());
  if (setjmp(png_jmpbuf(g.png))) throw IoError("png: write failed: " + path.string());

  png_init_io(g.png, g.fp);
  png_set_IHDR(g.png, g.info, png_uint_32(img.w), png_uint_32(img.h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  std::vector<unsigned char> rowbuf(std::size_t(img.w));
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) rowbuf[x] = quantize(img.at(y, x));
    png_write_row(g.png, rowbuf.data());
  }
  png_write_end(g.png, g.info);
}

}  // namespace

GrayImage load_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), 8);
  const std::streamsize got = in.gcount();
  if (got >= 2 && magic[0] == 'P' && magic[1] == '5') {
    in.clear();
    in.seekg(0);
    return load_pgm(in, path);
  }
  if (got == 8 && png_sig_cmp(magic, 0, 8) == 0) {
    in.close();
    return load_png(path);
  }
  throw FormatError("unsupported image format (expect PGM P5 or PNG): " + path.string());
}

void save_image(const GrayImage& img, const fs::path& path) {
  require(img.size() > 0, "save_image: empty image");
  const std::string ext = path.extension().string();
  if (ext == ".pgm")
    save_pgm(img, path);
  else if (ext == ".png")
    save_png(img, path);
  else
    throw FormatError("unsupported image extension '" + ext + "' (use .pgm or .png): " +
                      path.string());
}

GrayImage average_filter(const GrayImage& img, int k) {
  require(img.size() > 0, "average_filter: empty image");
  require(k >= 0, "average_filter: k must be >= 0");
  if (k == 0) return img;
  const int h = img.h, w = img.w;
  const double count = 2 * k + 1;

  // Separable with clamped indices; replicate padding factorizes per axis.
  // Accumulation stays in double and each axis divides by the window width,
  // so a window of equal values averages back to that value bit-exactly.
  GrayImage tmp(h, w);
  for (int y = 0; y < h; ++y) {
    const float* src = img.row(y);
    float* dst = tmp.row(y);
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int d = -k; d <= k; ++d) acc += src[std::clamp(x + d, 0, w - 1)];
      dst[x] = float(acc / count);
    }
  }
  GrayImage out(h, w);
  std::vector<double> acc(w, 0.0);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int d = -k; d <= k; ++d) {
      const float* src = tmp.row(std::clamp(y + d, 0, h - 1));
      for (int x = 0; x < w; ++x) acc[x] += src[x];
    }
    float* dst = out.row(y);
    for (int x = 0; x < w; ++x) dst[x] = float(acc[x] / count);
  }
  return out;
}

BaseDetail base_detail_split(const GrayImage& img, int k) {
  BaseDetail bd;
  bd.base = average_filter(img, k);
  bd.detail = GrayImage(img.h, img.w);
  for (std::int64_t i = 0; i < img.size(); ++i)
    bd.detail.data[i] = img.data[i] - bd.base.data[i];
  return bd;
}

GrayImage crop(const GrayImage& img, int y0, int x0, int size) {
  require(size > 0, "crop: size must be positive");
  require(y0 >= 0 && x0 >= 0 && y0 + size <= img.h && x0 + size <= img.w,
          "crop: window out of bounds");
  GrayImage out(size, size);
  for (int y = 0; y < size; ++y)
    std::memcpy(out.row(y), img.row(y0 + y) + x0, sizeof(float) * size);
  return out;
}

double mean_abs_diff(const GrayImage& x, const GrayImage& y) {
  require(x.h == y.h && x.w == y.w, "mean_abs_diff: dimensions differ");
  double acc = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) acc += std::abs(double(x.data[i]) - y.data[i]);
  return acc / double(x.size());
}

std::vector<std::pair<int, int>> sample_patch_offsets(int h, int w, int size, int count,
                                                      Rng& rng) {
  require(size > 0 && size <= std::min(h, w), "sample_patch_offsets: size exceeds image");
  require(count > 0, "sample_patch_offsets: count must be positive");
  std::vector<std::pair<int, int>> offs;
  offs.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int y0 = int(rng.below(std::uint32_t(h - size + 1)));
    const int x0 = int(rng.below(std::uint32_t(w - size + 1)));
    offs.emplace_back(y0, x0);
  }
  return offs;
}

std::vector<std::vector<GrayImage>> crop_patches(const std::vector<const GrayImage*>& images,
                                                 int size, int count, Rng& rng) {
  require(!images.empty(), "crop_patches: empty image tuple");
  for (const GrayImage* im : images)
    require(im && im->h == images[0]->h && im->w == images[0]->w,
            "crop_patches: images must share one shape");
  const auto offs = sample_patch_offsets(images[0]->h, images[0]->w, size, count, rng);
  std::vector<std::vector<GrayImage>> out;
  out.reserve(offs.size());
  for (const auto& [y0, x0] : offs) {
    std::vector<GrayImage> tuple;
    tuple.reserve(images.size());
    for (const GrayImage* im : images) tuple.push_back(crop(*im, y0, x0, size));
    out.push_back(std::move(tuple));
  }
  return out;
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "exposure") return Scenario::Exposure;
  if (name == "focus") return Scenario::Focus;
  if (name == "modality") return Scenario::Modality;
  throw ContractError("unknown scenario '" + name + "' (exposure|focus|modality)");
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Exposure: return "exposure";
    case Scenario::Focus: return "focus";
    case Scenario::Modality: return "modality";
  }
  return "?";
}

// --- Pair manifests ---------------------------------------------------------

PairManifest PairManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");

  const auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : dir / fp;
  };

  PairManifest m;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) {
      const auto b = col.find_first_not_of(' ');
      const auto e = col.find_last_not_of(' ');
      cols.push_back(b == std::string::npos ? std::string() : col.substr(b, e - b + 1));
    }
    if (cols.size() != 3 && cols.size() != 4)
      throw FormatError("manifest line " + std::to_string(lineno) +
                        ": expected 3 or 4 tab-separated columns: " + path.string());
    if (cols[0].empty())
      throw FormatError("manifest line " + std::to_string(lineno) + ": empty id: " +
                        path.string());
    if (!seen.insert(cols[0]).second)
      throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate id '" +
                        cols[0] + "': " + path.string());

    PairEntry e;
    e.id = cols[0];
    e.a = resolve(cols[1]);
    e.b = resolve(cols[2]);
    if (cols.size() == 4) e.fused = resolve(cols[3]);
    for (const fs::path* p : {&e.a, &e.b}) {
      if (!fs::exists(*p))
        throw IoError("manifest line " + std::to_string(lineno) + ": missing file: " +
                      p->string());
    }
    if (e.fused && !fs::exists(*e.fused))
      throw IoError("manifest line " + std::to_string(lineno) + ": missing file: " +
                    e.fused->string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

void PairManifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open manifest for writing: " + path.string());
  const fs::path dir =
      path.has_parent_path() ? fs::absolute(path).parent_path() : fs::current_path();

  // Entries inside the manifest's directory are stored relative so the whole
  // run directory stays relocatable.
  const auto encode = [&](const fs::path& p) {
    std::error_code ec;
    const fs::path rel = fs::relative(fs::absolute(p), dir, ec);
    if (!ec && !rel.empty() && rel.native().rfind("..", 0) != 0) return rel.string();
    return fs::absolute(p).string();
  };

  out << "# id\tpath_a\tpath_b[\tpath_fused]\n";
  for (const auto& e : entries) {
    out << e.id << '\t' << encode(e.a) << '\t' << encode(e.b);
    if (e.fused) out << '\t' << encode(*e.fused);
    out << '\n';
  }
  if (!out) throw IoError("manifest write failed: " + path.string());
}

}  // namespace fb
