#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "star/datasets.hpp"
#include "star/errors.hpp"

namespace star {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

float level(int k) { return static_cast<float>(k) / 255.0f; }

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

cv::Mat read_png(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("file not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DataError("cannot decode image: " + path.string());
  if (m.depth() != CV_8U) throw DataError("expected 8-bit data in " + path.string());
  return m;
}

void write_png(const fs::path& path, const cv::Mat& m) {
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw DataError("cannot write " + path.string());
}

std::vector<std::string> scan_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Ids from manifest.json when present, otherwise from the primary image directory.
std::vector<std::string> dataset_ids(const fs::path& root, const std::string& kind,
                                     const fs::path& primary) {
  const auto manifest = root / kManifest;
  if (!fs::exists(manifest)) return scan_ids(primary);
  json j;
  try {
    std::ifstream in(manifest);
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid " + manifest.string() + ": " + e.what());
  }
  if (j.value("kind", std::string()) != kind)
    throw DataError(manifest.string() + ": expected kind '" + kind + "'");
  std::vector<std::string> ids;
  for (const auto& s : j.at("samples")) ids.push_back(s.at("id").get<std::string>());
  return ids;
}

void require_files(const std::vector<std::string>& ids, const fs::path& dir,
                   const std::string& what) {
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!fs::exists(dir / (id + ".png"))) missing.push_back(id);
  if (missing.empty()) return;
  std::string msg = "missing " + what + " for id";
  msg += missing.size() > 1 ? "s" : "";
  for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += (i ? ", '" : " '") + missing[i] + "'";
  if (missing.size() > 10) msg += ", ...";
  throw DataError(msg + " (in " + dir.string() + ")");
}

void write_manifest(const fs::path& root, const std::string& kind,
                    const std::vector<std::string>& ids, const std::string& split) {
  json j;
  j["format"] = "star-dataset";
  j["version"] = 1;
  j["kind"] = kind;
  j["samples"] = json::array();
  for (const auto& id : ids) j["samples"].push_back({{"id", id}, {"split", split}});
  std::ofstream out(root / kManifest);
  out << j.dump(2) << "\n";
}

void check_same_size(const Raster& r, const BinaryMask& m, const std::string& id) {
  if (r.height() != m.height() || r.width() != m.width())
    throw DataError("image and mask sizes differ for id '" + id + "'");
}

}  // namespace

Raster read_image(const fs::path& path) {
  cv::Mat m = read_png(path);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() != 1 && m.channels() != 3)
    throw DataError("unsupported channel count in " + path.string());
  const int c = m.channels();
  Raster r(c, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (c == 1) {
        r.at(0, y, x) = level(row[x]);
      } else {
        // stored BGR
        r.at(0, y, x) = level(row[3 * x + 2]);
        r.at(1, y, x) = level(row[3 * x + 1]);
        r.at(2, y, x) = level(row[3 * x + 0]);
      }
    }
  }
  return r;
}

void write_image(const fs::path& path, const Raster& image) {
  const int c = image.channels();
  require(c == 1 || c == 3, "write_image: only 1 or 3 channels are supported");
  cv::Mat m(image.height(), image.width(), c == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (c == 1) {
        row[x] = to_byte(image.at(0, y, x));
      } else {
        row[3 * x + 2] = to_byte(image.at(0, y, x));
        row[3 * x + 1] = to_byte(image.at(1, y, x));
        row[3 * x + 0] = to_byte(image.at(2, y, x));
      }
    }
  }
  write_png(path, m);
}

BinaryMask read_mask(const fs::path& path) {
  cv::Mat m = read_png(path);
  if (m.channels() != 1) throw DataError("mask must be single-channel: " + path.string());
  BinaryMask out(m.rows, m.cols);
  bool any255 = false, any1 = false;
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      const auto v = row[x];
      if (v == 255) {
        any255 = true;
      } else if (v == 1) {
        any1 = true;
      } else if (v != 0) {
        throw DataError("non-binary mask value " + std::to_string(v) + " at (" +
                        std::to_string(y) + "," + std::to_string(x) + ") in " + path.string());
      }
      out.at(y, x) = v ? 1 : 0;
    }
  }
  if (any1 && any255) throw DataError("mask mixes {0,1} and {0,255} encodings: " + path.string());
  return out;
}

void write_mask(const fs::path& path, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      const auto v = mask.at(y, x);
      require(v <= 1, "write_mask: non-binary mask");
      row[x] = v ? 255 : 0;
    }
  }
  write_png(path, m);
}

// ------------------------------------------------------------- SingleTemporalDataset

SingleTemporalDataset SingleTemporalDataset::open(const fs::path& root) {
  SingleTemporalDataset ds;
  ds.root_ = root;
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  ds.ids_ = dataset_ids(root, "single_temporal", root / "images");
  require_files(ds.ids_, root / "images", "image");
  require_files(ds.ids_, root / "masks", "mask");
  return ds;
}

Sample SingleTemporalDataset::load(std::size_t i) const {
  require(i < ids_.size(), "SingleTemporalDataset: index out of range");
  const auto& id = ids_[i];
  Sample s{id, read_image(root_ / "images" / (id + ".png")),
           read_mask(root_ / "masks" / (id + ".png"))};
  check_same_size(s.image, *s.mask, id);
  return s;
}

std::vector<Sample> SingleTemporalDataset::load_all() const {
  std::vector<Sample> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(load(i));
  return out;
}

// ----------------------------------------------------------------- BitemporalDataset

BitemporalDataset BitemporalDataset::open(const fs::path& root) {
  BitemporalDataset ds;
  ds.root_ = root;
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  ds.ids_ = dataset_ids(root, "bitemporal", root / "t1");
  require_files(ds.ids_, root / "t1", "t1 image");
  require_files(ds.ids_, root / "t2", "t2 image");
  require_files(ds.ids_, root / "change", "change mask");
  ds.has_semantic_ = fs::is_directory(root / "sem_t1") && fs::is_directory(root / "sem_t2");
  if (ds.has_semantic_) {
    require_files(ds.ids_, root / "sem_t1", "t1 semantic mask");
    require_files(ds.ids_, root / "sem_t2", "t2 semantic mask");
  }
  return ds;
}

BitemporalSample BitemporalDataset::load(std::size_t i) const {
  require(i < ids_.size(), "BitemporalDataset: index out of range");
  const auto& id = ids_[i];
  const auto file = id + ".png";
  BitemporalSample s{id, read_image(root_ / "t1" / file), read_image(root_ / "t2" / file),
                     read_mask(root_ / "change" / file), std::nullopt, std::nullopt};
  if (s.image_t1.height() != s.image_t2.height() || s.image_t1.width() != s.image_t2.width() ||
      s.image_t1.channels() != s.image_t2.channels())
    throw DataError("t1 and t2 images differ in shape for id '" + id + "'");
  check_same_size(s.image_t1, s.change, id);
  if (has_semantic_) {
    s.semantic_t1 = read_mask(root_ / "sem_t1" / file);
    s.semantic_t2 = read_mask(root_ / "sem_t2" / file);
    check_same_size(s.image_t1, *s.semantic_t1, id);
    check_same_size(s.image_t1, *s.semantic_t2, id);
  }
  return s;
}

std::vector<BitemporalSample> BitemporalDataset::load_all() const {
  std::vector<BitemporalSample> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(load(i));
  return out;
}

// ---------------------------------------------------------------------------- writers

void write_single_temporal(const fs::path& root, const std::vector<Sample>& samples,
                           const std::string& split) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    if (!s.mask) throw DataError("sample '" + s.id + "' has no mask");
    write_image(root / "images" / (s.id + ".png"), s.image);
    write_mask(root / "masks" / (s.id + ".png"), *s.mask);
    ids.push_back(s.id);
  }
  write_manifest(root, "single_temporal", ids, split);
}

void write_bitemporal(const fs::path& root, const std::vector<BitemporalSample>& samples,
                      const std::string& split) {
  for (const char* d : {"t1", "t2", "change"}) fs::create_directories(root / d);
  const bool semantic = !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const auto& s) {
    return s.semantic_t1.has_value() && s.semantic_t2.has_value();
  });
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    const auto file = s.id + ".png";
    write_image(root / "t1" / file, s.image_t1);
    write_image(root / "t2" / file, s.image_t2);
    write_mask(root / "change" / file, s.change);
    if (semantic) {
      write_mask(root / "sem_t1" / file, *s.semantic_t1);
      write_mask(root / "sem_t2" / file, *s.semantic_t2);
    }
    ids.push_back(s.id);
  }
  write_manifest(root, "bitemporal", ids, split);
}

}  // namespace star
