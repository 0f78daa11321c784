#include "pclformer/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pclformer/error.hpp"

namespace pclformer {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kFeatureMagic[8] = {'P', 'C', 'L', 'F', 'E', 'A', 'T', '1'};

template <class T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw InputError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T take(std::istream& is, const fs::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof value)) {
    throw InputError("truncated feature blob " + path.string());
  }
  return value;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string annotations_to_json(const AnnotationSet& set) {
  json videos = json::array();
  for (const auto& v : set.videos) {
    json instances = json::array();
    for (const auto& a : v.instances) instances.push_back({{"t_s", a.t_s}, {"t_e", a.t_e}, {"c", a.c}});
    videos.push_back({{"video_id", v.video_id}, {"T", v.T}, {"instances", std::move(instances)}});
  }
  json doc;
  if (set.num_classes > 0) doc["num_classes"] = set.num_classes;
  doc["videos"] = std::move(videos);
  return doc.dump(2) + "\n";
}

AnnotationSet annotations_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("annotation document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("videos") || !doc["videos"].is_array()) {
    throw InputError("annotation document needs a 'videos' array");
  }
  AnnotationSet set;
  if (doc.contains("num_classes")) set.num_classes = required<int>(doc, "num_classes", "annotation document");
  for (const auto& v : doc["videos"]) {
    VideoAnnotation va;
    va.video_id = required<std::string>(v, "video_id", "video");
    const std::string where = "video " + va.video_id;
    va.T = required<long>(v, "T", where);
    if (!v.contains("instances") || !v["instances"].is_array()) {
      throw InputError(where + ": missing field 'instances'");
    }
    for (const auto& a : v["instances"]) {
      va.instances.push_back({required<long>(a, "t_s", where), required<long>(a, "t_e", where),
                              required<int>(a, "c", where)});
    }
    va.validate(set.num_classes);
    set.videos.push_back(std::move(va));
  }
  return set;
}

AnnotationSet read_annotations(const fs::path& path) { return annotations_from_json(read_text(path)); }

void write_annotations(const fs::path& path, const AnnotationSet& set) { write_text(path, annotations_to_json(set)); }

void write_features(const fs::path& path, const VideoFeatures& video) {
  if (video.data.size() != video.T * video.n_tokens * video.dim) {
    throw DimensionError("feature blob for " + video.video_id + " has inconsistent extents");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(video.video_id.size()));
  out.write(video.video_id.data(), static_cast<std::streamsize>(video.video_id.size()));
  put<std::uint64_t>(out, video.T);
  put<std::uint64_t>(out, video.n_tokens);
  put<std::uint64_t>(out, video.dim);
  out.write(reinterpret_cast<const char*>(video.data.data()),
            static_cast<std::streamsize>(video.data.size() * sizeof(double)));
  if (!out) throw InputError("write failed for " + path.string());
}

VideoFeatures read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open feature blob " + path.string());
  char magic[sizeof kFeatureMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) {
    throw InputError(path.string() + " is not a feature blob");
  }
  VideoFeatures v;
  const auto id_len = take<std::uint32_t>(in, path);
  v.video_id.resize(id_len);
  if (!in.read(v.video_id.data(), id_len)) throw InputError("truncated feature blob " + path.string());
  v.T = take<std::uint64_t>(in, path);
  v.n_tokens = take<std::uint64_t>(in, path);
  v.dim = take<std::uint64_t>(in, path);
  v.data.resize(v.T * v.n_tokens * v.dim);
  if (!in.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(double)))) {
    throw InputError("truncated feature blob " + path.string());
  }
  return v;
}

std::string predictions_to_json(const std::vector<Prediction>& preds) {
  json doc = json::array();
  for (const auto& p : preds) {
    doc.push_back({{"video_id", p.video_id}, {"t_s", p.t_s}, {"t_e", p.t_e}, {"class", p.c}, {"score", p.score}});
  }
  return doc.dump(2) + "\n";
}

std::vector<Prediction> predictions_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("prediction file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw InputError("prediction file must hold a JSON array");
  std::vector<Prediction> out;
  for (const auto& p : doc) {
    Prediction pred;
    pred.video_id = required<std::string>(p, "video_id", "prediction");
    pred.t_s = required<double>(p, "t_s", "prediction");
    pred.t_e = required<double>(p, "t_e", "prediction");
    pred.c = required<int>(p, "class", "prediction");
    pred.score = required<double>(p, "score", "prediction");
    if (!(pred.t_s < pred.t_e)) throw InputError("prediction for " + pred.video_id + " has t_s >= t_e");
    if (!(pred.score >= 0.0 && pred.score <= 1.0)) {
      throw InputError("prediction for " + pred.video_id + " has a score outside [0, 1]");
    }
    out.push_back(std::move(pred));
  }
  return out;
}

std::vector<Prediction> read_predictions(const fs::path& path) { return predictions_from_json(read_text(path)); }

void write_predictions(const fs::path& path, const std::vector<Prediction>& preds) {
  write_text(path, predictions_to_json(preds));
}

}  // namespace pclformer
