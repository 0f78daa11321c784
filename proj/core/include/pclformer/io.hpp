#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pclformer/postprocess.hpp"
#include "pclformer/segments.hpp"

// File formats shared by the library and the command-line tool.
//
// Annotation document (JSON):
//   {"num_classes": C, "videos": [{"video_id": "...", "T": 256,
//     "instances": [{"t_s": 10, "t_e": 70, "c": 2}]}]}
//   Frames are integers, classes are 1-based. num_classes is optional.
//
// Feature blob (binary, little-endian):
//   "PCLFEAT1" | u32 id_len | id bytes | u64 T | u64 n_tokens | u64 dim |
//   T*n_tokens*dim float64 values, row-major.
//
// Prediction file (JSON): [{"video_id": "...", "t_s": 0.0, "t_e": 64.0,
//   "class": 2, "score": 0.93}, ...]
namespace pclformer {

struct AnnotationSet {
  int num_classes = 0;  // 0 when the document does not state it
  std::vector<VideoAnnotation> videos;
};

std::string annotations_to_json(const AnnotationSet& set);
AnnotationSet annotations_from_json(const std::string& text);
AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const AnnotationSet& set);

void write_features(const std::filesystem::path& path, const VideoFeatures& video);
VideoFeatures read_features(const std::filesystem::path& path);

std::string predictions_to_json(const std::vector<Prediction>& preds);
std::vector<Prediction> predictions_from_json(const std::string& text);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);

std::string read_text(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pclformer
