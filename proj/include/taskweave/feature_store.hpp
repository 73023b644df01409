#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace taskweave {

using Matf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kDefaultClipLength = 2.0;

inline int clip_count(double duration, double clip_length = kDefaultClipLength) {
  return static_cast<int>(std::llround(duration / clip_length));
}

struct Annotation {
  std::string qid;
  std::string vid;
  double duration = 0.0;
  std::string query_text;
  std::vector<std::pair<double, double>> relevant_windows;  // (start_s, end_s)
  std::vector<int> saliency_labels;                         // one 0..4 level per clip

  void validate(double clip_length = kDefaultClipLength) const {
    for (const auto& [s, e] : relevant_windows) {
      if (s >= e)
        throw ValidationError("qid " + qid + ": window start >= end");
      if (s < 0.0 || e > duration)
        throw ValidationError("qid " + qid + ": window outside [0, duration]");
    }
    for (size_t i = 0; i < relevant_windows.size(); ++i)
      for (size_t j = i + 1; j < relevant_windows.size(); ++j) {
        const auto& a = relevant_windows[i];
        const auto& b = relevant_windows[j];
        if (std::max(a.first, b.first) < std::min(a.second, b.second))
          throw ValidationError("qid " + qid + ": overlapping windows");
      }
    const int n = clip_count(duration, clip_length);
    if (static_cast<int>(saliency_labels.size()) != n)
      throw ValidationError("qid " + qid + ": saliency_labels length " +
                            std::to_string(saliency_labels.size()) +
                            " != clip count " + std::to_string(n));
    for (int l : saliency_labels)
      if (l < 0 || l > 4)
        throw ValidationError("qid " + qid + ": saliency label out of 0..4");
  }
};

struct FeatureSequence {
  Eigen::MatrixXd video_feats;  // [N x D_v]
  Eigen::MatrixXd text_feats;   // [W x D_t]
  double clip_length = kDefaultClipLength;
};

struct PredictionRecord {
  std::string qid;
  // (start_s, end_s, confidence), sorted by confidence descending
  std::vector<std::array<double, 3>> pred_windows;
  std::vector<double> pred_saliency;

  void validate() const {
    double prev = 1.0;
    for (const auto& w : pred_windows) {
      if (w[0] >= w[1]) throw ValidationError("qid " + qid + ": start >= end");
      if (w[2] < 0.0 || w[2] > 1.0)
        throw ValidationError("qid " + qid + ": confidence outside [0,1]");
      if (w[2] > prev + 1e-12)
        throw ValidationError("qid " + qid + ": windows not sorted by confidence");
      prev = w[2];
    }
  }
};

inline Annotation annotation_from_json(const nlohmann::json& j) {
  Annotation a;
  a.qid = j.at("qid").get<std::string>();
  a.vid = j.at("vid").get<std::string>();
  a.duration = j.at("duration").get<double>();
  if (j.contains("query_text")) a.query_text = j.at("query_text").get<std::string>();
  for (const auto& w : j.at("relevant_windows"))
    a.relevant_windows.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());
  for (const auto& l : j.at("saliency_labels"))
    a.saliency_labels.push_back(l.get<int>());
  return a;
}

inline nlohmann::json annotation_to_json(const Annotation& a) {
  nlohmann::json j;
  j["qid"] = a.qid;
  j["vid"] = a.vid;
  j["duration"] = a.duration;
  if (!a.query_text.empty()) j["query_text"] = a.query_text;
  j["relevant_windows"] = nlohmann::json::array();
  for (const auto& [s, e] : a.relevant_windows)
    j["relevant_windows"].push_back({s, e});
  j["saliency_labels"] = a.saliency_labels;
  return j;
}

inline std::vector<Annotation> load_annotations(
    const std::filesystem::path& path,
    double clip_length = kDefaultClipLength) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
    Annotation a;
    try {
      a = annotation_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
    a.validate(clip_length);
    out.push_back(std::move(a));
  }
  return out;
}

inline void save_annotations(const std::vector<Annotation>& items,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& a : items) out << annotation_to_json(a).dump() << "\n";
}

// Binary feature file: 16-byte header (magic "TWF1", version, N, D as u32 LE)
// followed by a row-major float32 payload.
constexpr std::uint32_t kFeatureMagic = 0x31465754;  // "TWF1"
constexpr std::uint32_t kFeatureVersion = 1;

inline void save_feature_matrix(const Eigen::MatrixXd& m,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint32_t header[4] = {kFeatureMagic, kFeatureVersion,
                                   static_cast<std::uint32_t>(m.rows()),
                                   static_cast<std::uint32_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  Matf f = m.cast<float>();
  out.write(reinterpret_cast<const char*>(f.data()),
            static_cast<std::streamsize>(sizeof(float) * f.size()));
}

inline Eigen::MatrixXd load_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint32_t header[4];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header)))
    throw FormatError(path.string() + ": truncated header");
  if (header[0] != kFeatureMagic)
    throw FormatError(path.string() + ": bad magic");
  if (header[1] != kFeatureVersion)
    throw FormatError(path.string() + ": unsupported version");
  const std::uint32_t n = header[2], d = header[3];
  if (n == 0 || d == 0) throw FormatError(path.string() + ": empty shape");
  Matf f(n, d);
  if (!in.read(reinterpret_cast<char*>(f.data()),
               static_cast<std::streamsize>(sizeof(float) * f.size())))
    throw FormatError(path.string() + ": truncated payload");
  char extra;
  if (in.read(&extra, 1))
    throw FormatError(path.string() + ": trailing bytes after payload");
  Eigen::MatrixXd m = f.cast<double>();
  if (!m.allFinite())
    throw ValidationError(path.string() + ": non-finite feature entries");
  return m;
}

inline FeatureSequence load_features(const std::filesystem::path& dir,
                                     const std::string& vid,
                                     const std::string& qid,
                                     double clip_length = kDefaultClipLength) {
  FeatureSequence fs;
  fs.video_feats = load_feature_matrix(dir / (vid + ".vfeat"));
  fs.text_feats = load_feature_matrix(dir / (qid + ".tfeat"));
  fs.clip_length = clip_length;
  return fs;
}

inline nlohmann::json prediction_to_json(const PredictionRecord& r) {
  nlohmann::json j;
  j["qid"] = r.qid;
  j["pred_relevant_windows"] = nlohmann::json::array();
  for (const auto& w : r.pred_windows)
    j["pred_relevant_windows"].push_back({w[0], w[1], w[2]});
  j["pred_saliency_scores"] = r.pred_saliency;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.qid = j.at("qid").get<std::string>();
  for (const auto& w : j.at("pred_relevant_windows"))
    r.pred_windows.push_back(
        {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()});
  for (const auto& s : j.at("pred_saliency_scores"))
    r.pred_saliency.push_back(s.get<double>());
  return r;
}

inline void save_predictions(const std::vector<PredictionRecord>& records,
                             const std::filesystem::path& path) {
  for (const auto& r : records) r.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << prediction_to_json(r).dump() << "\n";
}

inline std::vector<PredictionRecord> load_predictions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
  }
  return out;
}

}  // namespace taskweave
