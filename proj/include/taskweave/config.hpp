#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "taskweave/feedback.hpp"
#include "taskweave/joint_loss.hpp"
#include "taskweave/model.hpp"

namespace taskweave {

// Flat key=value experiment configuration. Every field can be set from a
// config file or a --set key=value override.
struct RunConfig {
  std::string data_train;     // data.train
  std::string data_val;       // data.val
  std::string data_features;  // data.features

  int epochs = 60;
  int batch_size = 16;
  double learning_rate = 3e-3;
  // "cosine": linear warmup over the first 5% of steps, then cosine decay to
  // 10% of the base rate; "constant": fixed learning_rate throughout
  std::string lr_schedule = "constant";
  // rotate each item's video+text features by a fresh shared orthogonal
  // matrix every epoch (train time only; requires dim_video == dim_text).
  // Query-video matching is invariant to a joint rotation, so this forbids
  // memorizing absolute feature directions without touching the task.
  bool augment_rotation = true;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  std::uint64_t seed = 1;
  int eval_every = 5;
  double ema_decay = 0.999;

  FeedbackMode feedback_mode = FeedbackMode::kMr2Hd;
  double feedback_start_frac = 0.5;

  ExpertKind experts_mr = ExpertKind::kCnn;
  ExpertKind experts_hd = ExpertKind::kIdentity;
  int experts_shared_layers = 2;

  LossType loss_type = LossType::kTaskDependent;
  // weighted_sum preset coefficients (Moment-DETR lineage defaults)
  double loss_weighted_mr = 1.0;
  double loss_weighted_hd = 4.0;

  int mr_num_queries = 10;
  int mr_layers = 2;
  bool mr_aux_loss = true;
  int hd_hidden_ratio = 2;

  int model_dim = 64;
  int model_dim_video = 64;
  int model_dim_text = 64;
  int model_fusion_layers = 2;
  int model_heads = 8;
  double model_dropout = 0.0;
  double clip_length = kDefaultClipLength;

  void validate() const {
    if (epochs <= 0) throw ValidationError("config: epochs must be > 0");
    if (learning_rate <= 0.0)
      throw ValidationError("config: learning_rate must be > 0");
    if (batch_size <= 0) throw ValidationError("config: batch_size must be > 0");
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "data.train") data_train = value;
    else if (key == "data.val") data_val = value;
    else if (key == "data.features") data_features = value;
    else if (key == "epochs") epochs = std::stoi(value);
    else if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "learning_rate") learning_rate = std::stod(value);
    else if (key == "augment.rotation")
      augment_rotation = (value == "true" || value == "1");
    else if (key == "lr.schedule") {
      if (value != "cosine" && value != "constant")
        throw ValidationError("config: lr.schedule must be cosine or constant");
      lr_schedule = value;
    }
    else if (key == "weight_decay") weight_decay = std::stod(value);
    else if (key == "grad_clip") grad_clip = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "eval_every") eval_every = std::stoi(value);
    else if (key == "ema.decay") ema_decay = std::stod(value);
    else if (key == "feedback.mode") feedback_mode = feedback_mode_from_string(value);
    else if (key == "feedback.start_frac") feedback_start_frac = std::stod(value);
    else if (key == "experts.mr") experts_mr = expert_kind_from_string(value);
    else if (key == "experts.hd") experts_hd = expert_kind_from_string(value);
    else if (key == "experts.shared_layers") experts_shared_layers = std::stoi(value);
    else if (key == "loss.type") loss_type = loss_type_from_string(value);
    else if (key == "loss.weighted_mr") loss_weighted_mr = std::stod(value);
    else if (key == "loss.weighted_hd") loss_weighted_hd = std::stod(value);
    else if (key == "mr.num_queries") mr_num_queries = std::stoi(value);
    else if (key == "mr.layers") mr_layers = std::stoi(value);
    else if (key == "mr.aux_loss") mr_aux_loss = (value == "true" || value == "1");
    else if (key == "hd.hidden_ratio") hd_hidden_ratio = std::stoi(value);
    else if (key == "model.dim") model_dim = std::stoi(value);
    else if (key == "model.dim_video") model_dim_video = std::stoi(value);
    else if (key == "model.dim_text") model_dim_text = std::stoi(value);
    else if (key == "model.fusion_layers") model_fusion_layers = std::stoi(value);
    else if (key == "model.heads") model_heads = std::stoi(value);
    else if (key == "model.dropout") model_dropout = std::stod(value);
    else if (key == "clip_length") clip_length = std::stod(value);
    else throw ValidationError("unknown config key: " + key);
  }

  std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "data.train = " << data_train << "\n";
    os << "data.val = " << data_val << "\n";
    os << "data.features = " << data_features << "\n";
    os << "epochs = " << epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "learning_rate = " << learning_rate << "\n";
    os << "lr.schedule = " << lr_schedule << "\n";
    os << "augment.rotation = " << (augment_rotation ? "true" : "false") << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "grad_clip = " << grad_clip << "\n";
    os << "seed = " << seed << "\n";
    os << "eval_every = " << eval_every << "\n";
    os << "ema.decay = " << ema_decay << "\n";
    os << "feedback.mode = " << to_string(feedback_mode) << "\n";
    os << "feedback.start_frac = " << feedback_start_frac << "\n";
    os << "experts.mr = " << to_string(experts_mr) << "\n";
    os << "experts.hd = " << to_string(experts_hd) << "\n";
    os << "experts.shared_layers = " << experts_shared_layers << "\n";
    os << "loss.type = " << to_string(loss_type) << "\n";
    os << "loss.weighted_mr = " << loss_weighted_mr << "\n";
    os << "loss.weighted_hd = " << loss_weighted_hd << "\n";
    os << "mr.num_queries = " << mr_num_queries << "\n";
    os << "mr.layers = " << mr_layers << "\n";
    os << "mr.aux_loss = " << (mr_aux_loss ? "true" : "false") << "\n";
    os << "hd.hidden_ratio = " << hd_hidden_ratio << "\n";
    os << "model.dim = " << model_dim << "\n";
    os << "model.dim_video = " << model_dim_video << "\n";
    os << "model.dim_text = " << model_dim_text << "\n";
    os << "model.fusion_layers = " << model_fusion_layers << "\n";
    os << "model.heads = " << model_heads << "\n";
    os << "model.dropout = " << model_dropout << "\n";
    os << "clip_length = " << clip_length << "\n";
    return os.str();
  }

  std::uint64_t hash() const {
    // FNV-1a over the canonical serialization
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : serialize()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.dim_video = model_dim_video;
    m.dim_text = model_dim_text;
    m.dim = model_dim;
    m.fusion_layers = model_fusion_layers;
    m.heads = model_heads;
    m.dropout = model_dropout;
    m.mr_expert = experts_mr;
    m.hd_expert = experts_hd;
    m.shared_layers = experts_shared_layers;
    m.num_queries = mr_num_queries;
    m.mr_layers = mr_layers;
    m.hd_hidden_ratio = hd_hidden_ratio;
    m.clip_length = clip_length;
    return m;
  }
};

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) cfg.set(key, value);
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace taskweave
