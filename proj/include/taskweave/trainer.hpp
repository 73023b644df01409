#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "taskweave/config.hpp"
#include "taskweave/feature_store.hpp"
#include "taskweave/joint_loss.hpp"
#include "taskweave/metrics.hpp"
#include "taskweave/model.hpp"

namespace taskweave {

struct TrainItem {
  Annotation ann;
  Eigen::MatrixXd video_feats;
  Eigen::MatrixXd text_feats;
  std::vector<std::pair<double, double>> gt_cw;  // normalized (center, width)
};

inline std::vector<TrainItem> load_dataset(
    const std::filesystem::path& annotations,
    const std::filesystem::path& features_dir,
    double clip_length = kDefaultClipLength) {
  std::vector<TrainItem> items;
  for (auto& ann : load_annotations(annotations, clip_length)) {
    TrainItem item;
    FeatureSequence fs = load_features(features_dir, ann.vid, ann.qid, clip_length);
    item.video_feats = std::move(fs.video_feats);
    item.text_feats = std::move(fs.text_feats);
    for (const auto& w : ann.relevant_windows)
      item.gt_cw.push_back(window_to_cw(w, ann.duration));
    item.ann = std::move(ann);
    items.push_back(std::move(item));
  }
  return items;
}

// AdamW with decoupled weight decay and global-norm gradient clipping.
class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr, double weight_decay, double grad_clip)
      : lr_(lr), wd_(weight_decay), clip_(grad_clip) {}

  void step(nn::ParamRegistry& reg) {
    if (m_.empty()) {
      for (const auto& [name, p] : reg.items()) {
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    double norm_sq = 0.0;
    for (const auto& [name, p] : reg.items()) norm_sq += p.grad().squaredNorm();
    const double norm = std::sqrt(norm_sq);
    const double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < reg.items().size(); ++i) {
      auto& [name, p] = reg.items()[i];
      const Mat g = p.grad() * scale;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      Mat update =
          (m_[i] / bc1).cwiseQuotient(((v_[i] / bc2).cwiseSqrt().array() + eps_).matrix());
      if (decays(name)) update += wd_ * p.mutable_value();
      p.mutable_value() -= lr_ * update;
    }
  }

  std::int64_t steps() const { return t_; }
  std::vector<Mat>& moment1() { return m_; }
  std::vector<Mat>& moment2() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  // biases, normalization affines and the uncertainty gammas are not decayed
  static bool decays(const std::string& name) {
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() &&
             name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (name.rfind("loss.", 0) == 0) return false;
    return !(ends_with(".bias") || ends_with(".gamma") || ends_with(".beta"));
  }

  double lr_ = 1e-4, wd_ = 0.0, clip_ = 0.0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

// Exponential moving average of the parameters; evaluation swaps the shadow
// weights in and restores the live weights afterwards.
class EmaTracker {
 public:
  EmaTracker() = default;
  EmaTracker(const nn::ParamRegistry& reg, double decay) : decay_(decay) {
    for (const auto& [name, p] : reg.items()) shadow_.push_back(p.value());
  }

  void update(const nn::ParamRegistry& reg) {
    ++updates_;
    // warm up the horizon so early shadows track the live weights instead of
    // the random initialization
    const double d = std::min(
        decay_, (1.0 + double(updates_)) / (10.0 + double(updates_)));
    for (size_t i = 0; i < shadow_.size(); ++i)
      shadow_[i] = d * shadow_[i] + (1.0 - d) * reg.items()[i].second.value();
  }

  std::vector<Mat>& shadow() { return shadow_; }
  const std::vector<Mat>& shadow() const { return shadow_; }
  double decay() const { return decay_; }
  std::int64_t updates() const { return updates_; }
  void set_updates(std::int64_t n) { updates_ = n; }

 private:
  double decay_ = 0.999;
  std::int64_t updates_ = 0;
  std::vector<Mat> shadow_;
};

class ScopedWeights {
 public:
  ScopedWeights(nn::ParamRegistry& reg, const std::vector<Mat>& weights)
      : reg_(reg) {
    for (auto& [name, p] : reg_.items()) saved_.push_back(p.value());
    for (size_t i = 0; i < weights.size(); ++i)
      reg_.items()[i].second.mutable_value() = weights[i];
  }
  ~ScopedWeights() {
    for (size_t i = 0; i < saved_.size(); ++i)
      reg_.items()[i].second.mutable_value() = saved_[i];
  }

 private:
  nn::ParamRegistry& reg_;
  std::vector<Mat> saved_;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double l_mr = 0.0;
  double l_hd = 0.0;
  LossBreakdown terms;
  std::optional<double> gamma_mr, gamma_hd;
  std::optional<MrEvalResult> val_mr;
  std::optional<HdEvalResult> val_hd;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"loss", loss},
                     {"l_mr", l_mr},   {"l_hd", l_hd}};
    for (const auto& [k, v] : terms) j["terms"][k] = v;
    if (gamma_mr) j["gamma_mr"] = *gamma_mr;
    if (gamma_hd) j["gamma_hd"] = *gamma_hd;
    if (val_mr)
      j["val"] = eval_report(*val_mr, val_hd.value_or(HdEvalResult{}));
    return j;
  }
};

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg)
      : cfg_(cfg),
        model_(cfg.model_config(), cfg.seed),
        rng_(cfg.seed ^ 0x5eed5eed5eedULL) {
    cfg_.validate();
    if (cfg_.loss_type == LossType::kTaskDependent)
      loss_state_ = LossState(model_.params());
    opt_ = AdamW(cfg_.learning_rate, cfg_.weight_decay, cfg_.grad_clip);
    ema_ = EmaTracker(model_.params(), cfg_.ema_decay);
  }

  void load_data() {
    train_items_ = load_dataset(cfg_.data_train, cfg_.data_features, cfg_.clip_length);
    if (!cfg_.data_val.empty())
      val_items_ = load_dataset(cfg_.data_val, cfg_.data_features, cfg_.clip_length);
    check_dims();
  }

  void set_data(std::vector<TrainItem> train, std::vector<TrainItem> val) {
    train_items_ = std::move(train);
    val_items_ = std::move(val);
    check_dims();
  }

  const RunConfig& config() const { return cfg_; }
  TaskWeaveModel& model() { return model_; }
  const std::vector<TrainItem>& train_items() const { return train_items_; }
  const std::vector<TrainItem>& val_items() const { return val_items_; }
  EmaTracker& ema() { return ema_; }
  AdamW& optimizer() { return opt_; }
  const std::optional<LossState>& loss_state() const { return loss_state_; }
  int current_epoch() const { return epoch_; }

  // one optimization pass over the training set
  EpochLog run_epoch() {
    const int epoch = epoch_;
    const FeedbackRouting routing = feedback_active(
        epoch, cfg_.epochs, cfg_.feedback_mode, cfg_.feedback_start_frac);
    std::vector<size_t> order(train_items_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng_.uniform_int(i)]);

    EpochLog log;
    log.epoch = epoch;
    int steps = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg_.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg_.batch_size));
      const auto [loss, l_mr, l_hd] =
          batch_loss(order, begin, end, routing, &log.terms);
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("non-finite loss at epoch " +
                                 std::to_string(epoch) + ": " +
                                 log.to_json().dump());
      loss.backward();
      opt_.set_lr(scheduled_lr(opt_.steps()));
      opt_.step(model_.params());
      ema_.update(model_.params());
      log.loss += loss.item();
      log.l_mr += l_mr;
      log.l_hd += l_hd;
      ++steps;
    }
    if (steps > 0) {
      log.loss /= steps;
      log.l_mr /= steps;
      log.l_hd /= steps;
      for (auto& [k, v] : log.terms) v /= steps;
    }
    if (loss_state_) {
      log.gamma_mr = loss_state_->gamma_mr.item();
      log.gamma_hd = loss_state_->gamma_hd.item();
    }
    ++epoch_;
    return log;
  }

  // full training loop; JSONL epoch logs go to metrics_out when provided.
  // When a validation split is evaluated during training, the averaged
  // weights from the best validation epoch are kept as the final model
  // (model selection on val, as usual), not whatever the last epoch
  // happened to produce.
  void train(std::ostream* metrics_out = nullptr) {
    double best_score = -1.0;
    std::vector<Mat> best_shadow;
    while (epoch_ < cfg_.epochs) {
      EpochLog log = run_epoch();
      const bool last = epoch_ == cfg_.epochs;
      if (!val_items_.empty() && cfg_.eval_every > 0 &&
          (epoch_ % cfg_.eval_every == 0 || last)) {
        auto [mr, hd] = evaluate(val_items_, /*use_ema=*/true);
        log.val_mr = mr;
        log.val_hd = hd;
        const double score = mr.r1_050 + hd.map;
        if (score > best_score) {
          best_score = score;
          best_shadow = ema_.shadow();
        }
      }
      if (metrics_out) *metrics_out << log.to_json().dump() << std::endl;
    }
    if (!best_shadow.empty()) ema_.shadow() = best_shadow;
  }

  // feedback routing used at inference: the mode as active at end of training
  FeedbackRouting inference_routing() const {
    return feedback_active(cfg_.epochs - 1, cfg_.epochs, cfg_.feedback_mode,
                           cfg_.feedback_start_frac);
  }

  std::vector<PredictionRecord> predict(const std::vector<TrainItem>& items,
                                        bool use_ema = true) {
    std::optional<ScopedWeights> swap;
    if (use_ema) swap.emplace(model_.params(), ema_.shadow());
    nn::Context ctx{/*train=*/false, nullptr};
    const FeedbackRouting routing = inference_routing();
    std::vector<PredictionRecord> records;
    for (const auto& item : items) {
      ModelOutput out = model_.forward(item.video_feats, item.text_feats,
                                       item.ann.duration, routing, ctx);
      PredictionRecord rec;
      rec.qid = item.ann.qid;
      const auto windows =
          moments_to_seconds(out.mr.moments.value(), item.ann.duration);
      const auto& sal = out.saliency.value();
      const int n_clips = static_cast<int>(sal.rows());
      std::vector<std::array<double, 3>> preds;
      for (size_t i = 0; i < windows.size(); ++i) {
        double s = windows[i].first, e = windows[i].second;
        if (e <= s) {  // clamping can collapse a window at the video edge
          s = std::max(0.0, s - 1e-4);
          e = std::min(item.ann.duration, e + 1e-4);
        }
        // saliency-guided ranking: a window is confident when its queries
        // both classify as foreground and cover highly salient clips
        const int c0 = std::clamp(
            static_cast<int>(s / cfg_.clip_length), 0, n_clips - 1);
        const int c1 = std::clamp(
            static_cast<int>(std::ceil(e / cfg_.clip_length)), c0 + 1, n_clips);
        double span_sal = 0.0;
        for (int c = c0; c < c1; ++c) span_sal += sal(c, 0);
        span_sal /= static_cast<double>(c1 - c0);
        const double score = out.mr.logits.value()(i, 0) + span_sal;
        const double conf = 1.0 / (1.0 + std::exp(-score));
        preds.push_back({s, e, conf});
      }
      std::stable_sort(preds.begin(), preds.end(),
                       [](const auto& a, const auto& b) {
                         if (a[2] != b[2]) return a[2] > b[2];
                         return a[0] < b[0];
                       });
      rec.pred_windows = std::move(preds);
      for (Eigen::Index i = 0; i < out.saliency.rows(); ++i)
        rec.pred_saliency.push_back(out.saliency.value()(i, 0));
      records.push_back(std::move(rec));
    }
    return records;
  }

  std::pair<MrEvalResult, HdEvalResult> evaluate(
      const std::vector<TrainItem>& items, bool use_ema = true) {
    const auto records = predict(items, use_ema);
    std::vector<EvalItem> mr_items;
    std::vector<HdEvalItem> hd_items;
    for (size_t i = 0; i < items.size(); ++i) {
      mr_items.push_back({records[i].pred_windows, items[i].ann.relevant_windows});
      hd_items.push_back({records[i].pred_saliency, items[i].ann.saliency_labels});
    }
    return {mr_map(mr_items), hd_eval(hd_items)};
  }

  // ---- checkpointing ----

  void save_checkpoint(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    write_u64(out, 0x4b435754ULL);  // "TWCK"
    write_u64(out, 1);              // version
    write_string(out, cfg_.serialize());
    write_u64(out, static_cast<std::uint64_t>(epoch_));
    const auto& items = model_.params().items();
    write_u64(out, items.size());
    for (const auto& [name, p] : items) {
      write_string(out, name);
      write_mat(out, p.value());
    }
    write_u64(out, static_cast<std::uint64_t>(opt_.steps()));
    const bool has_opt = !opt_.moment1().empty();
    write_u64(out, has_opt ? 1 : 0);
    if (has_opt) {
      for (const auto& m : opt_.moment1()) write_mat(out, m);
      for (const auto& v : opt_.moment2()) write_mat(out, v);
    }
    write_u64(out, static_cast<std::uint64_t>(ema_.updates()));
    for (const auto& s : ema_.shadow()) write_mat(out, s);
  }

  static Trainer from_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    if (read_u64(in) != 0x4b435754ULL)
      throw FormatError(path.string() + ": bad checkpoint magic");
    if (read_u64(in) != 1)
      throw FormatError(path.string() + ": unsupported checkpoint version");
    RunConfig cfg = parse_config_text(read_string(in));
    Trainer t(cfg);
    t.epoch_ = static_cast<int>(read_u64(in));
    const std::uint64_t count = read_u64(in);
    auto& items = t.model_.params().items();
    if (count != items.size())
      throw FormatError(path.string() + ": parameter count mismatch");
    for (auto& [name, p] : items) {
      const std::string stored = read_string(in);
      if (stored != name)
        throw FormatError(path.string() + ": parameter name mismatch: " +
                          stored + " vs " + name);
      p.mutable_value() = read_mat(in);
    }
    t.opt_.set_steps(static_cast<std::int64_t>(read_u64(in)));
    if (read_u64(in) == 1) {
      t.opt_.moment1().resize(items.size());
      t.opt_.moment2().resize(items.size());
      for (auto& m : t.opt_.moment1()) m = read_mat(in);
      for (auto& v : t.opt_.moment2()) v = read_mat(in);
    }
    t.ema_.set_updates(static_cast<std::int64_t>(read_u64(in)));
    for (auto& s : t.ema_.shadow()) s = read_mat(in);
    return t;
  }

 private:
  // cosine schedule with linear warmup; `step` counts completed optimizer
  // steps, so the first step trains at lr/warmup rather than at zero
  double scheduled_lr(std::int64_t step) const {
    if (cfg_.lr_schedule != "cosine") return cfg_.learning_rate;
    const std::int64_t per_epoch =
        (static_cast<std::int64_t>(train_items_.size()) + cfg_.batch_size - 1) /
        cfg_.batch_size;
    const std::int64_t total = std::max<std::int64_t>(1, per_epoch * cfg_.epochs);
    const std::int64_t warmup = std::max<std::int64_t>(1, total / 20);
    if (step < warmup)
      return cfg_.learning_rate * static_cast<double>(step + 1) /
             static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(std::max<std::int64_t>(1, total - warmup));
    const double floor = 0.1 * cfg_.learning_rate;
    return floor + (cfg_.learning_rate - floor) * 0.5 *
                       (1.0 + std::cos(M_PI * std::min(1.0, progress)));
  }

  void check_dims() const {
    for (const auto* items : {&train_items_, &val_items_}) {
      for (const auto& item : *items) {
        if (item.video_feats.cols() != cfg_.model_dim_video ||
            item.text_feats.cols() != cfg_.model_dim_text)
          throw ValidationError(
              "feature dimensions do not match the configured model dims "
              "(qid " + item.ann.qid + ")");
      }
    }
  }

  std::tuple<ad::Tensor, double, double> batch_loss(
      const std::vector<size_t>& order, size_t begin, size_t end,
      const FeedbackRouting& routing, LossBreakdown* breakdown) {
    nn::Context ctx{/*train=*/true, &rng_};
    ad::Tensor l_mr_sum = ad::Tensor::scalar(0.0);
    ad::Tensor l_hd_sum = ad::Tensor::scalar(0.0);
    const double inv = 1.0 / static_cast<double>(end - begin);
    const bool rotate = cfg_.augment_rotation &&
                        cfg_.model_dim_video == cfg_.model_dim_text;
    for (size_t b = begin; b < end; ++b) {
      const TrainItem& item = train_items_[order[b]];
      Eigen::MatrixXd video = item.video_feats;
      Eigen::MatrixXd text = item.text_feats;
      Mat rot;
      if (rotate) {
        rot = nn::random_rotation(rng_, video.cols());
        video *= rot;
        text *= rot;
      }
      ModelOutput out = model_.forward(video, text,
                                       item.ann.duration, routing, ctx);
      l_mr_sum = ad::add(l_mr_sum, mr_loss(out.mr, item.gt_cw,
                                           cfg_.mr_aux_loss, breakdown));

      HingeSample sample = sample_hinge(item.ann.saliency_labels);
      ad::Tensor neg_scores;
      if (end - begin > 1) {
        const TrainItem& partner =
            train_items_[order[begin + (b - begin + 1) % (end - begin)]];
        // the mismatched query is rotated with the item's matrix so the
        // negative pair stays in the same augmented feature basis
        Eigen::MatrixXd partner_text = partner.text_feats;
        if (rotate) partner_text *= rot;
        neg_scores = model_.saliency_only(video, partner_text, ctx);
      }
      l_hd_sum = ad::add(l_hd_sum, hd_loss(out.saliency,
                                           item.ann.saliency_labels,
                                           neg_scores, sample, breakdown));
    }
    ad::Tensor l_mr = ad::scale(l_mr_sum, inv);
    ad::Tensor l_hd = ad::scale(l_hd_sum, inv);
    ad::Tensor total = combine_losses(
        l_mr, l_hd, cfg_.loss_type,
        loss_state_ ? *loss_state_ : LossState{}, cfg_.loss_weighted_mr,
        cfg_.loss_weighted_hd);
    return {total, l_mr.item(), l_hd.item()};
  }

  HingeSample sample_hinge(const std::vector<int>& labels) {
    std::vector<int> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i)
      (labels[i] >= 3 ? pos : neg).push_back(static_cast<int>(i));
    HingeSample s;
    if (!pos.empty() && !neg.empty()) {
      for (int k = 0; k < 2; ++k) {
        s.positives.push_back(pos[rng_.uniform_int(pos.size())]);
        s.negatives.push_back(neg[rng_.uniform_int(neg.size())]);
      }
    }
    return s;
  }

  static void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
      throw FormatError("truncated checkpoint");
    return v;
  }
  static void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_string(std::istream& in) {
    std::string s(read_u64(in), '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(s.size())))
      throw FormatError("truncated checkpoint");
    return s;
  }
  static void write_mat(std::ostream& out, const Mat& m) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  static Mat read_mat(std::istream& in) {
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    Mat m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * m.size())))
      throw FormatError("truncated checkpoint");
    return m;
  }

  RunConfig cfg_;
  TaskWeaveModel model_;
  std::optional<LossState> loss_state_;
  AdamW opt_;
  EmaTracker ema_;
  Rng rng_;
  std::vector<TrainItem> train_items_;
  std::vector<TrainItem> val_items_;
  int epoch_ = 0;
};

}  // namespace taskweave
