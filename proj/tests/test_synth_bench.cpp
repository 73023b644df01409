#include <gtest/gtest.h>

#include <filesystem>

#include "taskweave/synth_bench.hpp"
#include "taskweave/trainer.hpp"

using namespace taskweave;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.num_items = 12;
  cfg.clips = 24;
  cfg.dim_video = 16;
  cfg.dim_text = 16;
  cfg.min_window_len = 3;
  cfg.max_window_len = 8;
  cfg.seed = 42;
  return cfg;
}

TEST(SynthBench, ItemsAreValidAndConsistent) {
  const auto items = generate(small_config());
  ASSERT_EQ(items.size(), 12u);
  for (const auto& item : items) {
    EXPECT_NO_THROW(item.annotation.validate());
    EXPECT_EQ(item.video_feats.rows(), 24);
    EXPECT_EQ(item.video_feats.cols(), 16);
    EXPECT_EQ(item.text_feats.rows(), 8);
    EXPECT_FALSE(item.annotation.relevant_windows.empty());
    EXPECT_LE(item.annotation.relevant_windows.size(), 3u);
  }
}

TEST(SynthBench, LabelsMatchWindows) {
  const auto items = generate(small_config());
  for (const auto& item : items) {
    // every window clip is labeled 3 (edges) or 4 (interior); others are 0
    std::vector<int> expected(24, 0);
    for (const auto& [s, e] : item.annotation.relevant_windows) {
      const int c0 = static_cast<int>(s / 2.0), c1 = static_cast<int>(e / 2.0);
      for (int i = c0; i < c1; ++i)
        expected[i] = (i == c0 || i == c1 - 1) ? 3 : 4;
    }
    EXPECT_EQ(item.annotation.saliency_labels, expected);
  }
}

TEST(SynthBench, SignalIsPlantedInWindows) {
  SynthConfig cfg = small_config();
  cfg.snr = 5.0;
  const auto items = generate(cfg);
  // in-window clips correlate with the query direction far more than outside
  for (const auto& item : items) {
    Eigen::VectorXd dir = item.text_feats.colwise().mean();
    dir /= dir.norm();
    double inside = 0.0, outside = 0.0;
    int n_in = 0, n_out = 0;
    for (int i = 0; i < 24; ++i) {
      const double dot = item.video_feats.row(i).dot(dir);
      if (item.annotation.saliency_labels[i] > 0) {
        inside += dot;
        ++n_in;
      } else {
        outside += dot;
        ++n_out;
      }
    }
    ASSERT_GT(n_in, 0);
    ASSERT_GT(n_out, 0);
    EXPECT_GT(inside / n_in, outside / n_out + 1.0);
  }
}

TEST(SynthBench, DeterministicForSeed) {
  const auto a = generate(small_config());
  const auto b = generate(small_config());
  SynthConfig other = small_config();
  other.seed = 43;
  const auto c = generate(other);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].video_feats == b[i].video_feats);
    EXPECT_EQ(a[i].annotation.relevant_windows, b[i].annotation.relevant_windows);
  }
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    any_diff |= a[i].video_feats != c[i].video_feats;
  EXPECT_TRUE(any_diff);
}

TEST(SynthBench, WindowsAreDisjointAndSorted) {
  SynthConfig cfg = small_config();
  cfg.num_items = 50;
  cfg.max_windows = 3;
  for (const auto& item : generate(cfg)) {
    const auto& w = item.annotation.relevant_windows;
    for (size_t i = 1; i < w.size(); ++i) EXPECT_LE(w[i - 1].second, w[i].first);
  }
}

TEST(SynthBench, ConfigValidation) {
  SynthConfig cfg = small_config();
  cfg.clips = 4;
  EXPECT_THROW(generate(cfg), GenerationError);
  cfg = small_config();
  cfg.snr = 0.0;
  EXPECT_THROW(generate(cfg), GenerationError);
  cfg = small_config();
  cfg.max_windows = 9;  // 9 windows x 3 clips > 24 clips
  EXPECT_THROW(generate(cfg), GenerationError);
}

TEST(SynthBench, GenerateToDirIsLoadable) {
  const fs::path dir = fs::temp_directory_path() / "tw_synth_test";
  fs::remove_all(dir);
  SynthConfig cfg = small_config();
  generate_to_dir(cfg, dir, "train");
  const auto items = load_dataset(dir / "train.jsonl", dir / "features");
  ASSERT_EQ(items.size(), 12u);
  // features survive the float32 round trip against the in-memory generator
  const auto direct = generate(cfg, "train_");
  EXPECT_TRUE(items[0].video_feats.isApprox(direct[0].video_feats, 1e-6));
  EXPECT_TRUE(items[0].text_feats.isApprox(direct[0].text_feats, 1e-6));
  fs::remove_all(dir);
}

}  // namespace
