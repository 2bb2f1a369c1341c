#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentdyn/episode.hpp"
#include "latentdyn/metrics.hpp"
#include "latentdyn/nn.hpp"
#include "latentdyn/svm.hpp"

namespace latentdyn {

enum class Task { kCutting, kMaterial, kThickness };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// Window -> classification feature. Identity over x for the state-space
// baseline, latent features for trained models.
using FeatureFn = std::function<Vec(const WindowSample&)>;

FeatureFn state_space_features();

struct EvalReport {
  std::string task;
  std::string feature_source;  // vae | vqvae | state_space
  std::string mode;            // decoder mode, empty for state_space
  double f1 = 0.0;
  Confusion confusion;
  std::vector<std::string> class_names;  // aligned with confusion.classes
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t feature_dim = 0;
  std::uint64_t config_hash = 0;  // feature-source independent
};

// Integer labels for a task plus printable class names. Encodings are built
// from the union of both splits so train/test agree.
struct TaskLabels {
  std::vector<int> train;
  std::vector<int> test;
  std::vector<std::string> class_names;  // indexed by label value
};

TaskLabels task_labels(Task task, std::span<const WindowSample> train,
                       std::span<const WindowSample> test);

// Fit the SVM on training features, score F1 on the test split. The config
// hash covers everything except the feature source, so latent and baseline
// reports are directly comparable.
EvalReport run_task(Task task, const std::string& feature_source,
                    const std::string& mode, const FeatureFn& features,
                    std::span<const WindowSample> train,
                    std::span<const WindowSample> test, const SvmOptions& opt);

std::uint64_t fnv1a(std::string_view s);

Json report_to_json(const EvalReport& r);
std::string confusion_to_csv(const Confusion& c,
                             const std::vector<std::string>& class_names);

}  // namespace latentdyn
