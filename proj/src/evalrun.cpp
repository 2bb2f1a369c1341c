#include "latentdyn/evalrun.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "latentdyn/common.hpp"

namespace latentdyn {

std::string task_name(Task t) {
  switch (t) {
    case Task::kCutting: return "cutting";
    case Task::kMaterial: return "material";
    case Task::kThickness: return "thickness";
  }
  fail("task_name: bad task");
}

Task task_from_name(const std::string& name) {
  if (name == "cutting") return Task::kCutting;
  if (name == "material") return Task::kMaterial;
  if (name == "thickness") return Task::kThickness;
  fail("unknown task '" + name + "'");
}

FeatureFn state_space_features() {
  return [](const WindowSample& w) { return w.x; };
}

TaskLabels task_labels(Task task, std::span<const WindowSample> train,
                       std::span<const WindowSample> test) {
  TaskLabels out;
  out.train.reserve(train.size());
  out.test.reserve(test.size());
  if (task == Task::kCutting) {
    out.class_names = {"free", "cutting"};
    for (const WindowSample& w : train) out.train.push_back(w.cutting ? 1 : 0);
    for (const WindowSample& w : test) out.test.push_back(w.cutting ? 1 : 0);
    return out;
  }
  // Material and thickness classes are the catalog strings themselves
  // (thickness ignores which material carries it).
  auto field = [task](const WindowSample& w) -> const std::string& {
    return task == Task::kMaterial ? w.material : w.thickness;
  };
  const std::string what = task_name(task);
  std::set<std::string> names;
  auto collect = [&](std::span<const WindowSample> split) {
    for (const WindowSample& w : split) {
      require(!field(w).empty(), "task_labels: window from episode '" +
                                     w.episode_id + "' has no " + what);
      names.insert(field(w));
    }
  };
  collect(train);
  collect(test);
  out.class_names.assign(names.begin(), names.end());
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < out.class_names.size(); ++i) {
    index[out.class_names[i]] = static_cast<int>(i);
  }
  for (const WindowSample& w : train) out.train.push_back(index[field(w)]);
  for (const WindowSample& w : test) out.test.push_back(index[field(w)]);
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

EvalReport run_task(Task task, const std::string& feature_source,
                    const std::string& mode, const FeatureFn& features,
                    std::span<const WindowSample> train,
                    std::span<const WindowSample> test,
                    const SvmOptions& opt) {
  require(!train.empty() && !test.empty(), "run_task: empty split");

  // Material and thickness are properties of the interaction, so those tasks
  // score only windows labeled as cutting; free-motion windows carry no
  // evidence either way. Every feature source sees the same filtered splits.
  std::vector<WindowSample> train_cut, test_cut;
  if (task != Task::kCutting) {
    for (const WindowSample& w : train) {
      if (w.cutting) train_cut.push_back(w);
    }
    for (const WindowSample& w : test) {
      if (w.cutting) test_cut.push_back(w);
    }
    require(!train_cut.empty() && !test_cut.empty(),
            "run_task: no cutting windows for property task");
    train = train_cut;
    test = test_cut;
  }

  const TaskLabels labels = task_labels(task, train, test);

  std::vector<Vec> train_z(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_z[i] = features(train[i]);
  }

  // Standardize per feature on the train split; latent scales are arbitrary
  // and the hinge-loss probe is not scale invariant.
  const std::size_t dim = train_z[0].size();
  Vec f_mean(dim, 0.0), f_std(dim, 0.0);
  for (const Vec& v : train_z) {
    require(v.size() == dim, "run_task: ragged feature rows");
    for (std::size_t d = 0; d < dim; ++d) f_mean[d] += v[d];
  }
  for (double& v : f_mean) v /= static_cast<double>(train_z.size());
  for (const Vec& v : train_z) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = v[d] - f_mean[d];
      f_std[d] += c * c;
    }
  }
  for (double& v : f_std) {
    v = std::sqrt(v / static_cast<double>(train_z.size()));
    if (v < 1e-8) v = 1.0;
  }
  auto standardize = [&](Vec& v) {
    for (std::size_t d = 0; d < dim; ++d) v[d] = (v[d] - f_mean[d]) / f_std[d];
  };
  for (Vec& v : train_z) standardize(v);

  const SvmModel svm = fit_svm(train_z, labels.train, opt);

  std::vector<int> preds(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    Vec z = features(test[i]);
    require(z.size() == dim, "run_task: ragged feature rows");
    standardize(z);
    preds[i] = classify(svm, z);
  }

  EvalReport r;
  r.task = task_name(task);
  r.feature_source = feature_source;
  r.mode = mode;
  r.f1 = f1_score(preds, labels.test,
                  task == Task::kCutting ? Averaging::kBinary
                                         : Averaging::kMacro);
  r.confusion = confusion_matrix(preds, labels.test);
  for (const int c : r.confusion.classes) {
    const auto idx = static_cast<std::size_t>(c);
    require(idx < labels.class_names.size(), "run_task: label out of range");
    r.class_names.push_back(labels.class_names[idx]);
  }
  r.n_train = train.size();
  r.n_test = test.size();
  r.feature_dim = train_z.empty() ? 0 : train_z[0].size();

  std::ostringstream key;
  key << r.task << "|C=" << format_double(opt.c) << "|epochs=" << opt.epochs
      << "|seed=" << opt.seed << "|n_train=" << r.n_train
      << "|n_test=" << r.n_test << "|classes=";
  for (const std::string& n : labels.class_names) key << n << ";";
  r.config_hash = fnv1a(key.str());
  return r;
}

Json report_to_json(const EvalReport& r) {
  Json j;
  j["task"] = r.task;
  j["feature_source"] = r.feature_source;
  if (!r.mode.empty()) j["mode"] = r.mode;
  j["f1"] = r.f1;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["feature_dim"] = r.feature_dim;
  j["class_names"] = r.class_names;
  Json rows = Json::array();
  for (std::size_t t = 0; t < r.confusion.counts.rows; ++t) {
    Json row = Json::array();
    for (std::size_t p = 0; p < r.confusion.counts.cols; ++p) {
      row.push_back(static_cast<long long>(r.confusion.counts(t, p)));
    }
    rows.push_back(std::move(row));
  }
  j["confusion"] = std::move(rows);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(r.config_hash));
  j["config_hash"] = std::string(hex);
  return j;
}

std::string confusion_to_csv(const Confusion& c,
                             const std::vector<std::string>& class_names) {
  require(class_names.size() == c.classes.size(),
          "confusion_to_csv: name count mismatch");
  std::ostringstream out;
  out << "truth\\pred";
  for (const std::string& n : class_names) out << "," << n;
  out << "\n";
  for (std::size_t t = 0; t < c.counts.rows; ++t) {
    out << class_names[t];
    for (std::size_t p = 0; p < c.counts.cols; ++p) {
      out << "," << static_cast<long long>(c.counts(t, p));
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace latentdyn
