#include "latentdyn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "latentdyn/common.hpp"
#include "latentdyn/rng.hpp"

namespace latentdyn {

namespace fs = std::filesystem;

namespace {

double parse_double(const std::string& file, std::size_t line,
                    std::string_view token) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError(file, line,
                     "cannot parse number '" + std::string(token) + "'");
  }
  if (!std::isfinite(v)) {
    throw ParseError(file, line,
                     "non-finite value '" + std::string(token) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double median(Vec values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

std::vector<Episode> load_episodes(const fs::path& dir) {
  require(fs::exists(dir), "load_episodes: no such directory: " + dir.string());
  require(fs::is_directory(dir),
          "load_episodes: not a directory: " + dir.string());

  std::vector<fs::path> csvs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      csvs.push_back(entry.path());
    }
  }
  std::sort(csvs.begin(), csvs.end());

  std::vector<Episode> out;
  for (const fs::path& csv : csvs) {
    const std::string fname = csv.string();
    Episode ep;
    ep.id = csv.stem().string();

    // Metadata sidecar.
    fs::path meta = csv;
    meta.replace_extension(".json");
    if (!fs::exists(meta)) {
      throw ParseError(fname, 0, "missing metadata file " + meta.string());
    }
    {
      std::ifstream mf(meta);
      nlohmann::ordered_json j;
      try {
        mf >> j;
      } catch (const std::exception& e) {
        throw ParseError(meta.string(), 0,
                         std::string("invalid JSON: ") + e.what());
      }
      try {
        ep.material = j.at("material").get<std::string>();
        ep.thickness = j.at("thickness_in").get<std::string>();
        ep.rate_hz = j.at("rate_hz").get<double>();
      } catch (const std::exception& e) {
        throw ParseError(meta.string(), 0,
                         std::string("bad metadata field: ") + e.what());
      }
      if (j.contains("gt_cut_start_s") && j.contains("gt_cut_end_s")) {
        ep.gt_cut_window_s = {j["gt_cut_start_s"].get<double>(),
                              j["gt_cut_end_s"].get<double>()};
      }
    }

    std::ifstream f(csv);
    require(f.good(), "load_episodes: cannot open " + fname);
    std::string line;
    std::size_t lineno = 0;

    // Header: t,q1..qN,dq1..dqN,tau1..tauN
    if (!std::getline(f, line)) {
      throw ParseError(fname, 1, "empty file");
    }
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "t" ||
        (header.size() - 1) % 3 != 0) {
      throw ParseError(fname, 1, "bad header '" + line + "'");
    }
    const std::size_t n = (header.size() - 1) / 3;
    for (std::size_t j = 0; j < n; ++j) {
      const std::string want_q = "q" + std::to_string(j + 1);
      const std::string want_dq = "dq" + std::to_string(j + 1);
      const std::string want_tau = "tau" + std::to_string(j + 1);
      if (header[1 + j] != want_q || header[1 + n + j] != want_dq ||
          header[1 + 2 * n + j] != want_tau) {
        throw ParseError(fname, 1, "missing or misplaced column '" + want_q +
                                       "/" + want_dq + "/" + want_tau + "'");
      }
    }
    ep.n_joints = n;

    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto tokens = split_csv_line(line);
      if (tokens.size() != 1 + 3 * n) {
        throw ParseError(fname, lineno,
                         "expected " + std::to_string(1 + 3 * n) +
                             " columns, got " + std::to_string(tokens.size()));
      }
      const double t = parse_double(fname, lineno, tokens[0]);
      if (!ep.t.empty() && t <= ep.t.back()) {
        throw ParseError(fname, lineno, "non-monotone timestamp");
      }
      JointState s;
      s.q.resize(n);
      s.dq.resize(n);
      s.tau.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        s.q[j] = parse_double(fname, lineno, tokens[1 + j]);
        s.dq[j] = parse_double(fname, lineno, tokens[1 + n + j]);
        s.tau[j] = parse_double(fname, lineno, tokens[1 + 2 * n + j]);
      }
      ep.t.push_back(t);
      ep.series.push_back(std::move(s));
    }
    out.push_back(std::move(ep));
  }
  std::sort(out.begin(), out.end(),
            [](const Episode& a, const Episode& b) { return a.id < b.id; });
  return out;
}

void write_episode(const fs::path& dir, const Episode& ep) {
  require(!ep.id.empty(), "write_episode: episode id empty");
  fs::create_directories(dir);
  const std::size_t n = ep.n_joints;

  std::ostringstream csv;
  csv << "t";
  for (std::size_t j = 0; j < n; ++j) csv << ",q" << (j + 1);
  for (std::size_t j = 0; j < n; ++j) csv << ",dq" << (j + 1);
  for (std::size_t j = 0; j < n; ++j) csv << ",tau" << (j + 1);
  csv << "\n";
  for (std::size_t i = 0; i < ep.series.size(); ++i) {
    const JointState& s = ep.series[i];
    csv << format_double(ep.t[i]);
    for (std::size_t j = 0; j < n; ++j) csv << "," << format_double(s.q[j]);
    for (std::size_t j = 0; j < n; ++j) csv << "," << format_double(s.dq[j]);
    for (std::size_t j = 0; j < n; ++j) csv << "," << format_double(s.tau[j]);
    csv << "\n";
  }
  {
    std::ofstream f(dir / (ep.id + ".csv"), std::ios::binary);
    require(f.good(), "write_episode: cannot write to " + dir.string());
    f << csv.str();
  }

  nlohmann::ordered_json meta;
  meta["material"] = ep.material;
  meta["thickness_in"] = ep.thickness;
  meta["rate_hz"] = ep.rate_hz;
  if (ep.gt_cut_window_s) {
    meta["gt_cut_start_s"] = ep.gt_cut_window_s->first;
    meta["gt_cut_end_s"] = ep.gt_cut_window_s->second;
  }
  std::ofstream mf(dir / (ep.id + ".json"), std::ios::binary);
  mf << meta.dump(2) << "\n";
}

nlohmann::ordered_json load_report(std::span<const Episode> episodes) {
  std::map<std::string, std::size_t> strata;
  std::size_t samples = 0;
  for (const Episode& ep : episodes) {
    strata[ep.material + "/" + ep.thickness] += 1;
    samples += ep.length();
  }
  nlohmann::ordered_json j;
  j["episodes"] = episodes.size();
  j["samples"] = samples;
  nlohmann::ordered_json js = nlohmann::ordered_json::object();
  for (const auto& [k, v] : strata) js[k] = v;
  j["strata"] = std::move(js);
  return j;
}

Vec torque_std_trace(const Episode& ep, std::size_t win) {
  require(win >= 2, "torque_std_trace: win must be >= 2");
  const std::size_t len = ep.length();
  const std::size_t n = ep.n_joints;
  Vec trace(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t lo = i + 1 >= win ? i + 1 - win : 0;
    const std::size_t m = i - lo + 1;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t k = lo; k <= i; ++k) mean += ep.series[k].tau[j];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t k = lo; k <= i; ++k) {
        const double d = ep.series[k].tau[j] - mean;
        var += d * d;
      }
      total += std::sqrt(var / static_cast<double>(m));
    }
    trace[i] = total;
  }
  return trace;
}

EpisodeLabels label_cutting(const Episode& ep, const LabelerOptions& opt) {
  require(opt.win >= 2, "label_cutting: win must be >= 2");
  EpisodeLabels labels;
  if (ep.length() == 0) return labels;

  const Vec trace = torque_std_trace(ep, opt.win);
  const double med = median(trace);
  if (med <= 0.0) {
    std::cerr << "warning: episode " << ep.id
              << " has zero torque variance; labeling all-non-cutting\n";
    return labels;
  }

  const double on = opt.k_on * med;
  const double off = opt.k_off * med;
  bool open = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (!open && trace[i] > on) {
      open = true;
      start = i;
    } else if (open && trace[i] < off) {
      if (i - start >= opt.min_len) labels.cut_intervals.push_back({start, i});
      open = false;
    }
  }
  if (open && trace.size() - start >= opt.min_len) {
    labels.cut_intervals.push_back({start, trace.size()});
  }
  return labels;
}

NormStats fit_normalizer(std::span<const Episode> train_eps) {
  require(!train_eps.empty(), "fit_normalizer: empty training set");
  const std::size_t n = train_eps.front().n_joints;
  for (const Episode& ep : train_eps) {
    require(ep.n_joints == n, "fit_normalizer: mixed joint counts");
  }
  const std::size_t channels = 3 * n;
  Vec mean(channels, 0.0);
  std::size_t count = 0;
  for (const Episode& ep : train_eps) {
    for (const JointState& s : ep.series) {
      for (std::size_t j = 0; j < n; ++j) {
        mean[j] += s.q[j];
        mean[n + j] += s.dq[j];
        mean[2 * n + j] += s.tau[j];
      }
      ++count;
    }
  }
  require(count > 0, "fit_normalizer: no samples");
  for (double& m : mean) m /= static_cast<double>(count);

  Vec var(channels, 0.0);
  for (const Episode& ep : train_eps) {
    for (const JointState& s : ep.series) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dq0 = s.q[j] - mean[j];
        const double dq1 = s.dq[j] - mean[n + j];
        const double dq2 = s.tau[j] - mean[2 * n + j];
        var[j] += dq0 * dq0;
        var[n + j] += dq1 * dq1;
        var[2 * n + j] += dq2 * dq2;
      }
    }
  }
  NormStats stats;
  stats.mean = std::move(mean);
  stats.std.resize(channels);
  constexpr double kFloor = 1e-8;
  for (std::size_t c = 0; c < channels; ++c) {
    double sd = std::sqrt(var[c] / static_cast<double>(count));
    if (sd < kFloor) {
      std::cerr << "warning: channel " << c
                << " is constant; clamping std to " << kFloor << "\n";
      sd = kFloor;
    }
    stats.std[c] = sd;
  }
  return stats;
}

Episode apply_normalizer(const NormStats& stats, const Episode& ep) {
  const std::size_t n = ep.n_joints;
  require(stats.mean.size() == 3 * n && stats.std.size() == 3 * n,
          "apply_normalizer: stats sized for a different joint count");
  Episode out = ep;
  for (JointState& s : out.series) {
    for (std::size_t j = 0; j < n; ++j) {
      s.q[j] = (s.q[j] - stats.mean[j]) / stats.std[j];
      s.dq[j] = (s.dq[j] - stats.mean[n + j]) / stats.std[n + j];
      s.tau[j] = (s.tau[j] - stats.mean[2 * n + j]) / stats.std[2 * n + j];
    }
  }
  return out;
}

std::vector<WindowSample> make_windows(const Episode& ep,
                                       const EpisodeLabels& labels,
                                       std::size_t h) {
  require(h >= 1, "make_windows: H must be >= 1");
  std::vector<WindowSample> out;
  if (ep.length() < h + 1) {
    std::cerr << "warning: episode " << ep.id << " has " << ep.length()
              << " samples, shorter than H+1=" << (h + 1)
              << "; no windows\n";
    return out;
  }
  const std::size_t n = ep.n_joints;
  const std::size_t count = ep.length() - h;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    WindowSample w;
    w.x.resize(3 * h * n);
    for (std::size_t t = 0; t < h; ++t) {
      const JointState& s = ep.series[i + t];
      for (std::size_t j = 0; j < n; ++j) {
        w.x[0 * h * n + t * n + j] = s.q[j];
        w.x[1 * h * n + t * n + j] = s.dq[j];
        w.x[2 * h * n + t * n + j] = s.tau[j];
      }
    }
    const JointState& target = ep.series[i + h];
    w.y_next.resize(2 * n);
    for (std::size_t j = 0; j < n; ++j) {
      w.y_next[j] = target.q[j];
      w.y_next[n + j] = target.dq[j];
    }
    w.cutting = labels.is_cutting(i + h);
    w.material = ep.material;
    w.thickness = ep.thickness;
    w.episode_id = ep.id;
    w.t_index = i + h - 1;
    out.push_back(std::move(w));
  }
  return out;
}

Split split_episodes(std::span<const Episode> episodes, const SplitRatios& r,
                     std::uint64_t seed) {
  const std::size_t n = episodes.size();
  require(n >= 3, "split_episodes: need at least 3 episodes");
  require(r.train > 0 && r.val >= 0 && r.test >= 0,
          "split_episodes: bad ratios");

  // Strata in sorted key order; members sorted by id so the shuffle is the
  // only seed-dependent step.
  std::map<std::string, std::vector<std::string>> strata;
  for (const Episode& ep : episodes) {
    strata[ep.material + "\x1f" + ep.thickness].push_back(ep.id);
  }
  for (auto& [key, ids] : strata) std::sort(ids.begin(), ids.end());

  Rng rng(seed);
  const double ratios[3] = {r.train, r.val, r.test};
  const double rsum = ratios[0] + ratios[1] + ratios[2];

  // Global per-split targets (largest remainder) used to break per-stratum
  // rounding ties.
  double gtarget[3];
  for (int k = 0; k < 3; ++k)
    gtarget[k] = static_cast<double>(n) * ratios[k] / rsum;
  std::size_t assigned[3] = {0, 0, 0};

  bool degenerate = true;
  for (const auto& [key, ids] : strata) {
    if (ids.size() >= 2) degenerate = false;
  }
  if (degenerate && strata.size() > 1) {
    std::cerr << "warning: all (material, thickness) strata are singletons; "
                 "splitting unstratified\n";
  }

  std::vector<std::vector<std::string>> groups;
  if (degenerate && strata.size() > 1) {
    std::vector<std::string> all;
    for (const Episode& ep : episodes) all.push_back(ep.id);
    std::sort(all.begin(), all.end());
    groups.push_back(std::move(all));
  } else {
    for (auto& [key, ids] : strata) groups.push_back(ids);
  }

  Split split;
  std::vector<std::string>* const buckets[3] = {&split.train_ids,
                                                &split.val_ids,
                                                &split.test_ids};
  for (auto& ids : groups) {
    rng.shuffle(ids);
    const std::size_t s = ids.size();
    double ideal[3];
    std::size_t take[3];
    std::size_t floor_sum = 0;
    for (int k = 0; k < 3; ++k) {
      ideal[k] = static_cast<double>(s) * ratios[k] / rsum;
      take[k] = static_cast<std::size_t>(ideal[k]);
      floor_sum += take[k];
    }
    std::size_t extras = s - floor_sum;
    // Give extras to the split with the largest remainder; ties resolved by
    // the largest global deficit, then by split order.
    std::vector<int> order = {0, 1, 2};
    while (extras > 0) {
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ra = ideal[a] - static_cast<double>(take[a]);
        const double rb = ideal[b] - static_cast<double>(take[b]);
        if (ra != rb) return ra > rb;
        const double da = gtarget[a] - static_cast<double>(assigned[a] + take[a]);
        const double db = gtarget[b] - static_cast<double>(assigned[b] + take[b]);
        return da > db;
      });
      take[order[0]] += 1;
      --extras;
    }
    std::size_t off = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < take[k]; ++i) {
        buckets[k]->push_back(ids[off + i]);
      }
      off += take[k];
      assigned[k] += take[k];
    }
  }

  // Guarantee non-empty val/test when the episode count allows it.
  for (int k = 2; k >= 0; --k) {
    if (!buckets[k]->empty()) continue;
    int biggest = 0;
    for (int b = 1; b < 3; ++b) {
      if (buckets[b]->size() > buckets[biggest]->size()) biggest = b;
    }
    if (buckets[biggest]->size() <= 1) continue;
    std::cerr << "warning: split bucket " << k
              << " was empty; moving one episode from the largest bucket\n";
    buckets[k]->push_back(buckets[biggest]->back());
    buckets[biggest]->pop_back();
  }

  for (int k = 0; k < 3; ++k) std::sort(buckets[k]->begin(), buckets[k]->end());
  return split;
}

std::vector<Episode> select_episodes(std::span<const Episode> episodes,
                                     std::span<const std::string> ids) {
  std::vector<Episode> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    bool found = false;
    for (const Episode& ep : episodes) {
      if (ep.id == id) {
        out.push_back(ep);
        found = true;
        break;
      }
    }
    require(found, "select_episodes: unknown episode id '" + id + "'");
  }
  return out;
}

}  // namespace latentdyn
