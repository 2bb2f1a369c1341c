#include "latentdyn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "latentdyn/common.hpp"
#include "latentdyn/evalrun.hpp"
#include "latentdyn/lstm.hpp"
#include "latentdyn/pca.hpp"
#include "latentdyn/synth.hpp"
#include "latentdyn/vae.hpp"
#include "latentdyn/vqvae.hpp"

namespace latentdyn {

namespace fs = std::filesystem;

namespace {

void write_text_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), "cannot open '" + tmp.string() + "' for writing");
    out << content;
    require(out.good(), "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Json read_json_file(const fs::path& path) {
  Json j = Json::parse(read_text_file(path), nullptr, true);
  return j;
}

void write_json_file(const fs::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

Json default_config() {
  Json cfg;
  cfg["dataset"] = "data/synthetic";
  cfg["bundle"] = "data/bundle";
  cfg["out"] = "runs/latest";
  cfg["seed"] = 0;
  cfg["synth"] = {{"episodes_per_spec", 10},
                  {"sim", sim_spec_to_json(default_sim_spec())}};
  cfg["prepare"] = {
      {"window", 10},
      {"split", {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}}},
      {"labeler",
       {{"win", 10}, {"k_on", 3.0}, {"k_off", 1.5}, {"min_len", 5}}}};
  cfg["train"] = {{"family", "vae"},   {"mode", "both"},
                  {"latent", 4},       {"code_dim", 2},
                  {"groups", 10},      {"num_codes", 64},
                  {"beta_kl", 1.0},    {"beta_commit", 0.25},
                  {"lambda_pred", 1.0}, {"hidden", Json::array({40, 40})},
                  {"lstm_hidden", 40}, {"epochs", 50},
                  {"batch", 128},      {"lr", 5e-4}};
  cfg["eval"] = {{"vae_checkpoint", ""},
                 {"vqvae_checkpoint", ""},
                 {"lstm_checkpoint", ""},
                 {"svm", {{"c", 1.0}, {"epochs", 200}, {"seed", 0}}},
                 {"tasks", Json::array({"cutting", "material", "thickness"})}};
  cfg["sweep"] = {{"family", "vae"},
                  {"mode", "both"},
                  {"latents", Json::array({2, 4, 8})},
                  {"beta_kls", Json::array({1.0})},
                  {"code_dims", Json::array({2})},
                  {"groups", Json::array({10})},
                  {"seeds", Json::array({0})},
                  {"epochs", 20},
                  {"jobs", 1}};
  cfg["viz"] = {{"checkpoint", ""}, {"split", "test"}};
  return cfg;
}

void merge_config(Json& base, const Json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      merge_config(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void set_config_path(Json& cfg, const std::string& key,
                     const std::string& value) {
  require(!key.empty(), "--set: empty key");
  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------- synth --

Json cmd_synth(const Json& cfg, bool force) {
  const fs::path out_dir = cfg.at("dataset").get<std::string>();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    require(force, "synth: '" + out_dir.string() +
                       "' already has content (use --force to overwrite)");
  }
  const auto& sc = cfg.at("synth");
  const auto episodes_per_spec = sc.at("episodes_per_spec").get<std::size_t>();
  const SimSpec base = sim_spec_from_json(sc.at("sim"));
  const std::vector<SimSpec> catalog = catalog_from_base(base);
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  const std::vector<ManifestEntry> entries =
      make_dataset(catalog, episodes_per_spec, seed, out_dir);
  if (entries.empty()) {
    std::cerr << "synth: warning: wrote an empty dataset\n";
  }

  Json manifest;
  manifest["seed"] = seed;
  manifest["episodes_per_spec"] = episodes_per_spec;
  Json specs = Json::array();
  for (const SimSpec& s : catalog) specs.push_back(sim_spec_to_json(s));
  manifest["catalog"] = std::move(specs);
  Json rows = Json::array();
  for (const ManifestEntry& e : entries) {
    rows.push_back({{"id", e.id},
                    {"seed", e.seed},
                    {"material", e.material},
                    {"thickness", e.thickness}});
  }
  manifest["episodes"] = std::move(rows);
  write_json_file(out_dir / "manifest.json", manifest);

  std::cout << "synth: wrote " << entries.size() << " episodes to "
            << out_dir.string() << "\n";
  Json summary;
  summary["dataset"] = out_dir.string();
  summary["episodes"] = entries.size();
  return summary;
}

// -------------------------------------------------------------- prepare --

namespace {

std::string windows_csv(std::span<const WindowSample> windows, std::size_t h,
                        std::size_t n) {
  std::ostringstream out;
  out << "episode_id,t_index,cutting,material,thickness";
  for (std::size_t i = 0; i < 3 * h * n; ++i) out << ",x" << i;
  for (std::size_t i = 0; i < 2 * n; ++i) out << ",y" << i;
  out << "\n";
  for (const WindowSample& w : windows) {
    require(w.episode_id.find(',') == std::string::npos &&
                w.material.find(',') == std::string::npos &&
                w.thickness.find(',') == std::string::npos,
            "windows_csv: commas in labels are not supported");
    out << w.episode_id << "," << w.t_index << "," << (w.cutting ? 1 : 0)
        << "," << w.material << "," << w.thickness;
    for (const double v : w.x) out << "," << format_double(v);
    for (const double v : w.y_next) out << "," << format_double(v);
    out << "\n";
  }
  return out.str();
}

std::vector<WindowSample> parse_windows_csv(const fs::path& path,
                                            std::size_t h, std::size_t n) {
  std::ifstream in(path);
  require(in.good(), "cannot open '" + path.string() + "'");
  std::string line;
  require(static_cast<bool>(std::getline(in, line)),
          "'" + path.string() + "': missing header");
  const std::size_t want_cols = 5 + 3 * h * n + 2 * n;
  std::vector<WindowSample> out;
  std::size_t line_no = 1;
  std::vector<std::string> cells;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    cells.clear();
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(
          start,
          comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != want_cols) {
      throw ParseError(path.string(), line_no,
                       "expected " + std::to_string(want_cols) +
                           " columns, found " + std::to_string(cells.size()));
    }
    WindowSample w;
    w.episode_id = cells[0];
    w.t_index = static_cast<std::size_t>(std::stoull(cells[1]));
    w.cutting = cells[2] == "1";
    w.material = cells[3];
    w.thickness = cells[4];
    auto parse_cell = [&](const std::string& s) {
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ParseError(path.string(), line_no, "bad number '" + s + "'");
      }
      return v;
    };
    w.x.reserve(3 * h * n);
    for (std::size_t i = 0; i < 3 * h * n; ++i) {
      w.x.push_back(parse_cell(cells[5 + i]));
    }
    w.y_next.reserve(2 * n);
    for (std::size_t i = 0; i < 2 * n; ++i) {
      w.y_next.push_back(parse_cell(cells[5 + 3 * h * n + i]));
    }
    out.push_back(std::move(w));
  }
  return out;
}

LabelerOptions labeler_from_json(const Json& j) {
  LabelerOptions opt;
  if (j.contains("win")) opt.win = j["win"].get<std::size_t>();
  if (j.contains("k_on")) opt.k_on = j["k_on"].get<double>();
  if (j.contains("k_off")) opt.k_off = j["k_off"].get<double>();
  if (j.contains("min_len")) opt.min_len = j["min_len"].get<std::size_t>();
  return opt;
}

}  // namespace

Json cmd_prepare(const Json& cfg) {
  const fs::path dataset_dir = cfg.at("dataset").get<std::string>();
  const fs::path bundle_dir = cfg.at("bundle").get<std::string>();
  const auto& pc = cfg.at("prepare");
  const auto h = pc.at("window").get<std::size_t>();
  require(h >= 1, "prepare: window must be >= 1");
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const LabelerOptions labeler = labeler_from_json(pc.at("labeler"));
  SplitRatios ratios;
  ratios.train = pc.at("split").at("train").get<double>();
  ratios.val = pc.at("split").at("val").get<double>();
  ratios.test = pc.at("split").at("test").get<double>();

  const std::vector<Episode> episodes = load_episodes(dataset_dir);
  require(!episodes.empty(), "prepare: no episodes in '" +
                                 dataset_dir.string() + "'");
  const std::size_t n = episodes[0].n_joints;

  const Split split = split_episodes(episodes, ratios, seed);
  const std::vector<Episode> train_eps =
      select_episodes(episodes, split.train_ids);
  const NormStats norm = fit_normalizer(train_eps);

  std::map<std::string, EpisodeLabels> labels;
  for (const Episode& ep : episodes) {
    labels[ep.id] = label_cutting(ep, labeler);
  }

  auto build = [&](std::span<const std::string> ids) {
    std::vector<WindowSample> windows;
    for (const Episode& ep : select_episodes(episodes, ids)) {
      const Episode normed = apply_normalizer(norm, ep);
      std::vector<WindowSample> w = make_windows(normed, labels[ep.id], h);
      windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                     std::make_move_iterator(w.end()));
    }
    return windows;
  };
  const std::vector<WindowSample> train = build(split.train_ids);
  const std::vector<WindowSample> val = build(split.val_ids);
  const std::vector<WindowSample> test = build(split.test_ids);

  Json bj;
  bj["window"] = h;
  bj["n_joints"] = n;
  bj["seed"] = seed;
  bj["dataset"] = dataset_dir.string();
  bj["ratios"] = {{"train", ratios.train},
                  {"val", ratios.val},
                  {"test", ratios.test}};
  bj["labeler"] = {{"win", labeler.win},
                   {"k_on", labeler.k_on},
                   {"k_off", labeler.k_off},
                   {"min_len", labeler.min_len}};
  bj["split"] = {{"train_ids", split.train_ids},
                 {"val_ids", split.val_ids},
                 {"test_ids", split.test_ids}};
  bj["norm"] = {{"mean", norm.mean}, {"std", norm.std}};
  bj["windows"] = {{"train", train.size()},
                   {"val", val.size()},
                   {"test", test.size()}};
  write_json_file(bundle_dir / "bundle.json", bj);
  write_text_file(bundle_dir / "windows_train.csv", windows_csv(train, h, n));
  write_text_file(bundle_dir / "windows_val.csv", windows_csv(val, h, n));
  write_text_file(bundle_dir / "windows_test.csv", windows_csv(test, h, n));
  write_json_file(bundle_dir / "load_report.json", load_report(episodes));

  // Human summary: split sizes, cut coverage, stratum table.
  auto cut_share = [](std::span<const WindowSample> w) {
    if (w.empty()) return 0.0;
    std::size_t c = 0;
    for (const WindowSample& s : w) c += s.cutting ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(w.size());
  };
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "prepare: %zu episodes -> %zu/%zu/%zu train/val/test",
                episodes.size(), split.train_ids.size(), split.val_ids.size(),
                split.test_ids.size());
  std::cout << buf << "\n";
  std::snprintf(buf, sizeof(buf),
                "prepare: windows %zu/%zu/%zu, cutting share %.3f/%.3f/%.3f",
                train.size(), val.size(), test.size(), cut_share(train),
                cut_share(val), cut_share(test));
  std::cout << buf << "\n";
  std::map<std::string, std::size_t> strata;
  for (const Episode& ep : episodes) {
    ++strata[ep.material + " / " + ep.thickness];
  }
  std::cout << "prepare: episodes per stratum\n";
  for (const auto& [name, count] : strata) {
    std::snprintf(buf, sizeof(buf), "  %-44s %4zu", name.c_str(), count);
    std::cout << buf << "\n";
  }

  Json summary;
  summary["bundle"] = bundle_dir.string();
  summary["episodes"] = episodes.size();
  summary["windows"] = bj["windows"];
  return summary;
}

Bundle load_bundle(const fs::path& dir) {
  const Json bj = read_json_file(dir / "bundle.json");
  Bundle b;
  b.window = bj.at("window").get<std::size_t>();
  b.n_joints = bj.at("n_joints").get<std::size_t>();
  b.seed = bj.at("seed").get<std::uint64_t>();
  b.split.train_ids = bj.at("split").at("train_ids").get<std::vector<std::string>>();
  b.split.val_ids = bj.at("split").at("val_ids").get<std::vector<std::string>>();
  b.split.test_ids = bj.at("split").at("test_ids").get<std::vector<std::string>>();
  b.norm.mean = bj.at("norm").at("mean").get<Vec>();
  b.norm.std = bj.at("norm").at("std").get<Vec>();
  b.train = parse_windows_csv(dir / "windows_train.csv", b.window, b.n_joints);
  b.val = parse_windows_csv(dir / "windows_val.csv", b.window, b.n_joints);
  b.test = parse_windows_csv(dir / "windows_test.csv", b.window, b.n_joints);
  return b;
}

// ---------------------------------------------------------------- train --

namespace {

std::string maybe(double v, bool active) {
  return active ? format_double(v) : std::string();
}

std::string vae_history_csv(const std::vector<VaeEpoch>& history,
                            DecoderMode mode) {
  const bool rec = mode != DecoderMode::kPred;
  const bool pr = mode != DecoderMode::kRecon;
  std::ostringstream out;
  out << "epoch,train_total,train_kl,train_recon,train_pred,"
         "val_total,val_kl,val_recon,val_pred\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& [t, v] = history[e];
    out << e << "," << format_double(t.total) << "," << format_double(t.kl)
        << "," << maybe(t.recon, rec) << "," << maybe(t.pred, pr) << ","
        << format_double(v.total) << "," << format_double(v.kl) << ","
        << maybe(v.recon, rec) << "," << maybe(v.pred, pr) << "\n";
  }
  return out.str();
}

std::string vq_history_csv(const std::vector<VqEpoch>& history,
                           DecoderMode mode) {
  const bool rec = mode != DecoderMode::kPred;
  const bool pr = mode != DecoderMode::kRecon;
  std::ostringstream out;
  out << "epoch,train_total,train_recon,train_pred,train_codebook,"
         "train_commit,val_total,val_recon,val_pred,val_codebook,val_commit\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& [t, v] = history[e];
    out << e << "," << format_double(t.total) << "," << maybe(t.recon, rec)
        << "," << maybe(t.pred, pr) << "," << format_double(t.codebook) << ","
        << format_double(t.commit) << "," << format_double(v.total) << ","
        << maybe(v.recon, rec) << "," << maybe(v.pred, pr) << ","
        << format_double(v.codebook) << "," << format_double(v.commit) << "\n";
  }
  return out.str();
}

std::string lstm_history_csv(const std::vector<LstmEpoch>& history) {
  std::ostringstream out;
  out << "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out << e << "," << format_double(history[e].train) << ","
        << format_double(history[e].val) << "\n";
  }
  return out.str();
}

}  // namespace

Json cmd_train(const Json& cfg) {
  const fs::path bundle_dir = cfg.at("bundle").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  const Bundle bundle = load_bundle(bundle_dir);
  require(!bundle.train.empty() && !bundle.val.empty(),
          "train: bundle has an empty train or val split");

  const auto& tc = cfg.at("train");
  const std::string family = tc.at("family").get<std::string>();
  TrainOptions opt;
  opt.epochs = tc.at("epochs").get<std::size_t>();
  opt.batch = tc.at("batch").get<std::size_t>();
  opt.lr = tc.at("lr").get<double>();
  opt.seed = cfg.at("seed").get<std::uint64_t>();
  const auto hidden = tc.at("hidden").get<std::vector<std::size_t>>();

  fs::create_directories(out_dir);
  write_json_file(out_dir / "config.json", cfg);

  std::ostringstream log;
  log << "train: family=" << family << " epochs=" << opt.epochs
      << " batch=" << opt.batch << " lr=" << format_double(opt.lr)
      << " seed=" << opt.seed << "\n";

  Json summary;
  summary["out"] = out_dir.string();
  summary["family"] = family;

  if (family == "vae" || family == "vqvae") {
    const DecoderMode mode = mode_from_name(tc.at("mode").get<std::string>());
    Rng init_rng(opt.seed);
    if (family == "vae") {
      VaeModel init = make_vae(bundle.window, bundle.n_joints,
                               tc.at("latent").get<std::size_t>(), mode,
                               tc.at("beta_kl").get<double>(),
                               tc.at("lambda_pred").get<double>(), init_rng,
                               hidden);
      init.norm = bundle.norm;
      VaeTrainResult r = train_vae(init, bundle.train, bundle.val, opt);
      write_json_file(out_dir / "checkpoint.json",
                      vae_to_json(r.model, r.best_val));
      write_text_file(out_dir / "history.csv",
                      vae_history_csv(r.history, mode));
      for (std::size_t e = 0; e < r.history.size(); ++e) {
        log << "epoch " << e << " train "
            << format_double(r.history[e].train.total) << " val "
            << format_double(r.history[e].val.total) << "\n";
      }
      log << "best epoch " << r.best_epoch << " val "
          << format_double(r.best_val) << "\n";
      summary["best_val"] = r.best_val;
      summary["best_epoch"] = r.best_epoch;
      summary["epochs"] = r.history.size();
    } else {
      VqVaeModel init = make_vqvae(
          bundle.window, bundle.n_joints, tc.at("code_dim").get<std::size_t>(),
          tc.at("groups").get<std::size_t>(),
          tc.at("num_codes").get<std::size_t>(), mode,
          tc.at("beta_commit").get<double>(),
          tc.at("lambda_pred").get<double>(), init_rng, hidden);
      init.norm = bundle.norm;
      VqTrainResult r = train_vqvae(init, bundle.train, bundle.val, opt);
      write_json_file(out_dir / "checkpoint.json",
                      vqvae_to_json(r.model, r.best_val));
      write_text_file(out_dir / "history.csv",
                      vq_history_csv(r.history, mode));
      for (std::size_t e = 0; e < r.history.size(); ++e) {
        log << "epoch " << e << " train "
            << format_double(r.history[e].train.total) << " val "
            << format_double(r.history[e].val.total) << "\n";
      }
      const std::size_t active = count_active_codes(r.model, bundle.val);
      log << "best epoch " << r.best_epoch << " val "
          << format_double(r.best_val) << "\n";
      log << "active codes on val: " << active << "\n";
      summary["best_val"] = r.best_val;
      summary["best_epoch"] = r.best_epoch;
      summary["epochs"] = r.history.size();
      summary["active_codes"] = active;
    }
  } else if (family == "lstm") {
    Rng init_rng(opt.seed);
    LstmModel init = make_lstm(bundle.window, bundle.n_joints,
                               tc.at("lstm_hidden").get<std::size_t>(),
                               init_rng);
    LstmTrainResult r = train_lstm(init, bundle.train, bundle.val, opt);
    write_json_file(out_dir / "checkpoint.json",
                    lstm_to_json(r.model, r.best_val));
    write_text_file(out_dir / "history.csv", lstm_history_csv(r.history));
    for (std::size_t e = 0; e < r.history.size(); ++e) {
      log << "epoch " << e << " train " << format_double(r.history[e].train)
          << " val " << format_double(r.history[e].val) << "\n";
    }
    log << "best epoch " << r.best_epoch << " val "
        << format_double(r.best_val) << "\n";
    summary["best_val"] = r.best_val;
    summary["best_epoch"] = r.best_epoch;
    summary["epochs"] = r.history.size();
  } else {
    fail("train: unknown family '" + family + "'");
  }

  write_text_file(out_dir / "log.txt", log.str());
  summary["checkpoint"] = (out_dir / "checkpoint.json").string();
  std::cout << "train: " << family << " checkpoint at "
            << (out_dir / "checkpoint.json").string() << "\n";
  return summary;
}

// ----------------------------------------------------------------- eval --

namespace {

struct LoadedFeatures {
  std::string source;  // vae | vqvae
  std::string mode;
  FeatureFn features;
  std::function<Vec(const WindowSample&)> predict;  // empty when no pred head
};

LoadedFeatures load_latent_model(const std::string& source,
                                 const fs::path& path) {
  require(fs::exists(path),
          "eval: missing checkpoint at '" + path.string() + "'");
  const Json j = read_json_file(path);
  LoadedFeatures lf;
  lf.source = source;
  if (source == "vae") {
    auto m = std::make_shared<VaeModel>(vae_from_json(j));
    lf.mode = mode_name(m->mode);
    lf.features = [m](const WindowSample& w) {
      return latent_features(*m, w.x);
    };
    if (m->pred_decoder) {
      lf.predict = [m](const WindowSample& w) {
        return forward(*m->pred_decoder, latent_features(*m, w.x));
      };
    }
  } else {
    auto m = std::make_shared<VqVaeModel>(vqvae_from_json(j));
    lf.mode = mode_name(m->mode);
    lf.features = [m](const WindowSample& w) {
      return latent_features(*m, w.x);
    };
    if (m->pred_decoder) {
      lf.predict = [m](const WindowSample& w) {
        return forward(*m->pred_decoder, latent_features(*m, w.x));
      };
    }
  }
  return lf;
}

std::string predictions_csv(std::span<const WindowSample> test,
                            const std::vector<Vec>& preds, std::size_t n) {
  std::ostringstream out;
  out << "episode_id,t_index";
  for (std::size_t i = 0; i < 2 * n; ++i) out << ",y_true" << i;
  for (std::size_t i = 0; i < 2 * n; ++i) out << ",y_pred" << i;
  out << "\n";
  for (std::size_t r = 0; r < test.size(); ++r) {
    out << test[r].episode_id << "," << test[r].t_index;
    for (const double v : test[r].y_next) out << "," << format_double(v);
    for (const double v : preds[r]) out << "," << format_double(v);
    out << "\n";
  }
  return out.str();
}

}  // namespace

Json cmd_eval(const Json& cfg) {
  const fs::path bundle_dir = cfg.at("bundle").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  const Bundle bundle = load_bundle(bundle_dir);
  require(!bundle.train.empty() && !bundle.test.empty(),
          "eval: bundle has an empty train or test split");
  const auto& ec = cfg.at("eval");
  SvmOptions svm;
  svm.c = ec.at("svm").at("c").get<double>();
  svm.epochs = ec.at("svm").at("epochs").get<std::size_t>();
  svm.seed = ec.at("svm").at("seed").get<std::uint64_t>();

  fs::create_directories(out_dir);

  std::vector<LoadedFeatures> sources;
  sources.push_back(
      {"state_space", "", state_space_features(), nullptr});
  const std::string vae_ckpt = ec.at("vae_checkpoint").get<std::string>();
  if (!vae_ckpt.empty()) sources.push_back(load_latent_model("vae", vae_ckpt));
  const std::string vq_ckpt = ec.at("vqvae_checkpoint").get<std::string>();
  if (!vq_ckpt.empty()) sources.push_back(load_latent_model("vqvae", vq_ckpt));

  Json summary;
  Json cls_rows = Json::array();
  std::ostringstream csv, md;
  csv << "section,task,source,mode,f1,rmse,config_hash\n";
  md << "# Evaluation summary\n\n## Classification (F1, test split)\n\n"
     << "| task | source | mode | F1 |\n| --- | --- | --- | --- |\n";

  for (const auto& task_j : ec.at("tasks")) {
    const Task task = task_from_name(task_j.get<std::string>());
    for (const LoadedFeatures& src : sources) {
      const EvalReport r =
          run_task(task, src.source, src.mode, src.features, bundle.train,
                   bundle.test, svm);
      const Json rj = report_to_json(r);
      const std::string stem = r.task + "_" + r.feature_source;
      write_json_file(out_dir / ("report_" + stem + ".json"), rj);
      write_text_file(out_dir / ("confusion_" + stem + ".csv"),
                      confusion_to_csv(r.confusion, r.class_names));
      csv << "classification," << r.task << "," << r.feature_source << ","
          << r.mode << "," << format_double(r.f1) << ",,"
          << rj.at("config_hash").get<std::string>() << "\n";
      md << "| " << r.task << " | " << r.feature_source << " | " << r.mode
         << " | " << format_double(r.f1) << " |\n";
      cls_rows.push_back(
          {{"task", r.task}, {"source", r.feature_source}, {"f1", r.f1}});
      std::cout << "eval: " << r.task << " / " << r.feature_source
                << (r.mode.empty() ? "" : " (" + r.mode + ")") << " F1 "
                << format_double(r.f1) << "\n";
    }
  }

  // Forward prediction table.
  md << "\n## Forward prediction (RMSE, test split)\n\n"
     << "| model | mode | RMSE |\n| --- | --- | --- |\n";
  Json pred_rows = Json::array();

  std::vector<std::pair<std::string, std::string>> pred_order;
  std::map<std::string, std::function<Vec(const WindowSample&)>> preds;
  preds["persistence"] = [&bundle](const WindowSample& w) {
    return persistence_prediction(w.x, bundle.window, bundle.n_joints);
  };
  pred_order.push_back({"persistence", ""});
  const std::string lstm_ckpt = ec.at("lstm_checkpoint").get<std::string>();
  if (!lstm_ckpt.empty()) {
    require(fs::exists(lstm_ckpt),
            "eval: missing checkpoint at '" + lstm_ckpt + "'");
    auto m = std::make_shared<LstmModel>(lstm_from_json(read_json_file(lstm_ckpt)));
    preds["lstm"] = [m](const WindowSample& w) {
      return lstm_predict(*m, window_to_sequence(w.x, m->window, m->n_joints));
    };
    pred_order.push_back({"lstm", ""});
  }
  for (const LoadedFeatures& src : sources) {
    if (src.predict) {
      preds[src.source] = src.predict;
      pred_order.push_back({src.source, src.mode});
    }
  }

  std::vector<Vec> truth;
  truth.reserve(bundle.test.size());
  for (const WindowSample& w : bundle.test) truth.push_back(w.y_next);

  for (const auto& [name, mode] : pred_order) {
    std::vector<Vec> yh;
    yh.reserve(bundle.test.size());
    for (const WindowSample& w : bundle.test) yh.push_back(preds[name](w));
    const double e = rmse(yh, truth);
    write_text_file(out_dir / ("predictions_" + name + ".csv"),
                    predictions_csv(bundle.test, yh, bundle.n_joints));
    csv << "prediction,," << name << "," << mode << ",,"
        << format_double(e) << ",\n";
    md << "| " << name << " | " << mode << " | " << format_double(e)
       << " |\n";
    pred_rows.push_back({{"model", name}, {"rmse", e}});
    std::cout << "eval: prediction / " << name << " RMSE "
              << format_double(e) << "\n";
  }

  write_text_file(out_dir / "summary.csv", csv.str());
  write_text_file(out_dir / "summary.md", md.str());
  summary["out"] = out_dir.string();
  summary["classification"] = std::move(cls_rows);
  summary["prediction"] = std::move(pred_rows);
  return summary;
}

// ---------------------------------------------------------------- sweep --

namespace {

struct SweepCell {
  std::string tag;
  Json train_patch;  // applied over cfg["train"]
  std::uint64_t seed = 0;
};

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace

Json cmd_sweep(const Json& cfg) {
  const fs::path out_dir = cfg.at("out").get<std::string>();
  const auto& sc = cfg.at("sweep");
  const std::string family = sc.at("family").get<std::string>();
  const std::string mode = sc.at("mode").get<std::string>();
  const auto seeds = sc.at("seeds").get<std::vector<std::uint64_t>>();
  require(!seeds.empty(), "sweep: no seeds");

  std::vector<SweepCell> cells;
  if (family == "vae") {
    const auto latents = sc.at("latents").get<std::vector<std::size_t>>();
    const auto betas = sc.at("beta_kls").get<std::vector<double>>();
    require(!latents.empty() && !betas.empty(), "sweep: empty vae grid");
    for (const std::size_t l : latents) {
      for (const double b : betas) {
        for (const std::uint64_t s : seeds) {
          SweepCell c;
          c.tag = "L" + std::to_string(l) + "_b" + format_double(b) + "_s" +
                  std::to_string(s);
          c.train_patch = {{"latent", l}, {"beta_kl", b}};
          c.seed = s;
          cells.push_back(std::move(c));
        }
      }
    }
  } else if (family == "vqvae") {
    const auto dims = sc.at("code_dims").get<std::vector<std::size_t>>();
    const auto groups = sc.at("groups").get<std::vector<std::size_t>>();
    require(!dims.empty() && !groups.empty(), "sweep: empty vqvae grid");
    for (const std::size_t d : dims) {
      for (const std::size_t g : groups) {
        for (const std::uint64_t s : seeds) {
          SweepCell c;
          c.tag = "D" + std::to_string(d) + "_G" + std::to_string(g) + "_s" +
                  std::to_string(s);
          c.train_patch = {{"code_dim", d}, {"groups", g}};
          c.seed = s;
          cells.push_back(std::move(c));
        }
      }
    }
  } else if (family == "lstm") {
    for (const std::uint64_t s : seeds) {
      SweepCell c;
      c.tag = "lstm_s" + std::to_string(s);
      c.train_patch = Json::object();
      c.seed = s;
      cells.push_back(std::move(c));
    }
  } else {
    fail("sweep: unknown family '" + family + "'");
  }

  struct Row {
    std::string tag;
    std::uint64_t seed = 0;
    Json train;  // effective cell train config
    Json eval;   // cell eval summary (empty on failure)
    std::string status = "ok";
  };
  std::vector<Row> rows(cells.size());

  auto run_cell = [&](std::size_t idx) {
    const SweepCell& cell = cells[idx];
    Row& row = rows[idx];
    row.tag = cell.tag;
    row.seed = cell.seed;
    try {
      Json cell_cfg = cfg;
      cell_cfg["seed"] = cell.seed;
      cell_cfg["train"]["family"] = family;
      cell_cfg["train"]["mode"] = mode;
      cell_cfg["train"]["epochs"] = sc.at("epochs");
      merge_config(cell_cfg["train"], cell.train_patch);
      const fs::path cell_dir = out_dir / "cells" / cell.tag;
      cell_cfg["out"] = cell_dir.string();
      const Json train_summary = cmd_train(cell_cfg);
      row.train = cell_cfg["train"];

      cell_cfg["eval"]["vae_checkpoint"] = "";
      cell_cfg["eval"]["vqvae_checkpoint"] = "";
      cell_cfg["eval"]["lstm_checkpoint"] = "";
      const std::string key = family + "_checkpoint";
      cell_cfg["eval"][key] = train_summary.at("checkpoint");
      row.eval = cmd_eval(cell_cfg);
    } catch (const std::exception& e) {
      row.status = csv_safe(e.what());
    }
  };

  const auto jobs = std::max<std::size_t>(
      1, sc.contains("jobs") ? sc.at("jobs").get<std::size_t>() : 1);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= cells.size()) return;
          i = next++;
        }
        run_cell(i);
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, cells.size()); ++t) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) t.join();
  }

  std::ostringstream csv;
  csv << "cell,family,mode,latent,beta_kl,code_dim,groups,seed,"
         "f1_cutting,f1_material,f1_thickness,rmse,status\n";
  auto metric = [](const Json& eval, const std::string& task) -> std::string {
    if (!eval.is_object() || !eval.contains("classification")) return "";
    for (const auto& row : eval["classification"]) {
      if (row.at("task") == task && row.at("source") != "state_space") {
        return format_double(row.at("f1").get<double>());
      }
    }
    return "";
  };
  auto model_rmse = [&family](const Json& eval) -> std::string {
    if (!eval.is_object() || !eval.contains("prediction")) return "";
    for (const auto& row : eval["prediction"]) {
      if (row.at("model") == family ||
          (family == "lstm" && row.at("model") == "lstm")) {
        return format_double(row.at("rmse").get<double>());
      }
    }
    return "";
  };
  for (const Row& row : rows) {
    auto train_field = [&row](const char* key) -> std::string {
      if (!row.train.is_object() || !row.train.contains(key)) return "";
      const auto& v = row.train[key];
      if (v.is_number_float()) return format_double(v.get<double>());
      return v.dump();
    };
    csv << row.tag << "," << family << "," << mode << ","
        << (family == "vae" ? train_field("latent") : "") << ","
        << (family == "vae" ? train_field("beta_kl") : "") << ","
        << (family == "vqvae" ? train_field("code_dim") : "") << ","
        << (family == "vqvae" ? train_field("groups") : "") << "," << row.seed
        << "," << metric(row.eval, "cutting") << ","
        << metric(row.eval, "material") << ","
        << metric(row.eval, "thickness") << "," << model_rmse(row.eval) << ","
        << row.status << "\n";
  }
  write_text_file(out_dir / "sweep.csv", csv.str());
  std::cout << "sweep: " << rows.size() << " cells -> "
            << (out_dir / "sweep.csv").string() << "\n";

  Json summary;
  summary["out"] = out_dir.string();
  summary["cells"] = rows.size();
  summary["csv"] = (out_dir / "sweep.csv").string();
  return summary;
}

// ------------------------------------------------------------------ viz --

Json cmd_viz(const Json& cfg) {
  const fs::path bundle_dir = cfg.at("bundle").get<std::string>();
  const fs::path out_dir = cfg.at("out").get<std::string>();
  const auto& vc = cfg.at("viz");
  const std::string ckpt = vc.at("checkpoint").get<std::string>();
  require(!ckpt.empty(), "viz: no checkpoint configured");
  require(fs::exists(ckpt), "viz: missing checkpoint at '" + ckpt + "'");

  const Bundle bundle = load_bundle(bundle_dir);
  const std::string split = vc.at("split").get<std::string>();
  const std::vector<WindowSample>* windows = &bundle.test;
  if (split == "train") windows = &bundle.train;
  else if (split == "val") windows = &bundle.val;
  else require(split == "test", "viz: unknown split '" + split + "'");
  require(!windows->empty(), "viz: split '" + split + "' is empty");

  const Json j = read_json_file(ckpt);
  require(!j.contains("cells"), "viz: needs a vae or vqvae checkpoint");
  FeatureFn features;
  if (j.contains("codebook")) {
    auto m = std::make_shared<VqVaeModel>(vqvae_from_json(j));
    features = [m](const WindowSample& w) { return latent_features(*m, w.x); };
  } else {
    auto m = std::make_shared<VaeModel>(vae_from_json(j));
    features = [m](const WindowSample& w) { return latent_features(*m, w.x); };
  }

  std::vector<Vec> feats(windows->size());
  for (std::size_t i = 0; i < windows->size(); ++i) {
    feats[i] = features((*windows)[i]);
  }
  const std::size_t f = feats[0].size();
  const std::size_t k = std::min<std::size_t>(2, f);
  const PcaModel pca = pca_fit(feats, k);

  std::ostringstream csv;
  csv << "x,y,cutting,material,thickness\n";
  std::vector<std::pair<double, double>> pts(windows->size());
  for (std::size_t i = 0; i < windows->size(); ++i) {
    const Vec p = pca_project(pca, feats[i]);
    const double x = p[0];
    const double y = k > 1 ? p[1] : 0.0;
    pts[i] = {x, y};
    const WindowSample& w = (*windows)[i];
    csv << format_double(x) << "," << format_double(y) << ","
        << (w.cutting ? 1 : 0) << "," << w.material << "," << w.thickness
        << "\n";
  }
  fs::create_directories(out_dir);
  write_text_file(out_dir / "scatter.csv", csv.str());

  // Self-contained SVG, colored by the cutting flag.
  double xmin = pts[0].first, xmax = pts[0].first;
  double ymin = pts[0].second, ymax = pts[0].second;
  for (const auto& [x, y] : pts) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double xspan = xmax > xmin ? xmax - xmin : 1.0;
  const double yspan = ymax > ymin ? ymax - ymin : 1.0;
  auto px = [&](double x) { return 40.0 + (x - xmin) / xspan * 540.0; };
  auto py = [&](double y) { return 440.0 - (y - ymin) / yspan * 400.0; };
  char buf[160];
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
         "height=\"480\" viewBox=\"0 0 640 480\">\n"
      << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n"
      << "<g id=\"points\">\n";
  const char* kFree = "#4878cf";
  const char* kCut = "#6acc65";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                  "fill-opacity=\"0.6\"/>\n",
                  px(pts[i].first), py(pts[i].second),
                  (*windows)[i].cutting ? kCut : kFree);
    svg << buf;
  }
  svg << "</g>\n<g id=\"legend\">\n"
      << "<circle class=\"legend-key\" cx=\"520\" cy=\"24\" r=\"5\" fill=\""
      << kFree << "\"/><text x=\"532\" y=\"28\" font-size=\"13\">free</text>\n"
      << "<circle class=\"legend-key\" cx=\"520\" cy=\"44\" r=\"5\" fill=\""
      << kCut
      << "\"/><text x=\"532\" y=\"48\" font-size=\"13\">cutting</text>\n"
      << "</g>\n</svg>\n";
  write_text_file(out_dir / "scatter.svg", svg.str());

  std::cout << "viz: " << pts.size() << " points -> "
            << (out_dir / "scatter.svg").string() << "\n";
  Json summary;
  summary["out"] = out_dir.string();
  summary["rows"] = pts.size();
  summary["csv"] = (out_dir / "scatter.csv").string();
  summary["svg"] = (out_dir / "scatter.svg").string();
  return summary;
}

// --------------------------------------------------------------- run_cli --

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"windowed joint-state dynamics toolkit"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, bundle_dir;
  std::vector<std::string> sets;
  long long seed = 0;
  bool force = false;
  auto* opt_config =
      app.add_option("--config", config_path, "JSON config file");
  auto* opt_seed = app.add_option("--seed", seed, "root RNG seed");
  auto* opt_out = app.add_option("--out", out_dir, "output directory");
  auto* opt_dataset =
      app.add_option("--dataset", dataset_dir, "episode directory");
  auto* opt_bundle =
      app.add_option("--bundle", bundle_dir, "prepared bundle directory");
  app.add_flag("--force", force, "overwrite an existing dataset directory");
  app.add_option("--set", sets,
                 "config override as dotted.key=value (repeatable)");

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  long long episodes = -1;
  c_synth->add_option("--episodes", episodes, "episodes per catalog spec");
  auto* c_prepare =
      app.add_subcommand("prepare", "label, normalize, window, split");
  long long window = -1;
  c_prepare->add_option("--window", window, "history length H");
  auto* c_train = app.add_subcommand("train", "train one model");
  std::string family, mode;
  long long epochs = -1, latent = -1;
  c_train->add_option("--family", family, "vae | vqvae | lstm");
  c_train->add_option("--mode", mode, "recon | pred | both");
  c_train->add_option("--epochs", epochs, "training epochs");
  c_train->add_option("--latent", latent, "vae latent dimension L");
  auto* c_eval = app.add_subcommand("eval", "classification + prediction");
  std::string vae_ckpt, vq_ckpt, lstm_ckpt;
  c_eval->add_option("--vae", vae_ckpt, "vae checkpoint path");
  c_eval->add_option("--vqvae", vq_ckpt, "vqvae checkpoint path");
  c_eval->add_option("--lstm", lstm_ckpt, "lstm checkpoint path");
  auto* c_sweep = app.add_subcommand("sweep", "train+eval over a grid");
  auto* c_viz = app.add_subcommand("viz", "latent-space PCA scatter");
  std::string viz_ckpt;
  c_viz->add_option("--checkpoint", viz_ckpt, "latent model checkpoint");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    Json cfg = default_config();
    if (opt_config->count() > 0) merge_config(cfg, read_json_file(config_path));
    if (const char* env = std::getenv("LATENTDYN_DATA")) {
      if (*env != '\0') cfg["dataset"] = std::string(env);
    }
    if (opt_dataset->count() > 0) cfg["dataset"] = dataset_dir;
    if (opt_bundle->count() > 0) cfg["bundle"] = bundle_dir;
    if (opt_out->count() > 0) cfg["out"] = out_dir;
    if (opt_seed->count() > 0) cfg["seed"] = seed;
    if (episodes >= 0) cfg["synth"]["episodes_per_spec"] = episodes;
    if (window >= 0) cfg["prepare"]["window"] = window;
    if (!family.empty()) cfg["train"]["family"] = family;
    if (!mode.empty()) cfg["train"]["mode"] = mode;
    if (epochs >= 0) cfg["train"]["epochs"] = epochs;
    if (latent >= 0) cfg["train"]["latent"] = latent;
    if (!vae_ckpt.empty()) cfg["eval"]["vae_checkpoint"] = vae_ckpt;
    if (!vq_ckpt.empty()) cfg["eval"]["vqvae_checkpoint"] = vq_ckpt;
    if (!lstm_ckpt.empty()) cfg["eval"]["lstm_checkpoint"] = lstm_ckpt;
    if (!viz_ckpt.empty()) cfg["viz"]["checkpoint"] = viz_ckpt;
    for (const std::string& kv : sets) {
      const std::size_t eq = kv.find('=');
      require(eq != std::string::npos && eq > 0,
              "--set expects key=value, got '" + kv + "'");
      set_config_path(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }

    if (c_synth->parsed()) {
      cmd_synth(cfg, force);
    } else if (c_prepare->parsed()) {
      cmd_prepare(cfg);
    } else if (c_train->parsed()) {
      cmd_train(cfg);
    } else if (c_eval->parsed()) {
      cmd_eval(cfg);
    } else if (c_sweep->parsed()) {
      cmd_sweep(cfg);
    } else if (c_viz->parsed()) {
      cmd_viz(cfg);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace latentdyn
