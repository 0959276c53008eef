#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "hasseg/cli.hpp"
#include "hasseg/config.hpp"
#include "hasseg/error.hpp"
#include "hasseg/metrics.hpp"
#include "hasseg/network.hpp"
#include "hasseg/phantom.hpp"
#include "hasseg/rng.hpp"
#include "hasseg/training.hpp"
#include "hasseg/volume.hpp"

namespace fs = std::filesystem;

namespace hasseg::cli {

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted = true; }

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value config file");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out", c.out, "output directory")->required();
  sub->allow_extras();
  sub->footer("Any config key can be overridden with --<key> <value>, e.g. --train.learning_rate 1e-4.");
}

// Config file, then `--key value` / `--key=value` overrides.
Config assemble(const Common& c, const std::vector<std::string>& extras) {
  Config cfg = c.config.empty() ? Config{} : Config::load(c.config);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) throw ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " needs a value");
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos) throw ConfigError("unknown option --" + key);
    cfg.set(key, value);
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

// Creates the output directory and echoes the resolved config into it.
fs::path prepare_out(const std::string& out, const Config& resolved) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  write_text(fs::path(out) / "config.resolved", resolved.str());
  return fs::path(out);
}

double ingest_factor(const Config& cfg) {
  const double f = cfg.get_double("data.ingest_factor", 1.0);
  if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("data.ingest_factor must be > 0");
  return f;
}

// ---- phantom ----

int cmd_phantom(const Common& c, const std::vector<std::string>& extras, std::ostream& out) {
  Config cfg = assemble(c, extras);
  const PhantomSpec spec = PhantomSpec::from_config(cfg);
  spec.validate();
  const std::int64_t count = cfg.get_int("phantom.count", 10);
  if (count < 0) throw ConfigError("phantom.count must be >= 0");
  const std::uint64_t seed = c.seed ? *c.seed : cfg.get_u64("phantom.seed", 1);
  cfg.require_all_consumed();

  Config resolved;
  spec.to_config(resolved);
  resolved.set("phantom.count", std::to_string(count));
  resolved.set("phantom.seed", std::to_string(seed));
  const fs::path dir = prepare_out(c.out, resolved);

  std::vector<ManifestEntry> entries;
  for (std::int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%04lld", static_cast<long long>(i));
    const Phantom p = generate_phantom(spec, mix_seed(seed, static_cast<std::uint64_t>(i)));
    write_volume(p.image, (dir / (std::string(name) + "_image.svol")).string());
    write_volume(p.mask, (dir / (std::string(name) + "_mask.svol")).string());
    entries.push_back({std::string(name) + "_image.svol", std::string(name) + "_mask.svol"});
  }
  write_manifest((dir / "manifest.tsv").string(), entries);
  out << "wrote " << count << " phantoms to " << (dir / "manifest.tsv").string() << "\n";
  return kOk;
}

// ---- train ----

void write_atomic(const Checkpoint& ckpt, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  write_checkpoint(ckpt, tmp.string());
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

int cmd_train(const Common& c, const std::string& manifest_flag, bool resume, const std::vector<std::string>& extras,
              std::ostream& out) {
  Config cfg = assemble(c, extras);
  if (!manifest_flag.empty()) cfg.set("data.manifest", manifest_flag);
  const NetworkSpec spec = NetworkSpec::from_config(cfg);
  spec.validate();
  TrainConfig tc = TrainConfig::from_config(cfg);
  if (c.seed) tc.seed = *c.seed;
  tc.validate();
  const double factor = ingest_factor(cfg);
  const std::string manifest = cfg.get_string("data.manifest", "");
  if (manifest.empty()) throw ConfigError("train needs --manifest or data.manifest");
  cfg.require_all_consumed();

  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw ValueError("training manifest " + manifest + " is empty");
  for (const auto& e : entries) {
    if (e.mask.empty()) throw ValueError("training manifest entry " + e.image + " has no mask");
  }

  Config resolved;
  spec.to_config(resolved);
  tc.to_config(resolved);
  resolved.set("data.ingest_factor", format_double(factor));
  resolved.set("data.manifest", manifest);
  const fs::path dir = prepare_out(c.out, resolved);

  std::vector<Sample> samples;
  for (const auto& e : entries) {
    samples.push_back(prepare_sample(case_id(e.image), read_volume(e.image), read_volume(e.mask), factor));
  }
  out << "training on " << samples.size() << " volumes, network grid " << samples[0].image.dims[0] << "x"
      << samples[0].image.dims[1] << "x" << samples[0].image.dims[2] << ", " << tc.context_levels << " level(s)\n";

  std::ofstream log(dir / "loss.log", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + (dir / "loss.log").string());

  g_interrupted = false;
  auto previous_handler = std::signal(SIGINT, on_sigint);
  struct Restore {
    decltype(previous_handler) h;
    ~Restore() { std::signal(SIGINT, h); }
  } restore{previous_handler};

  std::vector<Volume> maps;
  for (int k = 1; k <= tc.context_levels; ++k) {
    const fs::path path = dir / ("level" + std::to_string(k) + ".ckpt");
    std::optional<Checkpoint> prior;
    if (resume && fs::exists(path)) prior = read_checkpoint(path.string());

    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
      log << r.str() << "\n";
      log.flush();
      out << "level " << r.level << " epoch " << r.epoch << "/" << tc.epochs_per_level << " loss "
          << format_double(r.mean_loss) << "\n";
    };
    hooks.on_checkpoint = [&](const Checkpoint& ck) { write_atomic(ck, path); };
    hooks.should_stop = [](int) { return g_interrupted.load(); };

    const auto t0 = std::chrono::steady_clock::now();
    Checkpoint ckpt = train_level(k, samples, k > 1 ? &maps : nullptr, spec, tc, hooks, prior ? &*prior : nullptr);
    write_atomic(ckpt, path);
    if (ckpt.epoch < tc.epochs_per_level) {
      out << "interrupted after level " << k << " epoch " << ckpt.epoch << "; rerun with --resume to continue\n";
      return kInterrupted;
    }
    out << "level " << k << " done in "
        << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";

    if (k < tc.context_levels) {
      if (tc.epochs_per_level == 0) {
        // An untrained network has no running statistics to evaluate with.
        maps.clear();
        for (const auto& s : samples) {
          Volume z(s.image.dims, s.image.spacing, VolumeKind::Prob);
          std::fill(z.data.begin(), z.data.end(), 0.f);
          maps.push_back(std::move(z));
        }
      } else {
        maps = predecessor_maps(ckpt, samples, k > 1 ? &maps : nullptr);
      }
    }
  }
  return kOk;
}

// ---- infer ----

int cmd_infer(const Common& c, const std::vector<std::string>& checkpoints, const std::string& manifest,
              const std::vector<std::string>& inputs_flag, const std::vector<std::string>& extras, std::ostream& out) {
  Config cfg = assemble(c, extras);
  const double factor = ingest_factor(cfg);
  cfg.require_all_consumed();
  if (checkpoints.empty()) throw ConfigError("infer needs at least one --checkpoint");

  std::vector<std::string> inputs;
  if (!manifest.empty()) {
    for (const auto& e : read_manifest(manifest)) inputs.push_back(e.image);
  }
  inputs.insert(inputs.end(), inputs_flag.begin(), inputs_flag.end());
  std::vector<Checkpoint> levels;
  for (const auto& p : checkpoints) levels.push_back(read_checkpoint(p));
  std::sort(levels.begin(), levels.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.level < b.level; });
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (levels[k].level != static_cast<int>(k) + 1) {
      throw ValueError("checkpoints must cover levels 1.." + std::to_string(levels.size()) + " exactly once");
    }
  }
  std::map<std::string, std::string> seen;
  for (const auto& in : inputs) {
    if (!seen.emplace(case_id(in), in).second) throw ValueError("duplicate case id " + case_id(in));
  }

  Config resolved;
  resolved.set("data.ingest_factor", format_double(factor));
  for (std::size_t k = 0; k < checkpoints.size(); ++k) resolved.set("infer.checkpoint." + std::to_string(k + 1), checkpoints[k]);
  const fs::path dir = prepare_out(c.out, resolved);

  std::vector<ManifestEntry> preds;
  for (const auto& in : inputs) {
    const std::string id = case_id(in);
    const Volume image = read_volume(in);
    const auto t0 = std::chrono::steady_clock::now();
    const CascadeResult r = infer_cascade(image, levels, factor);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t k = 0; k < r.prob_per_level.size(); ++k) {
      write_volume(r.prob_per_level[k], (dir / (id + "_prob_level" + std::to_string(k + 1) + ".svol")).string());
    }
    write_volume(r.mask, (dir / (id + "_mask.svol")).string());
    preds.push_back({fs::absolute(in).string(), id + "_mask.svol"});
    out << id << " " << secs << " s, network grid " << r.network_dims[0] << "x" << r.network_dims[1] << "x"
        << r.network_dims[2] << (r.padded ? " (padded, cropped back)" : "") << "\n";
  }
  write_manifest((dir / "predictions.tsv").string(), preds);
  return kOk;
}

// ---- eval ----

std::map<std::string, std::string> masks_by_case(const std::string& manifest, std::vector<std::string>* order) {
  std::map<std::string, std::string> m;
  for (const auto& e : read_manifest(manifest)) {
    if (e.mask.empty()) throw ValueError(manifest + ": entry " + e.image + " has no mask column");
    const std::string id = case_id(e.image);
    if (!m.emplace(id, e.mask).second) throw ValueError(manifest + ": duplicate case id " + id);
    if (order) order->push_back(id);
  }
  return m;
}

// One group per line: `name<TAB>case<TAB>case...`.
std::vector<std::pair<std::string, std::vector<std::string>>> read_groups(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grouping file " + path);
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name, id;
    std::getline(ss, name, '\t');
    std::vector<std::string> ids;
    while (std::getline(ss, id, '\t')) {
      if (!id.empty()) ids.push_back(id);
    }
    groups.emplace_back(name, ids);
  }
  return groups;
}

int cmd_eval(const Common& c, const std::string& pred, const std::string& truth, const std::string& groups_path,
             const std::vector<std::string>& extras, std::ostream& out) {
  Config cfg = assemble(c, extras);
  const std::string mode_name = cfg.get_string("eval.adb_mode", "surface");
  if (mode_name != "surface" && mode_name != "literal") throw ConfigError("eval.adb_mode must be surface or literal");
  const AdbMode mode = mode_name == "surface" ? AdbMode::Surface : AdbMode::Literal;
  cfg.require_all_consumed();

  std::vector<std::string> order;
  const auto truths = masks_by_case(truth, &order);
  const auto preds = masks_by_case(pred, nullptr);
  for (const auto& [id, _] : preds) {
    if (!truths.count(id)) throw ValueError("prediction case " + id + " has no ground truth");
  }
  for (const auto& id : order) {
    if (!preds.count(id)) throw ValueError("ground-truth case " + id + " has no prediction");
  }
  const auto groups = groups_path.empty() ? decltype(read_groups("")){} : read_groups(groups_path);

  Config resolved;
  resolved.set("eval.adb_mode", mode_name);
  resolved.set("eval.pred", pred);
  resolved.set("eval.truth", truth);
  if (!groups_path.empty()) resolved.set("eval.groups", groups_path);
  const fs::path dir = prepare_out(c.out, resolved);

  std::vector<CaseMetrics> cases;
  for (const auto& id : order) {
    cases.push_back(evaluate_case(id, read_volume(preds.at(id)), read_volume(truths.at(id)), mode));
  }
  const MetricsReport report = build_report(std::move(cases), groups);
  write_text(dir / "metrics.csv", metrics_csv(report));
  write_text(dir / "report.txt", report_text(report));
  write_text(dir / "bland_altman.csv", bland_altman_csv(report));
  if (report.has_reproducibility) write_text(dir / "reproducibility.csv", reproducibility_csv(report));
  out << report_text(report);
  return kOk;
}

}  // namespace

std::string case_id(const std::string& image_path) {
  std::string stem = fs::path(image_path).stem().string();
  const std::string suffix = "_image";
  if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
    stem.resize(stem.size() - suffix.size());
  }
  return stem;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volumetric segmentation with hybrid attention and auto-context", "hasseg"};
  app.require_subcommand(1);

  Common pc, tc, ic, ec;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
  add_common(phantom, pc);
  std::optional<std::int64_t> count;
  phantom->add_option("--count", count, "number of phantoms (phantom.count)");

  auto* train = app.add_subcommand("train", "train the auto-context cascade");
  add_common(train, tc);
  std::string train_manifest;
  bool resume = false;
  train->add_option("--manifest", train_manifest, "image<TAB>mask manifest");
  train->add_flag("--resume", resume, "continue from checkpoints in --out");

  auto* infer = app.add_subcommand("infer", "segment volumes with trained checkpoints");
  add_common(infer, ic);
  std::vector<std::string> checkpoints, inputs;
  std::string infer_manifest;
  infer->add_option("--checkpoint", checkpoints, "checkpoint per level, any order")->required();
  infer->add_option("--manifest", infer_manifest, "manifest whose image column is segmented");
  infer->add_option("--input", inputs, "volume to segment (repeatable)");

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(eval, ec);
  std::string pred, truth, groups;
  eval->add_option("--pred", pred, "prediction manifest (image<TAB>predicted mask)")->required();
  eval->add_option("--truth", truth, "ground-truth manifest (image<TAB>mask)")->required();
  eval->add_option("--groups", groups, "grouping file: name<TAB>case<TAB>case...");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*phantom) {
      std::vector<std::string> extras = phantom->remaining();
      if (count) extras.insert(extras.end(), {"--phantom.count", std::to_string(*count)});
      return cmd_phantom(pc, extras, out);
    }
    if (*train) return cmd_train(tc, train_manifest, resume, train->remaining(), out);
    if (*infer) return cmd_infer(ic, checkpoints, infer_manifest, inputs, infer->remaining(), out);
    if (*eval) return cmd_eval(ec, pred, truth, groups, eval->remaining(), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ValueError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace hasseg::cli
