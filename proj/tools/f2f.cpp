// f2f — command-line front end over the forecasting library.
//
// Every command writes its outputs plus run_manifest.txt into --out. The
// manifest is the resolved config plus the invocation under "cli." keys, and
// is itself loadable with --config, so any run can be repeated from its own
// manifest (bit-identically in double precision).

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "f2f/analysis.hpp"
#include "f2f/clipgen.hpp"
#include "f2f/common.hpp"
#include "f2f/image.hpp"
#include "f2f/metrics.hpp"
#include "f2f/pipeline.hpp"
#include "f2f/runconfig.hpp"
#include "f2f/serialize.hpp"

namespace f2f::cli {
namespace {

// --- flag registry -----------------------------------------------------------

struct FlagDoc {
  const char* name;  // without the leading "--"
  const char* arg;   // metavariable shown in help
  const char* help;
  bool required = false;
};

struct CommandDoc {
  const char* name;
  const char* help;
  std::vector<FlagDoc> flags;  // command-specific; common flags apply too
};

const std::vector<FlagDoc>& common_flags() {
  static const std::vector<FlagDoc> f = {
      {"config", "FILE", "settings file; a previous run_manifest.txt also works"},
      {"out", "DIR", "output directory, created if absent", true},
      {"seed", "N", "master RNG seed (default 1)"},
      {"precision", "P", "float | double (default float)"},
      {"jobs", "N", "worker cap; accepted for compatibility, this build runs serially"},
  };
  return f;
}

const std::vector<CommandDoc>& commands() {
  static const std::vector<CommandDoc> c = {
      {"generate",
       "synthesize a moving-shapes dataset with dense labels",
       {{"clips", "N", "number of mini-clips (default 40)"}}},
      {"train-single",
       "train the single-frame segmentation model",
       {{"data", "DIR", "dataset directory (from `generate`)", true}}},
      {"extract",
       "run the trained single-frame model over every frame into a feature cache",
       {{"data", "DIR", "dataset directory", true},
        {"stub", "FILE", "single-frame checkpoint (stub.f2fw)", true}}},
      {"train-f2f",
       "L2-train an F2F forecasting model on cached features",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache (features.f2fc)", true},
        {"variant", "V", "F2F variant: conv | dilated | deform"},
        {"layers", "N", "F2F conv layers"},
        {"frames", "N", "input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
      {"finetune",
       "fine-tune F2F + segmentation head with averaged L2/cross-entropy gradients",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint (model.f2fw)", true},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
      {"finetune-ar",
       "fine-tune with the model unrolled autoregressively, losses on the final step",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"},
        {"steps", "N", "unrolled autoregressive steps (default 3)"}}},
      {"forecast",
       "forecast one clip's future segmentation and write it as a label image",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"clip", "N", "clip id", true},
        {"t", "N", "observed frame (default 10)"},
        {"steps", "N", "autoregressive steps (default 1)"},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
      {"evaluate",
       "score oracle / copy / forecast (and optionally ensemble) on the validation split",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"steps", "N", "autoregressive steps (default 1)"},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"},
        {"lambda", "X", "ensemble weight in [0,1]; adds an ensemble row"}}},
      {"ablate",
       "train one F2F per setting and tabulate parameters + validation mIoU",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"variants", "LIST", "comma list of F2F variants to sweep"},
        {"frames-list", "LIST", "comma list of input frame counts to sweep"},
        {"layers", "N", "F2F conv layers"},
        {"frames", "N", "input frames T for a --variants sweep"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
      {"probe-erf",
       "back-propagate a probe pixel's score to the input frames (effective receptive field)",
       {{"data", "DIR", "dataset directory", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"clip", "N", "clip id (default: first validation clip)"},
        {"t", "N", "observed frame (default 10)"},
        {"y", "N", "probe row (needs --x; default: strongest-motion pixel)"},
        {"x", "N", "probe column (needs --y)"},
        {"k", "N", "mask pixel budget (default: 0.15% of the image)"}}},
      {"error-map",
       "average per-feature-pixel forecast MSE over the validation clips",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"steps", "N", "autoregressive steps (default 1)"},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
      {"report",
       "per-class IoU table for autoregressive horizons AR-1..AR-K",
       {{"data", "DIR", "dataset directory", true},
        {"cache", "FILE", "feature cache", true},
        {"stub", "FILE", "single-frame checkpoint", true},
        {"model", "FILE", "F2F checkpoint", true},
        {"steps", "N", "max autoregressive steps K (default: 9/offset)"},
        {"variant", "V", "checkpoint's F2F variant: conv | dilated | deform"},
        {"layers", "N", "checkpoint's F2F conv layers"},
        {"frames", "N", "checkpoint's input frames T"},
        {"offset", "N", "forecast offset in frames: 3 | 9"}}},
  };
  return c;
}

const CommandDoc* find_command(const std::string& name) {
  for (const auto& c : commands())
    if (name == c.name) return &c;
  return nullptr;
}

// --- help --------------------------------------------------------------------

void print_flag(FILE* f, const FlagDoc& d) {
  std::string head = std::string("--") + d.name + " " + d.arg;
  std::fprintf(f, "  %-20s %s%s\n", head.c_str(), d.help, d.required ? " (required)" : "");
}

void print_global_help(FILE* f) {
  std::fprintf(f, "f2f — single-level feature-to-feature forecasting toolkit\n\n");
  std::fprintf(f, "usage: f2f <command> [--flag value ...]\n\ncommands:\n");
  for (const auto& c : commands()) std::fprintf(f, "  %-13s %s\n", c.name, c.help);
  std::fprintf(f, "\ncommon flags (every command):\n");
  for (const auto& d : common_flags()) print_flag(f, d);
  std::fprintf(f, "\nrun `f2f <command> --help` for the command's full flag list.\n");
}

void print_command_help(FILE* f, const CommandDoc& c) {
  std::fprintf(f, "usage: f2f %s [--flag value ...]\n\n%s\n\nflags:\n", c.name, c.help);
  for (const auto& d : c.flags) print_flag(f, d);
  for (const auto& d : common_flags()) print_flag(f, d);
}

// --- argument parsing --------------------------------------------------------

struct Args {
  std::string command;
  bool help = false;
  std::map<std::string, std::string> flags;  // name without "--"
};

int64_t flag_int(const std::string& name, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw UsageError("flag --" + name + " wants an integer, got '" + v + "'");
  return x;
}

double flag_real(const std::string& name, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw UsageError("flag --" + name + " wants a number, got '" + v + "'");
  return x;
}

Args parse_args(const CommandDoc& doc, const std::vector<std::string>& tokens) {
  auto known = [&doc](const std::string& n) {
    for (const auto& d : doc.flags)
      if (n == d.name) return true;
    for (const auto& d : common_flags())
      if (n == d.name) return true;
    return false;
  };
  Args a;
  a.command = doc.name;
  for (size_t i = 1; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok == "--help" || tok == "-h") {
      a.help = true;
      continue;
    }
    if (tok.rfind("--", 0) != 0)
      throw UsageError("unexpected argument '" + tok + "' (flags look like --name value)");
    std::string name = tok.substr(2);
    if (!known(name))
      throw UsageError("unknown flag --" + name + " for '" + a.command + "' (see f2f " +
                       a.command + " --help)");
    if (i + 1 >= tokens.size()) throw UsageError("flag --" + name + " needs a value");
    if (a.flags.count(name)) throw UsageError("duplicate flag --" + name);
    a.flags[name] = tokens[++i];
  }
  if (!a.help) {
    auto need = [&a](const FlagDoc& d) {
      if (d.required && !a.flags.count(d.name))
        throw UsageError("missing required flag --" + std::string(d.name) + " for '" +
                         a.command + "'");
    };
    for (const auto& d : doc.flags) need(d);
    for (const auto& d : common_flags()) need(d);
  }
  return a;
}

// Flag accessor that remembers every resolved value for the run manifest.
class FlagView {
 public:
  explicit FlagView(const Args& a) : a_(a) {}

  bool present(const std::string& n) const { return a_.flags.count(n) != 0; }

  std::string str(const std::string& n, const std::string& dflt = "") {
    auto it = a_.flags.find(n);
    std::string v = it == a_.flags.end() ? dflt : it->second;
    record(n, v);
    return v;
  }

  int64_t num(const std::string& n, int64_t dflt) {
    auto it = a_.flags.find(n);
    int64_t v = it == a_.flags.end() ? dflt : flag_int(n, it->second);
    record(n, std::to_string(v));
    return v;
  }

  std::optional<double> real_opt(const std::string& n) {
    auto it = a_.flags.find(n);
    if (it == a_.flags.end()) return std::nullopt;
    double v = flag_real(n, it->second);
    record(n, kv::fmt_double(v));
    return v;
  }

  const std::vector<std::pair<std::string, std::string>>& used() const { return used_; }

 private:
  void record(const std::string& n, const std::string& v) {
    for (const auto& [k, old] : used_)
      if (k == n) return;
    used_.emplace_back(n, v);
  }

  const Args& a_;
  std::vector<std::pair<std::string, std::string>> used_;
};

// --- config assembly ---------------------------------------------------------

// --config loads first; the model/offset flags then override, so a rerun from
// a manifest with no extra flags reproduces the recorded settings exactly.
RunConfig make_config(const Args& a) {
  RunConfig cfg;
  if (auto it = a.flags.find("config"); it != a.flags.end()) cfg = RunConfig::load(it->second);
  if (auto it = a.flags.find("seed"); it != a.flags.end())
    cfg.seed = static_cast<uint64_t>(flag_int("seed", it->second));
  if (auto it = a.flags.find("precision"); it != a.flags.end()) cfg.precision = it->second;
  if (auto it = a.flags.find("clips"); it != a.flags.end())
    cfg.clips = static_cast<int>(flag_int("clips", it->second));
  if (auto it = a.flags.find("variant"); it != a.flags.end())
    cfg.f2f.variant = model::variant_from_name(it->second);
  if (auto it = a.flags.find("layers"); it != a.flags.end())
    cfg.f2f.n_layers = static_cast<int>(flag_int("layers", it->second));
  if (auto it = a.flags.find("frames"); it != a.flags.end())
    cfg.f2f.frames = static_cast<int>(flag_int("frames", it->second));
  if (auto it = a.flags.find("offset"); it != a.flags.end())
    cfg.train_l2.target_offset = static_cast<int>(flag_int("offset", it->second));
  cfg.sync();
  cfg.validate();
  return cfg;
}

void write_manifest(const std::string& cmd, const FlagView& fv, const RunConfig& cfg,
                    const std::string& out) {
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("command", cmd);
  e.emplace_back("flag.out", out);
  for (const auto& [k, v] : fv.used()) e.emplace_back("flag." + k, v);
  cfg.save(out + "/run_manifest.txt", "f2f " + cmd + " run manifest", e);
}

// --- shared helpers ----------------------------------------------------------

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

pipe::EpochFn epoch_logger(const std::string& cmd, int total) {
  return [cmd, total](const pipe::EpochLog& e) {
    std::fprintf(stderr, "[%s] epoch %d/%d loss %.6f\n", cmd.c_str(), e.epoch + 1, total,
                 e.loss);
  };
}

// Opens the dataset and folds its world into the config so classes, moving
// ids, and dimensions always describe the data actually on disk.
data::Dataset open_data(FlagView& fv, RunConfig& cfg) {
  data::Dataset ds = data::open_dataset(fv.str("data"));
  cfg.world = ds.world;
  cfg.sync();
  cfg.validate();
  return ds;
}

template <class T>
model::SingleFrameModel<T> load_stub(const RunConfig& cfg, const std::string& path) {
  auto m = model::build_stub<T>(cfg.stub, cfg.stub_seed());
  ckpt::load_params<T>(path, m.named_parameters());
  return m;
}

template <class T>
struct LoadedF2F {
  model::F2FModel<T> model;
  pipe::FeatureNormalizer<T> nz;
};

template <class T>
LoadedF2F<T> load_f2f(const RunConfig& cfg, const std::string& path) {
  LoadedF2F<T> out{model::build_f2f<T>(cfg.f2f, cfg.f2f_seed()), {}};
  std::map<std::string, Tensor<float>> extra;
  ckpt::load_params<T>(path, out.model.named_parameters(), &extra);
  for (const auto& [k, v] : extra)
    if (k != "norm.mean" && k != "norm.std")
      throw CheckpointError(path + ": unexpected record '" + k + "'");
  out.nz = pipe::normalizer_from_records<T>(extra, path);
  return out;
}

void check_clip_id(const data::Dataset& ds, int clip) {
  if (clip < 0 || clip >= ds.clip_count)
    throw UsageError("clip id " + std::to_string(clip) + " outside 0.." +
                     std::to_string(ds.clip_count - 1));
}

void check_window(int t, int frames, int stride) {
  if (t > data::kClipFrames - 1 || t - stride * (frames - 1) < 0)
    throw UsageError("frame tuple t-" + std::to_string(stride) + "(T-1)..t does not fit the " +
                     std::to_string(data::kClipFrames) + "-frame clip at t=" +
                     std::to_string(t));
}

int checked_target(int t, int steps, int offset) {
  if (steps < 1) throw UsageError("autoregression needs steps >= 1");
  int target = t + steps * offset;
  if (target > data::kClipFrames - 1)
    throw UsageError("target frame " + std::to_string(target) + " past the last labeled frame " +
                     std::to_string(data::kClipFrames - 1) +
                     " (steps * offset too large)");
  return target;
}

std::vector<int> eval_clips(const data::Dataset& ds) {
  F2F_CHECK_DATA(!ds.val_ids.empty(), "no validation clips in this dataset");
  return ds.val_ids;
}

// Blank cell when a metric is undefined (e.g. no moving pixels in the split).
std::string metric_cell(double (*fn)(const metric::ConfusionMatrix&, const std::vector<int>&),
                        const metric::ConfusionMatrix& cm, const std::vector<int>& ids) {
  try {
    std::ostringstream o;
    o << fn(cm, ids);
    return o.str();
  } catch (const DataError&) {
    return "";
  }
}

double call_miou(const metric::ConfusionMatrix& cm, const std::vector<int>&) {
  return metric::miou(cm);
}

double call_miou_mo(const metric::ConfusionMatrix& cm, const std::vector<int>& ids) {
  return metric::miou_mo(cm, ids);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  for (const auto& l : lines) f << l << "\n";
  if (!f) throw DataError("short write: " + path);
}

// --- commands ----------------------------------------------------------------

template <class T>
void cmd_generate(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds =
      data::generate_dataset(cfg.world, cfg.clips, cfg.val_fraction, cfg.seed, out);
  std::printf("generate: %d clips (%zu train / %zu val) of %d %dx%d frames -> %s\n",
              ds.clip_count, ds.train_ids().size(), ds.val_ids.size(), data::kClipFrames,
              cfg.world.height, cfg.world.width, out.c_str());
  (void)fv;
}

template <class T>
void cmd_train_single(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  auto stub = model::build_stub<T>(cfg.stub, cfg.stub_seed());
  auto curve = pipe::train_single(stub, ds, ds.train_ids(), cfg.train_single,
                                  epoch_logger("train-single", cfg.train_single.epochs));
  ckpt::save_params<T>(out + "/stub.f2fw", stub.named_parameters());
  pipe::write_loss_csv(out + "/loss_single.csv", curve);
  const bool has_val = !ds.val_ids.empty();
  auto cm = pipe::eval_single(stub, ds, has_val ? ds.val_ids : ds.train_ids(),
                              data::kObservedFrame);
  std::printf("train-single: %d epochs, final loss %.6f, %s mIoU %.4f -> %s\n",
              cfg.train_single.epochs, curve.empty() ? 0.0 : curve.back().loss,
              has_val ? "val" : "train", metric::miou(cm), out.c_str());
}

template <class T>
void cmd_extract(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  pipe::extract_to_cache(stub, ds, out + "/features.f2fc");
  const int s = cfg.stub.downsample;
  std::printf("extract: %d feature maps [%d,%d,%d] -> %s/features.f2fc\n",
              ds.clip_count * data::kClipFrames, cfg.stub.feat_dim, cfg.world.height / s,
              cfg.world.width / s, out.c_str());
}

template <class T>
void cmd_train_f2f(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto nz = pipe::fit_normalizer<T>(reader, ds.train_ids());
  auto m = model::build_f2f<T>(cfg.f2f, cfg.f2f_seed());
  auto curve = pipe::train_f2f_l2(m, reader, ds.train_ids(), nz, cfg.train_l2,
                                  epoch_logger("train-f2f", cfg.train_l2.epochs));
  ckpt::save_params<T>(out + "/model.f2fw", m.named_parameters(), pipe::normalizer_records(nz));
  pipe::write_loss_csv(out + "/loss_l2.csv", curve);
  const auto& eval_ids = ds.val_ids.empty() ? ds.train_ids() : ds.val_ids;
  double val = pipe::eval_f2f_l2(m, reader, eval_ids, nz, cfg.train_l2);
  std::printf("train-f2f %s-%d T=%d +%d: final train L2 %.6f, %s L2 %.6f -> %s\n",
              model::variant_name(cfg.f2f.variant), cfg.f2f.n_layers, cfg.f2f.frames,
              cfg.train_l2.target_offset, curve.empty() ? 0.0 : curve.back().loss,
              ds.val_ids.empty() ? "train" : "val", val, out.c_str());
}

template <class T>
void cmd_finetune(FlagView& fv, RunConfig& cfg, const std::string& out, bool autoregressive) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  pipe::TrainSpec spec = cfg.train_ft;
  spec.unroll_steps = autoregressive ? static_cast<int>(fv.num("steps", 3)) : 1;
  const char* name = autoregressive ? "finetune-ar" : "finetune";
  auto curve = pipe::finetune_f2f(f2f.model, stub, reader, ds, ds.train_ids(), f2f.nz, spec,
                                  {}, epoch_logger(name, spec.epochs));
  ckpt::save_params<T>(out + "/model_ft.f2fw", f2f.model.named_parameters(),
                       pipe::normalizer_records(f2f.nz));
  ckpt::save_params<T>(out + "/stub_ft.f2fw", stub.named_parameters());
  pipe::write_loss_csv(out + "/loss_ft.csv", curve);
  const int target = data::kObservedFrame + spec.horizon();
  auto cm = pipe::cm_forecast(f2f.model, stub, reader, f2f.nz, ds, eval_clips(ds),
                              data::kObservedFrame, spec.unroll_steps, target);
  std::printf("%s: %d epochs, final loss %.6f, val forecast mIoU %.4f at t+%d -> %s\n", name,
              spec.epochs, curve.empty() ? 0.0 : curve.back().loss, metric::miou(cm),
              spec.horizon(), out.c_str());
}

template <class T>
void cmd_forecast(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  const int clip = static_cast<int>(fv.num("clip", 0));
  const int t = static_cast<int>(fv.num("t", data::kObservedFrame));
  const int steps = static_cast<int>(fv.num("steps", 1));
  if (steps < 1) throw UsageError("autoregression needs steps >= 1");
  check_clip_id(ds, clip);
  check_window(t, cfg.f2f.frames, cfg.train_l2.frame_stride);
  img::LabelMap lm = pipe::forecast_labels(f2f.model, stub, reader, f2f.nz, clip, t, steps);
  img::write_label_pgm(out + "/forecast_labels.pgm", lm);
  const int target = t + steps * cfg.train_l2.target_offset;
  std::string score;
  if (target <= data::kClipFrames - 1) {
    metric::ConfusionMatrix cm(cfg.stub.classes);
    metric::accumulate(cm, lm, data::load_labels(ds, clip, target));
    char buf[64];
    std::snprintf(buf, sizeof buf, ", mIoU vs t=%d labels %.4f", target, metric::miou(cm));
    score = buf;
  }
  std::printf("forecast clip %d t=%d steps=%d (+%d each): labels -> %s/forecast_labels.pgm%s\n",
              clip, t, steps, cfg.train_l2.target_offset, out.c_str(), score.c_str());
}

template <class T>
void cmd_evaluate(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  const int steps = static_cast<int>(fv.num("steps", 1));
  const int offset = cfg.train_l2.target_offset;
  const int t = data::kObservedFrame;
  const int target = checked_target(t, steps, offset);
  std::vector<int> val = eval_clips(ds);
  check_window(t, cfg.f2f.frames, cfg.train_l2.frame_stride);

  std::vector<std::pair<std::string, metric::ConfusionMatrix>> rows;
  rows.emplace_back("oracle", pipe::cm_oracle(stub, ds, val, target));
  rows.emplace_back("copy", pipe::cm_copy(stub, ds, val, t, target));
  rows.emplace_back("forecast",
                    pipe::cm_forecast(f2f.model, stub, reader, f2f.nz, ds, val, t, steps, target));
  if (auto lambda = fv.real_opt("lambda"))
    rows.emplace_back("ensemble", pipe::cm_ensemble(f2f.model, stub, reader, f2f.nz, ds, val, t,
                                                    steps, target, *lambda));

  const auto& moving = cfg.world.moving_class_ids;
  std::vector<std::string> lines{"row,miou,miou_mo"};
  std::string summary = "evaluate t+" + std::to_string(target - t) + ":";
  for (const auto& [label, cm] : rows) {
    lines.push_back(label + "," + metric_cell(call_miou, cm, moving) + "," +
                    metric_cell(call_miou_mo, cm, moving));
    char buf[48];
    std::snprintf(buf, sizeof buf, " %s %.4f", label.c_str(), metric::miou(cm));
    summary += buf;
  }
  write_lines(out + "/evaluate.csv", lines);
  std::printf("%s (%zu val clips) -> %s/evaluate.csv\n", summary.c_str(), val.size(),
              out.c_str());
}

template <class T>
void cmd_ablate(FlagView& fv, RunConfig& cfg, const std::string& out) {
  const bool by_variant = fv.present("variants");
  const bool by_frames = fv.present("frames-list");
  if (by_variant == by_frames)
    throw UsageError("ablate wants exactly one of --variants or --frames-list");

  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto nz = pipe::fit_normalizer<T>(reader, ds.train_ids());
  std::vector<int> val = eval_clips(ds);
  const int target = data::kObservedFrame + cfg.train_l2.target_offset;

  // One (label, config) pair per swept setting.
  std::vector<std::pair<std::string, RunConfig>> settings;
  if (by_variant) {
    std::stringstream ss(fv.str("variants"));
    for (std::string item; std::getline(ss, item, ',');) {
      RunConfig c = cfg;
      c.f2f.variant = model::variant_from_name(item);
      settings.emplace_back(model::variant_name(c.f2f.variant), c);
    }
  } else {
    for (int f : kv::parse_int_list(fv.str("frames-list"), "frames-list")) {
      RunConfig c = cfg;
      c.f2f.frames = f;
      settings.emplace_back("T" + std::to_string(f), c);
    }
  }
  if (settings.empty()) throw UsageError("ablate sweep list is empty");

  std::vector<std::string> lines{"row,params,miou,miou_mo"};
  std::string best_label;
  double best = -1;
  for (auto& [label, c] : settings) {
    c.sync();
    c.validate();
    auto m = model::build_f2f<T>(c.f2f, c.f2f_seed());
    pipe::train_f2f_l2(m, reader, ds.train_ids(), nz, c.train_l2,
                       epoch_logger("ablate " + label, c.train_l2.epochs));
    ckpt::save_params<T>(out + "/model_" + label + ".f2fw", m.named_parameters(),
                         pipe::normalizer_records(nz));
    auto cm = pipe::cm_forecast(m, stub, reader, nz, ds, val, data::kObservedFrame, 1, target);
    const auto& moving = c.world.moving_class_ids;
    lines.push_back(label + "," + std::to_string(m.count_parameters()) + "," +
                    metric_cell(call_miou, cm, moving) + "," +
                    metric_cell(call_miou_mo, cm, moving));
    double v = metric::miou(cm);
    std::fprintf(stderr, "[ablate] %s: params %lld, val mIoU %.4f\n", label.c_str(),
                 static_cast<long long>(m.count_parameters()), v);
    if (v > best) best = v, best_label = label;
  }
  write_lines(out + "/ablate.csv", lines);
  std::printf("ablate: %zu settings at t+%d, best %s (mIoU %.4f) -> %s/ablate.csv\n",
              settings.size(), cfg.train_l2.target_offset, best_label.c_str(), best,
              out.c_str());
}

template <class T>
void cmd_probe_erf(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  const int default_clip = ds.val_ids.empty() ? 0 : ds.val_ids.front();
  const int clip = static_cast<int>(fv.num("clip", default_clip));
  const int t = static_cast<int>(fv.num("t", data::kObservedFrame));
  check_clip_id(ds, clip);
  const int stride = cfg.train_l2.frame_stride;
  check_window(t, cfg.f2f.frames, stride);

  std::vector<img::Gray8> frames;
  for (int fr : pipe::input_frames(t, cfg.f2f.frames, stride))
    frames.push_back(data::load_frame(ds, clip, fr));

  int py, px;
  if (fv.present("y") || fv.present("x")) {
    if (!fv.present("y") || !fv.present("x"))
      throw UsageError("--y and --x come as a pair");
    py = static_cast<int>(fv.num("y", 0));
    px = static_cast<int>(fv.num("x", 0));
  } else {
    // Default probe: the pixel that moved the most over the last stride.
    const img::Gray8& cur = frames.back();
    py = cur.h / 2, px = cur.w / 2;
    if (t >= stride) {
      img::Gray8 prev = data::load_frame(ds, clip, t - stride);
      int best = -1;
      for (int y = 0; y < cur.h; ++y)
        for (int x = 0; x < cur.w; ++x) {
          int d = std::abs(int(cur.at(y, x)) - int(prev.at(y, x)));
          if (d > best) best = d, py = y, px = x;
        }
    }
    fv.str("y", std::to_string(py));  // record the resolved probe
    fv.str("x", std::to_string(px));
  }
  const int k = static_cast<int>(fv.num("k", 0));

  analysis::ErfReport rep = analysis::erf_probe(stub, f2f.model, f2f.nz, frames, py, px, k);

  std::vector<std::string> lines;
  lines.push_back("probe_y=" + std::to_string(rep.probe_y));
  lines.push_back("probe_x=" + std::to_string(rep.probe_x));
  lines.push_back("k=" + std::to_string(rep.k));
  lines.push_back("threshold=" + kv::fmt_double(rep.threshold));
  lines.push_back(std::string("flagged_zero=") + (rep.flagged_zero ? "true" : "false"));
  std::string drift;
  for (size_t i = 0; i < rep.masks.size(); ++i) {
    img::write_pgm(out + "/erf_frame" + std::to_string(i) + "_magnitude.pgm",
                   analysis::magnitude_image(rep.magnitude[i]));
    img::write_pgm(out + "/erf_frame" + std::to_string(i) + "_mask.pgm",
                   analysis::mask_image(rep.masks[i]));
    double cy, cx;
    char buf[96];
    if (analysis::mask_centroid(rep.masks[i], &cy, &cx)) {
      std::snprintf(buf, sizeof buf, "frame%zu.centroid_y=%.6f", i, cy);
      lines.push_back(buf);
      std::snprintf(buf, sizeof buf, "frame%zu.centroid_x=%.6f", i, cx);
      lines.push_back(buf);
      std::snprintf(buf, sizeof buf, " %.1f", cx);
      drift += buf;
    } else {
      lines.push_back("frame" + std::to_string(i) + ".mask=empty");
      drift += " -";
    }
  }
  write_lines(out + "/erf_report.txt", lines);
  std::printf("probe-erf clip %d t=%d probe (%d,%d) k=%d%s: centroid x per frame%s -> %s\n",
              clip, t, rep.probe_y, rep.probe_x, rep.k,
              rep.flagged_zero ? " [zero gradient]" : "", drift.c_str(), out.c_str());
}

template <class T>
void cmd_error_map(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  pipe::TrainSpec spec = cfg.train_l2;
  spec.unroll_steps = static_cast<int>(fv.num("steps", 1));
  spec.validate();
  Tensor<double> map =
      analysis::mse_error_map(f2f.model, reader, f2f.nz, eval_clips(ds), spec);
  img::write_pgm(out + "/error_map.pgm", analysis::error_map_image(map));
  analysis::write_error_map_csv(out + "/error_map.csv", map);
  double mean = 0, peak = -1;
  int peak_y = 0, peak_x = 0;
  for (int y = 0; y < map.dim(0); ++y)
    for (int x = 0; x < map.dim(1); ++x) {
      mean += map.at2(y, x);
      if (map.at2(y, x) > peak) peak = map.at2(y, x), peak_y = y, peak_x = x;
    }
  mean /= double(map.numel());
  std::printf("error-map t+%d: mean %.6g, peak %.6g at cell (%d,%d) -> %s/error_map.{pgm,csv}\n",
              spec.horizon(), mean, peak, peak_y, peak_x, out.c_str());
}

template <class T>
void cmd_report(FlagView& fv, RunConfig& cfg, const std::string& out) {
  data::Dataset ds = open_data(fv, cfg);
  cache::CacheReader reader(fv.str("cache"));
  auto stub = load_stub<T>(cfg, fv.str("stub"));
  auto f2f = load_f2f<T>(cfg, fv.str("model"));
  const int offset = cfg.train_l2.target_offset;
  const int t = data::kObservedFrame;
  const int K = static_cast<int>(fv.num("steps", (data::kClipFrames - 1 - t) / offset));
  checked_target(t, K, offset);
  std::vector<int> val = eval_clips(ds);
  check_window(t, cfg.f2f.frames, cfg.train_l2.frame_stride);

  std::vector<std::pair<std::string, metric::ConfusionMatrix>> rows;
  for (int k = 1; k <= K; ++k)
    rows.emplace_back("AR-" + std::to_string(k),
                      pipe::cm_forecast(f2f.model, stub, reader, f2f.nz, ds, val, t, k,
                                        t + k * offset));
  std::vector<std::string> names;
  for (int c = 0; c < cfg.stub.classes; ++c) names.push_back("class" + std::to_string(c));
  metric::write_per_class_report(out + "/per_class.csv", names, rows);
  std::printf("report: AR-1..AR-%d (+%d per step) mean mIoU %.4f .. %.4f -> %s/per_class.csv\n",
              K, offset, metric::miou(rows.front().second), metric::miou(rows.back().second),
              out.c_str());
}

// --- dispatch ----------------------------------------------------------------

template <class T>
void run_command(const std::string& cmd, FlagView& fv, RunConfig& cfg, const std::string& out) {
  if (cmd == "generate") cmd_generate<T>(fv, cfg, out);
  else if (cmd == "train-single") cmd_train_single<T>(fv, cfg, out);
  else if (cmd == "extract") cmd_extract<T>(fv, cfg, out);
  else if (cmd == "train-f2f") cmd_train_f2f<T>(fv, cfg, out);
  else if (cmd == "finetune") cmd_finetune<T>(fv, cfg, out, false);
  else if (cmd == "finetune-ar") cmd_finetune<T>(fv, cfg, out, true);
  else if (cmd == "forecast") cmd_forecast<T>(fv, cfg, out);
  else if (cmd == "evaluate") cmd_evaluate<T>(fv, cfg, out);
  else if (cmd == "ablate") cmd_ablate<T>(fv, cfg, out);
  else if (cmd == "probe-erf") cmd_probe_erf<T>(fv, cfg, out);
  else if (cmd == "error-map") cmd_error_map<T>(fv, cfg, out);
  else if (cmd == "report") cmd_report<T>(fv, cfg, out);
  else throw UsageError("unknown command '" + cmd + "'");
}

int run_main(int argc, char** argv) {
  std::vector<std::string> tokens(argv + 1, argv + argc);
  if (tokens.empty()) {
    print_global_help(stderr);
    return 1;
  }
  const std::string& cmd = tokens[0];
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    print_global_help(stdout);
    return 0;
  }
  const CommandDoc* doc = find_command(cmd);
  if (!doc) throw UsageError("unknown command '" + cmd + "' (run f2f --help)");
  Args args = parse_args(*doc, tokens);
  if (args.help) {
    print_command_help(stdout, *doc);
    return 0;
  }

  RunConfig cfg = make_config(args);
  FlagView fv(args);
  if (fv.num("jobs", 1) < 1) throw UsageError("--jobs wants a positive worker count");
  if (fv.present("config")) fv.str("config");

  const std::string out = args.flags.at("out");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out + ": " + ec.message());

  Stopwatch sw;
  if (cfg.precision == "double")
    run_command<double>(cmd, fv, cfg, out);
  else
    run_command<float>(cmd, fv, cfg, out);
  write_manifest(cmd, fv, cfg, out);
  std::fprintf(stderr, "[%s] done in %.1fs\n", cmd.c_str(), sw.s());
  return 0;
}

}  // namespace
}  // namespace f2f::cli

int main(int argc, char** argv) {
  try {
    return f2f::cli::run_main(argc, argv);
  } catch (const f2f::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const f2f::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const f2f::CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
