// ldif: train, sample and analyze nano diffusion models.
//
//   ldif train <config> [--set key=value]... [--out DIR]
//   ldif sample <checkpoint> [--seed N] [--count N] [--steps N] [--sampler KIND] [--class I] [--raw]
//   ldif analyze-omega <checkpoint> [--grid N] [--raw]
//   ldif param-report <config|checkpoint>
//   ldif class-sweep <checkpoint> --first I [--second J] [--kind interp|scale] [--points N] [--samples N]
//   ldif grad-check <config> [--coords N]
//
// Outputs go below $LDIF_OUTPUT_ROOT (default: current directory).
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ldif/ldif.hpp"

namespace {

using namespace ldif;

fs::path output_root() {
  const char* env = std::getenv("LDIF_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::current_path();
}

fs::path resolve_output(const std::string& dir) {
  const fs::path p(dir);
  return p.is_absolute() ? p : output_root() / p;
}

bool is_checkpoint(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::string(magic, 4) == "LDIF";
}

// Calls f.template operator()<T>() with T matching the configured precision.
template <class F>
decltype(auto) with_precision(Precision p, F&& f) {
  if (p == Precision::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

struct Loaded {
  RunConfig cfg;
  Checkpoint ck;
};

Loaded open_checkpoint(const std::string& path) {
  Loaded l;
  l.ck = load_checkpoint(path);
  try {
    l.cfg = parse_run_config(l.ck.config_text);
  } catch (const ConfigError& e) {
    throw DataError(path + ": embedded config is invalid: " + e.what());
  }
  return l;
}

template <class T>
std::unique_ptr<NanoUNet<T>> restore(const Loaded& l, bool raw) {
  auto net = std::make_unique<NanoUNet<T>>(l.cfg.model);
  load_set(l.ck, !raw && l.ck.find("ema") ? "ema" : "raw", net->params());
  return net;
}

std::optional<DiscreteSchedule> schedule_for(const RunConfig& cfg) {
  if (cfg.model.setting != Setting::Discrete) return std::nullopt;
  return cosine_schedule(cfg.model.resolved_steps(), cfg.cosine_s);
}

template <class T>
Shape sample_shape(const RunConfig& cfg, std::size_t n) {
  const auto& u = cfg.model.unet;
  return {n, u.in_channels, u.resolution, u.resolution};
}

template <class T>
Tensor<T> one_hot_row(std::size_t classes, std::size_t i, T weight = T{1}) {
  if (i >= classes) throw ConfigError("class " + std::to_string(i) + " outside 0.." + std::to_string(classes - 1));
  Tensor<T> v({1, classes});
  v.at(0, i) = weight;
  return v;
}

std::string image_ext(const RunConfig& cfg) { return cfg.model.unet.in_channels == 1 ? ".pgm" : ".ppm"; }

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config, const std::vector<std::string>& sets, const std::string& out,
              std::size_t log_every) {
  RunConfig cfg = load_run_config(config);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  validate(cfg);
  const fs::path dir = resolve_output(out.empty() ? cfg.output_dir : out);
  return with_precision(cfg.precision, [&]<class T>() {
    auto data = open_dataset<T>(cfg.data, cfg.model.unet.resolution);
    NanoUNet<T> net(cfg.model);
    std::cerr << "training " << to_string(cfg.model.mode) << " (" << to_string(cfg.model.setting) << ", "
              << net.params().count() << " parameters) on " << data->describe() << " -> " << dir.string() << "\n";
    auto summary = train_run(cfg, net, *data, dir, [&](const MetricsRow& r) {
      if (log_every && (r.iteration % log_every == 0 || r.iteration == cfg.train.iterations)) {
        std::cerr << "iter " << r.iteration << "  loss " << r.loss << "  |g| " << r.grad_norm << "  " << r.wall_seconds
                  << " s\n";
      }
    });
    std::cout << summary.checkpoint.string() << "\n";
    return 0;
  });
}

int cmd_sample(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::size_t> count,
               std::optional<std::size_t> steps, const std::string& kind, std::optional<std::size_t> cls, bool raw,
               const std::string& out) {
  Loaded l = open_checkpoint(path);
  RunConfig& cfg = l.cfg;
  if (seed) cfg.sampler.seed = *seed;
  if (count) cfg.sample_count = *count;
  if (steps) cfg.sampler.steps = *steps;
  if (!kind.empty()) cfg.sampler.kind = parse_sampler(kind);
  if (cfg.model.setting == Setting::Discrete) cfg.sampler.kind = SamplerKind::Ancestral;
  validate(cfg);
  return with_precision(cfg.precision, [&]<class T>() {
    auto net = restore<T>(l, raw);
    UNetEps<T> model(*net);
    const auto sched = schedule_for(cfg);
    Conditions<T> c;
    if (cls) c.class_vec = one_hot_row<T>(cfg.model.embed.num_classes, *cls);
    auto res = sample(model, cfg.sampler, sched ? &*sched : nullptr, sample_shape<T>(cfg, cfg.sample_count), c);
    const std::size_t nsteps = cfg.sampler.kind == SamplerKind::Ancestral ? sched->T() : cfg.sampler.steps;
    const fs::path dir = resolve_output(out.empty() ? (fs::path(cfg.output_dir) / "samples").string() : out);
    const fs::path file = dir / ("samples_seed" + std::to_string(cfg.sampler.seed) + "_steps" + std::to_string(nsteps) +
                                 (cls ? "_class" + std::to_string(*cls) : std::string()) + image_ext(cfg));
    write_image_grid(file, res.images, cfg.sample_cols);
    std::cout << file.string() << "  (" << res.nfe << " NFE)\n";
    return 0;
  });
}

int cmd_analyze(const std::string& path, std::optional<std::size_t> grid, bool raw, const std::string& out) {
  Loaded l = open_checkpoint(path);
  const std::size_t points = grid.value_or(l.cfg.analysis.grid);
  return with_precision(l.cfg.precision, [&]<class T>() {
    auto net = restore<T>(l, raw);
    const auto a = analyze_omega(*net, points, l.cfg.sampler);
    const fs::path dir = resolve_output(out.empty() ? (fs::path(l.cfg.output_dir) / "omega").string() : out);
    write_omega_report(dir, a);
    for (const auto& b : a.blocks) {
      std::cout << b.label << "  near " << b.near_mean << "  far " << b.far_mean
                << (b.near_mean > b.far_mean ? "  ordered" : "  NOT ordered") << "\n";
    }
    std::cout << dir.string() << "\n";
    return 0;
  });
}

int cmd_param_report(const std::string& path, const std::string& out) {
  const RunConfig cfg = is_checkpoint(path) ? open_checkpoint(path).cfg : load_run_config(path);
  const ParamReport r = param_report(cfg.model);
  std::cout << param_report_text(r);
  const fs::path dir = resolve_output(out.empty() ? cfg.output_dir : out);
  write_file_atomic(dir / "param_ledger.csv", param_ledger_csv(r.ledger));
  std::cout << "\n" << (dir / "param_ledger.csv").string() << "\n";
  return r.closed_form_ok && r.identity_ok ? 0 : 3;
}

int cmd_class_sweep(const std::string& path, std::size_t first, std::optional<std::size_t> second,
                    const std::string& kind, std::size_t points, std::size_t samples, double lo, double hi, bool raw,
                    std::optional<std::uint64_t> seed, const std::string& out) {
  Loaded l = open_checkpoint(path);
  RunConfig& cfg = l.cfg;
  if (seed) cfg.sampler.seed = *seed;
  if (cfg.model.setting == Setting::Discrete) cfg.sampler.kind = SamplerKind::Ancestral;
  const std::size_t C = cfg.model.embed.num_classes;
  if (C == 0) throw ConfigError("model is not class-conditional");
  if (points < 2) throw ConfigError("--points must be at least 2");
  if (kind != "interp" && kind != "scale") throw ConfigError("--kind must be interp or scale");
  if (kind == "interp" && !second) throw ConfigError("interpolation needs --second");
  return with_precision(cfg.precision, [&]<class T>() {
    auto net = restore<T>(l, raw);
    UNetEps<T> model(*net);
    const auto sched = schedule_for(cfg);
    std::vector<double> values;
    for (std::size_t i = 0; i < points; ++i) {
      values.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
    }
    // interp: alpha c_first + (1 - alpha) c_second; scale: beta c_first.
    auto vec = [&](double v) {
      Tensor<T> c = one_hot_row<T>(C, first, static_cast<T>(v));
      if (kind == "interp") c.at(0, *second) += static_cast<T>(1.0 - v);
      return c;
    };
    const Shape shape = sample_shape<T>(cfg, samples);
    const auto strips = class_sweep_sample<T>(model, cfg.sampler, sched ? &*sched : nullptr, vec, values, shape);
    // Row s holds sample s at every sweep value.
    Shape grid_shape = shape;
    grid_shape[0] = samples * points;
    Tensor<T> grid(grid_shape);
    const std::size_t per = shape_size(shape) / samples;
    for (std::size_t p = 0; p < points; ++p) {
      for (std::size_t s = 0; s < samples; ++s) {
        std::copy_n(strips[p].ptr() + s * per, per, grid.ptr() + (s * points + p) * per);
      }
    }
    const fs::path dir = resolve_output(out.empty() ? (fs::path(cfg.output_dir) / "sweeps").string() : out);
    const fs::path file = dir / ("sweep_" + kind + "_" + std::to_string(first) +
                                 (kind == "interp" ? "_" + std::to_string(*second) : std::string()) + "_seed" +
                                 std::to_string(cfg.sampler.seed) + image_ext(cfg));
    write_image_grid(file, grid, points);
    std::cout << file.string() << "\n";
    return 0;
  });
}

int cmd_grad_check(const std::string& config, std::size_t coords, double tol) {
  RunConfig cfg = load_run_config(config);
  NanoUNet<double> net(cfg.model);
  UNetEps<double> model(net);
  auto data = open_dataset<double>(cfg.data, cfg.model.unet.resolution);
  SeededRng drng(cfg.model.seed, 1);
  TrainBatch<double> batch = data->batch(drng, 2);
  if (cfg.model.embed.num_classes == 0) batch.class_vec = Tensor<double>();
  const auto sched = schedule_for(cfg);
  auto f = [&]() {
    SeededRng rng(cfg.model.seed, 2);
    return sched ? training_loss(model, batch, *sched, rng) : training_loss(model, batch, cfg.train_sigma, rng);
  };
  GradCheckOptions opts;
  opts.eps = 1e-3;
  opts.coords_per_param = coords;
  opts.seed = cfg.model.seed;
  const auto r = grad_check<double>(f, net.params().params(), opts);
  std::cout << "checked " << r.coords_checked << " coordinates, max relative error " << r.max_error << " at "
            << r.worst_param << "[" << r.worst_index << "] (analytic " << r.worst_analytic << ", numeric "
            << r.worst_numeric << ")\n";
  return r.max_error <= tol ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nano diffusion lab: LoRA conditioning experiments"};
  app.require_subcommand(1);

  std::string path, out;
  std::vector<std::string> sets;
  std::size_t log_every = 100;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", path, "run config")->required();
  train->add_option("--set", sets, "override a config key (key=value), repeatable");
  train->add_option("--out", out, "run directory (default: output_dir from the config)");
  train->add_option("--log-every", log_every, "progress line interval (0: silent)");

  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count, steps, cls, grid;
  std::string kind;
  bool raw = false;
  auto* smp = app.add_subcommand("sample", "write a grid of samples from a checkpoint");
  smp->add_option("checkpoint", path)->required();
  smp->add_option("--seed", seed);
  smp->add_option("--count", count);
  smp->add_option("--steps", steps, "Heun grid size");
  smp->add_option("--sampler", kind, "ancestral | heun_ode");
  smp->add_option("--class", cls, "condition on this class");
  smp->add_flag("--raw", raw, "use raw weights instead of the EMA");
  smp->add_option("--out", out);

  auto* ana = app.add_subcommand("analyze-omega", "cosine similarity of LoRA composition weights");
  ana->add_option("checkpoint", path)->required();
  ana->add_option("--grid", grid, "number of grid points");
  ana->add_flag("--raw", raw);
  ana->add_option("--out", out);

  auto* rep = app.add_subcommand("param-report", "parameter ledger and LoRA overhead");
  rep->add_option("source", path, "config file or checkpoint")->required();
  rep->add_option("--out", out);

  std::size_t first = 0, points = 9, samples = 4;
  std::optional<std::size_t> second;
  std::string sweep_kind = "interp";
  double lo = 0.0, hi = 1.0;
  auto* sweep = app.add_subcommand("class-sweep", "sample along interpolated or scaled class vectors");
  sweep->add_option("checkpoint", path)->required();
  sweep->add_option("--first", first)->required();
  sweep->add_option("--second", second);
  sweep->add_option("--kind", sweep_kind, "interp | scale");
  sweep->add_option("--points", points);
  sweep->add_option("--samples", samples, "rows of the strip");
  sweep->add_option("--from", lo, "first sweep value");
  sweep->add_option("--to", hi, "last sweep value");
  sweep->add_option("--seed", seed);
  sweep->add_flag("--raw", raw);
  sweep->add_option("--out", out);

  std::size_t coords = 3;
  double tol = 1e-3;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the training loss gradient");
  gc->add_option("config", path)->required();
  gc->add_option("--coords", coords, "coordinates per parameter tensor (0: all)");
  gc->add_option("--tol", tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(path, sets, out, log_every);
    if (*smp) return cmd_sample(path, seed, count, steps, kind, cls, raw, out);
    if (*ana) return cmd_analyze(path, grid, raw, out);
    if (*rep) return cmd_param_report(path, out);
    if (*sweep) return cmd_class_sweep(path, first, second, sweep_kind, points, samples, lo, hi, raw, seed, out);
    if (*gc) return cmd_grad_check(path, coords, tol);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
