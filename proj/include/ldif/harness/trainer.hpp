#pragma once

#include <fcntl.h>
#include <unistd.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ldif/diffusion/ema.hpp"
#include "ldif/diffusion/eps_model.hpp"
#include "ldif/diffusion/objective.hpp"
#include "ldif/harness/checkpoint.hpp"
#include "ldif/harness/dataset.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/harness/run_config.hpp"
#include "ldif/network/unet.hpp"

namespace ldif {

struct MetricsRow {
  std::size_t iteration = 0;
  double wall_seconds = 0.0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "iteration,wall_seconds,loss,lr,grad_norm\n";
  for (const auto& r : rows) {
    s += std::to_string(r.iteration) + "," + format_double(r.wall_seconds) + "," + format_double(r.loss) + "," +
         format_double(r.lr) + "," + format_double(r.grad_norm) + "\n";
  }
  return s;
}

// Adam with bias correction, no weight decay.
template <class T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : store.params()) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  double lr() const noexcept { return lr_; }
  std::size_t steps() const noexcept { return t_; }

  void step(ParamStore<T>& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T step = static_cast<T>(lr_ / c1), root_c2 = static_cast<T>(std::sqrt(c2)), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      auto& p = store.params()[i];
      if (!p->has_grad()) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        const T g = p->grad[j];
        m[j] = b1 * m[j] + (T{1} - b1) * g;
        v[j] = b2 * v[j] + (T{1} - b2) * g * g;
        p->value[j] -= step * m[j] / (std::sqrt(v[j]) / root_c2 + eps);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Exclusive ownership of a run directory for the life of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("run directory " + dir.string() + " is locked by another process (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

// One model, its optimizer state and data streams. Deterministic given the
// config seed.
template <class T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, NanoUNet<T>& net, const DataSource<T>& data)
      : cfg_(cfg), net_(net), data_(data), eps_(net),
        adam_(net.params(), cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps),
        data_rng_(SeededRng(cfg.model.seed).derive("data")),
        noise_rng_(SeededRng(cfg.model.seed).derive("noise")) {
    const auto& u = cfg.model.unet;
    const Shape want{u.in_channels, u.resolution, u.resolution};
    if (data.image_shape() != want) {
      throw DataError("dataset images are " + shape_str(data.image_shape()) + " but the model expects " +
                      shape_str(want));
    }
    const std::size_t C = cfg.model.embed.num_classes;
    if (C && data.num_classes() != C) {
      throw ConfigError("model expects " + std::to_string(C) + " classes, dataset provides " +
                        std::to_string(data.num_classes()));
    }
    if (cfg.model.setting == Setting::Discrete) sched_.emplace(cosine_schedule(cfg.model.resolved_steps(), cfg.cosine_s));
    if (cfg.train.ema) ema_ = Ema<T>(net.params(), cfg.train.ema_decay);
  }

  std::size_t iteration() const noexcept { return iter_; }
  const Ema<T>* ema() const { return cfg_.train.ema ? &ema_ : nullptr; }
  const std::optional<DiscreteSchedule>& schedule() const { return sched_; }

  MetricsRow step() {
    auto& store = net_.params();
    store.zero_grad();
    TrainBatch<T> batch = data_.batch(data_rng_, cfg_.train.batch_size);
    if (cfg_.model.embed.num_classes == 0) batch.class_vec = Tensor<T>();
    Var<T> loss;
    try {
      loss = sched_ ? training_loss(eps_, batch, *sched_, noise_rng_)
                    : training_loss(eps_, batch, cfg_.train_sigma, noise_rng_);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(iter_ + 1) + ": " + e.what());
    }
    const double value = static_cast<double>(loss->value[0]);
    if (!std::isfinite(value)) throw NumericError("iteration " + std::to_string(iter_ + 1) + ": loss is not finite");
    backward(loss);
    loss.reset();
    double sq = 0.0;
    for (const auto& p : store.params()) {
      if (!p->has_grad()) continue;
      for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    if (!std::isfinite(sq)) throw NumericError("iteration " + std::to_string(iter_ + 1) + ": gradient is not finite");
    adam_.step(store);
    if (cfg_.train.ema) ema_.update(store);
    ++iter_;
    return MetricsRow{iter_, 0.0, value, adam_.lr(), std::sqrt(sq)};
  }

 private:
  const RunConfig& cfg_;
  NanoUNet<T>& net_;
  const DataSource<T>& data_;
  UNetEps<T> eps_;
  Adam<T> adam_;
  Ema<T> ema_;
  std::optional<DiscreteSchedule> sched_;
  SeededRng data_rng_, noise_rng_;
  std::size_t iter_ = 0;
};

struct TrainSummary {
  std::vector<MetricsRow> rows;
  fs::path checkpoint;
  fs::path metrics;
};

inline fs::path checkpoint_name(const fs::path& dir, std::size_t iteration) {
  return dir / ("ckpt_" + std::to_string(iteration) + ".ldif");
}

// Full training run into `dir`: config snapshot, periodic and final
// checkpoints, metrics CSV. The directory is locked for the duration.
template <class T>
TrainSummary train_run(const RunConfig& cfg, NanoUNet<T>& net, const DataSource<T>& data, const fs::path& dir,
                       const std::function<void(const MetricsRow&)>& on_row = {}) {
#if defined(__GLIBC__)
  // The per-step graph allocates and frees the same large buffers every
  // iteration; keep them in the heap instead of fresh mmap/munmap pairs.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  DirectoryLock lock(dir);
  const std::string cfg_text = to_text(cfg);
  write_file_atomic(dir / "config.cfg", cfg_text);
  Trainer<T> trainer(cfg, net, data);
  TrainSummary s;
  s.metrics = dir / "metrics.csv";
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < cfg.train.iterations; ++i) {
    MetricsRow row = trainer.step();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.rows.push_back(row);
    if (on_row) on_row(row);
    if (cfg.train.checkpoint_every && row.iteration % cfg.train.checkpoint_every == 0 &&
        row.iteration != cfg.train.iterations) {
      save_checkpoint(checkpoint_name(dir, row.iteration), cfg_text, row.iteration, net.params(), trainer.ema());
      write_file_atomic(s.metrics, metrics_csv(s.rows));
    }
  }
  s.checkpoint = dir / "ckpt_final.ldif";
  save_checkpoint(s.checkpoint, cfg_text, trainer.iteration(), net.params(), trainer.ema());
  write_file_atomic(s.metrics, metrics_csv(s.rows));
  return s;
}

}  // namespace ldif
