#include "orthoplate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "orthoplate/metrics.hpp"
#include "orthoplate/nn_core.hpp"

namespace orthoplate::train {

namespace {

constexpr std::size_t kEvalChunk = 4096;

double output_scale(const data::WindowedDataset& ds) {
  if (!ds.is_normalized()) return 1.0;
  const double sd = ds.norm_stats().y_std;
  return sd * sd;
}

Eigen::RowVectorXd gather_targets(const data::WindowedDataset& ds,
                                  std::span<const std::size_t> pairs) {
  Eigen::RowVectorXd y(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t b = 0; b < pairs.size(); ++b) y(static_cast<Eigen::Index>(b)) = ds.target(pairs[b]);
  return y;
}

void clip_gradient(nn::ParamStore& store, double max_norm) {
  std::span<double> g = store.grad();
  double sq = 0.0;
  for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& x : g) x *= scale;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
                     {"patience", c.patience},     {"lr", c.lr},
                     {"beta1", c.beta1},           {"beta2", c.beta2},
                     {"eps", c.eps},               {"seed", c.seed},
                     {"shuffle", c.shuffle},       {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "batch_size") c.batch_size = it->get<std::size_t>();
    else if (k == "max_epochs") c.max_epochs = it->get<std::size_t>();
    else if (k == "patience") c.patience = it->get<std::size_t>();
    else if (k == "lr") c.lr = it->get<double>();
    else if (k == "beta1") c.beta1 = it->get<double>();
    else if (k == "beta2") c.beta2 = it->get<double>();
    else if (k == "eps") c.eps = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else if (k == "shuffle") c.shuffle = it->get<bool>();
    else if (k == "clip_norm") c.clip_norm = it->get<double>();
    else throw ConfigError("unknown train key '" + k + "'");
  }
}

double mse_loss(models::Model& model, const Eigen::MatrixXd& windows,
                const Eigen::RowVectorXd& targets, bool with_grad) {
  if (targets.size() == 0) throw ConfigError("mse_loss: empty batch");
  if (windows.cols() != targets.size()) throw ConfigError("mse_loss: batch size mismatch");
  const double n = static_cast<double>(targets.size());
  const Eigen::RowVectorXd pred = with_grad ? model.forward_train(windows) : model.predict(windows);
  const Eigen::RowVectorXd resid = pred - targets;
  const double loss = resid.squaredNorm() / n;
  if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
  if (with_grad) model.backward((2.0 / n) * resid);
  return loss;
}

void write_trace_csv(const std::vector<EpochRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const EpochRecord& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> predict_range(const models::Model& model, const data::WindowedDataset& ds,
                                  std::size_t first, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t c = 0; c < count; c += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, count - c);
    const Eigen::RowVectorXd p = model.predict(ds.gather_range(first + c, len));
    for (std::size_t k = 0; k < len; ++k) {
      const double v = p(static_cast<Eigen::Index>(k));
      out[c + k] = ds.is_normalized() ? ds.norm_stats().denormalize_y(v) : v;
    }
  }
  return out;
}

double block_loss(const models::Model& model, const data::WindowedDataset& ds, data::Block block) {
  const std::size_t first = ds.block_begin(block);
  const std::size_t count = ds.block_size(block);
  if (count == 0) throw ConfigError(std::string("empty ") + data::block_name(block) + " block");
  double sse = 0.0;
  for (std::size_t c = 0; c < count; c += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, count - c);
    const Eigen::RowVectorXd p = model.predict(ds.gather_range(first + c, len));
    for (std::size_t k = 0; k < len; ++k) {
      const double r = p(static_cast<Eigen::Index>(k)) - ds.target(first + c + k);
      sse += r * r;
    }
  }
  return sse / static_cast<double>(count);
}

double block_r2(const models::Model& model, const data::WindowedDataset& ds, data::Block block) {
  const std::size_t first = ds.block_begin(block);
  const std::size_t count = ds.block_size(block);
  const std::vector<double> pred = predict_range(model, ds, first, count);
  std::vector<double> ref(count);
  for (std::size_t k = 0; k < count; ++k) ref[k] = ds.raw_target(first + k);
  return eval::r2_score(ref, pred);
}

TrainResult train(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                  const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (!ds.is_split()) throw ConfigError("train: dataset has no train/val/test split");
  if (ds.window_length() != spec.s) {
    throw ConfigError("train: model window length " + std::to_string(spec.s) +
                      " differs from dataset window length " + std::to_string(ds.window_length()));
  }
  const std::size_t n_train = ds.block_size(data::Block::kTrain);
  if (n_train == 0 || ds.block_size(data::Block::kVal) == 0) {
    throw ConfigError("train: training and validation blocks must be nonempty");
  }

  auto model = models::make_model(spec);
  nn::ParamStore& store = model->params();
  // Batch order gets its own stream, distinct from the initializer's.
  std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), ds.block_begin(data::Block::kTrain));
  const double scale = output_scale(ds);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_theta(store.theta().begin(), store.theta().end());
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double sse = 0.0;
    try {
      for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, n_train - start);
        const std::span<const std::size_t> pairs(order.data() + start, len);
        store.zero_grad();
        const double loss = mse_loss(*model, ds.gather(pairs), gather_targets(ds, pairs), true);
        sse += loss * static_cast<double>(len);
        if (cfg.clip_norm > 0.0) clip_gradient(store, cfg.clip_norm);
        nn::adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
      }
    } catch (const NumericalError& e) {
      throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) +
                                ": " + e.what(),
                            result.trace);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = scale * sse / static_cast<double>(n_train);
    rec.val_loss = scale * block_loss(*model, ds, data::Block::kVal);
    result.trace.push_back(rec);
    if (!std::isfinite(rec.val_loss)) {
      throw DivergenceError("non-finite validation loss in epoch " + std::to_string(epoch),
                            result.trace);
    }
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best_theta.assign(store.theta().begin(), store.theta().end());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  models::Checkpoint& ck = result.checkpoint;
  ck.spec = spec;
  ck.theta = std::move(best_theta);
  ck.normalized = ds.is_normalized();
  ck.norm_stats = ds.norm_stats();
  ck.train_seed = cfg.seed;
  return result;
}

RunRecord run_single(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                     const TrainConfig& cfg, std::size_t run) {
  RunRecord rec;
  rec.run = run;
  rec.seed = cfg.seed + run;
  models::ModelSpec run_spec = spec;
  run_spec.seed = rec.seed;
  TrainConfig run_cfg = cfg;
  run_cfg.seed = rec.seed;
  try {
    rec.result = train(run_spec, ds, run_cfg);
    const auto model = rec.result.checkpoint.instantiate();
    rec.train_r2 = block_r2(*model, ds, data::Block::kTrain);
    rec.test_r2 = block_r2(*model, ds, data::Block::kTest);
    if (!std::isfinite(rec.train_r2) || !std::isfinite(rec.test_r2)) {
      throw NumericalError("non-finite R^2");
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

std::vector<RunRecord> run_repeats(const models::ModelSpec& spec, const data::WindowedDataset& ds,
                                   const TrainConfig& cfg, std::size_t n_runs) {
  if (n_runs < 1) throw ConfigError("run_repeats: n_runs must be >= 1");
  std::vector<RunRecord> runs;
  runs.reserve(n_runs);
  for (std::size_t r = 0; r < n_runs; ++r) runs.push_back(run_single(spec, ds, cfg, r));
  return runs;
}

}  // namespace orthoplate::train
