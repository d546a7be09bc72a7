#include "orthoplate/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "orthoplate/error.hpp"

namespace orthoplate::models {

namespace {

template <typename Bias>
Eigen::MatrixXd add_bias(Eigen::MatrixXd z, const Bias& b) {
  z.colwise() += b.col(0);
  return z;
}

// Vectorizable forms built on exp: Eigen packs exp for doubles but not tanh.
// Both saturate correctly when exp overflows to infinity.
template <typename Derived>
auto fast_sigmoid(const Eigen::ArrayBase<Derived>& x) {
  return (1.0 + (-x).exp()).inverse();
}

template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / (1.0 + (2.0 * x).exp());
}

}  // namespace

const char* family_name(Family family) {
  switch (family) {
    case Family::kLR: return "LR";
    case Family::kMLP: return "MLP";
    case Family::kGRU: return "GRU";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  std::string upper;
  for (char c : name) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (upper == "LR") return Family::kLR;
  if (upper == "MLP") return Family::kMLP;
  if (upper == "GRU") return Family::kGRU;
  throw ConfigError("unknown model family '" + name + "' (expected LR, MLP or GRU)");
}

void ModelSpec::validate() const {
  if (s < 1) throw ConfigError("ModelSpec: window length must be >= 1");
  switch (family) {
    case Family::kLR:
      if (h != 0 || !widths.empty()) throw ConfigError("ModelSpec: LR has no hidden layers");
      break;
    case Family::kMLP:
      if (h == 0) throw ConfigError("ModelSpec: MLP needs h >= 1 (use LR for h = 0)");
      if (widths.size() != h) throw ConfigError("ModelSpec: MLP needs one width per layer");
      for (std::size_t w : widths) {
        if (w != s) throw ConfigError("ModelSpec: MLP hidden widths must equal s");
      }
      break;
    case Family::kGRU:
      if (h == 0) throw ConfigError("ModelSpec: GRU needs h >= 1");
      if (widths.size() != h) throw ConfigError("ModelSpec: GRU needs one width per layer");
      for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("ModelSpec: GRU widths must be positive");
      }
      break;
  }
}

ModelSpec make_spec(Family family, std::size_t s, std::size_t h, std::size_t gru_width,
                    std::uint64_t seed) {
  ModelSpec spec;
  spec.family = family;
  spec.s = s;
  spec.h = h;
  spec.seed = seed;
  if (family == Family::kMLP) spec.widths.assign(h, s);
  if (family == Family::kGRU) spec.widths.assign(h, gru_width);
  spec.validate();
  return spec;
}

std::size_t param_count(const ModelSpec& spec) {
  spec.validate();
  const std::size_t s = spec.s;
  switch (spec.family) {
    case Family::kLR:
      return s + 1;
    case Family::kMLP:
      return spec.h * (s * s + s) + s + 1;
    case Family::kGRU: {
      std::size_t p = 0;
      std::size_t prev = 1;
      for (std::size_t n : spec.widths) {
        p += 3 * (n * n + n * prev + n);
        prev = n;
      }
      return p + prev + 1;
    }
  }
  return 0;
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"family", family_name(spec.family)},
                     {"s", spec.s},
                     {"h", spec.h},
                     {"widths", spec.widths},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  spec.family = parse_family(j.at("family").get<std::string>());
  spec.s = j.at("s").get<std::size_t>();
  spec.h = j.at("h").get<std::size_t>();
  spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
}

double Model::predict_one(std::span<const double> window) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(window.size()), 1);
  for (std::size_t j = 0; j < window.size(); ++j) x(static_cast<Eigen::Index>(j), 0) = window[j];
  return predict(x)(0);
}

void Model::check_input(const Eigen::MatrixXd& windows) const {
  if (static_cast<std::size_t>(windows.rows()) != spec_.s) {
    throw ConfigError("model input has " + std::to_string(windows.rows()) +
                      " rows, expected window length " + std::to_string(spec_.s));
  }
}

// ---------------------------------------------------------------- LR

LinearRegression::LinearRegression(ModelSpec spec) : Model(std::move(spec)) {
  spec_.validate();
  w_ = params_.add("W", 1, spec_.s);
  b_ = params_.add("b", 1, 1);
}

Eigen::RowVectorXd LinearRegression::predict(const Eigen::MatrixXd& windows) const {
  check_input(windows);
  Eigen::RowVectorXd y = params_.value(w_) * windows;
  y.array() += params_.value(b_)(0, 0);
  return y;
}

Eigen::RowVectorXd LinearRegression::forward_train(const Eigen::MatrixXd& windows) {
  input_ = windows;
  return predict(windows);
}

void LinearRegression::backward(const Eigen::RowVectorXd& d_pred) {
  params_.gradient(w_).noalias() += d_pred * input_.transpose();
  params_.gradient(b_)(0, 0) += d_pred.sum();
}

// ---------------------------------------------------------------- MLP

Mlp::Mlp(ModelSpec spec) : Model(std::move(spec)) {
  spec_.validate();
  std::size_t prev = spec_.s;
  for (std::size_t i = 0; i < spec_.h; ++i) {
    const std::size_t n = spec_.widths[i];
    weights_.push_back(params_.add("W" + std::to_string(i + 1), n, prev));
    biases_.push_back(params_.add("b" + std::to_string(i + 1), n, 1));
    prev = n;
  }
  out_w_ = params_.add("W", 1, prev);
  out_b_ = params_.add("b", 1, 1);
}

Eigen::RowVectorXd Mlp::predict(const Eigen::MatrixXd& windows) const {
  check_input(windows);
  Eigen::MatrixXd a = windows;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    Eigen::MatrixXd z = params_.value(weights_[i]) * a;
    a = nn::elu(add_bias(std::move(z), params_.value(biases_[i])));
  }
  Eigen::RowVectorXd y = params_.value(out_w_) * a;
  y.array() += params_.value(out_b_)(0, 0);
  return y;
}

Eigen::RowVectorXd Mlp::forward_train(const Eigen::MatrixXd& windows) {
  check_input(windows);
  pre_.clear();
  post_.clear();
  post_.push_back(windows);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    Eigen::MatrixXd z = params_.value(weights_[i]) * post_.back();
    pre_.push_back(add_bias(std::move(z), params_.value(biases_[i])));
    post_.push_back(nn::elu(pre_.back()));
  }
  Eigen::RowVectorXd y = params_.value(out_w_) * post_.back();
  y.array() += params_.value(out_b_)(0, 0);
  return y;
}

void Mlp::backward(const Eigen::RowVectorXd& d_pred) {
  params_.gradient(out_w_).noalias() += d_pred * post_.back().transpose();
  params_.gradient(out_b_)(0, 0) += d_pred.sum();
  Eigen::MatrixXd da = params_.value(out_w_).transpose() * d_pred;
  for (std::size_t i = weights_.size(); i-- > 0;) {
    const Eigen::MatrixXd dz = da.cwiseProduct(nn::elu_grad(pre_[i]));
    params_.gradient(weights_[i]).noalias() += dz * post_[i].transpose();
    params_.gradient(biases_[i]).col(0) += dz.rowwise().sum();
    if (i > 0) da = params_.value(weights_[i]).transpose() * dz;
  }
}

// ---------------------------------------------------------------- GRU

Gru::Gru(ModelSpec spec) : Model(std::move(spec)) {
  spec_.validate();
  std::size_t prev = 1;
  for (std::size_t i = 0; i < spec_.h; ++i) {
    const std::size_t n = spec_.widths[i];
    const std::string tag = "gru" + std::to_string(i + 1) + ".";
    LayerParams lp;
    lp.w_gates = params_.add(tag + "W_vr", 2 * n, n);
    lp.w_cand = params_.add(tag + "W_x", n, n);
    lp.v_in = params_.add(tag + "V", 3 * n, prev);
    lp.bias = params_.add(tag + "b", 3 * n, 1);
    layers_.push_back(lp);
    prev = n;
  }
  out_w_ = params_.add("W", 1, prev);
  out_b_ = params_.add("b", 1, 1);
}

void Gru::input_stream(const Eigen::MatrixXd& windows, Eigen::MatrixXd& out) {
  const Eigen::Index s = windows.rows();
  const Eigen::Index batch = windows.cols();
  out.resize(1, s * batch);
  for (Eigen::Index j = 0; j < s; ++j) {
    out.middleCols(j * batch, batch) = windows.row(s - 1 - j);
  }
}

void Gru::run_layer(std::size_t layer, const Eigen::MatrixXd& input, std::size_t batch,
                    LayerTrace& out) const {
  const LayerParams& lp = layers_[layer];
  const auto n = static_cast<Eigen::Index>(spec_.widths[layer]);
  const auto b = static_cast<Eigen::Index>(batch);
  const Eigen::Index steps = input.cols() / b;

  const Eigen::MatrixXd v_in = params_.value(lp.v_in);
  const Eigen::VectorXd bias = params_.value(lp.bias).col(0);
  const Eigen::MatrixXd w_gates = params_.value(lp.w_gates);
  const Eigen::MatrixXd w_cand = params_.value(lp.w_cand);

  out.update.resize(n, steps * b);
  out.reset.resize(n, steps * b);
  out.candidate.resize(n, steps * b);
  out.hidden.resize(n, steps * b);
  out.previous.resize(n, steps * b);

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, b);
  Eigen::MatrixXd proj(3 * n, b);
  Eigen::MatrixXd gates(2 * n, b);
  Eigen::MatrixXd gated(n, b);
  Eigen::MatrixXd cand(n, b);
  for (Eigen::Index j = 0; j < steps; ++j) {
    const Eigen::Index c0 = j * b;
    proj.noalias() = v_in * input.middleCols(c0, b);
    proj.colwise() += bias;
    gates.noalias() = w_gates * h;
    gates += proj.topRows(2 * n);
    auto v = out.update.middleCols(c0, b);
    auto r = out.reset.middleCols(c0, b);
    auto c = out.candidate.middleCols(c0, b);
    v = fast_sigmoid(gates.topRows(n).array()).matrix();
    r = fast_sigmoid(gates.bottomRows(n).array()).matrix();
    gated = h.cwiseProduct(r);
    cand.noalias() = w_cand * gated;
    cand += proj.bottomRows(n);
    c = fast_tanh(cand.array()).matrix();
    out.previous.middleCols(c0, b) = h;
    h = c + v.cwiseProduct(h - c);
    out.hidden.middleCols(c0, b) = h;
  }
}

std::vector<Gru::LayerTrace> Gru::trace(const Eigen::MatrixXd& windows) const {
  check_input(windows);
  const auto batch = static_cast<std::size_t>(windows.cols());
  std::vector<LayerTrace> traces(layers_.size());
  Eigen::MatrixXd stream;
  input_stream(windows, stream);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    run_layer(i, i == 0 ? stream : traces[i - 1].hidden, batch, traces[i]);
  }
  return traces;
}

Eigen::RowVectorXd Gru::predict(const Eigen::MatrixXd& windows) const {
  check_input(windows);
  // Inference keeps only the running state of each layer; storing the
  // full trace of a large evaluation batch costs gigabytes at s = 100.
  const Eigen::Index b = windows.cols();
  const Eigen::Index s = windows.rows();
  const std::size_t depth = layers_.size();
  std::vector<Eigen::MatrixXd> h(depth), v_in(depth), w_gates(depth), w_cand(depth);
  std::vector<Eigen::VectorXd> bias(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    const auto n = static_cast<Eigen::Index>(spec_.widths[i]);
    h[i] = Eigen::MatrixXd::Zero(n, b);
    v_in[i] = params_.value(layers_[i].v_in);
    w_gates[i] = params_.value(layers_[i].w_gates);
    w_cand[i] = params_.value(layers_[i].w_cand);
    bias[i] = params_.value(layers_[i].bias).col(0);
  }
  Eigen::MatrixXd x(1, b), proj, gates, upd, gated, cand, c;
  for (Eigen::Index j = 0; j < s; ++j) {
    x = windows.row(s - 1 - j);
    for (std::size_t i = 0; i < depth; ++i) {
      const auto n = static_cast<Eigen::Index>(spec_.widths[i]);
      proj.noalias() = v_in[i] * (i == 0 ? x : h[i - 1]);
      proj.colwise() += bias[i];
      gates.noalias() = w_gates[i] * h[i];
      gates += proj.topRows(2 * n);
      upd = fast_sigmoid(gates.topRows(n).array()).matrix();
      gated = h[i].cwiseProduct(fast_sigmoid(gates.bottomRows(n).array()).matrix());
      cand.noalias() = w_cand[i] * gated;
      cand += proj.bottomRows(n);
      c = fast_tanh(cand.array()).matrix();
      h[i] = c + upd.cwiseProduct(h[i] - c);
    }
  }
  Eigen::RowVectorXd y = params_.value(out_w_) * h.back();
  y.array() += params_.value(out_b_)(0, 0);
  return y;
}

Eigen::RowVectorXd Gru::forward_train(const Eigen::MatrixXd& windows) {
  check_input(windows);
  batch_ = static_cast<std::size_t>(windows.cols());
  cache_.resize(layers_.size());
  input_stream(windows, stream_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    run_layer(i, layer_input(i), batch_, cache_[i]);
  }
  const auto b = static_cast<Eigen::Index>(batch_);
  Eigen::RowVectorXd y = params_.value(out_w_) * cache_.back().hidden.rightCols(b);
  y.array() += params_.value(out_b_)(0, 0);
  return y;
}

void Gru::backward(const Eigen::RowVectorXd& d_pred) {
  const auto b = static_cast<Eigen::Index>(batch_);
  const auto steps = static_cast<Eigen::Index>(spec_.s);
  params_.gradient(out_w_).noalias() += d_pred * cache_.back().hidden.rightCols(b).transpose();
  params_.gradient(out_b_)(0, 0) += d_pred.sum();

  // Gradient w.r.t. every hidden output of the current layer.
  const auto top_n = static_cast<Eigen::Index>(spec_.widths.back());
  Eigen::MatrixXd& d_out = d_out_;
  d_out.setZero(top_n, steps * b);
  d_out.rightCols(b) = params_.value(out_w_).transpose() * d_pred;

  for (std::size_t layer = layers_.size(); layer-- > 0;) {
    const LayerParams& lp = layers_[layer];
    const LayerTrace& tr = cache_[layer];
    const Eigen::MatrixXd& input = layer_input(layer);
    const auto n = static_cast<Eigen::Index>(spec_.widths[layer]);
    const auto n_in = input.rows();
    const Eigen::MatrixXd w_gates_t = params_.value(lp.w_gates).transpose();
    const Eigen::MatrixXd w_cand_t = params_.value(lp.w_cand).transpose();
    const Eigen::MatrixXd v_in_t = params_.value(lp.v_in).transpose();

    // Weight gradients are accumulated step by step while the operands are
    // still in cache; whole-sequence products are memory bound.
    Eigen::MatrixXd g_gates = Eigen::MatrixXd::Zero(2 * n, n);
    Eigen::MatrixXd g_cand = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd g_in = Eigen::MatrixXd::Zero(3 * n, n_in);
    Eigen::VectorXd g_bias = Eigen::VectorXd::Zero(3 * n);
    Eigen::MatrixXd& d_pre = d_pre_;  // pre-activation grads of one step
    Eigen::MatrixXd& gated = gated_prev_;
    d_pre.resize(3 * n, b);
    gated.resize(n, b);
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(n, b);
    Eigen::MatrixXd d_gated(n, b);
    // Gradient for the layer below, filled while walking back in time.
    Eigen::MatrixXd& d_below = d_below_;
    if (layer > 0) d_below.resize(n_in, steps * b);

    for (Eigen::Index j = steps; j-- > 0;) {
      const Eigen::Index c0 = j * b;
      dh += d_out.middleCols(c0, b);
      const auto v = tr.update.middleCols(c0, b).array();
      const auto r = tr.reset.middleCols(c0, b).array();
      const auto c = tr.candidate.middleCols(c0, b).array();
      const auto hp = tr.previous.middleCols(c0, b);
      auto d_upd = d_pre.topRows(n).array();
      auto d_rst = d_pre.middleRows(n, n).array();
      auto d_cand = d_pre.bottomRows(n).array();
      const auto dha = dh.array();

      d_cand = dha * (1.0 - v) * (1.0 - c * c);
      d_upd = dha * (hp.array() - c) * v * (1.0 - v);
      d_gated.noalias() = w_cand_t * d_pre.bottomRows(n);
      d_rst = d_gated.array() * hp.array() * r * (1.0 - r);
      gated = (hp.array() * r).matrix();

      g_gates.noalias() += d_pre.topRows(2 * n) * hp.transpose();
      g_cand.noalias() += d_pre.bottomRows(n) * gated.transpose();
      g_in.noalias() += d_pre * input.middleCols(c0, b).transpose();
      g_bias += d_pre.rowwise().sum();
      if (layer > 0) d_below.middleCols(c0, b).noalias() = v_in_t * d_pre;

      // dh becomes the gradient w.r.t. x_{j-1}.
      dh = (dha * v + d_gated.array() * r).matrix();
      dh.noalias() += w_gates_t * d_pre.topRows(2 * n);
    }
    params_.gradient(lp.w_gates) += g_gates;
    params_.gradient(lp.w_cand) += g_cand;
    params_.gradient(lp.v_in) += g_in;
    params_.gradient(lp.bias).col(0) += g_bias;
    if (layer > 0) d_out.swap(d_below);
  }
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  spec.validate();
  std::unique_ptr<Model> model;
  std::mt19937_64 rng(spec.seed);
  switch (spec.family) {
    case Family::kLR: {
      auto lr = std::make_unique<LinearRegression>(spec);
      nn::glorot_uniform(lr->params().value(0), rng);
      model = std::move(lr);
      break;
    }
    case Family::kMLP: {
      auto mlp = std::make_unique<Mlp>(spec);
      auto& p = mlp->params();
      for (std::size_t i = 0; i < p.views().size(); ++i) {
        if (p.view(i).cols > 1 || p.view(i).name == "W") nn::glorot_uniform(p.value(i), rng);
      }
      model = std::move(mlp);
      break;
    }
    case Family::kGRU: {
      auto gru = std::make_unique<Gru>(spec);
      auto& p = gru->params();
      for (std::size_t i = 0; i < gru->layer_params().size(); ++i) {
        const Gru::LayerParams& lp = gru->layer_params()[i];
        const auto n = static_cast<Eigen::Index>(spec.widths[i]);
        auto wg = p.value(lp.w_gates);
        nn::RowMatrix block(n, n);
        for (Eigen::Index g = 0; g < 2; ++g) {
          nn::orthogonal(nn::MatrixMap(block.data(), n, n), rng);
          wg.middleRows(g * n, n) = block;
        }
        nn::orthogonal(p.value(lp.w_cand), rng);
        auto vin = p.value(lp.v_in);
        for (Eigen::Index g = 0; g < 3; ++g) {
          nn::RowMatrix part(n, vin.cols());
          nn::glorot_uniform(nn::MatrixMap(part.data(), n, vin.cols()), rng);
          vin.middleRows(g * n, n) = part;
        }
        // Update-gate bias starts at 1 so early steps lean on memory.
        p.value(lp.bias).topRows(n).setOnes();
      }
      nn::glorot_uniform(p.value(p.views().size() - 2), rng);
      model = std::move(gru);
      break;
    }
  }
  return model;
}

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::span<const double> theta) {
  auto model = make_model(spec);
  model->params().set_theta(theta);
  return model;
}

double lr_forward(std::span<const double> w, double b, std::span<const double> window) {
  if (w.size() != window.size()) throw ConfigError("lr_forward: dimension mismatch");
  double acc = b;
  for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * window[j];
  return acc;
}

LinearFit lr_fit_closed_form(const data::WindowedDataset& ds, data::Block block) {
  const std::size_t s = ds.window_length();
  const std::size_t first = ds.is_split() ? ds.block_begin(block) : 0;
  const std::size_t count = ds.is_split() ? ds.block_size(block) : ds.num_pairs();
  if (count < s + 1) throw ConfigError("lr_fit_closed_form: need at least s + 1 rows");

  const auto si = static_cast<Eigen::Index>(s);
  constexpr std::size_t kChunk = 4096;
  Eigen::VectorXd mean_x = Eigen::VectorXd::Zero(si);
  double mean_y = 0.0;
  for (std::size_t c = 0; c < count; c += kChunk) {
    const std::size_t len = std::min(kChunk, count - c);
    mean_x += ds.gather_range(first + c, len).rowwise().sum();
    for (std::size_t k = 0; k < len; ++k) mean_y += ds.target(first + c + k);
  }
  mean_x /= static_cast<double>(count);
  mean_y /= static_cast<double>(count);

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(si, si);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(si);
  for (std::size_t c = 0; c < count; c += kChunk) {
    const std::size_t len = std::min(kChunk, count - c);
    Eigen::MatrixXd x = ds.gather_range(first + c, len);
    x.colwise() -= mean_x;
    Eigen::VectorXd y(static_cast<Eigen::Index>(len));
    for (std::size_t k = 0; k < len; ++k) y(static_cast<Eigen::Index>(k)) = ds.target(first + c + k) - mean_y;
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    rhs.noalias() += x * y;
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  LinearFit fit;
  fit.w.assign(s, 0.0);
  const double trace = gram.trace();
  if (trace > 0) {
    gram.diagonal().array() += 1e-10 * trace;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw NumericalError("lr_fit_closed_form: factorization failed");
    const Eigen::VectorXd w = ldlt.solve(rhs);
    if (!w.allFinite()) throw NumericalError("lr_fit_closed_form: rank deficiency");
    for (Eigen::Index j = 0; j < si; ++j) fit.w[static_cast<std::size_t>(j)] = w(j);
    fit.b = mean_y - w.dot(mean_x);
  } else {
    fit.b = mean_y;
  }
  return fit;
}

}  // namespace orthoplate::models
