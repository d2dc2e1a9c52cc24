#include "flowids/nn/layers.hpp"

#include <cmath>

#include "flowids/errors.hpp"

namespace flowids::nn {

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kNone: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "linear" || s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "softmax") return Activation::kSoftmax;
  throw ConfigError("unknown activation '" + s + "'");
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax expects [batch, K], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) /= sum;
  }
  return out;
}

namespace {

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out,
                 Rng& rng) {
  const double lim = glorot_limit(fan_in, fan_out);
  for (double& v : t.values()) v = rng.uniform(-lim, lim);
}

void add_inplace(Tensor& acc, const Tensor& t) {
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += t[i];
}

Tensor colsum(const Tensor& t) {
  Tensor out({t.dim(1)});
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) out[j] += t.at(i, j);
  }
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor apply_activation(const Tensor& z, Activation act) {
  switch (act) {
    case Activation::kNone:
      return z;
    case Activation::kRelu: {
      Tensor y = z;
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case Activation::kSigmoid: {
      Tensor y = z;
      for (double& v : y.values()) v = sigmoid(v);
      return y;
    }
    case Activation::kSoftmax:
      return softmax(z);
  }
  return z;
}

// Gradient w.r.t. pre-activations given the gradient w.r.t. outputs.
Tensor activation_backward(const Tensor& grad_out, const Tensor& preact,
                           const Tensor& output, Activation act) {
  switch (act) {
    case Activation::kNone:
      return grad_out;
    case Activation::kRelu: {
      Tensor dz = grad_out;
      for (std::size_t i = 0; i < dz.numel(); ++i) {
        if (preact[i] <= 0.0) dz[i] = 0.0;
      }
      return dz;
    }
    case Activation::kSigmoid: {
      Tensor dz = grad_out;
      for (std::size_t i = 0; i < dz.numel(); ++i) {
        dz[i] *= output[i] * (1.0 - output[i]);
      }
      return dz;
    }
    case Activation::kSoftmax: {
      // dz = y * (g - <g, y>) row-wise.
      const std::size_t n = output.dim(0), k = output.dim(1);
      Tensor dz({n, k});
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          dot += grad_out.at(i, j) * output.at(i, j);
        }
        for (std::size_t j = 0; j < k; ++j) {
          dz.at(i, j) = output.at(i, j) * (grad_out.at(i, j) - dot);
        }
      }
      return dz;
    }
  }
  return grad_out;
}

void append_relu_signature(const Tensor& preact,
                           std::vector<std::int64_t>& sig) {
  for (std::size_t i = 0; i < preact.numel(); ++i) {
    sig.push_back(preact[i] > 0.0 ? 1 : 0);
  }
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_dim, std::size_t out_dim, Activation act, Rng& rng)
    : w_({in_dim, out_dim}),
      b_({out_dim}),
      dw_({in_dim, out_dim}),
      db_({out_dim}),
      act_(act) {
  glorot_fill(w_, in_dim, out_dim, rng);
}

Dense::Dense(Tensor w, Tensor b, Activation act)
    : w_(std::move(w)), b_(std::move(b)), act_(act) {
  dw_ = Tensor(w_.shape());
  db_ = Tensor(b_.shape());
}

Tensor Dense::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != w_.dim(0)) {
    throw ShapeError("dense input " + shape_str(x.shape()) +
                     " incompatible with weights " + shape_str(w_.shape()));
  }
  input_ = x;
  preact_ = matmul(x, w_);
  for (std::size_t i = 0; i < preact_.dim(0); ++i) {
    for (std::size_t j = 0; j < preact_.dim(1); ++j) preact_.at(i, j) += b_[j];
  }
  output_ = apply_activation(preact_, act_);
  return output_;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const Tensor dz = activation_backward(grad_out, preact_, output_, act_);
  add_inplace(dw_, matmul_transpose_a(input_, dz));
  add_inplace(db_, colsum(dz));
  return matmul_transpose_b(dz, w_);
}

void Dense::collect_params(const std::string& prefix,
                           std::vector<ParamRef>& out) {
  out.push_back({prefix + ".W", &w_, &dw_});
  out.push_back({prefix + ".b", &b_, &db_});
}

void Dense::zero_grad() {
  dw_.fill(0.0);
  db_.fill(0.0);
}

void Dense::append_kink_signature(std::vector<std::int64_t>& sig) const {
  if (act_ == Activation::kRelu) append_relu_signature(preact_, sig);
}

// --------------------------------------------------------------- Conv1D

Conv1D::Conv1D(std::size_t in_channels, std::size_t n_filters,
               std::size_t kernel_len, Activation act, Rng& rng)
    : kernels_({n_filters, kernel_len, in_channels}),
      bias_({n_filters}),
      dkernels_({n_filters, kernel_len, in_channels}),
      dbias_({n_filters}),
      act_(act) {
  if (n_filters < 1 || kernel_len < 1) {
    throw ConfigError("conv1d needs at least one filter and kernel length 1");
  }
  glorot_fill(kernels_, kernel_len * in_channels, kernel_len * n_filters, rng);
}

Conv1D::Conv1D(Tensor kernels, Tensor bias, Activation act)
    : kernels_(std::move(kernels)), bias_(std::move(bias)), act_(act) {
  dkernels_ = Tensor(kernels_.shape());
  dbias_ = Tensor(bias_.shape());
}

Tensor Conv1D::forward(const Tensor& x) {
  if (x.rank() != 3 || x.dim(2) != in_channels()) {
    throw ShapeError("conv1d input " + shape_str(x.shape()) +
                     " incompatible with kernels " +
                     shape_str(kernels_.shape()));
  }
  const std::size_t batch = x.dim(0), length = x.dim(1);
  const std::size_t klen = kernel_len(), nf = n_filters(), nc = in_channels();
  if (length < klen) {
    throw ShapeError("conv1d input length " + std::to_string(length) +
                     " shorter than kernel length " + std::to_string(klen));
  }
  const std::size_t out_len = length - klen + 1;
  input_ = x;
  preact_ = Tensor({batch, out_len, nf});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t f = 0; f < nf; ++f) {
        double acc = bias_[f];
        for (std::size_t j = 0; j < klen; ++j) {
          for (std::size_t c = 0; c < nc; ++c) {
            acc += x.at(b, t + j, c) * kernels_.at(f, j, c);
          }
        }
        preact_.at(b, t, f) = acc;
      }
    }
  }
  return apply_activation(preact_, act_);
}

Tensor Conv1D::backward(const Tensor& grad_out) {
  Tensor dz = grad_out;
  if (act_ == Activation::kRelu) {
    for (std::size_t i = 0; i < dz.numel(); ++i) {
      if (preact_[i] <= 0.0) dz[i] = 0.0;
    }
  } else if (act_ != Activation::kNone) {
    throw ConfigError("conv1d supports relu or linear activation only");
  }
  const std::size_t batch = input_.dim(0);
  const std::size_t out_len = dz.dim(1);
  const std::size_t klen = kernel_len(), nf = n_filters(), nc = in_channels();
  Tensor dx(input_.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t f = 0; f < nf; ++f) {
        const double g = dz.at(b, t, f);
        if (g == 0.0) continue;
        dbias_[f] += g;
        for (std::size_t j = 0; j < klen; ++j) {
          for (std::size_t c = 0; c < nc; ++c) {
            dkernels_.at(f, j, c) += g * input_.at(b, t + j, c);
            dx.at(b, t + j, c) += g * kernels_.at(f, j, c);
          }
        }
      }
    }
  }
  return dx;
}

void Conv1D::collect_params(const std::string& prefix,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + ".kernels", &kernels_, &dkernels_});
  out.push_back({prefix + ".bias", &bias_, &dbias_});
}

void Conv1D::zero_grad() {
  dkernels_.fill(0.0);
  dbias_.fill(0.0);
}

void Conv1D::append_kink_signature(std::vector<std::int64_t>& sig) const {
  if (act_ == Activation::kRelu) append_relu_signature(preact_, sig);
}

// ------------------------------------------------------------ MaxPool1D

MaxPool1D::MaxPool1D(int pool) : pool_(pool) {
  if (pool <= 0) {
    throw ConfigError("pool size must be positive, got " +
                      std::to_string(pool));
  }
}

Tensor MaxPool1D::forward(const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("maxpool1d expects [batch, length, channels], got " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), length = x.dim(1), nc = x.dim(2);
  const std::size_t p = static_cast<std::size_t>(pool_);
  const std::size_t out_len = length / p;
  input_shape_ = x.shape();
  argmax_.assign(batch * out_len * nc, 0);
  Tensor out({batch, out_len, nc});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t c = 0; c < nc; ++c) {
        std::size_t best = t * p;
        double best_v = x.at(b, best, c);
        for (std::size_t j = 1; j < p; ++j) {
          const double v = x.at(b, t * p + j, c);
          if (v > best_v) {
            best_v = v;
            best = t * p + j;
          }
        }
        out.at(b, t, c) = best_v;
        argmax_[(b * out_len + t) * nc + c] = best;
      }
    }
  }
  return out;
}

Tensor MaxPool1D::backward(const Tensor& grad_out) {
  Tensor dx(input_shape_);
  const std::size_t batch = grad_out.dim(0), out_len = grad_out.dim(1),
                    nc = grad_out.dim(2);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t c = 0; c < nc; ++c) {
        dx.at(b, argmax_[(b * out_len + t) * nc + c], c) +=
            grad_out.at(b, t, c);
      }
    }
  }
  return dx;
}

void MaxPool1D::append_kink_signature(std::vector<std::int64_t>& sig) const {
  for (std::size_t a : argmax_) sig.push_back(static_cast<std::int64_t>(a));
}

// -------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x) {
  input_shape_ = x.shape();
  std::size_t rest = 1;
  for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
  return Tensor({x.dim(0), rest}, x.values());
}

Tensor Flatten::backward(const Tensor& grad_out) {
  return Tensor(input_shape_, grad_out.values());
}

// -------------------------------------------------------------- LstmCell

LstmCell::LstmCell(std::size_t in_dim, std::size_t hidden, Rng& rng) {
  for (int g = 0; g < 4; ++g) {
    w_[g] = Tensor({in_dim, hidden});
    u_[g] = Tensor({hidden, hidden});
    b_[g] = Tensor({hidden});
    glorot_fill(w_[g], in_dim, hidden, rng);
    glorot_fill(u_[g], hidden, hidden, rng);
    dw_[g] = Tensor({in_dim, hidden});
    du_[g] = Tensor({hidden, hidden});
    db_[g] = Tensor({hidden});
  }
  // Forget-gate bias starts at 1 so early training does not flush state.
  b_[kGateForget].fill(1.0);
}

void LstmCell::step(const Tensor& x_t, const Tensor& h, const Tensor& c,
                    Tensor& h_out, Tensor& c_out, StepCache* cache) const {
  if (x_t.rank() != 2 || x_t.dim(1) != in_dim()) {
    throw ShapeError("lstm input " + shape_str(x_t.shape()) +
                     " incompatible with cell input width " +
                     std::to_string(in_dim()));
  }
  if (h.dim(1) != hidden() || c.dim(1) != hidden() || h.dim(0) != x_t.dim(0) ||
      c.dim(0) != x_t.dim(0)) {
    throw ShapeError("lstm state shapes " + shape_str(h.shape()) + "/" +
                     shape_str(c.shape()) + " incompatible with input " +
                     shape_str(x_t.shape()) + " and hidden size " +
                     std::to_string(hidden()));
  }
  const std::size_t batch = x_t.dim(0), hid = hidden();
  Tensor gates[4];
  for (int g = 0; g < 4; ++g) {
    gates[g] = matmul(x_t, w_[g]);
    add_inplace(gates[g], matmul(h, u_[g]));
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < hid; ++j) gates[g].at(i, j) += b_[g][j];
    }
  }
  for (double& v : gates[kGateInput].values()) v = sigmoid(v);
  for (double& v : gates[kGateForget].values()) v = sigmoid(v);
  for (double& v : gates[kGateOutput].values()) v = sigmoid(v);
  for (double& v : gates[kGateCandidate].values()) v = std::tanh(v);

  c_out = Tensor({batch, hid});
  h_out = Tensor({batch, hid});
  Tensor tanh_c({batch, hid});
  for (std::size_t i = 0; i < batch * hid; ++i) {
    c_out[i] = gates[kGateForget][i] * c[i] +
               gates[kGateInput][i] * gates[kGateCandidate][i];
    tanh_c[i] = std::tanh(c_out[i]);
    h_out[i] = gates[kGateOutput][i] * tanh_c[i];
  }
  if (cache != nullptr) {
    cache->x = x_t;
    cache->h_prev = h;
    cache->c_prev = c;
    cache->i = gates[kGateInput];
    cache->f = gates[kGateForget];
    cache->o = gates[kGateOutput];
    cache->g = gates[kGateCandidate];
    cache->c = c_out;
    cache->tanh_c = tanh_c;
  }
}

void LstmCell::backward_step(const StepCache& cache, const Tensor& dh,
                             const Tensor& dc, Tensor& dx, Tensor& dh_prev,
                             Tensor& dc_prev) {
  const std::size_t n = cache.c.numel();
  Tensor da[4];
  for (int g = 0; g < 4; ++g) da[g] = Tensor(cache.c.shape());
  dc_prev = Tensor(cache.c.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double d_o = dh[i] * cache.tanh_c[i];
    const double d_c =
        dc[i] + dh[i] * cache.o[i] * (1.0 - cache.tanh_c[i] * cache.tanh_c[i]);
    const double d_i = d_c * cache.g[i];
    const double d_f = d_c * cache.c_prev[i];
    const double d_g = d_c * cache.i[i];
    dc_prev[i] = d_c * cache.f[i];
    da[kGateInput][i] = d_i * cache.i[i] * (1.0 - cache.i[i]);
    da[kGateForget][i] = d_f * cache.f[i] * (1.0 - cache.f[i]);
    da[kGateOutput][i] = d_o * cache.o[i] * (1.0 - cache.o[i]);
    da[kGateCandidate][i] = d_g * (1.0 - cache.g[i] * cache.g[i]);
  }
  dx = Tensor(cache.x.shape());
  dh_prev = Tensor(cache.h_prev.shape());
  for (int g = 0; g < 4; ++g) {
    add_inplace(dw_[g], matmul_transpose_a(cache.x, da[g]));
    add_inplace(du_[g], matmul_transpose_a(cache.h_prev, da[g]));
    add_inplace(db_[g], colsum(da[g]));
    add_inplace(dx, matmul_transpose_b(da[g], w_[g]));
    add_inplace(dh_prev, matmul_transpose_b(da[g], u_[g]));
  }
}

void LstmCell::collect_params(const std::string& prefix,
                              std::vector<ParamRef>& out) {
  static const char* kGateNames[4] = {"i", "f", "o", "g"};
  for (int g = 0; g < 4; ++g) {
    out.push_back({prefix + ".W_" + kGateNames[g], &w_[g], &dw_[g]});
    out.push_back({prefix + ".U_" + kGateNames[g], &u_[g], &du_[g]});
    out.push_back({prefix + ".b_" + kGateNames[g], &b_[g], &db_[g]});
  }
}

void LstmCell::zero_grad() {
  for (int g = 0; g < 4; ++g) {
    dw_[g].fill(0.0);
    du_[g].fill(0.0);
    db_[g].fill(0.0);
  }
}

void lstm_cell_forward(const LstmCell& cell, const Tensor& x_t, const Tensor& h,
                       const Tensor& c, Tensor& h_out, Tensor& c_out) {
  cell.step(x_t, h, c, h_out, c_out, nullptr);
}

// ---------------------------------------------------------------- BiLstm

BiLstm::BiLstm(std::size_t in_dim, std::size_t hidden, bool return_sequences,
               Rng& rng)
    : fwd_(in_dim, hidden, rng),
      bwd_(in_dim, hidden, rng),
      return_sequences_(return_sequences) {}

namespace {

Tensor time_slice(const Tensor& seq, std::size_t t) {
  const std::size_t batch = seq.dim(0), width = seq.dim(2);
  Tensor out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < width; ++c) out.at(b, c) = seq.at(b, t, c);
  }
  return out;
}

}  // namespace

Tensor BiLstm::forward(const Tensor& x) {
  if (x.rank() != 3 || x.dim(2) != fwd_.in_dim()) {
    throw ShapeError("bilstm input " + shape_str(x.shape()) +
                     " incompatible with cell input width " +
                     std::to_string(fwd_.in_dim()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), hid = fwd_.hidden();
  if (steps == 0) {
    throw ShapeError("bilstm input has an empty sequence axis");
  }
  input_shape_ = x.shape();
  fwd_cache_.assign(steps, {});
  bwd_cache_.assign(steps, {});

  Tensor out = return_sequences_ ? Tensor({batch, steps, 2 * hid})
                                 : Tensor({batch, 2 * hid});

  for (int dir = 0; dir < 2; ++dir) {
    LstmCell& cell = dir == 0 ? fwd_ : bwd_;
    auto& caches = dir == 0 ? fwd_cache_ : bwd_cache_;
    Tensor h({batch, hid}), c({batch, hid});
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = dir == 0 ? s : steps - 1 - s;
      Tensor h_next, c_next;
      cell.step(time_slice(x, t), h, c, h_next, c_next, &caches[s]);
      h = std::move(h_next);
      c = std::move(c_next);
      if (return_sequences_) {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < hid; ++j) {
            out.at(b, t, dir * hid + j) = h.at(b, j);
          }
        }
      }
    }
    if (!return_sequences_) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < hid; ++j) {
          out.at(b, dir * hid + j) = h.at(b, j);
        }
      }
    }
  }
  return out;
}

Tensor BiLstm::backward(const Tensor& grad_out) {
  const std::size_t batch = input_shape_[0], steps = input_shape_[1],
                    hid = fwd_.hidden();
  Tensor dx(input_shape_);
  for (int dir = 0; dir < 2; ++dir) {
    LstmCell& cell = dir == 0 ? fwd_ : bwd_;
    auto& caches = dir == 0 ? fwd_cache_ : bwd_cache_;
    Tensor dh_next({batch, hid}), dc_next({batch, hid});
    for (std::size_t s = steps; s-- > 0;) {
      const std::size_t t = dir == 0 ? s : steps - 1 - s;
      Tensor dh = dh_next;
      if (return_sequences_) {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < hid; ++j) {
            dh.at(b, j) += grad_out.at(b, t, dir * hid + j);
          }
        }
      } else if (s == steps - 1) {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < hid; ++j) {
            dh.at(b, j) += grad_out.at(b, dir * hid + j);
          }
        }
      }
      Tensor dx_t, dh_prev, dc_prev;
      cell.backward_step(caches[s], dh, dc_next, dx_t, dh_prev, dc_prev);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < input_shape_[2]; ++c) {
          dx.at(b, t, c) += dx_t.at(b, c);
        }
      }
      dh_next = std::move(dh_prev);
      dc_next = std::move(dc_prev);
    }
  }
  return dx;
}

void BiLstm::collect_params(const std::string& prefix,
                            std::vector<ParamRef>& out) {
  fwd_.collect_params(prefix + ".fwd", out);
  bwd_.collect_params(prefix + ".bwd", out);
}

void BiLstm::zero_grad() {
  fwd_.zero_grad();
  bwd_.zero_grad();
}

// ------------------------------------------------------------ Sequential

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor cur = x;
  for (auto& [name, layer] : layers_) cur = layer->forward(cur);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    cur = it->second->backward(cur);
  }
  return cur;
}

std::vector<ParamRef> Sequential::params() {
  std::vector<ParamRef> out;
  for (auto& [name, layer] : layers_) layer->collect_params(name, out);
  return out;
}

void Sequential::zero_grad() {
  for (auto& [name, layer] : layers_) layer->zero_grad();
}

std::vector<std::int64_t> Sequential::kink_signature() const {
  std::vector<std::int64_t> sig;
  for (const auto& [name, layer] : layers_) layer->append_kink_signature(sig);
  return sig;
}

}  // namespace flowids::nn
