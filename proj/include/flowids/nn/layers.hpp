#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flowids/rng.hpp"
#include "flowids/tensor.hpp"

namespace flowids::nn {

enum class Activation { kNone, kRelu, kSigmoid, kSoftmax };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& s);

// Numerically stable row-wise softmax (max subtraction before exp).
Tensor softmax(const Tensor& logits);

// Named view into a parameter tensor and its gradient accumulator.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// A differentiable layer. forward() caches whatever backward() needs;
// backward() consumes the cache of the most recent forward, accumulates
// parameter gradients and returns the gradient w.r.t. the layer input.
//
// The kink signature captures the discrete state of the last forward pass
// (ReLU sign pattern, pool argmax choices). The gradient checker compares
// signatures of the two perturbed evaluations and skips coordinates whose
// perturbation crosses a kink, where central differences are invalid.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string& prefix,
                              std::vector<ParamRef>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void zero_grad() {}
  virtual void append_kink_signature(std::vector<std::int64_t>& sig) const {
    (void)sig;
  }
};

// Fully connected layer: y = act(x W + b), W is [in, out].
class Dense : public Layer {
 public:
  Dense(std::size_t in_dim, std::size_t out_dim, Activation act, Rng& rng);
  Dense(Tensor w, Tensor b, Activation act);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void zero_grad() override;
  void append_kink_signature(std::vector<std::int64_t>& sig) const override;

  std::size_t in_dim() const { return w_.dim(0); }
  std::size_t out_dim() const { return w_.dim(1); }
  Activation activation() const { return act_; }
  Tensor& weights() { return w_; }
  Tensor& bias() { return b_; }

 private:
  Tensor w_, b_;
  Tensor dw_, db_;
  Activation act_;
  Tensor input_, preact_, output_;
};

// 1-D convolution over [batch, length, channels], valid padding, stride 1.
// Kernels are [filters, kernel_len, channels].
class Conv1D : public Layer {
 public:
  Conv1D(std::size_t in_channels, std::size_t n_filters,
         std::size_t kernel_len, Activation act, Rng& rng);
  Conv1D(Tensor kernels, Tensor bias, Activation act);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void zero_grad() override;
  void append_kink_signature(std::vector<std::int64_t>& sig) const override;

  std::size_t n_filters() const { return kernels_.dim(0); }
  std::size_t kernel_len() const { return kernels_.dim(1); }
  std::size_t in_channels() const { return kernels_.dim(2); }

 private:
  Tensor kernels_, bias_;
  Tensor dkernels_, dbias_;
  Activation act_;
  Tensor input_, preact_;
};

// Non-overlapping max pooling over the time axis of [batch, length,
// channels]; a trailing remainder of length mod pool is dropped.
class MaxPool1D : public Layer {
 public:
  explicit MaxPool1D(int pool);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void append_kink_signature(std::vector<std::int64_t>& sig) const override;

  int pool() const { return pool_; }

 private:
  int pool_;
  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> argmax_;  // winning time index per output element
};

// [batch, d0, d1, ...] -> [batch, d0*d1*...]
class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<std::size_t> input_shape_;
};

// Gate order used throughout LSTM parameter blocks.
enum LstmGate { kGateInput = 0, kGateForget, kGateOutput, kGateCandidate };

// One LSTM cell: four gates, each with input weights W [in, hid], recurrent
// weights U [hid, hid] and bias b [hid]. Forget-gate bias starts at 1.
class LstmCell {
 public:
  LstmCell(std::size_t in_dim, std::size_t hidden, Rng& rng);

  struct StepCache {
    Tensor x, h_prev, c_prev;
    Tensor i, f, o, g;  // post-nonlinearity gate values
    Tensor c, tanh_c;
  };

  // h'/c' out of x_t[batch,in], h[batch,hid], c[batch,hid].
  void step(const Tensor& x_t, const Tensor& h, const Tensor& c, Tensor& h_out,
            Tensor& c_out, StepCache* cache) const;

  // Backprop one step: dh/dc are gradients w.r.t. this step's outputs.
  // Accumulates parameter gradients; fills gradients w.r.t. inputs and the
  // previous state.
  void backward_step(const StepCache& cache, const Tensor& dh, const Tensor& dc,
                     Tensor& dx, Tensor& dh_prev, Tensor& dc_prev);

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  void zero_grad();

  std::size_t in_dim() const { return w_[0].dim(0); }
  std::size_t hidden() const { return w_[0].dim(1); }

 private:
  Tensor w_[4], u_[4], b_[4];
  Tensor dw_[4], du_[4], db_[4];
};

// Convenience wrapper matching the single-step contract (weights shared with
// the cell object; used directly in tests).
void lstm_cell_forward(const LstmCell& cell, const Tensor& x_t, const Tensor& h,
                       const Tensor& c, Tensor& h_out, Tensor& c_out);

// Bidirectional LSTM over [batch, T, in]. Forward cell runs left to right,
// backward cell right to left, both from zero state. With return_sequences
// the output is [batch, T, 2*hidden], forward half first at every step;
// otherwise [batch, 2*hidden] (last forward state, then the backward state
// at t=0).
class BiLstm : public Layer {
 public:
  BiLstm(std::size_t in_dim, std::size_t hidden, bool return_sequences,
         Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override;
  void zero_grad() override;

  std::size_t hidden() const { return fwd_.hidden(); }
  bool return_sequences() const { return return_sequences_; }

 private:
  LstmCell fwd_, bwd_;
  bool return_sequences_;
  std::vector<LstmCell::StepCache> fwd_cache_, bwd_cache_;
  std::vector<std::size_t> input_shape_;
};

// Ordered chain of layers with stable names for checkpointing.
class Sequential {
 public:
  void add(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  std::vector<ParamRef> params();
  void zero_grad();
  std::vector<std::int64_t> kink_signature() const;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i].second; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

}  // namespace flowids::nn
