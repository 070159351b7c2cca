#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "idguard/rng.hpp"
#include "idguard/tensor.hpp"

namespace idguard::nn {

// Activation stack recorded during a forward pass and read back (LIFO) by the
// matching backward pass. Pops move a cursor instead of destroying entries, so
// rewind() allows several backward passes over one forward (per-task gradients).
// Passing a null tape runs pure inference.
class Tape {
 public:
  void push(Tensor t) {
    stack_.push_back(std::move(t));
    cursor_ = stack_.size();
  }
  const Tensor& pop();
  void rewind() { cursor_ = stack_.size(); }
  bool fully_consumed() const { return cursor_ == 0; }
  size_t size() const { return stack_.size(); }
  void clear() {
    stack_.clear();
    cursor_ = 0;
  }

 private:
  std::vector<Tensor> stack_;
  size_t cursor_ = 0;
};

struct Param {
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  std::string name;
};

// Layers take tensors by value: callers move activations through the chain and
// layers move cached values onto the tape, which keeps the memory traffic low.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(Tensor x, Tape* tape) const = 0;
  // Returns the input gradient; accumulates parameter gradients unless
  // param_grads is false (frozen nets skip that work entirely).
  virtual Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) = 0;
  virtual void params(std::vector<Param>& out, const std::string& prefix) {}
  virtual void init(Rng& rng) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_c, int out_c, int ksize, int stride, int pad);
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
  void params(std::vector<Param>& out, const std::string& prefix) override;
  void init(Rng& rng) override;
  // gain * identity channel map; used for learnable input skips.
  void init_identity(Scalar gain);

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  Tensor w_, b_, gw_, gb_;
};

class Linear : public Layer {
 public:
  Linear(int in_dim, int out_dim);
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
  void params(std::vector<Param>& out, const std::string& prefix) override;
  void init(Rng& rng) override;

 private:
  int in_, out_;
  Tensor w_, b_, gw_, gb_;
};

class ReLU : public Layer {
 public:
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(Scalar slope = 0.2) : slope_(slope) {}
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;

 private:
  Scalar slope_;
};

class Tanh : public Layer {
 public:
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
};

// scale * tanh(x); the structural bound for perturbation outputs.
class ScaledTanh : public Layer {
 public:
  explicit ScaledTanh(Scalar scale) : scale_(scale) {}
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;

 private:
  Scalar scale_;
};

class UpsampleNearest2x : public Layer {
 public:
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
};

class InstanceNorm : public Layer {
 public:
  explicit InstanceNorm(int channels, Scalar eps = 1e-5);
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
  void params(std::vector<Param>& out, const std::string& prefix) override;
  void init(Rng& rng) override;

 private:
  int c_;
  Scalar eps_;
  Tensor gamma_, beta_, ggamma_, gbeta_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
};

// Per-sample L2 normalization over all non-batch dims.
class L2Normalize : public Layer {
 public:
  explicit L2Normalize(Scalar eps = 1e-12) : eps_(eps) {}
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;

 private:
  Scalar eps_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  int layer_count() const { return static_cast<int>(layers_.size()); }

  Tensor forward(Tensor x, Tape* tape) const override {
    return forward_tap(std::move(x), tape, -1, nullptr);
  }
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override {
    return backward_inject(std::move(gy), tape, -1, nullptr, param_grads);
  }

  // tap_layer: copies the output of that layer into *tap_out on the way through.
  Tensor forward_tap(Tensor x, Tape* tape, int tap_layer, Tensor* tap_out) const;
  // inject_layer: adds *inject to the gradient flowing out of that layer.
  Tensor backward_inject(Tensor gy, Tape& tape, int inject_layer, const Tensor* inject,
                         bool param_grads = true);

  void params(std::vector<Param>& out, const std::string& prefix) override;
  void init(Rng& rng) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// x + body(x) with a conv-norm-relu-conv-norm body.
class ResBlock : public Layer {
 public:
  ResBlock(int channels, bool instance_norm);
  Tensor forward(Tensor x, Tape* tape) const override;
  Tensor backward(Tensor gy, Tape& tape, bool param_grads = true) override;
  void params(std::vector<Param>& out, const std::string& prefix) override;
  void init(Rng& rng) override;

 private:
  Sequential body_;
};

// Learnable per-label embedding rows, looked up outside the Layer interface.
class EmbedTable {
 public:
  EmbedTable() = default;
  EmbedTable(int num_labels, int dim);
  Tensor lookup(const std::vector<int>& labels) const;  // (B, dim, 1, 1)
  void acc_grad(const std::vector<int>& labels, const Tensor& g);
  void params(std::vector<Param>& out, const std::string& prefix);
  void init(Rng& rng);
  int dim() const { return dim_; }

 private:
  int num_ = 0, dim_ = 0;
  Tensor w_, gw_;
};

// Parameter plumbing shared by optimizers, checkpoints and MGDA.
void zero_grads(std::vector<Param>& ps);
std::int64_t param_numel(const std::vector<Param>& ps);
std::vector<Scalar> flatten_values(const std::vector<Param>& ps);
std::vector<Scalar> flatten_grads(const std::vector<Param>& ps);
void assign_values(std::vector<Param>& ps, const std::vector<Scalar>& flat);

void save_params(const std::string& path, const std::vector<Param>& ps);
void load_params(const std::string& path, std::vector<Param>& ps);

class Adam {
 public:
  Adam() = default;
  Adam(Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8, bool maximize = false);

  void attach(const std::vector<Param>& ps);  // allocates moment buffers
  void step(std::vector<Param>& ps);
  void set_lr(Scalar lr) { lr_ = lr; }
  Scalar lr() const { return lr_; }

  void serialize(std::ostream& os) const;
  void deserialize(std::istream& is);

 private:
  Scalar lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  bool maximize_ = false;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Mean squared error over all elements; fills grad w.r.t. pred when given.
Scalar mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);

// Static-stride parallel loop over [0, n); tasks must be independent. Results
// stay deterministic because callers reduce in fixed index order afterwards.
void parallel_for(int n, int max_threads, const std::function<void(int)>& fn);

}  // namespace idguard::nn
