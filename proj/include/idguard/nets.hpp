#pragma once

#include <optional>
#include <string>
#include <vector>

#include "idguard/config.hpp"
#include "idguard/nn.hpp"
#include "json.hpp"

namespace idguard {

// Conditional encoder-decoder editing model. The attribute label is embedded and
// concatenated at the bottleneck; output is tanh-bounded so results stay in [-1,1].
class ManipNet {
 public:
  ManipNet() = default;
  explicit ManipNet(const ModelDesc& desc);

  void init(Rng& rng);

  // Full forward pass. With a tape the pass is differentiable via backward();
  // tap_out receives the configured feature tap activations when non-null.
  Tensor manipulate(const Tensor& x, const std::vector<int>& labels, nn::Tape* tape = nullptr,
                    Tensor* tap_out = nullptr) const;

  // Backward through the most recent taped forward. tap_grad, when given, is
  // injected at the feature tap. Returns the gradient w.r.t. x. Frozen uses
  // (attacks, generator training) pass param_grads = false.
  Tensor backward(const Tensor& gy, nn::Tape& tape, const std::vector<int>& labels,
                  const Tensor* tap_grad = nullptr, bool param_grads = true);

  Tensor extract_features(const Tensor& x) const;

  std::vector<nn::Param> params();
  const ModelDesc& desc() const { return desc_; }
  int encoder_out_channels() const { return enc_out_c_; }

 private:
  ModelDesc desc_;
  nn::Sequential encoder_;
  nn::Sequential decoder_;
  nn::EmbedTable embed_;
  std::unique_ptr<nn::Conv2d> out_conv_;
  std::unique_ptr<nn::Conv2d> skip_conv_;  // learnable 1x1 input skip into the tanh
  nn::Tanh out_act_;
  int enc_out_c_ = 0;
  int dec_tap_layer_ = -1;  // decoder-side tap position
  static constexpr int kEmbedDim = 8;
};

// Plain reconstruction autoencoder used as the attackable surrogate.
class SurrogateNet {
 public:
  SurrogateNet() = default;
  SurrogateNet(int base_channels, int downsamples, int res_blocks);

  void init(Rng& rng);
  Tensor reconstruct(const Tensor& x, nn::Tape* tape = nullptr) const;
  Tensor backward(const Tensor& gy, nn::Tape& tape, bool param_grads = true);
  std::vector<nn::Param> params();

  int base_channels() const { return base_; }
  int downsamples() const { return down_; }
  int res_blocks() const { return res_; }

 private:
  int base_ = 0, down_ = 0, res_ = 0;
  nn::Sequential net_;
  std::unique_ptr<nn::Conv2d> out_conv_;
  std::unique_ptr<nn::Conv2d> skip_conv_;
  nn::Tanh out_act_;
};

// Perturbation generator: residual encoder-decoder with a bounded output
// activation scaled by epsilon, so every emitted perturbation satisfies the
// infinity-norm budget structurally.
class GeneratorNet {
 public:
  GeneratorNet() = default;
  GeneratorNet(int in_channels, double epsilon);

  void init(Rng& rng);
  Tensor forward(const Tensor& input, nn::Tape* tape = nullptr) const;
  Tensor backward(const Tensor& gy, nn::Tape& tape);
  std::vector<nn::Param> params();

  int in_channels() const { return in_c_; }
  double epsilon() const { return epsilon_; }

 private:
  int in_c_ = 0;
  double epsilon_ = 0.0;
  nn::Sequential net_;
};

// Identity embedder: conv trunk -> global pool -> linear -> L2 normalization.
class EmbedderNet {
 public:
  EmbedderNet() = default;
  EmbedderNet(int base_channels, int embed_dim);

  void init(Rng& rng);
  Tensor embed(const Tensor& x, nn::Tape* tape = nullptr) const;  // (B, D, 1, 1), unit norm
  Tensor backward(const Tensor& gy, nn::Tape& tape, bool param_grads = true);

  // Pre-normalization trunk, used by saliency.
  Tensor trunk_forward(const Tensor& x, nn::Tape* tape) const;
  Tensor trunk_backward(const Tensor& gy, nn::Tape& tape, bool param_grads = true);

  std::vector<nn::Param> params();
  int embed_dim() const { return dim_; }
  int base_channels() const { return base_; }

 private:
  int base_ = 0, dim_ = 0;
  nn::Sequential trunk_;
  nn::L2Normalize norm_;
};

// Same-architecture parameter copies (nets themselves are move-only).
ManipNet clone_manip(ManipNet& src);
GeneratorNet clone_generator(GeneratorNet& src);
EmbedderNet clone_embedder(EmbedderNet& src);

// Checkpoint helpers: params.bin next to a manifest.json describing the net.
void save_manip(const std::string& dir, ManipNet& net, const nlohmann::json& extra = {});
ManipNet load_manip(const std::string& dir);
void save_surrogate(const std::string& dir, SurrogateNet& net, const nlohmann::json& extra = {});
SurrogateNet load_surrogate(const std::string& dir);
void save_embedder(const std::string& dir, EmbedderNet& net, const nlohmann::json& extra = {});
EmbedderNet load_embedder(const std::string& dir);
void save_generator(const std::string& dir, GeneratorNet& net, const nlohmann::json& extra = {});
GeneratorNet load_generator(const std::string& dir);

}  // namespace idguard
