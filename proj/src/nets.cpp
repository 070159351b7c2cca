#include "idguard/nets.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace idguard {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Sequential;

namespace {

int channels_at(int base, int depth) { return std::min(base << depth, base * 2); }

void write_manifest(const std::string& dir, json manifest) {
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

json read_manifest(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("missing manifest.json in " + dir);
  return json::parse(is);
}

}  // namespace

ManipNet::ManipNet(const ModelDesc& desc) : desc_(desc), embed_(desc.attribute_arity, kEmbedDim) {
  const int base = desc.base_channels;
  encoder_.add<nn::Conv2d>(3, base, 3, 1, 1);
  encoder_.add<nn::ReLU>();
  int ch = base;
  for (int d = 0; d < desc.downsamples; ++d) {
    const int next = channels_at(base, d + 1);
    encoder_.add<nn::Conv2d>(ch, next, 3, 2, 1);
    if (desc.instance_norm) encoder_.add<nn::InstanceNorm>(next);
    encoder_.add<nn::ReLU>();
    ch = next;
  }
  enc_out_c_ = ch;

  decoder_.add<nn::Conv2d>(ch + kEmbedDim, ch, 3, 1, 1);
  if (desc.instance_norm) decoder_.add<nn::InstanceNorm>(ch);
  decoder_.add<nn::ReLU>();
  for (int r = 0; r < desc.res_blocks; ++r) decoder_.add<nn::ResBlock>(ch, desc.instance_norm);
  for (int d = desc.downsamples; d >= 1; --d) {
    const int next = channels_at(base, d - 1);
    decoder_.add<nn::UpsampleNearest2x>();
    decoder_.add<nn::Conv2d>(ch, next, 3, 1, 1);
    if (desc.instance_norm) decoder_.add<nn::InstanceNorm>(next);
    decoder_.add<nn::ReLU>();
    ch = next;
  }
  dec_tap_layer_ = decoder_.layer_count() - 1;  // activation after the last upsampling stage
  out_conv_ = std::make_unique<nn::Conv2d>(ch, 3, 3, 1, 1);
  skip_conv_ = std::make_unique<nn::Conv2d>(3, 3, 1, 1, 0);
}

void ManipNet::init(Rng& rng) {
  encoder_.init(rng);
  decoder_.init(rng);
  embed_.init(rng);
  out_conv_->init(rng);
  skip_conv_->init_identity(2.0);
}

Tensor ManipNet::manipulate(const Tensor& x, const std::vector<int>& labels, nn::Tape* tape,
                            Tensor* tap_out) const {
  if (static_cast<int>(labels.size()) != x.shape().b)
    throw std::invalid_argument("manipulate: labels size must match batch");
  for (int lab : labels)
    if (lab < 0 || lab >= desc_.attribute_arity)
      throw std::invalid_argument("manipulate: attribute out of range");
  const bool enc_tap = desc_.feature_tap == "encoder";
  Tensor f = encoder_.forward(x, tape);
  if (enc_tap && tap_out) *tap_out = f;
  Tensor e = embed_.lookup(labels);
  Tensor eb(f.shape().b, kEmbedDim, f.shape().h, f.shape().w);
  for (int b = 0; b < f.shape().b; ++b)
    for (int c = 0; c < kEmbedDim; ++c) {
      const Scalar v = e.at(b, c, 0, 0);
      Scalar* p = eb.plane(b, c);
      std::fill(p, p + static_cast<std::int64_t>(f.shape().h) * f.shape().w, v);
    }
  Tensor z = concat_channels(f, eb);
  Tensor d = decoder_.forward_tap(std::move(z), tape, enc_tap ? -1 : dec_tap_layer_,
                                  enc_tap ? nullptr : tap_out);
  Tensor pre = out_conv_->forward(std::move(d), tape);
  pre += skip_conv_->forward(x, tape);
  return out_act_.forward(std::move(pre), tape);
}

Tensor ManipNet::backward(const Tensor& gy, nn::Tape& tape, const std::vector<int>& labels,
                          const Tensor* tap_grad, bool param_grads) {
  const bool enc_tap = desc_.feature_tap == "encoder";
  Tensor gpre = out_act_.backward(gy, tape);
  Tensor gx_skip = skip_conv_->backward(gpre, tape, param_grads);
  Tensor gz = decoder_.backward_inject(out_conv_->backward(std::move(gpre), tape, param_grads),
                                       tape, enc_tap ? -1 : dec_tap_layer_,
                                       enc_tap ? nullptr : tap_grad, param_grads);
  Tensor gf, ge;
  split_channels(gz, enc_out_c_, gf, ge);
  // Spatial broadcast transposes to a spatial sum per (sample, channel).
  Tensor ge_sum(ge.shape().b, kEmbedDim, 1, 1);
  const std::int64_t n = static_cast<std::int64_t>(ge.shape().h) * ge.shape().w;
  for (int b = 0; b < ge.shape().b; ++b)
    for (int c = 0; c < kEmbedDim; ++c) {
      const Scalar* p = ge.plane(b, c);
      Scalar s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) s += p[i];
      ge_sum.at(b, c, 0, 0) = s;
    }
  if (param_grads) embed_.acc_grad(labels, ge_sum);
  if (enc_tap && tap_grad) gf += *tap_grad;
  Tensor gx = encoder_.backward_inject(std::move(gf), tape, -1, nullptr, param_grads);
  gx += gx_skip;
  return gx;
}

Tensor ManipNet::extract_features(const Tensor& x) const {
  if (desc_.feature_tap == "encoder") return encoder_.forward(x, nullptr);
  Tensor tap;
  std::vector<int> labels(static_cast<size_t>(x.shape().b), 0);
  manipulate(x, labels, nullptr, &tap);
  return tap;
}

std::vector<nn::Param> ManipNet::params() {
  std::vector<nn::Param> ps;
  encoder_.params(ps, "enc");
  decoder_.params(ps, "dec");
  out_conv_->params(ps, "out");
  skip_conv_->params(ps, "skip");
  embed_.params(ps, "attr");
  return ps;
}

SurrogateNet::SurrogateNet(int base_channels, int downsamples, int res_blocks)
    : base_(base_channels), down_(downsamples), res_(res_blocks) {
  net_.add<nn::Conv2d>(3, base_, 3, 1, 1);
  net_.add<nn::ReLU>();
  int ch = base_;
  for (int d = 0; d < down_; ++d) {
    const int next = channels_at(base_, d + 1);
    net_.add<nn::Conv2d>(ch, next, 3, 2, 1);
    net_.add<nn::ReLU>();
    ch = next;
  }
  for (int r = 0; r < res_; ++r) net_.add<nn::ResBlock>(ch, false);
  for (int d = down_; d >= 1; --d) {
    const int next = channels_at(base_, d - 1);
    net_.add<nn::UpsampleNearest2x>();
    net_.add<nn::Conv2d>(ch, next, 3, 1, 1);
    net_.add<nn::ReLU>();
    ch = next;
  }
  out_conv_ = std::make_unique<nn::Conv2d>(ch, 3, 3, 1, 1);
  skip_conv_ = std::make_unique<nn::Conv2d>(3, 3, 1, 1, 0);
}

void SurrogateNet::init(Rng& rng) {
  net_.init(rng);
  out_conv_->init(rng);
  skip_conv_->init_identity(2.0);
}

Tensor SurrogateNet::reconstruct(const Tensor& x, nn::Tape* tape) const {
  Tensor d = net_.forward(x, tape);
  Tensor pre = out_conv_->forward(std::move(d), tape);
  pre += skip_conv_->forward(x, tape);
  return out_act_.forward(std::move(pre), tape);
}

Tensor SurrogateNet::backward(const Tensor& gy, nn::Tape& tape, bool param_grads) {
  Tensor gpre = out_act_.backward(gy, tape);
  Tensor gx_skip = skip_conv_->backward(gpre, tape, param_grads);
  Tensor gx = net_.backward_inject(out_conv_->backward(std::move(gpre), tape, param_grads), tape,
                                   -1, nullptr, param_grads);
  gx += gx_skip;
  return gx;
}

std::vector<nn::Param> SurrogateNet::params() {
  std::vector<nn::Param> ps;
  net_.params(ps, "sur");
  out_conv_->params(ps, "out");
  skip_conv_->params(ps, "skip");
  return ps;
}

GeneratorNet::GeneratorNet(int in_channels, double epsilon) : in_c_(in_channels), epsilon_(epsilon) {
  net_.add<nn::Conv2d>(in_c_, 12, 3, 1, 1);
  net_.add<nn::ReLU>();
  net_.add<nn::Conv2d>(12, 20, 3, 2, 1);
  net_.add<nn::ReLU>();
  net_.add<nn::Conv2d>(20, 28, 3, 2, 1);
  net_.add<nn::ReLU>();
  for (int r = 0; r < 3; ++r) net_.add<nn::ResBlock>(28, false);
  net_.add<nn::UpsampleNearest2x>();
  net_.add<nn::Conv2d>(28, 20, 3, 1, 1);
  net_.add<nn::ReLU>();
  net_.add<nn::UpsampleNearest2x>();
  net_.add<nn::Conv2d>(20, 12, 3, 1, 1);
  net_.add<nn::ReLU>();
  net_.add<nn::Conv2d>(12, 3, 3, 1, 1);
  net_.add<nn::ScaledTanh>(epsilon_);
}

void GeneratorNet::init(Rng& rng) { net_.init(rng); }

Tensor GeneratorNet::forward(const Tensor& input, nn::Tape* tape) const {
  if (input.shape().c != in_c_)
    throw std::invalid_argument("GeneratorNet: expected " + std::to_string(in_c_) + " input channels");
  return net_.forward(input, tape);
}

Tensor GeneratorNet::backward(const Tensor& gy, nn::Tape& tape) { return net_.backward(gy, tape); }

std::vector<nn::Param> GeneratorNet::params() {
  std::vector<nn::Param> ps;
  net_.params(ps, "gen");
  return ps;
}

EmbedderNet::EmbedderNet(int base_channels, int embed_dim) : base_(base_channels), dim_(embed_dim) {
  trunk_.add<nn::Conv2d>(3, base_, 3, 2, 1);
  trunk_.add<nn::ReLU>();
  trunk_.add<nn::Conv2d>(base_, base_ * 2, 3, 2, 1);
  trunk_.add<nn::ReLU>();
  trunk_.add<nn::Conv2d>(base_ * 2, base_ * 4, 3, 2, 1);
  trunk_.add<nn::ReLU>();
  trunk_.add<nn::GlobalAvgPool>();
  trunk_.add<nn::Linear>(base_ * 4, dim_);
}

void EmbedderNet::init(Rng& rng) { trunk_.init(rng); }

Tensor EmbedderNet::trunk_forward(const Tensor& x, nn::Tape* tape) const {
  return trunk_.forward(x, tape);
}

Tensor EmbedderNet::trunk_backward(const Tensor& gy, nn::Tape& tape, bool param_grads) {
  return trunk_.backward_inject(gy, tape, -1, nullptr, param_grads);
}

Tensor EmbedderNet::embed(const Tensor& x, nn::Tape* tape) const {
  return norm_.forward(trunk_.forward(x, tape), tape);
}

Tensor EmbedderNet::backward(const Tensor& gy, nn::Tape& tape, bool param_grads) {
  return trunk_.backward_inject(norm_.backward(gy, tape), tape, -1, nullptr, param_grads);
}

std::vector<nn::Param> EmbedderNet::params() {
  std::vector<nn::Param> ps;
  trunk_.params(ps, "emb");
  return ps;
}

ManipNet clone_manip(ManipNet& src) {
  ManipNet dst(src.desc());
  auto sp = src.params();
  auto dp = dst.params();
  nn::assign_values(dp, nn::flatten_values(sp));
  return dst;
}

EmbedderNet clone_embedder(EmbedderNet& src) {
  EmbedderNet dst(src.base_channels(), src.embed_dim());
  auto sp = src.params();
  auto dp = dst.params();
  nn::assign_values(dp, nn::flatten_values(sp));
  return dst;
}

GeneratorNet clone_generator(GeneratorNet& src) {
  GeneratorNet dst(src.in_channels(), src.epsilon());
  auto sp = src.params();
  auto dp = dst.params();
  nn::assign_values(dp, nn::flatten_values(sp));
  return dst;
}

void save_manip(const std::string& dir, ManipNet& net, const json& extra) {
  json m = extra;
  m["type"] = "manip";
  const ModelDesc& d = net.desc();
  m["name"] = d.name;
  m["architecture"] = {{"base_channels", d.base_channels}, {"downsamples", d.downsamples},
                       {"res_blocks", d.res_blocks},       {"instance_norm", d.instance_norm}};
  m["attribute_arity"] = d.attribute_arity;
  m["feature_tap"] = d.feature_tap;
  write_manifest(dir, m);
  auto ps = net.params();
  nn::save_params((fs::path(dir) / "params.bin").string(), ps);
}

ManipNet load_manip(const std::string& dir) {
  json m = read_manifest(dir);
  if (m.value("type", "") != "manip") throw std::runtime_error("not a manip checkpoint: " + dir);
  ModelDesc d;
  d.name = m.at("name").get<std::string>();
  d.base_channels = m.at("architecture").at("base_channels").get<int>();
  d.downsamples = m.at("architecture").at("downsamples").get<int>();
  d.res_blocks = m.at("architecture").at("res_blocks").get<int>();
  d.instance_norm = m.at("architecture").at("instance_norm").get<bool>();
  d.attribute_arity = m.at("attribute_arity").get<int>();
  d.feature_tap = m.at("feature_tap").get<std::string>();
  ManipNet net(d);
  auto ps = net.params();
  nn::load_params((fs::path(dir) / "params.bin").string(), ps);
  return net;
}

void save_surrogate(const std::string& dir, SurrogateNet& net, const json& extra) {
  json m = extra;
  m["type"] = "surrogate";
  m["architecture"] = {{"base_channels", net.base_channels()},
                       {"downsamples", net.downsamples()},
                       {"res_blocks", net.res_blocks()}};
  write_manifest(dir, m);
  auto ps = net.params();
  nn::save_params((fs::path(dir) / "params.bin").string(), ps);
}

SurrogateNet load_surrogate(const std::string& dir) {
  json m = read_manifest(dir);
  if (m.value("type", "") != "surrogate") throw std::runtime_error("not a surrogate checkpoint: " + dir);
  SurrogateNet net(m.at("architecture").at("base_channels").get<int>(),
                   m.at("architecture").at("downsamples").get<int>(),
                   m.at("architecture").at("res_blocks").get<int>());
  auto ps = net.params();
  nn::load_params((fs::path(dir) / "params.bin").string(), ps);
  return net;
}

void save_embedder(const std::string& dir, EmbedderNet& net, const json& extra) {
  json m = extra;
  m["type"] = "embedder";
  m["architecture"] = {{"base_channels", net.base_channels()}, {"embed_dim", net.embed_dim()}};
  write_manifest(dir, m);
  auto ps = net.params();
  nn::save_params((fs::path(dir) / "params.bin").string(), ps);
}

EmbedderNet load_embedder(const std::string& dir) {
  json m = read_manifest(dir);
  if (m.value("type", "") != "embedder") throw std::runtime_error("not an embedder checkpoint: " + dir);
  EmbedderNet net(m.at("architecture").at("base_channels").get<int>(),
                  m.at("architecture").at("embed_dim").get<int>());
  auto ps = net.params();
  nn::load_params((fs::path(dir) / "params.bin").string(), ps);
  return net;
}

void save_generator(const std::string& dir, GeneratorNet& net, const json& extra) {
  json m = extra;
  m["type"] = "generator";
  m["epsilon"] = net.epsilon();
  m["input_channels"] = net.in_channels();
  write_manifest(dir, m);
  auto ps = net.params();
  nn::save_params((fs::path(dir) / "params.bin").string(), ps);
}

GeneratorNet load_generator(const std::string& dir) {
  json m = read_manifest(dir);
  if (m.value("type", "") != "generator") throw std::runtime_error("not a generator checkpoint: " + dir);
  GeneratorNet net(m.at("input_channels").get<int>(), m.at("epsilon").get<double>());
  auto ps = net.params();
  nn::load_params((fs::path(dir) / "params.bin").string(), ps);
  return net;
}

}  // namespace idguard
