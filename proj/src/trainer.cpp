#include "idguard/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "idguard/log.hpp"
#include "idguard/metrics.hpp"
#include "idguard/pretrain.hpp"
#include "json.hpp"

namespace idguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_pod(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_pod(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("trainer state: truncated stream");
}

void write_string(std::ostream& os, const std::string& s) {
  const std::uint64_t n = s.size();
  write_pod(os, &n, sizeof(n));
  os.write(s.data(), static_cast<std::streamsize>(n));
}

std::string read_string(std::istream& is) {
  std::uint64_t n = 0;
  read_pod(is, &n, sizeof(n));
  std::string s(static_cast<size_t>(n), '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("trainer state: truncated string");
  return s;
}

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
  const std::uint64_t n = v.size();
  write_pod(os, &n, sizeof(n));
  write_pod(os, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_vec(std::istream& is) {
  std::uint64_t n = 0;
  read_pod(is, &n, sizeof(n));
  std::vector<T> v(static_cast<size_t>(n));
  read_pod(is, v.data(), v.size() * sizeof(T));
  return v;
}

}  // namespace

GeneratorTrainer::GeneratorTrainer(const RunConfig& cfg, const ToyDataset& ds,
                                   std::vector<ManipNet>& models, EmbedderNet& embedder,
                                   HeatmapCache* heatmap_cache, const PriorPerturbation* initial_prior)
    : cfg_(cfg),
      ds_(ds),
      models_(models),
      embedder_(embedder),
      heatmap_cache_(heatmap_cache),
      norm_mode_(norm_mode_from_string(cfg.loss.normalization)),
      gen_(cfg.trainer.prior_mode == PriorMode::kNone ? 3 : 6, cfg.epsilon),
      rng_(Rng::derive(cfg.seed, rng_stream::kGenTrain)) {
  Rng init_rng = Rng::derive(cfg_.seed, rng_stream::kGenInit);
  gen_.init(init_rng);
  for (size_t k = 0; k < models_.size(); ++k) embedder_clones_.push_back(clone_embedder(embedder_));
  gen_params_ = gen_.params();
  gen_opt_ = nn::Adam(cfg_.optimizer.learning_rate, 0.9, 0.999, 1e-8, /*maximize=*/true);
  gen_opt_.attach(gen_params_);

  switch (cfg_.trainer.prior_mode) {
    case PriorMode::kGradientPrior: {
      if (!initial_prior)
        throw std::invalid_argument("GeneratorTrainer: gradient_prior mode needs an initial prior");
      prior_ = *initial_prior;
      prior_opt_ = PriorOptimizer(cfg_.optimizer.learning_rate);
      prior_opt_.attach(prior_);
      break;
    }
    case PriorMode::kRandomNoise: {
      Rng noise_rng = Rng::derive(cfg_.seed, rng_stream::kPrior + 1);
      prior_.data = Tensor(1, 3, ds_.image_size, ds_.image_size);
      for (std::int64_t i = 0; i < prior_.data.size(); ++i)
        prior_.data[i] = noise_rng.uniform(-cfg_.epsilon, cfg_.epsilon);
      prior_.epsilon = cfg_.epsilon;
      prior_.provenance = {"random_noise", 0, 0, 0.0};
      break;
    }
    case PriorMode::kNone: {
      prior_.epsilon = cfg_.epsilon;
      break;
    }
  }
}

Tensor GeneratorTrainer::gen_input(const Tensor& x) const {
  if (!prior_input_enabled()) return x;
  return concat_channels(x, broadcast_batch(prior_.data, x.shape().b));
}

GeneratorTrainer::Batch GeneratorTrainer::next_batch() {
  const int want = std::min<int>(cfg_.optimizer.batch_size,
                                 static_cast<int>(ds_.train_indices.size()));
  if (perm_.empty() || cursor_ + static_cast<size_t>(want) > perm_.size()) {
    perm_ = ds_.train_indices;
    rng_.shuffle(perm_);
    cursor_ = 0;
  }
  std::vector<int> idx(perm_.begin() + static_cast<long>(cursor_),
                       perm_.begin() + static_cast<long>(cursor_) + want);
  cursor_ += static_cast<size_t>(want);
  std::vector<std::vector<int>> labels(models_.size());
  for (size_t k = 0; k < models_.size(); ++k) {
    labels[k].resize(idx.size());
    for (auto& a : labels[k]) a = rng_.randint(0, models_[k].desc().attribute_arity - 1);
  }
  return make_batch(idx, labels);
}

GeneratorTrainer::Batch GeneratorTrainer::make_batch(const std::vector<int>& idx,
                                                     const std::vector<std::vector<int>>& labels) {
  Batch b;
  b.idx = idx;
  b.x = ds_.images(idx);
  b.m_bin = ds_.bin_masks(idx);
  b.m_hm = heatmap_cache_ ? heatmap_cache_->get(embedder_, b.x) : compute_heatmap(embedder_, b.x);
  b.labels = labels;
  return b;
}

std::vector<double> GeneratorTrainer::strategy_weights(const Batch&) {
  switch (cfg_.weighting.strategy) {
    case WeightStrategy::kEquivalent:
      return equivalent_weights(static_cast<int>(models_.size())).values;
    case WeightStrategy::kPrior: {
      WeightSet w;
      w.values = cfg_.weighting.alpha;
      return w.values;
    }
    case WeightStrategy::kKpi:
      return kpi_weights(cfg_.weighting.alpha, prev_mask_hm_, cfg_.weighting.kpi_floor,
                         cfg_.weighting.beta_floor)
          .values;
    case WeightStrategy::kMgda:
      throw std::logic_error("strategy_weights: mgda weights come from gradients");
  }
  return {};
}

GeneratorTrainer::Evaluated GeneratorTrainer::evaluate(const Batch& batch,
                                                       const std::vector<double>& weights,
                                                       bool with_grads) {
  Evaluated ev;
  const int B = batch.x.shape().b;
  const int N = static_cast<int>(models_.size());
  ev.tape_gen.clear();
  const Tensor gin = gen_input(batch.x);
  const Tensor delta_gen = gen_.forward(gin, with_grads ? &ev.tape_gen : nullptr);
  const Tensor x_adv_gen = batch.x + delta_gen;
  Tensor x_adv_prior;
  if (prior_path_enabled()) x_adv_prior = batch.x + broadcast_batch(prior_.data, B);

  // Per-model loss evaluations are independent (each worker owns its model and
  // an embedder clone); the weighted reduction below runs in fixed model order.
  std::vector<LossBreakdown> gen_bd(static_cast<size_t>(N)), prior_bd(static_cast<size_t>(N));
  std::vector<Tensor> gk(static_cast<size_t>(N)), gp_direct(static_cast<size_t>(N));
  nn::parallel_for(N, cfg_.trainer.threads, [&](int k) {
    const CleanContext clean =
        clean_forward(models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)],
                      batch.x, batch.labels[static_cast<size_t>(k)]);
    if (with_grads) gk[static_cast<size_t>(k)] = Tensor(batch.x.shape());
    gen_bd[static_cast<size_t>(k)] = combined_adv_loss(
        k, models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)], clean,
        x_adv_gen, batch.labels[static_cast<size_t>(k)], batch.m_bin, batch.m_hm, norm_mode_,
        with_grads ? &gk[static_cast<size_t>(k)] : nullptr);
    if (prior_path_enabled()) {
      Tensor gp;
      if (with_grads) gp = Tensor(batch.x.shape());
      prior_bd[static_cast<size_t>(k)] = combined_adv_loss(
          k, models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)], clean,
          x_adv_prior, batch.labels[static_cast<size_t>(k)], batch.m_bin, batch.m_hm, norm_mode_,
          with_grads ? &gp : nullptr);
      if (with_grads) gp_direct[static_cast<size_t>(k)] = sum_batch(gp);
    }
  });

  ev.gen = std::move(gen_bd);
  if (prior_path_enabled()) ev.prior = std::move(prior_bd);
  if (with_grads) {
    ev.grad_gen_delta = Tensor(batch.x.shape());
    ev.grad_prior_delta = Tensor(1, 3, batch.x.shape().h, batch.x.shape().w);
    for (int k = 0; k < N; ++k) {
      ev.grad_gen_delta.add_scaled(gk[static_cast<size_t>(k)], weights[static_cast<size_t>(k)]);
      if (prior_path_enabled())
        ev.grad_prior_delta.add_scaled(gp_direct[static_cast<size_t>(k)],
                                       weights[static_cast<size_t>(k)]);
    }
  }
  return ev;
}

void GeneratorTrainer::mgda_weights_and_grads(const Batch& batch, std::vector<double>& weights_out,
                                              std::vector<Scalar>& combined_flat,
                                              std::vector<LossBreakdown>& gen_bd,
                                              std::vector<LossBreakdown>& prior_bd) {
  const int B = batch.x.shape().b;
  nn::Tape tape_gen;
  const Tensor gin = gen_input(batch.x);
  const Tensor delta_gen = gen_.forward(gin, &tape_gen);
  const Tensor x_adv_gen = batch.x + delta_gen;
  Tensor x_adv_prior;
  if (prior_path_enabled()) x_adv_prior = batch.x + broadcast_batch(prior_.data, B);

  const bool prior_param = prior_path_enabled();
  const int N = static_cast<int>(models_.size());
  gen_bd.resize(static_cast<size_t>(N));
  if (prior_param) prior_bd.resize(static_cast<size_t>(N));
  std::vector<Tensor> gk(static_cast<size_t>(N)), prior_direct(static_cast<size_t>(N));
  nn::parallel_for(N, cfg_.trainer.threads, [&](int k) {
    const CleanContext clean =
        clean_forward(models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)],
                      batch.x, batch.labels[static_cast<size_t>(k)]);
    gk[static_cast<size_t>(k)] = Tensor(batch.x.shape());
    gen_bd[static_cast<size_t>(k)] = combined_adv_loss(
        k, models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)], clean,
        x_adv_gen, batch.labels[static_cast<size_t>(k)], batch.m_bin, batch.m_hm, norm_mode_,
        &gk[static_cast<size_t>(k)]);
    if (prior_param) {
      Tensor gp(batch.x.shape());
      prior_bd[static_cast<size_t>(k)] = combined_adv_loss(
          k, models_[static_cast<size_t>(k)], embedder_clones_[static_cast<size_t>(k)], clean,
          x_adv_prior, batch.labels[static_cast<size_t>(k)], batch.m_bin, batch.m_hm, norm_mode_,
          &gp);
      prior_direct[static_cast<size_t>(k)] = sum_batch(gp);
    }
  });

  TaskGradients tg;
  for (int k = 0; k < N; ++k) {
    nn::zero_grads(gen_params_);
    Tensor gin_grad = gen_.backward(gk[static_cast<size_t>(k)], tape_gen);
    tape_gen.rewind();
    Tensor prior_grad(1, 3, batch.x.shape().h, batch.x.shape().w);
    if (prior_param) {
      prior_grad += prior_direct[static_cast<size_t>(k)];
      if (prior_input_enabled()) {
        Tensor gx, gch;
        split_channels(gin_grad, 3, gx, gch);
        prior_grad += sum_batch(gch);
      }
    }
    std::vector<Scalar> flat = nn::flatten_grads(gen_params_);
    if (prior_param)
      for (std::int64_t i = 0; i < prior_grad.size(); ++i) flat.push_back(prior_grad[i]);
    if (cfg_.weighting.mgda.normalize_gradients) {
      const double task_loss = gen_bd[static_cast<size_t>(k)].combined +
                               (prior_bd.empty() ? 0.0 : prior_bd[static_cast<size_t>(k)].combined);
      if (task_loss > 0.0)
        for (auto& v : flat) v /= task_loss;
    }
    tg.g.push_back(std::move(flat));
  }
  const WeightSet ws = min_norm_point(tg, cfg_.weighting.mgda.max_iters, cfg_.weighting.mgda.tol);
  weights_out = ws.values;
  combined_flat.assign(tg.g.front().size(), 0.0);
  for (size_t k = 0; k < tg.g.size(); ++k)
    for (size_t i = 0; i < combined_flat.size(); ++i)
      combined_flat[i] += weights_out[k] * tg.g[k][i];
}

IterationStats GeneratorTrainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  Batch batch = next_batch();
  IterationStats st;
  st.iter = iter_ + 1;

  if (cfg_.weighting.strategy == WeightStrategy::kMgda) {
    std::vector<Scalar> combined;
    mgda_weights_and_grads(batch, st.weights, combined, st.gen, st.prior);
    // Scatter the combined-direction gradient back into parameter slots.
    size_t pos = 0;
    for (auto& p : gen_params_) {
      for (std::int64_t i = 0; i < p.grad->size(); ++i) (*p.grad)[i] = combined[pos++];
    }
    gen_opt_.step(gen_params_);
    if (prior_path_enabled()) {
      Tensor pg(prior_.data.shape());
      for (std::int64_t i = 0; i < pg.size(); ++i) pg[i] = combined[pos++];
      prior_opt_.step(prior_, pg);
    }
  } else {
    st.weights = strategy_weights(batch);
    Evaluated ev = evaluate(batch, st.weights, /*with_grads=*/true);
    st.gen = std::move(ev.gen);
    st.prior = std::move(ev.prior);
    nn::zero_grads(gen_params_);
    Tensor gin_grad = gen_.backward(ev.grad_gen_delta, ev.tape_gen);
    gen_opt_.step(gen_params_);
    if (prior_path_enabled()) {
      Tensor gprior = ev.grad_prior_delta;
      if (prior_input_enabled()) {
        Tensor gx, gch;
        split_channels(gin_grad, 3, gx, gch);
        gprior += sum_batch(gch);
      }
      prior_opt_.step(prior_, gprior);
    }
  }

  st.total = 0.0;
  st.conv_metric = 0.0;
  for (size_t k = 0; k < models_.size(); ++k) {
    st.total += st.weights[k] * st.gen[k].combined;
    if (!st.prior.empty()) st.total += st.weights[k] * st.prior[k].combined;
    st.conv_metric += st.gen[k].combined;
  }
  st.conv_metric /= static_cast<double>(models_.size());
  if (!std::isfinite(st.total))
    throw TrainingDiverged("non-finite training loss at iteration " + std::to_string(st.iter));

  prev_mask_hm_.resize(models_.size());
  for (size_t k = 0; k < models_.size(); ++k) prev_mask_hm_[k] = st.gen[k].mask_hm;

  ++iter_;
  st.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return st;
}

void GeneratorTrainer::run(const TrainerOptions& opts) {
  std::ofstream log_os, timing_os;
  const auto mode = opts.append_logs ? std::ios::app : std::ios::trunc;
  if (!opts.log_path.empty()) {
    fs::create_directories(fs::path(opts.log_path).parent_path());
    log_os.open(opts.log_path, mode);
  }
  if (!opts.timing_path.empty()) timing_os.open(opts.timing_path, mode);

  while (iter_ < cfg_.optimizer.max_iterations) {
    IterationStats st = step();
    if (log_os.is_open() && (st.iter % std::max(1, cfg_.trainer.log_every) == 0)) {
      for (size_t k = 0; k < st.gen.size(); ++k) {
        json line = {{"iter", st.iter},       {"model", static_cast<int>(k)},
                     {"name", models_[k].desc().name}, {"path", "gen"},
                     {"mask_bin", st.gen[k].mask_bin}, {"mask_hm", st.gen[k].mask_hm},
                     {"id_cos", st.gen[k].identity},   {"feat", st.gen[k].feature},
                     {"combined", st.gen[k].combined}, {"weight", st.weights[k]}};
        log_os << line.dump() << "\n";
      }
      for (size_t k = 0; k < st.prior.size(); ++k) {
        json line = {{"iter", st.iter},         {"model", static_cast<int>(k)},
                     {"name", models_[k].desc().name}, {"path", "prior"},
                     {"mask_bin", st.prior[k].mask_bin}, {"mask_hm", st.prior[k].mask_hm},
                     {"id_cos", st.prior[k].identity},   {"feat", st.prior[k].feature},
                     {"combined", st.prior[k].combined}, {"weight", st.weights[k]}};
        log_os << line.dump() << "\n";
      }
      json summary = {{"iter", st.iter},
                      {"strategy", to_string(cfg_.weighting.strategy)},
                      {"weights", st.weights},
                      {"total", st.total},
                      {"conv_metric", st.conv_metric}};
      log_os << summary.dump() << "\n";
    }
    if (timing_os.is_open()) {
      json t = {{"iter", st.iter}, {"wall_ms", st.wall_ms}};
      timing_os << t.dump() << "\n";
    }
    if (!opts.checkpoint_dir.empty() && opts.checkpoint_every > 0 &&
        st.iter % opts.checkpoint_every == 0) {
      save_state(opts.checkpoint_dir);
    }
  }
  if (!opts.checkpoint_dir.empty()) save_state(opts.checkpoint_dir);
}

void GeneratorTrainer::save_state(const std::string& dir) {
  fs::create_directories(dir);
  json extra;
  extra["prior_blob_hash"] =
      prior_input_enabled() ? std::to_string(content_hash(prior_.data)) : std::string("none");
  save_generator((fs::path(dir) / "generator").string(), gen_, extra);
  if (cfg_.trainer.prior_mode != PriorMode::kNone)
    save_prior((fs::path(dir) / "prior").string(), prior_);

  std::ofstream os(fs::path(dir) / "state.bin", std::ios::binary);
  if (!os) throw std::runtime_error("save_state: cannot open state.bin in " + dir);
  const std::int64_t iter64 = iter_;
  write_pod(os, &iter64, sizeof(iter64));
  const std::uint64_t cursor64 = cursor_;
  write_pod(os, &cursor64, sizeof(cursor64));
  write_vec(os, perm_);
  write_vec(os, prev_mask_hm_);
  write_string(os, rng_.serialize());
  gen_opt_.serialize(os);
  if (cfg_.trainer.prior_mode == PriorMode::kGradientPrior) prior_opt_.serialize(os);

  json meta = {{"iter", iter_},
               {"strategy", to_string(cfg_.weighting.strategy)},
               {"prior_mode", to_string(cfg_.trainer.prior_mode)},
               {"max_iterations", cfg_.optimizer.max_iterations}};
  std::ofstream ms(fs::path(dir) / "state.json");
  ms << meta.dump(2) << "\n";
}

void GeneratorTrainer::restore_state(const std::string& dir) {
  {
    GeneratorNet loaded = load_generator((fs::path(dir) / "generator").string());
    if (loaded.in_channels() != gen_.in_channels())
      throw std::runtime_error("restore_state: generator input channels mismatch");
    auto lp = loaded.params();
    nn::assign_values(gen_params_, nn::flatten_values(lp));
  }
  if (cfg_.trainer.prior_mode != PriorMode::kNone)
    prior_ = load_prior((fs::path(dir) / "prior").string());

  std::ifstream is(fs::path(dir) / "state.bin", std::ios::binary);
  if (!is) throw std::runtime_error("restore_state: missing state.bin in " + dir);
  std::int64_t iter64 = 0;
  read_pod(is, &iter64, sizeof(iter64));
  iter_ = static_cast<int>(iter64);
  std::uint64_t cursor64 = 0;
  read_pod(is, &cursor64, sizeof(cursor64));
  cursor_ = static_cast<size_t>(cursor64);
  perm_ = read_vec<int>(is);
  prev_mask_hm_ = read_vec<double>(is);
  rng_.deserialize(read_string(is));
  gen_opt_.deserialize(is);
  if (cfg_.trainer.prior_mode == PriorMode::kGradientPrior) {
    prior_opt_ = PriorOptimizer(cfg_.optimizer.learning_rate);
    prior_opt_.attach(prior_);
    prior_opt_.deserialize(is);
  }
}

double GeneratorTrainer::objective_value(const std::vector<int>& sample_indices,
                                         const std::vector<std::vector<int>>& labels,
                                         const std::vector<double>& weights) {
  Batch batch = make_batch(sample_indices, labels);
  Evaluated ev = evaluate(batch, weights, /*with_grads=*/false);
  double total = 0.0;
  for (size_t k = 0; k < models_.size(); ++k) {
    total += weights[k] * ev.gen[k].combined;
    if (!ev.prior.empty()) total += weights[k] * ev.prior[k].combined;
  }
  return total;
}

Tensor GeneratorTrainer::objective_prior_grad(const std::vector<int>& sample_indices,
                                              const std::vector<std::vector<int>>& labels,
                                              const std::vector<double>& weights) {
  if (!prior_path_enabled())
    throw std::logic_error("objective_prior_grad: no prior path in this mode");
  Batch batch = make_batch(sample_indices, labels);
  Evaluated ev = evaluate(batch, weights, /*with_grads=*/true);
  nn::zero_grads(gen_params_);
  Tensor gin_grad = gen_.backward(ev.grad_gen_delta, ev.tape_gen);
  Tensor gprior = ev.grad_prior_delta;
  Tensor gx, gch;
  split_channels(gin_grad, 3, gx, gch);
  gprior += sum_batch(gch);
  return gprior;
}

ManipNet adversarial_train(const RunConfig& cfg, const ToyDataset& ds, ManipNet& model,
                           GeneratorNet& generator, const PriorPerturbation& prior,
                           EmbedderNet& embedder, HeatmapCache* heatmap_cache,
                           AdvTrainReport* report) {
  ManipNet hardened = clone_manip(model);
  if (report) {
    report->pre_attack_l2face = pgd_probe_l2_face(cfg, ds, model);
    report->pre_clean_mse = editing_mse(model, ds, ds.holdout_indices);
    report->iterations = cfg.adv_train.iterations;
  }
  if (cfg.adv_train.iterations == 0) {
    if (report) {
      report->post_attack_l2face = report->pre_attack_l2face;
      report->post_clean_mse = report->pre_clean_mse;
    }
    return hardened;
  }

  GeneratorNet gen_at = clone_generator(generator);
  auto m_params = hardened.params();
  auto g_params = gen_at.params();
  nn::Adam m_opt(cfg.adv_train.model_learning_rate);
  m_opt.attach(m_params);
  nn::Adam g_opt(cfg.adv_train.gen_learning_rate, 0.9, 0.999, 1e-8, /*maximize=*/true);
  g_opt.attach(g_params);

  const NormMode norm_mode = norm_mode_from_string(cfg.loss.normalization);
  Rng rng = Rng::derive(cfg.seed, rng_stream::kAdvTrain);
  std::vector<int> perm;
  size_t cursor = 0;
  const int batch_size = std::min<int>(cfg.trainer.model_batch_size,
                                       static_cast<int>(ds.train_indices.size()));
  double initial_task_loss = -1.0;

  for (int it = 0; it < cfg.adv_train.iterations; ++it) {
    if (perm.empty() || cursor + static_cast<size_t>(batch_size) > perm.size()) {
      perm = ds.train_indices;
      rng.shuffle(perm);
      cursor = 0;
    }
    std::vector<int> idx(perm.begin() + static_cast<long>(cursor),
                         perm.begin() + static_cast<long>(cursor) + batch_size);
    cursor += static_cast<size_t>(batch_size);
    std::vector<int> attrs(idx.size());
    for (auto& a : attrs) a = rng.randint(0, hardened.desc().attribute_arity - 1);

    const Tensor x = ds.images(idx);
    const Tensor m_bin = ds.bin_masks(idx);
    const Tensor m_hm = heatmap_cache ? heatmap_cache->get(embedder, x) : compute_heatmap(embedder, x);
    const Tensor gin = (gen_at.in_channels() == 6)
                           ? concat_channels(x, broadcast_batch(prior.data, x.shape().b))
                           : x;

    // Inner maximization: adapt the generator to the (partially hardened) model.
    const CleanContext clean = clean_forward(hardened, embedder, x, attrs);
    for (int gs = 0; gs < cfg.adv_train.n_g; ++gs) {
      nn::Tape tape;
      const Tensor delta = gen_at.forward(gin, &tape);
      Tensor grad_xadv(x.shape());
      combined_adv_loss(cfg.adv_train.model_index, hardened, embedder, clean, x + delta, attrs,
                        m_bin, m_hm, norm_mode, &grad_xadv);
      nn::zero_grads(g_params);
      gen_at.backward(grad_xadv, tape);
      g_opt.step(g_params);
    }

    // Outer minimization: editing task loss on adversarial inputs.
    for (int ms = 0; ms < cfg.adv_train.n_m; ++ms) {
      const Tensor delta = gen_at.forward(gin, nullptr);
      const Tensor x_adv = x + delta;
      Tensor target(x.shape());
      for (size_t b = 0; b < idx.size(); ++b) {
        const ToySample& s = ds.samples[static_cast<size_t>(idx[b])];
        Tensor t = edit_target(s.image, s.labels, attrs[b]);
        std::copy(t.data(), t.data() + t.size(), target.sample(static_cast<int>(b)));
      }
      nn::Tape tape;
      const Tensor y = hardened.manipulate(x_adv, attrs, &tape, nullptr);
      Tensor gy;
      const double task_loss = nn::mse_loss(y, target, &gy);
      if (initial_task_loss < 0.0) initial_task_loss = std::max(task_loss, 1e-12);
      if (task_loss > 10.0 * initial_task_loss)
        throw TrainingDiverged("adversarial_train: task loss " + std::to_string(task_loss) +
                               " exceeded 10x initial " + std::to_string(initial_task_loss) +
                               " at iteration " + std::to_string(it));
      nn::zero_grads(m_params);
      hardened.backward(gy, tape, attrs, nullptr);
      m_opt.step(m_params);
    }
  }

  if (report) {
    report->post_attack_l2face = pgd_probe_l2_face(cfg, ds, hardened);
    report->post_clean_mse = editing_mse(hardened, ds, ds.holdout_indices);
  }
  return hardened;
}

double pgd_probe_l2_face(const RunConfig& cfg, const ToyDataset& ds, ManipNet& model,
                         int probe_count) {
  const int n = std::min<int>(probe_count, static_cast<int>(ds.holdout_indices.size()));
  std::vector<int> idx(ds.holdout_indices.begin(), ds.holdout_indices.begin() + n);
  std::vector<int> attrs(idx.size());
  for (size_t i = 0; i < idx.size(); ++i)
    attrs[i] = static_cast<int>(i) % model.desc().attribute_arity;
  const Tensor x = ds.images(idx);
  const Tensor m_bin = ds.bin_masks(idx);
  const Tensor face = ds.face_masks(idx);
  const NormMode norm_mode = norm_mode_from_string(cfg.loss.normalization);
  const Tensor y_clean = model.manipulate(x, attrs, nullptr, nullptr);
  auto loss_fn = [&](const Tensor& x_adv, Tensor* grad) -> Scalar {
    if (!grad)
      return mask_bin_loss(y_clean, model.manipulate(x_adv, attrs, nullptr, nullptr), m_bin,
                           norm_mode, nullptr);
    nn::Tape tape;
    const Tensor y = model.manipulate(x_adv, attrs, &tape, nullptr);
    Tensor gy(y.shape());
    const Scalar loss = mask_bin_loss(y_clean, y, m_bin, norm_mode, &gy);
    *grad += model.backward(gy, tape, attrs, nullptr, /*param_grads=*/false);
    return loss;
  };
  const Tensor start = seeded_start_delta(x.shape(), cfg.epsilon, cfg.seed, idx);
  const Tensor delta = pgd_attack(loss_fn, x, cfg.epsilon, cfg.pgd.step, cfg.pgd.iters, &start);
  const Tensor y_att = model.manipulate(clamp(x + delta, -1.0, 1.0), attrs, nullptr, nullptr);
  return mean_l2_face(y_clean, y_att, face,
                      channel_mode_from_string(cfg.metrics.channel_mode));
}

}  // namespace idguard
