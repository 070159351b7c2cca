#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "idguard/attacks.hpp"
#include "idguard/config.hpp"
#include "idguard/dataset.hpp"
#include "idguard/metrics.hpp"
#include "idguard/nets.hpp"
#include "idguard/pretrain.hpp"
#include "idguard/trainer.hpp"

namespace idguard::pipeline {

// A required upstream artifact is absent; names the command that produces it.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& artifact, const std::string& producer)
      : std::runtime_error("missing artifact: " + artifact + "; run `" + producer + "` first"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

struct OutPaths {
  std::string root;

  std::string dataset() const { return root + "/dataset"; }
  std::string models() const { return root + "/models"; }
  std::string model(int k, const std::string& name) const;
  std::string surrogate() const { return root + "/models/surrogate"; }
  std::string embedder() const { return root + "/models/embedder"; }
  std::string gates() const { return root + "/models/gates.json"; }
  std::string prior() const { return root + "/prior"; }
  std::string estimated_alpha() const { return root + "/prior/estimated_alpha.json"; }
  std::string generator_state() const { return root + "/generator"; }
  std::string train_log() const { return root + "/generator/train_log.jsonl"; }
  std::string train_timing() const { return root + "/generator/train_timing.jsonl"; }
  std::string eval() const { return root + "/eval"; }
  std::string advtrain() const { return root + "/advtrain"; }
  std::string report() const { return root + "/report"; }
  std::string heatmap_cache() const { return root + "/heatmap_cache"; }
};

void dump_resolved_config(const RunConfig& cfg, const std::string& dir);

// Loading helpers; throw MissingArtifact when upstream outputs are absent.
ToyDataset require_dataset(const OutPaths& paths);
std::vector<ManipNet> require_models(const RunConfig& cfg, const OutPaths& paths);
SurrogateNet require_surrogate(const OutPaths& paths);
EmbedderNet require_embedder(const OutPaths& paths);
PriorPerturbation require_prior(const OutPaths& paths);
GeneratorNet require_generator(const OutPaths& paths);
PriorPerturbation require_trained_prior(const OutPaths& paths);

void prepare_data(const RunConfig& cfg, const OutPaths& paths);
void train_models(const RunConfig& cfg, const OutPaths& paths);
void derive_prior_cmd(const RunConfig& cfg, const OutPaths& paths);
void train_generator_cmd(const RunConfig& cfg, const OutPaths& paths, bool resume);
void protect_cmd(const RunConfig& cfg, const OutPaths& paths,
                 const std::vector<std::string>& inputs, const std::string& dest);
EvalReport evaluate_cmd(const RunConfig& cfg, const OutPaths& paths);
AdvTrainReport adv_train_cmd(const RunConfig& cfg, const OutPaths& paths);
void report_cmd(const RunConfig& cfg, const OutPaths& paths);

}  // namespace idguard::pipeline
