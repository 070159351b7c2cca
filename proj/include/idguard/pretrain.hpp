#pragma once

#include <string>
#include <vector>

#include "idguard/config.hpp"
#include "idguard/dataset.hpp"
#include "idguard/nets.hpp"
#include "json.hpp"

namespace idguard {

struct GateReport {
  std::string name;
  std::string metric;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;

  nlohmann::json to_json() const {
    return {{"name", name}, {"metric", metric}, {"value", value}, {"threshold", threshold},
            {"passed", passed}};
  }
};

// Supervised editing training for every configured model descriptor. Gates are
// measured on the held-out split; an unmet gate is reported, not fatal.
std::vector<ManipNet> train_toy_models(const RunConfig& cfg, const ToyDataset& ds,
                                       std::vector<GateReport>* gates = nullptr);

SurrogateNet train_surrogate(const RunConfig& cfg, const ToyDataset& ds, GateReport* gate = nullptr);

EmbedderNet train_embedder(const RunConfig& cfg, const ToyDataset& ds, GateReport* gate = nullptr);

// Mean full-image MSE of M(x, a) against the exact edit target over the given
// samples and all attributes.
double editing_mse(ManipNet& model, const ToyDataset& ds, const std::vector<int>& indices);

double reconstruction_mse(SurrogateNet& surrogate, const ToyDataset& ds,
                          const std::vector<int>& indices);

// Mean same-identity cosine minus mean different-identity cosine over all pairs.
double embedding_margin(EmbedderNet& embedder, const ToyDataset& ds,
                        const std::vector<int>& indices);

}  // namespace idguard
