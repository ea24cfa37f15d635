#ifndef STADV_TRAINER_HPP
#define STADV_TRAINER_HPP

#include "stadv/dataset.hpp"
#include "stadv/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stadv {

enum class AdversarialMode { none, fgsm, ensemble, pgd };
enum class Optimizer { adam, sgd_momentum };

const char* to_string(AdversarialMode m);
const char* to_string(Optimizer o);
AdversarialMode parse_adversarial_mode(const std::string& s);
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  int epochs = 5;
  int batch_size = 64;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.9;  // sgd_momentum only
  std::uint64_t seed = 0;
  AdversarialMode mode = AdversarialMode::none;
  double epsilon = 0.3;  // L-infinity budget in pixel units
  int pgd_steps = 10;
  double pgd_step_size = 0.075;
  // Fixed models that generate the adversarial half in ensemble mode,
  // used round-robin by batch. Not owned.
  std::vector<const LogitModel*> ensemble_sources;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double test_accuracy = -1.0;     // -1 when no test set was given
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
  AdversarialMode mode = AdversarialMode::none;
  std::size_t train_samples = 0;
};

// Minibatch training. In adversarial modes the first half of every batch
// is replaced by adversarial versions of the same samples.
TrainReport train(Classifier& g, const Dataset& data, const TrainConfig& cfg, const Dataset* test = nullptr);

double accuracy(const LogitModel& g, const Dataset& data);

}  // namespace stadv

#endif  // STADV_TRAINER_HPP
