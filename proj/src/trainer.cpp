#include "stadv/trainer.hpp"

#include "stadv/attacks.hpp"
#include "stadv/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace stadv {

using Eigen::ArrayXd;

const char* to_string(AdversarialMode m) {
  switch (m) {
    case AdversarialMode::none: return "none";
    case AdversarialMode::fgsm: return "fgsm";
    case AdversarialMode::ensemble: return "ensemble";
    case AdversarialMode::pgd: return "pgd";
  }
  return "none";
}

const char* to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd_momentum"; }

AdversarialMode parse_adversarial_mode(const std::string& s) {
  if (s == "none") return AdversarialMode::none;
  if (s == "fgsm") return AdversarialMode::fgsm;
  if (s == "ensemble") return AdversarialMode::ensemble;
  if (s == "pgd") return AdversarialMode::pgd;
  throw ValueError("unknown adversarial mode '" + s + "' (expected none, fgsm, ensemble or pgd)");
}

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd_momentum" || s == "sgd-momentum") return Optimizer::sgd_momentum;
  throw ValueError("unknown optimizer '" + s + "' (expected adam or sgd_momentum)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValueError("train: epochs must be >= 0");
  if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValueError("train: learning_rate must be positive");
  if (!(epsilon >= 0.0)) throw ValueError("train: epsilon must be >= 0");
  if (mode == AdversarialMode::pgd && pgd_steps < 1) throw ValueError("train: pgd_steps must be >= 1");
  if (mode == AdversarialMode::ensemble && ensemble_sources.empty()) {
    throw ValueError("train: ensemble mode needs at least one source model");
  }
}

namespace {

class ParameterUpdater {
 public:
  ParameterUpdater(std::map<std::string, Tensor>& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
    for (auto& [k, t] : params_) {
      m_[k] = ArrayXd::Zero(t.size());
      if (cfg.optimizer == Optimizer::adam) v_[k] = ArrayXd::Zero(t.size());
    }
  }

  void step() {
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (auto& [k, t] : params_) {
      if (!t.has_grad()) continue;
      const ArrayXd& g = t.grad();
      ArrayXd& m = m_[k];
      if (cfg_.optimizer == Optimizer::adam) {
        ArrayXd& v = v_[k];
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.square();
        t.value_mut() -= cfg_.learning_rate * (m / c1) / ((v / c2).sqrt() + eps);
      } else {
        m = cfg_.momentum * m + g;
        t.value_mut() -= cfg_.learning_rate * m;
      }
      t.zero_grad();
    }
  }

 private:
  std::map<std::string, Tensor>& params_;
  const TrainConfig& cfg_;
  std::map<std::string, ArrayXd> m_, v_;
  int t_ = 0;
};

}  // namespace

double accuracy(const LogitModel& g, const Dataset& data) {
  if (data.empty()) throw ValueError("accuracy: empty dataset");
  const std::vector<int> pred = predict_batch(g, data.images);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return double(hits) / double(pred.size());
}

TrainReport train(Classifier& g, const Dataset& data, const TrainConfig& cfg, const Dataset* test) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (data.empty()) throw ValueError("train: empty dataset");
  data.validate();
  const InputGeometry geo = g.input_geometry();
  const Image& first = data.images.front();
  if (first.height != geo.height || first.width != geo.width || first.channels != geo.channels) {
    throw ShapeError("train: dataset geometry " + first.geometry() + " does not match " + g.name() + " input " +
                     geo.to_string());
  }

  TrainReport report;
  report.seed = cfg.seed;
  report.mode = cfg.mode;
  report.train_samples = data.size();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  ParameterUpdater updater(g.parameters(), cfg);
  PgdConfig pgd;
  pgd.epsilon = cfg.epsilon;
  pgd.steps = cfg.pgd_steps;
  pgd.step_size = cfg.pgd_step_size;
  std::size_t batch_index = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min(order.size() - begin, static_cast<std::size_t>(cfg.batch_size));
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t i = 0; i < count; ++i) {
        images.push_back(data.images[order[begin + i]]);
        labels.push_back(data.labels[order[begin + i]]);
      }
      Tensor batch = batch_tensor(images);

      if (cfg.mode != AdversarialMode::none && count >= 2) {
        const int adv_n = static_cast<int>(count / 2);
        const Eigen::Index per = batch.size() / static_cast<Eigen::Index>(count);
        Shape sub = batch.shape();
        sub[0] = adv_n;
        Tensor head(sub, batch.value().head(per * adv_n));
        const std::span<const int> head_labels(labels.data(), static_cast<std::size_t>(adv_n));
        g.set_trainable(false);
        Tensor adv;
        switch (cfg.mode) {
          case AdversarialMode::fgsm:
            adv = fgsm_batch(g, head, head_labels, cfg.epsilon, g.pixel_lo, g.pixel_hi);
            break;
          case AdversarialMode::ensemble: {
            const LogitModel& src = *cfg.ensemble_sources[batch_index % cfg.ensemble_sources.size()];
            adv = fgsm_batch(src, head, head_labels, cfg.epsilon, g.pixel_lo, g.pixel_hi);
            break;
          }
          case AdversarialMode::pgd:
            adv = pgd_batch(g, head, head_labels, pgd, rng, g.pixel_lo, g.pixel_hi);
            break;
          case AdversarialMode::none:
            break;
        }
        ArrayXd mixed = batch.value();
        mixed.head(per * adv_n) = adv.value();
        batch = Tensor(batch.shape(), std::move(mixed));
      }

      g.set_trainable(true);
      {
        Tape tape;
        Tensor loss = cross_entropy(g.forward(batch, Mode::train, &rng), labels);
        tape.backward(loss);
        loss_sum += loss.item() * static_cast<double>(count);
      }
      updater.step();
      seen += count;
      ++batch_index;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  g.set_trainable(false);
  if (test && !test->empty()) report.test_accuracy = accuracy(g, *test);
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace stadv
