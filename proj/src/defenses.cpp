#include "stadv/defenses.hpp"

#include "stadv/attacks.hpp"
#include "stadv/error.hpp"

#include <algorithm>

namespace stadv {

using Eigen::ArrayXd;

namespace {

// 3x3 replicate-padded mean over an interleaved [H,W,C] block.
void blur_block(const double* in, double* out, int h, int w, int c) {
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (int du = -1; du <= 1; ++du) {
          const int uu = std::clamp(u + du, 0, h - 1);
          for (int dv = -1; dv <= 1; ++dv) {
            const int vv = std::clamp(v + dv, 0, w - 1);
            acc += in[(uu * w + vv) * c + k];
          }
        }
        out[(u * w + v) * c + k] = acc / 9.0;
      }
    }
  }
}

// Adjoint of blur_block: scatter each output gradient to its window.
void blur_block_adjoint(const double* g, double* out, int h, int w, int c) {
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      for (int k = 0; k < c; ++k) {
        const double share = g[(u * w + v) * c + k] / 9.0;
        for (int du = -1; du <= 1; ++du) {
          const int uu = std::clamp(u + du, 0, h - 1);
          for (int dv = -1; dv <= 1; ++dv) {
            const int vv = std::clamp(v + dv, 0, w - 1);
            out[(uu * w + vv) * c + k] += share;
          }
        }
      }
    }
  }
}

}  // namespace

Image mean_blur_restore(const Image& x) {
  Image out = x;
  blur_block(x.pixels.data(), out.pixels.data(), x.height, x.width, x.channels);
  return out;
}

Tensor mean_blur(const Tensor& batch) {
  if (batch.rank() != 4) throw ShapeError("mean_blur expects [N,H,W,C], got " + shape_string(batch.shape()));
  const int n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  const Eigen::Index per = Eigen::Index(h) * w * c;
  ArrayXd out(batch.size());
  for (int i = 0; i < n; ++i) blur_block(batch.value().data() + i * per, out.data() + i * per, h, w, c);
  return make_op_result("mean_blur", batch.shape(), std::move(out), {&batch},
                        [in = batch.node(), n, h, w, c, per](const ArrayXd& g) {
                          ArrayXd gx = ArrayXd::Zero(g.size());
                          for (int i = 0; i < n; ++i) {
                            blur_block_adjoint(g.data() + i * per, gx.data() + i * per, h, w, c);
                          }
                          in->accumulate(gx);
                        });
}

const char* to_string(Defense d) { return d == Defense::blur ? "blur" : "none"; }

Defense parse_defense(const std::string& name) {
  if (name == "none") return Defense::none;
  if (name == "blur") return Defense::blur;
  throw ValueError("unknown defense '" + name + "' (expected none or blur)");
}

namespace {

std::vector<int> defended_predictions(const LogitModel& g, Defense defense, std::span<const Image> images) {
  if (defense == Defense::none) return predict_batch(g, images);
  return predict_batch(BlurredModel(g), images);
}

}  // namespace

DefenseReport evaluate_defense(const LogitModel& g, Defense defense, std::span<const AttackOutcome> outcomes,
                               std::span<const int> true_labels, std::uint64_t seed) {
  if (outcomes.size() != true_labels.size()) {
    throw ValueError("evaluate_defense: " + std::to_string(outcomes.size()) + " outcomes vs " +
                     std::to_string(true_labels.size()) + " labels");
  }
  if (outcomes.empty()) throw ValueError("evaluate_defense: no outcomes");
  DefenseReport report;
  report.defense = to_string(defense);
  report.model = g.name();
  report.sample_count = static_cast<int>(outcomes.size());
  report.seed = seed;

  std::vector<Image> images;
  images.reserve(outcomes.size());
  for (const AttackOutcome& o : outcomes) images.push_back(o.adversarial);
  const std::vector<int> pred = defended_predictions(g, defense, images);

  std::map<std::string, std::pair<int, int>> tallies;  // goal met, recovered
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    DefenseStats& s = report.per_attack[outcomes[i].method];
    ++s.count;
    auto& t = tallies[outcomes[i].method];
    t.first += outcomes[i].goal.achieved(pred[i]);
    t.second += pred[i] == true_labels[i];
  }
  for (auto& [method, s] : report.per_attack) {
    s.success_rate = double(tallies[method].first) / s.count;
    s.recovered_accuracy = double(tallies[method].second) / s.count;
  }
  return report;
}

double defended_accuracy(const LogitModel& g, Defense defense, std::span<const Image> images,
                         std::span<const int> labels) {
  if (images.size() != labels.size() || images.empty()) {
    throw ValueError("defended_accuracy: need equal, non-zero image and label counts");
  }
  const std::vector<int> pred = defended_predictions(g, defense, images);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return double(hits) / double(pred.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.count = static_cast<int>(values.size());
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= m.count;
  for (double v : values) m.stddev += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(m.stddev / m.count);
  return m;
}

FlowSummary summarize_flows(std::span<const AttackOutcome> outcomes) {
  std::vector<double> tv, l2;
  for (const AttackOutcome& o : outcomes) {
    if (!o.success || !o.flow) continue;
    tv.push_back(o.flow_tv);
    l2.push_back(o.flow_l2);
  }
  return {mean_std(tv), mean_std(l2)};
}

}  // namespace stadv
