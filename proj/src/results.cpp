#include "stadv/results.hpp"

#include "stadv/error.hpp"

#include <cmath>
#include <fstream>

namespace stadv {

namespace fs = std::filesystem;

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_nan(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

Json array_of(const Eigen::ArrayXd& a) { return Json(std::vector<double>(a.data(), a.data() + a.size())); }

Eigen::ArrayXd to_array(const Json& j) {
  const std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

Json outcome_record(const AttackOutcome& o, const RecordContext& ctx, int index) {
  Json j;
  j["record"] = "outcome";
  j["method"] = o.method;
  j["model"] = o.model;
  j["defense"] = ctx.defense;
  j["target"] = o.goal.target ? Json(*o.goal.target) : Json(nullptr);
  j["success"] = o.success;
  j["flow_tv"] = number(o.flow_tv);
  j["flow_l2"] = number(o.flow_l2);
  j["tau"] = number(o.tau);
  j["seed"] = ctx.seed;
  j["wall_ms"] = number(o.wall_ms);
  if (index >= 0) j["index"] = index;
  j["true_class"] = o.goal.true_class;
  j["goal"] = o.goal.is_targeted() ? "targeted" : "untargeted";
  j["predicted"] = o.predicted;
  j["adv_loss"] = number(o.adv_loss);
  j["linf"] = number(o.linf);
  j["l2"] = number(o.l2);
  j["termination"] = o.termination;
  if (!o.error.empty()) j["error"] = o.error;
  if (ctx.embed_arrays) {
    j["image"] = {{"height", o.adversarial.height},
                  {"width", o.adversarial.width},
                  {"channels", o.adversarial.channels},
                  {"lo", o.adversarial.lo},
                  {"hi", o.adversarial.hi},
                  {"pixels", array_of(o.adversarial.pixels)}};
    if (o.flow) j["flow"] = array_of(o.flow->values);
  }
  return j;
}

AttackOutcome outcome_from_record(const Json& j) {
  if (!j.contains("image")) throw ValueError("outcome record has no embedded image");
  AttackOutcome o;
  o.method = j.at("method").get<std::string>();
  o.model = j.value("model", "");
  const Json& im = j.at("image");
  o.adversarial = Image(im.at("height").get<int>(), im.at("width").get<int>(), im.at("channels").get<int>());
  o.adversarial.lo = im.at("lo").get<double>();
  o.adversarial.hi = im.at("hi").get<double>();
  o.adversarial.pixels = to_array(im.at("pixels"));
  if (o.adversarial.pixels.size() != Eigen::Index(o.adversarial.height) * o.adversarial.width * o.adversarial.channels) {
    throw ValueError("outcome record: pixel count does not match its geometry");
  }
  if (j.contains("flow")) o.flow = flow_from_values(o.adversarial.height, o.adversarial.width, to_array(j.at("flow")));
  o.goal.true_class = j.at("true_class").get<int>();
  if (!j.at("target").is_null()) o.goal.target = j.at("target").get<int>();
  o.success = j.at("success").get<bool>();
  o.predicted = j.value("predicted", -1);
  o.flow_tv = number_or_nan(j, "flow_tv");
  o.flow_l2 = number_or_nan(j, "flow_l2");
  o.tau = number_or_nan(j, "tau");
  o.adv_loss = number_or_nan(j, "adv_loss");
  o.linf = number_or_nan(j, "linf");
  o.l2 = number_or_nan(j, "l2");
  o.wall_ms = number_or_nan(j, "wall_ms");
  o.termination = j.value("termination", "");
  o.error = j.value("error", "");
  return o;
}

Json train_record(const TrainReport& r, const std::string& model, const TrainConfig& cfg) {
  Json j;
  j["record"] = "train_report";
  j["model"] = model;
  j["mode"] = to_string(r.mode);
  j["seed"] = r.seed;
  j["epochs"] = r.epoch_loss.size();
  j["epoch_loss"] = r.epoch_loss;
  j["test_accuracy"] = r.test_accuracy >= 0.0 ? Json(r.test_accuracy) : Json(nullptr);
  j["train_samples"] = r.train_samples;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer"] = to_string(cfg.optimizer);
  j["epsilon"] = cfg.epsilon;
  j["wall_ms"] = r.wall_ms;
  return j;
}

Json defense_record(const DefenseReport& r) {
  Json j;
  j["record"] = "defense_report";
  j["defense"] = r.defense;
  j["model"] = r.model;
  j["sample_count"] = r.sample_count;
  j["seed"] = r.seed;
  Json per = Json::object();
  for (const auto& [method, s] : r.per_attack) {
    per[method] = {{"count", s.count}, {"success_rate", s.success_rate}, {"recovered_accuracy", s.recovered_accuracy}};
  }
  j["per_attack"] = per;
  return j;
}

void write_records(std::span<const Json> records, const fs::path& path) {
  std::ofstream out = open_out(path, std::ios::trunc);
  for (const Json& r : records) out << r.dump() << "\n";
  if (!out) throw IoError(path.string() + ": write failed");
}

void write_results(std::span<const AttackOutcome> outcomes, const fs::path& path, const RecordContext& ctx) {
  std::vector<Json> records;
  records.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) records.push_back(outcome_record(outcomes[i], ctx, static_cast<int>(i)));
  write_records(records, path);
}

void append_record(const Json& record, const fs::path& path) {
  std::ofstream out = open_out(path, std::ios::app);
  out << record.dump() << "\n";
  if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<Json> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::vector<Json> out;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        out.push_back(Json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), offset + e.byte - (e.byte > 0 ? 1 : 0), "invalid JSON record");
      }
    }
    offset += line.size() + 1;
  }
  return out;
}

}  // namespace stadv
