#ifndef STADV_RESULTS_HPP
#define STADV_RESULTS_HPP

#include "stadv/attacks.hpp"
#include "stadv/defenses.hpp"
#include "stadv/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stadv {

using Json = nlohmann::ordered_json;

// Shared fields stamped on every outcome record.
struct RecordContext {
  std::string defense = "none";
  std::uint64_t seed = 0;
  bool embed_arrays = true;  // flow values and exact adversarial pixels
};

// Stable keys: method, model, defense, target, success, flow_tv, flow_l2,
// tau, seed, wall_ms, followed by diagnostics. Non-finite numbers become null.
Json outcome_record(const AttackOutcome& o, const RecordContext& ctx, int index = -1);
Json train_record(const TrainReport& r, const std::string& model, const TrainConfig& cfg);
Json defense_record(const DefenseReport& r);

// Rebuilds the stored image, flow and goal from an outcome record made with
// embed_arrays (success is taken from the record, not recomputed).
AttackOutcome outcome_from_record(const Json& j);

// One JSON object per line. An empty list gives an empty file.
void write_results(std::span<const AttackOutcome> outcomes, const std::filesystem::path& path,
                   const RecordContext& ctx = {});
void write_records(std::span<const Json> records, const std::filesystem::path& path);
void append_record(const Json& record, const std::filesystem::path& path);
std::vector<Json> read_records(const std::filesystem::path& path);

}  // namespace stadv

#endif  // STADV_RESULTS_HPP
