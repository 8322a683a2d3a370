#include "dass/distill.hpp"

#include <sstream>

#include <json.hpp>

namespace dass {

std::string metrics_jsonl(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  for (const auto& r : log) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_loss"] = r.train_loss;
    j["eval_mAP"] = r.eval_map;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace dass
