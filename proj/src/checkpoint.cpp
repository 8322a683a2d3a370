#include "dass/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dass {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'S', 'S', 'C', 'K', 'P', '1'};

void wr_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t rd_u64(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  require_arg(data.names.size() == data.arrays.size() && data.names.size() == data.dims.size(),
              "save_checkpoint: table size mismatch");
  nlohmann::json header;
  header["version"] = 1;
  header["model_kind"] = data.model_kind;
  header["config"] = nlohmann::json::parse(data.config_json);
  header["epoch"] = data.epoch;
  header["seed"] = data.seed;
  header["adam_step"] = data.adam_step;
  header["dtype"] = "f32";
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < data.names.size(); ++i)
    table.push_back({{"name", data.names[i]},
                     {"dims", data.dims[i]},
                     {"len", data.arrays[i].size()}});
  header["arrays"] = table;
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  wr_u64(f, hs.size());
  f.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& arr : data.arrays)
    f.write(reinterpret_cast<const char*>(arr.data()), std::streamsize(arr.size() * sizeof(float)));
  if (!f) throw IoError("save_checkpoint: write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("load_checkpoint: bad magic (not a checkpoint): " + path);
  std::uint64_t hlen = rd_u64(f);
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  if (!f) throw IoError("load_checkpoint: truncated header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw IoError("load_checkpoint: corrupt header: " + path);
  if (header.value("version", 0) != 1)
    throw IoError("load_checkpoint: unsupported version: " + path);

  CheckpointData data;
  data.model_kind = header.value("model_kind", "");
  data.config_json = header["config"].dump();
  data.epoch = header.value("epoch", 0);
  data.seed = header.value("seed", std::uint64_t(0));
  data.adam_step = header.value("adam_step", 0L);
  for (const auto& entry : header["arrays"]) {
    data.names.push_back(entry["name"].get<std::string>());
    data.dims.push_back(entry["dims"].get<std::vector<int>>());
    std::size_t len = entry["len"].get<std::size_t>();
    std::vector<float> arr(len, 0.0f);
    f.read(reinterpret_cast<char*>(arr.data()), std::streamsize(len * sizeof(float)));
    if (!f) throw IoError("load_checkpoint: truncated data: " + path);
    data.arrays.push_back(std::move(arr));
  }
  return data;
}

std::string model_config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["group_depths"] = cfg.group_depths;
  j["channel_dims"] = cfg.channel_dims;
  j["state_size"] = cfg.state_size;
  j["dt_rank"] = cfg.dt_rank;
  j["num_classes"] = cfg.num_classes;
  j["pooling"] = pooling_name(cfg.pooling);
  j["patch_size"] = cfg.patch_size;
  j["ffn_ratio"] = cfg.ffn_ratio;
  j["expand"] = cfg.expand;
  j["droppath"] = cfg.droppath;
  j["tie_directions"] = cfg.tie_directions;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  ModelConfig cfg;
  auto gd = j["group_depths"].get<std::vector<int>>();
  auto cd = j["channel_dims"].get<std::vector<int>>();
  require_arg(gd.size() == 4 && cd.size() == 4, "model config: need 4 groups");
  std::copy(gd.begin(), gd.end(), cfg.group_depths.begin());
  std::copy(cd.begin(), cd.end(), cfg.channel_dims.begin());
  cfg.state_size = j["state_size"].get<int>();
  cfg.dt_rank = j["dt_rank"].get<int>();
  cfg.num_classes = j["num_classes"].get<int>();
  cfg.pooling = pooling_from_name(j["pooling"].get<std::string>());
  cfg.patch_size = j["patch_size"].get<int>();
  cfg.ffn_ratio = j["ffn_ratio"].get<double>();
  cfg.expand = j["expand"].get<int>();
  cfg.droppath = j["droppath"].get<double>();
  cfg.tie_directions = j["tie_directions"].get<bool>();
  return cfg;
}

std::string attn_config_json(const AttnConfig& cfg) {
  nlohmann::json j;
  j["patch_t"] = cfg.patch_t;
  j["patch_f"] = cfg.patch_f;
  j["stride"] = cfg.stride;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["width"] = cfg.width;
  j["num_classes"] = cfg.num_classes;
  j["ffn_ratio"] = cfg.ffn_ratio;
  j["use_cls"] = cfg.use_cls;
  j["memory_budget"] = cfg.memory_budget;
  return j.dump();
}

AttnConfig attn_config_from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  AttnConfig cfg;
  cfg.patch_t = j["patch_t"].get<int>();
  cfg.patch_f = j["patch_f"].get<int>();
  cfg.stride = j["stride"].get<int>();
  cfg.depth = j["depth"].get<int>();
  cfg.heads = j["heads"].get<int>();
  cfg.width = j["width"].get<int>();
  cfg.num_classes = j["num_classes"].get<int>();
  cfg.ffn_ratio = j["ffn_ratio"].get<double>();
  cfg.use_cls = j["use_cls"].get<bool>();
  cfg.memory_budget = j["memory_budget"].get<std::size_t>();
  return cfg;
}

CheckpointData checkpoint_from(const Classifier<float>& model, int epoch, std::uint64_t seed,
                               const std::vector<float>* adam_m,
                               const std::vector<float>* adam_v, long adam_step) {
  CheckpointData data;
  data.model_kind = model.kind();
  if (model.kind() == "dass") {
    const auto& m = static_cast<const DassClassifier<float>&>(model).model();
    data.config_json = model_config_json(m.config());
  } else {
    const auto& m = static_cast<const AttnClassifier<float>&>(model).model();
    data.config_json = attn_config_json(m.config());
  }
  data.epoch = epoch;
  data.seed = seed;
  data.adam_step = adam_step;
  const auto& theta = model.theta();
  for (const auto& [name, slice] : model.layout().entries()) {
    data.names.push_back(name);
    data.dims.push_back(slice.dims);
    data.arrays.emplace_back(theta.begin() + std::ptrdiff_t(slice.off),
                             theta.begin() + std::ptrdiff_t(slice.off + slice.len));
  }
  if (adam_m && adam_v) {
    data.names.push_back("optim.adam.m");
    data.dims.push_back({int(adam_m->size())});
    data.arrays.push_back(*adam_m);
    data.names.push_back("optim.adam.v");
    data.dims.push_back({int(adam_v->size())});
    data.arrays.push_back(*adam_v);
  }
  return data;
}

std::unique_ptr<Classifier<float>> classifier_from_checkpoint(const CheckpointData& data) {
  std::unique_ptr<Classifier<float>> model;
  if (data.model_kind == "dass") {
    model = std::make_unique<DassClassifier<float>>(model_config_from_json(data.config_json));
  } else if (data.model_kind == "attn") {
    model = std::make_unique<AttnClassifier<float>>(attn_config_from_json(data.config_json));
  } else {
    throw IoError("checkpoint: unknown model kind: " + data.model_kind);
  }
  auto& theta = model->theta();
  const auto& layout = model->layout();
  std::size_t restored = 0;
  for (std::size_t i = 0; i < data.names.size(); ++i) {
    const std::string& name = data.names[i];
    if (name.rfind("optim.", 0) == 0) continue;
    const Slice* slice = layout.find(name);
    if (!slice) throw IoError("checkpoint: unknown array for this config: " + name);
    if (slice->len != data.arrays[i].size() || slice->dims != data.dims[i])
      throw IoError("checkpoint: shape mismatch for " + name);
    std::copy(data.arrays[i].begin(), data.arrays[i].end(),
              theta.begin() + std::ptrdiff_t(slice->off));
    restored += slice->len;
  }
  if (restored != theta.size())
    throw IoError("checkpoint: incomplete parameter set (" + std::to_string(restored) + " of " +
                  std::to_string(theta.size()) + " values)");
  return model;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("file_hash: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace dass
