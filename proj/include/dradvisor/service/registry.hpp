#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dradvisor/ensemble.hpp"
#include "dradvisor/error.hpp"
#include "dradvisor/horizon.hpp"
#include "dradvisor/mbcrt.hpp"

namespace dra::service {

using AnyModel = std::variant<Regressor, AutoRegressiveTreeModel, MbcrtModel>;

inline AnyModel model_from_json(const nlohmann::json& j) {
  const auto type = j.value("type", std::string());
  if (type == "ar") return AutoRegressiveTreeModel::from_json(j);
  if (type == "mbcrt") return MbcrtModel::from_json(j);
  return Regressor::from_json(j);
}

inline nlohmann::json model_to_json(const AnyModel& m) {
  return std::visit([](const auto& v) { return v.to_json(); }, m);
}

inline std::string model_type(const AnyModel& m) { return model_to_json(m).value("type", std::string()); }

/// Persisted envelope: {name, version, type, schema, trained_at, metrics, model}.
struct ModelRecord {
  std::string name;
  int version = 1;
  std::string type;
  nlohmann::json schema = nlohmann::json::array();
  std::string trained_at;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json model;

  nlohmann::json summary() const {
    return {{"name", name}, {"version", version}, {"type", type}, {"schema", schema}, {"trained_at", trained_at}, {"metrics", metrics}};
  }

  nlohmann::json to_json() const {
    auto j = summary();
    j["model"] = model;
    return j;
  }

  static ModelRecord from_json(const nlohmann::json& j) {
    try {
      ModelRecord r;
      r.name = j.at("name").get<std::string>();
      r.version = j.value("version", 1);
      r.model = j.at("model");
      r.type = j.value("type", r.model.value("type", std::string()));
      r.schema = j.value("schema", nlohmann::json::array());
      r.trained_at = j.value("trained_at", std::string());
      r.metrics = j.value("metrics", nlohmann::json::object());
      return r;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("malformed model record: ") + e.what());
    }
  }
};

inline bool valid_model_name(std::string_view name) {
  if (name.empty() || name.size() > 128) return false;
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return name.front() != '.';
}

inline std::string utc_now() {
  return format_timestamp(std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

struct LoadedModel {
  ModelRecord record;
  AnyModel model;
};

inline LoadedModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  auto record = ModelRecord::from_json(j);
  auto model = model_from_json(record.model);
  return {std::move(record), std::move(model)};
}

inline void save_model_file(const std::filesystem::path& path, const ModelRecord& record) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp);
    out << record.to_json().dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

/// Directory of <name>.json records; readers see immutable snapshots swapped atomically on upload.
class ModelRegistry {
 public:
  using Snapshot = std::map<std::string, std::shared_ptr<const LoadedModel>, std::less<>>;

  explicit ModelRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) fail(ErrorCode::IoError, "registry directory " + dir_.string() + " does not exist");
    auto snap = std::make_shared<Snapshot>();
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      if (entry.path().extension() != ".json") continue;
      auto loaded = std::make_shared<const LoadedModel>(load_model_file(entry.path()));
      (*snap)[loaded->record.name] = std::move(loaded);
    }
    std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(snap)));
  }

  std::shared_ptr<const Snapshot> snapshot() const { return std::atomic_load(&snapshot_); }

  std::shared_ptr<const LoadedModel> get(std::string_view name) const {
    const auto snap = snapshot();
    auto it = snap->find(name);
    if (it == snap->end()) fail(ErrorCode::NotFound, "unknown model '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<nlohmann::json> list() const {
    std::vector<nlohmann::json> out;
    for (const auto& [name, m] : *snapshot()) out.push_back(m->record.summary());
    return out;
  }

  /// Validates by deserializing, persists, then publishes a new snapshot. Versions increase per name.
  std::shared_ptr<const LoadedModel> put(ModelRecord record) {
    if (!valid_model_name(record.name)) fail(ErrorCode::InvalidArgument, "invalid model name '" + record.name + "'");
    auto model = model_from_json(record.model);
    record.type = model_type(model);
    if (record.trained_at.empty()) record.trained_at = utc_now();
    std::lock_guard lock(write_mutex_);
    const auto current = snapshot();
    if (auto it = current->find(record.name); it != current->end()) record.version = it->second->record.version + 1;
    save_model_file(dir_ / (record.name + ".json"), record);
    auto loaded = std::make_shared<const LoadedModel>(LoadedModel{std::move(record), std::move(model)});
    auto next = std::make_shared<Snapshot>(*current);
    (*next)[loaded->record.name] = loaded;
    std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(next)));
    return loaded;
  }

  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::mutex write_mutex_;
};

}  // namespace dra::service
