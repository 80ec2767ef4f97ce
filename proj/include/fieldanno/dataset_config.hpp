#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "fieldanno/annotation_format.hpp"

namespace fieldanno {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The `data.yaml` descriptor used by YOLO training layouts.
struct DatasetConfig {
  ClassMap classes;
  std::string train;
  std::string val;
  std::string test;
  std::string root;  // optional `path:` entry
};

namespace detail {

inline DatasetConfig read_dataset_config(const YAML::Node& doc) {
  if (!doc.IsMap()) throw ConfigError("dataset descriptor must be a key-value document");

  auto scalar = [&](const char* key) {
    const auto node = doc[key];
    if (!node || !node.IsScalar()) throw ConfigError(std::string("missing key '") + key + "'");
    return node.as<std::string>();
  };

  DatasetConfig cfg;
  cfg.train = scalar("train");
  cfg.val = scalar("val");
  cfg.test = scalar("test");
  if (doc["path"] && doc["path"].IsScalar()) cfg.root = doc["path"].as<std::string>();

  const auto names = doc["names"];
  if (!names) throw ConfigError("missing key 'names'");
  std::vector<std::string> list;
  if (names.IsSequence()) {
    for (const auto& n : names) list.push_back(n.as<std::string>());
  } else if (names.IsMap()) {
    // `names: {0: a, 1: b}` form; ids must be exactly 0..n-1.
    std::map<long, std::string> by_id;
    for (const auto& kv : names) {
      const long id = kv.first.as<long>();
      if (!by_id.emplace(id, kv.second.as<std::string>()).second)
        throw ConfigError("class id " + std::to_string(id) + " listed twice");
    }
    long expect = 0;
    for (auto& [id, n] : by_id) {
      if (id != expect++) throw ConfigError("class ids in 'names' must be contiguous from 0");
      list.push_back(std::move(n));
    }
  } else {
    throw ConfigError("'names' must be a list or an id-to-name map");
  }

  try {
    cfg.classes = ClassMap(std::move(list));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (doc["nc"] && doc["nc"].as<std::size_t>() != cfg.classes.size())
    throw ConfigError("'nc' disagrees with the number of names");
  return cfg;
}

}  // namespace detail

inline DatasetConfig load_dataset_config(const std::string& text) {
  try {
    return detail::read_dataset_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed dataset descriptor: ") + e.what());
  }
}

inline std::string dump_dataset_config(const DatasetConfig& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  if (!cfg.root.empty()) out << YAML::Key << "path" << YAML::Value << cfg.root;
  out << YAML::Key << "train" << YAML::Value << cfg.train;
  out << YAML::Key << "val" << YAML::Value << cfg.val;
  out << YAML::Key << "test" << YAML::Value << cfg.test;
  out << YAML::Key << "nc" << YAML::Value << cfg.classes.size();
  out << YAML::Key << "names" << YAML::Value << YAML::Flow << cfg.classes.names();
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace fieldanno
