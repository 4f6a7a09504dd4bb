#include "dynamind/core/attributes.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace dynamind::core {

AttributeTable AttributeTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open attribute table: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("bad attribute table json " + path.string() + ": " + e.what());
  }
  AttributeTable t;
  const auto& concepts = j.at("concepts");
  t.names_.resize(concepts.size());
  t.coarse_.resize(concepts.size());
  t.color_.resize(concepts.size());
  t.fast_.resize(concepts.size());
  t.multiple_.resize(concepts.size());
  t.face_.resize(concepts.size());
  t.human_.resize(concepts.size());
  for (const auto& c : concepts) {
    const auto id = c.at("id").get<std::size_t>();
    if (id >= concepts.size()) throw ValidationError("attribute table: id out of range");
    t.names_[id] = c.at("name").get<std::string>();
    t.coarse_[id] = c.at("coarse").get<int>();
    t.color_[id] = c.at("color").get<int>();
    t.fast_[id] = c.at("fast").get<int>();
    t.multiple_[id] = c.at("multiple").get<int>();
    t.face_[id] = c.at("face").get<int>();
    t.human_[id] = c.at("human").get<int>();
  }
  return t;
}

AttributeTable AttributeTable::generic(int num_concepts) {
  if (num_concepts < 1) throw ValidationError("attribute table: need at least one concept");
  AttributeTable t;
  for (int i = 0; i < num_concepts; ++i) {
    t.names_.push_back("concept-" + std::to_string(i));
    const int coarse = i % 9;
    t.coarse_.push_back(coarse);
    t.color_.push_back(coarse % 5);
    t.fast_.push_back(coarse == 3 || coarse == 8 ? 1 : 0);
    t.multiple_.push_back(i % 3 == 0 ? 1 : 0);
    t.face_.push_back(coarse == 4 ? 1 : 0);
    t.human_.push_back(coarse == 3 || coarse == 4 ? 1 : 0);
  }
  return t;
}

const std::vector<std::string>& AttributeTable::task_names() {
  static const std::vector<std::string> names = {"40c", "9c", "color", "fast_slow", "numbers", "human_face", "human"};
  return names;
}

std::vector<int> AttributeTable::labels_for_task(const std::string& task) const {
  if (task == "40c") {
    std::vector<int> ident(coarse_.size());
    for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = int(i);
    return ident;
  }
  if (task == "9c") return coarse_;
  if (task == "color") return color_;
  if (task == "fast_slow") return fast_;
  if (task == "numbers") return multiple_;
  if (task == "human_face") return face_;
  if (task == "human") return human_;
  throw ValidationError("unknown classification task: " + task);
}

int AttributeTable::num_task_classes(const std::string& task) const {
  const auto labels = labels_for_task(task);
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace dynamind::core
