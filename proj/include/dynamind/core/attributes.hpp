#pragma once

#include "dynamind/core/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dynamind::core {

// Concept -> meta-task label table (coarse category plus the small attribute
// tasks). Shipped as data for the 40-concept default; synthetic worlds with a
// different concept count fall back to the modulo coarse map.
class AttributeTable {
 public:
  static AttributeTable load(const std::filesystem::path& path);
  // coarse = concept % 9, attributes derived from the coarse class.
  static AttributeTable generic(int num_concepts);

  int num_concepts() const { return int(coarse_.size()); }

  // task is one of: 40c, 9c, color, fast_slow, numbers, human_face, human
  std::vector<int> labels_for_task(const std::string& task) const;
  int num_task_classes(const std::string& task) const;
  static const std::vector<std::string>& task_names();

  const std::vector<std::string>& concept_names() const { return names_; }
  int coarse_of(int concept_id) const { return coarse_.at(std::size_t(concept_id)); }

 private:
  std::vector<std::string> names_;
  std::vector<int> coarse_, color_, fast_, multiple_, face_, human_;
};

}  // namespace dynamind::core
