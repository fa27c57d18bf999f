#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pagkd {

enum class Modality { kWli, kNbi };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view text);

// One image. `fold` is set for paired images that take part in
// cross-validation; unpaired images are always training data.
struct ManifestRow {
  std::string id;
  std::string path;
  std::size_t label = 0;
  Modality modality = Modality::kWli;
  std::string pair_id;  // empty when unpaired
  std::string split;
  std::optional<int> fold;

  bool paired() const { return !pair_id.empty(); }
};

// CSV with header: id,path,class,modality,pair_id,split,fold
struct Manifest {
  std::vector<ManifestRow> rows;
  bool has_fold_column = true;

  static Manifest parse_csv(std::string_view text);
  static Manifest read_csv(const std::filesystem::path& path);
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  std::size_t num_classes() const;
  const ManifestRow* find(std::string_view id) const;
};

}  // namespace pagkd
