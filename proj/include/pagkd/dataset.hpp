#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pagkd/manifest.hpp"
#include "pagkd/tensor.hpp"

namespace pagkd {

// Images [ch, H, W] keyed by manifest id. An optional access log records
// every id read, which the cross-validation driver uses to prove that test
// images never reach training.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::map<std::string, Tensor, std::less<>> images);

  // Loads every row's archive file; relative paths resolve against `root`.
  static ImageStore load(const Manifest& manifest, const std::filesystem::path& root);

  bool contains(std::string_view id) const { return images_.find(id) != images_.end(); }
  std::size_t size() const { return images_.size(); }
  const Tensor& image(std::string_view id) const;  // throws DataError for an unknown id
  // [N, ch, H, W] in the order given.
  Tensor stack(std::span<const std::string> ids) const;

  void set_access_log(std::set<std::string>* log) const { log_ = log; }

 private:
  std::map<std::string, Tensor, std::less<>> images_;
  mutable std::set<std::string>* log_ = nullptr;
};

// Manifest plus images, as produced by the generator.
struct Dataset {
  Manifest manifest;
  ImageStore images;

  static Dataset load(const std::filesystem::path& manifest_path);
};

}  // namespace pagkd
