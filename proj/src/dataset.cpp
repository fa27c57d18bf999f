#include "pagkd/dataset.hpp"

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"

namespace pagkd {

ImageStore::ImageStore(std::map<std::string, Tensor, std::less<>> images) : images_(std::move(images)) {}

ImageStore ImageStore::load(const Manifest& manifest, const std::filesystem::path& root) {
  std::map<std::string, Tensor, std::less<>> images;
  for (const auto& row : manifest.rows) {
    std::filesystem::path p(row.path);
    if (p.is_relative()) p = root / p;
    auto entries = read_archive(p);
    if (entries.size() != 1 || entries[0].tensor.rank() != 3) {
      throw DataError("image file " + p.string() + " must hold one [ch,H,W] tensor");
    }
    images.emplace(row.id, entries[0].tensor);
  }
  return ImageStore(std::move(images));
}

const Tensor& ImageStore::image(std::string_view id) const {
  auto it = images_.find(id);
  if (it == images_.end()) throw DataError("no image for sample '" + std::string(id) + "'");
  if (log_ != nullptr) log_->insert(it->first);
  return it->second;
}

Tensor ImageStore::stack(std::span<const std::string> ids) const {
  if (ids.empty()) throw DataError("cannot stack an empty image list");
  const Tensor& first = image(ids[0]);
  Shape shape{ids.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const auto& id : ids) {
    const Tensor& img = image(id);
    if (img.shape() != first.shape()) {
      throw DimensionError("image '" + id + "' has shape " + shape_str(img.shape()) + ", expected " +
                           shape_str(first.shape()));
    }
    data.insert(data.end(), img.data().begin(), img.data().end());
  }
  return Tensor::from(std::move(shape), std::move(data));
}

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = Manifest::read_csv(manifest_path);
  ds.images = ImageStore::load(ds.manifest, manifest_path.parent_path());
  return ds;
}

}  // namespace pagkd
