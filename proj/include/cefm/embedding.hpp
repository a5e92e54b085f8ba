#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cefm/raster.hpp"

namespace cefm {

struct EmbeddingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagic : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};
struct Truncated : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};
struct DuplicateId : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};
struct EmptyStore : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};
struct ImageTooSmall : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};
struct StoreDimMismatch : EmbeddingError {
    using EmbeddingError::EmbeddingError;
};

// Fixed-dimension feature vector; float on disk, double in arithmetic.
struct Embedding {
    std::vector<float> values;

    int dim() const { return static_cast<int>(values.size()); }
    std::vector<double> as_double() const { return {values.begin(), values.end()}; }
};

// Insertion-ordered id -> embedding map with one shared dimension.
class EmbeddingStore {
  public:
    void add(const std::string& id, Embedding e);
    bool contains(const std::string& id) const { return index_.count(id) > 0; }
    const Embedding& get(const std::string& id) const;
    const Embedding& at(std::size_t i) const { return embeddings_[i]; }
    const std::string& id_at(std::size_t i) const { return ids_[i]; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    int dim() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }

  private:
    std::vector<std::string> ids_;
    std::vector<Embedding> embeddings_;
    std::map<std::string, std::size_t> index_;
    int dim_ = 0;
};

// Deterministic stand-in for a frozen pretrained image encoder: grid x grid
// cells, each contributing (mean luma, luma std-dev). dim = 2 * grid^2.
Embedding toy_patch_encoder(const RgbImage& image, int grid = 8);

// EMB1, little-endian: magic "EMB1", u32 record count, u32 dim, then per
// record u16 id byte length, id bytes, dim f32 values.
EmbeddingStore read_embeddings(const std::string& path);
void write_embeddings(const EmbeddingStore& store, const std::string& path);

}  // namespace cefm
