#include "cefm/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace cefm {

void EmbeddingStore::add(const std::string& id, Embedding e) {
    if (contains(id)) throw DuplicateId("duplicate embedding id: " + id);
    if (empty()) {
        dim_ = e.dim();
    } else if (e.dim() != dim_) {
        throw StoreDimMismatch("embedding dim " + std::to_string(e.dim()) +
                               " does not match store dim " + std::to_string(dim_));
    }
    index_[id] = ids_.size();
    ids_.push_back(id);
    embeddings_.push_back(std::move(e));
}

const Embedding& EmbeddingStore::get(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw EmbeddingError("unknown embedding id: " + id);
    return embeddings_[it->second];
}

Embedding toy_patch_encoder(const RgbImage& image, int grid) {
    if (grid < 1) throw ImageTooSmall("toy encoder grid must be >= 1");
    if (image.width < grid || image.height < grid)
        throw ImageTooSmall("image " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + " smaller than grid " +
                            std::to_string(grid));

    const std::vector<double> intensity = luma(image);
    Embedding e;
    e.values.reserve(static_cast<std::size_t>(grid) * grid * 2);

    for (int cy = 0; cy < grid; ++cy) {
        const int y0 = cy * image.height / grid;
        const int y1 = (cy + 1) * image.height / grid;
        for (int cx = 0; cx < grid; ++cx) {
            const int x0 = cx * image.width / grid;
            const int x1 = (cx + 1) * image.width / grid;
            const std::size_t n = static_cast<std::size_t>(y1 - y0) * (x1 - x0);

            double sum = 0.0;
            double lo = intensity[static_cast<std::size_t>(y0) * image.width + x0];
            double hi = lo;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const double v = intensity[static_cast<std::size_t>(y) * image.width + x];
                    sum += v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            const double mean = sum / static_cast<double>(n);

            double var = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const double d =
                        intensity[static_cast<std::size_t>(y) * image.width + x] - mean;
                    var += d * d;
                }
            e.values.push_back(static_cast<float>(mean));
            e.values.push_back(
                lo == hi ? 0.0f : static_cast<float>(std::sqrt(var / static_cast<double>(n))));
        }
    }
    return e;
}

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw Truncated("EMB1 file ends mid-record");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(data[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

EmbeddingStore read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EmbeddingError("cannot open: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    ByteReader rd{data};
    if (data.size() < 4 || data.compare(0, 4, "EMB1") != 0)
        throw BadMagic("not an EMB1 file: " + path);
    rd.pos = 4;

    const std::uint32_t count = rd.u32();
    const std::uint32_t dim = rd.u32();

    EmbeddingStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t idlen = rd.u16();
        const std::string id = rd.bytes(idlen);
        Embedding e;
        e.values.reserve(dim);
        for (std::uint32_t k = 0; k < dim; ++k) e.values.push_back(rd.f32());
        store.add(id, std::move(e));
    }
    if (rd.pos != data.size()) throw Truncated("EMB1 file has trailing bytes: " + path);
    return store;
}

void write_embeddings(const EmbeddingStore& store, const std::string& path) {
    if (store.empty()) throw EmptyStore("refusing to write an empty EMB1 store");

    std::string buf;
    buf += "EMB1";
    put_u32(buf, static_cast<std::uint32_t>(store.size()));
    put_u32(buf, static_cast<std::uint32_t>(store.dim()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& id = store.id_at(i);
        if (id.size() > 0xffff) throw EmbeddingError("embedding id longer than 65535 bytes");
        put_u16(buf, static_cast<std::uint16_t>(id.size()));
        buf += id;
        for (float v : store.at(i).values) put_f32(buf, v);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw EmbeddingError("cannot write: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw EmbeddingError("write failed: " + path);
}

}  // namespace cefm
