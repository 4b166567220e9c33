#include "topformer/iofmt.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "topformer/model.hpp"

namespace topformer {

void WeightStore::put(std::string name, Tensor t) {
    if (index_.count(name))
        throw ConfigError("weight store already has an entry named '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
}

bool WeightStore::contains(const std::string& name) const {
    return index_.count(name) != 0;
}

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw StateError("weight store has no entry named '" + name + "'");
    return entries_[it->second].second;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

// Cursor over a loaded file; every read checks bounds and reports the byte
// offset where the data ran out.
struct Reader {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > size)
            throw FormatError(std::string("weight file truncated at byte ") +
                              std::to_string(size) + " while reading " + what +
                              " (offset " + std::to_string(pos) + ")");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on '" + path + "'");
    return bytes;
}

void write_file(const std::string& path, const std::uint8_t* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed on '" + path + "'");
}

}  // namespace

void save_weights(const WeightStore& store, const std::string& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'T', 'P', 'F', 'W'});
    put_u32(out, 1);
    if (store.size() > std::numeric_limits<std::uint32_t>::max())
        throw FormatError("weight store too large for the container");
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store.entries()) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw FormatError("weight name too long: '" + name + "'");
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(0);  // dtype f32
        out.push_back(4);  // rank
        const Shape s = t.shape();
        for (std::int64_t d : {s.n, s.c, s.h, s.w})
            put_u32(out, static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(out, t.data()[i]);
    }
    write_file(path, out.data(), out.size());
}

WeightStore load_weights(const std::string& path) {
    const auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size()};

    r.need(4, "magic");
    if (std::memcmp(r.p, "TPFW", 4) != 0)
        throw FormatError("bad magic at byte 0 in '" + path + "' (expected TPFW)");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError("unsupported version " + std::to_string(version) +
                          " at byte 4");
    const std::uint32_t count = r.u32("record count");

    WeightStore store;
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        const std::uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(r.p + r.pos), name_len);
        r.pos += name_len;

        const std::size_t dtype_at = r.pos;
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype != 0)
            throw FormatError("unsupported dtype " + std::to_string(dtype) +
                              " at byte " + std::to_string(dtype_at) + " (record '" +
                              name + "')");
        const std::size_t rank_at = r.pos;
        const std::uint8_t rank = r.u8("rank");
        if (rank < 1 || rank > 4)
            throw FormatError("unsupported rank " + std::to_string(rank) + " at byte " +
                              std::to_string(rank_at) + " (record '" + name + "')");
        std::int64_t dims[4] = {1, 1, 1, 1};
        for (int i = 0; i < rank; ++i)
            dims[4 - rank + i] = static_cast<std::int64_t>(r.u32("dims"));
        const Shape shape{dims[0], dims[1], dims[2], dims[3]};

        Tensor t(shape);
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.f32("payload");
        store.put(std::move(name), std::move(t));
    }
    if (r.pos != bytes.size())
        throw FormatError("trailing bytes at offset " + std::to_string(r.pos) + " in '" +
                          path + "'");
    return store;
}

WeightStore random_init(const Model& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    WeightStore ws;
    for (const ParamSlot& slot : param_slots(model)) {
        Tensor t(slot.shape);
        switch (slot.kind) {
            case ParamKind::conv_weight: {
                const float bound =
                    std::sqrt(6.0f / static_cast<float>(slot.fan_in));
                std::uniform_real_distribution<float> dist(-bound, bound);
                for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
                break;
            }
            case ParamKind::conv_bias: {
                const float bound =
                    1.0f / std::sqrt(static_cast<float>(slot.fan_in));
                std::uniform_real_distribution<float> dist(-bound, bound);
                for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
                break;
            }
            case ParamKind::bn_gamma:
            case ParamKind::bn_var:
                for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0f;
                break;
            case ParamKind::bn_beta:
            case ParamKind::bn_mean:
                break;  // zero-filled
        }
        ws.put(slot.name, std::move(t));
    }
    return ws;
}

namespace {

// Netpbm header token, skipping whitespace and # comments.
std::string pnm_token(Reader& r) {
    for (;;) {
        r.need(1, "header");
        const char c = static_cast<char>(r.p[r.pos]);
        if (c == '#') {
            while (r.pos < r.size && r.p[r.pos] != '\n') ++r.pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++r.pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (r.pos < r.size &&
           !std::isspace(static_cast<unsigned char>(r.p[r.pos])) && r.p[r.pos] != '#')
        tok.push_back(static_cast<char>(r.p[r.pos++]));
    return tok;
}

std::int64_t pnm_int(Reader& r, const char* what) {
    const std::string tok = pnm_token(r);
    try {
        const std::int64_t v = std::stoll(tok);
        if (v < 1) throw std::out_of_range("non-positive");
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("bad ") + what + " '" + tok + "' in netpbm header");
    }
}

struct PnmImage {
    std::int64_t w, h;
    const std::uint8_t* pixels;
};

PnmImage pnm_open(Reader& r, const char* magic, std::int64_t bpp) {
    const std::string m = pnm_token(r);
    if (m != magic)
        throw FormatError("bad netpbm magic '" + m + "' (expected " + magic + ")");
    const std::int64_t w = pnm_int(r, "width");
    const std::int64_t h = pnm_int(r, "height");
    const std::int64_t maxval = pnm_int(r, "maxval");
    if (maxval != 255)
        throw FormatError("unsupported maxval " + std::to_string(maxval) +
                          " (only 255)");
    r.need(1, "pixel separator");
    ++r.pos;  // single whitespace byte after maxval
    r.need(static_cast<std::size_t>(w * h * bpp), "pixel data");
    return {w, h, r.p + r.pos};
}

}  // namespace

Tensor read_ppm(const std::string& path, const ImageNorm& norm) {
    const auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size()};
    const PnmImage img = pnm_open(r, "P6", 3);
    Tensor t(Shape{1, 3, img.h, img.w});
    const std::int64_t plane = img.h * img.w;
    for (std::int64_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            t.data()[c * plane + i] =
                (static_cast<float>(img.pixels[i * 3 + c]) / 255.0f -
                 norm.mean[(std::size_t)c]) /
                norm.stdev[(std::size_t)c];
    return t;
}

Tensor argmax_channels(const Tensor& logits) {
    const Shape s = logits.shape();
    if (s.n != 1) throw ShapeError("argmax_channels expects a single image");
    Tensor out(Shape{1, 1, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t i = 0; i < plane; ++i) {
        std::int64_t best = 0;
        float bv = logits.data()[i];
        for (std::int64_t c = 1; c < s.c; ++c) {
            const float v = logits.data()[c * plane + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out.data()[i] = static_cast<float>(best);
    }
    return out;
}

void write_pgm(const Tensor& logits, const std::string& path) {
    if (logits.shape().c > 256)
        throw FormatError("cannot write PGM: " + std::to_string(logits.shape().c) +
                          " classes exceed the 256 encodable values");
    const Tensor idx = argmax_channels(logits);
    const Shape s = idx.shape();
    std::ostringstream hdr;
    hdr << "P5\n" << s.w << " " << s.h << "\n255\n";
    const std::string h = hdr.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    for (std::int64_t i = 0; i < s.h * s.w; ++i)
        out.push_back(static_cast<std::uint8_t>(idx.data()[i]));
    write_file(path, out.data(), out.size());
}

Tensor read_pgm(const std::string& path) {
    const auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size()};
    const PnmImage img = pnm_open(r, "P5", 1);
    Tensor t(Shape{1, 1, img.h, img.w});
    for (std::int64_t i = 0; i < img.h * img.w; ++i)
        t.data()[i] = static_cast<float>(img.pixels[i]);
    return t;
}

std::vector<std::array<std::uint8_t, 3>> load_palette(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open palette '" + path + "'");
    std::vector<std::array<std::uint8_t, 3>> pal;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int r, g, b;
        if (!(ls >> r >> g >> b) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 ||
            b > 255)
            throw FormatError("palette line " + std::to_string(lineno) +
                              " is not an R G B triplet: '" + line + "'");
        pal.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                       static_cast<std::uint8_t>(b)});
    }
    if (pal.empty()) throw FormatError("palette '" + path + "' has no entries");
    return pal;
}

void write_ppm_colorized(const Tensor& logits, const std::string& palette_path,
                         const std::string& out_path) {
    const auto pal = load_palette(palette_path);
    if (static_cast<std::size_t>(logits.shape().c) > pal.size())
        throw FormatError("palette has " + std::to_string(pal.size()) +
                          " entries, logits have " + std::to_string(logits.shape().c) +
                          " classes");
    const Tensor idx = argmax_channels(logits);
    const Shape s = idx.shape();
    std::ostringstream hdr;
    hdr << "P6\n" << s.w << " " << s.h << "\n255\n";
    const std::string h = hdr.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    for (std::int64_t i = 0; i < s.h * s.w; ++i) {
        const auto& rgb = pal[static_cast<std::size_t>(idx.data()[i])];
        out.insert(out.end(), rgb.begin(), rgb.end());
    }
    write_file(out_path, out.data(), out.size());
}

}  // namespace topformer
